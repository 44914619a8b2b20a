//! Constant-velocity Kalman filter over boxes in `(cx, cy, aspect, height)`
//! form, with one frame as the time step.
//!
//! Noise standard deviations scale with the box height so that near and far
//! objects are treated alike.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoundingBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;
type MeasurementMatrix = SMatrix<f64, 4, 8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanParams {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

/// Filter state: mean `(cx, cy, a, h, vx, vy, va, vh)` and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn to_box(&self) -> BoundingBox {
        state_to_box(&self.mean)
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.mean[4], self.mean[5])
    }
}

pub fn state_to_box(mean: &StateVector) -> BoundingBox {
    let h = mean[3];
    let w = mean[2] * h;
    BoundingBox::new(mean[0] - w / 2.0, mean[1] - h / 2.0, w, h)
}

fn box_to_measurement(bbox: &BoundingBox) -> Result<Measurement> {
    if !bbox.is_valid() || bbox.width <= 0.0 || bbox.height <= 0.0 {
        return Err(Error::DegenerateBox {
            width: bbox.width,
            height: bbox.height,
        });
    }
    let (cx, cy) = bbox.center();
    Ok(Measurement::new(cx, cy, bbox.width / bbox.height, bbox.height))
}

#[derive(Debug, Clone)]
pub struct KalmanFilter {
    params: KalmanParams,
    motion: StateCovariance,
    observation: MeasurementMatrix,
}

impl Default for KalmanFilter {
    fn default() -> Self {
        Self::new(KalmanParams::default())
    }
}

impl KalmanFilter {
    pub fn new(params: KalmanParams) -> Self {
        let mut motion = StateCovariance::identity();
        for i in 0..4 {
            motion[(i, i + 4)] = 1.0;
        }
        let mut observation = MeasurementMatrix::zeros();
        for i in 0..4 {
            observation[(i, i)] = 1.0;
        }
        Self {
            params,
            motion,
            observation,
        }
    }

    pub fn params(&self) -> &KalmanParams {
        &self.params
    }

    pub fn init(&self, bbox: &BoundingBox) -> Result<KalmanState> {
        let z = box_to_measurement(bbox)?;
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);

        let h = z[3];
        let p = self.params.std_weight_position * h;
        let v = self.params.std_weight_velocity * h;
        let std = [2.0 * p, 2.0 * p, 1e-2, 2.0 * p, 10.0 * v, 10.0 * v, 1e-5, 10.0 * v];
        let covariance = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
        Ok(KalmanState { mean, covariance })
    }

    pub fn predict(&self, state: &KalmanState) -> KalmanState {
        let h = state.mean[3];
        let p = self.params.std_weight_position * h;
        let v = self.params.std_weight_velocity * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        let noise = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));

        let mean = self.motion * state.mean;
        let covariance = self.motion * state.covariance * self.motion.transpose() + noise;
        KalmanState {
            mean,
            covariance: symmetrize(covariance),
        }
    }

    pub fn update(&self, state: &KalmanState, observation: &BoundingBox) -> Result<KalmanState> {
        let z = box_to_measurement(observation)?;
        let h = state.mean[3];
        let p = self.params.std_weight_position * h;
        let r_std = Measurement::new(p, p, 1e-1, p);
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&r_std.component_mul(&r_std));

        let hm = &self.observation;
        let projected_mean = hm * state.mean;
        let projected_cov = hm * state.covariance * hm.transpose() + r;
        let inv = projected_cov
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| projected_cov.try_inverse())
            .expect("innovation covariance is positive definite");
        let gain = state.covariance * hm.transpose() * inv;

        let innovation = z - projected_mean;
        let mean = state.mean + gain * innovation;
        // Joseph form keeps the posterior symmetric PSD.
        let i_kh = StateCovariance::identity() - gain * hm;
        let covariance = i_kh * state.covariance * i_kh.transpose() + gain * r * gain.transpose();
        Ok(KalmanState {
            mean,
            covariance: symmetrize(covariance),
        })
    }
}

fn symmetrize(m: StateCovariance) -> StateCovariance {
    (m + m.transpose()) * 0.5
}
