//! Multi-object tracking with context-aware detector skipping.
//!
//! A tracking-by-detection pipeline (Kalman prediction plus Hungarian IoU
//! association) that decides per frame whether the detector needs to run,
//! by comparing stored track templates against crops at the predicted
//! positions. Also ships MOTChallenge I/O, CLEAR / identity / HOTA metrics,
//! a latency cost model and a synthetic scene generator.

pub mod assignment;
pub mod config;
pub mod cost;
pub mod error;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod pipeline;
pub mod scheduler;
pub mod similarity;
pub mod synth;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use types::{iou, BoundingBox, Detection, GrayImage, Track, TrackState};
