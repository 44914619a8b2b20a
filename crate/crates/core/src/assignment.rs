//! Minimum-cost bipartite assignment (Hungarian method with potentials,
//! shortest augmenting paths) on dense rectangular `f64` matrices.

/// Result of a gated assignment over an `rows x cols` cost matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentResult {
    /// `(row, col)` pairs, sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Solves the assignment for `costs` (`rows x cols`, row-major). Returns, for
/// every row, the column it is assigned to. When `rows <= cols` every row is
/// assigned; otherwise every column is.
///
/// Infinite entries are forbidden pairings. Ties resolve toward the lowest
/// column index scanned first, so results are deterministic.
pub fn minimize(costs: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        hungarian(rows, cols, |i, j| costs[i][j])
    } else {
        let by_col = hungarian(cols, rows, |i, j| costs[j][i]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

/// Core routine, requires `n <= m`. Returns the column assigned to each row,
/// `None` only if the row could reach nothing but forbidden entries.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based potentials and matching; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = usize::MAX;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == usize::MAX || !delta.is_finite() {
                // Only forbidden entries remain reachable: undo the partial
                // search and leave this row unassigned.
                row_of_col[0] = 0;
                break;
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        if row_of_col[0] == 0 {
            continue;
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if row_of_col[j] != 0 {
            out[row_of_col[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Gated assignment: pairs whose cost is `>= gate` are never matched. Among
/// partial matchings the solver minimizes the matched cost plus `gate` per
/// unmatched row, which is the usual cost-limit formulation. `cols` is
/// passed explicitly so an empty row set still reports its columns.
pub fn solve_assignment(costs: &[Vec<f64>], cols: usize, gate: f64) -> AssignmentResult {
    let rows = costs.len();
    debug_assert!(costs.iter().all(|r| r.len() == cols));
    let mut result = AssignmentResult::default();
    if rows == 0 || cols == 0 {
        result.unmatched_rows = (0..rows).collect();
        result.unmatched_cols = (0..cols).collect();
        return result;
    }

    let assignment = if gate.is_finite() {
        // One private slack column per row, priced at the gate.
        let augmented: Vec<Vec<f64>> = costs
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r: Vec<f64> = row.iter().map(|&c| if c < gate { c } else { f64::INFINITY }).collect();
                r.extend((0..rows).map(|k| if k == i { gate } else { f64::INFINITY }));
                r
            })
            .collect();
        minimize(&augmented)
    } else {
        minimize(costs)
    };

    let mut col_used = vec![false; cols];
    for (r, c) in assignment.into_iter().enumerate() {
        match c {
            Some(c) if c < cols && costs[r][c] < gate => {
                col_used[c] = true;
                result.matches.push((r, c));
            }
            _ => result.unmatched_rows.push(r),
        }
    }
    result.unmatched_cols = (0..cols).filter(|&c| !col_used[c]).collect();
    result
}
