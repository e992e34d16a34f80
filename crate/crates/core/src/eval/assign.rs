use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::angle_between;

/// Minimum-cost assignment on a rectangular cost matrix. Returns `(row, col)`
/// pairs for `min(rows, cols)` matches, ordered by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    if let Some(bad) = cost.iter().find(|r| r.len() != cols) {
        return Err(Error::SizeMismatch { what: "cost matrix row", expected: cols, actual: bad.len() });
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cost matrix has non-finite entries".into()));
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = hungarian(&t)?.into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }

    // shortest augmenting paths with row/column potentials, 1-based with a dummy column 0
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// One estimate matched to one true direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub est: usize,
    pub truth: usize,
    /// Great-circle angle, radians.
    pub angle: f64,
}

/// Match estimated to true unit vectors minimising the total great-circle angle.
pub fn hungarian_assign(est: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Vec<Match>> {
    if est.is_empty() || truth.is_empty() {
        return Err(Error::Domain("assignment needs non-empty estimate and truth lists".into()));
    }
    let cost: Vec<Vec<f64>> = est.iter().map(|e| truth.iter().map(|t| angle_between(*e, *t)).collect()).collect();
    Ok(hungarian(&cost)?
        .into_iter()
        .map(|(i, j)| Match { est: i, truth: j, angle: cost[i][j] })
        .collect())
}
