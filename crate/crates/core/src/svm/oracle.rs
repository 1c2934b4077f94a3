//! Reference solver used to check [`super::fit`].
//!
//! Minimizes the same objective through a different route: accelerated
//! projected gradient on the box-constrained dual (projection is a clamp to
//! `[0, C]`), with gradient-based momentum restarts and a fixed iteration cap.
//! It builds its own centered, augmented features and Gram matrix and shares
//! no numerical code with the coordinate-descent solver. Intended for tiny
//! problems (a dozen points, a handful of dimensions).

use super::{Hyperplane, LabeledSet, SolverConfig, SvmError};

/// Iteration cap of [`oracle_fit`].
pub const ORACLE_MAX_ITERATIONS: usize = 200_000;

/// Early exit once the dual projected gradient is this small.
const STATIONARITY: f64 = 1e-13;

pub fn oracle_fit(set: &LabeledSet, config: &SolverConfig) -> Result<Hyperplane, SvmError> {
    config.validate()?;
    set.check_fittable()?;

    let dim = set.dimension();
    let n = set.len();
    let c = config.c;

    let mut mean = vec![0.0; dim];
    for (x, _) in set.points() {
        for k in 0..dim {
            mean[k] += x[k] / n as f64;
        }
    }
    // rows: y_i * [x_i - mean, 1]
    let signed: Vec<Vec<f64>> = set
        .points()
        .iter()
        .map(|(x, y)| {
            let s = y.sign();
            let mut row: Vec<f64> = (0..dim).map(|k| s * (x[k] - mean[k])).collect();
            row.push(s);
            row
        })
        .collect();
    let mut gram = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            gram[i][j] = (0..=dim).map(|k| signed[i][k] * signed[j][k]).sum();
        }
    }
    // Lipschitz bound: smaller of the trace and the largest absolute row sum.
    let trace: f64 = (0..n).map(|i| gram[i][i]).sum();
    let row_sum = gram.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lipschitz = trace.min(row_sum).max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;

    let gradient_at = |alpha: &[f64]| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| gram[i][j] * alpha[j]).sum::<f64>() - 1.0).collect()
    };

    let mut alpha = vec![0.0; n];
    let mut previous = alpha.clone();
    let mut momentum_point = alpha.clone();
    let mut t: f64 = 1.0;

    for _ in 0..ORACLE_MAX_ITERATIONS {
        let g = gradient_at(&momentum_point);
        let next: Vec<f64> = (0..n).map(|i| (momentum_point[i] - step * g[i]).clamp(0.0, c)).collect();

        // restart momentum when it points uphill
        let uphill: f64 = (0..n).map(|i| (momentum_point[i] - next[i]) * (next[i] - alpha[i])).sum();
        let t_next = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if uphill > 0.0 { 0.0 } else { (t - 1.0) / t_next };

        previous.copy_from_slice(&alpha);
        alpha = next;
        momentum_point = (0..n).map(|i| alpha[i] + beta * (alpha[i] - previous[i])).collect();
        t = t_next;

        let g = gradient_at(&alpha);
        let stationarity = (0..n)
            .map(|i| {
                let pg = if alpha[i] <= 0.0 {
                    g[i].min(0.0)
                } else if alpha[i] >= c {
                    g[i].max(0.0)
                } else {
                    g[i]
                };
                pg.abs()
            })
            .fold(0.0, f64::max);
        if stationarity <= STATIONARITY {
            break;
        }
    }

    let mut w_aug = vec![0.0; dim + 1];
    for i in 0..n {
        for k in 0..=dim {
            w_aug[k] += alpha[i] * signed[i][k];
        }
    }
    let centered_bias = w_aug[dim];
    w_aug.truncate(dim);
    let b = centered_bias - (0..dim).map(|k| w_aug[k] * mean[k]).sum::<f64>();
    Ok(Hyperplane { w: w_aug, b })
}
