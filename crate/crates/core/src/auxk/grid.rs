use crate::error::{Error, Result};
use crate::scalar::log_sum_exp;

use super::GenSsmTarget;
use nalgebra::DVector;

/// Posterior mean and variance of one time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marginal {
    pub mean: f64,
    pub var: f64,
}

/// Smoothing marginals of a scalar-state target from forward-backward
/// recursions on a uniform grid over `[lo, hi]`.
pub fn grid_marginals(target: &GenSsmTarget<f64>, lo: f64, hi: f64, points: usize) -> Result<Vec<Marginal>> {
    if target.state_dim() != 1 {
        return Err(Error::dim("grid oracle needs a scalar state"));
    }
    if points < 2 || !(hi > lo) {
        return Err(Error::Config("grid needs at least two points on a non-empty interval".into()));
    }
    let t_max = target.horizon();
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let at = |v: f64| DVector::from_element(1, v);
    let log_pot: Vec<Vec<f64>> = (0..=t_max)
        .map(|t| grid.iter().map(|&v| target.log_potential(t, &at(v))).collect())
        .collect();

    // log K_t[i][j] up to a constant shared by every row.
    let log_kernel = |t: usize| -> Vec<Vec<f64>> {
        grid.iter()
            .map(|&from| {
                let tr = target.transition(t, &at(from));
                let (m, v) = (tr.mean[0], tr.cov[(0, 0)]);
                let norm = -0.5 * v.ln();
                grid.iter().map(|&to| norm - 0.5 * (to - m).powi(2) / v).collect()
            })
            .collect()
    };

    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(t_max + 1);
    alpha.push(
        grid.iter()
            .zip(&log_pot[0])
            .map(|(&v, &lp)| target.log_initial(&at(v)) + lp)
            .collect(),
    );
    let mut kernels = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let k = log_kernel(t);
        let prev = &alpha[t];
        let next = (0..points)
            .map(|j| {
                let terms: Vec<f64> = (0..points).map(|i| prev[i] + k[i][j]).collect();
                log_sum_exp(&terms) + log_pot[t + 1][j]
            })
            .collect();
        alpha.push(next);
        kernels.push(k);
    }
    let mut beta = vec![vec![0.0; points]; t_max + 1];
    for t in (0..t_max).rev() {
        let k = &kernels[t];
        beta[t] = (0..points)
            .map(|i| {
                let terms: Vec<f64> = (0..points)
                    .map(|j| k[i][j] + log_pot[t + 1][j] + beta[t + 1][j])
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
    }
    Ok((0..=t_max)
        .map(|t| {
            let lw: Vec<f64> = (0..points).map(|i| alpha[t][i] + beta[t][i]).collect();
            let norm = log_sum_exp(&lw);
            let (mut mean, mut second) = (0.0, 0.0);
            for (i, &v) in grid.iter().enumerate() {
                let w = (lw[i] - norm).exp();
                mean += w * v;
                second += w * v * v;
            }
            Marginal {
                mean,
                var: second - mean * mean,
            }
        })
        .collect())
}
