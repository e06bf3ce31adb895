//! Dense joint-Gaussian reference computations for small models.

use nalgebra::{DMatrix, DVector};

use super::Lgssm;
use crate::error::{Error, Result};
use crate::gauss::{condition, logpdf, GaussParams};
use crate::scalar::Real;

/// Default bound on `(T+1)·d_x` for the dense oracle.
pub const DENSE_ORACLE_CAP: usize = 256;

struct DenseJoint<R: Real> {
    /// Law of the stacked states followed by the stacked observed `y_t`.
    joint: GaussParams<R>,
    n_x: usize,
    y: DVector<R>,
}

fn build<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>], cap: usize) -> Result<DenseJoint<R>> {
    let d = model.state_dim();
    let t_max = model.horizon();
    let n_x = (t_max + 1) * d;
    if n_x > cap {
        return Err(Error::CapExceeded { size: n_x, cap });
    }
    if obs.len() != t_max + 1 {
        return Err(Error::dim("observation count"));
    }
    // prior over stacked states: Cov(x_{t+1}, x_s) = F_t Cov(x_t, x_s)
    let mut mean = DVector::zeros(n_x);
    let mut cov = DMatrix::zeros(n_x, n_x);
    mean.rows_mut(0, d).copy_from(&model.m0);
    cov.view_mut((0, 0), (d, d)).copy_from(&model.p0);
    for t in 0..t_max {
        let s = model.dynamics(t);
        let m_next = &s.f * mean.rows(t * d, d) + &s.b;
        mean.rows_mut((t + 1) * d, d).copy_from(&m_next);
        for u in 0..=t {
            let block = &s.f * cov.view((t * d, u * d), (d, d));
            cov.view_mut(((t + 1) * d, u * d), (d, d)).copy_from(&block);
            cov.view_mut((u * d, (t + 1) * d), (d, d)).copy_from(&block.transpose());
        }
        let diag = &s.f * cov.view((t * d, t * d), (d, d)) * s.f.transpose() + &s.q;
        cov.view_mut(((t + 1) * d, (t + 1) * d), (d, d)).copy_from(&diag);
    }
    // stacked observation operator
    let observed: Vec<usize> = (0..=t_max).filter(|&t| model.is_observed(t)).collect();
    let n_y: usize = observed.iter().map(|&t| model.observation(t).dim()).sum();
    let mut h = DMatrix::zeros(n_y, n_x);
    let mut c = DVector::zeros(n_y);
    let mut r = DMatrix::zeros(n_y, n_y);
    let mut y = DVector::zeros(n_y);
    let mut row = 0;
    for &t in &observed {
        let o = model.observation(t);
        let k = o.dim();
        if obs[t].len() != k {
            return Err(Error::dim(format!("observation {t} length")));
        }
        h.view_mut((row, t * d), (k, d)).copy_from(&o.h);
        c.rows_mut(row, k).copy_from(&o.c);
        r.view_mut((row, row), (k, k)).copy_from(&o.r);
        y.rows_mut(row, k).copy_from(&obs[t]);
        row += k;
    }
    let n = n_x + n_y;
    let mut jm = DVector::zeros(n);
    let mut jc = DMatrix::zeros(n, n);
    jm.rows_mut(0, n_x).copy_from(&mean);
    jm.rows_mut(n_x, n_y).copy_from(&(&h * &mean + c));
    let cov_xy = &cov * h.transpose();
    jc.view_mut((0, 0), (n_x, n_x)).copy_from(&cov);
    jc.view_mut((0, n_x), (n_x, n_y)).copy_from(&cov_xy);
    jc.view_mut((n_x, 0), (n_y, n_x)).copy_from(&cov_xy.transpose());
    jc.view_mut((n_x, n_x), (n_y, n_y)).copy_from(&(&h * &cov * h.transpose() + r));
    Ok(DenseJoint {
        joint: GaussParams::new(jm, jc)?,
        n_x,
        y,
    })
}

/// Exact posterior of the stacked states `x_{0:T}` by dense conditioning.
pub fn dense_oracle<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<GaussParams<R>> {
    dense_oracle_with_cap(model, obs, DENSE_ORACLE_CAP)
}

pub fn dense_oracle_with_cap<R: Real>(
    model: &Lgssm<R>,
    obs: &[DVector<R>],
    cap: usize,
) -> Result<GaussParams<R>> {
    let dj = build(model, obs, cap)?;
    condition(&dj.joint, dj.n_x, &dj.y)
}

/// Log density of all observed `y_t` under their dense Gaussian marginal.
pub fn dense_log_evidence<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<R> {
    let dj = build(model, obs, DENSE_ORACLE_CAP)?;
    let n_y = dj.y.len();
    if n_y == 0 {
        return Ok(R::zero());
    }
    let marginal = GaussParams {
        mean: dj.joint.mean.rows(dj.n_x, n_y).into_owned(),
        cov: dj.joint.cov.view((dj.n_x, dj.n_x), (n_y, n_y)).into_owned(),
    };
    logpdf(&dj.y, &marginal)
}
