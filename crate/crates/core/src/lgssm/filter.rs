use nalgebra::{DMatrix, DVector};

use super::{Lgssm, Trajectory};
use crate::error::{Error, Result};
use crate::gauss::{
    labels, logpdf_factored, right_solve_spd, sample_with_noise, symmetrize, Cholesky,
    Definiteness, GaussParams, NoiseSource, RngStream,
};
use crate::scalar::Real;

/// Predicted (`x_t | y_{0:t-1}`) and filtered (`x_t | y_{0:t}`) moments.
#[derive(Clone, Debug)]
pub struct FilterResult<R: Real> {
    pub predicted: Vec<GaussParams<R>>,
    pub filtered: Vec<GaussParams<R>>,
    pub log_marginal: R,
}

fn check_obs<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<()> {
    if obs.len() != model.horizon() + 1 {
        return Err(Error::dim(format!(
            "{} observations for horizon {}",
            obs.len(),
            model.horizon()
        )));
    }
    for (t, y) in obs.iter().enumerate() {
        if model.is_observed(t) && y.len() != model.observation(t).dim() {
            return Err(Error::dim(format!(
                "observation {t} has length {}, expected {}",
                y.len(),
                model.observation(t).dim()
            )));
        }
    }
    Ok(())
}

/// Kalman update of `pred` with `y`; returns the filtered moments and the
/// log predictive density of `y`.
pub(crate) fn kalman_update<R: Real>(
    pred: &GaussParams<R>,
    y: &DVector<R>,
    h: &DMatrix<R>,
    c: &DVector<R>,
    r: &DMatrix<R>,
) -> Result<(GaussParams<R>, R)> {
    let s = symmetrize(&(h * &pred.cov * h.transpose() + r));
    let chol = Cholesky::new(&s, Definiteness::Strict)
        .map_err(|_| Error::factorization("innovation covariance"))?;
    let innovation = y - h * &pred.mean - c;
    // K = P Hᵀ S⁻¹
    let k = chol.solve_mat(&(h * &pred.cov)).transpose();
    let mean = &pred.mean + &k * &innovation;
    let d = pred.dim();
    let i_kh = DMatrix::identity(d, d) - &k * h;
    let cov = &i_kh * &pred.cov * i_kh.transpose() + &k * r * k.transpose();
    Ok((
        GaussParams {
            mean,
            cov: symmetrize(&cov),
        },
        logpdf_factored(&innovation, &chol),
    ))
}

pub fn kalman_filter<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<FilterResult<R>> {
    check_obs(model, obs)?;
    let t_max = model.horizon();
    let mut predicted = Vec::with_capacity(t_max + 1);
    let mut filtered: Vec<GaussParams<R>> = Vec::with_capacity(t_max + 1);
    let mut log_marginal = R::zero();
    for t in 0..=t_max {
        let pred = if t == 0 {
            model.prior()
        } else {
            let prev = &filtered[t - 1];
            let s = model.dynamics(t - 1);
            GaussParams {
                mean: &s.f * &prev.mean + &s.b,
                cov: symmetrize(&(&s.f * &prev.cov * s.f.transpose() + &s.q)),
            }
        };
        let filt = if model.is_observed(t) {
            let o = model.observation(t);
            let (f, ll) = kalman_update(&pred, &obs[t], &o.h, &o.c, &o.r)?;
            log_marginal += ll;
            f
        } else {
            pred.clone()
        };
        predicted.push(pred);
        filtered.push(filt);
    }
    Ok(FilterResult {
        predicted,
        filtered,
        log_marginal,
    })
}

/// Backward gain `G_t = P_t F_tᵀ (F_t P_t F_tᵀ + Q_t)⁻¹`.
fn smoother_gain<R: Real>(model: &Lgssm<R>, fr: &FilterResult<R>, t: usize) -> Result<DMatrix<R>> {
    let f = &model.dynamics(t).f;
    right_solve_spd(&(&fr.filtered[t].cov * f.transpose()), &fr.predicted[t + 1].cov)
}

/// Smoothed marginals `x_t | y_{0:T}`.
pub fn rts_smoother<R: Real>(model: &Lgssm<R>, fr: &FilterResult<R>) -> Result<Vec<GaussParams<R>>> {
    let t_max = model.horizon();
    let mut out = vec![fr.filtered[t_max].clone(); t_max + 1];
    for t in (0..t_max).rev() {
        let g = smoother_gain(model, fr, t)?;
        let filt = &fr.filtered[t];
        let pred = &fr.predicted[t + 1];
        let next = &out[t + 1];
        let mean = &filt.mean + &g * (&next.mean - &pred.mean);
        let cov = &filt.cov + &g * (&next.cov - &pred.cov) * g.transpose();
        out[t] = GaussParams {
            mean,
            cov: symmetrize(&cov),
        };
    }
    Ok(out)
}

/// Exact joint posterior draw by backward recursion.
pub fn backward_sample<R: Real>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    rng: &RngStream,
) -> Result<Trajectory<R>> {
    backward_sample_with(model, fr, rng)
}

/// [`backward_sample`] with randomness from any [`NoiseSource`]: the terminal
/// state uses `(BACKWARD_TERMINAL, 0)` and step `t` uses `(BACKWARD, t)`.
pub fn backward_sample_with<R: Real, N: NoiseSource<R> + ?Sized>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    noise: &N,
) -> Result<Trajectory<R>> {
    let t_max = model.horizon();
    let d = model.state_dim();
    let mut states = vec![DVector::zeros(d); t_max + 1];
    states[t_max] = sample_with_noise(
        &fr.filtered[t_max],
        &noise.normals(labels::BACKWARD_TERMINAL, 0, d),
    )?;
    for t in (0..t_max).rev() {
        let s = model.dynamics(t);
        let filt = &fr.filtered[t];
        let g = smoother_gain(model, fr, t)?;
        let mean = &filt.mean + &g * (&states[t + 1] - &s.f * &filt.mean - &s.b);
        let cov = &filt.cov - &g * &s.f * &filt.cov;
        let cond = GaussParams {
            mean,
            cov: symmetrize(&cov),
        };
        states[t] = sample_with_noise(&cond, &noise.normals(labels::BACKWARD, t as u64, d))?;
    }
    Ok(Trajectory::new(states))
}

/// Log posterior density of `traj` under `model` given `obs`, as complete-data
/// log density minus the log evidence held in `fr`.
pub fn path_logpdf<R: Real>(
    model: &Lgssm<R>,
    obs: &[DVector<R>],
    traj: &Trajectory<R>,
    fr: &FilterResult<R>,
) -> Result<R> {
    check_obs(model, obs)?;
    let t_max = model.horizon();
    let d = model.state_dim();
    if traj.len() != t_max + 1 || traj.dim() != d {
        return Err(Error::dim(format!(
            "trajectory of {} states of dim {} for horizon {t_max}, d_x = {d}",
            traj.len(),
            traj.dim()
        )));
    }
    let strict = |m: &DMatrix<R>| Cholesky::new(m, Definiteness::Strict);
    let mut total = logpdf_factored(&(&traj.states[0] - &model.m0), &strict(&model.p0)?);
    let q_factors = model.dynamics_steps().try_map(|s| strict(&s.q))?;
    for t in 0..t_max {
        let s = model.dynamics(t);
        let resid = &traj.states[t + 1] - &s.f * &traj.states[t] - &s.b;
        total += logpdf_factored(&resid, q_factors.get(t));
    }
    let r_factors = model.observation_steps().try_map(|o| strict(&o.r))?;
    for t in 0..=t_max {
        if !model.is_observed(t) {
            continue;
        }
        let o = model.observation(t);
        let resid = &obs[t] - &o.h * &traj.states[t] - &o.c;
        total += logpdf_factored(&resid, r_factors.get(t));
    }
    Ok(total - fr.log_marginal)
}
