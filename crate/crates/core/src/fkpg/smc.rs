use nalgebra::DVector;

use super::FeynmanKac;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gauss::{labels, Draws, RngStream};
use crate::lgssm::Trajectory;
use crate::scalar::{log_sum_exp, Real};

/// Output of an SMC sweep. `ancestors[t][i]` is the index at `t - 1` of the
/// parent of particle `i` at `t`; `ancestors[0]` is empty.
#[derive(Clone, Debug)]
pub struct ParticleSystem<R: Real> {
    pub particles: Vec<Vec<DVector<R>>>,
    pub log_weights: Vec<Vec<R>>,
    pub ancestors: Vec<Vec<usize>>,
    pub log_likelihood: R,
}

impl<R: Real> ParticleSystem<R> {
    pub fn num_particles(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    /// Normalised weights at `t`.
    pub fn weights(&self, t: usize) -> Vec<f64> {
        let lw = &self.log_weights[t];
        let norm = log_sum_exp(lw);
        lw.iter().map(|&w| (w - norm).as_f64().exp()).collect()
    }
}

/// `n` ancestor indices drawn i.i.d. from the normalised `log_weights`.
pub fn multinomial<R: Real>(log_weights: &[R], n: usize, draws: &mut Draws) -> Vec<usize> {
    let max = log_weights
        .iter()
        .fold(f64::NEG_INFINITY, |m, w| m.max(w.as_f64()));
    let mut cumulative = Vec::with_capacity(log_weights.len());
    let mut total = 0.0;
    for w in log_weights {
        total += (w.as_f64() - max).exp();
        cumulative.push(total);
    }
    (0..n)
        .map(|_| {
            let target = draws.uniform() * total;
            cumulative
                .partition_point(|&c| c <= target)
                .min(log_weights.len() - 1)
        })
        .collect()
}

fn check_weights<R: Real>(lw: &[R], t: usize) -> Result<R> {
    let norm = log_sum_exp(lw);
    if norm.is_finite() {
        Ok(norm)
    } else if norm > R::zero() {
        Err(Error::NonFinite(format!("particle weights at t = {t}")))
    } else {
        Err(Error::DegenerateWeights { t })
    }
}

fn sanitize<R: Real>(lw: R) -> R {
    if lw.as_f64().is_nan() {
        R::of(f64::NEG_INFINITY)
    } else {
        lw
    }
}

/// Shared sweep: when `reference` is set, particle 0 is pinned to it.
fn sweep<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    n: usize,
    reference: Option<&Trajectory<R>>,
    rng: &RngStream,
    exec: &Exec,
) -> Result<ParticleSystem<R>> {
    if n == 0 {
        return Err(Error::Config("at least one particle is required".into()));
    }
    let t_max = fk.horizon();
    let pinned = |t: usize| reference.map(|r| r.states[t].clone());

    let init: Vec<Result<(DVector<R>, R)>> = exec.install(|| {
        exec.map(n, |i| {
            let x = match (i, pinned(0)) {
                (0, Some(x)) => x,
                _ => fk.sample_m0(&rng.child(labels::PROPAGATE, 0).child(labels::PARTICLE, i as u64))?,
            };
            let lw = sanitize(fk.log_g0(&x)?);
            Ok((x, lw))
        })
    });
    let (x0, lw0): (Vec<_>, Vec<_>) = init.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let norm = check_weights(&lw0, 0)?;
    let log_n = R::of_usize(n).ln();
    let mut log_likelihood = norm - log_n;

    let mut particles = vec![x0];
    let mut log_weights = vec![lw0];
    let mut ancestors = vec![Vec::new()];
    for t in 1..=t_max {
        let mut draws = rng.child(labels::RESAMPLE, t as u64).draws();
        let mut idx = multinomial(&log_weights[t - 1], n, &mut draws);
        if reference.is_some() {
            idx[0] = 0;
        }
        let prev = &particles[t - 1];
        let step: Vec<Result<(DVector<R>, R)>> = exec.install(|| {
            exec.map(n, |i| {
                let parent = &prev[idx[i]];
                let x = match (i, pinned(t)) {
                    (0, Some(x)) => x,
                    _ => fk.sample_m(
                        t,
                        parent,
                        &rng.child(labels::PROPAGATE, t as u64).child(labels::PARTICLE, i as u64),
                    )?,
                };
                let lw = sanitize(fk.log_g(t, parent, &x)?);
                Ok((x, lw))
            })
        });
        let (xs, lws): (Vec<_>, Vec<_>) = step.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        log_likelihood += check_weights(&lws, t)? - log_n;
        particles.push(xs);
        log_weights.push(lws);
        ancestors.push(idx);
    }
    Ok(ParticleSystem {
        particles,
        log_weights,
        ancestors,
        log_likelihood,
    })
}

/// Bootstrap-style SMC with multinomial resampling at every step.
pub fn smc<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    n: usize,
    rng: &RngStream,
    exec: &Exec,
) -> Result<ParticleSystem<R>> {
    sweep(fk, n, None, rng, exec)
}

/// Conditional SMC with particle 0 pinned to `reference`, followed by
/// backward sampling of the returned trajectory.
pub fn csmc_step<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    reference: &Trajectory<R>,
    n: usize,
    rng: &RngStream,
    exec: &Exec,
) -> Result<(Trajectory<R>, ParticleSystem<R>)> {
    let t_max = fk.horizon();
    if reference.len() != t_max + 1 || reference.dim() != fk.state_dim() {
        return Err(Error::dim("reference trajectory does not match the model"));
    }
    let ps = sweep(fk, n, Some(reference), rng, exec)?;
    if n == 1 {
        return Ok((reference.clone(), ps));
    }
    let indices = backward_indices(fk, &ps, rng)?;
    let states = indices
        .iter()
        .enumerate()
        .map(|(t, &i)| ps.particles[t][i].clone())
        .collect();
    Ok((Trajectory::new(states), ps))
}

/// Backward-sampled particle indices `b_0..b_T`: `b_T ∝ W_T`, then
/// `b_t ∝ W_t^i M_{t+1}(x_t^i, x_{t+1}^{b_{t+1}}) G_{t+1}(x_t^i, x_{t+1}^{b_{t+1}})`.
/// Draws use the `BACKWARD_INDEX` children of `rng`.
pub fn backward_indices<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    ps: &ParticleSystem<R>,
    rng: &RngStream,
) -> Result<Vec<usize>> {
    let t_max = ps.particles.len() - 1;
    let mut draws = rng.child(labels::BACKWARD_INDEX, t_max as u64).draws();
    let mut indices = vec![0; t_max + 1];
    indices[t_max] = draws.categorical(&ps.log_weights[t_max]);
    for t in (0..t_max).rev() {
        let next = &ps.particles[t + 1][indices[t + 1]];
        let lw: Vec<R> = ps.particles[t]
            .iter()
            .zip(&ps.log_weights[t])
            .map(|(x, &w)| {
                let g = fk.log_g(t + 1, x, next)?;
                Ok(sanitize(w + fk.log_m(t + 1, x, next) + g))
            })
            .collect::<Result<_>>()?;
        check_weights(&lw, t)?;
        let mut draws = rng.child(labels::BACKWARD_INDEX, t as u64).draws();
        indices[t] = draws.categorical(&lw);
    }
    Ok(indices)
}
