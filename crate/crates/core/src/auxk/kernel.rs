use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::target::GenSsmTarget;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gauss::{labels, logpdf_isotropic, RngStream};
use crate::lgssm::{kalman_filter, path_logpdf, FilterResult, Lgssm, ObsStep, Steps, Trajectory};
use crate::pit::{parallel_filter, PathSampler};
use crate::scalar::{neg_infinity, Real};

/// Whether the pseudo-observations carry the potential gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linearization {
    /// `z_t = u_t`.
    Zeroth,
    /// `z_t = u_t + (δ/2) ∇log g_t(x_t)`.
    #[default]
    First,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuxKernelConfig {
    pub sampler: PathSampler,
    pub linearization: Linearization,
    /// Run the Kalman filter as a parallel scan as well.
    pub parallel_filter: bool,
}

impl Default for AuxKernelConfig {
    fn default() -> Self {
        Self {
            sampler: PathSampler::Sequential,
            linearization: Linearization::First,
            parallel_filter: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: u64,
    pub accepted: u64,
    /// Proposals rejected because `log γ` or a gradient was not finite.
    pub non_finite: u64,
    /// Proposals rejected because a covariance could not be factorised.
    pub factorization: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// State of one auxiliary Kalman chain.
#[derive(Clone, Debug)]
pub struct AuxChainState<R: Real> {
    x: Trajectory<R>,
    log_target: R,
    grads: Vec<DVector<R>>,
    pub delta: R,
    pub iteration: u64,
    pub stats: AcceptanceStats,
    frozen: bool,
}

impl<R: Real> AuxChainState<R> {
    pub fn new(target: &GenSsmTarget<R>, x: Trajectory<R>, delta: R) -> Result<Self> {
        if !(delta > R::zero()) {
            return Err(Error::Config(format!("delta must be positive, got {}", delta.as_f64())));
        }
        if x.len() != target.horizon() + 1 || x.dim() != target.state_dim() {
            return Err(Error::dim("initial trajectory does not match the target"));
        }
        let log_target = target.log_density(&x);
        let grads = general_gradients(target, &x);
        if !log_target.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("initial trajectory".into()));
        }
        Ok(Self {
            x,
            log_target,
            grads,
            delta,
            iteration: 0,
            stats: AcceptanceStats::default(),
            frozen: false,
        })
    }

    /// Recomputes the cached quantities for a new target (e.g. after a
    /// parameter update), keeping counters and `delta`.
    pub fn retarget(&mut self, target: &GenSsmTarget<R>) -> Result<()> {
        let log_target = target.log_density(&self.x);
        if !log_target.is_finite() {
            return Err(Error::NonFinite("log target after parameter update".into()));
        }
        self.log_target = log_target;
        self.grads = general_gradients(target, &self.x);
        Ok(())
    }

    pub fn x(&self) -> &Trajectory<R> {
        &self.x
    }

    pub fn log_target(&self) -> R {
        self.log_target
    }

    /// `∇ log g_t(x_t)` for the non-Gaussian part of the potential.
    pub fn gradients(&self) -> &[DVector<R>] {
        &self.grads
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Ends adaptation; later calls to [`adapt_delta`] leave `delta` as is.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

fn general_gradients<R: Real>(target: &GenSsmTarget<R>, x: &Trajectory<R>) -> Vec<DVector<R>> {
    x.states
        .iter()
        .enumerate()
        .map(|(t, s)| target.grad_general_potential(t, s))
        .collect()
}

/// `u_t = x_t + sqrt(δ/2) ξ_t` with `ξ_t` drawn from `("aux", t)`.
pub fn sample_aux_obs<R: Real>(x: &Trajectory<R>, delta: R, rng: &RngStream) -> Vec<DVector<R>> {
    let scale = (delta * R::of(0.5)).sqrt();
    x.states
        .iter()
        .enumerate()
        .map(|(t, s)| s + rng.child(labels::AUX, t as u64).normals::<R>(s.len()) * scale)
        .collect()
}

/// Auxiliary LGSSM whose posterior is the proposal `q(· | u, x)`, together
/// with its observation sequence.
///
/// `grads` are the general-potential gradients at `x`; pass `None` to
/// evaluate them here.
pub fn build_aux_lgssm<R: Real>(
    target: &GenSsmTarget<R>,
    x: &Trajectory<R>,
    u: &[DVector<R>],
    delta: R,
    linearization: Linearization,
    grads: Option<&[DVector<R>]>,
) -> Result<(Lgssm<R>, Vec<DVector<R>>)> {
    let t_max = target.horizon();
    let d = target.state_dim();
    if x.len() != t_max + 1 || u.len() != t_max + 1 {
        return Err(Error::dim("trajectory and auxiliary observations must cover T+1 steps"));
    }
    let half = delta * R::of(0.5);
    let mut pseudo = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let z = match linearization {
            Linearization::Zeroth => u[t].clone(),
            Linearization::First => {
                let g = match grads {
                    Some(g) => g[t].clone(),
                    None => target.grad_general_potential(t, &x.states[t]),
                };
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("potential gradient at t = {t}")));
                }
                &u[t] + g * half
            }
        };
        pseudo.push(z);
    }

    let dynamics = match target.dynamics() {
        super::Dynamics::Linear(steps) => steps.clone(),
        super::Dynamics::Moments(_) => Steps::Varying(
            (0..t_max)
                .map(|t| target.linearized_step(t, &x.states[t]))
                .collect(),
        ),
    };

    let aux_step = ObsStep {
        h: DMatrix::identity(d, d),
        c: DVector::zeros(d),
        r: DMatrix::identity(d, d) * half,
    };
    let (observations, obs) = match target.gaussian_observations() {
        None => (Steps::constant(aux_step, t_max + 1), pseudo),
        Some(g) => {
            let mut steps = Vec::with_capacity(t_max + 1);
            let mut obs = Vec::with_capacity(t_max + 1);
            for (t, z) in pseudo.into_iter().enumerate() {
                if !g.mask[t] {
                    steps.push(aux_step.clone());
                    obs.push(z);
                    continue;
                }
                let o = g.steps.get(t);
                let k = o.dim();
                let mut h = DMatrix::zeros(k + d, d);
                h.view_mut((0, 0), (k, d)).copy_from(&o.h);
                h.view_mut((k, 0), (d, d)).fill_with_identity();
                let mut c = DVector::zeros(k + d);
                c.rows_mut(0, k).copy_from(&o.c);
                let mut r = DMatrix::zeros(k + d, k + d);
                r.view_mut((0, 0), (k, k)).copy_from(&o.r);
                r.view_mut((k, k), (d, d)).copy_from(&aux_step.r);
                let mut y = DVector::zeros(k + d);
                y.rows_mut(0, k).copy_from(&g.y[t]);
                y.rows_mut(k, d).copy_from(&z);
                steps.push(ObsStep { h, c, r });
                obs.push(y);
            }
            (Steps::Varying(steps), obs)
        }
    };
    let model = Lgssm::new(target.m0().clone(), target.p0().clone(), dynamics, observations)?;
    Ok((model, obs))
}

fn filter<R: Real>(model: &Lgssm<R>, obs: &[DVector<R>], config: &AuxKernelConfig, exec: &Exec) -> Result<FilterResult<R>> {
    if config.parallel_filter {
        parallel_filter(model, obs, exec)
    } else {
        kalman_filter(model, obs)
    }
}

fn aux_loglik<R: Real>(x: &Trajectory<R>, u: &[DVector<R>], half: R) -> R {
    x.states
        .iter()
        .zip(u)
        .fold(R::zero(), |acc, (s, u)| acc + logpdf_isotropic(u, s, half))
}

/// Both directions of a proposal, ready for the acceptance ratio.
struct Side<R: Real> {
    model: Lgssm<R>,
    obs: Vec<DVector<R>>,
    fr: FilterResult<R>,
}

impl<R: Real> Side<R> {
    fn build(
        target: &GenSsmTarget<R>,
        x: &Trajectory<R>,
        grads: &[DVector<R>],
        u: &[DVector<R>],
        delta: R,
        config: &AuxKernelConfig,
        exec: &Exec,
    ) -> Result<Self> {
        let (model, obs) = build_aux_lgssm(target, x, u, delta, config.linearization, Some(grads))?;
        let fr = filter(&model, &obs, config, exec)?;
        Ok(Self { model, obs, fr })
    }
}

/// `log α(x → x')` for fixed auxiliary observations `u`.
pub fn log_accept_ratio<R: Real>(
    target: &GenSsmTarget<R>,
    x: &Trajectory<R>,
    x_new: &Trajectory<R>,
    u: &[DVector<R>],
    delta: R,
    linearization: Linearization,
) -> Result<R> {
    let config = AuxKernelConfig {
        linearization,
        ..AuxKernelConfig::default()
    };
    let exec = Exec::sequential();
    let fwd = Side::build(target, x, &general_gradients(target, x), u, delta, &config, &exec)?;
    let bwd = Side::build(target, x_new, &general_gradients(target, x_new), u, delta, &config, &exec)?;
    let half = delta * R::of(0.5);
    let num = target.log_density(x_new) + aux_loglik(x_new, u, half) + path_logpdf(&bwd.model, &bwd.obs, x, &bwd.fr)?;
    let den = target.log_density(x) + aux_loglik(x, u, half) + path_logpdf(&fwd.model, &fwd.obs, x_new, &fwd.fr)?;
    Ok(num - den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Accepted,
    Rejected,
    NonFinite,
    FactorizationFailure,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<R: Real> {
    pub status: StepStatus,
    /// `None` when the step was aborted before the ratio could be formed.
    pub log_alpha: Option<R>,
}

impl<R: Real> StepOutcome<R> {
    pub fn accepted(&self) -> bool {
        self.status == StepStatus::Accepted
    }
}

/// One auxiliary Kalman MCMC step. `rng` should be unique to this iteration.
pub fn kernel_step<R: Real>(
    target: &GenSsmTarget<R>,
    state: &mut AuxChainState<R>,
    rng: &RngStream,
    config: &AuxKernelConfig,
    exec: &Exec,
) -> StepOutcome<R> {
    state.iteration += 1;
    state.stats.proposed += 1;
    let outcome = match propose(target, state, rng, config, exec) {
        Ok(Proposal::Ratio { log_alpha, x, log_target, grads }) => {
            let accept = log_alpha >= R::zero() || rng.child(labels::ACCEPT, 0).uniform().ln() < log_alpha.as_f64();
            if accept {
                state.x = x;
                state.log_target = log_target;
                state.grads = grads;
                state.stats.accepted += 1;
            }
            StepOutcome {
                status: if accept { StepStatus::Accepted } else { StepStatus::Rejected },
                log_alpha: Some(log_alpha),
            }
        }
        Ok(Proposal::NonFinite) | Err(Error::NonFinite(_)) => {
            state.stats.non_finite += 1;
            StepOutcome {
                status: StepStatus::NonFinite,
                log_alpha: Some(neg_infinity()),
            }
        }
        Err(e) => {
            log::debug!("auxiliary Kalman step {} rejected: {e}", state.iteration);
            state.stats.factorization += 1;
            StepOutcome {
                status: StepStatus::FactorizationFailure,
                log_alpha: None,
            }
        }
    };
    outcome
}

enum Proposal<R: Real> {
    Ratio {
        log_alpha: R,
        x: Trajectory<R>,
        log_target: R,
        grads: Vec<DVector<R>>,
    },
    NonFinite,
}

fn propose<R: Real>(
    target: &GenSsmTarget<R>,
    state: &AuxChainState<R>,
    rng: &RngStream,
    config: &AuxKernelConfig,
    exec: &Exec,
) -> Result<Proposal<R>> {
    let delta = state.delta;
    let half = delta * R::of(0.5);
    let u = sample_aux_obs(&state.x, delta, rng);
    let fwd = Side::build(target, &state.x, &state.grads, &u, delta, config, exec)?;
    let x_new = config.sampler.sample(&fwd.model, &fwd.fr, &rng.child(labels::PROPOSAL, 0), exec)?;
    if !x_new.is_finite() {
        return Ok(Proposal::NonFinite);
    }
    let log_target = target.log_density(&x_new);
    let grads = general_gradients(target, &x_new);
    if !log_target.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Ok(Proposal::NonFinite);
    }
    let bwd = Side::build(target, &x_new, &grads, &u, delta, config, exec)?;
    let num = log_target + aux_loglik(&x_new, &u, half) + path_logpdf(&bwd.model, &bwd.obs, &state.x, &bwd.fr)?;
    let den = state.log_target + aux_loglik(&state.x, &u, half) + path_logpdf(&fwd.model, &fwd.obs, &x_new, &fwd.fr)?;
    let log_alpha = num - den;
    if log_alpha.as_f64().is_nan() {
        return Ok(Proposal::NonFinite);
    }
    Ok(Proposal::Ratio {
        log_alpha,
        x: x_new,
        log_target,
        grads,
    })
}

/// Robbins-Monro update `log δ += n^{-0.6} (1{accepted} - target_rate)`,
/// with `n` the iteration count. No-op once the state is frozen.
pub fn adapt_delta<R: Real>(state: &mut AuxChainState<R>, accepted: bool, target_rate: f64) {
    if state.frozen {
        return;
    }
    let n = state.iteration.max(1) as f64;
    let indicator = if accepted { 1.0 } else { 0.0 };
    let log_delta = state.delta.as_f64().ln() + n.powf(-0.6) * (indicator - target_rate);
    state.delta = R::of(log_delta.exp());
}
