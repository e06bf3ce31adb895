use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{csmc_step, FeynmanKac};
use crate::auxk::sample_aux_obs;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gauss::{labels, logpdf, logpdf_isotropic, sample_with_noise, symmetrize, Cholesky, Definiteness, GaussParams, RngStream};
use crate::lgssm::Trajectory;
use crate::scalar::Real;

/// How particles are proposed in the auxiliary Feynman-Kac model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    /// The model's own kernels `M_t`.
    Prior,
    /// `N(u_t + (δ/2) ∇log G_t(u_t), (δ/2) I)`, ignoring the dynamics.
    Gradient,
    /// Gaussian dynamics conditioned on the gradient pseudo-observation.
    FullyAdapted,
}

impl ProposalMode {
    pub const ALL: [ProposalMode; 3] = [ProposalMode::Prior, ProposalMode::Gradient, ProposalMode::FullyAdapted];

    pub fn name(self) -> &'static str {
        match self {
            ProposalMode::Prior => "prior",
            ProposalMode::Gradient => "gradient",
            ProposalMode::FullyAdapted => "fully-adapted",
        }
    }

    fn mismatch(self, reason: &str) -> Error {
        Error::ModeMismatch {
            mode: self.name().into(),
            reason: reason.into(),
        }
    }

    /// Fails when `fk` lacks what this mode needs.
    pub fn check<R: Real, F: FeynmanKac<R> + ?Sized>(self, fk: &F) -> Result<()> {
        let d = fk.state_dim();
        let probe = DVector::zeros(d);
        if self != ProposalMode::Prior && fk.grad_log_g(0, &probe).is_none() {
            return Err(self.mismatch("potentials have no gradient"));
        }
        if self == ProposalMode::FullyAdapted
            && (fk.initial_moments().is_none() || (fk.horizon() > 0 && fk.transition_moments(1, &probe).is_none()))
        {
            return Err(self.mismatch("dynamics are not Gaussian"));
        }
        Ok(())
    }
}

/// Where the gradient proposals linearize the log-potential.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientPoint {
    /// At the auxiliary observation `u_t`.
    #[default]
    AuxObs,
    /// At the mean of the Gaussian dynamics given the previous state; falls
    /// back to `u_t` when the dynamics have no moments.
    PredictedMean,
}

/// Proposal for one time step of the auxiliary model.
#[derive(Clone, Debug)]
pub enum StepProposal<R: Real> {
    /// Use the model's kernel.
    Prior,
    Gaussian(GaussParams<R>),
}

/// `z = u + (δ/2) ∇log G_t(a)` with `a` the linearization point.
fn pseudo_obs<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    t: usize,
    u: &DVector<R>,
    at: &DVector<R>,
    delta: R,
) -> Result<DVector<R>> {
    let g = fk
        .grad_log_g(t, at)
        .ok_or_else(|| ProposalMode::Gradient.mismatch("potentials have no gradient"))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("potential gradient at t = {t}")));
    }
    Ok(u + g * (delta * R::of(0.5)))
}

/// Conditions `prior` on `z ~ N(x, (δ/2) I)` through one gain solve.
fn condition_on_pseudo<R: Real>(prior: &GaussParams<R>, z: &DVector<R>, delta: R) -> Result<GaussParams<R>> {
    let d = prior.dim();
    let s = symmetrize(&(&prior.cov + DMatrix::identity(d, d) * (delta * R::of(0.5))));
    let chol = Cholesky::new(&s, Definiteness::Strict)?;
    // K = P S⁻¹, with P and S symmetric
    let k = chol.solve_mat(&prior.cov).transpose();
    let mean = &prior.mean + &k * (z - &prior.mean);
    let cov = symmetrize(&(&prior.cov - &k * &prior.cov));
    Ok(GaussParams { mean, cov })
}

/// Proposal of `mode` at step `t` given the auxiliary observation `u_t` and,
/// for `t ≥ 1`, the previous state.
pub fn adapted_proposal<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    t: usize,
    u_t: &DVector<R>,
    prev: Option<&DVector<R>>,
    delta: R,
    mode: ProposalMode,
) -> Result<StepProposal<R>> {
    adapted_proposal_at(fk, t, u_t, prev, delta, mode, GradientPoint::AuxObs)
}

/// [`adapted_proposal`] with an explicit linearization point.
pub fn adapted_proposal_at<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    t: usize,
    u_t: &DVector<R>,
    prev: Option<&DVector<R>>,
    delta: R,
    mode: ProposalMode,
    at: GradientPoint,
) -> Result<StepProposal<R>> {
    if mode == ProposalMode::Prior {
        return Ok(StepProposal::Prior);
    }
    let dynamics = || match prev {
        None => fk.initial_moments(),
        Some(p) => fk.transition_moments(t, p),
    };
    let predicted = match at {
        GradientPoint::AuxObs => None,
        GradientPoint::PredictedMean => dynamics(),
    };
    let point = predicted.as_ref().map_or(u_t, |p| &p.mean);
    let z = pseudo_obs(fk, t, u_t, point, delta)?;
    match mode {
        ProposalMode::Prior => unreachable!(),
        ProposalMode::Gradient => {
            let d = u_t.len();
            Ok(StepProposal::Gaussian(GaussParams {
                mean: z,
                cov: DMatrix::identity(d, d) * (delta * R::of(0.5)),
            }))
        }
        ProposalMode::FullyAdapted => {
            let prior = predicted
                .or_else(dynamics)
                .ok_or_else(|| mode.mismatch("dynamics are not Gaussian"))?;
            Ok(StepProposal::Gaussian(condition_on_pseudo(&prior, &z, delta)?))
        }
    }
}

/// Feynman-Kac model whose path measure is `π(x | u)`, for a base model `fk`
/// with path measure `π(x)` and auxiliary observations `u_t ~ N(x_t, (δ/2) I)`.
/// Proposal densities are divided out of the potentials.
pub struct AuxFeynmanKac<'a, R: Real, F: FeynmanKac<R> + ?Sized> {
    base: &'a F,
    u: Vec<DVector<R>>,
    delta: R,
    mode: ProposalMode,
    at: GradientPoint,
    /// Gradient-mode proposals at `u_t` do not depend on the previous state.
    fixed: Vec<Option<(GaussParams<R>, Cholesky<R>)>>,
}

impl<'a, R: Real, F: FeynmanKac<R> + ?Sized> AuxFeynmanKac<'a, R, F> {
    pub fn new(base: &'a F, u: Vec<DVector<R>>, delta: R, mode: ProposalMode) -> Result<Self> {
        Self::with_gradient_point(base, u, delta, mode, GradientPoint::AuxObs)
    }

    pub fn with_gradient_point(
        base: &'a F,
        u: Vec<DVector<R>>,
        delta: R,
        mode: ProposalMode,
        at: GradientPoint,
    ) -> Result<Self> {
        mode.check(base)?;
        if u.len() != base.horizon() + 1 {
            return Err(Error::dim("auxiliary observations must cover T+1 steps"));
        }
        let fixed = if mode == ProposalMode::Gradient && at == GradientPoint::AuxObs {
            u.iter()
                .enumerate()
                .map(|(t, ut)| match adapted_proposal(base, t, ut, None, delta, mode)? {
                    StepProposal::Gaussian(p) => {
                        let chol = Cholesky::new(&p.cov, Definiteness::Strict)?;
                        Ok(Some((p, chol)))
                    }
                    StepProposal::Prior => Ok(None),
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            base,
            u,
            delta,
            mode,
            at,
            fixed,
        })
    }

    pub fn mode(&self) -> ProposalMode {
        self.mode
    }

    fn aux_loglik(&self, t: usize, x: &DVector<R>) -> R {
        logpdf_isotropic(&self.u[t], x, self.delta * R::of(0.5))
    }

    fn proposal(&self, t: usize, prev: Option<&DVector<R>>) -> Result<StepProposal<R>> {
        match self.fixed.get(t) {
            Some(Some((p, _))) => Ok(StepProposal::Gaussian(p.clone())),
            _ => adapted_proposal_at(self.base, t, &self.u[t], prev, self.delta, self.mode, self.at),
        }
    }

    fn sample(&self, t: usize, prev: Option<&DVector<R>>, rng: &RngStream) -> Result<DVector<R>> {
        if let Some(Some((p, chol))) = self.fixed.get(t) {
            return Ok(&p.mean + chol.l() * rng.normals::<R>(p.dim()));
        }
        match self.proposal(t, prev)? {
            StepProposal::Prior => match prev {
                None => self.base.sample_m0(rng),
                Some(p) => self.base.sample_m(t, p, rng),
            },
            StepProposal::Gaussian(p) => sample_with_noise(&p, &rng.normals(p.dim())),
        }
    }

    fn log_proposal(&self, t: usize, prev: Option<&DVector<R>>, x: &DVector<R>) -> R {
        if let Some(Some((p, chol))) = self.fixed.get(t) {
            return crate::gauss::logpdf_factored(&(x - &p.mean), chol);
        }
        let base = || match prev {
            None => self.base.log_m0(x),
            Some(p) => self.base.log_m(t, p, x),
        };
        match self.proposal(t, prev) {
            Ok(StepProposal::Prior) => base(),
            Ok(StepProposal::Gaussian(p)) => logpdf(x, &p).unwrap_or(R::of(f64::NEG_INFINITY)),
            Err(_) => R::of(f64::NEG_INFINITY),
        }
    }
}

impl<R: Real, F: FeynmanKac<R> + ?Sized> FeynmanKac<R> for AuxFeynmanKac<'_, R, F> {
    fn horizon(&self) -> usize {
        self.base.horizon()
    }

    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn sample_m0(&self, rng: &RngStream) -> Result<DVector<R>> {
        self.sample(0, None, rng)
    }

    fn log_m0(&self, x: &DVector<R>) -> R {
        self.log_proposal(0, None, x)
    }

    fn sample_m(&self, t: usize, prev: &DVector<R>, rng: &RngStream) -> Result<DVector<R>> {
        self.sample(t, Some(prev), rng)
    }

    fn log_m(&self, t: usize, prev: &DVector<R>, x: &DVector<R>) -> R {
        self.log_proposal(t, Some(prev), x)
    }

    fn log_g0(&self, x: &DVector<R>) -> Result<R> {
        let g = self.base.log_g0(x)? + self.aux_loglik(0, x);
        Ok(match self.mode {
            ProposalMode::Prior => g,
            _ => g + self.base.log_m0(x) - self.log_proposal(0, None, x),
        })
    }

    fn log_g(&self, t: usize, prev: &DVector<R>, x: &DVector<R>) -> Result<R> {
        let g = self.base.log_g(t, prev, x)? + self.aux_loglik(t, x);
        Ok(match self.mode {
            ProposalMode::Prior => g,
            _ => g + self.base.log_m(t, prev, x) - self.log_proposal(t, Some(prev), x),
        })
    }
}

/// State of an auxiliary particle Gibbs chain.
#[derive(Clone, Debug)]
pub struct PGState<R: Real> {
    pub x: Trajectory<R>,
    pub delta: R,
    /// Auxiliary observations of the latest step.
    pub u: Vec<DVector<R>>,
    pub iteration: u64,
    /// Iterations whose returned reference differs from the previous one.
    pub updates: u64,
    /// Sum over iterations of the fraction of time steps that moved.
    pub moved_fraction: f64,
    /// Linearization point of gradient-based proposals.
    pub gradient_at: GradientPoint,
    frozen: bool,
}

impl<R: Real> PGState<R> {
    pub fn new(x: Trajectory<R>, delta: R) -> Result<Self> {
        if !(delta > R::zero()) {
            return Err(Error::Config(format!("delta must be positive, got {}", delta.as_f64())));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("reference trajectory".into()));
        }
        Ok(Self {
            x,
            delta,
            u: Vec::new(),
            iteration: 0,
            updates: 0,
            moved_fraction: 0.0,
            gradient_at: GradientPoint::AuxObs,
            frozen: false,
        })
    }

    pub fn update_rate(&self) -> Option<f64> {
        (self.iteration > 0).then(|| self.updates as f64 / self.iteration as f64)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// `log δ += n^{-0.6} (rate - target_rate)` with `rate` the fraction of
    /// time steps that moved in the latest iteration.
    pub fn adapt(&mut self, rate: f64, target_rate: f64) {
        if self.frozen {
            return;
        }
        let n = self.iteration.max(1) as f64;
        let log_delta = self.delta.as_f64().ln() + n.powf(-0.6) * (rate - target_rate);
        self.delta = R::of(log_delta.exp());
    }
}

/// One auxiliary particle Gibbs iteration; returns the fraction of time steps
/// whose state changed.
pub fn aux_pgibbs_step<R: Real, F: FeynmanKac<R> + ?Sized>(
    fk: &F,
    state: &mut PGState<R>,
    n: usize,
    mode: ProposalMode,
    rng: &RngStream,
    exec: &Exec,
) -> Result<f64> {
    let u = sample_aux_obs(&state.x, state.delta, rng);
    let aux = AuxFeynmanKac::with_gradient_point(fk, u, state.delta, mode, state.gradient_at)?;
    let (x_new, _) = csmc_step(&aux, &state.x, n, &rng.child(labels::PROPOSAL, 0), exec)?;
    let moved = x_new
        .states
        .iter()
        .zip(&state.x.states)
        .filter(|(a, b)| a != b)
        .count();
    let fraction = moved as f64 / x_new.len() as f64;
    state.iteration += 1;
    state.moved_fraction += fraction;
    if moved > 0 {
        state.updates += 1;
    }
    state.x = x_new;
    state.u = aux.u;
    Ok(fraction)
}
