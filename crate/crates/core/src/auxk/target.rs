use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{logpdf_factored, sample_with_noise, Cholesky, Definiteness, GaussParams};
use crate::lgssm::{DynamicsStep, Lgssm, ObsStep, Steps, Trajectory};
use crate::scalar::{neg_infinity, Real};

/// Gaussian transition with state-dependent moments:
/// `x_{t+1} | x_t ~ N(mean(t, x_t), cov(t, x_t))`.
pub trait ConditionalMoments<R: Real>: Send + Sync {
    fn mean(&self, t: usize, x: &DVector<R>) -> DVector<R>;
    /// Jacobian of `mean(t, ·)` at `x`.
    fn jacobian(&self, t: usize, x: &DVector<R>) -> DMatrix<R>;
    fn cov(&self, t: usize, x: &DVector<R>) -> DMatrix<R>;
}

/// Log-potential `log g_t(x_t)` with its gradient. Observations are baked in.
pub trait Potential<R: Real>: Send + Sync {
    fn log_g(&self, t: usize, x: &DVector<R>) -> R;
    fn grad_log_g(&self, t: usize, x: &DVector<R>) -> DVector<R>;
}

/// A [`Potential`] from a pair of closures.
pub struct FnPotential<F, G> {
    pub log_g: F,
    pub grad: G,
}

impl<R, F, G> Potential<R> for FnPotential<F, G>
where
    R: Real,
    F: Fn(usize, &DVector<R>) -> R + Send + Sync,
    G: Fn(usize, &DVector<R>) -> DVector<R> + Send + Sync,
{
    fn log_g(&self, t: usize, x: &DVector<R>) -> R {
        (self.log_g)(t, x)
    }

    fn grad_log_g(&self, t: usize, x: &DVector<R>) -> DVector<R> {
        (self.grad)(t, x)
    }
}

/// Prior dynamics of a target.
#[derive(Clone)]
pub enum Dynamics<R: Real> {
    /// `x_{t+1} = F_t x_t + b_t + N(0, Q_t)`.
    Linear(Steps<DynamicsStep<R>>),
    /// Non-linear mean and state-dependent covariance, linearised around the
    /// current trajectory when building proposals.
    Moments(Arc<dyn ConditionalMoments<R>>),
}

/// Linear-Gaussian observations, used exactly (not linearised) by proposals.
#[derive(Clone, Debug)]
pub struct GaussianObservations<R: Real> {
    pub steps: Steps<ObsStep<R>>,
    pub y: Vec<DVector<R>>,
    pub mask: Vec<bool>,
}

/// Unnormalised target over `x_{0:T}`:
/// `N(x_0; m0, P0) Π p(x_{t+1} | x_t) Π g_t(x_t)`.
#[derive(Clone)]
pub struct GenSsmTarget<R: Real> {
    horizon: usize,
    m0: DVector<R>,
    p0: DMatrix<R>,
    dynamics: Dynamics<R>,
    potential: Option<Arc<dyn Potential<R>>>,
    gaussian_obs: Option<GaussianObservations<R>>,
    p0_chol: Arc<Cholesky<R>>,
    q_chol: Option<Steps<Cholesky<R>>>,
    r_chol: Option<Steps<Cholesky<R>>>,
}

impl<R: Real> std::fmt::Debug for GenSsmTarget<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenSsmTarget")
            .field("horizon", &self.horizon)
            .field("state_dim", &self.state_dim())
            .field("linear", &self.is_linear())
            .field("potential", &self.potential.is_some())
            .field("gaussian_obs", &self.gaussian_obs.is_some())
            .finish()
    }
}

impl<R: Real> GenSsmTarget<R> {
    pub fn new(horizon: usize, m0: DVector<R>, p0: DMatrix<R>, dynamics: Dynamics<R>) -> Result<Self> {
        let d = m0.len();
        if p0.shape() != (d, d) {
            return Err(Error::dim("P0 shape"));
        }
        let q_chol = match &dynamics {
            Dynamics::Linear(steps) => {
                if steps.len() != horizon {
                    return Err(Error::dim(format!(
                        "{} dynamics steps for horizon {horizon}",
                        steps.len()
                    )));
                }
                Some(steps.try_map(|s| {
                    if s.f.shape() != (d, d) || s.b.len() != d || s.q.shape() != (d, d) {
                        return Err(Error::dim("dynamics step shapes"));
                    }
                    Cholesky::new(&s.q, Definiteness::Strict)
                })?)
            }
            Dynamics::Moments(_) => None,
        };
        Ok(Self {
            horizon,
            p0_chol: Arc::new(Cholesky::new(&p0, Definiteness::Strict)?),
            m0,
            p0,
            dynamics,
            potential: None,
            gaussian_obs: None,
            q_chol,
            r_chol: None,
        })
    }

    pub fn with_potential(mut self, potential: Arc<dyn Potential<R>>) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn with_gaussian_observations(mut self, obs: GaussianObservations<R>) -> Result<Self> {
        let n = self.horizon + 1;
        if obs.steps.len() != n || obs.y.len() != n || obs.mask.len() != n {
            return Err(Error::dim("gaussian observations must cover T+1 steps"));
        }
        let d = self.state_dim();
        for t in 0..n {
            let o = obs.steps.get(t);
            if o.h.ncols() != d || o.c.len() != o.dim() || (obs.mask[t] && obs.y[t].len() != o.dim()) {
                return Err(Error::dim(format!("gaussian observation {t} shapes")));
            }
        }
        self.r_chol = Some(obs.steps.try_map(|o| Cholesky::new(&o.r, Definiteness::Strict))?);
        self.gaussian_obs = Some(obs);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.m0.len()
    }

    pub fn m0(&self) -> &DVector<R> {
        &self.m0
    }

    pub fn p0(&self) -> &DMatrix<R> {
        &self.p0
    }

    pub fn dynamics(&self) -> &Dynamics<R> {
        &self.dynamics
    }

    pub fn potential(&self) -> Option<&Arc<dyn Potential<R>>> {
        self.potential.as_ref()
    }

    pub fn gaussian_observations(&self) -> Option<&GaussianObservations<R>> {
        self.gaussian_obs.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.dynamics, Dynamics::Linear(_))
    }

    pub fn initial(&self) -> GaussParams<R> {
        GaussParams {
            mean: self.m0.clone(),
            cov: self.p0.clone(),
        }
    }

    /// Moments of `x_{t+1} | x_t`.
    pub fn transition(&self, t: usize, x: &DVector<R>) -> GaussParams<R> {
        match &self.dynamics {
            Dynamics::Linear(steps) => {
                let s = steps.get(t);
                GaussParams {
                    mean: &s.f * x + &s.b,
                    cov: s.q.clone(),
                }
            }
            Dynamics::Moments(m) => GaussParams {
                mean: m.mean(t, x),
                cov: m.cov(t, x),
            },
        }
    }

    /// `F_t`, `b_t`, `Q_t` of the dynamics linearised at `x` (exact for
    /// linear dynamics).
    pub fn linearized_step(&self, t: usize, x: &DVector<R>) -> DynamicsStep<R> {
        match &self.dynamics {
            Dynamics::Linear(steps) => steps.get(t).clone(),
            Dynamics::Moments(m) => {
                let f = m.jacobian(t, x);
                let b = m.mean(t, x) - &f * x;
                DynamicsStep { f, b, q: m.cov(t, x) }
            }
        }
    }

    pub fn log_initial(&self, x0: &DVector<R>) -> R {
        logpdf_factored(&(x0 - &self.m0), &self.p0_chol)
    }

    /// `log p(x_{t+1} | x_t)`; `-∞` when the covariance cannot be factorised.
    pub fn log_transition(&self, t: usize, x: &DVector<R>, next: &DVector<R>) -> R {
        match (&self.dynamics, &self.q_chol) {
            (Dynamics::Linear(steps), Some(chol)) => {
                let s = steps.get(t);
                logpdf_factored(&(next - &s.f * x - &s.b), chol.get(t))
            }
            (Dynamics::Moments(m), _) => match Cholesky::new(&m.cov(t, x), Definiteness::Strict) {
                Ok(chol) => logpdf_factored(&(next - m.mean(t, x)), &chol),
                Err(_) => neg_infinity(),
            },
            _ => unreachable!("linear dynamics always carry factors"),
        }
    }

    /// Log of the non-Gaussian potential alone.
    pub fn log_general_potential(&self, t: usize, x: &DVector<R>) -> R {
        self.potential.as_ref().map_or(R::zero(), |p| p.log_g(t, x))
    }

    pub fn grad_general_potential(&self, t: usize, x: &DVector<R>) -> DVector<R> {
        self.potential
            .as_ref()
            .map_or_else(|| DVector::zeros(x.len()), |p| p.grad_log_g(t, x))
    }

    fn log_gaussian_obs(&self, t: usize, x: &DVector<R>) -> R {
        match (&self.gaussian_obs, &self.r_chol) {
            (Some(obs), Some(chol)) if obs.mask[t] => {
                let o = obs.steps.get(t);
                logpdf_factored(&(&obs.y[t] - &o.h * x - &o.c), chol.get(t))
            }
            _ => R::zero(),
        }
    }

    fn grad_gaussian_obs(&self, t: usize, x: &DVector<R>) -> DVector<R> {
        match (&self.gaussian_obs, &self.r_chol) {
            (Some(obs), Some(chol)) if obs.mask[t] => {
                let o = obs.steps.get(t);
                o.h.transpose() * chol.get(t).solve(&(&obs.y[t] - &o.h * x - &o.c))
            }
            _ => DVector::zeros(x.len()),
        }
    }

    /// Total `log g_t(x)` including Gaussian observations.
    pub fn log_potential(&self, t: usize, x: &DVector<R>) -> R {
        self.log_general_potential(t, x) + self.log_gaussian_obs(t, x)
    }

    pub fn grad_log_potential(&self, t: usize, x: &DVector<R>) -> DVector<R> {
        self.grad_general_potential(t, x) + self.grad_gaussian_obs(t, x)
    }

    /// Unnormalised log target `log γ(x_{0:T})`.
    pub fn log_density(&self, x: &Trajectory<R>) -> R {
        let mut total = self.log_initial(&x.states[0]);
        for t in 0..self.horizon {
            total += self.log_transition(t, &x.states[t], &x.states[t + 1]);
        }
        for (t, s) in x.states.iter().enumerate() {
            total += self.log_potential(t, s);
        }
        total
    }

    /// `m0 + L ξ` with `L` the cached factor of `P0`.
    pub fn sample_initial_with(&self, xi: &DVector<R>) -> DVector<R> {
        &self.m0 + self.p0_chol.l() * xi
    }

    /// Draw from `p(x_{t+1} | x_t = x)` for a standard normal `xi`.
    pub fn sample_transition_with(&self, t: usize, x: &DVector<R>, xi: &DVector<R>) -> Result<DVector<R>> {
        match (&self.dynamics, &self.q_chol) {
            (Dynamics::Linear(steps), Some(chol)) => {
                let s = steps.get(t);
                Ok(&s.f * x + &s.b + chol.get(t).l() * xi)
            }
            _ => sample_with_noise(&self.transition(t, x), xi),
        }
    }

    /// Draws a path from the prior dynamics.
    pub fn sample_prior(&self, rng: &crate::gauss::RngStream) -> Result<Trajectory<R>> {
        use crate::gauss::{labels, sample};
        let mut states = vec![sample(&self.initial(), &rng.child(labels::SIMULATE, 0))?];
        for t in 0..self.horizon {
            let p = self.transition(t, &states[t]);
            states.push(sample(&p, &rng.child(labels::SIMULATE, t as u64 + 1))?);
        }
        Ok(Trajectory::new(states))
    }
}

/// Worst relative discrepancy between analytic derivatives and central
/// differences, `|a − b| / max(|a|, |b|, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradientReport {
    pub potential: f64,
    pub jacobian: f64,
}

impl GradientReport {
    pub fn max(&self) -> f64 {
        self.potential.max(self.jacobian)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks `∇ log g_t` and (for moment dynamics) the mean Jacobians at every
/// state of `x` by central differences with `h = 1e-5 (1 + |x_i|)`.
pub fn gradient_check<R: Real>(target: &GenSsmTarget<R>, x: &Trajectory<R>) -> GradientReport {
    let mut report = GradientReport::default();
    let d = target.state_dim();
    for (t, s) in x.states.iter().enumerate() {
        let grad = target.grad_log_potential(t, s);
        let jac = match (&target.dynamics, t < target.horizon) {
            (Dynamics::Moments(m), true) => Some((m, m.jacobian(t, s))),
            _ => None,
        };
        for i in 0..d {
            let h = R::of(1e-5) * (R::one() + s[i].abs());
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus[i] += h;
            minus[i] -= h;
            let two_h = (plus[i] - minus[i]).as_f64();
            let fd = (target.log_potential(t, &plus).as_f64() - target.log_potential(t, &minus).as_f64()) / two_h;
            report.potential = report.potential.max(rel_err(grad[i].as_f64(), fd));
            if let Some((m, jac)) = &jac {
                let col = (m.mean(t, &plus) - m.mean(t, &minus)).map(|v| v.as_f64() / two_h);
                for k in 0..d {
                    report.jacobian = report.jacobian.max(rel_err(jac[(k, i)].as_f64(), col[k]));
                }
            }
        }
    }
    report
}

impl<R: Real> GenSsmTarget<R> {
    /// The posterior of an LGSSM as a target, with its observations kept as
    /// exact Gaussian observations.
    pub fn from_lgssm(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<Self> {
        let mask = model.mask().to_vec();
        Self::new(
            model.horizon(),
            model.m0.clone(),
            model.p0.clone(),
            Dynamics::Linear(model.dynamics_steps().clone()),
        )?
        .with_gaussian_observations(GaussianObservations {
            steps: model.observation_steps().clone(),
            y: obs.to_vec(),
            mask,
        })
    }

    /// Same law as [`GenSsmTarget::from_lgssm`], but with the observations
    /// hidden behind a generic [`Potential`] so proposals only see their
    /// gradient.
    pub fn from_lgssm_as_potential(model: &Lgssm<R>, obs: &[DVector<R>]) -> Result<Self> {
        let potential = GaussianPotential::new(
            model.observation_steps().clone(),
            obs.to_vec(),
            model.mask().to_vec(),
        )?;
        Ok(Self::new(
            model.horizon(),
            model.m0.clone(),
            model.p0.clone(),
            Dynamics::Linear(model.dynamics_steps().clone()),
        )?
        .with_potential(Arc::new(potential)))
    }
}

/// `log g_t(x) = log N(y_t; H_t x + c_t, R_t)` as an opaque potential.
#[derive(Clone, Debug)]
pub struct GaussianPotential<R: Real> {
    obs: GaussianObservations<R>,
    chol: Steps<Cholesky<R>>,
}

impl<R: Real> GaussianPotential<R> {
    pub fn new(steps: Steps<ObsStep<R>>, y: Vec<DVector<R>>, mask: Vec<bool>) -> Result<Self> {
        let chol = steps.try_map(|o| Cholesky::new(&o.r, Definiteness::Strict))?;
        Ok(Self {
            obs: GaussianObservations { steps, y, mask },
            chol,
        })
    }
}

impl<R: Real> Potential<R> for GaussianPotential<R> {
    fn log_g(&self, t: usize, x: &DVector<R>) -> R {
        if !self.obs.mask[t] {
            return R::zero();
        }
        let o = self.obs.steps.get(t);
        logpdf_factored(&(&self.obs.y[t] - &o.h * x - &o.c), self.chol.get(t))
    }

    fn grad_log_g(&self, t: usize, x: &DVector<R>) -> DVector<R> {
        if !self.obs.mask[t] {
            return DVector::zeros(x.len());
        }
        let o = self.obs.steps.get(t);
        o.h.transpose() * self.chol.get(t).solve(&(&self.obs.y[t] - &o.h * x - &o.c))
    }
}
