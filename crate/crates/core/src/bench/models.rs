use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::auxk::{grid_marginals, ConditionalMoments, Dynamics, FnPotential, GaussianObservations, GenSsmTarget, Potential};
use crate::error::{Error, Result};
use crate::gauss::{labels, sample, GaussParams, RngStream};
use crate::lgssm::{kalman_filter, random_model, rts_smoother, DynamicsStep, ObsStep, RandomModelSpec, Steps, Trajectory};

/// Model section of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    LgssmSynthetic(LgssmSyntheticSpec),
    Stochvol(StochvolSpec),
    DiffusionSmoothing(DiffusionSpec),
    SpatioTemporal(SpatioTemporalSpec),
    #[serde(rename = "grid-1d-test")]
    Grid1dTest(Grid1dSpec),
}

/// Where observations come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Seed of the simulated data set.
    #[serde(default)]
    pub seed: u64,
    /// CSV written by `simulate`; its `y_*` columns replace simulated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgssmSyntheticSpec {
    pub horizon: usize,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "one")]
    pub obs_dim: usize,
    #[serde(default)]
    pub time_varying: bool,
    #[serde(default = "unit")]
    pub observed_fraction: f64,
    /// Seed of the random model parameters.
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochvolSpec {
    pub horizon: usize,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Innovation standard deviation.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Innovation correlation between components.
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub horizon: usize,
    /// Euler-Maruyama step.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Diffusion coefficient; also the starting value when it is sampled.
    #[serde(default = "unit")]
    pub sigma: f64,
    #[serde(default = "default_lorenz")]
    pub lorenz: [f64; 3],
    /// Coordinates observed with Gaussian noise.
    #[serde(default = "default_observed")]
    pub observed: Vec<usize>,
    /// Observations at every `obs_every`-th step.
    #[serde(default = "one")]
    pub obs_every: usize,
    #[serde(default = "default_obs_var")]
    pub obs_var: f64,
    /// Random-walk MH on `log σ` within the Gibbs sweep.
    #[serde(default)]
    pub sample_sigma: bool,
    #[serde(default = "default_sigma_step")]
    pub sigma_step: f64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatioTemporalSpec {
    pub horizon: usize,
    /// Side of the square grid; the state has `side²` components.
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "unit")]
    pub length_scale: f64,
    /// Log-intensity offset.
    #[serde(default = "unit")]
    pub offset: f64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1dSpec {
    pub horizon: usize,
    #[serde(default = "default_phi")]
    pub a: f64,
    #[serde(default = "half")]
    pub q: f64,
    #[serde(default)]
    pub data: DataSource,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_phi() -> f64 {
    0.9
}
fn default_sigma() -> f64 {
    0.3
}
fn default_step() -> f64 {
    0.01
}
fn default_lorenz() -> [f64; 3] {
    [10.0, 28.0, 8.0 / 3.0]
}
fn default_observed() -> Vec<usize> {
    vec![0]
}
fn default_obs_var() -> f64 {
    1.0
}
fn default_sigma_step() -> f64 {
    0.1
}
fn default_side() -> usize {
    3
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::LgssmSynthetic(_) => "lgssm-synthetic",
            ModelSpec::Stochvol(_) => "stochvol",
            ModelSpec::DiffusionSmoothing(_) => "diffusion-smoothing",
            ModelSpec::SpatioTemporal(_) => "spatio-temporal",
            ModelSpec::Grid1dTest(_) => "grid-1d-test",
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelSpec::LgssmSynthetic(s) => s.horizon,
            ModelSpec::Stochvol(s) => s.horizon,
            ModelSpec::DiffusionSmoothing(s) => s.horizon,
            ModelSpec::SpatioTemporal(s) => s.horizon,
            ModelSpec::Grid1dTest(s) => s.horizon,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::LgssmSynthetic(s) => s.dim,
            ModelSpec::Stochvol(s) => s.dim,
            ModelSpec::DiffusionSmoothing(_) => 3,
            ModelSpec::SpatioTemporal(s) => s.side * s.side,
            ModelSpec::Grid1dTest(_) => 1,
        }
    }

    fn data(&self) -> &DataSource {
        match self {
            ModelSpec::LgssmSynthetic(s) => &s.data,
            ModelSpec::Stochvol(s) => &s.data,
            ModelSpec::DiffusionSmoothing(s) => &s.data,
            ModelSpec::SpatioTemporal(s) => &s.data,
            ModelSpec::Grid1dTest(s) => &s.data,
        }
    }

    /// Checks hyperparameters; non-stationary autoregressions only warn.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.state_dim() == 0 {
            return bad("state dimension must be positive".into());
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let stationary = |phi: f64| {
            if phi.abs() >= 1.0 {
                log::warn!("autoregression coefficient {phi} is not stationary");
            }
        };
        match self {
            ModelSpec::LgssmSynthetic(s) => {
                if s.obs_dim == 0 || !(0.0..=1.0).contains(&s.observed_fraction) {
                    return bad("lgssm-synthetic needs obs_dim ≥ 1 and observed_fraction in [0, 1]".into());
                }
            }
            ModelSpec::Stochvol(s) => {
                stationary(s.phi);
                let rho_ok = s.dim == 1 || (s.rho < 1.0 && s.rho > -1.0 / (s.dim - 1) as f64);
                if !(s.sigma >= 0.0) || !rho_ok {
                    return bad(format!("stochvol sigma {} / rho {} give an invalid covariance", s.sigma, s.rho));
                }
            }
            ModelSpec::DiffusionSmoothing(s) => {
                positive("step", s.step)?;
                positive("sigma", s.sigma)?;
                positive("obs_var", s.obs_var)?;
                positive("sigma_step", s.sigma_step)?;
                if s.obs_every == 0 || s.observed.is_empty() || s.observed.iter().any(|&c| c >= 3) {
                    return bad("diffusion observations need obs_every ≥ 1 and coordinates in 0..3".into());
                }
            }
            ModelSpec::SpatioTemporal(s) => {
                stationary(s.phi);
                positive("sigma", s.sigma)?;
                positive("length_scale", s.length_scale)?;
            }
            ModelSpec::Grid1dTest(s) => {
                stationary(s.a);
                positive("q", s.q)?;
            }
        }
        Ok(())
    }
}

/// Latent path and observations (`None` where unobserved).
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub truth: Option<Trajectory<f64>>,
    pub obs: Vec<Option<DVector<f64>>>,
}

/// Reference posterior moments per time step.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub mean: Vec<DVector<f64>>,
    pub sd: Vec<DVector<f64>>,
}

/// Scalar model parameter updated by random-walk MH on its logarithm.
#[derive(Clone)]
pub struct ScalarParam {
    pub name: &'static str,
    pub value: f64,
    pub step: f64,
    rebuild: Arc<dyn Fn(f64) -> Result<GenSsmTarget<f64>> + Send + Sync>,
}

impl std::fmt::Debug for ScalarParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarParam")
            .field("name", &self.name)
            .field("value", &self.value)
            .field("step", &self.step)
            .finish()
    }
}

impl ScalarParam {
    pub fn target(&self, value: f64) -> Result<GenSsmTarget<f64>> {
        (self.rebuild)(value)
    }

    /// Standard normal prior on the log of the parameter.
    pub fn log_prior(value: f64) -> f64 {
        let l = value.ln();
        -0.5 * l * l
    }
}

/// A target built from a [`ModelSpec`], with its data and any oracle.
#[derive(Clone, Debug)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    pub target: GenSsmTarget<f64>,
    pub data: SimulatedData,
    pub oracle: Option<Oracle>,
    pub param: Option<ScalarParam>,
}

/// Builds the target of `spec`, simulating or loading its data.
pub fn build_model(spec: &ModelSpec) -> Result<BuiltModel> {
    spec.validate()?;
    let mut data = simulate_model(spec)?;
    if let Some(path) = &spec.data().file {
        data = SimulatedData {
            truth: None,
            obs: load_observations(path, spec)?,
        };
    }
    let (target, oracle, param) = match spec {
        ModelSpec::LgssmSynthetic(s) => {
            let model = synthetic_lgssm(s)?;
            let obs: Vec<DVector<f64>> = data
                .obs
                .iter()
                .map(|y| y.clone().unwrap_or_else(|| DVector::zeros(0)))
                .collect();
            let target = GenSsmTarget::from_lgssm(&model, &obs)?;
            let smoothed = rts_smoother(&model, &kalman_filter(&model, &obs)?)?;
            let oracle = Oracle {
                mean: smoothed.iter().map(|p| p.mean.clone()).collect(),
                sd: smoothed.iter().map(|p| p.cov.diagonal().map(f64::sqrt)).collect(),
            };
            (target, Some(oracle), None)
        }
        ModelSpec::Stochvol(s) => (stochvol_target(s, &data.obs)?, None, None),
        ModelSpec::DiffusionSmoothing(s) => {
            let target = diffusion_target(s, s.sigma, &data.obs)?;
            let param = s.sample_sigma.then(|| {
                let spec = s.clone();
                let obs = data.obs.clone();
                ScalarParam {
                    name: "sigma",
                    value: s.sigma,
                    step: s.sigma_step,
                    rebuild: Arc::new(move |sigma| diffusion_target(&spec, sigma, &obs)),
                }
            });
            (target, None, param)
        }
        ModelSpec::SpatioTemporal(s) => (spatio_target(s, &data.obs)?, None, None),
        ModelSpec::Grid1dTest(s) => {
            let target = grid_target(s, &data.obs)?;
            let marginals = grid_marginals(&target, -10.0, 10.0, 2000)?;
            let oracle = Oracle {
                mean: marginals.iter().map(|m| DVector::from_element(1, m.mean)).collect(),
                sd: marginals.iter().map(|m| DVector::from_element(1, m.var.sqrt())).collect(),
            };
            (target, Some(oracle), None)
        }
    };
    Ok(BuiltModel {
        spec: spec.clone(),
        target,
        data,
        oracle,
        param,
    })
}

/// Simulates latent path and observations from the seed in `spec`.
pub fn simulate_model(spec: &ModelSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let rng = RngStream::new(spec.data().seed);
    match spec {
        ModelSpec::LgssmSynthetic(s) => {
            let model = synthetic_lgssm(s)?;
            let (truth, obs) = model.simulate(&rng)?;
            let obs = obs
                .into_iter()
                .enumerate()
                .map(|(t, y)| model.is_observed(t).then_some(y))
                .collect();
            Ok(SimulatedData {
                truth: Some(truth),
                obs,
            })
        }
        ModelSpec::Stochvol(s) => {
            let (m0, p0, step) = stochvol_dynamics(s);
            let truth = simulate_linear(&m0, &p0, &step, s.horizon, &rng)?;
            let obs = truth
                .states
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let xi = rng.child(labels::AUX, t as u64).normals::<f64>(s.dim);
                    Some(DVector::from_fn(s.dim, |i, _| (0.5 * x[i]).exp() * xi[i]))
                })
                .collect();
            Ok(SimulatedData {
                truth: Some(truth),
                obs,
            })
        }
        ModelSpec::DiffusionSmoothing(s) => {
            let lorenz = Lorenz::new(s, s.sigma);
            let mut states = vec![sample(&diffusion_initial(), &rng.child(labels::SIMULATE, 0))?];
            for t in 0..s.horizon {
                let p = GaussParams {
                    mean: lorenz.mean(t, &states[t]),
                    cov: lorenz.cov(t, &states[t]),
                };
                states.push(sample(&p, &rng.child(labels::SIMULATE, t as u64 + 1))?);
            }
            let noise = s.obs_var.sqrt();
            let obs = states
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    (t % s.obs_every == 0).then(|| {
                        let xi = rng.child(labels::AUX, t as u64).normals::<f64>(s.observed.len());
                        DVector::from_fn(s.observed.len(), |k, _| x[s.observed[k]] + noise * xi[k])
                    })
                })
                .collect();
            Ok(SimulatedData {
                truth: Some(Trajectory::new(states)),
                obs,
            })
        }
        ModelSpec::SpatioTemporal(s) => {
            let (m0, p0, step) = spatio_dynamics(s)?;
            let truth = simulate_linear(&m0, &p0, &step, s.horizon, &rng)?;
            let obs = truth
                .states
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let mut draws = rng.child(labels::AUX, t as u64).draws();
                    let counts = x.map(|v| {
                        let rate = (s.offset + v).exp().clamp(1e-12, 1e12);
                        Poisson::new(rate).map_or(0.0, |p| p.sample(&mut draws))
                    });
                    Ok(Some(counts))
                })
                .collect::<Result<_>>()?;
            Ok(SimulatedData {
                truth: Some(truth),
                obs,
            })
        }
        ModelSpec::Grid1dTest(s) => {
            let step = DynamicsStep {
                f: DMatrix::from_element(1, 1, s.a),
                b: DVector::zeros(1),
                q: DMatrix::from_element(1, 1, s.q),
            };
            let truth = simulate_linear(&DVector::zeros(1), &DMatrix::identity(1, 1), &step, s.horizon, &rng)?;
            let obs = truth
                .states
                .iter()
                .enumerate()
                .map(|(t, x)| Some(x + rng.child(labels::AUX, t as u64).normals::<f64>(1)))
                .collect();
            Ok(SimulatedData {
                truth: Some(truth),
                obs,
            })
        }
    }
}

fn simulate_linear(
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    step: &DynamicsStep<f64>,
    horizon: usize,
    rng: &RngStream,
) -> Result<Trajectory<f64>> {
    let mut states = vec![sample(
        &GaussParams {
            mean: m0.clone(),
            cov: p0.clone(),
        },
        &rng.child(labels::SIMULATE, 0),
    )?];
    for t in 0..horizon {
        let p = GaussParams {
            mean: &step.f * &states[t] + &step.b,
            cov: step.q.clone(),
        };
        states.push(sample(&p, &rng.child(labels::SIMULATE, t as u64 + 1))?);
    }
    Ok(Trajectory::new(states))
}

fn observed(obs: &[Option<DVector<f64>>], t: usize) -> Option<&DVector<f64>> {
    obs.get(t).and_then(Option::as_ref)
}

fn synthetic_lgssm(s: &LgssmSyntheticSpec) -> Result<crate::lgssm::Lgssm<f64>> {
    random_model(
        &RandomModelSpec {
            horizon: s.horizon,
            state_dim: s.dim,
            obs_dim: s.obs_dim,
            time_varying: s.time_varying,
            observed_fraction: s.observed_fraction,
        },
        &RngStream::new(s.model_seed),
    )
}

fn stochvol_dynamics(s: &StochvolSpec) -> (DVector<f64>, DMatrix<f64>, DynamicsStep<f64>) {
    let d = s.dim;
    let q = DMatrix::from_fn(d, d, |i, j| s.sigma * s.sigma * if i == j { 1.0 } else { s.rho });
    let p0 = if s.phi.abs() < 1.0 {
        &q / (1.0 - s.phi * s.phi)
    } else {
        DMatrix::identity(d, d)
    };
    let step = DynamicsStep {
        f: DMatrix::identity(d, d) * s.phi,
        b: DVector::from_element(d, (1.0 - s.phi) * s.mu),
        q,
    };
    (DVector::from_element(d, s.mu), p0, step)
}

fn stochvol_target(s: &StochvolSpec, obs: &[Option<DVector<f64>>]) -> Result<GenSsmTarget<f64>> {
    let (m0, p0, step) = stochvol_dynamics(s);
    let y: Vec<Option<DVector<f64>>> = obs.to_vec();
    let y2 = y.clone();
    let potential = FnPotential {
        log_g: move |t: usize, x: &DVector<f64>| match observed(&y, t) {
            None => 0.0,
            Some(y) => x
                .iter()
                .zip(y.iter())
                .map(|(x, y)| -0.5 * (std::f64::consts::TAU.ln() + x + y * y * (-x).exp()))
                .sum(),
        },
        grad: move |t: usize, x: &DVector<f64>| match observed(&y2, t) {
            None => DVector::zeros(x.len()),
            Some(y) => DVector::from_fn(x.len(), |i, _| -0.5 + 0.5 * y[i] * y[i] * (-x[i]).exp()),
        },
    };
    Ok(GenSsmTarget::new(s.horizon, m0, p0, Dynamics::Linear(Steps::constant(step, s.horizon)))?
        .with_potential(Arc::new(potential)))
}

/// Euler-Maruyama discretisation of a stochastic Lorenz-63 system.
#[derive(Clone, Debug)]
pub struct Lorenz {
    step: f64,
    sigma: f64,
    params: [f64; 3],
}

impl Lorenz {
    fn new(s: &DiffusionSpec, sigma: f64) -> Self {
        Self {
            step: s.step,
            sigma,
            params: s.lorenz,
        }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let [s, r, b] = self.params;
        DVector::from_vec(vec![s * (x[1] - x[0]), x[0] * (r - x[2]) - x[1], x[0] * x[1] - b * x[2]])
    }
}

impl ConditionalMoments<f64> for Lorenz {
    fn mean(&self, _: usize, x: &DVector<f64>) -> DVector<f64> {
        x + self.drift(x) * self.step
    }

    fn jacobian(&self, _: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let [s, r, b] = self.params;
        let j = DMatrix::from_row_slice(3, 3, &[-s, s, 0.0, r - x[2], -1.0, -x[0], x[1], x[0], -b]);
        DMatrix::identity(3, 3) + j * self.step
    }

    fn cov(&self, _: usize, _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3) * (self.sigma * self.sigma * self.step)
    }
}

fn diffusion_initial() -> GaussParams<f64> {
    GaussParams {
        mean: DVector::from_vec(vec![1.0, 1.0, 25.0]),
        cov: DMatrix::identity(3, 3),
    }
}

fn diffusion_target(s: &DiffusionSpec, sigma: f64, obs: &[Option<DVector<f64>>]) -> Result<GenSsmTarget<f64>> {
    let init = diffusion_initial();
    let k = s.observed.len();
    let h = DMatrix::from_fn(k, 3, |i, j| if s.observed[i] == j { 1.0 } else { 0.0 });
    let gaussian = GaussianObservations {
        steps: Steps::constant(
            ObsStep {
                h,
                c: DVector::zeros(k),
                r: DMatrix::identity(k, k) * s.obs_var,
            },
            s.horizon + 1,
        ),
        y: (0..=s.horizon)
            .map(|t| observed(obs, t).cloned().unwrap_or_else(|| DVector::zeros(k)))
            .collect(),
        mask: (0..=s.horizon).map(|t| observed(obs, t).is_some()).collect(),
    };
    GenSsmTarget::new(
        s.horizon,
        init.mean,
        init.cov,
        Dynamics::Moments(Arc::new(Lorenz::new(s, sigma))),
    )?
    .with_gaussian_observations(gaussian)
}

fn spatio_dynamics(s: &SpatioTemporalSpec) -> Result<(DVector<f64>, DMatrix<f64>, DynamicsStep<f64>)> {
    let k = s.side;
    let d = k * k;
    let sqrt3 = 3f64.sqrt();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        let (ri, ci) = ((i / k) as f64, (i % k) as f64);
        let (rj, cj) = ((j / k) as f64, (j % k) as f64);
        let r = ((ri - rj).powi(2) + (ci - cj).powi(2)).sqrt() / s.length_scale;
        s.sigma * s.sigma * (1.0 + sqrt3 * r) * (-sqrt3 * r).exp()
    });
    let p0 = if s.phi.abs() < 1.0 {
        &cov / (1.0 - s.phi * s.phi)
    } else {
        cov.clone()
    };
    let step = DynamicsStep {
        f: DMatrix::identity(d, d) * s.phi,
        b: DVector::zeros(d),
        q: cov,
    };
    Ok((DVector::zeros(d), p0, step))
}

/// Poisson counts with log-intensity `offset + x`.
struct PoissonField {
    counts: Vec<Option<DVector<f64>>>,
    offset: f64,
    /// `Σ log y!` per time step.
    log_factorials: Vec<f64>,
}

impl Potential<f64> for PoissonField {
    fn log_g(&self, t: usize, x: &DVector<f64>) -> f64 {
        match observed(&self.counts, t) {
            None => 0.0,
            Some(y) => {
                x.iter()
                    .zip(y.iter())
                    .map(|(x, y)| y * (self.offset + x) - (self.offset + x).exp())
                    .sum::<f64>()
                    - self.log_factorials[t]
            }
        }
    }

    fn grad_log_g(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        match observed(&self.counts, t) {
            None => DVector::zeros(x.len()),
            Some(y) => DVector::from_fn(x.len(), |i, _| y[i] - (self.offset + x[i]).exp()),
        }
    }
}

fn ln_factorial(n: f64) -> f64 {
    (2..=(n.round() as u64)).map(|k| (k as f64).ln()).sum()
}

fn spatio_target(s: &SpatioTemporalSpec, obs: &[Option<DVector<f64>>]) -> Result<GenSsmTarget<f64>> {
    let (m0, p0, step) = spatio_dynamics(s)?;
    let log_factorials = (0..=s.horizon)
        .map(|t| observed(obs, t).map_or(0.0, |y| y.iter().map(|&c| ln_factorial(c)).sum()))
        .collect();
    let potential = PoissonField {
        counts: obs.to_vec(),
        offset: s.offset,
        log_factorials,
    };
    Ok(GenSsmTarget::new(s.horizon, m0, p0, Dynamics::Linear(Steps::constant(step, s.horizon)))?
        .with_potential(Arc::new(potential)))
}

fn grid_target(s: &Grid1dSpec, obs: &[Option<DVector<f64>>]) -> Result<GenSsmTarget<f64>> {
    let y: Vec<Option<DVector<f64>>> = obs.to_vec();
    let y2 = y.clone();
    let potential = FnPotential {
        log_g: move |t: usize, x: &DVector<f64>| {
            let fit = observed(&y, t).map_or(0.0, |y| -0.5 * (x[0] - y[0]).powi(2));
            fit - 0.25 * x[0].powi(4)
        },
        grad: move |t: usize, x: &DVector<f64>| {
            let fit = observed(&y2, t).map_or(0.0, |y| y[0] - x[0]);
            DVector::from_element(1, fit - x[0].powi(3))
        },
    };
    let step = DynamicsStep {
        f: DMatrix::from_element(1, 1, s.a),
        b: DVector::zeros(1),
        q: DMatrix::from_element(1, 1, s.q),
    };
    Ok(GenSsmTarget::new(
        s.horizon,
        DVector::zeros(1),
        DMatrix::identity(1, 1),
        Dynamics::Linear(Steps::constant(step, s.horizon)),
    )?
    .with_potential(Arc::new(potential)))
}

fn obs_dim(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::LgssmSynthetic(s) => s.obs_dim,
        ModelSpec::DiffusionSmoothing(s) => s.observed.len(),
        _ => spec.state_dim(),
    }
}

/// Writes `t,x_0..,y_0..` rows; unobserved entries are left empty.
pub fn write_simulation(path: &Path, spec: &ModelSpec, data: &SimulatedData) -> Result<()> {
    use std::io::Write;
    let d = spec.state_dim();
    let k = obs_dim(spec);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    if data.truth.is_some() {
        header.extend((0..d).map(|i| format!("x_{i}")));
    }
    header.extend((0..k).map(|i| format!("y_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (t, y) in data.obs.iter().enumerate() {
        let mut row = vec![t.to_string()];
        if let Some(truth) = &data.truth {
            row.extend(truth.states[t].iter().map(|v| super::fmt_float(*v)));
        }
        match y {
            Some(y) => row.extend(y.iter().map(|v| super::fmt_float(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), k)),
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the `y_*` columns of a file written by [`write_simulation`].
pub fn load_observations(path: &Path, spec: &ModelSpec) -> Result<Vec<Option<DVector<f64>>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .collect();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("y_"))
        .map(|(i, _)| i)
        .collect();
    let k = obs_dim(spec);
    if cols.len() != k {
        return Err(Error::Config(format!(
            "{} has {} observation columns, model expects {k}",
            path.display(),
            cols.len()
        )));
    }
    let rows: Vec<Option<DVector<f64>>> = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let values: Vec<&str> = cols.iter().map(|&c| fields.get(c).copied().unwrap_or("").trim()).collect();
            if values.iter().all(|v| v.is_empty()) {
                return Ok(None);
            }
            values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{} row {}: {e}", path.display(), n + 1)))
                })
                .collect::<Result<Vec<f64>>>()
                .map(|v| Some(DVector::from_vec(v)))
        })
        .collect::<Result<_>>()?;
    if rows.len() != spec.horizon() + 1 {
        return Err(Error::Config(format!(
            "{} has {} rows, horizon {} needs {}",
            path.display(),
            rows.len(),
            spec.horizon(),
            spec.horizon() + 1
        )));
    }
    Ok(rows)
}
