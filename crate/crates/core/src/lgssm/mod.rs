//! Linear-Gaussian state-space models.
//!
//! States `x_0..x_T` evolve as `x_{t+1} = F_t x_t + b_t + N(0, Q_t)` from
//! `x_0 ~ N(m0, P0)` and are observed as `y_t = H_t x_t + c_t + N(0, R_t)` at
//! every `t` whose mask entry is set. Observation dimensions may differ
//! between time steps.

mod filter;
mod oracle;

pub use filter::{
    backward_sample, backward_sample_with, kalman_filter, path_logpdf, rts_smoother, FilterResult,
};
pub use oracle::{dense_log_evidence, dense_oracle, dense_oracle_with_cap, DENSE_ORACLE_CAP};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{labels, sample, GaussParams, RngStream};
use crate::scalar::Real;

/// Per-step parameters stored once when they do not vary with time.
#[derive(Clone, Debug)]
pub enum Steps<M> {
    Constant { value: Arc<M>, len: usize },
    Varying(Vec<M>),
}

impl<M> Steps<M> {
    pub fn constant(value: M, len: usize) -> Self {
        Steps::Constant {
            value: Arc::new(value),
            len,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Steps::Constant { len, .. } => *len,
            Steps::Varying(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, t: usize) -> &M {
        match self {
            Steps::Constant { value, len } => {
                assert!(t < *len, "step {t} out of range {len}");
                value
            }
            Steps::Varying(v) => &v[t],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Steps::Constant { .. })
    }

    /// Applies `f` once per distinct stored value.
    pub fn try_map<N, E>(&self, mut f: impl FnMut(&M) -> Result<N, E>) -> Result<Steps<N>, E> {
        Ok(match self {
            Steps::Constant { value, len } => Steps::constant(f(value)?, *len),
            Steps::Varying(v) => Steps::Varying(v.iter().map(f).collect::<Result<_, E>>()?),
        })
    }
}

/// `x_{t+1} = f x_t + b + N(0, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsStep<R: Real> {
    pub f: DMatrix<R>,
    pub b: DVector<R>,
    pub q: DMatrix<R>,
}

/// `y_t = h x_t + c + N(0, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsStep<R: Real> {
    pub h: DMatrix<R>,
    pub c: DVector<R>,
    pub r: DMatrix<R>,
}

impl<R: Real> ObsStep<R> {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Clone, Debug)]
pub struct Lgssm<R: Real> {
    pub m0: DVector<R>,
    pub p0: DMatrix<R>,
    dynamics: Steps<DynamicsStep<R>>,
    observations: Steps<ObsStep<R>>,
    mask: Vec<bool>,
}

impl<R: Real> Lgssm<R> {
    /// Time-varying model; `dynamics` has `T` entries and `observations` `T+1`.
    /// All steps are observed.
    pub fn new(
        m0: DVector<R>,
        p0: DMatrix<R>,
        dynamics: Steps<DynamicsStep<R>>,
        observations: Steps<ObsStep<R>>,
    ) -> Result<Self> {
        let n_obs = observations.len();
        if n_obs != dynamics.len() + 1 {
            return Err(Error::dim(format!(
                "{} dynamics steps need {} observation steps, got {n_obs}",
                dynamics.len(),
                dynamics.len() + 1
            )));
        }
        let model = Self {
            m0,
            p0: crate::gauss::symmetrize(&p0),
            dynamics,
            observations,
            mask: vec![true; n_obs],
        };
        model.validate()?;
        Ok(model)
    }

    /// Homogeneous model over horizon `t_max` (states `x_0..x_{t_max}`).
    pub fn homogeneous(
        t_max: usize,
        m0: DVector<R>,
        p0: DMatrix<R>,
        dynamics: DynamicsStep<R>,
        observation: ObsStep<R>,
    ) -> Result<Self> {
        Self::new(
            m0,
            p0,
            Steps::constant(dynamics, t_max),
            Steps::constant(observation, t_max + 1),
        )
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.horizon() + 1 {
            return Err(Error::dim(format!(
                "mask of length {} for horizon {}",
                mask.len(),
                self.horizon()
            )));
        }
        self.mask = mask;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let d = self.m0.len();
        if self.p0.shape() != (d, d) {
            return Err(Error::dim("P0 shape"));
        }
        let check_dyn = |s: &DynamicsStep<R>| -> Result<()> {
            if s.f.shape() != (d, d) || s.b.len() != d || s.q.shape() != (d, d) {
                return Err(Error::dim(format!("dynamics step shapes for d_x = {d}")));
            }
            Ok(())
        };
        self.dynamics.try_map(|s| check_dyn(s))?;
        self.observations.try_map(|s| {
            let k = s.h.nrows();
            if s.h.ncols() != d || s.c.len() != k || s.r.shape() != (k, k) {
                return Err(Error::dim(format!("observation step shapes for d_x = {d}")));
            }
            Ok(())
        })?;
        Ok(())
    }

    /// Final time index `T`.
    pub fn horizon(&self) -> usize {
        self.dynamics.len()
    }

    pub fn state_dim(&self) -> usize {
        self.m0.len()
    }

    pub fn dynamics(&self, t: usize) -> &DynamicsStep<R> {
        self.dynamics.get(t)
    }

    pub fn dynamics_steps(&self) -> &Steps<DynamicsStep<R>> {
        &self.dynamics
    }

    pub fn observation(&self, t: usize) -> &ObsStep<R> {
        self.observations.get(t)
    }

    pub fn observation_steps(&self) -> &Steps<ObsStep<R>> {
        &self.observations
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.mask[t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn prior(&self) -> GaussParams<R> {
        GaussParams {
            mean: self.m0.clone(),
            cov: self.p0.clone(),
        }
    }

    /// Draws a latent path and observations. Masked steps get an empty vector.
    pub fn simulate(&self, rng: &RngStream) -> Result<(Trajectory<R>, Vec<DVector<R>>)> {
        let t_max = self.horizon();
        let mut states = Vec::with_capacity(t_max + 1);
        states.push(sample(&self.prior(), &rng.child(labels::SIMULATE, 0))?);
        for t in 0..t_max {
            let s = self.dynamics(t);
            let p = GaussParams {
                mean: &s.f * &states[t] + &s.b,
                cov: s.q.clone(),
            };
            states.push(sample(&p, &rng.child(labels::SIMULATE, t as u64 + 1))?);
        }
        let mut obs = Vec::with_capacity(t_max + 1);
        for (t, x) in states.iter().enumerate() {
            if !self.mask[t] {
                obs.push(DVector::zeros(0));
                continue;
            }
            let o = self.observation(t);
            let p = GaussParams {
                mean: &o.h * x + &o.c,
                cov: o.r.clone(),
            };
            obs.push(sample(&p, &rng.child(labels::AUX, t as u64))?);
        }
        Ok((Trajectory::new(states), obs))
    }
}

/// A realised latent path `x_0..x_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<R: Real> {
    pub states: Vec<DVector<R>>,
}

impl<R: Real> Trajectory<R> {
    pub fn new(states: Vec<DVector<R>>) -> Self {
        Self { states }
    }

    pub fn constant(value: DVector<R>, len: usize) -> Self {
        Self {
            states: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Stacks `x_0..x_T` into one vector of length `(T+1)·d`.
    pub fn flatten(&self) -> DVector<R> {
        let d = self.dim();
        let mut out = DVector::zeros(self.len() * d);
        for (t, s) in self.states.iter().enumerate() {
            out.rows_mut(t * d, d).copy_from(s);
        }
        out
    }

    pub fn from_flat(flat: &DVector<R>, d: usize) -> Self {
        let n = if d == 0 { 0 } else { flat.len() / d };
        Self {
            states: (0..n).map(|t| flat.rows(t * d, d).into_owned()).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        self.states
            .iter()
            .zip(&other.states)
            .fold(R::zero(), |m, (a, b)| m.max((a - b).abs().max()))
    }
}

/// Shape of a randomly generated test model.
#[derive(Clone, Debug)]
pub struct RandomModelSpec {
    pub horizon: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// Draw separate parameters for every step.
    pub time_varying: bool,
    /// Probability that a step is observed.
    pub observed_fraction: f64,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            horizon: 10,
            state_dim: 2,
            obs_dim: 1,
            time_varying: false,
            observed_fraction: 1.0,
        }
    }
}

/// A well-conditioned random model: stable dynamics, SPD noise covariances.
pub fn random_model(spec: &RandomModelSpec, rng: &RngStream) -> Result<Lgssm<f64>> {
    let d = spec.state_dim;
    let k = spec.obs_dim;
    let counter = std::cell::Cell::new(0u64);
    let normals = |n: usize| {
        counter.set(counter.get() + 1);
        rng.child(labels::SIMULATE, counter.get()).normals::<f64>(n)
    };
    let mat = |r: usize, c: usize| DMatrix::from_column_slice(r, c, normals(r * c).as_slice());
    let spd = |n: usize, floor: f64| {
        let a = mat(n, n);
        &a * a.transpose() * (0.5 / n as f64) + DMatrix::identity(n, n) * floor
    };
    let dyn_step = || {
        let f = mat(d, d);
        let radius = f.clone().singular_values().max().max(1e-12);
        DynamicsStep {
            f: f * (0.9 / radius),
            b: normals(d) * 0.5,
            q: spd(d, 0.1),
        }
    };
    let dynamics = if spec.time_varying {
        Steps::Varying((0..spec.horizon).map(|_| dyn_step()).collect())
    } else {
        Steps::constant(dyn_step(), spec.horizon)
    };
    let obs_step = || ObsStep {
        h: mat(k, d),
        c: normals(k) * 0.5,
        r: spd(k, 0.2),
    };
    let observations = if spec.time_varying {
        Steps::Varying((0..=spec.horizon).map(|_| obs_step()).collect())
    } else {
        Steps::constant(obs_step(), spec.horizon + 1)
    };
    let m0 = normals(d);
    let p0 = spd(d, 0.3);
    let mask_stream = rng.child(labels::AUX, 0);
    let mut draws = mask_stream.draws();
    let mask = (0..=spec.horizon)
        .map(|_| draws.uniform() < spec.observed_fraction)
        .collect();
    Lgssm::new(m0, p0, dynamics, observations)?.with_mask(mask)
}
