use nalgebra::DVector;

use super::FeynmanKac;
use crate::error::{Error, Result};
use crate::gauss::{labels, RngStream};
use crate::scalar::Real;

/// Non-negative unbiased estimator of `G_t`, driven by `extra_dim()`
/// uniforms carried in the particle state.
pub trait PotentialEstimator<R: Real>: Send + Sync {
    fn extra_dim(&self) -> usize;
    /// Estimate of `G_0(x)` (natural scale).
    fn estimate0(&self, x: &DVector<R>, zeta: &[R]) -> R;
    /// Estimate of `G_t(prev, x)` (natural scale).
    fn estimate(&self, t: usize, prev: &DVector<R>, x: &DVector<R>, zeta: &[R]) -> R;
}

/// Feynman-Kac model on `(x, ζ)` with `ζ ~ U(0, 1)^k` whose potentials are the
/// estimates. Its `x`-marginal path measure is that of the base model with
/// potentials `E[Ĝ_t]`.
pub struct PseudoMarginal<F, E> {
    base: F,
    estimator: E,
}

impl<F, E> PseudoMarginal<F, E> {
    pub fn new(base: F, estimator: E) -> Self {
        Self { base, estimator }
    }
}

impl<F, E> PseudoMarginal<F, E> {
    fn split<'v, R: Real>(&self, v: &'v DVector<R>) -> (DVector<R>, &'v [R])
    where
        F: FeynmanKac<R>,
    {
        let d = self.base.state_dim();
        (v.rows(0, d).into_owned(), &v.as_slice()[d..])
    }

    fn extend<R: Real>(&self, x: DVector<R>, rng: &RngStream) -> DVector<R>
    where
        E: PotentialEstimator<R>,
    {
        let k = self.estimator.extra_dim();
        let mut draws = rng.child(labels::ESTIMATOR, 0).draws();
        let d = x.len();
        DVector::from_fn(d + k, |i, _| if i < d { x[i] } else { R::of(draws.uniform()) })
    }

    fn checked_log<R: Real>(t: usize, value: R) -> Result<R> {
        if value < R::zero() {
            return Err(Error::NegativeEstimate { t, value: value.as_f64() });
        }
        Ok(value.ln())
    }

    /// Leading coordinates of an extended state.
    pub fn state_part<R: Real>(&self, v: &DVector<R>) -> DVector<R>
    where
        F: FeynmanKac<R>,
    {
        self.split(v).0
    }
}

impl<R: Real, F: FeynmanKac<R>, E: PotentialEstimator<R>> FeynmanKac<R> for PseudoMarginal<F, E> {
    fn horizon(&self) -> usize {
        self.base.horizon()
    }

    fn state_dim(&self) -> usize {
        self.base.state_dim() + self.estimator.extra_dim()
    }

    fn sample_m0(&self, rng: &RngStream) -> Result<DVector<R>> {
        Ok(self.extend(self.base.sample_m0(rng)?, rng))
    }

    fn log_m0(&self, v: &DVector<R>) -> R {
        self.base.log_m0(&self.split(v).0)
    }

    fn sample_m(&self, t: usize, prev: &DVector<R>, rng: &RngStream) -> Result<DVector<R>> {
        Ok(self.extend(self.base.sample_m(t, &self.split(prev).0, rng)?, rng))
    }

    fn log_m(&self, t: usize, prev: &DVector<R>, v: &DVector<R>) -> R {
        self.base.log_m(t, &self.split(prev).0, &self.split(v).0)
    }

    fn log_g0(&self, v: &DVector<R>) -> Result<R> {
        let (x, zeta) = self.split(v);
        Self::checked_log(0, self.estimator.estimate0(&x, zeta))
    }

    fn log_g(&self, t: usize, prev: &DVector<R>, v: &DVector<R>) -> Result<R> {
        let (x, zeta) = self.split(v);
        let (p, _) = self.split(prev);
        Self::checked_log(t, self.estimator.estimate(t, &p, &x, zeta))
    }
}
