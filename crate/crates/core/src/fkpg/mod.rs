//! Feynman-Kac models, conditional SMC and auxiliary particle Gibbs.
//!
//! A model is given by proposal kernels `M_0, M_1..M_T` and log-potentials
//! `log G_0(x_0)`, `log G_t(x_{t-1}, x_t)`. Its path measure is
//! `M_0(x_0) G_0(x_0) Π M_t(x_{t-1}, x_t) G_t(x_{t-1}, x_t)`, normalised.

mod aux;
mod pm;
mod smc;

pub use aux::{
    adapted_proposal, adapted_proposal_at, aux_pgibbs_step, AuxFeynmanKac, GradientPoint, PGState, ProposalMode,
    StepProposal,
};
pub use pm::{PotentialEstimator, PseudoMarginal};
pub use smc::{backward_indices, csmc_step, multinomial, smc, ParticleSystem};

use nalgebra::DVector;

use crate::auxk::GenSsmTarget;
use crate::error::Result;
use crate::gauss::{GaussParams, RngStream};
use crate::scalar::Real;

/// Feynman-Kac model. Time indices of `M_t`, `G_t` run over `1..=T`.
///
/// Samplers receive a stream dedicated to one particle at one time step and
/// may draw from it freely.
pub trait FeynmanKac<R: Real>: Send + Sync {
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;

    fn sample_m0(&self, rng: &RngStream) -> Result<DVector<R>>;
    fn log_m0(&self, x: &DVector<R>) -> R;
    fn sample_m(&self, t: usize, prev: &DVector<R>, rng: &RngStream) -> Result<DVector<R>>;
    fn log_m(&self, t: usize, prev: &DVector<R>, x: &DVector<R>) -> R;

    fn log_g0(&self, x: &DVector<R>) -> Result<R>;
    fn log_g(&self, t: usize, prev: &DVector<R>, x: &DVector<R>) -> Result<R>;

    /// `∇_x log G_t` for potentials that depend on `x_t` only.
    fn grad_log_g(&self, _t: usize, _x: &DVector<R>) -> Option<DVector<R>> {
        None
    }

    /// Gaussian moments of `M_0`, when `M_0` is Gaussian.
    fn initial_moments(&self) -> Option<GaussParams<R>> {
        None
    }

    /// Gaussian moments of `M_t(prev, ·)`, when the dynamics are Gaussian.
    fn transition_moments(&self, _t: usize, _prev: &DVector<R>) -> Option<GaussParams<R>> {
        None
    }
}

/// Bootstrap form: proposals are the prior dynamics and potentials are
/// `g_t(x_t)`.
impl<R: Real> FeynmanKac<R> for GenSsmTarget<R> {
    fn horizon(&self) -> usize {
        GenSsmTarget::horizon(self)
    }

    fn state_dim(&self) -> usize {
        GenSsmTarget::state_dim(self)
    }

    fn sample_m0(&self, rng: &RngStream) -> Result<DVector<R>> {
        Ok(self.sample_initial_with(&rng.normals(self.state_dim())))
    }

    fn log_m0(&self, x: &DVector<R>) -> R {
        self.log_initial(x)
    }

    fn sample_m(&self, t: usize, prev: &DVector<R>, rng: &RngStream) -> Result<DVector<R>> {
        self.sample_transition_with(t - 1, prev, &rng.normals(self.state_dim()))
    }

    fn log_m(&self, t: usize, prev: &DVector<R>, x: &DVector<R>) -> R {
        self.log_transition(t - 1, prev, x)
    }

    fn log_g0(&self, x: &DVector<R>) -> Result<R> {
        Ok(self.log_potential(0, x))
    }

    fn log_g(&self, t: usize, _prev: &DVector<R>, x: &DVector<R>) -> Result<R> {
        Ok(self.log_potential(t, x))
    }

    fn grad_log_g(&self, t: usize, x: &DVector<R>) -> Option<DVector<R>> {
        Some(self.grad_log_potential(t, x))
    }

    fn initial_moments(&self) -> Option<GaussParams<R>> {
        Some(self.initial())
    }

    fn transition_moments(&self, t: usize, prev: &DVector<R>) -> Option<GaussParams<R>> {
        Some(self.transition(t - 1, prev))
    }
}

#[cfg(test)]
mod tests;
