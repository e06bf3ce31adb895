//! Auxiliary Kalman samplers.
//!
//! Each step draws auxiliary observations `u_t ~ N(x_t, (δ/2) I)` around the
//! current trajectory, proposes a new trajectory from the posterior of an
//! LGSSM linearised at the current one, and corrects with a
//! Metropolis-Hastings test on `π(x | u)`.

mod grid;
mod kernel;
mod target;

pub use kernel::{
    adapt_delta, build_aux_lgssm, kernel_step, log_accept_ratio, sample_aux_obs, AcceptanceStats,
    AuxChainState, AuxKernelConfig, Linearization, StepOutcome, StepStatus,
};
pub use grid::{grid_marginals, Marginal};
pub use target::{
    gradient_check, ConditionalMoments, Dynamics, FnPotential, GaussianObservations, GenSsmTarget,
    GaussianPotential, GradientReport, Potential,
};
