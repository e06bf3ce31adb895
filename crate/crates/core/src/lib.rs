//! Exact MCMC samplers for state-space models built on auxiliary observations.

pub mod auxk;
pub mod bench;
pub mod error;
pub mod exec;
pub mod fkpg;
pub mod gauss;
pub mod lgssm;
pub mod pit;
pub mod scalar;

pub use error::{Error, Result};
pub use exec::Exec;
pub use scalar::Real;

/// Library version, echoed into run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Lgssm64 = lgssm::Lgssm<f64>;
pub type Lgssm32 = lgssm::Lgssm<f32>;
pub type Trajectory64 = lgssm::Trajectory<f64>;
pub type Trajectory32 = lgssm::Trajectory<f32>;
pub type Target64 = auxk::GenSsmTarget<f64>;
pub type Target32 = auxk::GenSsmTarget<f32>;
