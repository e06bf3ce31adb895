//! Example models, diagnostics and the configuration-driven experiment
//! runner behind the command-line tool.

mod config;
pub mod diagnostics;
mod models;
mod run;
mod timing;
mod validate;

pub use config::{Caps, RunConfig, SamplerKind};
pub use diagnostics::{autocorrelation, ess, mcse, RunningMoments};
pub use models::{
    build_model, load_observations, simulate_model, write_simulation, BuiltModel, DataSource, DiffusionSpec,
    Grid1dSpec, LgssmSyntheticSpec, Lorenz, ModelSpec, Oracle, ScalarParam, SimulatedData, SpatioTemporalSpec,
    StochvolSpec,
};
pub use run::{
    check_compatibility, read_trace, run, run_chain, state_mean, trace_path, ChainOutput, ChainSummary, ModelInfo,
    ParamSummary, PhaseTimes, ProbeSummary, RunSummary,
};
pub use timing::{time_aux_kalman, time_path_sampler, timing_table, TimingRow};
pub use validate::{model_gradients, validate, ValidationItem, ValidationReport};


/// Scientific notation with 17 significant digits, which round-trips any
/// `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}
