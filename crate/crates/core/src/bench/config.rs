use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::models::ModelSpec;
use crate::auxk::Linearization;
use crate::error::{Error, Result};
use crate::fkpg::{GradientPoint, ProposalMode};
use crate::pit::PathSampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    AuxKalmanSeq,
    AuxKalmanPrefix,
    AuxKalmanDnc,
    PgibbsPrior,
    PgibbsGradient,
    PgibbsAdapted,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::AuxKalmanSeq,
        SamplerKind::AuxKalmanPrefix,
        SamplerKind::AuxKalmanDnc,
        SamplerKind::PgibbsPrior,
        SamplerKind::PgibbsGradient,
        SamplerKind::PgibbsAdapted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::AuxKalmanSeq => "aux-kalman-seq",
            SamplerKind::AuxKalmanPrefix => "aux-kalman-prefix",
            SamplerKind::AuxKalmanDnc => "aux-kalman-dnc",
            SamplerKind::PgibbsPrior => "pgibbs-prior",
            SamplerKind::PgibbsGradient => "pgibbs-gradient",
            SamplerKind::PgibbsAdapted => "pgibbs-adapted",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Pathwise backend of an auxiliary Kalman sampler.
    pub fn path_sampler(self) -> Option<PathSampler> {
        match self {
            SamplerKind::AuxKalmanSeq => Some(PathSampler::Sequential),
            SamplerKind::AuxKalmanPrefix => Some(PathSampler::Prefix),
            SamplerKind::AuxKalmanDnc => Some(PathSampler::Dnc),
            _ => None,
        }
    }

    pub fn proposal_mode(self) -> Option<ProposalMode> {
        match self {
            SamplerKind::PgibbsPrior => Some(ProposalMode::Prior),
            SamplerKind::PgibbsGradient => Some(ProposalMode::Gradient),
            SamplerKind::PgibbsAdapted => Some(ProposalMode::FullyAdapted),
            _ => None,
        }
    }
}

/// Upper bounds on problem sizes accepted by the runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    pub horizon: usize,
    pub state_dim: usize,
    pub particles: usize,
    pub iterations: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            horizon: 512,
            state_dim: 16,
            particles: 128,
            iterations: 100_000,
        }
    }
}

/// Experiment description, read from TOML. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerKind,
    /// Iterations kept after burn-in.
    pub samples: u64,
    /// Adaptation iterations, discarded.
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Initial auxiliary variance scale.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Target acceptance (or per-step update) rate of the adaptation.
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub linearization: Linearization,
    /// Linearization point of the particle Gibbs gradient proposals.
    #[serde(default)]
    pub gradient_at: GradientPoint,
    /// Run the Kalman filter as a parallel scan too.
    #[serde(default)]
    pub parallel_filter: bool,
    /// Time steps whose coordinates get ESS estimates; five evenly spaced
    /// steps when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_times: Option<Vec<usize>>,
    /// Flattened coordinates (`t * d + i`) written to the trace; all when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_coords: Option<Vec<usize>>,
    #[serde(default)]
    pub caps: Caps,
    pub model: ModelSpec,
}

fn default_particles() -> usize {
    16
}
fn default_delta() -> f64 {
    0.1
}
fn default_target() -> f64 {
    0.5
}
fn default_workers() -> usize {
    1
}
fn default_chains() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn iterations(&self) -> u64 {
        self.burn_in + self.samples
    }

    /// Probe time steps, clipped to the horizon.
    pub fn probes(&self) -> Vec<usize> {
        let t_max = self.model.horizon();
        match &self.probe_times {
            Some(p) => p.clone(),
            None => {
                let mut p: Vec<usize> = (0..5).map(|k| k * t_max / 4).collect();
                p.dedup();
                p
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        self.model.validate()?;
        let caps = &self.caps;
        if self.model.horizon() > caps.horizon {
            return fail(format!("horizon {} exceeds cap {}", self.model.horizon(), caps.horizon));
        }
        if self.model.state_dim() > caps.state_dim {
            return fail(format!("state dimension {} exceeds cap {}", self.model.state_dim(), caps.state_dim));
        }
        if self.iterations() > caps.iterations {
            return fail(format!("{} iterations exceed cap {}", self.iterations(), caps.iterations));
        }
        if self.sampler.proposal_mode().is_some() && !(1..=caps.particles).contains(&self.particles) {
            return fail(format!("particles must be in 1..={}, got {}", caps.particles, self.particles));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return fail(format!("target_acceptance must be in (0, 1), got {}", self.target_acceptance));
        }
        if self.workers == 0 || self.chains == 0 {
            return fail("workers and chains must be positive".into());
        }
        let t_max = self.model.horizon();
        if let Some(t) = self.probes().into_iter().find(|&t| t > t_max) {
            return fail(format!("probe time {t} is beyond horizon {t_max}"));
        }
        let n_coords = (t_max + 1) * self.model.state_dim();
        if let Some(c) = self.trace_coords.iter().flatten().find(|&&c| c >= n_coords) {
            return fail(format!("trace coordinate {c} out of range (0..{n_coords})"));
        }
        Ok(())
    }
}
