//! Parallel-in-time filtering and pathwise sampling for LGSSMs.
//!
//! Backward sampling is rewritten as a composition of affine maps
//! `x_t = G_t x_{t+1} + c_t + w_t`. Once the noise `w_t` is drawn the maps are
//! deterministic and every `x_t` follows from `x_T` through a suffix scan of
//! the composition operator.

mod dnc;
mod elements;
mod filter_scan;
mod law;
pub mod scan;

pub use dnc::{dnc_sample_with, SegmentNode, SegmentTree};
pub use elements::{build_backward_elements, realize_noise, AffineGaussElement};
pub use filter_scan::{filter_element, parallel_filter, parallel_filter_instrumented, FilterScanElement};
pub use law::extract_affine_law;
pub use scan::{ceil_log2, inclusive_scan, suffix_scan, ScanStats};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::gauss::{labels, sample_with_noise, NoiseSource, RngStream};
use crate::lgssm::{backward_sample_with, FilterResult, Lgssm, Trajectory};
use crate::scalar::Real;

/// Prefix-scan pathwise sampler. Consumes the same noise as
/// [`crate::lgssm::backward_sample`] and returns the same path up to rounding.
pub fn prefix_sample<R: Real>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    rng: &RngStream,
    exec: &Exec,
) -> Result<Trajectory<R>> {
    prefix_sample_with(model, fr, rng, exec).map(|(x, _)| x)
}

pub fn prefix_sample_with<R: Real, N: NoiseSource<R> + ?Sized>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    noise: &N,
    exec: &Exec,
) -> Result<(Trajectory<R>, ScanStats)> {
    let t_max = model.horizon();
    let d = model.state_dim();
    let x_last = sample_with_noise(
        &fr.filtered[t_max],
        &noise.normals(labels::BACKWARD_TERMINAL, 0, d),
    )?;
    let realized: Vec<Result<AffineGaussElement<R>>> = exec.install(|| {
        exec.map(t_max, |t| {
            let e = elements::backward_element(model, fr, t)?;
            elements::realize_one(&e, t, noise)
        })
    });
    let realized = realized.into_iter().collect::<Result<Vec<_>>>()?;
    let (suffix, stats) = suffix_scan(realized, |a, b| a.compose(b), exec);
    let mut states: Vec<_> = exec.install(|| exec.map(t_max, |t| suffix[t].apply(&x_last)));
    states.push(x_last);
    Ok((Trajectory::new(states), stats))
}

/// Divide-and-conquer pathwise sampler; equal in law to backward sampling.
pub fn dnc_sample<R: Real>(
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    rng: &RngStream,
    exec: &Exec,
) -> Result<Trajectory<R>> {
    dnc_sample_with(model, fr, rng, exec)
}

/// Pathwise posterior sampler for an LGSSM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathSampler {
    Sequential,
    Prefix,
    Dnc,
}

impl PathSampler {
    pub const ALL: [PathSampler; 3] = [PathSampler::Sequential, PathSampler::Prefix, PathSampler::Dnc];

    pub fn sample_with<R: Real, N: NoiseSource<R> + ?Sized>(
        self,
        model: &Lgssm<R>,
        fr: &FilterResult<R>,
        noise: &N,
        exec: &Exec,
    ) -> Result<Trajectory<R>> {
        match self {
            PathSampler::Sequential => backward_sample_with(model, fr, noise),
            PathSampler::Prefix => prefix_sample_with(model, fr, noise, exec).map(|(x, _)| x),
            PathSampler::Dnc => dnc_sample_with(model, fr, noise, exec),
        }
    }

    pub fn sample<R: Real>(
        self,
        model: &Lgssm<R>,
        fr: &FilterResult<R>,
        rng: &RngStream,
        exec: &Exec,
    ) -> Result<Trajectory<R>> {
        self.sample_with(model, fr, rng, exec)
    }
}

#[cfg(test)]
mod tests;
