//! Counter-based random streams addressed by `(seed, path)`.
//!
//! A stream never carries mutable state: every draw is a pure function of the
//! stream key and a draw counter, so the bits a sampler consumes at a given
//! path do not depend on which worker reaches it first.

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::scalar::Real;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Small integer tag for one level of a stream path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Label(pub u32);

impl Label {
    /// Derives a label from a short name (FNV-1a).
    pub const fn named(name: &str) -> Self {
        let bytes = name.as_bytes();
        let mut h: u32 = 0x811c_9dc5;
        let mut i = 0;
        while i < bytes.len() {
            h ^= bytes[i] as u32;
            h = h.wrapping_mul(0x0100_0193);
            i += 1;
        }
        Label(h)
    }
}

/// Well-known labels shared between samplers that must consume identical noise.
pub mod labels {
    use super::Label;

    /// Per-step backward sampling noise, index = time step.
    pub const BACKWARD: Label = Label::named("bs");
    /// Terminal state draw of a backward pass.
    pub const BACKWARD_TERMINAL: Label = Label::named("bsT");
    /// Divide-and-conquer midpoint draws, index = node id.
    pub const DNC: Label = Label::named("dnc");
    /// Auxiliary observation noise, index = time step.
    pub const AUX: Label = Label::named("aux");
    /// Pathwise proposal inside a kernel step.
    pub const PROPOSAL: Label = Label::named("prop");
    /// Metropolis-Hastings accept/reject uniform.
    pub const ACCEPT: Label = Label::named("acc");
    /// Chain iteration.
    pub const ITER: Label = Label::named("iter");
    /// Chain index.
    pub const CHAIN: Label = Label::named("chain");
    /// Particle propagation, index = time step.
    pub const PROPAGATE: Label = Label::named("smc-prop");
    /// Resampling, index = time step.
    pub const RESAMPLE: Label = Label::named("smc-res");
    /// cSMC backward index selection, index = time step.
    pub const BACKWARD_INDEX: Label = Label::named("smc-bwd");
    /// Per-particle sub-stream, index = particle.
    pub const PARTICLE: Label = Label::named("particle");
    /// Pseudo-marginal estimator randomness.
    pub const ESTIMATOR: Label = Label::named("pm-est");
    /// Model simulation.
    pub const SIMULATE: Label = Label::named("sim");
    /// Parameter update inside a Gibbs sweep.
    pub const PARAM: Label = Label::named("param");
}

/// Immutable descriptor of a random substream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: Vec<(Label, u64)>,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
            key: mix64(seed ^ 0x6a09_e667_f3bc_c909),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[(Label, u64)] {
        &self.path
    }

    /// Substream at `path ++ [(label, index)]`.
    pub fn child(&self, label: Label, index: u64) -> Self {
        let tag = mix64(
            (label.0 as u64)
                .wrapping_mul(0xd6e8_feb8_6659_fd93)
                .wrapping_add(index.wrapping_mul(GOLDEN))
                ^ 0xa076_1d64_78bd_642f,
        );
        let mut path = self.path.clone();
        path.push((label, index));
        Self {
            seed: self.seed,
            path,
            key: mix64(self.key.wrapping_add(GOLDEN) ^ tag),
        }
    }

    /// Fresh counter state at draw 0.
    pub fn draws(&self) -> Draws {
        Draws {
            key: self.key,
            counter: 0,
        }
    }

    /// First `n` standard normal draws of this stream.
    pub fn normals<R: Real>(&self, n: usize) -> DVector<R> {
        let mut d = self.draws();
        DVector::from_fn(n, |_, _| d.normal())
    }

    /// First uniform draw of this stream, in `[0, 1)`.
    pub fn uniform(&self) -> f64 {
        self.draws().uniform()
    }
}

/// Counter state of a stream. Implements [`RngCore`], so any `rand`
/// distribution can be sampled from it.
#[derive(Clone, Debug)]
pub struct Draws {
    key: u64,
    counter: u64,
}

impl Draws {
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn normal<R: Real>(&mut self) -> R {
        let z: f64 = self.sample(StandardNormal);
        R::of(z)
    }

    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    /// Index drawn with probability proportional to `exp(log_weights[i])`.
    /// Weights must have a finite maximum.
    pub fn categorical<R: Real>(&mut self, log_weights: &[R]) -> usize {
        let max = log_weights
            .iter()
            .map(|w| w.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_weights.iter().map(|w| (w.as_f64() - max).exp()).sum();
        let mut target = self.uniform() * total;
        for (i, w) in log_weights.iter().enumerate() {
            let p = (w.as_f64() - max).exp();
            if target < p {
                return i;
            }
            target -= p;
        }
        // rounding: fall back to the last index with positive mass
        log_weights
            .iter()
            .rposition(|w| w.as_f64() > f64::NEG_INFINITY)
            .unwrap_or(0)
    }
}

impl RngCore for Draws {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
