//! Exact induced law of a pathwise sampler.
//!
//! Every sampler here is an affine map of the standard normal noise it
//! consumes. Running it on the zero input gives the mean and running it on
//! each basis vector gives one column of a square root of the covariance.

use std::collections::BTreeMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use super::PathSampler;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gauss::{GaussParams, Label, NoiseSource};
use crate::lgssm::{FilterResult, Lgssm, DENSE_ORACLE_CAP};
use crate::scalar::Real;

type Key = (u32, u64);

/// Returns zeros and remembers which `(label, index)` keys were requested.
#[derive(Default)]
struct RecordingZeros {
    keys: Mutex<BTreeMap<Key, usize>>,
}

impl<R: Real> NoiseSource<R> for RecordingZeros {
    fn normals(&self, label: Label, index: u64, n: usize) -> DVector<R> {
        self.keys.lock().expect("poisoned").insert((label.0, index), n);
        DVector::zeros(n)
    }
}

/// Unit vector in one coordinate of one key, zeros elsewhere.
struct Basis {
    key: Key,
    coord: usize,
}

impl<R: Real> NoiseSource<R> for Basis {
    fn normals(&self, label: Label, index: u64, n: usize) -> DVector<R> {
        let mut v = DVector::zeros(n);
        if (label.0, index) == self.key {
            v[self.coord] = R::one();
        }
        v
    }
}

/// Mean and joint covariance of the stacked path produced by `sampler`.
pub fn extract_affine_law<R: Real>(
    sampler: PathSampler,
    model: &Lgssm<R>,
    fr: &FilterResult<R>,
    exec: &Exec,
) -> Result<GaussParams<R>> {
    let n = (model.horizon() + 1) * model.state_dim();
    if n > DENSE_ORACLE_CAP {
        return Err(Error::CapExceeded {
            size: n,
            cap: DENSE_ORACLE_CAP,
        });
    }
    let recorder = RecordingZeros::default();
    let mean = sampler.sample_with(model, fr, &recorder, exec)?.flatten();
    let keys: Vec<(Key, usize)> = recorder.keys.into_inner().expect("poisoned").into_iter().collect();
    let mut columns = Vec::new();
    for (key, len) in keys {
        for coord in 0..len {
            let basis = Basis { key, coord };
            let out = sampler.sample_with(model, fr, &basis, exec)?.flatten();
            columns.push(out - &mean);
        }
    }
    let root = if columns.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    Ok(GaussParams {
        cov: &root * root.transpose(),
        mean,
    })
}
