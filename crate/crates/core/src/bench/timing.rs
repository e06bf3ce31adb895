use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::SamplerKind;
use crate::auxk::{kernel_step, AuxChainState, AuxKernelConfig, GenSsmTarget};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fkpg::{aux_pgibbs_step, PGState};
use crate::gauss::{labels, RngStream};
use crate::lgssm::{kalman_filter, random_model, Lgssm, RandomModelSpec, Trajectory};
use crate::pit::PathSampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub sampler: String,
    pub horizon: usize,
    pub seconds_per_step: f64,
    pub steps: u64,
}

const STATE_DIM: usize = 2;

fn timing_model(horizon: usize) -> Result<(Lgssm<f64>, Vec<DVector<f64>>)> {
    let spec = RandomModelSpec {
        horizon,
        state_dim: STATE_DIM,
        obs_dim: STATE_DIM,
        time_varying: false,
        observed_fraction: 1.0,
    };
    let model = random_model(&spec, &RngStream::new(2024))?;
    let (_, obs) = model.simulate(&RngStream::new(7))?;
    Ok((model, obs))
}

/// Median time per call of `step` over five blocks of at least ~20 ms.
fn median_time(mut step: impl FnMut(u64) -> Result<()>) -> Result<(f64, u64)> {
    step(0)?;
    let mut counter = 1;
    let mut per_call = Vec::with_capacity(5);
    let mut block = 1u64;
    while per_call.len() < 5 {
        let start = Instant::now();
        for _ in 0..block {
            step(counter)?;
            counter += 1;
        }
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed < 0.02 && per_call.is_empty() {
            block *= 2;
            continue;
        }
        per_call.push(elapsed / block as f64);
    }
    per_call.sort_by(f64::total_cmp);
    Ok((per_call[2], counter))
}

/// Seconds per filter-and-sample pass of a pathwise sampler on a fixed
/// `d_x = 2` LGSSM with `horizon` steps.
pub fn time_path_sampler(sampler: PathSampler, horizon: usize, exec: &Exec) -> Result<(f64, u64)> {
    let (model, obs) = timing_model(horizon)?;
    let rng = RngStream::new(1);
    median_time(|i| {
        let fr = kalman_filter(&model, &obs)?;
        sampler.sample(&model, &fr, &rng.child(labels::ITER, i), exec)?;
        Ok(())
    })
}

/// Seconds per auxiliary Kalman step on the same model with its
/// observations hidden behind a generic potential.
pub fn time_aux_kalman(sampler: PathSampler, horizon: usize, exec: &Exec) -> Result<(f64, u64)> {
    let (model, obs) = timing_model(horizon)?;
    let target = GenSsmTarget::from_lgssm_as_potential(&model, &obs)?;
    let x0 = Trajectory::constant(DVector::zeros(STATE_DIM), horizon + 1);
    let mut state = AuxChainState::new(&target, x0, 0.1)?;
    let config = AuxKernelConfig {
        sampler,
        ..Default::default()
    };
    let rng = RngStream::new(1);
    median_time(|i| {
        kernel_step(&target, &mut state, &rng.child(labels::ITER, i), &config, exec);
        Ok(())
    })
}

fn time_pgibbs(kind: SamplerKind, horizon: usize, exec: &Exec) -> Result<(f64, u64)> {
    let (model, obs) = timing_model(horizon)?;
    let target = GenSsmTarget::from_lgssm(&model, &obs)?;
    let mode = kind.proposal_mode().expect("particle Gibbs sampler");
    let mut state = PGState::new(Trajectory::constant(DVector::zeros(STATE_DIM), horizon + 1), 0.1)?;
    let rng = RngStream::new(1);
    median_time(|i| aux_pgibbs_step(&target, &mut state, 16, mode, &rng.child(labels::ITER, i), exec).map(|_| ()))
}

/// Timing rows for `name` (a pathwise sampler `sequential`, `prefix`, `dnc`,
/// or any run sampler) at each horizon in `sizes`.
pub fn timing_table(name: &str, sizes: &[usize], exec: &Exec) -> Result<Vec<TimingRow>> {
    let path = match name {
        "sequential" => Some(PathSampler::Sequential),
        "prefix" => Some(PathSampler::Prefix),
        "dnc" => Some(PathSampler::Dnc),
        _ => None,
    };
    let kind = SamplerKind::parse(name);
    if path.is_none() && kind.is_none() {
        return Err(Error::Config(format!("unknown sampler {name}")));
    }
    sizes
        .iter()
        .map(|&t| {
            let (seconds, steps) = match (path, kind) {
                (Some(p), _) => time_path_sampler(p, t, exec)?,
                (None, Some(k)) => match k.path_sampler() {
                    Some(p) => time_aux_kalman(p, t, exec)?,
                    None => time_pgibbs(k, t, exec)?,
                },
                (None, None) => unreachable!(),
            };
            Ok(TimingRow {
                sampler: name.to_string(),
                horizon: t,
                seconds_per_step: seconds,
                steps,
            })
        })
        .collect()
}
