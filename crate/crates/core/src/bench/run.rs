use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::diagnostics::{ess, mcse, RunningMoments, MIN_ESS_LEN};
use super::models::{build_model, BuiltModel, ScalarParam};
use super::fmt_float;
use crate::auxk::{adapt_delta, kernel_step, AcceptanceStats, AuxChainState, AuxKernelConfig, GenSsmTarget};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fkpg::{aux_pgibbs_step, PGState, ProposalMode};
use crate::gauss::{labels, RngStream};
use crate::lgssm::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub time: usize,
    pub coord: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ess: Option<f64>,
    /// Monte Carlo standard error of `mean`.
    pub mcse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub acceptance: Option<f64>,
    pub trace_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub burn_in_s: f64,
    pub sampling_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub samples: u64,
    /// Posterior mean per flattened coordinate `t * d + i`.
    pub mean: Option<Vec<f64>>,
    pub sd: Option<Vec<f64>>,
    pub probes: Vec<ProbeSummary>,
    /// Acceptance rate (auxiliary Kalman) or reference-update rate (particle
    /// Gibbs) after burn-in.
    pub rate: Option<f64>,
    pub final_delta: f64,
    pub non_finite: u64,
    pub factorization_failures: u64,
    pub param: Option<ParamSummary>,
    pub wall_time: PhaseTimes,
    pub trace_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: String,
    pub horizon: usize,
    pub state_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub config: RunConfig,
    pub workers: usize,
    pub model: ModelInfo,
    pub chains: Vec<ChainSummary>,
    pub build_s: f64,
    pub total_s: f64,
}

enum Kernel {
    Aux {
        state: AuxChainState<f64>,
        config: AuxKernelConfig,
        post: AcceptanceStats,
    },
    Pg {
        state: PGState<f64>,
        mode: ProposalMode,
        particles: usize,
        post_updates: u64,
    },
}

impl Kernel {
    fn x(&self) -> &Trajectory<f64> {
        match self {
            Kernel::Aux { state, .. } => state.x(),
            Kernel::Pg { state, .. } => &state.x,
        }
    }

    fn delta(&self) -> f64 {
        match self {
            Kernel::Aux { state, .. } => state.delta,
            Kernel::Pg { state, .. } => state.delta,
        }
    }

    fn freeze(&mut self) {
        match self {
            Kernel::Aux { state, .. } => state.freeze(),
            Kernel::Pg { state, .. } => state.freeze(),
        }
    }

    fn step(
        &mut self,
        target: &GenSsmTarget<f64>,
        rng: &RngStream,
        adapt: Option<f64>,
        exec: &Exec,
    ) -> Result<()> {
        match self {
            Kernel::Aux { state, config, post } => {
                let before = state.stats;
                let out = kernel_step(target, state, rng, config, exec);
                match adapt {
                    Some(rate) => adapt_delta(state, out.accepted(), rate),
                    None => {
                        let s = state.stats;
                        post.proposed += s.proposed - before.proposed;
                        post.accepted += s.accepted - before.accepted;
                        post.non_finite += s.non_finite - before.non_finite;
                        post.factorization += s.factorization - before.factorization;
                    }
                }
            }
            Kernel::Pg {
                state,
                mode,
                particles,
                post_updates,
            } => {
                let before = state.updates;
                let moved = aux_pgibbs_step(target, state, *particles, *mode, rng, exec)?;
                match adapt {
                    Some(rate) => state.adapt(moved, rate),
                    None => *post_updates += state.updates - before,
                }
            }
        }
        Ok(())
    }

    fn retarget(&mut self, target: &GenSsmTarget<f64>) -> Result<()> {
        match self {
            Kernel::Aux { state, .. } => state.retarget(target),
            Kernel::Pg { .. } => Ok(()),
        }
    }
}

/// Random-walk MH on `log θ` given the current path.
fn param_step(
    param: &ScalarParam,
    value: &mut f64,
    target: &mut GenSsmTarget<f64>,
    x: &Trajectory<f64>,
    rng: &RngStream,
) -> Result<bool> {
    let xi: f64 = rng.child(labels::PARAM, 0).normals::<f64>(1)[0];
    let proposal = *value * (param.step * xi).exp();
    let candidate = param.target(proposal)?;
    let log_alpha = candidate.log_density(x) - target.log_density(x) + ScalarParam::log_prior(proposal)
        - ScalarParam::log_prior(*value);
    let accept = log_alpha.is_finite() && rng.child(labels::PARAM, 1).uniform().ln() < log_alpha;
    if accept {
        *value = proposal;
        *target = candidate;
    }
    Ok(accept)
}

/// Samplers and models that cannot work together, detected before any
/// iteration runs.
pub fn check_compatibility(config: &RunConfig, model: &BuiltModel) -> Result<()> {
    if let Some(mode) = config.sampler.proposal_mode() {
        mode.check(&model.target)?;
    }
    Ok(())
}

/// Output of one chain: its summary and the probe coordinate traces.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub summary: ChainSummary,
    /// Post-burn-in draws of each probe coordinate, in `summary.probes` order.
    pub probe_traces: Vec<Vec<f64>>,
}

/// Runs chain `chain`; post-burn-in rows go to `trace` when given.
pub fn run_chain(
    model: &BuiltModel,
    config: &RunConfig,
    chain: usize,
    exec: &Exec,
    mut trace: Option<&mut dyn Write>,
    mut param_trace: Option<&mut dyn Write>,
) -> Result<ChainOutput> {
    check_compatibility(config, model)?;
    let root = RngStream::new(config.seed).child(labels::CHAIN, chain as u64);
    let mut target = model.target.clone();
    let x0 = target.sample_prior(&root.child(labels::SIMULATE, 0))?;
    let mut kernel = match (config.sampler.path_sampler(), config.sampler.proposal_mode()) {
        (Some(sampler), _) => Kernel::Aux {
            state: AuxChainState::new(&target, x0, config.delta)?,
            config: AuxKernelConfig {
                sampler,
                linearization: config.linearization,
                parallel_filter: config.parallel_filter,
            },
            post: AcceptanceStats::default(),
        },
        (None, Some(mode)) => Kernel::Pg {
            state: {
                let mut state = PGState::new(x0, config.delta)?;
                state.gradient_at = config.gradient_at;
                state
            },
            mode,
            particles: config.particles,
            post_updates: 0,
        },
        (None, None) => unreachable!("every sampler kind has a backend"),
    };

    let d = target.state_dim();
    let n_coords = (target.horizon() + 1) * d;
    let coords: Vec<usize> = config.trace_coords.clone().unwrap_or_else(|| (0..n_coords).collect());
    if let Some(w) = trace.as_deref_mut() {
        let header: Vec<String> = coords.iter().map(|c| format!("coord_{c}")).collect();
        writeln!(w, "iter,{}", header.join(","))?;
    }
    if let (Some(w), Some(p)) = (param_trace.as_deref_mut(), &model.param) {
        writeln!(w, "iter,{}", p.name)?;
    }
    let probes: Vec<(usize, usize)> = config
        .probes()
        .into_iter()
        .flat_map(|t| (0..d).map(move |i| (t, i)))
        .collect();
    let mut probe_traces = vec![Vec::with_capacity(config.samples as usize); probes.len()];
    let mut moments = RunningMoments::new(n_coords);
    let mut param_value = model.param.as_ref().map(|p| p.value);
    let mut param_moments = RunningMoments::new(1);
    let mut param_accepts = 0u64;

    let start = Instant::now();
    let mut times = PhaseTimes::default();
    for i in 0..config.iterations() {
        let burning = i < config.burn_in;
        if i == config.burn_in {
            kernel.freeze();
            times.burn_in_s = start.elapsed().as_secs_f64();
        }
        let rng = root.child(labels::ITER, i);
        let adapt = burning.then_some(config.target_acceptance);
        kernel.step(&target, &rng, adapt, exec)?;
        if let (Some(p), Some(value)) = (&model.param, param_value.as_mut()) {
            if param_step(p, value, &mut target, kernel.x(), &rng)? {
                kernel.retarget(&target)?;
                if !burning {
                    param_accepts += 1;
                }
            }
        }
        if burning {
            continue;
        }
        let flat: Vec<f64> = kernel.x().states.iter().flat_map(|s| s.iter().copied()).collect();
        moments.push(flat.iter().copied());
        for (k, &(t, c)) in probes.iter().enumerate() {
            probe_traces[k].push(flat[t * d + c]);
        }
        let row = i - config.burn_in;
        if let Some(w) = trace.as_deref_mut() {
            let values: Vec<String> = coords.iter().map(|&c| fmt_float(flat[c])).collect();
            writeln!(w, "{row},{}", values.join(","))?;
        }
        if let Some(value) = param_value {
            param_moments.push([value]);
            if let Some(w) = param_trace.as_deref_mut() {
                writeln!(w, "{row},{}", fmt_float(value))?;
            }
        }
    }
    if config.samples == 0 {
        times.burn_in_s = start.elapsed().as_secs_f64();
    }
    times.sampling_s = start.elapsed().as_secs_f64() - times.burn_in_s;

    let mean = moments.mean().map(<[f64]>::to_vec);
    let sd = moments.sd();
    let probe_summaries = probes
        .iter()
        .zip(&probe_traces)
        .map(|(&(time, coord), tr)| {
            let idx = time * d + coord;
            let long = tr.len() >= MIN_ESS_LEN;
            ProbeSummary {
                time,
                coord,
                mean: mean.as_ref().map(|m| m[idx]),
                sd: sd.as_ref().map(|s| s[idx]),
                ess: if long { ess(tr).ok() } else { None },
                mcse: if long { mcse(tr).ok() } else { None },
            }
        })
        .collect();
    let samples = config.samples;
    let (rate, non_finite, factorization) = match &kernel {
        Kernel::Aux { post, state, .. } => (
            post.rate(),
            state.stats.non_finite,
            state.stats.factorization,
        ),
        Kernel::Pg { post_updates, .. } => ((samples > 0).then(|| *post_updates as f64 / samples as f64), 0, 0),
    };
    let param = model.param.as_ref().map(|p| ParamSummary {
        name: p.name.to_string(),
        mean: param_moments.mean().map(|m| m[0]),
        sd: param_moments.sd().map(|s| s[0]),
        acceptance: (samples > 0).then(|| param_accepts as f64 / samples as f64),
        trace_file: None,
    });
    Ok(ChainOutput {
        summary: ChainSummary {
            chain,
            samples,
            mean,
            sd,
            probes: probe_summaries,
            rate,
            final_delta: kernel.delta(),
            non_finite,
            factorization_failures: factorization,
            param,
            wall_time: times,
            trace_file: None,
        },
        probe_traces,
    })
}

pub fn trace_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

/// Builds the model, runs every chain, writes `chain_<c>.csv` traces and
/// `summary.json` into the output directory.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let exec = Exec::from_env(config.workers)?;
    let start = Instant::now();
    let model = build_model(&config.model)?;
    check_compatibility(config, &model)?;
    let build_s = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&config.output_dir)?;

    let chains: Vec<Result<ChainSummary>> = exec.install(|| {
        exec.map(config.chains, |c| {
            let path = trace_path(&config.output_dir, c);
            let mut trace = BufWriter::new(File::create(&path)?);
            let param_path = config.output_dir.join(format!("chain_{c}_param.csv"));
            let mut param_file = match &model.param {
                Some(_) => Some(BufWriter::new(File::create(&param_path)?)),
                None => None,
            };
            let out = run_chain(
                &model,
                config,
                c,
                &exec,
                Some(&mut trace),
                param_file.as_mut().map(|w| w as &mut dyn Write),
            )?;
            trace.flush()?;
            if let Some(w) = param_file.as_mut() {
                w.flush()?;
            }
            let mut summary = out.summary;
            summary.trace_file = Some(path);
            if let Some(p) = summary.param.as_mut() {
                p.trace_file = Some(param_path);
            }
            Ok(summary)
        })
    });
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = RunSummary {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        workers: exec.workers(),
        model: ModelInfo {
            kind: config.model.kind().to_string(),
            horizon: config.model.horizon(),
            state_dim: config.model.state_dim(),
        },
        chains,
        build_s,
        total_s: start.elapsed().as_secs_f64(),
    };
    let file = File::create(config.output_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;
    Ok(summary)
}

/// Parses a trace CSV back into its header and rows.
pub fn read_trace(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|line| {
            line.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Posterior summary of a single time step, for quick inspection.
pub fn state_mean(summary: &ChainSummary, t: usize, d: usize) -> Option<DVector<f64>> {
    summary
        .mean
        .as_ref()
        .map(|m| DVector::from_column_slice(&m[t * d..(t + 1) * d]))
}
