//! `auxmc`: run, validate and time the samplers from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auxmc::bench::{self, ModelSpec, RunConfig};
use auxmc::{Error, Exec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "auxmc", version, about = "Exact MCMC for state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the oracle suite and print one line per check.
    Validate {
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print a timing table as CSV.
    Bench {
        /// `sequential`, `prefix`, `dnc` or any run sampler name.
        #[arg(long)]
        sampler: String,
        /// Comma-separated horizons, e.g. `64,128,256`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Simulate a model and write `t,x_*,y_*` rows.
    Simulate {
        /// TOML file with a model table, or inline `kind=stochvol,horizon=50,data.seed=3`.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation,
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ModeMismatch { .. } | Error::CapExceeded { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// Turns `k=v,k=v` into TOML, quoting values that are not TOML literals.
fn inline_model(text: &str) -> Result<String, Failure> {
    let mut lines = Vec::new();
    for pair in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("expected key=value, got `{pair}`")))?;
        let value = value.trim();
        let literal = toml::from_str::<toml::Table>(&format!("v = {value}")).is_ok();
        if literal {
            lines.push(format!("{} = {value}", key.trim()));
        } else {
            lines.push(format!("{} = {:?}", key.trim(), value));
        }
    }
    Ok(lines.join("\n"))
}

fn parse_model(arg: &str) -> Result<ModelSpec, Failure> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{arg}: {e}")))?
    } else {
        inline_model(arg)?
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(toml::Value::Table(inner)) = table.remove("model") {
        table = inner;
    }
    table
        .try_into::<ModelSpec>()
        .map_err(|e| Failure::Config(format!("model: {e}")))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config } => {
            let config = RunConfig::from_file(&config)?;
            let summary = bench::run(&config)?;
            for chain in &summary.chains {
                let rate = chain.rate.map_or("n/a".to_string(), |r| format!("{r:.3}"));
                println!(
                    "chain {}: {} samples, rate {rate}, final delta {:.4e}, {:.2}s",
                    chain.chain,
                    chain.samples,
                    chain.final_delta,
                    chain.wall_time.burn_in_s + chain.wall_time.sampling_s
                );
            }
            println!("summary: {}", config.output_dir.join("summary.json").display());
            Ok(())
        }
        Command::Validate { json } => {
            let report = bench::validate();
            for item in &report.items {
                let metric = item.metric.map_or("-".to_string(), |m| format!("{m:.3e}"));
                let tol = item.tolerance.map_or("-".to_string(), |t| format!("{t:.1e}"));
                let verdict = if item.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {:<24} metric {metric:>10} tol {tol:>8}  {}", item.name, item.detail);
            }
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            }
            if report.passed {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
        Command::Bench { sampler, sizes, workers } => {
            let exec = Exec::from_env(workers)?;
            let rows = exec.install(|| bench::timing_table(&sampler, &sizes, &exec))?;
            println!("sampler,horizon,seconds_per_step,steps");
            for r in rows {
                println!("{},{},{:.6e},{}", r.sampler, r.horizon, r.seconds_per_step, r.steps);
            }
            Ok(())
        }
        Command::Simulate { model, out } => {
            let spec = parse_model(&model)?;
            let data = bench::simulate_model(&spec)?;
            bench::write_simulation(&out, &spec, &data)?;
            println!("{} rows -> {}", data.obs.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
