use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpsgd_core::data::{verify_digests, Normalization};
use dpsgd_harness::config::{DataConfig, RunConfig};
use dpsgd_harness::experiment::{run_experiment, EpochBudget, ExperimentOptions};
use dpsgd_harness::train::{default_out_dir, load_data, train_run, OutputSpec};
use dpsgd_harness::{account, report, HarnessError, Result};

#[derive(Parser)]
#[command(name = "dpsgd", version, about = "Differentially private CNN training on MNIST")]
struct Cli {
    /// Worker threads for per-sample gradients (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print (ε, δ) for a number of subsampled Gaussian steps as CSV.
    Account {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        steps: u64,
        /// One row per step instead of only the last.
        #[arg(long)]
        per_step: bool,
    },
    /// Run one of the paired experiments and write its figure CSVs.
    Experiment {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
        id: u32,
        /// Stratified training subset size.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        data: PathBuf,
        #[arg(long)]
        baseline_epochs: Option<u32>,
        #[arg(long)]
        one_cycle_epochs: Option<u32>,
        #[arg(long)]
        plateau_epochs: Option<u32>,
        /// Sampling rate of the private runs (default 0.01).
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Multiplier on both private schedules' learning rates.
        #[arg(long, default_value_t = 1.0)]
        lr_scale: f64,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Join run summaries under a directory into an accuracy-loss table.
    Report {
        #[arg(long)]
        runs: PathBuf,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Check SHA-256 digests listed as `filename hexdigest` lines.
    Verify {
        #[arg(long)]
        digests: PathBuf,
        /// Directory the file names are relative to (default: the list's directory).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = RunConfig::parse(&text)?;
            let mut overrides = Vec::new();
            if let Some(s) = seed {
                cfg.seed = s;
                overrides.push(("run.seed".to_string(), s.to_string()));
            }
            if let Some(o) = &out {
                cfg.out = Some(o.clone());
                overrides.push(("run.out".to_string(), o.display().to_string()));
            }
            let data = load_data(&cfg.data)?;
            let dir = default_out_dir(&cfg);
            let metrics = train_run(
                &cfg,
                &data,
                Some(&OutputSpec {
                    dir: dir.clone(),
                    overrides,
                }),
            )?;
            print!("{}", metrics.summary.render());
            eprintln!("outputs written to {}", dir.display());
        }
        Command::Account {
            sigma,
            q,
            delta,
            steps,
            per_step,
        } => {
            println!("step,epsilon,best_order");
            for r in account(sigma, q, delta, steps, per_step)? {
                println!("{},{},{}", r.step, r.epsilon, r.best_order);
            }
        }
        Command::Experiment {
            id,
            subset,
            seed,
            out,
            data,
            baseline_epochs,
            one_cycle_epochs,
            plateau_epochs,
            sample_rate,
            lr_scale,
        } => {
            let defaults = EpochBudget::default();
            let opts = ExperimentOptions {
                data: DataConfig {
                    dir: data,
                    subset,
                    subset_seed: 0,
                    normalization: Normalization::default(),
                },
                seed,
                out,
                epochs: EpochBudget {
                    baseline: baseline_epochs.unwrap_or(defaults.baseline),
                    one_cycle: one_cycle_epochs.unwrap_or(defaults.one_cycle),
                    plateau: plateau_epochs.unwrap_or(defaults.plateau),
                },
                sample_rate,
                lr_scale,
            };
            let loaded = load_data(&opts.data)?;
            let result = run_experiment(id, &opts, &loaded)?;
            for (model, m) in &result.runs {
                let eps = m
                    .final_epsilon()
                    .map(|e| format!(" epsilon={e:.4}"))
                    .unwrap_or_default();
                println!(
                    "{}: val_accuracy={:.4}{eps}",
                    model.name(),
                    m.final_accuracy().unwrap_or(f64::NAN)
                );
            }
            for f in &result.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Data {
            command: DataCommand::Verify { digests, dir },
        } => {
            let base = dir.unwrap_or_else(|| digests.parent().map(PathBuf::from).unwrap_or_default());
            let checks = verify_digests(&digests, &base)?;
            let mut failed = 0;
            for c in &checks {
                let status = match &c.actual {
                    None => "MISSING",
                    Some(_) if c.ok() => "OK",
                    Some(_) => "MISMATCH",
                };
                if !c.ok() {
                    failed += 1;
                }
                println!("{status} {}", c.file.display());
            }
            if failed > 0 {
                return Err(HarnessError::Data(format!(
                    "{failed} of {} files failed verification",
                    checks.len()
                )));
            }
        }
        Command::Report { runs } => {
            let rows = report::collect(&runs)?;
            print!("{}", report::render_csv(&rows)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
