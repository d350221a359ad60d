use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fairstep::config::ExperimentConfig;
use fairstep::formats::{read_json, read_spec, standin_empirical, write_json, EmpiricalDoc, GeneratorDoc, PolicyDoc, SpecDoc};
use fairstep::harness::read_metrics;
use fairstep::{plot, verify};
use fairstep_core::datagen::build;
use fairstep_core::metrics::{episodic_return, reward_regret, violation_dp, violation_eqopt};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fairstep", version, about = "Episodic RL with stepwise group-fairness constraints")]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for experiment runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Synthetic,
    Fico,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run { config: PathBuf },
    /// Write a benchmark instance as JSON.
    Datagen {
        generator: Generator,
        /// Per-group score data for the score-based instance; defaults to the bundled stand-in.
        #[arg(long)]
        empirical: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Evaluate a policy exactly under the instance's true dynamics.
    Eval {
        spec: PathBuf,
        policy: PathBuf,
        /// Policy to measure reward regret against.
        #[arg(long)]
        comparator: Option<PathBuf>,
    },
    /// Redraw the charts from a metrics CSV.
    Plot { metrics: PathBuf },
    /// Check an instance and report reachability and fairness invariants.
    Verify { spec: PathBuf },
}


fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let mut c = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                c.seed = seed;
            }
            if let Some(out) = cli.out {
                c.output = out;
            }
            let result = fairstep::run_experiment(&c, cli.threads)?;
            eprintln!(
                "wrote {} metric rows for {} method(s) x {} seed(s) to {}",
                result.rows.len(),
                c.methods.len(),
                c.seeds,
                c.output.display()
            );
        }
        Command::Datagen {
            generator,
            empirical,
            horizon,
        } => {
            let doc = match generator {
                Generator::Synthetic => GeneratorDoc::Synthetic {
                    groups: None,
                    horizon,
                    initial_qualified: None,
                },
                Generator::Fico => GeneratorDoc::Fico { groups: None, horizon },
            };
            let data = match &empirical {
                Some(p) => read_json::<EmpiricalDoc>(p)?.to_distribution()?,
                None => standin_empirical(),
            };
            let spec = build(&doc.to_config(), Some(&data))?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("spec.json"));
            write_json(&out, &SpecDoc::from_spec(&spec))?;
            eprintln!("wrote {}", out.display());
        }
        Command::Eval { spec, policy, comparator } => {
            let spec = read_spec(&spec)?;
            let p = read_json::<PolicyDoc>(&policy)?.to_policy(&spec)?;
            let dp = violation_dp(&p, &spec)?;
            let eqopt = violation_eqopt(&p, &spec).ok();
            let regret = match comparator {
                Some(c) => Some(reward_regret(&p, &spec, &read_json::<PolicyDoc>(&c)?.to_policy(&spec)?)?),
                None => None,
            };
            let report = json!({
                "return": episodic_return(&p, &spec)?,
                "dp_violation": dp.mean,
                "dp_per_step": dp.per_step,
                "eqopt_violation": eqopt.as_ref().map(|v| v.mean),
                "eqopt_per_step": eqopt.map(|v| v.per_step),
                "regret": regret,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot { metrics } => {
            let rows = read_metrics(&metrics)?;
            let dir = cli.out.unwrap_or_else(|| metrics.parent().map(PathBuf::from).unwrap_or_default());
            for p in plot::write_plots(&rows, &dir)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Verify { spec } => {
            let doc: SpecDoc = read_json(&spec)?;
            let spec = doc.to_spec().with_context(|| format!("{} is not a valid instance", spec.display()))?;
            let report = verify::verify(&spec)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
