//! Command-line front end for the sensor placement pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfsensor::config::{Overrides, RunConfig};
use pfsensor::pipeline;
use pfsensor::placement::Removal;
use pfsensor::Result;

#[derive(Parser)]
#[command(name = "pfsensor", version, about = "Sensor placement under uncertain indoor airflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    /// Tracking horizon in steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eps_acc: Option<f64>,
    /// Compare tracking entries with eps_acc itself rather than eps_acc * (steps + 1).
    #[arg(long)]
    raw_threshold: bool,
    /// covered | literal
    #[arg(long)]
    removal: Option<Removal>,
    #[arg(long)]
    sensors: Option<usize>,
    #[arg(long)]
    min_coverage: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: `out` next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            dt: self.dt,
            steps: self.steps,
            eps_acc: self.eps_acc,
            raw_threshold: self.raw_threshold,
            removal: self.removal,
            sensors: self.sensors,
            min_coverage: self.min_coverage,
            workers: self.workers,
            // Relative to the working directory, unlike paths inside the config.
            out: self.out.as_ref().map(|p| std::path::absolute(p).unwrap_or_else(|_| p.clone())),
        })?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build one Markov matrix per scenario plus a manifest.
    Build(Common),
    /// Track, threshold, constrain and place sensors.
    Place {
        #[command(flatten)]
        common: Common,
        /// Manifest from `build` (default: <out>/manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare Markov transport with the finite-volume oracle.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Check the matrices of this manifest instead of rebuilding them.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Expected coverage for increasing sample counts.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5,7,9")]
        samples: Vec<usize>,
    },
    /// Transport a unit release under one scenario.
    Propagate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        scenario: usize,
        /// Release state (default: center cell).
        #[arg(long)]
        release: Option<usize>,
        /// Release every step instead of once.
        #[arg(long)]
        continuous: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(c) => {
            let cfg = c.load()?;
            let m = pipeline::cmd_build(&cfg)?;
            println!("built {} operators in {}", m.scenarios.len(), cfg.out_dir().display());
            for e in &m.scenarios {
                println!("  {:>3}  xi={:<22} weight={:<22} {}", e.id, e.xi, e.weight, e.path.display());
            }
        }
        Command::Place { common, manifest } => {
            let cfg = common.load()?;
            let out = pipeline::cmd_place(&cfg, manifest.as_deref())?;
            let r = &out.report;
            for (s, cum) in r.sensors.iter().zip(&r.cumulative_expected_coverage) {
                println!(
                    "sensor state {:>6} ijk {:?} marginal {:.4} cumulative {:.4}",
                    s.state, s.ijk, s.expected_marginal, cum
                );
            }
            if let Some(occ) = r.occupied_space_coverage.as_ref().and_then(|v| v.last()) {
                println!("occupied-space coverage {occ:.4}");
            }
            println!("plan written to {}", cfg.out_dir().join(pipeline::PLAN_FILE).display());
        }
        Command::Validate { common, manifest } => {
            let cfg = common.load()?;
            let report = pipeline::cmd_validate(&cfg, manifest.as_deref());
            match &report {
                Ok(r) => {
                    for row in &r.rows {
                        println!("scenario {:>3} xi={:<22} L2 error {:.3e}", row.scenario, row.xi, row.l2_error);
                    }
                    println!("max error {:.3e} (tolerance {:.1e})", r.max_error(), r.tolerance);
                }
                Err(_) => println!("see {}", cfg.out_dir().join("validation.json").display()),
            }
            report?;
        }
        Command::Converge { common, samples } => {
            let cfg = common.load()?;
            let table = pipeline::cmd_converge(&cfg, &samples)?;
            print!("{}", table.to_text());
        }
        Command::Propagate {
            common,
            scenario,
            release,
            continuous,
        } => {
            let cfg = common.load()?;
            let (_, phi) = pipeline::cmd_propagate(&cfg, scenario, release, continuous)?;
            println!(
                "total mass {} written to {}",
                phi.iter().sum::<f64>(),
                cfg.out_dir().join("propagate.txt").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
