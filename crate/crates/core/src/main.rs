use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use curvflow::flow::{classify, prepare, run_flow};
use curvflow::io::{load_config, rescale_run, write_outputs};
use curvflow::monitors::sphere_theta;
use curvflow::oracle::{verify_all, VerifySettings};
use curvflow::Error;

#[derive(Parser)]
#[command(name = "curvflow", version, about = "Axisymmetric convex hypersurfaces contracting by Φ(F)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the condition reports and applicable cases for a configuration.
    Check {
        config: PathBuf,
        /// Override a configuration value, e.g. `--set shape.radius=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the flow and write run.json, series.csv, coeffs.csv and snapshots.
    Flow {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Tabulate the shrinking-sphere radius for the configured profile.
    Sphere {
        config: PathBuf,
        /// Initial radius; defaults to the mean support of the configured shape.
        #[arg(long)]
        theta0: Option<f64>,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute tau, theta and sup_dev_unit of a saved run.
    Rescale {
        run_dir: PathBuf,
        /// Output directory; defaults to the run directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Extinction time to rescale against instead of the estimate.
        #[arg(long)]
        t_est: Option<f64>,
    },
    /// Run every oracle suite and print a JSON report.
    Verify {
        #[arg(long, default_value_t = 1000)]
        fd_samples: usize,
        #[arg(long, default_value_t = 10_000)]
        suite_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Check { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let (f_report, phi_report, classification) = classify(&config)?;
            println!(
                "{}",
                pretty(&json!({
                    "config": config,
                    "f_report": f_report,
                    "phi_report": phi_report,
                    "classification": classification,
                }))?
            );
        }
        Command::Flow { config, out, overrides } => {
            let config = load_config(&config, &overrides)?;
            let result = run_flow(&config)?;
            write_outputs(&result, &out)?;
            let failed: Vec<&str> = result
                .monotonicity
                .iter()
                .filter(|r| r.asserted && !r.pass)
                .map(|r| r.quantity.as_str())
                .collect();
            println!(
                "steps {}  t_end {:.6e}  T_est {:.12e}  p_est {:.3e}{}",
                result.steps,
                result.series.last().map_or(0.0, |r| r.t),
                result.extinction.t_est,
                result.extinction.p_est,
                if result.extinction.low_confidence { "  (low confidence)" } else { "" }
            );
            if !failed.is_empty() {
                println!("monotonicity violations: {}", failed.join(", "));
            }
        }
        Command::Sphere { config, theta0, points, overrides } => {
            let config = load_config(&config, &overrides)?;
            let theta0 = match theta0 {
                Some(t) => t,
                None => prepare(&config)?.1.mean_support(),
            };
            let st = sphere_theta(&config.phi, theta0)?;
            println!("# extinction time {:.16e}", st.extinction_time());
            println!("t,theta,tau");
            for i in 0..=points {
                let t = st.extinction_time() * i as f64 / points.max(1) as f64;
                let theta = st.theta(t)?;
                println!("{t:.16e},{theta:.16e},{:.16e}", -theta.ln());
            }
        }
        Command::Rescale { run_dir, out, t_est } => {
            let out = out.unwrap_or_else(|| run_dir.clone());
            let e = rescale_run(&run_dir, &out, t_est)?;
            println!("T_est {:.12e}  p_est {:.3e}", e.t_est, e.p_est);
        }
        Command::Verify { fd_samples, suite_samples, seed } => {
            let settings = VerifySettings { fd_samples, suite_samples, seed, ..VerifySettings::default() };
            let report = verify_all(settings)?;
            println!("{}", pretty(&report)?);
            if !report.pass {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => {
            eprintln!("error: verification failed");
            ExitCode::from(5)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::Json(_) => 2,
                Error::ClassificationEmpty => 3,
                Error::ConvexityBreakdown { .. } => 4,
                _ => 1,
            })
        }
    }
}
