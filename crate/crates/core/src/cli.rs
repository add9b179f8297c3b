//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::parse_config;
use crate::par::Exec;
use crate::{pipeline, plot, verify, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "lautum",
    version,
    about = "Lautum-regularized semi-supervised transfer learning",
    after_help = "LAUTUM_OUT_DIR sets the default output directory."
)]
pub struct Cli {
    /// Run sweeps and suites on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the information-measure identities; exits 0 iff all hold.
    VerifyInfo {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 200)]
        gaussian_cases: usize,
        #[arg(long, default_value_t = 10)]
        mc_cases: usize,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one pre-transfer + post-transfer experiment.
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every (λ, seed) cell; λ = 0 runs standard transfer.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Plot post-transfer target accuracy of one or more metrics files.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

/// Parses `args` and runs the command, writing reports to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(out, "{e}").map_err(|e| Error::io("<stdout>", e));
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    execute(cli, out)
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::VerifyInfo {
            cases,
            gaussian_cases,
            mc_cases,
            mc_samples,
            seed,
        } => {
            let mut ok = true;
            let d = verify::decomposition_suite(cases, seed, exec)?;
            ok &= d.passed();
            say(out, format!("[{}] loss decomposition: {d}", mark(d.passed())))?;
            let p = verify::proportionality_suite(gaussian_cases, seed, exec)?;
            ok &= p.passed();
            say(
                out,
                format!("[{}] regularizer/KL proportionality: {p}", mark(p.passed())),
            )?;
            for (i, c) in verify::monte_carlo_suite(mc_cases, mc_samples, seed, exec)?
                .iter()
                .enumerate()
            {
                let pass = c.rel_error() <= verify::MONTE_CARLO_TOL;
                ok &= pass;
                say(
                    out,
                    format!(
                        "[{}] sampled KL case {i}: closed form {:.6}, estimate {:.6}, rel error {:.3e}",
                        mark(pass),
                        c.closed_form,
                        c.estimate,
                        c.rel_error()
                    ),
                )?;
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Numerical("identity suite failed".into()))
            }
        }
        Command::RunExperiment { config, seed, output } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = output {
                cfg.output = o;
            }
            let o = pipeline::run_experiment(&cfg)?;
            let s = &o.summary;
            say(
                out,
                format!(
                    "{}: final {:.4}, best {:.4}, early {:.4} -> {}",
                    cfg.label(),
                    s.final_acc,
                    s.best_acc,
                    s.early_acc,
                    cfg.output.display()
                ),
            )
        }
        Command::Sweep {
            config,
            lambda,
            seeds,
            output,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let sweep = pipeline::run_sweep(&cfg, &lambda, &seeds, exec)?;
            for r in &sweep.rows {
                say(
                    out,
                    format!(
                        "λ={} ({}): early {:.4} ± {:.4}, final {:.4} ± {:.4} over {} seeds",
                        r.lambda,
                        r.mode.as_str(),
                        r.early_acc.mean,
                        r.early_acc.std,
                        r.final_acc.mean,
                        r.final_acc.std,
                        r.seeds
                    ),
                )?;
            }
            say(out, format!("tables in {}", cfg.output.display()))
        }
        Command::Plot { out: path, csv } => {
            let inputs: Vec<&std::path::Path> = csv.iter().map(PathBuf::as_path).collect();
            plot::render_plot(&inputs, &path)?;
            say(out, format!("wrote {}", path.display()))
        }
    }
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
