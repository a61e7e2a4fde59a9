//! `orlicz-minkowski`: batch front end for the solver.
//!
//! Exit codes: 0 success, 1 configuration or runtime error, 2 partial
//! convergence (or a certificate mismatch under `verify-only`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use orlicz::continuation::{solve, Solution};
use orlicz::geometry::Body;
use orlicz::kernel::mollify;
use orlicz::verification::{certify, Certificate};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "orlicz-minkowski", version, about = "Discrete Orlicz-Minkowski problem solver")]
struct Cli {
    /// Output directory (overrides `outputs.dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full continuation and write solution, certificate and traces.
    Solve { config: PathBuf },
    /// Recompute the certificate of a stored solution.
    VerifyOnly { solution: PathBuf, config: PathBuf },
    /// Write the mollified kernel at the smallest scheduled eps.
    KernelDump { config: PathBuf },
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    #[serde(flatten)]
    solution: Solution,
    certificate: Certificate,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    Ok(RunConfig::from_json(&text)?)
}

fn out_dir(cli: &Cli, config: &RunConfig) -> Result<PathBuf> {
    let dir = cli.out.clone().or_else(|| config.outputs.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn run_solve(cli: &Cli, config_path: &Path) -> Result<ExitCode, Failure> {
    let config = load_config(config_path)?;
    let problem = config.problem()?;
    let dir = out_dir(cli, &config)?;
    let solution = solve(&problem).context("solver failed")?;
    let mu = problem.final_measure().context("final measure")?;
    let mask = config.residual_mask(&problem);
    let certificate = certify(&solution.h, &problem.grid, &mu, &problem.orlicz, mask.as_deref()).context("certificate")?;

    if config.outputs.traces {
        for stage in &solution.stages {
            write(&dir, &format!("trace_stage_{}.csv", stage.index), &orlicz::extremal::trace_csv(&stage.trace))?;
        }
    }
    if config.outputs.mesh {
        let body = Body::wulff(&solution.h, &problem.grid).context("final body")?;
        match problem.grid.dim() {
            2 => write(&dir, "body.csv", &body.to_polygon_csv())?,
            _ => write(&dir, "body.off", &body.to_off())?,
        }
    }
    if config.outputs.kernel_dump {
        write(&dir, "kernel.csv", &kernel_csv(&problem)?)?;
    }
    write(&dir, "certificate.json", &to_json(&certificate)?)?;
    let file = SolutionFile { solution, certificate };
    write(&dir, "solution.json", &to_json(&file)?)?;

    let s = &file.solution;
    if !cli.quiet {
        println!("stages:          {}", s.stages.len());
        for st in &s.stages {
            let m = st.m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "  m={m:>4} eps={:<8} steps={:<4} residual {:.3e} -> {:.3e} lambda {:.6}{}",
                st.eps,
                st.accepted_steps,
                st.residual_start,
                st.residual_end,
                st.lambda,
                if st.converged { "" } else { "  (not converged)" }
            );
        }
        println!("lambda:          {:.10}", s.lambda);
        println!("residual_plain:  {:.3e}", file.certificate.residual_plain);
        println!("converged:       {}", s.converged);
        println!("output:          {}", dir.display());
    }
    Ok(if s.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn kernel_csv(problem: &orlicz::continuation::ProblemSpec) -> Result<String> {
    let eps = *problem.eps_schedule.last().expect("validated schedule");
    let kernel = mollify(&problem.orlicz, &problem.constants, eps)?;
    Ok(kernel.dump_csv(eps * 1e-2, 10.0, 400))
}

fn run_verify(cli: &Cli, solution_path: &Path, config_path: &Path) -> Result<ExitCode, Failure> {
    let config = load_config(config_path)?;
    let problem = config.problem()?;
    let text = fs::read_to_string(solution_path).with_context(|| format!("cannot read {}", solution_path.display()))?;
    let stored: SolutionFile = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", solution_path.display()))?;
    let mu = problem.final_measure().context("final measure")?;
    let mask = config.residual_mask(&problem);
    let certificate = certify(&stored.solution.h, &problem.grid, &mu, &problem.orlicz, mask.as_deref()).context("certificate")?;
    let dir = out_dir(cli, &config)?;
    let json = to_json(&certificate)?;
    write(&dir, "certificate.json", &json)?;
    let same = json == to_json(&stored.certificate)?;
    if !cli.quiet {
        print!("{json}");
        println!("matches stored certificate: {same}");
    }
    Ok(if same { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run_kernel_dump(cli: &Cli, config_path: &Path) -> Result<ExitCode, Failure> {
    let config = load_config(config_path)?;
    let problem = config.problem()?;
    let dir = out_dir(cli, &config)?;
    write(&dir, "kernel.csv", &kernel_csv(&problem)?)?;
    if !cli.quiet {
        println!("wrote {}", dir.join("kernel.csv").display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { config } => run_solve(&cli, config),
        Command::VerifyOnly { solution, config } => run_verify(&cli, solution, config),
        Command::KernelDump { config } => run_kernel_dump(&cli, config),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
