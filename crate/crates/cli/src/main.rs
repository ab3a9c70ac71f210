use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use twopoint_core::analytic::solve_alpha;
use twopoint_core::ensemble::{fit_convergence, run_ensemble};
use twopoint_core::output::{write_analytic_table, write_run, write_sweep_table};
use twopoint_core::verify::{render_table, Level, Suite};
use twopoint_core::{Beta, ConvergenceReport, Error, ModelParams, StepScheme};

#[derive(Parser, Debug)]
#[command(name = "twopoint", version, about = "Directed polymer on two sites: exact limits and Monte Carlo checks")]
struct Cli {
    /// Worker threads (defaults to the available cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Suppress progress output on stderr
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form roots, free energy and envelope rate for each beta
    Analytic {
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true, allow_negative_numbers = true, value_parser = parse_beta)]
        beta: Vec<Beta>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run one ensemble and write curve.csv and report.json
    Simulate {
        #[arg(long, allow_negative_numbers = true, value_parser = parse_beta)]
        beta: Option<Beta>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run every beta of a grid with the same settings and seed
    Sweep {
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, value_parser = parse_beta)]
        beta: Vec<Beta>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run the acceptance checks and print a pass/fail table
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON file with run settings; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<StepScheme>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<f64>,
    /// Existing output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

/// Settings file contents. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    beta: Option<Beta>,
    dt: Option<f64>,
    horizon: Option<f64>,
    paths: Option<u64>,
    scheme: Option<StepScheme>,
    seed: Option<u64>,
    stride: Option<f64>,
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::ZeroBeta(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn parse_beta(s: &str) -> Result<Beta, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}` is not a number: {e}"))?;
    Beta::new(v).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<StepScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn resolve(&self, beta: Option<Beta>) -> Result<(ModelParams, Option<PathBuf>), Failure> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let d = ModelParams::default();
        let params = ModelParams {
            beta: beta.or(file.beta).unwrap_or(d.beta),
            dt: self.dt.or(file.dt).unwrap_or(d.dt),
            horizon: self.horizon.or(file.horizon).unwrap_or(d.horizon),
            n_paths: self.paths.or(file.paths).unwrap_or(d.n_paths),
            scheme: self.scheme.or(file.scheme).unwrap_or(d.scheme),
            output_stride: self.stride.or(file.stride).unwrap_or(d.output_stride),
            master_seed: self.seed.or(file.seed).unwrap_or(d.master_seed),
        };
        params.validate()?;
        Ok((params, self.out.clone().or(file.out)))
    }
}

fn require_dir(dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("output directory {} does not exist", dir.display())))
    }
}

fn simulate(params: &ModelParams, out: Option<&Path>, quiet: bool) -> Result<ConvergenceReport, Failure> {
    if !quiet {
        eprintln!(
            "beta={} scheme={} dt={} horizon={} paths={} seed={}",
            params.beta.value(),
            params.scheme,
            params.dt,
            params.horizon,
            params.n_paths,
            params.master_seed
        );
    }
    let curve = run_ensemble(params)?;
    let report = fit_convergence(&curve, &solve_alpha(params.beta))?;
    if let Some(dir) = out {
        write_run(dir, &curve, &report).with_context(|| format!("writing into {}", dir.display()))?;
    }
    Ok(report)
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Analytic { beta, format } => {
            let rows: Vec<_> = beta.into_iter().map(solve_alpha).collect();
            match format {
                Format::Csv => write_analytic_table(&rows, &mut stdout)?,
                Format::Json => {
                    serde_json::to_writer_pretty(&mut stdout, &rows).context("writing table")?;
                    writeln!(stdout).context("writing table")?;
                }
            }
        }
        Command::Simulate { beta, run } => {
            let (params, out) = run.resolve(beta)?;
            if let Some(dir) = &out {
                require_dir(dir)?;
            }
            let report = simulate(&params, out.as_deref(), cli.quiet)?;
            writeln!(stdout, "{}", report.summary_line()).context("writing summary")?;
        }
        Command::Sweep { beta, run, format } => {
            if beta.is_empty() {
                return Err(Failure::Usage("the beta grid is empty".into()));
            }
            let (base, out) = run.resolve(None)?;
            if let Some(dir) = &out {
                require_dir(dir)?;
            }
            let mut reports = Vec::with_capacity(beta.len());
            for b in beta {
                let params = ModelParams { beta: b, ..base };
                params.validate()?;
                let sub = match &out {
                    Some(dir) => {
                        let sub = dir.join(format!("beta_{}", b.value()));
                        fs::create_dir_all(&sub).with_context(|| format!("creating {}", sub.display()))?;
                        Some(sub)
                    }
                    None => None,
                };
                let report = simulate(&params, sub.as_deref(), cli.quiet)?;
                if !cli.quiet {
                    eprintln!("{}", report.summary_line());
                }
                reports.push(report);
            }
            if let Some(dir) = &out {
                let mut table = Vec::new();
                write_sweep_table(&reports, &mut table)?;
                let path = dir.join("sweep.csv");
                fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
            }
            match format {
                Format::Csv => write_sweep_table(&reports, &mut stdout)?,
                Format::Json => {
                    serde_json::to_writer_pretty(&mut stdout, &reports).context("writing table")?;
                    writeln!(stdout).context("writing table")?;
                }
            }
        }
        Command::Verify { level, seed } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            let mut suite = Suite::new(level, seed);
            let mut results = Vec::new();
            for &(id, _) in twopoint_core::verify::CRITERIA.iter() {
                let r = suite.run(id);
                if !cli.quiet {
                    eprintln!("{}", r.line());
                }
                results.push(r);
            }
            write!(stdout, "{}", render_table(&results)).context("writing table")?;
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
