//! `qfiga`: quadrature-free isogeometric heat conduction from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure.

mod commands;
mod problem_file;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, Domain, FitArgs, Method, NumericFailure, ReuseArgs, SolveArgs, VerifyArgs};

#[derive(Debug, Parser)]
#[command(name = "qfiga", version, about = "Quadrature-free IGA heat conduction on multi-block B-spline volumes")]
struct Cli {
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Persistent reuse-cache directory (overrides QFIGA_CACHE_DIR).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

/// Parses `n` or `nu,nv,nw`.
fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [n] => Ok([*n; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err("expected n or nu,nv,nw".into()),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble and solve one problem; writes solution.csv and report.json.
    Solve {
        problem: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Samples per element edge in the CSV grid.
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Also write legacy-VTK files, one per block.
        #[arg(long)]
        vtk: bool,
        #[arg(long, value_enum, default_value = "qf")]
        method: Method,
    },
    /// Solve the problem on each model in turn, the first with a cold cache, and report timings.
    Reuse {
        problem: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cold versus warm assembly timings across h-levels on a built-in domain.
    Bench {
        #[arg(long, value_enum, default_value = "cube")]
        domain: Domain,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// Elements per direction before refinement.
        #[arg(long, default_value = "2", value_parser = parse_triple)]
        base: [usize; 3],
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the manufactured-solution suites (unit cube, hollow-sphere octant).
    Verify {
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = 1)]
        cube_base: usize,
        #[arg(long, default_value_t = 2)]
        max_level: usize,
        #[arg(long, default_value = "6,6,2", value_parser = parse_triple)]
        sphere_elements: [usize; 3],
    },
    /// Least-squares fit of B-spline blocks to sample files; writes a model.
    Fit {
        #[arg(required = true)]
        samples: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value = "2", value_parser = parse_triple)]
        elements: [usize; 3],
        /// Smoothing weight relative to the normal-matrix trace.
        #[arg(long, default_value_t = 1e-6)]
        smoothing: f64,
        #[arg(long, default_value_t = 10.0)]
        boundary_weight: f64,
        /// Template model whose interior is carried over by an elastic map.
        #[arg(long, requires = "constraints")]
        template: Option<PathBuf>,
        /// Elastic-map constraints: [{"from": [x,y,z], "to": [x,y,z]}, ...].
        #[arg(long, requires = "template")]
        constraints: Option<PathBuf>,
        /// Elastic-map support radius (default: a quarter of the bounding-box diagonal).
        #[arg(long)]
        lambda: Option<f64>,
        /// Lattice size for interior samples taken from the template.
        #[arg(long, default_value_t = 8)]
        interior: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the Bézier elements of a model as JSON.
    Extract {
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or empty the reuse-cache directory.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    Stats {
        /// Include build times.
        #[arg(long)]
        timings: bool,
    },
    Clear,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 3;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<qfiga_core::error::Error>() {
            return if e.is_input_error() { 2 } else { 3 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    3
}

/// The error chain, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let dir = cli.cache_dir.as_deref();
    match cli.command {
        Command::Solve { problem, out, samples, vtk, method } => {
            commands::solve(&SolveArgs { problem, out, samples, vtk, method }, &commands::open_cache(dir))
        }
        Command::Reuse { problem, models, repeat, out } => {
            commands::reuse(&ReuseArgs { problem, models, repeat, out }, &commands::open_cache(dir))
        }
        Command::Bench { domain, degree, base, levels, repeat, out } => {
            commands::bench(&BenchArgs { domain, degree, base, levels, repeat, out })
        }
        Command::Verify { degree, cube_base, max_level, sphere_elements } => commands::verify(
            &VerifyArgs { degree, cube_base, max_level, sphere_elements },
            &commands::open_cache(dir),
        ),
        Command::Fit { samples, degree, elements, smoothing, boundary_weight, template, constraints, lambda, interior, out } => {
            commands::fit(&FitArgs {
                samples,
                degree,
                elements,
                smoothing,
                boundary_weight,
                template,
                constraints,
                lambda,
                interior,
                out,
            })
        }
        Command::Extract { model, out } => commands::extract(&model, out.as_deref()),
        Command::Cache { action: CacheAction::Stats { timings } } => commands::cache_stats(dir, timings),
        Command::Cache { action: CacheAction::Clear } => commands::cache_clear(dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
