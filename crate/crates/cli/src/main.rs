use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symdesign_core::{Ensemble, GeometryKind, Partition, WindowConvention};

mod commands;
mod config;
mod verify;

use config::{ConfigFile, Format, Span};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] symdesign_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 64,
            _ => 1,
        }
    }
}

/// How a command that ran to the end turned out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some rows were infeasible or failed; the rest were written.
    Partial,
    /// The command's own verdict was negative.
    Failed,
}

#[derive(Parser, Debug)]
#[command(
    name = "symdesign",
    version,
    about = "Spectral gaps, commutants and frame potentials of SU(d)-symmetric random circuits"
)]
struct Cli {
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (also read from SYMDESIGN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Unit/kernel eigenvalue tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, global = true)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ScanArgs {
    /// Window sizes for the bulk scan, e.g. 2..6.
    #[arg(long)]
    m: Option<Span>,
    /// System sizes for whole-system scans, e.g. 4..7.
    #[arg(long)]
    n: Option<Span>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// open, periodic, all-to-all or brickwork; switches gap-scan to whole systems over --n.
    #[arg(long)]
    geometry: Option<GeometryKind>,
    /// `all` or a file with one sector tuple per line (`a,b;c,d`).
    #[arg(long)]
    tuples: Option<String>,
    /// What --m counts in the bulk scan: projections (window m+1) or sites (window m).
    #[arg(long)]
    window: Option<Window>,
    /// Largest block a row may need.
    #[arg(long)]
    max_dim: Option<usize>,
    /// Minimize over the tuples within --max-dim instead of giving up on the row.
    #[arg(long)]
    skip_oversized: bool,
    /// Continue an interrupted CSV in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window(pub WindowConvention);

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "projections" => Ok(Self(WindowConvention::Projections)),
            "sites" => Ok(Self(WindowConvention::Sites)),
            _ => Err(format!(
                "unknown window convention {s:?} (projections or sites)"
            )),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Charge sectors of n qudits: irrep dimensions and multiplicities.
    Partitions {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Orthogonal-form matrices of one irrep.
    Rep {
        #[arg(long)]
        shape: Option<Partition>,
    },
    /// Bulk Hamiltonian gaps against the Knabe threshold, or whole-system gaps with --geometry.
    GapScan(ScanArgs),
    /// All-to-all Hamiltonian gaps over --n.
    AllToAll(ScanArgs),
    /// Brickwork singular gaps over --n against the detectability bound.
    Brickwork(ScanArgs),
    /// Unit eigenspaces of the swap-only and CQA steps on one self-paired sector tuple.
    Counterexample {
        #[arg(long)]
        shape: Option<Partition>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        geometry: Option<GeometryKind>,
        /// Restrict to one ensemble (swap or cqa).
        #[arg(long)]
        ensemble: Option<Ensemble>,
    },
    /// Exact and formula second frame potentials, optionally with Monte Carlo.
    FramePotential {
        #[arg(long)]
        n: Option<Span>,
        /// Monte Carlo samples per row (0 skips sampling).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate one closed-form bound.
    Bounds {
        /// knabe, all-to-all, detectability, convergence or one-design.
        name: String,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Steps to an epsilon-approximate k-design; measures the chain gap when --delta is absent.
    Convergence {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Run the invariant suite.
    Verify {
        /// Only the n <= 5 subset.
        #[arg(long)]
        quick: bool,
    },
}

/// Options shared by every command after merging flags, config file and defaults.
pub struct Context {
    pub file: ConfigFile,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

fn init_threads(flag: Option<usize>, file: &ConfigFile) -> Result<(), CliError> {
    let threads = match file.pick(flag, "threads")? {
        Some(t) => Some(t),
        None => match std::env::var(config::THREADS_ENV) {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|e| CliError::Usage(format!("{}={v:?}: {e}", config::THREADS_ENV)))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    init_threads(cli.threads, &file)?;
    let ctx = Context {
        seed: file.pick(cli.seed, "seed")?,
        tol: file.pick(cli.tol, "tol")?,
        out: file.pick(cli.out, "out")?,
        format: file.pick(cli.format, "format")?,
        file,
    };
    match cli.command {
        Command::Partitions { n, d } => commands::partitions(&ctx, n, d),
        Command::Rep { shape } => commands::rep(&ctx, shape),
        Command::GapScan(a) => commands::scan(&ctx, commands::ScanKind::Gap, a),
        Command::AllToAll(a) => commands::scan(&ctx, commands::ScanKind::AllToAll, a),
        Command::Brickwork(a) => commands::scan(&ctx, commands::ScanKind::Brickwork, a),
        Command::Counterexample {
            shape,
            d,
            geometry,
            ensemble,
        } => commands::counterexample(&ctx, shape, d, geometry, ensemble),
        Command::FramePotential { n, samples } => commands::frame_potential(&ctx, n, samples),
        Command::Bounds {
            name,
            m,
            n,
            k,
            d,
            gap,
            gamma,
            delta,
            epsilon,
        } => commands::bounds(
            &ctx,
            &name,
            commands::BoundInputs {
                m,
                n,
                k,
                d,
                gap,
                gamma,
                delta,
                epsilon,
            },
        ),
        Command::Convergence {
            k,
            n,
            d,
            epsilon,
            delta,
        } => commands::convergence(&ctx, k, n, d, epsilon, delta),
        Command::Verify { quick } => {
            let quick = ctx.file.switch(quick, "quick")?;
            verify::run(&ctx, quick)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
