//! `poolsim` — command-line front end for the cluster simulator.
//!
//! Subcommands: `kernel` (one kernel, golden-verified), `pipeline` (the full
//! receive chain), `sweep` (a parameter sweep from a config file), and
//! `verify-layout` (the standalone data-placement checker). Every command
//! emits a structured report as JSON or CSV. Exit codes: 0 success, 1 usage
//! or configuration error, 2 verification failure (the report is still
//! written), 3 simulator deadlock.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use commands::{KernelContext, LayoutArgs};
use config::{load_sweep, resolve_pipeline, topology_from_flag, topology_from_value, CliError};
use poolsim::report::ReportDocument;

#[derive(Parser)]
#[command(
    name = "poolsim",
    version,
    about = "Cycle-accurate many-core cluster simulator for uplink baseband kernels"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one kernel on the simulated cluster and verify it against the
    /// golden implementation.
    Kernel {
        #[command(subcommand)]
        kernel: KernelCmd,
    },
    /// Run the full receive chain (OFDM-dem, BF, CHE, NE, MIMO) and report
    /// per-stage cycles, stalls, and speedups.
    Pipeline {
        /// JSON config file (use-case dimensions, topology, batching).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use-case preset; overrides the config file. Currently "usecase-5g".
        #[arg(long)]
        preset: Option<String>,
        /// "mempool", "terapool", or a JSON topology file; overrides the
        /// config file. Defaults to "terapool".
        #[arg(long)]
        topology: Option<String>,
        /// Stimulus seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a parameter sweep described by a JSON config file; one record per
    /// point, in axis order.
    Sweep {
        /// JSON sweep file: kernel plus axes (sizes, batches, cores).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the sweep file's topology. Defaults to "mempool".
        #[arg(long)]
        topology: Option<String>,
        /// Overrides the sweep file's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check a kernel's data placement for bank conflicts and locality
    /// without executing it.
    VerifyLayout {
        /// "fft", "fft-unfolded", "mmm", or "cholesky".
        #[arg(long)]
        kernel: String,
        /// Transform length (fft) or inner dimension (mmm).
        #[arg(long)]
        n: Option<usize>,
        /// Transforms per core set (fft).
        #[arg(long)]
        batch: Option<usize>,
        /// Left dimension (mmm).
        #[arg(long)]
        m: Option<usize>,
        /// Right dimension (mmm).
        #[arg(long)]
        p: Option<usize>,
        /// Matrix size (cholesky).
        #[arg(long)]
        size: Option<usize>,
        /// "mempool", "terapool", or a JSON topology file.
        #[arg(long)]
        topology: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Subcommand)]
enum KernelCmd {
    /// Radix-4 transform folded onto core sets, one butterfly column per core.
    Fft {
        /// Transform length (a power of four).
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Transforms per core set between barriers (default: the resident
        /// capacity of the topology).
        #[arg(long)]
        batch: Option<usize>,
        #[command(flatten)]
        common: KernelCommon,
    },
    /// Complex matrix-matrix multiply on 4x4 output windows.
    Mmm {
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        p: usize,
        /// Cores to schedule on (default: all cores of the topology).
        #[arg(long)]
        cores: Option<usize>,
        #[command(flatten)]
        common: KernelCommon,
    },
    /// Cholesky factorisations, run as mirrored pairs with one barrier per
    /// column.
    Cholesky {
        /// Matrix size.
        #[arg(long, default_value_t = 4)]
        size: usize,
        /// Number of factorisations to run and verify.
        #[arg(long, default_value_t = 2)]
        instances: usize,
        #[command(flatten)]
        common: KernelCommon,
    },
    /// MMSE equalisation; the golden route checked against a
    /// double-precision residual.
    Mmse {
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        beams: usize,
        /// Regularising noise power.
        #[arg(long, default_value_t = 0.0)]
        sigma2: f32,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[command(flatten)]
        common: KernelCommon,
    },
    /// Least-squares channel estimation; golden route checked against
    /// double-precision division.
    Che {
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        beams: usize,
        #[arg(long, default_value_t = 192)]
        subcarriers: usize,
        #[command(flatten)]
        common: KernelCommon,
    },
    /// Noise-variance estimation; golden route checked against a
    /// double-precision recomputation.
    Ne {
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        beams: usize,
        #[arg(long, default_value_t = 192)]
        subcarriers: usize,
        #[arg(long, default_value_t = 2)]
        pilots: usize,
        /// Injected noise power.
        #[arg(long, default_value_t = 0.01)]
        sigma2: f32,
        #[command(flatten)]
        common: KernelCommon,
    },
}

#[derive(Args)]
struct KernelCommon {
    /// "mempool", "terapool", or a JSON topology file. Defaults to "mempool".
    #[arg(long)]
    topology: Option<String>,
    /// Stimulus seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write a per-cycle execution trace of the timed run to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct OutArgs {
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.code())
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    let (doc, out) = match cli.cmd {
        Cmd::Kernel { kernel } => run_kernel(kernel)?,
        Cmd::Pipeline { config, preset, topology, seed, out } => {
            let resolved = resolve_pipeline(
                config.as_deref(),
                preset.as_deref(),
                topology.as_deref(),
                seed,
            )?;
            (commands::pipeline(&resolved)?, out)
        }
        Cmd::Sweep { config, topology, seed, out } => {
            let file = load_sweep(&config)?;
            let named = match (topology.as_deref(), file.topology.as_ref()) {
                (Some(flag), _) => topology_from_flag(flag)?,
                (None, Some(value)) => topology_from_value(value)?,
                (None, None) => topology_from_flag("mempool")?,
            };
            let seed = seed.or(file.seed).unwrap_or(1);
            (commands::sweep(&file, &named, seed)?, out)
        }
        Cmd::VerifyLayout { kernel, n, batch, m, p, size, topology, out } => {
            let named = topology_from_flag(topology.as_deref().unwrap_or("mempool"))?;
            let args = LayoutArgs { kernel, n, batch, m, p, size };
            (commands::verify_layout(&args, &named)?, out)
        }
    };
    emit(&doc, &out)?;
    Ok(if doc.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run_kernel(cmd: KernelCmd) -> Result<(ReportDocument, OutArgs), CliError> {
    fn split(common: KernelCommon) -> Result<(config::NamedTopology, u64, Option<PathBuf>, OutArgs), CliError> {
        let named = topology_from_flag(common.topology.as_deref().unwrap_or("mempool"))?;
        Ok((named, common.seed, common.trace, common.out))
    }
    match cmd {
        KernelCmd::Fft { n, batch, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_fft(n, batch, &ctx)?, out))
        }
        KernelCmd::Mmm { m, n, p, cores, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_mmm(m, n, p, cores, &ctx)?, out))
        }
        KernelCmd::Cholesky { size, instances, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_cholesky(size, instances, &ctx)?, out))
        }
        KernelCmd::Mmse { layers, beams, sigma2, instances, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_mmse(layers, beams, sigma2, instances, &ctx)?, out))
        }
        KernelCmd::Che { layers, beams, subcarriers, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_che(layers, beams, subcarriers, &ctx)?, out))
        }
        KernelCmd::Ne { layers, beams, subcarriers, pilots, sigma2, common } => {
            let (named, seed, trace, out) = split(common)?;
            let ctx = KernelContext { named: &named, seed, trace: trace.as_deref() };
            Ok((commands::kernel_ne(layers, beams, subcarriers, pilots, sigma2, &ctx)?, out))
        }
    }
}

fn emit(doc: &ReportDocument, out: &OutArgs) -> Result<(), CliError> {
    let text = match out.format {
        Format::Json => doc.to_json(),
        Format::Csv => doc.to_csv(),
    };
    match &out.out {
        Some(path) => {
            let mut body = text;
            if !body.ends_with('\n') {
                body.push('\n');
            }
            std::fs::write(path, body)?;
            eprintln!("report written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}
