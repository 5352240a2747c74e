//! `sdridge`: self-distilled ridge regression from the command line.
//!
//! Subcommands cover fitting and mixing on CSV data (`fit`, `sd-curve`,
//! `tune`, `multiround`, `kernel`), theoretical risk curves
//! (`asymptotics`), and synthetic experiments (`simulate`,
//! `compare-fresh`). See the README for output schemas.

mod commands;
mod config;
mod parsers;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "sdridge", version, about)]
struct Cli {
    /// Optional TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct GridArgs {
    /// Smallest penalty on the log-spaced grid.
    #[arg(long)]
    lambda_min: Option<f64>,
    /// Largest penalty on the log-spaced grid.
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    lambda_points: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV file.
    input: PathBuf,
    /// Response column: `last`, a zero-based index, or a header name.
    #[arg(long)]
    target_col: Option<String>,
    /// Treat the first row as data, not a header.
    #[arg(long)]
    no_header: bool,
    /// Train fraction of the split.
    #[arg(long)]
    split_ratio: Option<f64>,
    /// `random` (seeded shuffle) or `sequential` (time-ordered).
    #[arg(long)]
    split_mode: Option<String>,
    /// Seed for the random split.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct OutArgs {
    /// Output file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// `csv` or `json`.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit ridge coefficients on the train split across a penalty grid.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Teacher/PD/optimal-SD risk curve on the test split.
    SdCurve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        /// CSV file (no header) with a p x p penalty operator; switches the
        /// family to generalized ridge.
        #[arg(long)]
        omega: Option<PathBuf>,
    },
    /// One-shot estimates from the train split alone.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Optional ridge added to the estimated denominator.
        #[arg(long)]
        stabilizer: Option<f64>,
    },
    /// Deterministic risk limits for a population model.
    Asymptotics {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Isotropic design and signal (single-atom model).
        #[arg(long)]
        isotropic: bool,
        /// Aspect ratio p/n.
        #[arg(long)]
        gamma: Option<f64>,
        /// Signal-to-noise ratio r²/σ².
        #[arg(long)]
        snr: Option<f64>,
        /// Noise variance σ².
        #[arg(long)]
        noise_var: Option<f64>,
        /// Covariance spec (non-isotropic models): isotropic | ar1:RHO | spiked:S:SEED.
        #[arg(long)]
        cov: Option<String>,
        /// Signal spec: isotropic | top:PCT:FACTOR | bottom:PCT:FACTOR.
        #[arg(long)]
        signal: Option<String>,
        /// Model dimension for non-isotropic spectra.
        #[arg(long)]
        p: Option<usize>,
        /// Signal energy r² (alternative to --snr).
        #[arg(long)]
        r2: Option<f64>,
    },
    /// Seeded Monte-Carlo comparison of finite-sample quantities vs limits.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        cov: Option<String>,
        #[arg(long)]
        signal: Option<String>,
        /// gaussian | deterministic.
        #[arg(long)]
        signal_draw: Option<String>,
        #[arg(long)]
        r2: Option<f64>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        noise_var: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// gaussian | rademacher.
        #[arg(long)]
        entry_dist: Option<String>,
    },
    /// Multi-round self-distillation risks on the test split.
    Multiround {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Number of distillation rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// recursive | anchored.
        #[arg(long)]
        mode: Option<String>,
        /// test | gcv.
        #[arg(long)]
        risk_source: Option<String>,
    },
    /// Gaussian-kernel ridge SD risk curve on the test split.
    Kernel {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        /// `median` or a fixed value.
        #[arg(long)]
        kernel_bandwidth: Option<String>,
    },
    /// Same-design versus fresh-design SD on synthetic isotropic data.
    CompareFresh {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        n: Option<usize>,
        /// Fresh-design sample size.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        noise_var: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also grid-scan the (non-affine) mixed-loss student.
        #[arg(long)]
        scan_mixed: bool,
        #[arg(long, default_value_t = -100.0)]
        xi_min: f64,
        #[arg(long, default_value_t = 100.0)]
        xi_max: f64,
        #[arg(long, default_value_t = 601)]
        xi_points: usize,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("SDRIDGE_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

fn main() -> anyhow::Result<()> {
    init_threads();
    let cli = Cli::parse();
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fit { data, grid, out } => commands::fit(&file, data, grid, out),
        Command::SdCurve {
            data,
            grid,
            out,
            omega,
        } => commands::sd_curve(&file, data, grid, out, omega),
        Command::Tune {
            data,
            grid,
            out,
            stabilizer,
        } => commands::tune(&file, data, grid, out, stabilizer),
        Command::Asymptotics {
            grid,
            out,
            isotropic,
            gamma,
            snr,
            noise_var,
            cov,
            signal,
            p,
            r2,
        } => commands::asymptotics(
            &file, grid, out, isotropic, gamma, snr, noise_var, cov, signal, p, r2,
        ),
        Command::Simulate {
            grid,
            out,
            n,
            p,
            cov,
            signal,
            signal_draw,
            r2,
            snr,
            noise_var,
            reps,
            seed,
            entry_dist,
        } => commands::simulate(
            &file, grid, out, n, p, cov, signal, signal_draw, r2, snr, noise_var, reps, seed,
            entry_dist,
        ),
        Command::Multiround {
            data,
            grid,
            out,
            rounds,
            mode,
            risk_source,
        } => commands::multiround(&file, data, grid, out, rounds, mode, risk_source),
        Command::Kernel {
            data,
            grid,
            out,
            kernel_bandwidth,
        } => commands::kernel(&file, data, grid, out, kernel_bandwidth),
        Command::CompareFresh {
            grid,
            out,
            n,
            m,
            p,
            snr,
            noise_var,
            reps,
            seed,
            scan_mixed,
            xi_min,
            xi_max,
            xi_points,
        } => commands::compare_fresh(
            &file, grid, out, n, m, p, snr, noise_var, reps, seed, scan_mixed, xi_min, xi_max,
            xi_points,
        ),
    }
}
