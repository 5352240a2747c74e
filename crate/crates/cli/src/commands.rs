//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use sdridge_core::asymptotics::{self, SpectralModel};
use sdridge_core::dataset::{standardize, Dataset};
use sdridge_core::io::{load_csv, TargetColumn};
use sdridge_core::linalg::log_grid;
use sdridge_core::ridge::RidgeSolver;
use sdridge_core::sim::{
    self, gen_covariance, signal_variance_profile, CovarianceSpec, SignalDraw, SimConfig,
};
use sdridge_core::smoother::{GeneralizedRidge, KernelBase, Smoother};
use sdridge_core::structural::{optimal_mix, risk_components_empirical};
use sdridge_core::tuning::one_shot_with_solver;
use sdridge_core::structural::risk_components_from_predictions;
use sdridge_core::variants::{self, MultiroundMode, RiskSource};

use crate::config::{resolve, FileConfig};
use crate::parsers::{
    parse_bandwidth, parse_cov, parse_entry_dist, parse_signal, parse_signal_draw, parse_target,
};
use crate::{DataArgs, GridArgs, OutArgs};

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn lambda_grid(file: &FileConfig, grid: &GridArgs) -> Result<Vec<f64>> {
    let min = resolve(grid.lambda_min, file.lambda_min, 1e-2);
    let max = resolve(grid.lambda_max, file.lambda_max, 1e2);
    let points = resolve(grid.lambda_points, file.lambda_points, 40);
    if !(min > 0.0 && max >= min && points >= 1) {
        bail!("invalid penalty grid: min {min}, max {max}, points {points}");
    }
    Ok(log_grid(min, max, points))
}

struct Prepared {
    train: Dataset,
    test: Dataset,
}

fn prepare_data(file: &FileConfig, args: &DataArgs) -> Result<Prepared> {
    let target_spec = resolve(
        args.target_col.clone(),
        file.target_col.clone(),
        "last".to_string(),
    );
    let target: TargetColumn = parse_target(&target_spec);
    let raw = load_csv(&args.input, &target, !args.no_header)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let ratio = resolve(args.split_ratio, file.split_ratio, 0.7);
    let mode = resolve(
        args.split_mode.clone(),
        file.split_mode.clone(),
        "random".to_string(),
    );
    let seed = resolve(args.seed, file.seed, 0);
    let (train_raw, test_raw) = match mode.as_str() {
        "random" => raw.split_random(ratio, seed)?,
        "sequential" => raw.split_sequential(ratio)?,
        other => bail!("split mode must be random or sequential, got {other:?}"),
    };
    let (train, test, _stats) = standardize(&train_raw, &test_raw)?;
    Ok(Prepared { train, test })
}

enum Sink {
    Csv(Box<dyn Write>),
    Json(Box<dyn Write>),
}

fn open_sink(file: &FileConfig, out: &OutArgs) -> Result<Sink> {
    let format = resolve(out.format.clone(), file.format.clone(), "csv".to_string());
    let writer: Box<dyn Write> = match &out.output {
        None => Box::new(std::io::stdout().lock()),
        Some(path) => Box::new(
            std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?,
        ),
    };
    match format.as_str() {
        "csv" => Ok(Sink::Csv(writer)),
        "json" => Ok(Sink::Json(writer)),
        other => bail!("format must be csv or json, got {other:?}"),
    }
}

fn emit_rows<T: Serialize>(sink: Sink, rows: &[T]) -> Result<()> {
    match sink {
        Sink::Csv(w) => {
            let mut wtr = csv::Writer::from_writer(w);
            for row in rows {
                wtr.serialize(row)?;
            }
            wtr.flush()?;
        }
        Sink::Json(mut w) => {
            serde_json::to_writer_pretty(&mut w, rows)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CoefRow {
    lambda: f64,
    coef_index: usize,
    value: f64,
}

pub fn fit(file: &FileConfig, data: DataArgs, grid: GridArgs, out: OutArgs) -> Result<()> {
    let prepared = prepare_data(file, &data)?;
    let grid = lambda_grid(file, &grid)?;
    let solver = RidgeSolver::new(&prepared.train)?;
    let mut rows = Vec::new();
    for &lambda in &grid {
        let fitted = solver.fit(lambda)?;
        for (i, &v) in fitted.beta.iter().enumerate() {
            rows.push(CoefRow {
                lambda,
                coef_index: i,
                value: v,
            });
        }
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

// ---------------------------------------------------------------------------
// sd-curve
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CurveRow {
    lambda: f64,
    r_teacher: f64,
    r_pd: f64,
    c_cross: f64,
    d_gap: f64,
    xi_star: f64,
    r_sd_star: f64,
    degenerate: bool,
}

pub fn sd_curve(
    file: &FileConfig,
    data: DataArgs,
    grid: GridArgs,
    out: OutArgs,
    omega: Option<PathBuf>,
) -> Result<()> {
    let prepared = prepare_data(file, &data)?;
    let grid = lambda_grid(file, &grid)?;
    let omega_path = omega.or_else(|| file.omega.clone().map(PathBuf::from));
    let omega = omega_path.map(|p| load_matrix_csv(&p)).transpose()?;
    let solver = RidgeSolver::new(&prepared.train)?;
    let mut rows = Vec::new();
    for &lambda in &grid {
        let rc = match &omega {
            None => {
                let teacher = solver.fit(lambda)?;
                let pd = solver.pd_refit(&teacher)?;
                risk_components_empirical(&teacher, &pd, &prepared.test)?
            }
            Some(om) => {
                let gen = GeneralizedRidge::new(&prepared.train, om, lambda)?;
                let test = &prepared.test;
                let f_t = DVector::from_fn(test.n(), |i, _| gen.predict(&test.row(i)));
                let f_p = DVector::from_fn(test.n(), |i, _| gen.predict_pd(&test.row(i)));
                risk_components_from_predictions(test.y(), &f_t, &f_p)?
            }
        };
        let mix = optimal_mix(&rc);
        rows.push(CurveRow {
            lambda,
            r_teacher: rc.r_teacher,
            r_pd: rc.r_pd,
            c_cross: rc.c_cross,
            d_gap: rc.d_gap,
            xi_star: mix.xi_star,
            r_sd_star: mix.r_sd_star,
            degenerate: mix.degenerate,
        });
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

/// Square numeric CSV (no header) as a dense matrix.
fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| anyhow::anyhow!("bad matrix cell: {e}"))?);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        bail!("penalty operator must be a nonempty square matrix");
    }
    let k = rows.len();
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TuneRow {
    lambda: f64,
    r_hat: f64,
    r_pd_hat: f64,
    c_hat: f64,
    d_hat: f64,
    xi_hat: f64,
    r_sd_hat: f64,
    df: f64,
    df_pd: f64,
    degenerate: bool,
}

pub fn tune(
    file: &FileConfig,
    data: DataArgs,
    grid: GridArgs,
    out: OutArgs,
    stabilizer: Option<f64>,
) -> Result<()> {
    let prepared = prepare_data(file, &data)?;
    let grid = lambda_grid(file, &grid)?;
    let stab = resolve(stabilizer, file.stabilizer, 0.0);
    let solver = RidgeSolver::new(&prepared.train)?;
    let mut rows = Vec::new();
    for &lambda in &grid {
        let est = one_shot_with_solver(&prepared.train, &solver, lambda, stab)?;
        rows.push(TuneRow {
            lambda,
            r_hat: est.r_hat,
            r_pd_hat: est.r_pd_hat,
            c_hat: est.c_hat,
            d_hat: est.d_hat,
            xi_hat: est.xi_hat,
            r_sd_hat: est.r_sd_hat,
            df: est.df,
            df_pd: est.df_pd,
            degenerate: est.degenerate,
        });
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

// ---------------------------------------------------------------------------
// asymptotics
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TheoryRowOut {
    lambda: f64,
    kappa: f64,
    r_teacher: f64,
    c_cross: f64,
    r_pd: f64,
    xi_star: f64,
    r_sd_star: f64,
    degenerate: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn asymptotics(
    file: &FileConfig,
    grid: GridArgs,
    out: OutArgs,
    isotropic: bool,
    gamma: Option<f64>,
    snr: Option<f64>,
    noise_var: Option<f64>,
    cov: Option<String>,
    signal: Option<String>,
    p: Option<usize>,
    r2: Option<f64>,
) -> Result<()> {
    let grid = lambda_grid(file, &grid)?;
    let gamma = resolve(gamma, file.gamma, 0.5);
    let noise_var = resolve(noise_var, file.noise_var, 1.0);
    let r2 = match (r2.or(file.r2), snr.or(file.snr)) {
        (Some(r2), _) => r2,
        (None, Some(snr)) => snr * noise_var,
        (None, None) => 1.0,
    };
    let model = if isotropic {
        SpectralModel::isotropic(r2, noise_var, gamma)?
    } else {
        let p = resolve(p, file.p, 200);
        let cov_kind = parse_cov(&resolve(cov, file.cov.clone(), "isotropic".to_string()))?;
        let signal_spec = parse_signal(
            &resolve(signal, file.signal.clone(), "isotropic".to_string()),
            r2,
            SignalDraw::Deterministic,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (eigs, _) = gen_covariance(&CovarianceSpec { kind: cov_kind, p }, &mut rng)?;
        let profile = signal_variance_profile(&signal_spec, p)?;
        let proj = DVector::from_fn(p, |i, _| profile[i].sqrt());
        SpectralModel::new(eigs, proj, noise_var, gamma)?
    };
    let mut rows = Vec::new();
    for &lambda in &grid {
        let kappa = asymptotics::solve_kappa(&model, lambda)?;
        let state = asymptotics::functionals(&model, kappa, lambda)?;
        let th = asymptotics::theoretical_risks(&state, &model);
        rows.push(TheoryRowOut {
            lambda,
            kappa,
            r_teacher: th.r_teacher,
            c_cross: th.c_cross,
            r_pd: th.r_pd,
            xi_star: th.xi_star,
            r_sd_star: th.r_sd_star,
            degenerate: th.degenerate,
        });
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    file: &FileConfig,
    grid: GridArgs,
    out: OutArgs,
    n: Option<usize>,
    p: Option<usize>,
    cov: Option<String>,
    signal: Option<String>,
    signal_draw: Option<String>,
    r2: Option<f64>,
    snr: Option<f64>,
    noise_var: Option<f64>,
    reps: Option<usize>,
    seed: Option<u64>,
    entry_dist: Option<String>,
) -> Result<()> {
    let lambda_grid = lambda_grid(file, &grid)?;
    let noise_var = resolve(noise_var, file.noise_var, 1.0);
    let r2 = match (r2.or(file.r2), snr.or(file.snr)) {
        (Some(r2), _) => r2,
        (None, Some(snr)) => snr * noise_var,
        (None, None) => 1.0,
    };
    let draw = parse_signal_draw(&resolve(
        signal_draw,
        file.signal_draw.clone(),
        "gaussian".to_string(),
    ))?;
    let config = SimConfig {
        n: resolve(n, file.n, 400),
        p: resolve(p, file.p, 200),
        cov: parse_cov(&resolve(cov, file.cov.clone(), "isotropic".to_string()))?,
        signal: parse_signal(
            &resolve(signal, file.signal.clone(), "isotropic".to_string()),
            r2,
            draw,
        )?,
        noise_var,
        lambda_grid,
        reps: resolve(reps, file.reps, 30),
        seed: resolve(seed, file.seed, 0),
        entry_dist: parse_entry_dist(&resolve(
            entry_dist,
            file.entry_dist.clone(),
            "gaussian".to_string(),
        ))?,
    };
    let result = sim::run_simulation(&config)?;
    match open_sink(file, &out)? {
        Sink::Csv(w) => result.write_long_csv(w)?,
        Sink::Json(mut w) => {
            let json = result.summary_json()?;
            w.write_all(json.as_bytes())?;
            writeln!(w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// multiround
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RoundRow {
    lambda: f64,
    round: usize,
    /// Mixing weight chosen to produce this round (empty for round 0).
    xi: Option<f64>,
    risk: f64,
    degenerate: bool,
}

pub fn multiround(
    file: &FileConfig,
    data: DataArgs,
    grid: GridArgs,
    out: OutArgs,
    rounds: Option<usize>,
    mode: Option<String>,
    risk_source: Option<String>,
) -> Result<()> {
    let prepared = prepare_data(file, &data)?;
    let grid = lambda_grid(file, &grid)?;
    let rounds = resolve(rounds, file.rounds, 2);
    let mode = match resolve(mode, file.mode.clone(), "recursive".to_string()).as_str() {
        "recursive" => MultiroundMode::Recursive,
        "anchored" => MultiroundMode::Anchored,
        other => bail!("mode must be recursive or anchored, got {other:?}"),
    };
    let source_name = resolve(risk_source, file.risk_source.clone(), "test".to_string());
    let source = match source_name.as_str() {
        "test" => RiskSource::TestSet(&prepared.test),
        "gcv" => RiskSource::Gcv,
        other => bail!("risk source must be test or gcv, got {other:?}"),
    };
    let mut rows = Vec::new();
    for &lambda in &grid {
        let states = variants::multiround(&prepared.train, lambda, rounds, mode, &source)?;
        let last = states.last().expect("at least one state");
        for (k, &risk) in last.risk_history.iter().enumerate() {
            rows.push(RoundRow {
                lambda,
                round: k,
                xi: if k == 0 {
                    None
                } else {
                    Some(last.xi_history[k - 1])
                },
                risk,
                degenerate: states[k].degenerate,
            });
        }
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct KernelRow {
    lambda: f64,
    bandwidth: f64,
    r_teacher: f64,
    r_pd: f64,
    xi_star: f64,
    r_sd_star: f64,
    degenerate: bool,
}

pub fn kernel(
    file: &FileConfig,
    data: DataArgs,
    grid: GridArgs,
    out: OutArgs,
    kernel_bandwidth: Option<String>,
) -> Result<()> {
    let prepared = prepare_data(file, &data)?;
    let grid = lambda_grid(file, &grid)?;
    let bw = parse_bandwidth(&resolve(
        kernel_bandwidth,
        file.kernel_bandwidth.clone(),
        "median".to_string(),
    ))?;
    let base = KernelBase::new(&prepared.train, bw)?;
    let mut rows = Vec::new();
    for &lambda in &grid {
        let sd = variants::smoother_sd(|l| base.at_lambda(l), lambda, &prepared.test)?;
        rows.push(KernelRow {
            lambda,
            bandwidth: base.bandwidth(),
            r_teacher: sd.r_teacher,
            r_pd: sd.r_pd,
            xi_star: sd.xi_star,
            r_sd_star: sd.r_sd_star,
            degenerate: sd.degenerate,
        });
    }
    emit_rows(open_sink(file, &out)?, &rows)
}

// ---------------------------------------------------------------------------
// compare-fresh
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FreshRow {
    lambda: f64,
    same_mean: f64,
    fraff_mean: f64,
    gap_mean: f64,
    gap_se: f64,
    same_theory: f64,
    fraff_theory: f64,
    mixed_scan_mean: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn compare_fresh(
    file: &FileConfig,
    grid: GridArgs,
    out: OutArgs,
    n: Option<usize>,
    m: Option<usize>,
    p: Option<usize>,
    snr: Option<f64>,
    noise_var: Option<f64>,
    reps: Option<usize>,
    seed: Option<u64>,
    scan_mixed: bool,
    xi_min: f64,
    xi_max: f64,
    xi_points: usize,
) -> Result<()> {
    let grid = lambda_grid(file, &grid)?;
    let n = resolve(n, file.n, 400);
    let m = resolve(m, file.m, 400);
    let p = resolve(p, file.p, 200);
    let noise_var = resolve(noise_var, file.noise_var, 1.0);
    let snr = resolve(snr, file.snr, 1.0);
    let reps = resolve(reps, file.reps, 30);
    let seed = resolve(seed, file.seed, 0);
    let r2 = snr * noise_var;
    let gamma = p as f64 / n as f64;

    let xi_grid: Vec<f64> = if xi_points <= 1 {
        vec![xi_min]
    } else {
        (0..xi_points)
            .map(|i| xi_min + (xi_max - xi_min) * i as f64 / (xi_points - 1) as f64)
            .collect()
    };

    // per-rep, per-lambda risks
    let mut same = vec![vec![0.0; grid.len()]; reps];
    let mut fraff = vec![vec![0.0; grid.len()]; reps];
    let mut mixed = vec![vec![f64::NAN; grid.len()]; reps];
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
            * (r2 / p as f64).sqrt();
        let y = &x * &beta
            + DVector::from_fn(n, |_, _| noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let fresh_x = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y)?;
        let solver = RidgeSolver::new(&data)?;
        let fresh_cov = fresh_x.tr_mul(&fresh_x) / m as f64;
        let fresh_eig = fresh_cov.symmetric_eigen();

        // optional held-out set for the mixed-loss scan
        let scan_test = if scan_mixed {
            let tx = DMatrix::from_fn(1000, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let ty = &tx * &beta
                + DVector::from_fn(1000, |_, _| {
                    noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                });
            Some(Dataset::new(tx, ty)?)
        } else {
            None
        };

        for (j, &lambda) in grid.iter().enumerate() {
            let teacher = solver.fit(lambda)?;
            let pd = solver.pd_refit(&teacher)?;
            let oracle = |a: &DVector<f64>, b: &DVector<f64>| {
                let da = a - &beta;
                let db = b - &beta;
                let r = da.norm_squared() + noise_var;
                let c = da.dot(&db) + noise_var;
                let d = (&da - &db).norm_squared();
                (r, c, d)
            };
            let mix_risk = |a: &DVector<f64>, b: &DVector<f64>| {
                let (r, c, d) = oracle(a, b);
                if d > 1e-12 * r.max(1.0) {
                    r - (r - c) * (r - c) / d
                } else {
                    r
                }
            };
            same[rep][j] = mix_risk(&teacher.beta, &pd.beta);
            // fresh PD refit through the fresh-design eigenbasis
            let rotated = fresh_eig.eigenvectors.tr_mul(&teacher.beta);
            let coords = DVector::from_fn(p, |i, _| {
                let s = fresh_eig.eigenvalues[i].max(0.0);
                rotated[i] * s / (s + lambda)
            });
            let pd_fresh = &fresh_eig.eigenvectors * coords;
            fraff[rep][j] = mix_risk(&teacher.beta, &pd_fresh);
            if let Some(test) = &scan_test {
                let scan =
                    variants::freshx_scan_mixed(&data, &fresh_x, lambda, &xi_grid, test)?;
                mixed[rep][j] = (scan.best.beta - &beta).norm_squared() + noise_var;
            }
        }
    }

    let model = SpectralModel::isotropic(r2, noise_var, gamma)?;
    let mut rows = Vec::new();
    for (j, &lambda) in grid.iter().enumerate() {
        let same_vals: Vec<f64> = (0..reps).map(|r| same[r][j]).collect();
        let fraff_vals: Vec<f64> = (0..reps).map(|r| fraff[r][j]).collect();
        let gaps: Vec<f64> = (0..reps).map(|r| fraff[r][j] - same[r][j]).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let gm = mean(&gaps);
        let gvar = if reps > 1 {
            gaps.iter().map(|g| (g - gm) * (g - gm)).sum::<f64>() / (reps as f64 - 1.0)
        } else {
            0.0
        };
        let th_same = asymptotics::risks_at(&model, lambda)?;
        let th_fresh = asymptotics::freshx_isotropic_limits(snr, gamma, noise_var, lambda)?;
        rows.push(FreshRow {
            lambda,
            same_mean: mean(&same_vals),
            fraff_mean: mean(&fraff_vals),
            gap_mean: gm,
            gap_se: (gvar / reps as f64).sqrt(),
            same_theory: th_same.r_sd_star,
            fraff_theory: th_fresh.r_sd_fr_star,
            mixed_scan_mean: if scan_mixed {
                Some(mean(&(0..reps).map(|r| mixed[r][j]).collect::<Vec<_>>()))
            } else {
                None
            },
        });
    }
    emit_rows(open_sink(file, &out)?, &rows)
}
