//! Synthetic data generation and a seeded Monte-Carlo runner comparing
//! finite-sample self-distillation quantities against their deterministic
//! limits.
//!
//! Replicates draw from independent, splittable generator streams, so runs
//! are bit-reproducible regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, SpectralModel, TheoreticalRisks};
use crate::error::{Error, Result};
use crate::linalg::{clamp_eigenvalues, sym_eigen_desc};
use crate::structural::{optimal_mix, RiskComponents};
use crate::tuning::GcvEstimates;

/// Population covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Isotropic,
    /// Autoregressive profile `Σ_ij = rho^|i-j|`.
    Ar1 { rho: f64 },
    /// `Σ = I + strength·vvᵀ` with a fixed random unit spike direction.
    Spiked { strength: f64, spike_vector_seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub p: usize,
}

impl CovarianceSpec {
    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Parameter("covariance dimension must be positive".into()));
        }
        match self.kind {
            CovarianceKind::Ar1 { rho } if rho.abs() >= 1.0 => Err(Error::Parameter(
                format!("AR1 parameter must satisfy |rho| < 1, got {rho}"),
            )),
            CovarianceKind::Spiked { strength, .. } if strength < 0.0 => Err(Error::Parameter(
                format!("spike strength must be nonnegative, got {strength}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Signal-variance allocation across covariance eigendirections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SignalKind {
    Isotropic,
    /// Fraction `factor` of the signal energy on the top `ratio_pct`% of
    /// eigendirections, the rest spread over the complement.
    TopAligned { ratio_pct: f64, factor: f64 },
    BottomAligned { ratio_pct: f64, factor: f64 },
}

/// Whether the signal is drawn from the Gaussian prior or set to the
/// deterministic representative with the same energy profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalDraw {
    Gaussian,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub r2: f64,
    pub draw: SignalDraw,
}

impl SignalSpec {
    fn validate(&self, p: usize) -> Result<()> {
        if !(self.r2 > 0.0) {
            return Err(Error::Parameter(format!("signal energy must be positive, got {}", self.r2)));
        }
        match self.kind {
            SignalKind::TopAligned { ratio_pct, factor }
            | SignalKind::BottomAligned { ratio_pct, factor } => {
                if !(ratio_pct > 0.0 && ratio_pct <= 100.0) {
                    return Err(Error::Parameter(format!(
                        "alignment ratio must lie in (0, 100], got {ratio_pct}"
                    )));
                }
                if !(0.0..=1.0).contains(&factor) {
                    return Err(Error::Parameter(format!(
                        "alignment factor must lie in [0, 1], got {factor}"
                    )));
                }
                let k = aligned_block(ratio_pct, p);
                if k == 0 {
                    return Err(Error::Parameter(format!(
                        "alignment ratio {ratio_pct}% selects zero of {p} directions"
                    )));
                }
                if k == p && (factor - 1.0).abs() > 1e-12 {
                    return Err(Error::Parameter(
                        "alignment ratio 100% requires factor 1 (no complement to carry the rest)"
                            .into(),
                    ));
                }
                Ok(())
            }
            SignalKind::Isotropic => Ok(()),
        }
    }
}

fn aligned_block(ratio_pct: f64, p: usize) -> usize {
    ((ratio_pct / 100.0) * p as f64).round() as usize
}

/// Per-coordinate signal variances in the covariance eigenbasis (descending
/// eigenvalue order), summing to `r2`.
pub fn signal_variance_profile(spec: &SignalSpec, p: usize) -> Result<DVector<f64>> {
    spec.validate(p)?;
    let out = match spec.kind {
        SignalKind::Isotropic => DVector::from_element(p, spec.r2 / p as f64),
        SignalKind::TopAligned { ratio_pct, factor } => {
            let k = aligned_block(ratio_pct, p);
            DVector::from_fn(p, |i, _| {
                if i < k {
                    spec.r2 * factor / k as f64
                } else {
                    spec.r2 * (1.0 - factor) / (p - k) as f64
                }
            })
        }
        SignalKind::BottomAligned { ratio_pct, factor } => {
            let k = aligned_block(ratio_pct, p);
            DVector::from_fn(p, |i, _| {
                if i >= p - k {
                    spec.r2 * factor / k as f64
                } else {
                    spec.r2 * (1.0 - factor) / (p - k) as f64
                }
            })
        }
    };
    Ok(out)
}

/// Eigendecomposition (descending) of the population covariance.
pub fn gen_covariance(
    spec: &CovarianceSpec,
    _rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let p = spec.p;
    match spec.kind {
        CovarianceKind::Isotropic => Ok((DVector::from_element(p, 1.0), DMatrix::identity(p, p))),
        CovarianceKind::Ar1 { rho } => {
            let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
            let (mut vals, vecs) = sym_eigen_desc(sigma);
            clamp_eigenvalues(&mut vals, 0.0);
            Ok((vals, vecs))
        }
        CovarianceKind::Spiked {
            strength,
            spike_vector_seed,
        } => {
            // the spike direction is part of the population: draw it from its
            // own seed so replicates share one covariance
            let mut spike_rng = ChaCha8Rng::seed_from_u64(spike_vector_seed);
            let mut v = DVector::from_fn(p, |_, _| {
                spike_rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            v /= v.norm();
            let sigma = DMatrix::identity(p, p) + &v * v.transpose() * strength;
            let (mut vals, vecs) = sym_eigen_desc(sigma);
            clamp_eigenvalues(&mut vals, 0.0);
            Ok((vals, vecs))
        }
    }
}

/// Draw (or deterministically place) a signal with `E‖β‖² = r²` and the
/// requested alignment profile relative to covariance eigenvectors.
pub fn gen_signal(
    spec: &SignalSpec,
    cov_eigvecs: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let p = cov_eigvecs.ncols();
    let profile = signal_variance_profile(spec, p)?;
    let coords = match spec.draw {
        SignalDraw::Gaussian => DVector::from_fn(p, |i, _| {
            profile[i].sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
        }),
        SignalDraw::Deterministic => DVector::from_fn(p, |i, _| profile[i].sqrt()),
    };
    Ok(cov_eigvecs * coords)
}

/// Entry distribution of the standardized design factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryDist {
    Gaussian,
    Rademacher,
}

/// Full description of one Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub cov: CovarianceKind,
    pub signal: SignalSpec,
    pub noise_var: f64,
    pub lambda_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub entry_dist: EntryDist,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Parameter("need n >= 1 and p >= 1".into()));
        }
        if self.reps == 0 {
            return Err(Error::Parameter("need at least one replicate".into()));
        }
        if self.noise_var < 0.0 {
            return Err(Error::Parameter(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_var
            )));
        }
        if self.lambda_grid.is_empty()
            || self.lambda_grid[0] <= 0.0
            || self.lambda_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Parameter(
                "penalty grid must be positive and strictly ascending".into(),
            ));
        }
        CovarianceSpec {
            kind: self.cov,
            p: self.p,
        }
        .validate()?;
        self.signal.validate(self.p)
    }
}

/// Metrics computed for one replicate at one penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub r_teacher: f64,
    pub r_pd: f64,
    pub c_cross: f64,
    pub d_gap: f64,
    pub xi_star: f64,
    pub r_sd_star: f64,
    pub r_hat: f64,
    pub xi_hat: f64,
    pub r_sd_hat: f64,
}

/// One replicate: per-penalty metrics, or the error that aborted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub cells: Vec<CellMetrics>,
    pub error: Option<String>,
}

/// Per-penalty aggregate of one metric: mean, per-replicate standard
/// deviation, and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_rep: f64,
    pub sem: f64,
}

/// Theory row per penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub kappa: f64,
    pub r_teacher: f64,
    pub c_cross: f64,
    pub r_pd: f64,
    pub xi_star: f64,
    pub r_sd_star: f64,
}

/// Full simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub lambdas: Vec<f64>,
    pub theory: Vec<TheoryRow>,
    pub reps: Vec<RepOutcome>,
}

pub const METRIC_NAMES: [&str; 9] = [
    "r_teacher",
    "r_pd",
    "c_cross",
    "d_gap",
    "xi_star",
    "r_sd_star",
    "r_hat",
    "xi_hat",
    "r_sd_hat",
];

impl CellMetrics {
    fn get(&self, metric: &str) -> f64 {
        match metric {
            "r_teacher" => self.r_teacher,
            "r_pd" => self.r_pd,
            "c_cross" => self.c_cross,
            "d_gap" => self.d_gap,
            "xi_star" => self.xi_star,
            "r_sd_star" => self.r_sd_star,
            "r_hat" => self.r_hat,
            "xi_hat" => self.xi_hat,
            "r_sd_hat" => self.r_sd_hat,
            _ => f64::NAN,
        }
    }
}

impl SimResult {
    /// Aggregate one metric across successful replicates, per penalty.
    pub fn aggregate(&self, metric: &str) -> Vec<Aggregate> {
        let mut out = Vec::with_capacity(self.lambdas.len());
        for j in 0..self.lambdas.len() {
            let vals: Vec<f64> = self
                .reps
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.cells[j].get(metric))
                .collect();
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            out.push(Aggregate {
                mean,
                std_rep: var.sqrt(),
                sem: (var / k).sqrt(),
            });
        }
        out
    }

    /// Long-format CSV: `rep,lambda,metric,value` with `rep` holding the
    /// replicate index or one of `theory`, `mean`, `std_rep`, `sem`.
    pub fn write_long_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "lambda", "metric", "value"])?;
        for rep in &self.reps {
            if rep.error.is_some() {
                continue;
            }
            for (j, &lambda) in self.lambdas.iter().enumerate() {
                for m in METRIC_NAMES {
                    w.write_record([
                        rep.rep.to_string(),
                        format!("{lambda:.12e}"),
                        m.to_string(),
                        format!("{:.12e}", rep.cells[j].get(m)),
                    ])?;
                }
            }
        }
        for (j, &lambda) in self.lambdas.iter().enumerate() {
            let t = &self.theory[j];
            for (m, v) in [
                ("kappa", t.kappa),
                ("r_teacher", t.r_teacher),
                ("c_cross", t.c_cross),
                ("r_pd", t.r_pd),
                ("xi_star", t.xi_star),
                ("r_sd_star", t.r_sd_star),
            ] {
                w.write_record([
                    "theory".to_string(),
                    format!("{lambda:.12e}"),
                    m.to_string(),
                    format!("{v:.12e}"),
                ])?;
            }
        }
        for m in METRIC_NAMES {
            let aggs = self.aggregate(m);
            for (j, &lambda) in self.lambdas.iter().enumerate() {
                for (tag, v) in [
                    ("mean", aggs[j].mean),
                    ("std_rep", aggs[j].std_rep),
                    ("sem", aggs[j].sem),
                ] {
                    w.write_record([
                        tag.to_string(),
                        format!("{lambda:.12e}"),
                        m.to_string(),
                        format!("{v:.12e}"),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Compact JSON summary: config, theory curves, and aggregates.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a SimConfig,
            lambdas: &'a [f64],
            theory: &'a [TheoryRow],
            aggregates: std::collections::BTreeMap<&'static str, Vec<Aggregate>>,
            failed_reps: Vec<(usize, String)>,
        }
        let mut aggregates = std::collections::BTreeMap::new();
        for m in METRIC_NAMES {
            aggregates.insert(m, self.aggregate(m));
        }
        let failed = self
            .reps
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| (r.rep, e.clone())))
            .collect();
        serde_json::to_string_pretty(&Summary {
            config: &self.config,
            lambdas: &self.lambdas,
            theory: &self.theory,
            aggregates,
            failed_reps: failed,
        })
        .map_err(|e| Error::Data(format!("summary serialization failed: {e}")))
    }
}

/// Deterministic equivalents for the configured population, using the
/// expected signal-energy profile as the representative alignment.
pub fn theory_for(config: &SimConfig) -> Result<(SpectralModel, Vec<TheoreticalRisks>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (eigs, _) = gen_covariance(
        &CovarianceSpec {
            kind: config.cov,
            p: config.p,
        },
        &mut rng,
    )?;
    let profile = signal_variance_profile(&config.signal, config.p)?;
    let proj = DVector::from_fn(config.p, |i, _| profile[i].sqrt());
    let gamma = config.p as f64 / config.n as f64;
    let model = SpectralModel::new(eigs, proj, config.noise_var, gamma)?;
    let theory = config
        .lambda_grid
        .iter()
        .map(|&l| asymptotics::risks_at(&model, l))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, theory))
}

/// Run the experiment. Deterministic for a fixed config (replicates use
/// separate generator streams and merge by index).
pub fn run_simulation(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cov_spec = CovarianceSpec {
        kind: config.cov,
        p: config.p,
    };
    let (cov_eigs, cov_vecs) = gen_covariance(&cov_spec, &mut rng)?;
    let (model, theory_risks) = theory_for(config)?;
    let theory: Vec<TheoryRow> = config
        .lambda_grid
        .iter()
        .zip(theory_risks.iter())
        .map(|(&l, t)| {
            let kappa = asymptotics::solve_kappa(&model, l)?;
            Ok(TheoryRow {
                kappa,
                r_teacher: t.r_teacher,
                c_cross: t.c_cross,
                r_pd: t.r_pd,
                xi_star: t.xi_star,
                r_sd_star: t.r_sd_star,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reps: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_rep(config, rep, &cov_eigs, &cov_vecs))
        .collect();
    Ok(SimResult {
        config: config.clone(),
        lambdas: config.lambda_grid.clone(),
        theory,
        reps,
    })
}

fn run_rep(
    config: &SimConfig,
    rep: usize,
    cov_eigs: &DVector<f64>,
    cov_vecs: &DMatrix<f64>,
) -> RepOutcome {
    match run_rep_inner(config, rep, cov_eigs, cov_vecs) {
        Ok(cells) => RepOutcome {
            rep,
            cells,
            error: None,
        },
        Err(e) => RepOutcome {
            rep,
            cells: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

fn run_rep_inner(
    config: &SimConfig,
    rep: usize,
    cov_eigs: &DVector<f64>,
    cov_vecs: &DMatrix<f64>,
) -> Result<Vec<CellMetrics>> {
    let (n, p) = (config.n, config.p);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep as u64 + 1);

    // X = Z Σ^{1/2} with unit-variance entries
    let z = match config.entry_dist {
        EntryDist::Gaussian => {
            DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
        }
        EntryDist::Rademacher => {
            DMatrix::from_fn(n, p, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        }
    };
    let sqrt_eigs = DVector::from_fn(p, |i, _| cov_eigs[i].max(0.0).sqrt());
    // Z V sqrt(S) Vᵀ
    let mut zv = &z * cov_vecs;
    for j in 0..p {
        let s = sqrt_eigs[j];
        zv.column_mut(j).scale_mut(s);
    }
    let x = &zv * cov_vecs.transpose();

    let beta = gen_signal(&config.signal, cov_vecs, &mut rng)?;
    let noise = DVector::from_fn(n, |_, _| {
        config.noise_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let y = &x * &beta + noise;
    let data = crate::dataset::Dataset::new(x, y)?;
    let solver = crate::ridge::RidgeSolver::new(&data)?;

    let mut cells = Vec::with_capacity(config.lambda_grid.len());
    for &lambda in &config.lambda_grid {
        let teacher = solver.fit(lambda)?;
        let pd = solver.pd_refit(&teacher)?;
        // oracle components in the population eigenbasis (Σ-norm, exact)
        let du = cov_vecs.tr_mul(&(&teacher.beta - &beta));
        let dp = cov_vecs.tr_mul(&(&pd.beta - &beta));
        let quad = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
            a.iter()
                .zip(b.iter())
                .zip(cov_eigs.iter())
                .map(|((&ai, &bi), &s)| ai * bi * s)
                .sum()
        };
        let r = quad(&du, &du) + config.noise_var;
        let r_pd = quad(&dp, &dp) + config.noise_var;
        let c = quad(&du, &dp) + config.noise_var;
        let gap = &du - &dp;
        let d = quad(&gap, &gap);
        let rc = RiskComponents::new(r, r_pd, c, d)?;
        let mix = optimal_mix(&rc);
        let est: GcvEstimates =
            crate::tuning::one_shot_with_solver(&data, &solver, lambda, 0.0)?;
        cells.push(CellMetrics {
            r_teacher: r,
            r_pd,
            c_cross: c,
            d_gap: d,
            xi_star: mix.xi_star,
            r_sd_star: mix.r_sd_star,
            r_hat: est.r_hat,
            xi_hat: est.xi_hat,
            r_sd_hat: est.r_sd_hat,
        });
    }
    Ok(cells)
}
