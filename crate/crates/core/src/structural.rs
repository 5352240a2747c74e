//! Conditional risk identities for the teacher / pure-distilled pair:
//! risk components, closed-form optimal mixing weight, the slope-based sign
//! rule, and the curvature test at the risk-optimal penalty.
//!
//! All quantities condition on the training data. Risks may come from a
//! held-out sample average or from an exact population model.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ridge::RidgeFit;

/// The triple `(R, R_pd, C)` plus the squared prediction gap
/// `D = E[(f - f_pd)^2]` that drives every closed-form SD quantity.
///
/// `d_gap` is always computed directly from prediction gaps (never by the
/// `R + R_pd - 2C` subtraction) so that near-degenerate pairs do not suffer
/// catastrophic cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskComponents {
    pub r_teacher: f64,
    pub r_pd: f64,
    pub c_cross: f64,
    pub d_gap: f64,
}

impl RiskComponents {
    /// Validate invariants and clamp round-off-negative `d_gap` to zero.
    pub fn new(r_teacher: f64, r_pd: f64, c_cross: f64, d_gap: f64) -> Result<Self> {
        if !(r_teacher >= 0.0 && r_pd >= 0.0) {
            return Err(Error::Data(format!(
                "risks must be nonnegative, got R={r_teacher}, R_pd={r_pd}"
            )));
        }
        if d_gap < -1e-12 {
            return Err(Error::Data(format!("squared gap must be nonnegative, got {d_gap}")));
        }
        if c_cross * c_cross > r_teacher * r_pd + 1e-10 {
            return Err(Error::Data(format!(
                "cross term violates Cauchy-Schwarz: C^2={} > R*R_pd={}",
                c_cross * c_cross,
                r_teacher * r_pd
            )));
        }
        Ok(Self {
            r_teacher,
            r_pd,
            c_cross,
            d_gap: d_gap.max(0.0),
        })
    }

    fn epsilon_deg(&self) -> f64 {
        1e-12 * self.r_teacher.max(self.r_pd).max(1.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.d_gap <= self.epsilon_deg()
    }
}

/// Outcome of the closed-form optimal mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixResult {
    pub xi_star: f64,
    pub r_sd_star: f64,
    /// True when `D ≈ 0`: the SD path is flat and the teacher is returned.
    pub degenerate: bool,
}

/// Risk components from a held-out sample: `R`, `R_pd`, `C` are test-set
/// averages of squared/cross residuals, `D` the average squared prediction
/// gap.
pub fn risk_components_empirical(
    teacher: &RidgeFit,
    pd: &RidgeFit,
    test: &Dataset,
) -> Result<RiskComponents> {
    if teacher.beta.len() != test.p() || pd.beta.len() != test.p() {
        return Err(Error::Dimension(format!(
            "fits have p={}/{} but test set has p={}",
            teacher.beta.len(),
            pd.beta.len(),
            test.p()
        )));
    }
    let f_teacher = test.x() * &teacher.beta;
    let f_pd = test.x() * &pd.beta;
    risk_components_from_predictions(test.y(), &f_teacher, &f_pd)
}

/// Same as [`risk_components_empirical`] but from precomputed predictions,
/// usable with any smoother family.
pub fn risk_components_from_predictions(
    y: &DVector<f64>,
    f_teacher: &DVector<f64>,
    f_pd: &DVector<f64>,
) -> Result<RiskComponents> {
    let m = y.len();
    if m == 0 {
        return Err(Error::Data("empty test set".into()));
    }
    if f_teacher.len() != m || f_pd.len() != m {
        return Err(Error::Dimension("prediction/label length mismatch".into()));
    }
    let mut r = 0.0;
    let mut r_pd = 0.0;
    let mut c = 0.0;
    let mut d = 0.0;
    for i in 0..m {
        let e_t = y[i] - f_teacher[i];
        let e_p = y[i] - f_pd[i];
        r += e_t * e_t;
        r_pd += e_p * e_p;
        c += e_t * e_p;
        let gap = f_teacher[i] - f_pd[i];
        d += gap * gap;
    }
    let mm = m as f64;
    RiskComponents::new(r / mm, r_pd / mm, c / mm, d / mm)
}

/// Exact conditional risks under a population model with covariance
/// `sigma_pop`, population projection `beta_pop`, and residual variance
/// `noise_var`:
/// `R = ||β̂-β||²_Σ + σ²`, `C = <β̂-β, β̃-β>_Σ + σ²`,
/// `D = ||β̂-β̃||²_Σ` (directly).
pub fn risk_components_oracle(
    teacher: &RidgeFit,
    pd: &RidgeFit,
    sigma_pop: &DMatrix<f64>,
    beta_pop: &DVector<f64>,
    noise_var: f64,
) -> Result<RiskComponents> {
    let p = beta_pop.len();
    if sigma_pop.nrows() != p || sigma_pop.ncols() != p {
        return Err(Error::Dimension("covariance/signal dimension mismatch".into()));
    }
    if teacher.beta.len() != p || pd.beta.len() != p {
        return Err(Error::Dimension("fit/signal dimension mismatch".into()));
    }
    if noise_var < 0.0 {
        return Err(Error::Parameter(format!("noise variance must be >= 0, got {noise_var}")));
    }
    check_psd(sigma_pop)?;
    let du = &teacher.beta - beta_pop;
    let dp = &pd.beta - beta_pop;
    oracle_from_errors(&du, &dp, sigma_pop, noise_var)
}

pub(crate) fn oracle_from_errors(
    teacher_err: &DVector<f64>,
    pd_err: &DVector<f64>,
    sigma_pop: &DMatrix<f64>,
    noise_var: f64,
) -> Result<RiskComponents> {
    let su = sigma_pop * teacher_err;
    let sp = sigma_pop * pd_err;
    let r = teacher_err.dot(&su) + noise_var;
    let r_pd = pd_err.dot(&sp) + noise_var;
    let c = teacher_err.dot(&sp) + noise_var;
    let gap = teacher_err - pd_err;
    let d = gap.dot(&(sigma_pop * &gap));
    RiskComponents::new(r.max(0.0), r_pd.max(0.0), c, d)
}

fn check_psd(sigma: &DMatrix<f64>) -> Result<()> {
    if (sigma - sigma.transpose()).norm() > 1e-10 * sigma.norm().max(1.0) {
        return Err(Error::Data("population covariance must be symmetric".into()));
    }
    let eigs = sigma.clone().symmetric_eigen().eigenvalues;
    let max = eigs.iter().cloned().fold(0.0_f64, f64::max);
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max.max(1.0) {
        return Err(Error::Data(format!(
            "population covariance is not PSD (min eigenvalue {min})"
        )));
    }
    Ok(())
}

/// Closed-form optimal mixing: `ξ* = (R - C) / D` and
/// `R_sd* = R - (R - C)² / D`; degenerate pairs return the teacher.
pub fn optimal_mix(rc: &RiskComponents) -> MixResult {
    if rc.is_degenerate() {
        return MixResult {
            xi_star: 0.0,
            r_sd_star: rc.r_teacher,
            degenerate: true,
        };
    }
    let num = rc.r_teacher - rc.c_cross;
    MixResult {
        xi_star: num / rc.d_gap,
        r_sd_star: rc.r_teacher - num * num / rc.d_gap,
        degenerate: false,
    }
}

/// The SD risk quadratic `R_sd(ξ) = R - 2ξ(R - C) + ξ²D`.
pub fn sd_risk_at(rc: &RiskComponents, xi: f64) -> f64 {
    rc.r_teacher - 2.0 * xi * (rc.r_teacher - rc.c_cross) + xi * xi * rc.d_gap
}

/// Analytic ridge-path risk derivative `R'(λ) = -2 (R - C) / λ`.
///
/// Whenever `D > 0`, `sign(ξ*) = -sign(R')`.
pub fn risk_slope(rc: &RiskComponents, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(-2.0 * (rc.r_teacher - rc.c_cross) / lambda)
}

/// Outcome of [`curvature_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureOutcome {
    /// Location of the teacher-risk minimum (golden-section refined).
    pub lambda_star: f64,
    /// Central-difference estimate of `R''(λ*)`.
    pub r_second: f64,
    /// `D(λ*)`.
    pub d_at_star: f64,
    /// Whether `D(λ*) < (λ*²/2) R''(λ*)`, predicting that the optimally
    /// mixed curve dips below the teacher's global minimum.
    pub passes: bool,
    /// False when the grid has no interior minimum (test not applicable).
    pub interior: bool,
}

/// Locate the teacher-risk minimum on a penalty grid, refine it by
/// golden-section search, and evaluate the curvature condition
/// `D(λ*) < (λ*²/2) R''(λ*)`.
pub fn curvature_test<F>(lambda_grid: &[f64], eval: F) -> Result<CurvatureOutcome>
where
    F: Fn(f64) -> RiskComponents,
{
    if lambda_grid.len() < 3 {
        return Err(Error::Parameter("curvature test needs at least 3 grid points".into()));
    }
    if lambda_grid.windows(2).any(|w| w[0] >= w[1]) || lambda_grid[0] <= 0.0 {
        return Err(Error::Parameter("grid must be positive and strictly increasing".into()));
    }
    let risks: Vec<f64> = lambda_grid.iter().map(|&l| eval(l).r_teacher).collect();
    let mut arg = 0;
    for (i, &r) in risks.iter().enumerate() {
        if r < risks[arg] {
            arg = i;
        }
    }
    if arg == 0 || arg == lambda_grid.len() - 1 {
        let lambda_star = lambda_grid[arg];
        let d_at_star = eval(lambda_star).d_gap;
        return Ok(CurvatureOutcome {
            lambda_star,
            r_second: f64::NAN,
            d_at_star,
            passes: false,
            interior: false,
        });
    }

    // Golden-section refinement on the bracketing interval.
    let golden = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lambda_grid[arg - 1], lambda_grid[arg + 1]);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let mut fc = eval(c).r_teacher;
    let mut fd = eval(d).r_teacher;
    while (b - a) > 1e-4 * a {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = eval(c).r_teacher;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = eval(d).r_teacher;
        }
    }
    let lambda_star = 0.5 * (a + b);

    // Second derivative by central differences at relative step 1e-3.
    let h = 1e-3 * lambda_star;
    let r_mid = eval(lambda_star).r_teacher;
    let r_hi = eval(lambda_star + h).r_teacher;
    let r_lo = eval(lambda_star - h).r_teacher;
    let r_second = (r_hi - 2.0 * r_mid + r_lo) / (h * h);
    let d_at_star = eval(lambda_star).d_gap;
    let passes = d_at_star < 0.5 * lambda_star * lambda_star * r_second;
    Ok(CurvatureOutcome {
        lambda_star,
        r_second,
        d_at_star,
        passes,
        interior: true,
    })
}
