//! One-shot tuning from training data alone: trace-corrected residuals give
//! plug-in estimates of the teacher risk, PD risk, and their residual
//! correlation, hence closed-form estimates of the optimal mixing weight and
//! optimal SD risk. One factorization, no retraining per candidate weight.

use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ridge::RidgeSolver;

/// One-shot estimates at a single penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvEstimates {
    pub lambda: f64,
    pub r_hat: f64,
    pub r_pd_hat: f64,
    pub c_hat: f64,
    /// `‖r̂_λ - r̂_pd‖²/n`, computed directly so it is nonnegative.
    pub d_hat: f64,
    pub xi_hat: f64,
    pub r_sd_hat: f64,
    pub df: f64,
    pub df_pd: f64,
    pub degenerate: bool,
}

/// Trace-corrected residuals of the teacher and the PD refit:
/// `r̂ = (y - ŷ)/(1 - df/n)` with `df = tr(H)` and `df_pd = tr(H²)`.
///
/// Fails when either correction factor degenerates (`df/n ≥ 1 - 1e-10`),
/// which happens in the interpolation regime.
pub fn gcv_residuals(
    data: &Dataset,
    solver: &RidgeSolver,
    lambda: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (df, df_pd) = solver.hat_traces(lambda)?;
    let n = data.n() as f64;
    if df / n >= 1.0 - 1e-10 || df_pd / n >= 1.0 - 1e-10 {
        return Err(Error::CorrectionBlowup(format!(
            "df/n = {:.12} and df_pd/n = {:.12} at lambda = {lambda}; \
             the residual correction diverges",
            df / n,
            df_pd / n
        )));
    }
    let teacher = solver.fit(lambda)?;
    let pd = solver.pd_refit(&teacher)?;
    let y_hat = solver.fitted(data, &teacher)?;
    let y_hat_pd = solver.fitted(data, &pd)?;
    let scale_t = 1.0 / (1.0 - df / n);
    let scale_p = 1.0 / (1.0 - df_pd / n);
    let r_t = DVector::from_fn(data.n(), |i, _| (data.y()[i] - y_hat[i]) * scale_t);
    let r_p = DVector::from_fn(data.n(), |i, _| (data.y()[i] - y_hat_pd[i]) * scale_p);
    Ok((r_t, r_p))
}

/// One-shot estimates with a caller-provided factorization. `stabilizer` is
/// an optional ridge added to the estimated denominator; zero by default as
/// it was not needed in practice.
pub fn one_shot_with_solver(
    data: &Dataset,
    solver: &RidgeSolver,
    lambda: f64,
    stabilizer: f64,
) -> Result<GcvEstimates> {
    if stabilizer < 0.0 {
        return Err(Error::Parameter(format!(
            "stabilizer must be nonnegative, got {stabilizer}"
        )));
    }
    let (df, df_pd) = solver.hat_traces(lambda)?;
    let (r_t, r_p) = gcv_residuals(data, solver, lambda)?;
    let n = data.n() as f64;
    let r_hat = r_t.norm_squared() / n;
    let r_pd_hat = r_p.norm_squared() / n;
    let c_hat = r_t.dot(&r_p) / n;
    let d_hat = (&r_t - &r_p).norm_squared() / n;
    let denom = d_hat + stabilizer;
    let degenerate = denom <= 1e-12 * r_hat.max(1.0);
    let num = r_hat - c_hat;
    let (xi_hat, r_sd_hat) = if degenerate {
        (0.0, r_hat)
    } else {
        (num / denom, r_hat - num * num / denom)
    };
    Ok(GcvEstimates {
        lambda,
        r_hat,
        r_pd_hat,
        c_hat,
        d_hat,
        xi_hat,
        r_sd_hat,
        df,
        df_pd,
        degenerate,
    })
}

/// One-shot estimates at a single penalty, factorizing once internally.
/// Prefer [`one_shot_with_solver`] when sweeping a grid.
pub fn one_shot(data: &Dataset, lambda: f64) -> Result<GcvEstimates> {
    let solver = RidgeSolver::new(data)?;
    one_shot_with_solver(data, &solver, lambda, 0.0)
}
