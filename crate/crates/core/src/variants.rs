//! Extensions of one-round same-design self-distillation: recursive and
//! anchored multi-round schemes, students refit on fresh unlabeled designs,
//! and the generic smoother-family mixing driven by the tangent identity.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ridge::{RidgeFit, RidgeSolver};
use crate::smoother::Smoother;
use crate::structural::{
    optimal_mix, risk_components_from_predictions, risk_components_oracle, MixResult,
    RiskComponents,
};

// ---------------------------------------------------------------------------
// Multi-round self-distillation
// ---------------------------------------------------------------------------

/// Label-update rule across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiroundMode {
    /// Mix against the previous round's labels.
    Recursive,
    /// Mix against the original labels.
    Anchored,
}

/// Where per-round risks come from.
pub enum RiskSource<'a> {
    /// Exact conditional risks under a population model.
    Oracle {
        sigma_pop: &'a DMatrix<f64>,
        beta_pop: &'a DVector<f64>,
        noise_var: f64,
    },
    /// Held-out sample averages.
    TestSet(&'a Dataset),
    /// Trace-corrected training residuals of the composite round smoother.
    /// A pragmatic plug-in: the round-wise optimum is defined against the
    /// unobservable conditional risk, and no consistency claim is made here.
    Gcv,
}

/// State after each distillation round.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round_index: usize,
    /// Labels the round-k teacher was trained on.
    pub labels: DVector<f64>,
    pub teacher_fit: RidgeFit,
    /// Mixing weights chosen in rounds `1..=round_index`.
    pub xi_history: Vec<f64>,
    /// Evaluated risk of the round-k predictor, `k = 0..=round_index`.
    pub risk_history: Vec<f64>,
    /// True when the round that produced this state had a flat path.
    pub degenerate: bool,
}

/// Run `rounds` rounds of optimally mixed self-distillation at a fixed
/// penalty. Returns `rounds + 1` states; index 0 is the plain teacher.
///
/// Recursive mode guarantees weakly decreasing risks when the risk source
/// is `Oracle` or `TestSet` (each round's family contains the previous
/// predictor); anchored mode records risks without such a guarantee.
pub fn multiround(
    data: &Dataset,
    lambda: f64,
    rounds: usize,
    mode: MultiroundMode,
    risk_source: &RiskSource<'_>,
) -> Result<Vec<RoundState>> {
    if rounds == 0 {
        return Err(Error::Parameter("need at least one round".into()));
    }
    let solver = RidgeSolver::new(data)?;
    let n = data.n();
    let h_eigs: Vec<f64> = solver
        .eigenvalues()
        .iter()
        .map(|&s| s / (s + lambda))
        .collect();

    // Composite-smoother eigen-weights: fitted = H * prod_j((1-xi_j)I + xi_j H) y
    // in the rank subspace. Tracked for the GCV risk source.
    let mut pi: Vec<f64> = vec![1.0; h_eigs.len()];

    let mut labels = data.y().clone();
    let original = data.y().clone();
    let mut xi_history: Vec<f64> = Vec::new();
    let mut risk_history: Vec<f64> = Vec::new();
    let mut states: Vec<RoundState> = Vec::new();

    // teacher of round 0 and its risk
    let mut teacher = solver.fit_labels(data, &labels, lambda)?;
    let base_teacher = teacher.clone();
    let r0 = pair_first_risk(data, &solver, &teacher, &pi, &h_eigs, risk_source)?;
    risk_history.push(r0);
    states.push(RoundState {
        round_index: 0,
        labels: labels.clone(),
        teacher_fit: teacher.clone(),
        xi_history: xi_history.clone(),
        risk_history: risk_history.clone(),
        degenerate: false,
    });

    for k in 1..=rounds {
        let pd = solver.pd_refit(&teacher)?;
        // The round family mixes `anchor` with the current PD refit.
        let (anchor_fit, anchor_pi): (&RidgeFit, Option<&[f64]>) = match mode {
            MultiroundMode::Recursive => (&teacher, Some(&pi)),
            MultiroundMode::Anchored => (&base_teacher, None),
        };
        let pd_pi: Vec<f64> = pi.iter().zip(h_eigs.iter()).map(|(&w, &h)| w * h).collect();
        let rc = pair_components(
            data,
            &solver,
            anchor_fit,
            &pd,
            anchor_pi,
            &pd_pi,
            &h_eigs,
            risk_source,
        )?;
        let mix = optimal_mix(&rc);
        let xi = mix.xi_star;
        xi_history.push(xi);
        risk_history.push(mix.r_sd_star);

        // label update and next-round teacher; the pseudo-labels are the
        // current teacher's fitted values
        let anchor_labels = match mode {
            MultiroundMode::Recursive => &labels,
            MultiroundMode::Anchored => &original,
        };
        let teacher_fitted = solver.fitted(data, &teacher)?;
        labels = DVector::from_fn(n, |i, _| {
            (1.0 - xi) * anchor_labels[i] + xi * teacher_fitted[i]
        });
        // composite-smoother weights follow the same affine update
        match mode {
            MultiroundMode::Recursive => {
                for (w, &h) in pi.iter_mut().zip(h_eigs.iter()) {
                    *w = (1.0 - xi) * *w + xi * h * *w;
                }
            }
            MultiroundMode::Anchored => {
                for (w, &h) in pi.iter_mut().zip(h_eigs.iter()) {
                    *w = (1.0 - xi) + xi * h * *w;
                }
            }
        }
        teacher = solver.fit_labels(data, &labels, lambda)?;
        states.push(RoundState {
            round_index: k,
            labels: labels.clone(),
            teacher_fit: teacher.clone(),
            xi_history: xi_history.clone(),
            risk_history: risk_history.clone(),
            degenerate: mix.degenerate,
        });
    }
    Ok(states)
}

/// Risk of a single predictor under the chosen source (used for round 0).
fn pair_first_risk(
    data: &Dataset,
    solver: &RidgeSolver,
    fit: &RidgeFit,
    pi: &[f64],
    h_eigs: &[f64],
    source: &RiskSource<'_>,
) -> Result<f64> {
    match source {
        RiskSource::Oracle {
            sigma_pop,
            beta_pop,
            noise_var,
        } => {
            let rc = risk_components_oracle(fit, fit, sigma_pop, beta_pop, *noise_var)?;
            Ok(rc.r_teacher)
        }
        RiskSource::TestSet(test) => {
            let f = test.x() * &fit.beta;
            let rc = risk_components_from_predictions(test.y(), &f, &f)?;
            Ok(rc.r_teacher)
        }
        RiskSource::Gcv => {
            let m: Vec<f64> = pi.iter().zip(h_eigs.iter()).map(|(&w, &h)| w * h).collect();
            let r = gcv_residual_for(data, solver, fit, &m)?;
            Ok(r.norm_squared() / data.n() as f64)
        }
    }
}

/// Risk components for the affine family between two predictors.
#[allow(clippy::too_many_arguments)]
fn pair_components(
    data: &Dataset,
    solver: &RidgeSolver,
    a: &RidgeFit,
    b: &RidgeFit,
    a_pi: Option<&[f64]>,
    b_pi: &[f64],
    h_eigs: &[f64],
    source: &RiskSource<'_>,
) -> Result<RiskComponents> {
    match source {
        RiskSource::Oracle {
            sigma_pop,
            beta_pop,
            noise_var,
        } => risk_components_oracle(a, b, sigma_pop, beta_pop, *noise_var),
        RiskSource::TestSet(test) => {
            let fa = test.x() * &a.beta;
            let fb = test.x() * &b.beta;
            risk_components_from_predictions(test.y(), &fa, &fb)
        }
        RiskSource::Gcv => {
            // operator eigen-weights: anchor is either the composite teacher
            // (recursive) or the round-0 hat matrix (anchored)
            let ma: Vec<f64> = match a_pi {
                Some(pi) => pi.iter().zip(h_eigs.iter()).map(|(&w, &h)| w * h).collect(),
                None => h_eigs.to_vec(),
            };
            let mb: Vec<f64> = b_pi
                .iter()
                .zip(h_eigs.iter())
                .map(|(&w, &h)| w * h)
                .collect();
            let ra = gcv_residual_for(data, solver, a, &ma)?;
            let rb = gcv_residual_for(data, solver, b, &mb)?;
            let n = data.n() as f64;
            RiskComponents::new(
                ra.norm_squared() / n,
                rb.norm_squared() / n,
                ra.dot(&rb) / n,
                (ra - rb).norm_squared() / n,
            )
        }
    }
}

/// Trace-corrected residual of a linear-in-`y` predictor whose smoother has
/// the given eigenvalues on the rank subspace of the hat matrix.
fn gcv_residual_for(
    data: &Dataset,
    solver: &RidgeSolver,
    fit: &RidgeFit,
    operator_eigs: &[f64],
) -> Result<DVector<f64>> {
    let n = data.n() as f64;
    let df: f64 = operator_eigs.iter().sum();
    if df / n >= 1.0 - 1e-10 {
        return Err(Error::CorrectionBlowup(format!(
            "composite effective degrees of freedom {df} too close to n = {n}"
        )));
    }
    let fitted = solver.fitted(data, fit)?;
    let scale = 1.0 / (1.0 - df / n);
    Ok(DVector::from_fn(data.n(), |i, _| {
        (data.y()[i] - fitted[i]) * scale
    }))
}

// ---------------------------------------------------------------------------
// Fresh-design students
// ---------------------------------------------------------------------------

/// How the fresh-design student is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreshMode {
    /// Minimize the two-term mixed loss over both designs. Not an affine
    /// path in the mixing weight; requires a positive definite Hessian.
    MixedLoss,
    /// Affine combination of the teacher and the fresh PD refit.
    Affine,
}

/// A student refit using teacher pseudo-labels on an independent design.
#[derive(Debug, Clone, PartialEq)]
pub struct FreshStudent {
    pub mode: FreshMode,
    pub xi: f64,
    pub beta: DVector<f64>,
    /// Whether the mixed-loss Hessian was positive definite (always true for
    /// the affine mode).
    pub convex: bool,
}

impl FreshStudent {
    pub fn predict(&self, x0: &DVector<f64>) -> f64 {
        self.beta.dot(x0)
    }
}

/// Fit a fresh-design student at one mixing weight.
pub fn freshx_fit(
    train: &Dataset,
    fresh_x: &DMatrix<f64>,
    lambda: f64,
    xi: f64,
    mode: FreshMode,
) -> Result<FreshStudent> {
    if fresh_x.ncols() != train.p() {
        return Err(Error::Dimension(format!(
            "fresh design has p={}, train has p={}",
            fresh_x.ncols(),
            train.p()
        )));
    }
    if fresh_x.nrows() == 0 {
        return Err(Error::Data("fresh design is empty".into()));
    }
    if fresh_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite entry in fresh design".into()));
    }
    let solver = RidgeSolver::new(train)?;
    let teacher = solver.fit(lambda)?;
    let p = train.p();
    let m = fresh_x.nrows() as f64;
    let fresh_cov = fresh_x.tr_mul(fresh_x) / m;
    match mode {
        FreshMode::Affine => {
            // beta = (1-xi) beta_teacher + xi (Sigma_fresh + lambda I)^-1 Sigma_fresh beta_teacher
            let reg = &fresh_cov + DMatrix::identity(p, p) * lambda;
            let chol = reg
                .cholesky()
                .ok_or_else(|| Error::Numeric("fresh covariance solve failed".into()))?;
            let pd_fresh = chol.solve(&(&fresh_cov * &teacher.beta));
            Ok(FreshStudent {
                mode,
                xi,
                beta: teacher.beta.clone() * (1.0 - xi) + pd_fresh * xi,
                convex: true,
            })
        }
        FreshMode::MixedLoss => {
            let n = train.n() as f64;
            let train_cov = train.x().tr_mul(train.x()) / n;
            let hessian = train_cov.clone() * (1.0 - xi)
                + fresh_cov.clone() * xi
                + DMatrix::identity(p, p) * lambda;
            let min_eig = hessian
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig <= 1e-10 {
                return Err(Error::NonConvex(format!(
                    "mixed-loss Hessian has minimum eigenvalue {min_eig} at xi = {xi}"
                )));
            }
            let crossmoment = train.x().tr_mul(train.y()) / n;
            let rhs = crossmoment * (1.0 - xi) + &fresh_cov * &teacher.beta * xi;
            let beta = hessian
                .cholesky()
                .ok_or_else(|| Error::NonConvex(format!("mixed-loss solve failed at xi = {xi}")))?
                .solve(&rhs);
            Ok(FreshStudent {
                mode,
                xi,
                beta,
                convex: true,
            })
        }
    }
}

/// Grid scan of the fresh mixed-loss student: non-convex weights are
/// discarded, the test-risk-minimizing weight is returned together with all
/// local minima of the scanned risk curve.
pub struct FreshScan {
    pub best: FreshStudent,
    pub best_risk: f64,
    /// `(xi, risk)` at each local minimum of the scanned curve.
    pub local_minima: Vec<(f64, f64)>,
    /// Number of grid points with a convex objective.
    pub n_convex: usize,
}

pub fn freshx_scan_mixed(
    train: &Dataset,
    fresh_x: &DMatrix<f64>,
    lambda: f64,
    xi_grid: &[f64],
    test: &Dataset,
) -> Result<FreshScan> {
    if xi_grid.is_empty() {
        return Err(Error::Parameter("empty mixing-weight grid".into()));
    }
    let mut evals: Vec<(f64, f64, FreshStudent)> = Vec::new();
    for &xi in xi_grid {
        match freshx_fit(train, fresh_x, lambda, xi, FreshMode::MixedLoss) {
            Ok(student) => {
                let preds = test.x() * &student.beta;
                let risk = (test.y() - preds).norm_squared() / test.n() as f64;
                evals.push((xi, risk, student));
            }
            Err(Error::NonConvex(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if evals.is_empty() {
        return Err(Error::NonConvex(
            "no grid point had a strictly convex objective".into(),
        ));
    }
    let mut best_idx = 0;
    for i in 1..evals.len() {
        if evals[i].1 < evals[best_idx].1 {
            best_idx = i;
        }
    }
    let mut local_minima = Vec::new();
    for i in 0..evals.len() {
        let left_ok = i == 0 || evals[i - 1].1 >= evals[i].1;
        let right_ok = i + 1 == evals.len() || evals[i + 1].1 > evals[i].1;
        if left_ok && right_ok {
            local_minima.push((evals[i].0, evals[i].1));
        }
    }
    let n_convex = evals.len();
    let (_, best_risk, best) = evals.swap_remove(best_idx);
    Ok(FreshScan {
        best,
        best_risk,
        local_minima,
        n_convex,
    })
}

// ---------------------------------------------------------------------------
// Generic smoother-family self-distillation
// ---------------------------------------------------------------------------

/// Optimal mixing for a resolvent-based smoother family on a held-out set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherSd {
    pub xi_star: f64,
    pub r_sd_star: f64,
    pub r_teacher: f64,
    pub r_pd: f64,
    pub degenerate: bool,
}

/// Apply the closed-form optimal mixing to a smoother family, after probing
/// the tangent identity `f - f_pd = -λ ∂_λ f` at a test point with central
/// finite differences (relative tolerance 1e-6). Families failing the probe
/// are rejected: the slope-based guarantees do not apply to them.
pub fn smoother_sd<S, F>(family_at: F, lambda: f64, test: &Dataset) -> Result<SmootherSd>
where
    S: Smoother,
    F: Fn(f64) -> Result<S>,
{
    if test.n() == 0 {
        return Err(Error::Data("empty test set".into()));
    }
    let smoother = family_at(lambda)?;
    let x0 = test.row(0);
    let gap = smoother.predict(&x0) - smoother.predict_pd(&x0);
    let h = 1e-5 * lambda;
    let hi = family_at(lambda + h)?;
    let lo = family_at(lambda - h)?;
    let fd = (hi.predict(&x0) - lo.predict(&x0)) / (2.0 * h);
    let tangent = -lambda * fd;
    let scale = gap.abs().max(tangent.abs()).max(1e-10);
    if ((gap - tangent) / scale).abs() > 1e-6 {
        return Err(Error::FamilyRejected(format!(
            "tangent-identity probe failed: gap {gap} vs -lambda*d/dlambda {tangent}"
        )));
    }
    let preds_teacher = DVector::from_fn(test.n(), |i, _| smoother.predict(&test.row(i)));
    let preds_pd = DVector::from_fn(test.n(), |i, _| smoother.predict_pd(&test.row(i)));
    let rc = risk_components_from_predictions(test.y(), &preds_teacher, &preds_pd)?;
    let MixResult {
        xi_star,
        r_sd_star,
        degenerate,
    } = optimal_mix(&rc);
    Ok(SmootherSd {
        xi_star,
        r_sd_star,
        r_teacher: rc.r_teacher,
        r_pd: rc.r_pd,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoother::{Bandwidth, GeneralizedRidge, KernelBase, OrdinarySmoother};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_instance(
        n: usize,
        p: usize,
        noise: f64,
        seed: u64,
    ) -> (Dataset, DMatrix<f64>, DVector<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
            / (p as f64).sqrt();
        let y = &x * &beta
            + DVector::from_fn(n, |_, _| noise.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let sigma = DMatrix::identity(p, p);
        (Dataset::new(x, y).unwrap(), sigma, beta, noise)
    }

    #[test]
    fn recursive_multiround_is_monotone() {
        let (data, sigma, beta, noise) = gaussian_instance(120, 40, 1.0, 1);
        let source = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        let states = multiround(&data, 3.0, 5, MultiroundMode::Recursive, &source).unwrap();
        assert_eq!(states.len(), 6);
        let risks = &states.last().unwrap().risk_history;
        for w in risks.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "risks increased: {w:?}");
        }
    }

    #[test]
    fn stationary_round_keeps_risk() {
        // at the risk-minimizing penalty the first-round slope vanishes, so
        // the chosen weight and improvement are both ~ 0
        let (data, sigma, beta, noise) = gaussian_instance(120, 40, 1.0, 2);
        let source = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        // locate the teacher-optimal penalty by golden-section on the oracle risk
        let solver = RidgeSolver::new(&data).unwrap();
        let risk_at = |l: f64| {
            let f = solver.fit(l).unwrap();
            risk_components_oracle(&f, &f, &sigma, &beta, noise)
                .unwrap()
                .r_teacher
        };
        let (mut a, mut b) = (1e-3, 1e2);
        for _ in 0..200 {
            let c = b - 0.618_033_988_749_895 * (b - a);
            let d = a + 0.618_033_988_749_895 * (b - a);
            if risk_at(c) < risk_at(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let lambda_star = 0.5 * (a + b);
        let states = multiround(&data, lambda_star, 1, MultiroundMode::Recursive, &source).unwrap();
        let r = &states[1].risk_history;
        assert!(states[1].xi_history[0].abs() < 1e-3);
        assert!((r[1] - r[0]).abs() < 1e-8 * r[0].max(1.0));
    }

    #[test]
    fn round_sign_rule_against_finite_difference() {
        let (data, sigma, beta, noise) = gaussian_instance(120, 40, 1.0, 3);
        let source = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        for lambda in [0.05, 5.0] {
            let states = multiround(&data, lambda, 2, MultiroundMode::Recursive, &source).unwrap();
            // round-k teacher risk as a function of the penalty with the
            // round labels held fixed
            for k in 0..2usize {
                let labels = states[k].labels.clone();
                let solver = RidgeSolver::new(&data).unwrap();
                let risk_at = |l: f64| {
                    let f = solver.fit_labels(&data, &labels, l).unwrap();
                    risk_components_oracle(&f, &f, &sigma, &beta, noise)
                        .unwrap()
                        .r_teacher
                };
                let h = 1e-4 * lambda;
                let slope = (risk_at(lambda + h) - risk_at(lambda - h)) / (2.0 * h);
                let xi = states[k + 1].xi_history[k];
                if slope.abs() > 1e-8 {
                    assert_eq!(xi.signum(), -slope.signum(), "round {k} lambda {lambda}");
                }
            }
        }
    }

    #[test]
    fn anchored_can_lose_to_one_round() {
        // qualitative pattern: at some penalty, the two-round anchored risk
        // exceeds the optimal one-round risk
        let (data, sigma, beta, noise) = gaussian_instance(400, 200, 1.0, 42);
        let source = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        let mut found = false;
        for lambda in crate::linalg::log_grid(1e-2, 1e2, 25) {
            let one = multiround(&data, lambda, 1, MultiroundMode::Recursive, &source).unwrap();
            let anchored = multiround(&data, lambda, 2, MultiroundMode::Anchored, &source).unwrap();
            let r1 = one[1].risk_history[1];
            let r2a = anchored[2].risk_history[2];
            if r2a > r1 + 1e-12 {
                found = true;
                break;
            }
        }
        assert!(found, "anchored two-round never exceeded one-round optimum");
    }

    #[test]
    fn gcv_source_runs_and_tracks_oracle_sign() {
        // the plug-in round-one weight should carry the oracle's sign at
        // clearly under- and over-regularized penalties (later rounds sit
        // near the stationary point, where signs are noise)
        let (data, sigma, beta, noise) = gaussian_instance(400, 200, 1.0, 7);
        let oracle = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        let gcv = RiskSource::Gcv;
        for lambda in [0.05, 5.0] {
            let so = multiround(&data, lambda, 2, MultiroundMode::Recursive, &oracle).unwrap();
            let sg = multiround(&data, lambda, 2, MultiroundMode::Recursive, &gcv).unwrap();
            let a = so[1].xi_history[0];
            let b = sg[1].xi_history[0];
            assert!(a.abs() > 0.2, "oracle weight unexpectedly small: {a}");
            assert_eq!(a.signum(), b.signum(), "lambda {lambda}");
            assert_eq!(sg.len(), 3);
        }
    }

    #[test]
    fn fresh_affine_endpoints() {
        let (data, _, _, _) = gaussian_instance(40, 10, 0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fresh = DMatrix::from_fn(35, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let solver = RidgeSolver::new(&data).unwrap();
        let teacher = solver.fit(0.8).unwrap();
        for mode in [FreshMode::Affine, FreshMode::MixedLoss] {
            let s0 = freshx_fit(&data, &fresh, 0.8, 0.0, mode).unwrap();
            assert!((s0.beta - &teacher.beta).norm() < 1e-10);
        }
    }

    #[test]
    fn mixed_loss_with_train_design_collapses_to_same_design_pd() {
        let (data, _, _, _) = gaussian_instance(40, 10, 0.5, 6);
        let solver = RidgeSolver::new(&data).unwrap();
        let teacher = solver.fit(0.8).unwrap();
        let pd = solver.pd_refit(&teacher).unwrap();
        let s = freshx_fit(&data, data.x(), 0.8, 1.0, FreshMode::MixedLoss).unwrap();
        assert!((s.beta - pd.beta).norm() < 1e-10);
    }

    #[test]
    fn mixed_loss_matches_dense_normal_equations() {
        let (data, _, _, _) = gaussian_instance(30, 8, 0.5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fresh = DMatrix::from_fn(26, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (lambda, xi) = (0.6, 0.3);
        let student = freshx_fit(&data, &fresh, lambda, xi, FreshMode::MixedLoss).unwrap();
        // dense oracle for the two-term objective
        let n = data.n() as f64;
        let m = fresh.nrows() as f64;
        let solver = RidgeSolver::new(&data).unwrap();
        let bt = solver.fit(lambda).unwrap().beta;
        let a = data.x().tr_mul(data.x()) / n * (1.0 - xi)
            + fresh.tr_mul(&fresh) / m * xi
            + DMatrix::identity(8, 8) * lambda;
        let rhs = data.x().tr_mul(data.y()) / n * (1.0 - xi) + fresh.tr_mul(&fresh) / m * bt * xi;
        let oracle = a.try_inverse().unwrap() * rhs;
        assert!((student.beta - oracle).norm() < 1e-10);
    }

    #[test]
    fn mixed_loss_rejects_indefinite_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(30, 5, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let fresh = DMatrix::from_fn(30, 5, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        // strongly negative weight on the big fresh Gram matrix
        let err = freshx_fit(&data, &fresh, 0.01, -50.0, FreshMode::MixedLoss);
        assert!(matches!(err, Err(Error::NonConvex(_))));
    }

    #[test]
    fn fresh_affine_risk_is_quadratic_mixed_is_not() {
        let (data, _, _, _) = gaussian_instance(60, 15, 0.5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fresh = DMatrix::from_fn(60, 15, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (test, _, _, _) = gaussian_instance(300, 15, 0.5, 13);
        let lambda = 0.5;
        let risk_of = |mode: FreshMode, xi: f64| -> Option<f64> {
            freshx_fit(&data, &fresh, lambda, xi, mode).ok().map(|s| {
                (test.y() - test.x() * &s.beta).norm_squared() / test.n() as f64
            })
        };
        // quadratic through three points must reproduce the affine curve
        let pts = [-1.0, 0.0, 1.0];
        let vals: Vec<f64> = pts.iter().map(|&x| risk_of(FreshMode::Affine, x).unwrap()).collect();
        // Lagrange coefficients for nodes -1, 0, 1
        let quad = |x: f64| {
            vals[0] * x * (x - 1.0) / 2.0 - vals[1] * (x + 1.0) * (x - 1.0)
                + vals[2] * x * (x + 1.0) / 2.0
        };
        let mut max_affine_dev: f64 = 0.0;
        let mut max_mixed_dev: f64 = 0.0;
        let mut xi = -2.0;
        while xi <= 2.0 {
            let affine = risk_of(FreshMode::Affine, xi).unwrap();
            max_affine_dev = max_affine_dev.max((affine - quad(xi)).abs());
            if let Some(mixed) = risk_of(FreshMode::MixedLoss, xi) {
                max_mixed_dev = max_mixed_dev.max((mixed - quad(xi)).abs());
            }
            xi += 0.05;
        }
        assert!(max_affine_dev < 1e-10, "affine deviation {max_affine_dev}");
        assert!(max_mixed_dev > 1e-6, "mixed-loss curve looks affine");
    }

    #[test]
    fn scan_returns_global_minimum_and_local_minima() {
        let (data, _, _, _) = gaussian_instance(50, 10, 0.5, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let fresh = DMatrix::from_fn(50, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (test, _, _, _) = gaussian_instance(200, 10, 0.5, 16);
        let grid: Vec<f64> = (0..300).map(|i| -3.0 + i as f64 * 0.02).collect();
        let scan = freshx_scan_mixed(&data, &fresh, 0.5, &grid, &test).unwrap();
        assert!(!scan.local_minima.is_empty());
        let best_local = scan
            .local_minima
            .iter()
            .map(|&(_, r)| r)
            .fold(f64::INFINITY, f64::min);
        assert!((best_local - scan.best_risk).abs() < 1e-12);
    }

    #[test]
    fn smoother_sd_matches_ordinary_closed_form() {
        let (data, _, _, _) = gaussian_instance(60, 12, 0.5, 17);
        let (test, _, _, _) = gaussian_instance(400, 12, 0.5, 18);
        let solver = RidgeSolver::new(&data).unwrap();
        let lambda = 1.2;
        let out = smoother_sd(
            |l| OrdinarySmoother::new(&data, &solver, l),
            lambda,
            &test,
        )
        .unwrap();
        // reference: explicit components + optimal mix on fits
        let teacher = solver.fit(lambda).unwrap();
        let pd = solver.pd_refit(&teacher).unwrap();
        let rc = crate::structural::risk_components_empirical(&teacher, &pd, &test).unwrap();
        let mix = optimal_mix(&rc);
        assert!((out.xi_star - mix.xi_star).abs() < 1e-10);
        assert!((out.r_sd_star - mix.r_sd_star).abs() < 1e-10);
        assert!((out.r_teacher - rc.r_teacher).abs() < 1e-12);
    }

    #[test]
    fn smoother_sd_identity_penalty_matches_ordinary() {
        let (data, _, _, _) = gaussian_instance(50, 10, 0.5, 19);
        let (test, _, _, _) = gaussian_instance(300, 10, 0.5, 20);
        let solver = RidgeSolver::new(&data).unwrap();
        let omega = DMatrix::identity(10, 10);
        let lambda = 0.9;
        let ord = smoother_sd(|l| OrdinarySmoother::new(&data, &solver, l), lambda, &test).unwrap();
        let gen = smoother_sd(|l| GeneralizedRidge::new(&data, &omega, l), lambda, &test).unwrap();
        assert!((ord.xi_star - gen.xi_star).abs() < 1e-8);
        assert!((ord.r_sd_star - gen.r_sd_star).abs() < 1e-8);
    }

    #[test]
    fn smoother_sd_kernel_improves_teacher_on_grid() {
        let (data, _, _, _) = gaussian_instance(80, 4, 0.5, 21);
        let (test, _, _, _) = gaussian_instance(400, 4, 0.5, 22);
        let base = KernelBase::new(&data, Bandwidth::Median).unwrap();
        for lambda in crate::linalg::log_grid(1e-3, 1.0, 8) {
            let out = smoother_sd(|l| base.at_lambda(l), lambda, &test).unwrap();
            assert!(out.r_sd_star <= out.r_teacher + 1e-12);
        }
    }

    #[test]
    fn smoother_sd_rejects_broken_family() {
        // a family whose "PD" predictions violate the tangent identity
        struct Broken<'a> {
            inner: OrdinarySmoother<'a>,
        }
        impl Smoother for Broken<'_> {
            fn lambda(&self) -> f64 {
                self.inner.lambda()
            }
            fn n(&self) -> usize {
                self.inner.n()
            }
            fn predict(&self, x0: &DVector<f64>) -> f64 {
                self.inner.predict(x0)
            }
            fn predict_pd(&self, x0: &DVector<f64>) -> f64 {
                0.5 * self.inner.predict(x0) // not the PD refit
            }
            fn lambda_derivative_at(&self, x0: &DVector<f64>) -> f64 {
                self.inner.lambda_derivative_at(x0)
            }
            fn smoother_weights(&self, x0: &DVector<f64>) -> DVector<f64> {
                self.inner.smoother_weights(x0)
            }
            fn fitted(&self) -> &DVector<f64> {
                self.inner.fitted()
            }
            fn fitted_pd(&self) -> &DVector<f64> {
                self.inner.fitted_pd()
            }
            fn hat_trace(&self) -> f64 {
                self.inner.hat_trace()
            }
            fn hat_sq_trace(&self) -> f64 {
                self.inner.hat_sq_trace()
            }
        }
        let (data, _, _, _) = gaussian_instance(40, 8, 0.5, 23);
        let (test, _, _, _) = gaussian_instance(100, 8, 0.5, 24);
        let solver = RidgeSolver::new(&data).unwrap();
        let err = smoother_sd(
            |l| {
                Ok(Broken {
                    inner: OrdinarySmoother::new(&data, &solver, l)?,
                })
            },
            0.7,
            &test,
        );
        assert!(matches!(err, Err(Error::FamilyRejected(_))));
    }

    #[test]
    fn smoother_sd_zero_weight_recovers_teacher_risk() {
        let (data, _, _, _) = gaussian_instance(50, 10, 0.5, 25);
        let (test, _, _, _) = gaussian_instance(200, 10, 0.5, 26);
        let solver = RidgeSolver::new(&data).unwrap();
        let out = smoother_sd(|l| OrdinarySmoother::new(&data, &solver, l), 0.9, &test).unwrap();
        let teacher = solver.fit(0.9).unwrap();
        let pd = solver.pd_refit(&teacher).unwrap();
        let rc = crate::structural::risk_components_empirical(&teacher, &pd, &test).unwrap();
        assert!((crate::structural::sd_risk_at(&rc, 0.0) - out.r_teacher).abs() < 1e-12);
    }

    #[test]
    fn multiround_rejects_zero_rounds_and_honors_family_tag() {
        let (data, sigma, beta, noise) = gaussian_instance(30, 10, 0.5, 27);
        let source = RiskSource::Oracle {
            sigma_pop: &sigma,
            beta_pop: &beta,
            noise_var: noise,
        };
        assert!(multiround(&data, 1.0, 0, MultiroundMode::Recursive, &source).is_err());
        let states = multiround(&data, 1.0, 1, MultiroundMode::Recursive, &source).unwrap();
        assert_eq!(
            states[0].teacher_fit.family,
            crate::ridge::FitFamily::Ordinary
        );
    }
}
