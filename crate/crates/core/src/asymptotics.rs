//! Deterministic-equivalent engine for the proportional regime: the
//! effective-regularization fixed point, trace/alignment functionals, the
//! limiting teacher/PD/cross risks and optimal mixing, isotropic closed
//! forms, extreme-penalty limits, and spectral negative moments.
//!
//! The component limits follow the displayed risk formulas; the derived
//! quantities `R - C` and `D = R + R_pd - 2C` are evaluated through
//! algebraically identical regroupings that stay accurate at extreme
//! penalties, where forming them by subtraction loses all precision. The
//! plain-subtraction route is kept as a test oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;

/// Population description feeding the engine: spectrum of the covariance,
/// signal coordinates in its eigenbasis, noise level, and aspect ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    sigma_eigs: DVector<f64>,
    beta_proj: DVector<f64>,
    noise_var: f64,
    aspect: f64,
}

impl SpectralModel {
    pub fn new(
        sigma_eigs: DVector<f64>,
        beta_proj: DVector<f64>,
        noise_var: f64,
        aspect: f64,
    ) -> Result<Self> {
        if sigma_eigs.is_empty() || sigma_eigs.len() != beta_proj.len() {
            return Err(Error::Dimension(format!(
                "spectrum has {} entries, projections {}",
                sigma_eigs.len(),
                beta_proj.len()
            )));
        }
        if sigma_eigs.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Data(
                "population eigenvalues must be positive and finite".into(),
            ));
        }
        if beta_proj.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("signal projections must be finite".into()));
        }
        if !(noise_var >= 0.0) || !(aspect > 0.0) {
            return Err(Error::Parameter(format!(
                "need noise_var >= 0 and aspect > 0, got {noise_var}, {aspect}"
            )));
        }
        Ok(Self {
            sigma_eigs,
            beta_proj,
            noise_var,
            aspect,
        })
    }

    /// Eigendecompose a dense covariance and rotate the signal into its
    /// eigenbasis.
    pub fn from_dense(
        sigma: &DMatrix<f64>,
        beta: &DVector<f64>,
        noise_var: f64,
        aspect: f64,
    ) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != beta.len() {
            return Err(Error::Dimension("covariance/signal dimension mismatch".into()));
        }
        if (sigma - sigma.transpose()).norm() > 1e-10 * sigma.norm().max(1.0) {
            return Err(Error::Data("covariance must be symmetric".into()));
        }
        let (vals, vecs) = sym_eigen_desc(sigma.clone());
        Self::new(vals, vecs.tr_mul(beta), noise_var, aspect)
    }

    /// Isotropic model with an exactly representative single spectral atom:
    /// unit eigenvalue carrying the whole signal energy `r²`. This is the
    /// deterministic surrogate for an isotropic random signal; the trace and
    /// alignment functionals coincide with the isotropic limits.
    pub fn isotropic(r2: f64, noise_var: f64, aspect: f64) -> Result<Self> {
        if !(r2 >= 0.0) {
            return Err(Error::Parameter(format!("signal energy must be >= 0, got {r2}")));
        }
        Self::new(
            DVector::from_element(1, 1.0),
            DVector::from_element(1, r2.sqrt()),
            noise_var,
            aspect,
        )
    }

    pub fn signal_energy(&self) -> f64 {
        self.beta_proj.norm_squared()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn sigma_eigs(&self) -> &DVector<f64> {
        &self.sigma_eigs
    }

    pub fn beta_proj(&self) -> &DVector<f64> {
        &self.beta_proj
    }

    /// Normalized trace `(1/p) Σ s_i/(s_i + kappa)`.
    fn resolvent_trace(&self, kappa: f64) -> f64 {
        self.sigma_eigs.iter().map(|&s| s / (s + kappa)).sum::<f64>()
            / self.sigma_eigs.len() as f64
    }

    fn t_k(&self, kappa: f64, k: i32) -> f64 {
        self.aspect
            * self
                .sigma_eigs
                .iter()
                .map(|&s| s * s / (s + kappa).powi(k))
                .sum::<f64>()
            / self.sigma_eigs.len() as f64
    }

    fn q_k(&self, kappa: f64, k: i32) -> f64 {
        self.sigma_eigs
            .iter()
            .zip(self.beta_proj.iter())
            .map(|(&s, &b)| b * b * s / (s + kappa).powi(k))
            .sum()
    }
}

/// Solved fixed point with the derived scalars used by the risk limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticState {
    pub lambda: f64,
    pub kappa: f64,
    /// `b = 1/(1 - t2) = kappa'(lambda)`.
    pub b: f64,
    /// `E = kappa - b*lambda + b^2*kappa*lambda*t3`.
    pub e_coef: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// `kappa - lambda` evaluated through the fixed point (not by
    /// subtraction), `gamma*kappa*tr̄(Σ(Σ+kappa I)^-1)`.
    pub kappa_minus_lambda: f64,
    /// `Σ β_i² s_i² / (s_i+kappa)³`, the alignment functional entering the
    /// stable form of `R - C`.
    pub q23: f64,
}

/// Limits of the teacher/PD/cross risks and the derived optimal mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalRisks {
    pub r_teacher: f64,
    pub c_cross: f64,
    pub r_pd: f64,
    pub d_gap: f64,
    pub xi_star: f64,
    pub r_sd_star: f64,
    pub degenerate: bool,
}

/// Solve the fixed point `kappa = lambda + gamma*kappa*tr̄(Σ(Σ+kappa I)^-1)`
/// by safeguarded Newton with a bisection fallback on
/// `[lambda, lambda + gamma*max(s)]`.
pub fn solve_kappa(model: &SpectralModel, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let gamma = model.aspect;
    let s_max = model.sigma_eigs.max();
    let mut lo = lambda;
    let mut hi = lambda + gamma * s_max;
    let g = |k: f64| k - lambda - gamma * k * model.resolvent_trace(k);
    let mut k = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gk = g(k);
        if gk.abs() <= 1e-12 * k {
            return Ok(k);
        }
        if gk > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        // g'(kappa) = 1 - t2(kappa)
        let slope = 1.0 - model.t_k(k, 2);
        let newton = if slope > 1e-14 { k - gk / slope } else { f64::NAN };
        k = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= f64::EPSILON * hi {
            break;
        }
    }
    let gk = g(k);
    if gk.abs() <= 1e-10 * k {
        Ok(k)
    } else {
        Err(Error::Numeric(format!(
            "fixed-point iteration stalled at kappa={k}, residual {gk}, lambda={lambda}"
        )))
    }
}

/// Evaluate the trace and alignment functionals and derived scalars at a
/// solved fixed point.
pub fn functionals(model: &SpectralModel, kappa: f64, lambda: f64) -> Result<AsymptoticState> {
    let t2 = model.t_k(kappa, 2);
    let t3 = model.t_k(kappa, 3);
    let t4 = model.t_k(kappa, 4);
    if t2 >= 1.0 - 1e-12 {
        return Err(Error::Numeric(format!(
            "t2 = {t2} >= 1: kappa={kappa} does not solve the fixed point for lambda={lambda}"
        )));
    }
    let b = 1.0 / (1.0 - t2);
    let gamma = model.aspect;
    let kappa_minus_lambda = gamma * kappa * model.resolvent_trace(kappa);
    // E = kappa - b*lambda + b^2*kappa*lambda*t3, with kappa - b*lambda
    // expanded as (kappa - lambda) - lambda*t2*b to avoid cancellation at
    // large lambda.
    let e_coef = kappa_minus_lambda - lambda * t2 * b + b * b * kappa * lambda * t3;
    let q2 = model.q_k(kappa, 2);
    let q3 = model.q_k(kappa, 3);
    let q4 = model.q_k(kappa, 4);
    let q23 = model
        .sigma_eigs
        .iter()
        .zip(model.beta_proj.iter())
        .map(|(&s, &bi)| bi * bi * s * s / (s + kappa).powi(3))
        .sum();
    let u2 = t2 * b;
    let u3 = t3 * b.powi(3);
    let u4 = t4 * b.powi(4) + 2.0 * t3 * t3 * b.powi(5);
    let kl = kappa * lambda;
    let a2 = b * e_coef * e_coef + b.powi(4) * kl * kl * t4 + b.powi(5) * kl * kl * t3 * t3;
    let a3 = 2.0 * b * b * kl * e_coef;
    let a4 = b.powi(3) * kl * kl;
    Ok(AsymptoticState {
        lambda,
        kappa,
        b,
        e_coef,
        t2,
        t3,
        t4,
        q2,
        q3,
        q4,
        u2,
        u3,
        u4,
        a2,
        a3,
        a4,
        kappa_minus_lambda,
        q23,
    })
}

/// Limiting `R - C`, grouped so no large terms cancel:
/// `b²κλ (q2·bκt3 - q23) + σ²λu3`.
fn r_minus_c(state: &AsymptoticState, model: &SpectralModel) -> f64 {
    let k = state.kappa;
    let l = state.lambda;
    let b = state.b;
    b * b * k * l * (state.q2 * b * k * state.t3 - state.q23)
        + model.noise_var * l * state.u3
}

/// Limiting `D = R + R_pd - 2C` as a sum of nonnegative terms:
/// `λ² [ b³ Σ v_i s_i (s_i - bκt3(s_i+κ))² / (s_i+κ)⁴
///       + (b⁴t4 + b⁵t3²) κ² q2 + σ² u4 ]`.
fn d_gap(state: &AsymptoticState, model: &SpectralModel) -> f64 {
    let k = state.kappa;
    let b = state.b;
    let bt = b * k * state.t3;
    let inner: f64 = model
        .sigma_eigs
        .iter()
        .zip(model.beta_proj.iter())
        .map(|(&s, &v)| {
            let g = s + k;
            let w = s - bt * g;
            v * v * s * w * w / g.powi(4)
        })
        .sum();
    let l2 = state.lambda * state.lambda;
    l2 * (b.powi(3) * inner
        + (b.powi(4) * state.t4 + b.powi(5) * state.t3 * state.t3) * k * k * state.q2
        + model.noise_var * state.u4)
}

/// Evaluate the limiting risks and the optimal mixing they induce.
pub fn theoretical_risks(state: &AsymptoticState, model: &SpectralModel) -> TheoreticalRisks {
    let sigma2 = model.noise_var;
    let r = state.kappa * state.kappa * state.b * state.q2 + sigma2 * state.u2 + sigma2;
    let rmc = r_minus_c(state, model);
    let d = d_gap(state, model);
    let c = r - rmc;
    let r_pd = d + r - 2.0 * rmc;
    // The regrouped gap is a sum of nonnegative terms with full relative
    // precision even when it is absolutely tiny (extreme penalties), so the
    // path only degenerates when it is exactly flat.
    let degenerate = !(d > 0.0);
    let (xi_star, r_sd_star) = if degenerate {
        (0.0, r)
    } else {
        (rmc / d, r - rmc * rmc / d)
    };
    TheoreticalRisks {
        r_teacher: r,
        c_cross: c,
        r_pd,
        d_gap: d,
        xi_star,
        r_sd_star,
        degenerate,
    }
}

/// Convenience: solve the fixed point and evaluate the risk limits at one
/// penalty.
pub fn risks_at(model: &SpectralModel, lambda: f64) -> Result<TheoreticalRisks> {
    let kappa = solve_kappa(model, lambda)?;
    let state = functionals(model, kappa, lambda)?;
    Ok(theoretical_risks(&state, model))
}

/// Explicit isotropic closed forms: `kappa`, the companion transform
/// `v = 1/kappa`, and `b = kappa'(lambda)`.
pub fn isotropic_closed_forms(gamma: f64, lambda: f64) -> Result<(f64, f64, f64)> {
    if !(gamma > 0.0 && lambda > 0.0) {
        return Err(Error::Parameter(format!(
            "need gamma > 0 and lambda > 0, got {gamma}, {lambda}"
        )));
    }
    let a = lambda + gamma - 1.0;
    let s = (a * a + 4.0 * lambda).sqrt();
    // kappa = (a + s)/2, evaluated without cancellation on either sign of a.
    let kappa = if a >= 0.0 { 0.5 * (a + s) } else { 2.0 * lambda / (s - a) };
    let v = if a >= 0.0 { 2.0 / (s + a) } else { 0.5 * (s - a) / lambda };
    let b = 0.5 * (1.0 + (lambda + gamma + 1.0) / s);
    Ok((kappa, v, b))
}

/// Relative suboptimality of optimal SD versus the best ridge predictor at
/// the two ends of the penalty path (isotropic design and signal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeLimits {
    /// `lim_{λ→0} (R_sd* - R*)/R*`; `None` when `gamma = 1`, where the
    /// zero-penalty limit formula is not defined.
    pub gap_zero: Option<f64>,
    /// `lim_{λ→∞} (R_sd* - R*)/R*`.
    pub gap_inf: f64,
    /// The scaled optimal-ridge excess `S*(SNR, gamma)`.
    pub s_star: f64,
}

/// `S*(SNR, γ) = (1/2γ)(SNR(γ-1) - γ + sqrt(4 SNR γ² + (SNR(γ-1) - γ)²))`.
pub fn s_star(snr: f64, gamma: f64) -> Result<f64> {
    if !(snr > 0.0 && gamma > 0.0) {
        return Err(Error::Parameter(format!(
            "need snr > 0 and gamma > 0, got {snr}, {gamma}"
        )));
    }
    let t = snr * (gamma - 1.0) - gamma;
    Ok((t + (4.0 * snr * gamma * gamma + t * t).sqrt()) / (2.0 * gamma))
}

/// Extreme-penalty relative gaps between optimal SD and the optimal ridge.
pub fn extreme_limits(snr: f64, gamma: f64) -> Result<ExtremeLimits> {
    let s = s_star(snr, gamma)?;
    let gap_inf = (snr * snr * gamma + snr * (2.0 * gamma + 1.0) + gamma)
        / ((snr * (gamma + 1.0) + gamma) * (s + 1.0))
        - 1.0;
    let gap_zero = if (gamma - 1.0).abs() < 1e-12 {
        None
    } else if gamma < 1.0 {
        let om = 1.0 - gamma;
        Some(
            (snr * om * om + gamma)
                / ((snr * om.powi(3) + gamma * (1.0 - gamma * gamma)) * (s + 1.0))
                - 1.0,
        )
    } else {
        let gm = gamma - 1.0;
        Some(
            (snr * snr * gm.powi(4)
                + snr * gamma * (2.0 * gamma + 1.0) * gm * gm
                + gamma.powi(4))
                / ((snr * gamma * gm.powi(3) + gamma * gamma * (gamma * gamma - 1.0))
                    * (s + 1.0))
                - 1.0,
        )
    };
    Ok(ExtremeLimits {
        gap_zero,
        gap_inf,
        s_star: s,
    })
}

/// Limiting risk of the optimally tuned ridge predictor in the isotropic
/// design/signal setting, `σ²(1 + S*)` in closed form.
pub fn ridge_optimal_risk_isotropic(snr: f64, gamma: f64, noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::Parameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let r2 = snr * noise_var;
    let t = -gamma * noise_var + r2 * (gamma - 1.0);
    let rad = (4.0 * gamma * gamma * r2 * noise_var + (gamma * noise_var - r2 * (gamma - 1.0)).powi(2))
        .sqrt();
    Ok(noise_var + (t + rad) / (2.0 * gamma))
}

/// Negative moments `E[X^-1], E[X^-2], E[X^-3]` of the limiting sample
/// covariance spectrum at aspect ratio `gamma < 1`.
pub fn mp_negative_moments(gamma: f64) -> Result<(f64, f64, f64)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!(
            "negative moments require 0 < gamma < 1, got {gamma}"
        )));
    }
    let om = 1.0 - gamma;
    Ok((1.0 / om, 1.0 / om.powi(3), (1.0 + gamma) / om.powi(5)))
}

/// Limits for the fresh-design affine self-distillation family in the
/// isotropic setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreshxLimits {
    /// Limiting normalized trace of the fresh shrinkage operator.
    pub s: f64,
    /// Limiting normalized trace of its square.
    pub s2: f64,
    /// Cross-risk limit between the teacher and the fresh PD refit.
    pub c_fr: f64,
    /// Fresh PD risk limit.
    pub r_pd_fr: f64,
    /// Optimal mixing weight for the fresh affine family.
    pub xi_fr_star: f64,
    /// Optimal fresh-affine SD risk limit.
    pub r_sd_fr_star: f64,
}

/// Fresh-design affine SD limits at one penalty (isotropic design and
/// signal, equal aspect ratios for the two designs).
pub fn freshx_isotropic_limits(
    snr: f64,
    gamma: f64,
    noise_var: f64,
    lambda: f64,
) -> Result<FreshxLimits> {
    if !(snr > 0.0 && noise_var > 0.0) {
        return Err(Error::Parameter(format!(
            "need snr > 0 and noise_var > 0, got {snr}, {noise_var}"
        )));
    }
    let (_, v, b) = isotropic_closed_forms(gamma, lambda)?;
    let r2 = snr * noise_var;
    let model = SpectralModel::isotropic(r2, noise_var, gamma)?;
    let teacher = risks_at(&model, lambda)?;
    let excess = teacher.r_teacher - noise_var;

    let lv = lambda * v;
    let s = (1.0 - lv) / gamma;
    let s2 = (1.0 - 2.0 * lv + lambda * lambda * b * v * v) / gamma;
    let c_fr = noise_var + s * excess + r2 * (1.0 - s) * (1.0 - s);
    let r_pd_fr = noise_var
        + s2 * excess
        + r2 * (1.0 - 2.0 * s * s + (2.0 * s - 1.0) * s2);
    // R - C_fr = (1-s) [excess - r²(1-s)]; D_fr = (1-2s+s2)[excess + r²(2s-1)]
    let rmc = (1.0 - s) * (excess - r2 * (1.0 - s));
    let d_fr = (1.0 - 2.0 * s + s2) * (excess + r2 * (2.0 * s - 1.0));
    let degenerate = d_fr <= 1e-12 * teacher.r_teacher.max(r_pd_fr).max(1.0);
    let (xi_fr_star, r_sd_fr_star) = if degenerate {
        (0.0, teacher.r_teacher)
    } else {
        (rmc / d_fr, teacher.r_teacher - rmc * rmc / d_fr)
    };
    Ok(FreshxLimits {
        s,
        s2,
        c_fr,
        r_pd_fr,
        xi_fr_star,
        r_sd_fr_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(p: usize, seed: u64, gamma: f64) -> SpectralModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eigs = DVector::from_fn(p, |_, _| 0.2 + 3.0 * rng.gen::<f64>());
        let proj = DVector::from_fn(p, |_, _| rng.gen::<f64>() - 0.5) / (p as f64).sqrt();
        SpectralModel::new(eigs, proj, 0.7, gamma).unwrap()
    }

    /// Verbatim evaluation of the displayed component limits; the oracle
    /// route for the regrouped engine at moderate penalties.
    fn risks_verbatim(state: &AsymptoticState, model: &SpectralModel) -> (f64, f64, f64) {
        let (k, l, b, e) = (state.kappa, state.lambda, state.b, state.e_coef);
        let s2 = model.noise_var();
        let r = k * k * b * state.q2 + s2 * state.u2 + s2;
        let c = 2.0 * k * k * b * state.q2
            - (k * b * e * state.q2 + k * k * b * b * l * state.q3)
            + s2 * (state.u2 - l * state.u3)
            + s2;
        let r_pd = 4.0 * k * k * b * state.q2
            - 2.0 * (2.0 * k * b * e * state.q2 + 2.0 * k * k * b * b * l * state.q3)
            + (state.a2 * state.q2 + state.a3 * state.q3 + state.a4 * state.q4)
            + s2 * (state.u2 - 2.0 * l * state.u3 + l * l * state.u4)
            + s2;
        (r, c, r_pd)
    }

    #[test]
    fn kappa_collapses_without_aspect() {
        let model = SpectralModel::isotropic(1.0, 1.0, 1e-12).unwrap();
        let k = solve_kappa(&model, 0.7).unwrap();
        assert!((k - 0.7).abs() < 1e-9);
    }

    #[test]
    fn kappa_isotropic_closed_form_value() {
        // frozen from the closed form ((0.5 + sqrt(4.25)) / 2)
        let model = SpectralModel::isotropic(1.0, 1.0, 0.5).unwrap();
        let k = solve_kappa(&model, 1.0).unwrap();
        assert!((k - 1.2807764064044151).abs() < 1e-9);
    }

    #[test]
    fn kappa_interpolation_limit() {
        let model = SpectralModel::isotropic(1.0, 1.0, 2.0).unwrap();
        let k = solve_kappa(&model, 1e-10).unwrap();
        assert!((k - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kappa_residual_and_monotonicity() {
        let model = random_model(40, 1, 1.7);
        let mut last = 0.0;
        for lambda in crate::linalg::log_grid(1e-3, 1e3, 40) {
            let k = solve_kappa(&model, lambda).unwrap();
            let resid = k - lambda - model.aspect() * k * model.resolvent_trace(k);
            assert!(resid.abs() <= 1e-10 * k);
            assert!(k >= lambda);
            assert!(k > last);
            last = k;
        }
    }

    #[test]
    fn functionals_isotropic_closed_forms() {
        let r2 = 2.3;
        let model = SpectralModel::isotropic(r2, 1.0, 0.8).unwrap();
        let lambda = 0.6;
        let kappa = solve_kappa(&model, lambda).unwrap();
        let st = functionals(&model, kappa, lambda).unwrap();
        for (k, t, q) in [(2, st.t2, st.q2), (3, st.t3, st.q3), (4, st.t4, st.q4)] {
            assert!((t - 0.8 / (1.0 + kappa).powi(k)).abs() < 1e-12);
            assert!((q - r2 / (1.0 + kappa).powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn functionals_vanishing_aspect() {
        let model = SpectralModel::isotropic(1.0, 1.0, 1e-12).unwrap();
        let lambda = 0.9;
        let kappa = solve_kappa(&model, lambda).unwrap();
        let st = functionals(&model, kappa, lambda).unwrap();
        assert!(st.t2 < 1e-11);
        assert!((st.b - 1.0).abs() < 1e-11);
        assert!(st.e_coef.abs() < 1e-11);
        assert!(st.u2 < 1e-11 && st.u3 < 1e-11 && st.u4 < 1e-11);
    }

    #[test]
    fn u3_is_half_negative_derivative_of_u2() {
        let model = random_model(50, 2, 1.2);
        let lambda = 0.8;
        let u2_at = |l: f64| {
            let k = solve_kappa(&model, l).unwrap();
            functionals(&model, k, l).unwrap().u2
        };
        let k = solve_kappa(&model, lambda).unwrap();
        let st = functionals(&model, k, lambda).unwrap();
        let h = 1e-5 * lambda;
        let fd = (u2_at(lambda + h) - u2_at(lambda - h)) / (2.0 * h);
        assert!(
            ((-0.5 * fd) - st.u3).abs() / st.u3.abs() < 1e-4,
            "u3 {} vs -u2'/2 {}",
            st.u3,
            -0.5 * fd
        );
    }

    #[test]
    fn stable_engine_matches_verbatim_formulas() {
        for (seed, gamma) in [(3u64, 0.4), (4, 1.0), (5, 2.5)] {
            let model = random_model(30, seed, gamma);
            for lambda in crate::linalg::log_grid(1e-2, 1e2, 17) {
                let kappa = solve_kappa(&model, lambda).unwrap();
                let st = functionals(&model, kappa, lambda).unwrap();
                let th = theoretical_risks(&st, &model);
                let (r_v, c_v, rpd_v) = risks_verbatim(&st, &model);
                let scale = r_v.abs().max(1.0);
                assert!((th.r_teacher - r_v).abs() < 1e-10 * scale);
                assert!((th.c_cross - c_v).abs() < 1e-9 * scale);
                assert!((th.r_pd - rpd_v).abs() < 1e-9 * scale);
                // E verbatim vs stable
                let e_verbatim = st.kappa - st.b * lambda
                    + st.b * st.b * st.kappa * lambda * st.t3;
                assert!((st.e_coef - e_verbatim).abs() < 1e-9 * st.kappa.max(1.0));
                // D nonnegative and risks at least the noise floor
                assert!(th.d_gap >= -1e-10);
                assert!(th.r_teacher >= model.noise_var() - 1e-12);
                assert!(th.r_sd_star >= model.noise_var() - 1e-12);
                assert!(th.r_sd_star <= th.r_teacher + 1e-12);
            }
        }
    }

    #[test]
    fn sign_rule_flips_at_critical_lambda() {
        // isotropic: xi* > 0 iff lambda < gamma sigma²/r², zero at equality
        let (r2, s2, gamma) = (2.0, 1.0, 0.5);
        let model = SpectralModel::isotropic(r2, s2, gamma).unwrap();
        let lambda_star = gamma * s2 / r2;
        let at = |l: f64| risks_at(&model, l).unwrap();
        assert!(at(lambda_star * 0.3).xi_star > 0.0);
        assert!(at(lambda_star * 3.0).xi_star < 0.0);
        let touch = at(lambda_star);
        assert!(touch.xi_star.abs() < 1e-10);
        assert!((touch.r_sd_star - touch.r_teacher).abs() < 1e-12 * touch.r_teacher);
    }

    #[test]
    fn isotropic_specialization_matches_general_engine() {
        // a p-dimensional all-ones spectrum must agree with the single-atom
        // isotropic surrogate term by term
        let r2 = 1.5;
        let p = 64;
        let model_p = SpectralModel::new(
            DVector::from_element(p, 1.0),
            DVector::from_element(p, (r2 / p as f64).sqrt()),
            0.9,
            0.7,
        )
        .unwrap();
        let model_1 = SpectralModel::isotropic(r2, 0.9, 0.7).unwrap();
        for lambda in [0.05, 0.5, 5.0] {
            let a = risks_at(&model_p, lambda).unwrap();
            let b = risks_at(&model_1, lambda).unwrap();
            assert!((a.r_teacher - b.r_teacher).abs() < 1e-10);
            assert!((a.c_cross - b.c_cross).abs() < 1e-10);
            assert!((a.r_pd - b.r_pd).abs() < 1e-10);
            // and the closed forms agree with the solved fixed point
            let (kappa_cf, v, bb) = isotropic_closed_forms(0.7, lambda).unwrap();
            let kappa = solve_kappa(&model_1, lambda).unwrap();
            assert!((kappa - kappa_cf).abs() < 1e-10 * kappa_cf);
            assert!((v * kappa_cf - 1.0).abs() < 1e-12);
            let st = functionals(&model_1, kappa, lambda).unwrap();
            assert!((bb - st.b).abs() < 1e-10 * st.b);
        }
    }

    #[test]
    fn closed_form_kappa_extremes() {
        let (kappa, v, _) = isotropic_closed_forms(0.5, 1.0).unwrap();
        assert!((kappa - 1.2807764064044151).abs() < 1e-12);
        assert!((v - 1.0 / kappa).abs() < 1e-14);
        // large-lambda: kappa/lambda -> 1
        let (kappa, _, _) = isotropic_closed_forms(0.5, 1e9).unwrap();
        assert!((kappa / 1e9 - 1.0).abs() < 1e-6);
        // gamma = 1, lambda -> 0: kappa ~ sqrt(lambda) -> 0
        let (kappa, _, _) = isotropic_closed_forms(1.0, 1e-10).unwrap();
        assert!((kappa - 1e-5).abs() < 1e-9);
        // b matches a finite difference of kappa(lambda)
        let h = 1e-6;
        let (k_hi, _, _) = isotropic_closed_forms(0.5, 1.0 + h).unwrap();
        let (k_lo, _, _) = isotropic_closed_forms(0.5, 1.0 - h).unwrap();
        let (_, _, b) = isotropic_closed_forms(0.5, 1.0).unwrap();
        assert!((b - (k_hi - k_lo) / (2.0 * h)).abs() < 1e-8);
    }

    #[test]
    fn s_star_plugin_value() {
        assert!((s_star(2.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn extreme_gap_small_for_reference_pair() {
        let lim = extreme_limits(2.0, 0.2).unwrap();
        let gz = lim.gap_zero.unwrap();
        assert!(gz > 0.0 && gz <= 1e-4, "gap_zero {gz}");
    }

    #[test]
    fn extreme_limits_gamma_one_has_no_zero_limit() {
        let lim = extreme_limits(2.0, 1.0).unwrap();
        assert!(lim.gap_zero.is_none());
        assert!(lim.gap_inf.is_finite());
    }

    #[test]
    fn ridge_optimal_risk_examples() {
        // no signal: risk tends to the noise floor
        assert!((ridge_optimal_risk_isotropic(1e-14, 0.5, 1.3).unwrap() - 1.3).abs() < 1e-6);
        // gamma=1, r²=2, σ²=1 → 2
        assert!((ridge_optimal_risk_isotropic(2.0, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_optimal_matches_grid_minimum_of_engine() {
        let (snr, gamma, s2) = (2.0, 0.5, 1.0);
        let closed = ridge_optimal_risk_isotropic(snr, gamma, s2).unwrap();
        let model = SpectralModel::isotropic(snr * s2, s2, gamma).unwrap();
        let mut best = f64::INFINITY;
        for lambda in crate::linalg::log_grid(1e-4, 1e4, 4000) {
            best = best.min(risks_at(&model, lambda).unwrap().r_teacher);
        }
        assert!((best - closed).abs() / closed < 1e-4);
    }

    #[test]
    fn mp_moment_values() {
        let (m1, m2, m3) = mp_negative_moments(0.5).unwrap();
        assert_eq!((m1, m2, m3), (2.0, 8.0, 48.0));
        let (m1, m2, m3) = mp_negative_moments(1e-9).unwrap();
        assert!((m1 - 1.0).abs() < 1e-8 && (m2 - 1.0).abs() < 1e-8 && (m3 - 1.0).abs() < 1e-7);
        assert!(mp_negative_moments(1.0).is_err());
        assert!(mp_negative_moments(1.5).is_err());
    }

    #[test]
    fn freshx_shrinkage_limits() {
        // total shrinkage at huge penalty
        let f = freshx_isotropic_limits(2.0, 0.5, 1.0, 1e9).unwrap();
        assert!(f.s < 1e-8 && f.s2 < 1e-8);
        // identity limit for gamma < 1 at vanishing penalty
        let f = freshx_isotropic_limits(2.0, 0.5, 1.0, 1e-10).unwrap();
        assert!((f.s - 1.0).abs() < 1e-8);
    }

    #[test]
    fn freshx_trace_identities() {
        for lambda in [0.03, 0.7, 12.0] {
            let gamma = 0.8;
            let f = freshx_isotropic_limits(1.5, gamma, 1.0, lambda).unwrap();
            let (kappa, v, b) = isotropic_closed_forms(gamma, lambda).unwrap();
            // s = 1/(1+kappa) via the fixed point
            assert!((f.s - 1.0 / (1.0 + kappa)).abs() < 1e-12);
            // s2 via v'(lambda) = -b v²
            let s2_alt = (1.0 - 2.0 * lambda * v + lambda * lambda * b * v * v) / gamma;
            assert!((f.s2 - s2_alt).abs() < 1e-14);
            // factored C_fr / R_pd_fr agree with the optimal-mix recomputation
            let d_direct = risks_at(
                &SpectralModel::isotropic(1.5, 1.0, gamma).unwrap(),
                lambda,
            )
            .unwrap()
            .r_teacher
                + f.r_pd_fr
                - 2.0 * f.c_fr;
            let rmc_direct = risks_at(
                &SpectralModel::isotropic(1.5, 1.0, gamma).unwrap(),
                lambda,
            )
            .unwrap()
            .r_teacher
                - f.c_fr;
            assert!((f.xi_fr_star - rmc_direct / d_direct).abs() < 1e-8 * (1.0 + f.xi_fr_star.abs()));
        }
    }

    #[test]
    fn same_design_dominates_fresh_design() {
        for gamma in [0.5, 1.0, 2.0] {
            for snr in [0.5, 2.0, 5.0] {
                let model = SpectralModel::isotropic(snr, 1.0, gamma).unwrap();
                for lambda in crate::linalg::log_grid(1e-2, 1e2, 25) {
                    let same = risks_at(&model, lambda).unwrap();
                    let fresh = freshx_isotropic_limits(snr, gamma, 1.0, lambda).unwrap();
                    assert!(
                        same.r_sd_star <= fresh.r_sd_fr_star + 1e-12,
                        "gamma {gamma} snr {snr} lambda {lambda}: same {} > fresh {}",
                        same.r_sd_star,
                        fresh.r_sd_fr_star
                    );
                }
            }
        }
    }
}
