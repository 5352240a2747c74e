//! Linear-smoother families along a regularization path: ordinary ridge,
//! generalized (Tikhonov) ridge, and kernel ridge.
//!
//! Every family exposes the teacher prediction `f_λ(x) = s_λ(x)ᵀ y`, the
//! pure-distilled prediction obtained by applying the smoother to its own
//! fitted values, the closed-form path derivative `∂_λ f_λ(x)`, and the hat
//! traces `tr(H_λ)`, `tr(H_λ²)`. All three satisfy the tangent identity
//! `f_λ(x) - f_pd,λ(x) = -λ ∂_λ f_λ(x)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{median_pairwise_distance, sym_eigen_desc};
use crate::ridge::{FitFamily, RidgeFit, RidgeSolver};

/// Common surface of the resolvent-based smoothing families.
pub trait Smoother {
    fn lambda(&self) -> f64;
    fn n(&self) -> usize;
    /// Teacher prediction at a point.
    fn predict(&self, x0: &DVector<f64>) -> f64;
    /// Pure-distilled prediction at a point.
    fn predict_pd(&self, x0: &DVector<f64>) -> f64;
    /// Closed-form derivative of the teacher prediction along the path.
    fn lambda_derivative_at(&self, x0: &DVector<f64>) -> f64;
    /// Smoother weights `s_λ(x)`: the n-vector with `f_λ(x) = s_λ(x)ᵀ y`.
    fn smoother_weights(&self, x0: &DVector<f64>) -> DVector<f64>;
    /// Fitted values `H_λ y` on the training set.
    fn fitted(&self) -> &DVector<f64>;
    /// PD fitted values `H_λ² y`.
    fn fitted_pd(&self) -> &DVector<f64>;
    /// `tr(H_λ)`.
    fn hat_trace(&self) -> f64;
    /// `tr(H_λ²)`.
    fn hat_sq_trace(&self) -> f64;
}

// ---------------------------------------------------------------------------
// Ordinary ridge
// ---------------------------------------------------------------------------

/// Ordinary ridge viewed as a linear smoother, backed by a shared
/// [`RidgeSolver`] factorization.
pub struct OrdinarySmoother<'a> {
    data: &'a Dataset,
    solver: &'a RidgeSolver,
    lambda: f64,
    fit: RidgeFit,
    pd: RidgeFit,
    fitted: DVector<f64>,
    fitted_pd: DVector<f64>,
}

impl<'a> OrdinarySmoother<'a> {
    pub fn new(data: &'a Dataset, solver: &'a RidgeSolver, lambda: f64) -> Result<Self> {
        let fit = solver.fit(lambda)?;
        let pd = solver.pd_refit(&fit)?;
        let fitted = solver.fitted(data, &fit)?;
        let fitted_pd = solver.fitted(data, &pd)?;
        Ok(Self {
            data,
            solver,
            lambda,
            fit,
            pd,
            fitted,
            fitted_pd,
        })
    }

    pub fn fit(&self) -> &RidgeFit {
        &self.fit
    }

    pub fn pd_fit(&self) -> &RidgeFit {
        &self.pd
    }
}

impl Smoother for OrdinarySmoother<'_> {
    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn predict(&self, x0: &DVector<f64>) -> f64 {
        self.fit.predict(x0)
    }

    fn predict_pd(&self, x0: &DVector<f64>) -> f64 {
        self.pd.predict(x0)
    }

    fn lambda_derivative_at(&self, x0: &DVector<f64>) -> f64 {
        self.solver
            .lambda_derivative(&self.fit)
            .expect("fit built by this solver")
            .dot(x0)
    }

    fn smoother_weights(&self, x0: &DVector<f64>) -> DVector<f64> {
        // s_λ(x) = X Q_λ x / n, assembled in the eigenbasis.
        let rotated = self.solver.eigenvectors().tr_mul(x0);
        let coords = DVector::from_fn(rotated.len(), |i, _| {
            rotated[i] / (self.solver.eigenvalues()[i] + self.lambda)
        });
        self.data.x() * (self.solver.eigenvectors() * coords) / self.data.n() as f64
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn fitted_pd(&self) -> &DVector<f64> {
        &self.fitted_pd
    }

    fn hat_trace(&self) -> f64 {
        self.solver.hat_traces(self.lambda).expect("lambda checked").0
    }

    fn hat_sq_trace(&self) -> f64 {
        self.solver.hat_traces(self.lambda).expect("lambda checked").1
    }
}

// ---------------------------------------------------------------------------
// Generalized (Tikhonov) ridge
// ---------------------------------------------------------------------------

/// Generalized ridge with penalty operator `Ω ≻ 0`:
/// `f_λ(x) = xᵀ (XᵀX + nλΩ)⁻¹ Xᵀ y`.
///
/// `Ω` need not commute with the sample covariance, so each penalty value is
/// solved by a fresh Cholesky factorization of `XᵀX + nλΩ`.
pub struct GeneralizedRidge<'a> {
    data: &'a Dataset,
    omega: &'a DMatrix<f64>,
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    beta_pd: DVector<f64>,
    fitted: DVector<f64>,
    fitted_pd: DVector<f64>,
    xtx: DMatrix<f64>,
}

impl<'a> GeneralizedRidge<'a> {
    pub fn new(data: &'a Dataset, omega: &'a DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("penalty must be positive, got {lambda}")));
        }
        let p = data.p();
        if omega.nrows() != p || omega.ncols() != p {
            return Err(Error::Dimension(format!(
                "penalty operator is {}x{}, expected {p}x{p}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        if (omega - omega.transpose()).norm() > 1e-10 * omega.norm().max(1.0) {
            return Err(Error::Data("penalty operator must be symmetric".into()));
        }
        let n = data.n() as f64;
        let xtx = data.x().tr_mul(data.x());
        let a = &xtx + omega * (n * lambda);
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Data("XᵀX + nλΩ is not positive definite".into()))?;
        let xty = data.x().tr_mul(data.y());
        let beta = chol.solve(&xty);
        let beta_pd = chol.solve(&(&xtx * &beta));
        let fitted = data.x() * &beta;
        let fitted_pd = data.x() * &beta_pd;
        Ok(Self {
            data,
            omega,
            lambda,
            chol,
            beta,
            beta_pd,
            fitted,
            fitted_pd,
            xtx,
        })
    }

    pub fn fit(&self) -> RidgeFit {
        RidgeFit {
            lambda: self.lambda,
            beta: self.beta.clone(),
            family: FitFamily::Generalized,
        }
    }

    pub fn pd_fit(&self) -> RidgeFit {
        RidgeFit {
            lambda: self.lambda,
            beta: self.beta_pd.clone(),
            family: FitFamily::Generalized,
        }
    }

    /// Closed-form coefficient derivative `∂_λ β_λ = -n A⁻¹ Ω β_λ`.
    pub fn beta_derivative(&self) -> DVector<f64> {
        let rhs = self.omega * &self.beta * self.data.n() as f64;
        -self.chol.solve(&rhs)
    }
}

impl Smoother for GeneralizedRidge<'_> {
    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn predict(&self, x0: &DVector<f64>) -> f64 {
        self.beta.dot(x0)
    }

    fn predict_pd(&self, x0: &DVector<f64>) -> f64 {
        self.beta_pd.dot(x0)
    }

    fn lambda_derivative_at(&self, x0: &DVector<f64>) -> f64 {
        self.beta_derivative().dot(x0)
    }

    fn smoother_weights(&self, x0: &DVector<f64>) -> DVector<f64> {
        self.data.x() * self.chol.solve(x0)
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn fitted_pd(&self) -> &DVector<f64> {
        &self.fitted_pd
    }

    fn hat_trace(&self) -> f64 {
        // tr(X A⁻¹ Xᵀ) = tr(A⁻¹ XᵀX)
        self.chol.solve(&self.xtx).trace()
    }

    fn hat_sq_trace(&self) -> f64 {
        let m = self.chol.solve(&self.xtx);
        (&m * &m).trace()
    }
}

// ---------------------------------------------------------------------------
// Kernel ridge
// ---------------------------------------------------------------------------

/// Gaussian kernel bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of pairwise Euclidean distances between training rows.
    Median,
    Fixed(f64),
}

/// Shared, penalty-independent state for Gaussian kernel ridge: the kernel
/// matrix eigendecomposition is computed once and reused along the path.
pub struct KernelBase<'a> {
    data: &'a Dataset,
    bandwidth: f64,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    rotated_y: DVector<f64>,
}

impl<'a> KernelBase<'a> {
    pub fn new(data: &'a Dataset, bandwidth: Bandwidth) -> Result<Self> {
        let h = match bandwidth {
            Bandwidth::Median => median_pairwise_distance(data.x()),
            Bandwidth::Fixed(v) => v,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("bandwidth must be positive, got {h}")));
        }
        let n = data.n();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let mut d2 = 0.0;
                for c in 0..data.p() {
                    let d = data.x()[(i, c)] - data.x()[(j, c)];
                    d2 += d * d;
                }
                let v = (-d2 / (2.0 * h * h)).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let (mut vals, vecs) = sym_eigen_desc(k);
        // PSD enforcement against roundoff: jitter if the smallest eigenvalue
        // dips below the tolerance.
        let jitter_tol = 1e-10 * vals.sum() / n as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -jitter_tol {
            for v in vals.iter_mut() {
                *v += jitter_tol;
            }
        }
        for v in vals.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rotated_y = vecs.tr_mul(data.y());
        Ok(Self {
            data,
            bandwidth: h,
            eigvals: vals,
            eigvecs: vecs,
            rotated_y,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn at_lambda(&self, lambda: f64) -> Result<KernelRidge<'_>> {
        KernelRidge::new(self, lambda)
    }

    fn kernel_row(&self, x0: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.data.n(), |i, _| {
            let mut d2 = 0.0;
            for c in 0..self.data.p() {
                let d = self.data.x()[(i, c)] - x0[c];
                d2 += d * d;
            }
            (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
        })
    }
}

/// Kernel ridge at one penalty: `f_λ(x) = k_xᵀ (K + nλI)⁻¹ y`.
pub struct KernelRidge<'a> {
    base: &'a KernelBase<'a>,
    lambda: f64,
    /// Dual coefficients `α = (K + nλI)⁻¹ y`.
    alpha: DVector<f64>,
    /// `(K + nλI)⁻¹ α`, used by the closed-form path derivative.
    alpha2: DVector<f64>,
    /// `(K + nλI)⁻¹ K α`, the PD dual coefficients.
    alpha_pd: DVector<f64>,
    fitted: DVector<f64>,
    fitted_pd: DVector<f64>,
}

impl<'a> KernelRidge<'a> {
    fn new(base: &'a KernelBase<'a>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("penalty must be positive, got {lambda}")));
        }
        let n = base.data.n() as f64;
        let d = &base.eigvals;
        let shift = n * lambda;
        let coords = DVector::from_fn(d.len(), |i, _| base.rotated_y[i] / (d[i] + shift));
        let alpha = &base.eigvecs * &coords;
        let coords2 = DVector::from_fn(d.len(), |i, _| coords[i] / (d[i] + shift));
        let alpha2 = &base.eigvecs * coords2;
        let coords_pd = DVector::from_fn(d.len(), |i, _| coords[i] * d[i] / (d[i] + shift));
        let alpha_pd = &base.eigvecs * &coords_pd;
        let fitted = &base.eigvecs * DVector::from_fn(d.len(), |i, _| coords[i] * d[i]);
        let fitted_pd =
            &base.eigvecs * DVector::from_fn(d.len(), |i, _| coords_pd[i] * d[i]);
        Ok(Self {
            base,
            lambda,
            alpha,
            alpha2,
            alpha_pd,
            fitted,
            fitted_pd,
        })
    }
}

impl Smoother for KernelRidge<'_> {
    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn n(&self) -> usize {
        self.base.data.n()
    }

    fn predict(&self, x0: &DVector<f64>) -> f64 {
        self.base.kernel_row(x0).dot(&self.alpha)
    }

    fn predict_pd(&self, x0: &DVector<f64>) -> f64 {
        self.base.kernel_row(x0).dot(&self.alpha_pd)
    }

    fn lambda_derivative_at(&self, x0: &DVector<f64>) -> f64 {
        // ∂_λ f(x) = -n k_xᵀ (K + nλI)⁻² y
        -(self.base.data.n() as f64) * self.base.kernel_row(x0).dot(&self.alpha2)
    }

    fn smoother_weights(&self, x0: &DVector<f64>) -> DVector<f64> {
        let rotated = self.base.eigvecs.tr_mul(&self.base.kernel_row(x0));
        let shift = self.base.data.n() as f64 * self.lambda;
        let coords = DVector::from_fn(rotated.len(), |i, _| {
            rotated[i] / (self.base.eigvals[i] + shift)
        });
        &self.base.eigvecs * coords
    }

    fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    fn fitted_pd(&self) -> &DVector<f64> {
        &self.fitted_pd
    }

    fn hat_trace(&self) -> f64 {
        let shift = self.base.data.n() as f64 * self.lambda;
        self.base.eigvals.iter().map(|&d| d / (d + shift)).sum()
    }

    fn hat_sq_trace(&self) -> f64 {
        let shift = self.base.data.n() as f64 * self.lambda;
        self.base
            .eigvals
            .iter()
            .map(|&d| (d / (d + shift)).powi(2))
            .sum()
    }
}
