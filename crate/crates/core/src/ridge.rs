//! Ridge teacher, pure-distilled refit, affine self-distillation path, and
//! hat-matrix traces, all driven by a single spectral factorization of the
//! sample covariance.
//!
//! The solver factorizes once and then serves any number of penalty values:
//! for `p <= n` it eigendecomposes `XᵀX/n`, otherwise `XXᵀ/n` and maps the
//! basis through `Xᵀ`, so each per-lambda solve costs `O(p·min(n,p))`.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{clamp_eigenvalues, sym_eigen_desc};

/// Relative threshold below which sample-covariance eigenvalues are treated
/// as exact zeros.
const EIG_CLAMP: f64 = 1e-12;

/// Which smoothing family produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFamily {
    Ordinary,
    Generalized,
}

/// Ridge coefficients at one penalty value.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub family: FitFamily,
}

impl RidgeFit {
    pub fn predict(&self, x0: &DVector<f64>) -> f64 {
        self.beta.dot(x0)
    }
}

/// Self-distilled prediction on the affine path between a teacher and its
/// pure-distilled refit: `(1-xi) f(x0) + xi f_pd(x0)`.
pub fn sd_predict(teacher: &RidgeFit, pd: &RidgeFit, xi: f64, x0: &DVector<f64>) -> f64 {
    (1.0 - xi) * teacher.predict(x0) + xi * pd.predict(x0)
}

/// Precomputed spectral factorization of the sample covariance
/// `Σ̂ = XᵀX/n`, reusable across a whole penalty grid.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    /// Eigenvalues of `Σ̂`, descending, length `min(n,p)`, clamped at
    /// `1e-12 · max` to exact zeros.
    eigenvalues: DVector<f64>,
    /// Orthonormal columns spanning the corresponding eigendirections
    /// (`p x min(n,p)`; the full basis when `p <= n`).
    eigenvectors: DMatrix<f64>,
    /// `Vᵀ (Xᵀ y / n)`.
    rotated_crossmoment: DVector<f64>,
    n: usize,
    p: usize,
}

impl RidgeSolver {
    pub fn new(data: &Dataset) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        let x = data.x();
        let crossmoment = x.tr_mul(data.y()) / n as f64;

        let (mut vals, vecs) = if p <= n {
            let sigma_hat = x.tr_mul(x) / n as f64;
            sym_eigen_desc(sigma_hat)
        } else {
            // Gram-side factorization plus push-through: nonzero eigenpairs
            // of XᵀX/n are (mu_i, Xᵀu_i / sqrt(n·mu_i)).
            let gram = (x * x.transpose()) / n as f64;
            let (mut mu, u) = sym_eigen_desc(gram);
            clamp_eigenvalues(&mut mu, EIG_CLAMP);
            let mut v = DMatrix::zeros(p, n);
            for i in 0..n {
                let col = x.tr_mul(&u.column(i).clone_owned());
                let norm = col.norm();
                if mu[i] > 0.0 && norm > 0.0 {
                    v.set_column(i, &(col / norm));
                }
            }
            (mu, v)
        };
        clamp_eigenvalues(&mut vals, EIG_CLAMP);
        let rotated = vecs.tr_mul(&crossmoment);
        Ok(Self {
            eigenvalues: vals,
            eigenvectors: vecs,
            rotated_crossmoment: rotated,
            n,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Eigenvalues of `Σ̂`, descending, length `min(n,p)`.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    fn check_lambda(lambda: f64) -> Result<()> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "ridge penalty must be positive and finite, got {lambda}"
            )));
        }
        Ok(())
    }

    /// Teacher fit `β_λ = (Σ̂ + λI)⁻¹ Xᵀy/n`.
    pub fn fit(&self, lambda: f64) -> Result<RidgeFit> {
        Self::check_lambda(lambda)?;
        Ok(self.fit_rotated(&self.rotated_crossmoment, lambda))
    }

    fn fit_rotated(&self, rotated: &DVector<f64>, lambda: f64) -> RidgeFit {
        let coords = DVector::from_fn(rotated.len(), |i, _| {
            rotated[i] / (self.eigenvalues[i] + lambda)
        });
        RidgeFit {
            lambda,
            beta: &self.eigenvectors * coords,
            family: FitFamily::Ordinary,
        }
    }

    /// Ridge fit on an arbitrary label vector, sharing the factorization.
    pub fn fit_labels(&self, data: &Dataset, labels: &DVector<f64>, lambda: f64) -> Result<RidgeFit> {
        Self::check_lambda(lambda)?;
        self.check_data(data)?;
        if labels.len() != self.n {
            return Err(Error::Dimension(format!(
                "labels have {} entries, expected {}",
                labels.len(),
                self.n
            )));
        }
        let crossmoment = data.x().tr_mul(labels) / self.n as f64;
        let rotated = self.eigenvectors.tr_mul(&crossmoment);
        Ok(self.fit_rotated(&rotated, lambda))
    }

    /// Pure-distilled refit: ridge retrained on the teacher's own fitted
    /// values, `β_pd = (I - λQ_λ) β_λ`.
    pub fn pd_refit(&self, fit: &RidgeFit) -> Result<RidgeFit> {
        if fit.beta.len() != self.p {
            return Err(Error::Dimension(format!(
                "fit has p={} but solver has p={}",
                fit.beta.len(),
                self.p
            )));
        }
        let rotated = self.eigenvectors.tr_mul(&fit.beta);
        let coords = DVector::from_fn(rotated.len(), |i, _| {
            let s = self.eigenvalues[i];
            rotated[i] * s / (s + fit.lambda)
        });
        Ok(RidgeFit {
            lambda: fit.lambda,
            beta: &self.eigenvectors * coords,
            family: fit.family,
        })
    }

    /// Ridge fit on the mixed labels `(1-xi) y + xi ŷ_λ`. By linearity this
    /// equals the affine combination `(1-xi) β_λ + xi β_pd,λ`; fitting the
    /// mixed labels directly keeps that identity testable.
    pub fn mixed_label_fit(&self, data: &Dataset, lambda: f64, xi: f64) -> Result<RidgeFit> {
        Self::check_lambda(lambda)?;
        self.check_data(data)?;
        let teacher = self.fit(lambda)?;
        let y_hat = self.fitted(data, &teacher)?;
        let labels = DVector::from_fn(self.n, |i, _| (1.0 - xi) * data.y()[i] + xi * y_hat[i]);
        self.fit_labels(data, &labels, lambda)
    }

    /// Closed-form path derivative `∂_λ β_λ = -Q_λ β_λ`. Satisfies the
    /// tangent identity `β_λ - β_pd,λ = -λ ∂_λ β_λ`.
    pub fn lambda_derivative(&self, fit: &RidgeFit) -> Result<DVector<f64>> {
        if fit.family != FitFamily::Ordinary {
            return Err(Error::Parameter(
                "closed-form lambda derivative on the solver requires an ordinary fit".into(),
            ));
        }
        if fit.beta.len() != self.p {
            return Err(Error::Dimension("fit/solver dimension mismatch".into()));
        }
        let rotated = self.eigenvectors.tr_mul(&fit.beta);
        let coords = DVector::from_fn(rotated.len(), |i, _| {
            -rotated[i] / (self.eigenvalues[i] + fit.lambda)
        });
        Ok(&self.eigenvectors * coords)
    }

    /// Effective degrees of freedom of the teacher and the PD refit:
    /// `df = tr(H_λ) = Σ s/(s+λ)` and `df_pd = tr(H_λ²) = Σ (s/(s+λ))²`,
    /// summed over the `min(n,p)` stored eigendirections.
    pub fn hat_traces(&self, lambda: f64) -> Result<(f64, f64)> {
        Self::check_lambda(lambda)?;
        let mut df = 0.0;
        let mut df_pd = 0.0;
        for &s in self.eigenvalues.iter() {
            let h = s / (s + lambda);
            df += h;
            df_pd += h * h;
        }
        Ok((df, df_pd))
    }

    /// Fitted values `Xβ` on the training design.
    pub fn fitted(&self, data: &Dataset, fit: &RidgeFit) -> Result<DVector<f64>> {
        self.check_data(data)?;
        if fit.beta.len() != self.p {
            return Err(Error::Dimension("fit/solver dimension mismatch".into()));
        }
        Ok(data.x() * &fit.beta)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n() != self.n || data.p() != self.p {
            return Err(Error::Dimension(format!(
                "dataset is {}x{} but solver was built for {}x{}",
                data.n(),
                data.p(),
                self.n,
                self.p
            )));
        }
        Ok(())
    }
}
