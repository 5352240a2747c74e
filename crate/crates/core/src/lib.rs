//! Self-distillation for ridge regression with unconstrained mixing: the
//! closed-form optimal mixing weight along the regularization path, one-shot
//! tuning from training data via trace-corrected residuals, deterministic
//! risk limits in the proportional regime, multi-round and fresh-design
//! variants, generalized and kernel smoother families, and a seeded
//! Monte-Carlo harness comparing finite-sample behavior against the limits.

pub mod asymptotics;
pub mod dataset;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ridge;
pub mod sim;
pub mod smoother;
pub mod structural;
pub mod tuning;
pub mod variants;

pub use dataset::{standardize, Dataset, StandardizeStats};
pub use error::{Error, Result};
pub use ridge::{sd_predict, FitFamily, RidgeFit, RidgeSolver};
pub use smoother::{Bandwidth, GeneralizedRidge, KernelBase, KernelRidge, OrdinarySmoother, Smoother};
pub use structural::{
    curvature_test, optimal_mix, risk_components_empirical, risk_components_from_predictions,
    risk_components_oracle, risk_slope, sd_risk_at, CurvatureOutcome, MixResult, RiskComponents,
};
pub use tuning::{gcv_residuals, one_shot, one_shot_with_solver, GcvEstimates};
