//! Penalized surrogate-loss solvers built on one coordinate-descent engine.

pub mod adaptive;
pub mod cd;
pub mod loss;
pub mod path;

pub use adaptive::{
    adaptive_weights, fit_adaptive_l1, fit_ridge_cv, log_grid, margins, AugmentedContext, AugmentedFit, RidgeFit, RIDGE_SMOOTHING,
    W_MAX,
};
pub use cd::{CdOptions, CdReport, CdState, MarginProblem, Penalty, SignedDesign};
pub use loss::{SmoothLoss, SurrogateLoss, HINGE_SMOOTHING};
pub use path::{l1_lambda_max, l1_logistic_path, path_model_selector, select_model, select_model_on, L1Path, PathOptions, PathPoint};
