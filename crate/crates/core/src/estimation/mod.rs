//! Parameter estimation for both choice models.

pub mod blr;
pub mod cpt_fit;
pub mod dataset;
pub mod diagnostics;
pub mod nuts;
pub mod optimize;

pub use blr::{blr_map, blr_posterior, intercept_unbounded, BlrPosterior, MapConfig, PosteriorConfig, PosteriorSummary};
pub use cpt_fit::{fit_cpt, nll, nll_gradient, FitConfig, FitResult, LocalOptimum};
pub use dataset::{rmse, ChoiceDataset, LevelCounts, RmsePoints};
