//! Empirical-Bayes screening of predictive biomarkers in randomized and observational
//! studies.
//!
//! Each candidate biomarker gets a propensity-weighted interaction model. The per-marker
//! profile likelihoods feed a nonparametric mixture prior fitted by EM, and biomarkers
//! are ranked by the optimal discovery statistic with model-based FDR control.

pub mod cli;
pub mod data;
pub mod error;
pub mod fit;
pub mod lasso;
pub mod loss;
mod newton;
pub mod prior_em;
pub mod pipeline;
pub mod propensity;
pub mod report;
pub mod screening;
pub mod simulation;

pub use data::{load_dataset, write_dataset, Dataset, Outcome, Outcomes, Schema};
pub use error::{Error, Result};
pub use fit::{fit_all, BiomarkerFit, FitStatus, ProfileMethod, ProfileTable};
pub use loss::LossKind;
pub use pipeline::{run_screen, ScreenConfig, ScreenOutput};
pub use prior_em::{em_fit, EmOptions, KnotGrid, MStep, MixturePrior};
pub use propensity::{compute_weights, PropensitySpec, WeightSet};
pub use screening::{qvalues, select_at_fdr, ScreeningResult, SelectionSet};
pub use simulation::{run_benchmark, simulate, SimConfig, SimOutcome};

/// Runs `f` on the global rayon pool when `workers == 0`, otherwise on a dedicated pool
/// of that size.
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}
