//! End-to-end screening of one dataset.

use crate::data::{validate_dataset, Dataset, Diagnostic};
use crate::error::Result;
use crate::fit::{converged_estimates, fit_biomarkers, profile_all, BiomarkerFit, FitContext, ProfileMethod, ProfileTable};
use crate::loss::LossKind;
use crate::prior_em::{em_fit, select_knots, EmOptions, EmTrace, KnotGrid, MixturePrior};
use crate::propensity::{compute_weights, Propensity, PropensitySpec, WeightSet};
use crate::screening::{competitor_stats, screen, CompetitorStat, ScreeningResult};

pub const DEFAULT_FDR_LEVELS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenConfig {
    /// `None` picks binomial for binary outcomes and Cox for survival outcomes.
    pub loss: Option<LossKind>,
    pub method: ProfileMethod,
    pub knots: usize,
    pub fdr_levels: Vec<f64>,
    pub em: EmOptions,
    pub propensity: PropensitySpec,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            loss: None,
            method: ProfileMethod::Plugin,
            knots: 100,
            fdr_levels: DEFAULT_FDR_LEVELS.to_vec(),
            em: EmOptions::default(),
            propensity: PropensitySpec::default(),
            seed: 1,
            workers: 0,
        }
    }
}

/// Prior estimation and ranking for one profile method and knot count.
#[derive(Debug, Clone)]
pub struct OdpRun {
    pub method: ProfileMethod,
    pub grid: KnotGrid,
    pub tables: Vec<ProfileTable>,
    pub prior: MixturePrior,
    pub trace: EmTrace,
    pub result: ScreeningResult,
}

/// Everything produced by a screening run.
#[derive(Debug, Clone)]
pub struct ScreenOutput {
    pub kind: LossKind,
    pub diagnostics: Vec<Diagnostic>,
    pub propensity: Propensity,
    pub weights: WeightSet,
    pub fits: Vec<BiomarkerFit>,
    pub competitors: Vec<CompetitorStat>,
    pub odp: OdpRun,
}

/// Knots, profiles, EM and selection on top of existing first-pass fits.
#[allow(clippy::too_many_arguments)]
pub fn odp_from_fits(
    ctx: &FitContext<'_>,
    fits: &[BiomarkerFit],
    competitors: &[CompetitorStat],
    method: ProfileMethod,
    num_knots: usize,
    em: &EmOptions,
    levels: &[f64],
    workers: usize,
) -> Result<OdpRun> {
    let grid = select_knots(&converged_estimates(fits), num_knots)?;
    let tables = profile_all(ctx, fits, method, &grid.a, workers)?;
    let init = MixturePrior::initial(grid.clone());
    let (prior, trace) = em_fit(&tables, &init, em)?;
    if !trace.converged {
        log::warn!(
            "EM stopped after {} iterations without reaching tolerance {:e}",
            trace.iterations,
            em.tol
        );
    }
    let result = screen(fits, &tables, &prior, competitors, levels)?;
    if let Err(e) = result.check_invariants() {
        log::warn!("screening invariant check failed: {e}");
    }
    Ok(OdpRun {
        method,
        grid,
        tables,
        prior,
        trace,
        result,
    })
}

pub fn run_screen(d: &Dataset, cfg: &ScreenConfig) -> Result<ScreenOutput> {
    let kind = cfg.loss.unwrap_or_else(|| LossKind::default_for(d.outcomes()));
    kind.check_compatible(d.outcomes())?;
    let diagnostics = validate_dataset(d);
    for diag in &diagnostics {
        match diag {
            Diagnostic::CensoringFraction(_) => log::info!("{diag}"),
            _ => log::warn!("{diag}"),
        }
    }
    let propensity = cfg.propensity.resolve(d, cfg.seed)?;
    let weights = compute_weights(d.treatment(), &propensity.probabilities)?;
    let ctx = FitContext::new(d, &weights, kind)?;
    let fits = fit_biomarkers(&ctx, cfg.workers);
    let flagged = fits.iter().filter(|f| !f.converged()).count();
    if flagged > 0 {
        log::warn!("{flagged} biomarker fits flagged and excluded from the prior");
    }
    let competitors = competitor_stats(d, kind, &fits, cfg.workers)?;
    let em = EmOptions {
        workers: cfg.workers,
        ..cfg.em.clone()
    };
    let odp = odp_from_fits(&ctx, &fits, &competitors, cfg.method, cfg.knots, &em, &cfg.fdr_levels, cfg.workers)?;
    Ok(ScreenOutput {
        kind,
        diagnostics,
        propensity,
        weights,
        fits,
        competitors,
        odp,
    })
}
