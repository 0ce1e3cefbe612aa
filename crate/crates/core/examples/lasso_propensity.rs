//! Cross-validated lasso-logistic propensity estimation on a trial where treatment
//! depends on two biomarkers and a confounder.

use odpscreen::propensity::estimate_propensity_lasso;
use odpscreen::simulation::{replication_rng, simulate, SimOutcome};

fn main() -> odpscreen::Result<()> {
    let sim = simulate(400, 200, SimOutcome::Binary, 0.8, &mut replication_rng(3, 0))?;
    let d = &sim.dataset;
    let fit = estimate_propensity_lasso(d, 10, 100, 11)?;

    println!("penalty grid: {} values, selected {:.4e}", fit.lambdas.len(), fit.lambda());
    println!("active covariates: {} (intercept only: {})", fit.nonzero, fit.intercept_only);
    let best = fit.cv_deviance[fit.selected];
    println!("cross-validated deviance at the selected penalty: {best:.4}");

    let truth = d.auxiliary("propensity").expect("true propensity column");
    let mae = truth
        .iter()
        .zip(&fit.probabilities)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / d.n() as f64;
    let constant = truth.iter().map(|a| (a - 0.5).abs()).sum::<f64>() / d.n() as f64;
    println!("mean absolute error vs true propensity: {mae:.4} (constant 0.5: {constant:.4})");
    Ok(())
}
