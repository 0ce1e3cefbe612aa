//! Fit the null/non-null mixture prior directly from profile tables and inspect the EM
//! trace and posterior quantities.

use odpscreen::fit::{ProfileMethod, ProfileTable};
use odpscreen::prior_em::{em_fit, EmOptions, KnotGrid, MixturePrior};
use odpscreen::screening::{log_ods, posterior_nonnull};

/// Normal-approximation table for an estimate `b` with variance `s`.
fn table(k: usize, b: f64, s: f64, knots: &[f64]) -> ProfileTable {
    let ll = |beta: f64| -(b - beta).powi(2) / (2.0 * s);
    ProfileTable {
        k,
        log_pl_null: ll(0.0),
        log_pl_knots: knots.iter().map(|&a| ll(a)).collect(),
        method: ProfileMethod::Normal,
    }
}

fn main() -> odpscreen::Result<()> {
    // 80 nulls and 20 effects near -0.6, each estimated with standard error 0.15
    let s = 0.15f64.powi(2);
    let estimates: Vec<f64> = (0..100)
        .map(|k| {
            let wobble = 0.15 * ((k as f64 * 2.3).sin());
            if k < 80 { wobble } else { -0.6 + wobble }
        })
        .collect();
    let grid = KnotGrid::new(-1.0, 0.5, 31)?;
    let tables: Vec<ProfileTable> = estimates.iter().enumerate().map(|(k, &b)| table(k, b, s, &grid.a)).collect();

    let (prior, trace) = em_fit(&tables, &MixturePrior::initial(grid.clone()), &EmOptions::default())?;
    println!("EM: {} iterations, converged {}", trace.iterations, trace.converged);
    println!("log-likelihood {:.4} -> {:.4}", trace.loglik[0], trace.loglik.last().unwrap());
    println!("null mass {:.3}", prior.pi);
    let (mode, mass) = prior
        .p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(l, m)| (grid.a[l], *m))
        .unwrap();
    println!("largest knot mass {mass:.3} at {mode:.3}");

    for k in [0, 40, 85, 99] {
        println!(
            "biomarker {k:2}: estimate {:6.3}, P(non-null) {:.4}, log ODS {:8.3}",
            estimates[k],
            posterior_nonnull(&tables[k], &prior),
            log_ods(&tables[k], &prior)
        );
    }
    Ok(())
}
