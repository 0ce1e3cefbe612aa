//! Survival screen with the plug-in profile, compared against the Wald q-values of the
//! weighted fit.

use odpscreen::fit::ProfileMethod;
use odpscreen::propensity::PropensitySpec;
use odpscreen::simulation::{replication_rng, simulate, SimOutcome};
use odpscreen::{run_screen, ScreenConfig};

fn main() -> odpscreen::Result<()> {
    let sim = simulate(500, 300, SimOutcome::Survival, 0.8, &mut replication_rng(2, 0))?;
    let cfg = ScreenConfig {
        method: ProfileMethod::Plugin,
        propensity: PropensitySpec::Column("propensity".into()),
        ..ScreenConfig::default()
    };
    let out = run_screen(&sim.dataset, &cfg)?;
    println!("loss: {}, EM iterations: {}", out.kind, out.odp.trace.iterations);

    let res = &out.odp.result;
    let truth = &sim.truth;
    for (l, sel) in res.selections.iter().enumerate() {
        let odp_tp = sel.members.iter().filter(|&&k| !truth.null_mask[k]).count();
        let wald: Vec<usize> = res.rows.iter().filter(|r| r.q_value <= sel.level).map(|r| r.k).collect();
        let wald_tp = wald.iter().filter(|&&k| !truth.null_mask[k]).count();
        println!(
            "FDR {:.2}: ODP {:3} selected ({:3} true), Wald {:3} selected ({:3} true)",
            res.levels[l],
            sel.members.len(),
            odp_tp,
            wald.len(),
            wald_tp
        );
    }
    Ok(())
}
