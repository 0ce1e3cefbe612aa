//! Screen a simulated binary-outcome trial with plug-in profiles and list the biomarkers
//! selected at each FDR level.

use odpscreen::propensity::PropensitySpec;
use odpscreen::simulation::{replication_rng, simulate, SimOutcome};
use odpscreen::{run_screen, ScreenConfig};

fn main() -> odpscreen::Result<()> {
    let sim = simulate(500, 400, SimOutcome::Binary, 0.8, &mut replication_rng(1, 0))?;
    let cfg = ScreenConfig {
        // the simulator stores the true propensity as an auxiliary column
        propensity: PropensitySpec::Column("propensity".into()),
        ..ScreenConfig::default()
    };
    let out = run_screen(&sim.dataset, &cfg)?;
    let res = &out.odp.result;
    println!("estimated null proportion: {:.3}", res.pi_hat);

    for sel in &res.selections {
        let tp = sel.members.iter().filter(|&&k| !sim.truth.null_mask[k]).count();
        println!(
            "FDR {:.2}: {:3} selected, {:3} truly non-null, estimated FDR {:.3}",
            sel.level,
            sel.members.len(),
            tp,
            sel.estimated_fdr
        );
    }

    let names = sim.dataset.biomarker_names();
    let mut top: Vec<_> = res.rows.iter().filter(|r| r.eligible).collect();
    top.sort_by(|a, b| b.log_ods.total_cmp(&a.log_ods));
    println!("\n{:<8} {:>9} {:>9} {:>10} {:>8}", "marker", "beta_hat", "truth", "post_null", "q(T)");
    for r in top.iter().take(10) {
        println!(
            "{:<8} {:>9.3} {:>9.3} {:>10.4} {:>8.4}",
            names[r.k], r.beta_hat, sim.truth.beta[r.k], r.post_null, r.q_value
        );
    }
    Ok(())
}
