//! A few replications of the simulation study, comparing the ODP rankings against the
//! two Wald competitors.
//!
//! cargo run --release --example benchmark -- [replications]

use odpscreen::simulation::{run_benchmark, SimConfig};

fn main() -> odpscreen::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = SimConfig {
        n: 500,
        p: 1000,
        replications: reps,
        normal_knots: vec![100],
        ..SimConfig::default()
    };
    let summary = run_benchmark(&cfg)?;
    println!("{:<12} {:>6} {:>8} {:>8} {:>8}", "method", "FDR", "TP", "FP", "FDP");
    for r in &summary.rows {
        println!(
            "{:<12} {:>6.2} {:>8.2} {:>8.2} {:>8.3}",
            r.method, r.fdr_level, r.avg_tp, r.avg_fp, r.avg_fdp
        );
    }
    for (rep, err) in &summary.failures {
        println!("replication {rep} failed: {err}");
    }
    Ok(())
}
