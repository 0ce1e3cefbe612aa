//! Draw one simulated trial and write it as CSV with the true effects alongside.
//!
//! cargo run --example simulate -- [out_dir]

use odpscreen::simulation::{replication_rng, simulate, SimOutcome};
use odpscreen::write_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "sim_out".into());
    std::fs::create_dir_all(&dir)?;

    let sim = simulate(500, 200, SimOutcome::Survival, 0.8, &mut replication_rng(7, 0))?;
    let d = &sim.dataset;
    let path = format!("{dir}/trial.csv");
    write_dataset(d, &path)?;

    let events = match d.outcomes() {
        odpscreen::data::Outcomes::Survival { event, .. } => event.iter().filter(|e| **e).count(),
        _ => unreachable!(),
    };
    println!("wrote {path}: {} subjects, {} biomarkers", d.n(), d.p());
    println!("treated: {}, events: {events}", d.treated_count());
    println!("non-null biomarkers: {}", sim.truth.nonnull_count());
    let strongest = sim
        .truth
        .beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    println!("largest effect: {} = {:.3}", d.biomarker_names()[strongest.0], strongest.1);
    Ok(())
}
