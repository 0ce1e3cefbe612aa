//! Storey q-values from standard-normal test statistics.

use odpscreen::screening::{qvalues, storey_pi0};

fn main() {
    let stats = [4.1, -3.6, 2.9, 2.2, -1.7, 1.1, 0.6, -0.4, 0.2, 0.05];
    let (p, q) = qvalues(&stats);
    println!("pi0 estimate: {:.3}", storey_pi0(&p));
    println!("{:>7} {:>10} {:>10}", "stat", "p", "q");
    for ((z, p), q) in stats.iter().zip(&p).zip(&q) {
        println!("{z:>7.2} {p:>10.3e} {q:>10.4}");
    }
    for level in [0.05, 0.10, 0.20] {
        let n = q.iter().filter(|&&v| v <= level).count();
        println!("q <= {level:.2}: {n} rejections");
    }
}
