//! Checks shared by the focused test files and the acceptance run. Each returns the
//! first failure as a message.

use super::{fd_gradient, nelder_mead, normal, random_dataset, random_propensity, random_tables, rng, Kind};
use odpscreen::fit::{fit_single, ProfileMethod, ProfileTable};
use odpscreen::loss::{weighted_objective, CoxRisk, LinearPredictor, LossKind};
use odpscreen::prior_em::{em_fit, marginal_loglik, EmOptions, KnotGrid, MixturePrior};
use odpscreen::propensity::{compute_weights, CLIP_HIGH, CLIP_LOW};
use odpscreen::screening::qvalues_from_p;
use rand::Rng;

pub type Check = Result<(), String>;

fn inf_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// Analytic gradient and Hessian against central differences of the value and of the
/// analytic gradient, on random instances with n <= 100 and q <= 2.
pub fn derivatives(kind: LossKind, data_kind: Kind, instances: u64) -> Check {
    for seed in 0..instances {
        let mut r = rng(1000 + seed);
        let n = r.random_range(10..=100);
        let q = r.random_range(0..=2);
        let d = random_dataset(seed, n, 3, q, data_kind);
        let w = compute_weights(d.treatment(), &random_propensity(&mut r, n)).unwrap();
        let k = r.random_range(0..3);
        let theta: Vec<f64> = (0..q + 2).map(|_| 0.5 * normal(&mut r)).collect();

        let eval = |th: &[f64]| weighted_objective(kind, &d, &w, &LinearPredictor::from_theta(k, th)).unwrap();
        let obj = eval(&theta);
        let h = 1e-5;

        let g_fd = fd_gradient(&|th| eval(th).value, &theta, h);
        let g_err = inf_norm(obj.gradient.iter().zip(&g_fd).map(|(a, b)| a - b));
        let g_scale = inf_norm(obj.gradient.iter().copied()).max(1e-3);
        if g_err / g_scale >= 1e-5 {
            return Err(format!("{kind} gradient seed {seed}: {g_err:e} vs {g_scale:e}"));
        }
        for j in 0..theta.len() {
            let col = fd_gradient(&|th| eval(th).gradient[j], &theta, h);
            let err = inf_norm((0..theta.len()).map(|i| obj.hessian[(j, i)] - col[i]));
            let scale = inf_norm(obj.hessian.row(j).iter().copied()).max(1e-3);
            if err / scale >= 1e-5 {
                return Err(format!("{kind} Hessian row {j} seed {seed}: {err:e}"));
            }
        }
    }
    Ok(())
}

/// Newton estimates against Nelder-Mead on the same weighted binomial objective.
pub fn binomial_oracle(instances: u64) -> Check {
    for seed in 0..instances {
        let mut r = rng(500 + seed);
        let q = (seed % 3) as usize;
        let n = 120;
        let d = random_dataset(seed, n, 2, q, Kind::Binary);
        let w = compute_weights(d.treatment(), &random_propensity(&mut r, n)).unwrap();
        let fit = fit_single(&d, &w, LossKind::Binomial, 0).unwrap();
        if !fit.converged() {
            return Err(format!("seed {seed}: Newton did not converge"));
        }
        let f = |th: &[f64]| {
            weighted_objective(LossKind::Binomial, &d, &w, &LinearPredictor::from_theta(0, th))
                .unwrap()
                .value
        };
        let oracle = nelder_mead(f, &vec![0.0; q + 2], 0.5, 1e-15);
        let mut newton = vec![fit.alpha_hat, fit.beta_hat];
        newton.extend(&fit.omega_hat);
        if newton.iter().zip(&oracle).any(|(a, b)| (a - b).abs() >= 1e-5) {
            return Err(format!("seed {seed}: newton {newton:?} oracle {oracle:?}"));
        }
    }
    Ok(())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// `-sum_i w_i [eta_i - log sum_{j: t_j >= t_i} w_j exp(eta_j)]` written out directly.
fn brute_force_cox(time: &[f64], w: &[f64], eta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..time.len() {
        let risk: f64 = (0..time.len())
            .filter(|&j| time[j] >= time[i])
            .map(|j| w[j] * eta[j].exp())
            .sum();
        total -= w[i] * (eta[i] - risk.ln());
    }
    total
}

/// Cox partial likelihood against the risk-set expansion for every ordering of up to five
/// uncensored subjects. Agreement is required to 1e-12 relative.
pub fn cox_permutations() -> Check {
    let mut r = rng(77);
    for n in 1..=5 {
        for perm in permutations(n) {
            let time: Vec<f64> = perm.iter().map(|&v| 1.0 + v as f64).collect();
            let eta: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
            let w: Vec<f64> = (0..n).map(|_| 0.5 + r.random::<f64>()).collect();
            let got = CoxRisk::new(&time, &vec![true; n]).value(&w, &eta);
            let want = brute_force_cox(&time, &w, &eta);
            if (got - want).abs() > 1e-12 * want.abs().max(1.0) {
                return Err(format!("n={n} perm={perm:?}: {got} vs {want}"));
            }
        }
    }
    Ok(())
}

/// Weighted-M-step EM with default options on random tables: ascent within 1e-10 and
/// convergence.
pub fn em_ascent(instances: u64, p: usize, l: usize) -> Check {
    for seed in 0..instances {
        let tables = random_tables(&mut rng(seed), p, l, 5.0 + seed as f64);
        let init = MixturePrior::initial(KnotGrid::new(-1.0, 1.0, l).unwrap());
        let (_, trace) = em_fit(&tables, &init, &EmOptions::default()).map_err(|e| e.to_string())?;
        if let Some(w) = trace.loglik.windows(2).find(|w| w[1] < w[0] - 1e-10) {
            return Err(format!("instance {seed}: loglik {} -> {}", w[0], w[1]));
        }
        if !trace.converged {
            return Err(format!("instance {seed}: no convergence in {} iterations", trace.iterations));
        }
    }
    Ok(())
}

/// Two biomarkers, one knot: `PL_1 = (1, 3)`, `PL_2 = (2, 1)`. The EM limit must match a
/// grid search of the marginal likelihood over the null mass.
pub fn em_toy() -> Result<f64, String> {
    let table = |k, null: f64, alt: f64| ProfileTable {
        k,
        log_pl_null: null.ln(),
        log_pl_knots: vec![alt.ln()],
        method: ProfileMethod::Normal,
    };
    let tables = vec![table(0, 1.0, 3.0), table(1, 2.0, 1.0)];
    let single = KnotGrid {
        lower: 0.5,
        upper: 0.5,
        a: vec![0.5],
    };
    let opts = EmOptions {
        tol: 1e-15,
        max_iter: 100_000,
        ..EmOptions::default()
    };
    let (prior, _) = em_fit(&tables, &MixturePrior::initial(single.clone()), &opts).map_err(|e| e.to_string())?;
    let objective = |pi: f64| {
        marginal_loglik(
            &tables,
            &MixturePrior {
                pi,
                p: vec![1.0],
                grid: single.clone(),
            },
        )
        .unwrap()
    };
    let best = (0..=100_000)
        .map(|i| i as f64 / 100_000.0)
        .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap();
    if (prior.pi - best).abs() >= 1e-4 {
        return Err(format!("EM {} vs grid {best}", prior.pi));
    }
    Ok(prior.pi)
}

/// Weights sum to n on random treatment/propensity vectors; every third vector draws its
/// propensities from the clip bounds and their immediate neighbourhood.
pub fn weight_identity(instances: u64) -> Check {
    for seed in 0..instances {
        let mut r = rng(3000 + seed);
        let n = r.random_range(1..=500);
        let t: Vec<f64> = (0..n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let pi: Vec<f64> = (0..n)
            .map(|_| match seed % 3 {
                0 => {
                    let eps = 1e-9 * r.random::<f64>();
                    if r.random::<bool>() { CLIP_LOW + eps } else { CLIP_HIGH - eps }
                }
                1 => r.random_range(CLIP_LOW..=CLIP_HIGH),
                _ => r.random_range(1e-6..1.0 - 1e-6),
            })
            .collect();
        let w = compute_weights(&t, &pi).map_err(|e| e.to_string())?;
        let sum: f64 = w.w.iter().sum();
        if (sum - n as f64).abs() > 1e-8 * n as f64 {
            return Err(format!("instance {seed}: sum {sum} for n = {n}"));
        }
    }
    Ok(())
}

/// The hand-computed example, which must be reproduced exactly.
pub fn qvalue_example() -> Check {
    let q = qvalues_from_p(&[0.02, 0.04, 0.5, 1.0]);
    let want = [0.04, 0.04, 1.0 / 3.0, 0.5];
    if q.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-15) {
        Ok(())
    } else {
        Err(format!("{q:?}"))
    }
}

pub fn qvalue_monotone(instances: u64) -> Check {
    for seed in 0..instances {
        let mut r = rng(7000 + seed);
        let m = r.random_range(1..=300);
        let p: Vec<f64> = (0..m)
            .map(|_| if r.random::<f64>() < 0.3 { r.random::<f64>().powi(4) } else { r.random() })
            .collect();
        let q = qvalues_from_p(&p);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            if q[w[1]] < q[w[0]] {
                return Err(format!("instance {seed}: p {} -> q {}, p {} -> q {}", p[w[0]], q[w[0]], p[w[1]], q[w[1]]));
            }
        }
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("instance {seed}: q outside [0,1]"));
        }
    }
    Ok(())
}
