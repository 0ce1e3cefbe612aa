mod common;

use common::{checks, normal, random_dataset, random_propensity, rng, Kind};
use nalgebra::{DMatrix, DVector};
use odpscreen::data::{Dataset, Outcomes, Schema};
use odpscreen::fit::{fit_single, profile_normal, profile_plugin, FitContext};
use odpscreen::loss::{Design, LossKind};
use odpscreen::propensity::compute_weights;
use rand::Rng;

#[test]
fn binomial_estimates_match_nelder_mead() {
    checks::binomial_oracle(20).unwrap();
}

#[test]
fn cox_matches_risk_set_expansion_on_all_orderings() {
    checks::cox_permutations().unwrap();
}

#[test]
fn squared_loss_matches_weighted_normal_equations() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let d = random_dataset(seed, 80, 3, 2, Kind::Binary);
        let w = compute_weights(d.treatment(), &random_propensity(&mut r, 80)).unwrap();
        let k = 1;
        let fit = fit_single(&d, &w, LossKind::Squared, k).unwrap();
        assert!(fit.converged());

        let design = Design::interaction(&d, k);
        let dm = DMatrix::from_fn(d.n(), design.ncols(), |i, j| design.column(j)[i]);
        let y = match d.outcomes() {
            Outcomes::Binary(y) => DVector::from_column_slice(y),
            _ => unreachable!(),
        };
        let wd = DMatrix::from_fn(d.n(), design.ncols(), |i, j| w.w[i] * dm[(i, j)]);
        let lhs = dm.transpose() * &wd;
        let rhs = wd.transpose() * &y;
        let exact = lhs.clone().cholesky().unwrap().solve(&rhs);
        let mut got = vec![fit.alpha_hat, fit.beta_hat];
        got.extend(&fit.omega_hat);
        for (a, b) in got.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-10, "seed {seed}: {got:?} vs {exact}");
        }
        let resid = &y - &dm * &exact;
        let rss: f64 = (0..d.n()).map(|i| w.w[i] * resid[i] * resid[i]).sum();
        assert!((fit.objective - rss).abs() < 1e-10 * rss.max(1.0));
        // variance is the inverse Hessian entry of sum w (y - eta)^2, i.e. (2 D'WD)^-1
        let inv = lhs.try_inverse().unwrap();
        assert!((fit.s - inv[(1, 1)] / 2.0).abs() < 1e-12 * fit.s.max(1.0));
    }
}

#[test]
fn plugin_profile_peaks_at_the_estimate() {
    for seed in 0..10 {
        let mut r = rng(seed + 40);
        let (kind, data_kind) = if seed % 2 == 0 {
            (LossKind::Binomial, Kind::Binary)
        } else {
            (LossKind::Cox, Kind::Survival)
        };
        let d = random_dataset(seed, 90, 2, 1, data_kind);
        let w = compute_weights(d.treatment(), &random_propensity(&mut r, 90)).unwrap();
        let ctx = FitContext::new(&d, &w, kind).unwrap();
        let fit = ctx.fit(0);
        let mut betas: Vec<f64> = (0..50).map(|i| -1.0 + 0.04 * i as f64).collect();
        betas.push(fit.beta_hat);
        let values = ctx.log_plugin(&fit, &betas);
        let at_hat = *values.last().unwrap();
        assert!((at_hat + fit.objective).abs() <= 1e-12 * fit.objective.abs());
        for v in &values {
            assert!(*v <= at_hat, "seed {seed}: {v} > {at_hat}");
        }
    }
}

#[test]
fn normal_profile_ignores_objective_constant() {
    let d = random_dataset(3, 100, 2, 1, Kind::Binary);
    let w = compute_weights(d.treatment(), &vec![0.5; 100]).unwrap();
    let fit = fit_single(&d, &w, LossKind::Binomial, 0).unwrap();
    let mut shifted = fit.clone();
    shifted.objective += 1234.5;
    let knots = [-0.5, 0.0, 0.25, 1.0];
    assert_eq!(profile_normal(&fit, &knots).unwrap(), profile_normal(&shifted, &knots).unwrap());
}

/// With `X_k` weighted-orthogonal to the other design columns, both squared-loss profiles
/// are the same quadratic up to a constant.
#[test]
fn squared_profiles_agree_for_orthogonal_design() {
    for seed in 0..5 {
        let mut r = rng(seed + 90);
        let n = 64;
        let mut x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let t: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = (0..n).map(|i| if r.random::<f64>() < 0.5 + 0.2 * t[i] * x[i].tanh() { 1.0 } else { 0.0 }).collect();
        let d = Dataset::new(
            Outcomes::Binary(y),
            t,
            DMatrix::from_column_slice(n, 1, &x),
            DMatrix::zeros(n, 0),
            vec!["x1".into()],
            Schema::binary(),
        )
        .unwrap();
        let w = compute_weights(d.treatment(), &vec![0.5; n]).unwrap();
        let fit = fit_single(&d, &w, LossKind::Squared, 0).unwrap();
        let knots: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let plug = profile_plugin(&fit, &d, &w, LossKind::Squared, &knots).unwrap();
        let norm = profile_normal(&fit, &knots).unwrap();
        for l in 0..knots.len() {
            let a = plug.log_pl_knots[l] - plug.log_pl_null;
            let b = norm.log_pl_knots[l] - norm.log_pl_null;
            assert!((a - b).abs() < 1e-8, "seed {seed} knot {l}: {a} vs {b}");
        }
    }
}
