#![allow(dead_code)]

pub mod checks;

use nalgebra::DMatrix;
use odpscreen::data::{Dataset, Outcomes, Schema};
use odpscreen::fit::{ProfileMethod, ProfileTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Binary,
    Survival,
}

/// Random dataset with a real treatment-biomarker interaction in the first column.
pub fn random_dataset(seed: u64, n: usize, p: usize, q: usize, kind: Kind) -> Dataset {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
    let z = DMatrix::from_fn(n, q, |_, _| normal(&mut r));
    let mut t: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    for v in t.iter_mut() {
        if r.random::<f64>() < 0.3 {
            *v = -*v;
        }
    }
    let eta: Vec<f64> = (0..n)
        .map(|i| 0.3 * x[(i, 0)] * t[i] + 0.2 * if q > 0 { z[(i, 0)] } else { 0.0 } + 0.1 * t[i])
        .collect();
    let outcomes = match kind {
        Kind::Binary => Outcomes::Binary(
            eta.iter()
                .map(|e| if r.random::<f64>() < 1.0 / (1.0 + (-e).exp()) { 1.0 } else { 0.0 })
                .collect(),
        ),
        Kind::Survival => {
            let mut time = Vec::new();
            let mut event = Vec::new();
            for e in &eta {
                let u: f64 = r.random::<f64>().max(1e-12);
                let tt = -u.ln() / e.exp();
                let c = -r.random::<f64>().max(1e-12).ln() * 2.0;
                time.push(tt.min(c));
                event.push(tt <= c);
            }
            Outcomes::Survival { time, event }
        }
    };
    let schema = match kind {
        Kind::Binary => Schema::binary(),
        Kind::Survival => Schema::survival(),
    }
    .with_confounders((1..=q).map(|j| format!("z{j}")));
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::new(outcomes, t, x, z, names, schema).expect("valid dataset")
}

/// Random propensities inside the clip bounds.
pub fn random_propensity(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| 0.05 + 0.9 * r.random::<f64>()).collect()
}

pub fn random_tables(r: &mut ChaCha8Rng, p: usize, l: usize, scale: f64) -> Vec<ProfileTable> {
    (0..p)
        .map(|k| {
            let centre = scale * normal(r);
            ProfileTable {
                k,
                log_pl_null: centre + normal(r),
                log_pl_knots: (0..l).map(|_| centre + normal(r)).collect(),
                method: ProfileMethod::Normal,
            }
        })
        .collect()
}

/// Derivative-free minimizer: Nelder-Mead with restarts.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64) -> Vec<f64> {
    let d = x0.len();
    let mut best = x0.to_vec();
    let mut best_f = f(&best);
    for _restart in 0..20 {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..d {
            let mut v = best.clone();
            v[i] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..=d).collect();
            idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            values = idx.iter().map(|&i| values[i]).collect();
            let spread = values[d] - values[0];
            let size = simplex
                .iter()
                .skip(1)
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if spread <= tol * (1.0 + values[0].abs()) && size < 1e-10 {
                break;
            }
            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[d])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    values[d] = fe;
                } else {
                    simplex[d] = xr;
                    values[d] = fr;
                }
            } else if fr < values[d - 1] {
                simplex[d] = xr;
                values[d] = fr;
            } else {
                let xc = if fr < values[d] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                if fc < values[d].min(fr) {
                    simplex[d] = xc;
                    values[d] = fc;
                } else {
                    for i in 1..=d {
                        simplex[i] = simplex[i]
                            .iter()
                            .zip(&simplex[0])
                            .map(|(v, b)| b + 0.5 * (v - b))
                            .collect();
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let (i, &v) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let improved = v < best_f - 1e-15 * (1.0 + best_f.abs());
        best = simplex[i].clone();
        best_f = v;
        if !improved {
            break;
        }
    }
    best
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)` maximized over entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
