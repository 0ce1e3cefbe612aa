//! L1-penalized logistic regression by coordinate descent.
//!
//! Minimizes `-(1/n) sum_i [y_i eta_i - log(1 + e^eta_i)] + lambda * |beta|_1` over an
//! unpenalized intercept and coefficients on standardized features. Each penalty is
//! solved by iteratively reweighted least squares with an inner cyclic coordinate
//! descent restricted to a working set; the working set starts from the sequential
//! strong rule and grows until every excluded feature passes the KKT check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loss::{log1p_exp, sigmoid};

const MIN_WEIGHT: f64 = 1e-5;
/// Inner coordinate descent tolerance on `v_j * delta_j^2`, relative to the objective:
/// loose for early IRLS steps, tightened with the outer progress, and at its floor for the
/// step that confirms convergence.
const INNER_TOL_START: f64 = 1e-7;
const INNER_TOL_FLOOR: f64 = 1e-13;
const OUTER_TOL: f64 = 1e-10;
/// Relative decrease of the penalized objective below which IRLS stops.
const OBJ_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 100;
const MAX_SWEEPS: usize = 100_000;
const MAX_HALVINGS: usize = 30;
/// Sweeps between attempts to finish the inner problem by a direct solve on the active set.
const POLISH_EVERY: usize = 50;
/// Path stops early once training deviance explains this fraction of the null deviance,
/// or once the explained fraction grows by less than `MIN_GAIN` (relative) between
/// consecutive penalties, but never before `MIN_POINTS` penalties.
const SATURATION: f64 = 0.999;
const MIN_GAIN: f64 = 1e-5;
const MIN_POINTS: usize = 5;

/// Problem definition over a subset of rows of a set of feature columns.
pub struct LogisticLasso<'a> {
    columns: Vec<&'a [f64]>,
    rows: Vec<usize>,
    y: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

/// Solution at one point of the penalty path. Coefficients are on the standardized scale.
pub struct PathPoint<'s> {
    pub index: usize,
    pub lambda: f64,
    pub intercept: f64,
    pub beta: &'s [f64],
    /// Set when the path stopped early and this point repeats the last solution.
    pub saturated: bool,
}

impl PathPoint<'_> {
    pub fn nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

impl<'a> LogisticLasso<'a> {
    /// `y` holds 0/1 responses for all rows of the columns; `rows` selects the training
    /// subset (all rows when `None`).
    pub fn new(columns: Vec<&'a [f64]>, y: &[f64], rows: Option<Vec<usize>>) -> Self {
        let n_all = y.len();
        let rows = rows.unwrap_or_else(|| (0..n_all).collect());
        let m = rows.len() as f64;
        let (mean, scale) = columns
            .iter()
            .map(|col| {
                let mu = rows.iter().map(|&i| col[i]).sum::<f64>() / m;
                let var = rows.iter().map(|&i| (col[i] - mu).powi(2)).sum::<f64>() / m;
                (mu, var.sqrt())
            })
            .unzip();
        let y = rows.iter().map(|&i| y[i]).collect();
        LogisticLasso {
            columns,
            rows,
            y,
            mean,
            scale,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    fn usable(&self, j: usize) -> bool {
        self.scale[j] > 0.0
    }

    /// Smallest penalty at which all coefficients are zero.
    pub fn lambda_max(&self) -> f64 {
        let ybar = self.y.iter().sum::<f64>() / self.n() as f64;
        let resid: Vec<f64> = self.y.iter().map(|y| y - ybar).collect();
        (0..self.p())
            .filter(|&j| self.usable(j))
            .map(|j| self.score(j, &resid).abs())
            .fold(0.0, f64::max)
    }

    /// `(1/n) sum_i xs_ij r_i` for standardized feature `j` and training-row vector `r`.
    fn score(&self, j: usize, r: &[f64]) -> f64 {
        let col = self.columns[j];
        let (mut sxr, mut sr) = (0.0, 0.0);
        for (&i, &ri) in self.rows.iter().zip(r) {
            sxr += col[i] * ri;
            sr += ri;
        }
        (sxr - self.mean[j] * sr) / (self.scale[j] * self.n() as f64)
    }

    /// Linear predictor at arbitrary rows of the underlying columns.
    pub fn predict(&self, point: &PathPoint<'_>, rows: &[usize]) -> Vec<f64> {
        let mut eta = vec![point.intercept; rows.len()];
        for (j, &b) in point.beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let col = self.columns[j];
            let (mu, s) = (self.mean[j], self.scale[j]);
            for (e, &i) in eta.iter_mut().zip(rows) {
                *e += b * (col[i] - mu) / s;
            }
        }
        eta
    }

    /// Gradient of the smooth part, `(1/n) X_s'(y - p)`, for every usable feature.
    pub fn scores(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let point = PathPoint {
            index: 0,
            lambda: 0.0,
            intercept,
            beta,
            saturated: false,
        };
        let eta = self.predict(&point, &self.rows);
        let resid: Vec<f64> = eta.iter().zip(&self.y).map(|(&e, y)| y - sigmoid(e)).collect();
        (0..self.p())
            .map(|j| if self.usable(j) { self.score(j, &resid) } else { 0.0 })
            .collect()
    }

    fn deviance(&self, eta: &[f64]) -> f64 {
        2.0 * eta
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| log1p_exp(e) - y * e)
            .sum::<f64>()
    }

    /// Fits the path over decreasing `lambdas`, calling `visit` at each penalty.
    pub fn path<F>(&self, lambdas: &[f64], mut visit: F) -> Result<()>
    where
        F: FnMut(&PathPoint<'_>),
    {
        let n = self.n();
        let nf = n as f64;
        let p = self.p();
        let ybar = self.y.iter().sum::<f64>() / nf;
        let mut intercept = (ybar / (1.0 - ybar)).ln();
        let mut beta = vec![0.0; p];
        let null_dev = self.deviance(&vec![intercept; n]);

        // full scores at the current solution, used by the strong rule
        let resid0: Vec<f64> = self.y.iter().map(|y| y - ybar).collect();
        let mut scores: Vec<f64> = (0..p)
            .map(|j| if self.usable(j) { self.score(j, &resid0) } else { 0.0 })
            .collect();
        let lambda_max = self.lambda_max();
        let mut prev_lambda = lambda_max.max(lambdas.first().copied().unwrap_or(0.0));
        let mut in_set = vec![false; p];
        let mut saturated = false;
        let mut prev_ratio = 0.0;

        for (index, &lambda) in lambdas.iter().enumerate() {
            // at or above lambda_max the intercept-only model is exact
            if !saturated && lambda < lambda_max {
                let cutoff = 2.0 * lambda - prev_lambda;
                for j in 0..p {
                    if self.usable(j) && (beta[j] != 0.0 || scores[j].abs() >= cutoff) {
                        in_set[j] = true;
                    }
                }
                loop {
                    let working: Vec<usize> = (0..p).filter(|&j| in_set[j]).collect();
                    self.solve(lambda, &working, &mut intercept, &mut beta)?;
                    scores = self.scores(intercept, &beta);
                    let mut violated = false;
                    for j in 0..p {
                        if !in_set[j] && self.usable(j) && scores[j].abs() > lambda * (1.0 + 1e-9) {
                            in_set[j] = true;
                            violated = true;
                        }
                    }
                    if !violated {
                        break;
                    }
                }
                prev_lambda = lambda;
            }
            visit(&PathPoint {
                index,
                lambda,
                intercept,
                beta: &beta,
                saturated,
            });
            if !saturated {
                let point = PathPoint {
                    index,
                    lambda,
                    intercept,
                    beta: &beta,
                    saturated,
                };
                let dev = self.deviance(&self.predict(&point, &self.rows));
                let ratio = 1.0 - dev / null_dev;
                if ratio >= SATURATION || (index + 1 >= MIN_POINTS && ratio - prev_ratio < MIN_GAIN * ratio) {
                    saturated = true;
                }
                prev_ratio = ratio;
            }
        }
        Ok(())
    }

    /// IRLS with coordinate descent over `working`; other coefficients stay at zero.
    fn solve(&self, lambda: f64, working: &[usize], intercept: &mut f64, beta: &mut [f64]) -> Result<()> {
        let n = self.n();
        let nf = n as f64;
        // standardized working columns, materialized once per solve
        let xs: Vec<Vec<f64>> = working
            .iter()
            .map(|&j| {
                let col = self.columns[j];
                let (mu, s) = (self.mean[j], self.scale[j]);
                self.rows.iter().map(|&i| (col[i] - mu) / s).collect()
            })
            .collect();
        let mut eta = vec![*intercept; n];
        for (c, &j) in working.iter().enumerate() {
            if beta[j] != 0.0 {
                for (e, x) in eta.iter_mut().zip(&xs[c]) {
                    *e += beta[j] * x;
                }
            }
        }
        let mut w = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut v = vec![0.0; working.len()];
        let penalized = |eta: &[f64], coef: &[f64]| {
            self.deviance(eta) / (2.0 * nf) + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
        };
        let start: Vec<f64> = working.iter().map(|&j| beta[j]).collect();
        let scale = penalized(&eta, &start).max(f64::MIN_POSITIVE);
        let tight = INNER_TOL_FLOOR * scale;
        let mut inner_tol = INNER_TOL_START * scale;

        for _ in 0..MAX_OUTER {
            for i in 0..n {
                let p = sigmoid(eta[i]);
                w[i] = (p * (1.0 - p)).max(MIN_WEIGHT);
                r[i] = (self.y[i] - p) / w[i];
            }
            let sw: f64 = w.iter().sum();
            for (c, x) in xs.iter().enumerate() {
                v[c] = x.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>() / nf;
            }
            let old_intercept = *intercept;
            let old: Vec<f64> = working.iter().map(|&j| beta[j]).collect();
            let old_eta = eta.clone();

            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(Error::LassoNonConvergence { lambda });
                }
                let mut max_change: f64 = 0.0;
                let shift = w.iter().zip(&r).map(|(w, r)| w * r).sum::<f64>() / sw;
                if shift != 0.0 {
                    *intercept += shift;
                    r.iter_mut().for_each(|ri| *ri -= shift);
                    max_change = max_change.max(sw / nf * shift * shift);
                }
                for (c, &j) in working.iter().enumerate() {
                    let x = &xs[c];
                    let g = x.iter().zip(&w).zip(&r).map(|((x, w), r)| w * x * r).sum::<f64>() / nf;
                    let b_old = beta[j];
                    let b_new = soft_threshold(g + v[c] * b_old, lambda) / v[c];
                    if b_new != b_old {
                        let delta = b_new - b_old;
                        for (ri, xi) in r.iter_mut().zip(x) {
                            *ri -= delta * xi;
                        }
                        beta[j] = b_new;
                        max_change = max_change.max(v[c] * delta * delta);
                    }
                }
                if max_change < inner_tol {
                    break;
                }
                if sweeps % POLISH_EVERY == 0 && polish(&xs, working, &w, &mut r, lambda, intercept, beta) {
                    break;
                }
            }

            for i in 0..n {
                eta[i] = *intercept;
            }
            for (c, &j) in working.iter().enumerate() {
                if beta[j] != 0.0 {
                    for (e, x) in eta.iter_mut().zip(&xs[c]) {
                        *e += beta[j] * x;
                    }
                }
            }
            // step back toward the previous iterate until the penalized objective
            // does not increase
            let f_old = penalized(&old_eta, &old);
            let new_intercept = *intercept;
            let new_beta: Vec<f64> = working.iter().map(|&j| beta[j]).collect();
            let new_eta = eta.clone();
            let mut f_new = f64::INFINITY;
            let mut t = 1.0;
            for _ in 0..=MAX_HALVINGS {
                *intercept = old_intercept + t * (new_intercept - old_intercept);
                for (c, &j) in working.iter().enumerate() {
                    beta[j] = old[c] + t * (new_beta[c] - old[c]);
                }
                for i in 0..n {
                    eta[i] = old_eta[i] + t * (new_eta[i] - old_eta[i]);
                }
                let coef: Vec<f64> = working.iter().map(|&j| beta[j]).collect();
                f_new = penalized(&eta, &coef);
                if f_new <= f_old * (1.0 + 1e-15) {
                    break;
                }
                t *= 0.5;
            }
            if !f_new.is_finite() {
                return Err(Error::LassoNonConvergence { lambda });
            }
            let change = working
                .iter()
                .zip(&old)
                .map(|(&j, b)| (beta[j] - b).abs())
                .fold((*intercept - old_intercept).abs(), f64::max);
            let gain = (f_old - f_new).abs();
            if change < OUTER_TOL || gain <= OBJ_TOL * f_new.abs() {
                if inner_tol <= tight {
                    return Ok(());
                }
                inner_tol = tight;
            } else {
                inner_tol = inner_tol.min(1e-3 * gain).max(tight);
            }
        }
        Err(Error::LassoNonConvergence { lambda })
    }
}

/// Solves the weighted least-squares lasso subproblem exactly, assuming the current
/// nonzero set and signs are final. Accepts the solution (updating `r`, `intercept` and
/// `beta`) only if the signs hold and every other working coefficient passes the KKT check.
fn polish(
    xs: &[Vec<f64>],
    working: &[usize],
    w: &[f64],
    r: &mut [f64],
    lambda: f64,
    intercept: &mut f64,
    beta: &mut [f64],
) -> bool {
    let n = w.len();
    let nf = n as f64;
    let active: Vec<usize> = (0..working.len()).filter(|&c| beta[working[c]] != 0.0).collect();
    let m = active.len() + 1;
    if m > n {
        return false;
    }
    let col = |a: usize| -> &[f64] { &xs[active[a]] };
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    gram[(0, 0)] = w.iter().sum::<f64>() / nf;
    rhs[0] = w.iter().zip(r.iter()).map(|(w, r)| w * r).sum::<f64>() / nf;
    for a in 0..active.len() {
        let xa = col(a);
        let sign = beta[working[active[a]]].signum();
        gram[(0, a + 1)] = xa.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / nf;
        gram[(a + 1, 0)] = gram[(0, a + 1)];
        rhs[a + 1] = xa.iter().zip(w).zip(r.iter()).map(|((x, w), r)| w * x * r).sum::<f64>() / nf - lambda * sign;
        for b in 0..=a {
            let v = xa.iter().zip(col(b)).zip(w).map(|((x, y), w)| w * x * y).sum::<f64>() / nf;
            gram[(a + 1, b + 1)] = v;
            gram[(b + 1, a + 1)] = v;
        }
    }
    let Some(chol) = gram.cholesky() else {
        return false;
    };
    let delta = chol.solve(&rhs);
    if !delta.iter().all(|d| d.is_finite()) {
        return false;
    }
    // first coefficient to reach zero along the step
    let mut t_cross = 1.0;
    let mut hit = None;
    for a in 0..active.len() {
        let b = beta[working[active[a]]];
        let d = delta[a + 1];
        if (b + d).signum() != b.signum() || b + d == 0.0 {
            let t = -b / d;
            if t < t_cross {
                t_cross = t;
                hit = Some(a);
            }
        }
    }
    if let Some(zeroed) = hit {
        // the sign-fixed quadratic matches the objective up to the crossing, so the
        // partial step is a descent step; coordinate descent continues from there
        r.iter_mut().for_each(|ri| *ri -= t_cross * delta[0]);
        *intercept += t_cross * delta[0];
        for a in 0..active.len() {
            let j = working[active[a]];
            let step = if a == zeroed { -beta[j] } else { t_cross * delta[a + 1] };
            for (ri, x) in r.iter_mut().zip(col(a)) {
                *ri -= step * x;
            }
            beta[j] += step;
        }
        beta[working[active[zeroed]]] = 0.0;
        return false;
    }
    let mut r_new: Vec<f64> = r.iter().map(|ri| ri - delta[0]).collect();
    for a in 0..active.len() {
        for (ri, x) in r_new.iter_mut().zip(col(a)) {
            *ri -= delta[a + 1] * x;
        }
    }
    for (c, x) in xs.iter().enumerate() {
        if beta[working[c]] == 0.0 {
            let g = x.iter().zip(w).zip(&r_new).map(|((x, w), r)| w * x * r).sum::<f64>() / nf;
            if g.abs() > lambda {
                return false;
            }
        }
    }
    *intercept += delta[0];
    for a in 0..active.len() {
        beta[working[active[a]]] += delta[a + 1];
    }
    r.copy_from_slice(&r_new);
    true
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `size` log-spaced penalties from `max` down to `ratio * max`.
pub fn log_grid(max: f64, ratio: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![max];
    }
    let step = ratio.ln() / (size - 1) as f64;
    (0..size).map(|i| max * (step * i as f64).exp()).collect()
}
