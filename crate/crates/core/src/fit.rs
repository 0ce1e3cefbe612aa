//! Per-biomarker weighted fits and the profile (synthetic) likelihood tables fed to the
//! mixture EM.
//!
//! Each biomarker is fitted by damped Newton from `theta = 0`; the variance `s_k` of
//! `beta_hat` is the `(beta, beta)` entry of the inverse Hessian of the negative log
//! synthetic likelihood at the mode. Tables are built either by plugging the nuisance
//! estimates into the weighted loss (`Plugin`) or from the normal density
//! `phi(beta_hat; beta, s)` (`Normal`).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{Design, LossData, LossKind};
use crate::newton;
use crate::prior_em::{select_knots, KnotGrid};
use crate::propensity::WeightSet;
use crate::with_workers;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// Constant biomarker column; the interaction is not identified.
    Unidentified,
    NotConverged,
}

impl fmt::Display for FitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitStatus::Converged => "converged",
            FitStatus::Unidentified => "unidentified",
            FitStatus::NotConverged => "not_converged",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerFit {
    pub k: usize,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub omega_hat: Vec<f64>,
    /// Variance of `beta_hat`; `+inf` when unidentified.
    pub s: f64,
    pub status: FitStatus,
    pub iterations: usize,
    /// Negative log synthetic likelihood at the estimate.
    pub objective: f64,
}

impl BiomarkerFit {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    pub fn se(&self) -> f64 {
        self.s.sqrt()
    }

    fn unidentified(k: usize, q: usize) -> Self {
        BiomarkerFit {
            k,
            alpha_hat: 0.0,
            beta_hat: 0.0,
            omega_hat: vec![0.0; q],
            s: f64::INFINITY,
            status: FitStatus::Unidentified,
            iterations: 0,
            objective: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProfileMethod {
    Plugin,
    Normal,
}

impl fmt::Display for ProfileMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileMethod::Plugin => "plugin",
            ProfileMethod::Normal => "normal",
        })
    }
}

impl FromStr for ProfileMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(ProfileMethod::Plugin),
            "normal" => Ok(ProfileMethod::Normal),
            _ => Err(Error::InvalidArgument(format!("unknown method '{s}'"))),
        }
    }
}

/// `log PL_k` at `beta = 0` and at each knot.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub k: usize,
    pub log_pl_null: f64,
    pub log_pl_knots: Vec<f64>,
    pub method: ProfileMethod,
}

/// Shared inputs for fitting many biomarkers of one dataset.
pub struct FitContext<'a> {
    d: &'a Dataset,
    w: &'a WeightSet,
    loss: LossData,
}

impl<'a> FitContext<'a> {
    pub fn new(d: &'a Dataset, w: &'a WeightSet, kind: LossKind) -> Result<Self> {
        if w.w.len() != d.n() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} subjects",
                w.w.len(),
                d.n()
            )));
        }
        Ok(FitContext {
            d,
            w,
            loss: LossData::new(kind, d.outcomes())?,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.loss.kind()
    }

    pub fn fit(&self, k: usize) -> BiomarkerFit {
        let q = self.d.q();
        if self.d.is_constant_biomarker(k) {
            return BiomarkerFit::unidentified(k, q);
        }
        let design = Design::interaction(self.d, k);
        let w = &self.w.w;
        let res = newton::minimize(
            |th| self.loss.objective(w, &design, th),
            |th| self.loss.value(w, &design.predictor(th)),
            vec![0.0; q + 2],
        );
        let s = res
            .inverse_hessian()
            .map(|inv| inv[(1, 1)])
            .unwrap_or(f64::NAN);
        let status = if res.converged && s > 0.0 && s.is_finite() {
            FitStatus::Converged
        } else {
            FitStatus::NotConverged
        };
        BiomarkerFit {
            k,
            alpha_hat: res.theta[0],
            beta_hat: res.theta[1],
            omega_hat: res.theta[2..].to_vec(),
            s: if status == FitStatus::Converged { s } else { f64::NAN },
            status,
            iterations: res.iterations,
            objective: res.objective.value,
        }
    }

    /// `log PL_k(beta) = -sum_i w_i M(Y_i, eta_i(alpha_hat, beta, omega_hat))`.
    pub fn log_plugin(&self, fit: &BiomarkerFit, betas: &[f64]) -> Vec<f64> {
        let d = self.d;
        let t = d.treatment();
        let mut base: Vec<f64> = t.iter().map(|t| t * fit.alpha_hat).collect();
        for (j, om) in fit.omega_hat.iter().enumerate() {
            for ((b, z), t) in base.iter_mut().zip(d.confounder(j)).zip(t) {
                *b += t * z * om;
            }
        }
        let dir: Vec<f64> = d.biomarker(fit.k).iter().zip(t).map(|(x, t)| x * t).collect();
        let mut eta = vec![0.0; d.n()];
        betas
            .iter()
            .map(|&beta| {
                for ((e, b), x) in eta.iter_mut().zip(&base).zip(&dir) {
                    *e = b + beta * x;
                }
                -self.loss.value(&self.w.w, &eta)
            })
            .collect()
    }

    pub fn profile_plugin(&self, fit: &BiomarkerFit, knots: &[f64]) -> Result<ProfileTable> {
        require_converged(fit)?;
        let mut betas = Vec::with_capacity(knots.len() + 1);
        betas.push(0.0);
        betas.extend_from_slice(knots);
        let vals = self.log_plugin(fit, &betas);
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plug-in profile table"));
        }
        Ok(ProfileTable {
            k: fit.k,
            log_pl_null: vals[0],
            log_pl_knots: vals[1..].to_vec(),
            method: ProfileMethod::Plugin,
        })
    }
}

fn require_converged(fit: &BiomarkerFit) -> Result<()> {
    if fit.converged() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "biomarker {} has no usable fit ({})",
            fit.k, fit.status
        )))
    }
}

pub fn fit_single(d: &Dataset, w: &WeightSet, kind: LossKind, k: usize) -> Result<BiomarkerFit> {
    if k >= d.p() {
        return Err(Error::InvalidArgument(format!("biomarker index {k} out of range")));
    }
    Ok(FitContext::new(d, w, kind)?.fit(k))
}

pub fn profile_plugin(
    fit: &BiomarkerFit,
    d: &Dataset,
    w: &WeightSet,
    kind: LossKind,
    knots: &[f64],
) -> Result<ProfileTable> {
    FitContext::new(d, w, kind)?.profile_plugin(fit, knots)
}

/// `log PL_k(beta) = log phi(beta_hat; beta, s)`.
pub fn profile_normal(fit: &BiomarkerFit, knots: &[f64]) -> Result<ProfileTable> {
    if !fit.s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "biomarker {} has no finite variance",
            fit.k
        )));
    }
    require_converged(fit)?;
    let s = fit.s;
    let norm = -0.5 * (2.0 * PI * s).ln();
    let log_phi = |beta: f64| norm - (fit.beta_hat - beta).powi(2) / (2.0 * s);
    Ok(ProfileTable {
        k: fit.k,
        log_pl_null: log_phi(0.0),
        log_pl_knots: knots.iter().map(|&a| log_phi(a)).collect(),
        method: ProfileMethod::Normal,
    })
}

/// Fits every biomarker; output is in column order.
pub fn fit_biomarkers(ctx: &FitContext<'_>, workers: usize) -> Vec<BiomarkerFit> {
    let p = ctx.d.p();
    with_workers(workers, || (0..p).into_par_iter().map(|k| ctx.fit(k)).collect())
}

/// Tables for every converged fit, in column order.
pub fn profile_all(
    ctx: &FitContext<'_>,
    fits: &[BiomarkerFit],
    method: ProfileMethod,
    knots: &[f64],
    workers: usize,
) -> Result<Vec<ProfileTable>> {
    with_workers(workers, || {
        fits.par_iter()
            .filter(|f| f.converged())
            .map(|f| match method {
                ProfileMethod::Plugin => ctx.profile_plugin(f, knots),
                ProfileMethod::Normal => profile_normal(f, knots),
            })
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct FitAll {
    pub fits: Vec<BiomarkerFit>,
    pub grid: KnotGrid,
    /// One table per converged fit, in column order.
    pub tables: Vec<ProfileTable>,
}

impl FitAll {
    /// Indices of biomarkers without a table, with their status.
    pub fn flagged(&self) -> Vec<(usize, FitStatus)> {
        self.fits
            .iter()
            .filter(|f| !f.converged())
            .map(|f| (f.k, f.status))
            .collect()
    }
}

/// First-pass fits, knot selection over the converged estimates, then profiling.
pub fn fit_all(
    d: &Dataset,
    w: &WeightSet,
    kind: LossKind,
    method: ProfileMethod,
    num_knots: usize,
    workers: usize,
) -> Result<FitAll> {
    let ctx = FitContext::new(d, w, kind)?;
    let fits = fit_biomarkers(&ctx, workers);
    let grid = select_knots(&converged_estimates(&fits), num_knots)?;
    let tables = profile_all(&ctx, &fits, method, &grid.a, workers)?;
    Ok(FitAll { fits, grid, tables })
}

pub fn converged_estimates(fits: &[BiomarkerFit]) -> Vec<f64> {
    fits.iter().filter(|f| f.converged()).map(|f| f.beta_hat).collect()
}
