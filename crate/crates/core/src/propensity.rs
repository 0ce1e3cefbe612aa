//! Treatment-assignment probabilities and the inverse-propensity weights built from them.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lasso::{log_grid, LogisticLasso};
use crate::loss::{log1p_exp, sigmoid};

/// Bounds applied to estimated propensities.
pub const CLIP_LOW: f64 = 0.01;
pub const CLIP_HIGH: f64 = 0.99;

/// Smallest penalty on the grid as a fraction of the largest.
const GRID_RATIO: f64 = 0.001;

/// Per-subject weights `w_i = (1/d_i) / A` with `d_i = T_i pi_i + (1 - T_i)/2` and
/// `A = mean(1/d_i)`, so that the weights sum to `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub pi: Vec<f64>,
    /// Scaling constant `A`.
    pub a: f64,
    pub w: Vec<f64>,
}

pub fn compute_weights(treatment: &[f64], pi: &[f64]) -> Result<WeightSet> {
    if treatment.len() != pi.len() {
        return Err(Error::InvalidArgument(format!(
            "{} treatments but {} propensities",
            treatment.len(),
            pi.len()
        )));
    }
    if treatment.is_empty() {
        return Err(Error::InvalidArgument("no subjects".into()));
    }
    if let Some(i) = pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "propensity of subject {i} is {} (must lie strictly inside (0,1))",
            pi[i]
        )));
    }
    let inv: Vec<f64> = treatment
        .iter()
        .zip(pi)
        .map(|(&t, &p)| 1.0 / (t * p + (1.0 - t) / 2.0))
        .collect();
    let a = inv.iter().sum::<f64>() / inv.len() as f64;
    let w = inv.iter().map(|v| v / a).collect();
    Ok(WeightSet {
        pi: pi.to_vec(),
        a,
        w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySpec {
    Constant(f64),
    /// Name of an auxiliary dataset column holding the probabilities.
    Column(String),
    Supplied(Vec<f64>),
    Lasso { folds: usize, grid_size: usize },
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec::Constant(0.5)
    }
}

impl fmt::Display for PropensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensitySpec::Constant(v) => write!(f, "constant:{v}"),
            PropensitySpec::Column(c) => write!(f, "column:{c}"),
            PropensitySpec::Supplied(_) => write!(f, "supplied"),
            PropensitySpec::Lasso { folds, grid_size } => {
                write!(f, "lasso:folds={folds},grid={grid_size}")
            }
        }
    }
}

impl FromStr for PropensitySpec {
    type Err = Error;

    /// `constant:0.5`, `column:<name>` or `lasso:folds=10[,grid=100]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("invalid propensity spec '{s}'"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "constant" => {
                let v: f64 = rest.parse().map_err(|_| bad())?;
                Ok(PropensitySpec::Constant(v))
            }
            "column" if !rest.is_empty() => Ok(PropensitySpec::Column(rest.to_string())),
            "lasso" => {
                let mut folds = 10;
                let mut grid_size = 100;
                for kv in rest.split(',').filter(|kv| !kv.is_empty()) {
                    let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                    let v: usize = v.parse().map_err(|_| bad())?;
                    match k {
                        "folds" => folds = v,
                        "grid" => grid_size = v,
                        _ => return Err(bad()),
                    }
                }
                if folds < 2 || grid_size == 0 {
                    return Err(bad());
                }
                Ok(PropensitySpec::Lasso { folds, grid_size })
            }
            _ => Err(bad()),
        }
    }
}

/// Outcome of cross-validated lasso-logistic propensity estimation.
#[derive(Debug, Clone)]
pub struct LassoPropensity {
    /// Fitted `P(T = +1 | X, Z)`, clipped to `[CLIP_LOW, CLIP_HIGH]`.
    pub probabilities: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cv_deviance: Vec<f64>,
    pub selected: usize,
    pub nonzero: usize,
    /// The selected model has no active covariates.
    pub intercept_only: bool,
}

impl LassoPropensity {
    pub fn lambda(&self) -> f64 {
        self.lambdas[self.selected]
    }
}

/// Resolved propensities for a dataset.
#[derive(Debug, Clone)]
pub struct Propensity {
    pub probabilities: Vec<f64>,
    pub lasso: Option<LassoPropensity>,
}

impl PropensitySpec {
    pub fn resolve(&self, d: &Dataset, seed: u64) -> Result<Propensity> {
        let n = d.n();
        let check = |p: &[f64]| -> Result<()> {
            match p.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
                Some(i) => Err(Error::InvalidArgument(format!(
                    "propensity of subject {i} is {} (must lie strictly inside (0,1))",
                    p[i]
                ))),
                None => Ok(()),
            }
        };
        let probabilities = match self {
            PropensitySpec::Constant(v) => {
                check(&[*v])?;
                vec![*v; n]
            }
            PropensitySpec::Column(name) => {
                let col = d.auxiliary(name).ok_or_else(|| {
                    Error::Schema(format!("propensity column '{name}' not found"))
                })?;
                check(col)?;
                col.to_vec()
            }
            PropensitySpec::Supplied(v) => {
                if v.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} supplied propensities for {n} subjects",
                        v.len()
                    )));
                }
                check(v)?;
                v.clone()
            }
            PropensitySpec::Lasso { folds, grid_size } => {
                let fit = estimate_propensity_lasso(d, *folds, *grid_size, seed)?;
                return Ok(Propensity {
                    probabilities: fit.probabilities.clone(),
                    lasso: Some(fit),
                });
            }
        };
        Ok(Propensity {
            probabilities,
            lasso: None,
        })
    }
}

/// Lasso-logistic regression of the treatment indicator on all biomarkers and
/// confounders, with the penalty chosen by `folds`-fold cross-validated binomial
/// deviance (ties go to the larger penalty).
pub fn estimate_propensity_lasso(
    d: &Dataset,
    folds: usize,
    grid_size: usize,
    seed: u64,
) -> Result<LassoPropensity> {
    let n = d.n();
    if folds < 2 || n < 2 * folds {
        return Err(Error::InvalidArgument(format!(
            "lasso cross-validation needs n >= 2 * folds (n = {n}, folds = {folds})"
        )));
    }
    if grid_size == 0 {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    let y: Vec<f64> = d.treatment().iter().map(|&t| f64::from(t > 0.0)).collect();
    let columns: Vec<&[f64]> = (0..d.p())
        .map(|k| d.biomarker(k))
        .chain((0..d.q()).map(|j| d.confounder(j)))
        .collect();

    let full = LogisticLasso::new(columns.clone(), &y, None);
    let lambdas = log_grid(full.lambda_max(), GRID_RATIO, grid_size);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let model = LogisticLasso::new(columns.clone(), &y, Some(train));
            let mut dev = vec![0.0; lambdas.len()];
            model.path(&lambdas, |pt| {
                let eta = model.predict(pt, &test);
                dev[pt.index] = 2.0
                    * eta
                        .iter()
                        .zip(&test)
                        .map(|(&e, &i)| log1p_exp(e) - y[i] * e)
                        .sum::<f64>();
            })?;
            Ok(dev)
        })
        .collect::<Result<_>>()?;

    let cv_deviance: Vec<f64> = (0..lambdas.len())
        .map(|l| per_fold.iter().map(|dev| dev[l]).sum::<f64>() / n as f64)
        .collect();
    let mut selected = 0;
    for (l, &dev) in cv_deviance.iter().enumerate() {
        if dev < cv_deviance[selected] {
            selected = l;
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let mut eta = Vec::new();
    let mut nonzero = 0;
    full.path(&lambdas[..=selected], |pt| {
        if pt.index == selected {
            eta = full.predict(pt, &all);
            nonzero = pt.nonzero();
        }
    })?;
    let probabilities = eta
        .iter()
        .map(|&e| sigmoid(e).clamp(CLIP_LOW, CLIP_HIGH))
        .collect();
    if nonzero == 0 {
        log::info!("lasso propensity: cross-validation selected the intercept-only model");
    }
    Ok(LassoPropensity {
        probabilities,
        lambdas,
        cv_deviance,
        selected,
        nonzero,
        intercept_only: nonzero == 0,
    })
}
