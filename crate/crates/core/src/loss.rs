//! Loss kernels `M(u, v)` of the weighted interaction model and their derivatives.
//!
//! For biomarker `k` the linear predictor is `eta_i = T_i (alpha + beta X_ik + Z_i' omega)`.
//! The objective is the weighted sum `sum_i w_i M(Y_i, eta_i)` for the squared and
//! binomial kernels, and the weighted negative Cox partial log-likelihood (Breslow ties)
//! for survival outcomes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Outcomes};
use crate::error::{Error, Result};
use crate::propensity::WeightSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `M(u, v) = (u - v)^2`
    Squared,
    /// `M(y, v) = log(1 + e^v) - y v`
    Binomial,
    /// Weighted negative Cox partial log-likelihood.
    Cox,
}

impl LossKind {
    /// Binomial for binary outcomes, Cox for survival outcomes.
    pub fn default_for(outcomes: &Outcomes) -> Self {
        if outcomes.is_survival() {
            LossKind::Cox
        } else {
            LossKind::Binomial
        }
    }

    pub fn check_compatible(self, outcomes: &Outcomes) -> Result<()> {
        match (self, outcomes.is_survival()) {
            (LossKind::Cox, true) | (LossKind::Binomial | LossKind::Squared, false) => Ok(()),
            (LossKind::Cox, false) => Err(Error::InvalidArgument(
                "cox loss requires survival outcomes".into(),
            )),
            (_, true) => Err(Error::InvalidArgument(format!(
                "{self} loss requires binary outcomes"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::Binomial => "binomial",
            LossKind::Cox => "cox",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "binomial" => Ok(LossKind::Binomial),
            "cox" => Ok(LossKind::Cox),
            _ => Err(Error::InvalidArgument(format!("unknown loss '{s}'"))),
        }
    }
}

/// Parameters of the biomarker-`k` linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub omega: Vec<f64>,
}

impl LinearPredictor {
    pub fn zero(k: usize, q: usize) -> Self {
        LinearPredictor {
            k,
            alpha: 0.0,
            beta: 0.0,
            omega: vec![0.0; q],
        }
    }

    /// Parameter vector in design-column order `(alpha, beta, omega...)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.alpha, self.beta];
        t.extend_from_slice(&self.omega);
        t
    }

    pub fn from_theta(k: usize, theta: &[f64]) -> Self {
        LinearPredictor {
            k,
            alpha: theta[0],
            beta: theta[1],
            omega: theta[2..].to_vec(),
        }
    }
}

/// Value, gradient and Hessian of an objective at one parameter point.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl Objective {
    fn check_finite(self) -> Result<Self> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        if self.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective gradient"));
        }
        if self.hessian.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective hessian"));
        }
        Ok(self)
    }
}

/// Dense column-major design matrix; row `i` is the covariate vector of subject `i`.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_columns(n: usize, columns: &[&[f64]]) -> Self {
        let mut data = Vec::with_capacity(n * columns.len());
        for c in columns {
            assert_eq!(c.len(), n, "design column length");
            data.extend_from_slice(c);
        }
        Design {
            n,
            d: columns.len(),
            data,
        }
    }

    /// Treatment-signed design `T_i (1, X_ik, Z_i)` of biomarker `k`.
    pub fn interaction(d: &Dataset, k: usize) -> Self {
        let n = d.n();
        let t = d.treatment();
        let mut data = Vec::with_capacity(n * (d.q() + 2));
        data.extend_from_slice(t);
        data.extend(d.biomarker(k).iter().zip(t).map(|(x, t)| x * t));
        for j in 0..d.q() {
            data.extend(d.confounder(j).iter().zip(t).map(|(z, t)| z * t));
        }
        Design {
            n,
            d: d.q() + 2,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.d
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    /// `eta = D theta`
    pub fn predictor(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.d);
        let mut eta = vec![0.0; self.n];
        for (j, &th) in theta.iter().enumerate() {
            if th != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.column(j)) {
                    *e += th * x;
                }
            }
        }
        eta
    }
}

/// `log(1 + e^v)` without overflow.
pub fn log1p_exp(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Risk-set bookkeeping for the Cox partial likelihood: subjects sorted by decreasing
/// observed time, grouped by tied times.
#[derive(Debug, Clone)]
pub struct CoxRisk {
    order: Vec<usize>,
    /// End offsets (exclusive) in `order` of each tied-time group.
    group_ends: Vec<usize>,
    event: Vec<bool>,
}

impl CoxRisk {
    pub fn new(time: &[f64], event: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        let mut group_ends = Vec::new();
        for (pos, w) in order.windows(2).enumerate() {
            if time[w[0]] != time[w[1]] {
                group_ends.push(pos + 1);
            }
        }
        if !order.is_empty() {
            group_ends.push(order.len());
        }
        CoxRisk {
            order,
            group_ends,
            event: event.to_vec(),
        }
    }

    pub fn value(&self, w: &[f64], eta: &[f64]) -> f64 {
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut total = 0.0;
        let mut start = 0;
        for &end in &self.group_ends {
            let group = &self.order[start..end];
            for &i in group {
                s0 += w[i] * (eta[i] - shift).exp();
            }
            let log_s0 = shift + s0.ln();
            for &i in group {
                if self.event[i] {
                    total -= w[i] * (eta[i] - log_s0);
                }
            }
            start = end;
        }
        total
    }

    fn objective(&self, w: &[f64], eta: &[f64], design: &Design) -> Objective {
        let d = design.ncols();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d * d];
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut row = vec![0.0; d];
        let mut start = 0;
        for &end in &self.group_ends {
            let group = &self.order[start..end];
            for &i in group {
                let r = w[i] * (eta[i] - shift).exp();
                s0 += r;
                for a in 0..d {
                    row[a] = design.data[a * design.n + i];
                }
                for a in 0..d {
                    s1[a] += r * row[a];
                    for b in 0..=a {
                        s2[a * d + b] += r * row[a] * row[b];
                    }
                }
            }
            let log_s0 = shift + s0.ln();
            for &i in group {
                if !self.event[i] {
                    continue;
                }
                let wi = w[i];
                value -= wi * (eta[i] - log_s0);
                for a in 0..d {
                    let mean_a = s1[a] / s0;
                    grad[a] -= wi * (design.data[a * design.n + i] - mean_a);
                    for b in 0..=a {
                        hess[a * d + b] += wi * (s2[a * d + b] / s0 - mean_a * s1[b] / s0);
                    }
                }
            }
            start = end;
        }
        let hessian = DMatrix::from_fn(d, d, |a, b| {
            if a >= b {
                hess[a * d + b]
            } else {
                hess[b * d + a]
            }
        });
        Objective {
            value,
            gradient: DVector::from_vec(grad),
            hessian,
        }
    }
}

/// Outcome data prepared for repeated evaluation of one loss kind.
#[derive(Debug, Clone)]
pub enum LossData {
    Squared(Vec<f64>),
    Binomial(Vec<f64>),
    Cox(CoxRisk),
}

impl LossData {
    pub fn new(kind: LossKind, outcomes: &Outcomes) -> Result<Self> {
        kind.check_compatible(outcomes)?;
        Ok(match (kind, outcomes) {
            (LossKind::Squared, Outcomes::Binary(y)) => LossData::Squared(y.clone()),
            (LossKind::Binomial, Outcomes::Binary(y)) => LossData::Binomial(y.clone()),
            (LossKind::Cox, Outcomes::Survival { time, event }) => {
                LossData::Cox(CoxRisk::new(time, event))
            }
            _ => unreachable!("compatibility checked above"),
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossData::Squared(_) => LossKind::Squared,
            LossData::Binomial(_) => LossKind::Binomial,
            LossData::Cox(_) => LossKind::Cox,
        }
    }

    /// Weighted loss at the predictor vector `eta`.
    pub fn value(&self, w: &[f64], eta: &[f64]) -> f64 {
        match self {
            LossData::Squared(y) => w
                .iter()
                .zip(y)
                .zip(eta)
                .map(|((w, y), e)| w * (y - e) * (y - e))
                .sum(),
            LossData::Binomial(y) => w
                .iter()
                .zip(y)
                .zip(eta)
                .map(|((w, y), &e)| w * (log1p_exp(e) - y * e))
                .sum(),
            LossData::Cox(risk) => risk.value(w, eta),
        }
    }

    /// Value, gradient and Hessian in `theta` where `eta = design * theta`.
    pub fn objective(&self, w: &[f64], design: &Design, theta: &[f64]) -> Objective {
        let eta = design.predictor(theta);
        let (y, derivs): (&[f64], fn(f64, f64) -> (f64, f64, f64)) = match self {
            LossData::Cox(risk) => return risk.objective(w, &eta, design),
            LossData::Squared(y) => (y, squared_derivs),
            LossData::Binomial(y) => (y, binomial_derivs),
        };
        let n = design.nrows();
        let d = design.ncols();
        let mut value = 0.0;
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for i in 0..n {
            let (v, g, h) = derivs(y[i], eta[i]);
            value += w[i] * v;
            m1[i] = w[i] * g;
            m2[i] = w[i] * h;
        }
        let mut gradient = DVector::zeros(d);
        let mut hessian = DMatrix::zeros(d, d);
        for a in 0..d {
            let ca = design.column(a);
            gradient[a] = ca.iter().zip(&m1).map(|(x, m)| x * m).sum();
            for b in 0..=a {
                let cb = design.column(b);
                let h: f64 = ca.iter().zip(cb).zip(&m2).map(|((x, z), m)| x * z * m).sum();
                hessian[(a, b)] = h;
                hessian[(b, a)] = h;
            }
        }
        Objective {
            value,
            gradient,
            hessian,
        }
    }
}

fn squared_derivs(y: f64, eta: f64) -> (f64, f64, f64) {
    let r = y - eta;
    (r * r, -2.0 * r, 2.0)
}

fn binomial_derivs(y: f64, eta: f64) -> (f64, f64, f64) {
    let p = sigmoid(eta);
    (log1p_exp(eta) - y * eta, p - y, p * (1.0 - p))
}

/// Negative log synthetic likelihood of biomarker `spec.k` with its exact gradient and
/// Hessian in `(alpha, beta, omega)`.
pub fn weighted_objective(
    kind: LossKind,
    d: &Dataset,
    w: &WeightSet,
    spec: &LinearPredictor,
) -> Result<Objective> {
    if spec.omega.len() != d.q() {
        return Err(Error::InvalidArgument(format!(
            "omega has length {}, dataset has {} confounders",
            spec.omega.len(),
            d.q()
        )));
    }
    if spec.k >= d.p() {
        return Err(Error::InvalidArgument(format!("biomarker index {} out of range", spec.k)));
    }
    let theta = spec.theta();
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite parameters".into()));
    }
    let data = LossData::new(kind, d.outcomes())?;
    let design = Design::interaction(d, spec.k);
    data.objective(&w.w, &design, &theta).check_finite()
}
