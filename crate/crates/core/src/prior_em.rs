//! Knot grid and EM estimation of the null/non-null mixture prior.
//!
//! The prior puts mass `pi` at zero and `(1 - pi) p_l` at fixed knots `a_l`. The EM
//! alternates posterior null responsibilities `xi_k`, knot responsibilities
//! `eta_kl` (given non-null), and the closed-form updates of `pi` and `p`.
//!
//! Profile tables are converted once into scaled form: each biomarker's knot entries
//! are exponentiated after subtracting their own maximum, and the null entry and
//! knot maximum are kept as log offsets. Nothing underflows as a whole row, so the
//! EM runs on plain products.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::ProfileTable;
use crate::with_workers;

/// Rows per parallel E-step chunk. Fixed so that reductions do not depend on the
/// number of workers.
const CHUNK: usize = 256;
const PI_FLOOR: f64 = 1e-12;

/// Equally spaced knots between the smallest and largest effect estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    pub lower: f64,
    pub upper: f64,
    pub a: Vec<f64>,
}

impl KnotGrid {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn new(lower: f64, upper: f64, l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 knots, got {l}")));
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::DegenerateKnots);
        }
        let step = (upper - lower) / (l - 1) as f64;
        let mut a: Vec<f64> = (0..l).map(|i| lower + i as f64 * step).collect();
        a[l - 1] = upper;
        Ok(KnotGrid { lower, upper, a })
    }
}

pub fn select_knots(beta_hats: &[f64], l: usize) -> Result<KnotGrid> {
    let finite = beta_hats.iter().copied().filter(|b| b.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
        (lo.min(b), hi.max(b))
    });
    if lo >= hi {
        return Err(Error::DegenerateKnots);
    }
    KnotGrid::new(lo, hi, l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    /// Prior probability of a null effect.
    pub pi: f64,
    /// Mass of each knot given a non-null effect; sums to one.
    pub p: Vec<f64>,
    pub grid: KnotGrid,
}

impl MixturePrior {
    /// `pi = 0.5` with uniform knot masses.
    pub fn initial(grid: KnotGrid) -> Self {
        let l = grid.len();
        MixturePrior {
            pi: 0.5,
            p: vec![1.0 / l as f64; l],
            grid,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::InvalidArgument(format!("null mass {} outside [0,1]", self.pi)));
        }
        if self.p.len() != self.grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} knot masses for {} knots",
                self.p.len(),
                self.grid.len()
            )));
        }
        let sum: f64 = self.p.iter().sum();
        if self.p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument("knot masses are not on the simplex".into()));
        }
        Ok(())
    }
}

/// Update rule for the knot masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MStep {
    /// `p_l` proportional to `sum_k (1 - xi_k) eta_kl` (exact mixture EM).
    Weighted,
    /// `p_l = (1/p) sum_k eta_kl`, ignoring the null responsibilities.
    Unweighted,
}

impl fmt::Display for MStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MStep::Weighted => "weighted",
            MStep::Unweighted => "unweighted",
        })
    }
}

impl FromStr for MStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(MStep::Weighted),
            "unweighted" => Ok(MStep::Unweighted),
            _ => Err(Error::InvalidArgument(format!("unknown m-step '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Relative change of the marginal log-likelihood at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    pub mstep: MStep,
    pub workers: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 5000,
            mstep: MStep::Weighted,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmTrace {
    /// Marginal log-likelihood at the start of each iteration.
    pub loglik: Vec<f64>,
    /// Null mass at the start of each iteration.
    pub pi: Vec<f64>,
    /// Posterior null responsibilities at the returned prior.
    pub xi: Vec<f64>,
    /// Knot responsibilities at the returned prior, row-major `p x L`.
    pub eta: Vec<f64>,
    pub num_knots: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl EmTrace {
    pub fn eta_row(&self, k: usize) -> &[f64] {
        &self.eta[k * self.num_knots..(k + 1) * self.num_knots]
    }
}

/// Profile tables in scaled form.
struct Scaled {
    l: usize,
    /// `log PL_k(0)`
    null: Vec<f64>,
    /// `max_l log PL_k(a_l)`
    knot_max: Vec<f64>,
    /// `exp(log PL_k(a_l) - knot_max_k)`, row-major.
    ratio: Vec<f64>,
}

impl Scaled {
    fn new(tables: &[ProfileTable], l: usize) -> Result<Self> {
        let mut null = Vec::with_capacity(tables.len());
        let mut knot_max = Vec::with_capacity(tables.len());
        let mut ratio = Vec::with_capacity(tables.len() * l);
        for t in tables {
            if t.log_pl_knots.len() != l {
                return Err(Error::InvalidArgument(format!(
                    "table {} has {} knots, grid has {l}",
                    t.k,
                    t.log_pl_knots.len()
                )));
            }
            if !t.log_pl_null.is_finite() || t.log_pl_knots.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("profile table"));
            }
            let m = t.log_pl_knots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            null.push(t.log_pl_null);
            knot_max.push(m);
            ratio.extend(t.log_pl_knots.iter().map(|v| (v - m).exp()));
        }
        Ok(Scaled {
            l,
            null,
            knot_max,
            ratio,
        })
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.ratio[k * self.l..(k + 1) * self.l]
    }
}

/// Per-biomarker quantities at the current prior.
struct Posterior {
    /// log of the marginal density `pi PL(0) + (1 - pi) sum_l p_l PL(a_l)`
    log_den: f64,
    xi: f64,
    /// `1 - xi`, computed without cancellation
    xi_c: f64,
    /// `sum_l p_l ratio_kl`
    mix: f64,
}

/// Dot product with four fixed accumulators; the summation order does not depend on
/// anything but the length.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            s[j] += x[j] * y[j];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

fn posterior(null: f64, knot_max: f64, row: &[f64], pi: f64, p: &[f64]) -> Posterior {
    let mix = dot(row, p);
    // both terms relative to knot_max, so that shifting a whole table by a constant only
    // moves log_den
    let log_null = if pi > 0.0 { pi.ln() + (null - knot_max) } else { f64::NEG_INFINITY };
    let log_alt = if pi < 1.0 && mix > 0.0 {
        (1.0 - pi).ln() + mix.ln()
    } else {
        f64::NEG_INFINITY
    };
    let m = log_null.max(log_alt);
    let (en, ea) = ((log_null - m).exp(), (log_alt - m).exp());
    let s = en + ea;
    Posterior {
        log_den: knot_max + m + s.ln(),
        xi: en / s,
        xi_c: ea / s,
        mix,
    }
}

/// Sums gathered over one chunk of biomarkers during an E-step.
struct Partial {
    loglik: f64,
    xi: f64,
    xi_c: f64,
    /// `sum_k c_k ratio_kl` with `c_k = (1 - xi_k)/mix_k` (weighted) or `1/mix_k`.
    knot: Vec<f64>,
}

fn e_step(sc: &Scaled, pi: f64, p: &[f64], mstep: MStep, xi_out: &mut [f64]) -> Partial {
    let n = sc.null.len();
    let chunks: Vec<Partial> = xi_out
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(c, xi_chunk)| {
            let start = c * CHUNK;
            let mut part = Partial {
                loglik: 0.0,
                xi: 0.0,
                xi_c: 0.0,
                knot: vec![0.0; sc.l],
            };
            for (off, xi_slot) in xi_chunk.iter_mut().enumerate() {
                let k = start + off;
                let row = sc.row(k);
                let post = posterior(sc.null[k], sc.knot_max[k], row, pi, p);
                *xi_slot = post.xi;
                part.loglik += post.log_den;
                part.xi += post.xi;
                part.xi_c += post.xi_c;
                if post.mix > 0.0 {
                    let c = match mstep {
                        MStep::Weighted => post.xi_c / post.mix,
                        MStep::Unweighted => 1.0 / post.mix,
                    };
                    if c > 0.0 {
                        for (acc, r) in part.knot.iter_mut().zip(row) {
                            *acc += c * r;
                        }
                    }
                }
            }
            part
        })
        .collect();
    debug_assert_eq!(chunks.len(), n.div_ceil(CHUNK));
    let mut total = Partial {
        loglik: 0.0,
        xi: 0.0,
        xi_c: 0.0,
        knot: vec![0.0; sc.l],
    };
    for part in chunks {
        total.loglik += part.loglik;
        total.xi += part.xi;
        total.xi_c += part.xi_c;
        for (acc, v) in total.knot.iter_mut().zip(&part.knot) {
            *acc += v;
        }
    }
    total
}

/// `sum_k log[pi PL_k(0) + (1 - pi) sum_l p_l PL_k(a_l)]`
pub fn marginal_loglik(tables: &[ProfileTable], prior: &MixturePrior) -> Result<f64> {
    prior.validate()?;
    let sc = Scaled::new(tables, prior.grid.len())?;
    Ok((0..tables.len())
        .map(|k| posterior(sc.null[k], sc.knot_max[k], sc.row(k), prior.pi, &prior.p).log_den)
        .sum())
}

/// Maximizes the marginal likelihood over `(pi, p)` starting from `init`.
pub fn em_fit(
    tables: &[ProfileTable],
    init: &MixturePrior,
    opts: &EmOptions,
) -> Result<(MixturePrior, EmTrace)> {
    init.validate()?;
    if tables.is_empty() {
        return Err(Error::InvalidArgument("no profile tables".into()));
    }
    let l = init.grid.len();
    let sc = Scaled::new(tables, l)?;
    let count = tables.len() as f64;
    let boundary = init.pi == 0.0 || init.pi == 1.0;
    if boundary {
        log::warn!("EM initialized on the boundary (pi = {}); it cannot move", init.pi);
    }
    let clamp = |pi: f64| {
        if boundary {
            pi
        } else {
            pi.clamp(PI_FLOOR, 1.0 - PI_FLOOR)
        }
    };

    let mut pi = clamp(init.pi);
    let mut reported_pi = init.pi;
    let mut p = init.p.clone();
    let mut xi = vec![0.0; tables.len()];
    let mut trace_ll = Vec::new();
    let mut trace_pi = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    with_workers(opts.workers, || -> Result<()> {
        loop {
            let part = e_step(&sc, pi, &p, opts.mstep, &mut xi);
            if !part.loglik.is_finite() || xi.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite("EM responsibilities"));
            }
            if let Some(&prev) = trace_ll.last() {
                let prev: f64 = prev;
                let change = (part.loglik - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if change < opts.tol {
                    converged = true;
                }
            }
            trace_ll.push(part.loglik);
            trace_pi.push(reported_pi);
            if converged || iterations >= opts.max_iter {
                break;
            }

            // M-step
            let norm = match opts.mstep {
                MStep::Weighted => part.xi_c,
                MStep::Unweighted => count,
            };
            if norm > 0.0 {
                let mut next: Vec<f64> = p.iter().zip(&part.knot).map(|(p, s)| p * s / norm).collect();
                let total: f64 = next.iter().sum();
                if total > 0.0 {
                    next.iter_mut().for_each(|v| *v /= total);
                    p = next;
                }
            }
            reported_pi = part.xi / count;
            pi = clamp(reported_pi);
            iterations += 1;
        }
        Ok(())
    })?;

    let mut eta = vec![0.0; tables.len() * l];
    for (k, out) in eta.chunks_mut(l).enumerate() {
        let row = sc.row(k);
        let mix: f64 = row.iter().zip(&p).map(|(r, p)| r * p).sum();
        if mix > 0.0 {
            for ((o, r), pl) in out.iter_mut().zip(row).zip(&p) {
                *o = pl * r / mix;
            }
        } else {
            out.copy_from_slice(&p);
        }
    }

    let prior = MixturePrior {
        pi: reported_pi,
        p,
        grid: init.grid.clone(),
    };
    let trace = EmTrace {
        loglik: trace_ll,
        pi: trace_pi,
        xi,
        eta,
        num_knots: l,
        iterations,
        converged,
    };
    Ok((prior, trace))
}
