//! Posterior non-null probabilities, the optimal discovery statistic, model-based FDR
//! selection, and the conventional Wald-type competitors with Storey q-values.

use std::cmp::Ordering;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::data::{Dataset, Outcomes};
use crate::error::{Error, Result};
use crate::fit::{BiomarkerFit, ProfileTable};
use crate::loss::{Design, LossData, LossKind};
use crate::newton;
use crate::prior_em::MixturePrior;
use crate::with_workers;

/// Relative slack when comparing a running mean of posterior null probabilities with
/// the requested level.
const FDR_SLACK: f64 = 1e-12;

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log sum_l p_l PL(a_l)`
fn log_alternative(table: &ProfileTable, prior: &MixturePrior) -> f64 {
    let m = table.log_pl_knots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = table
        .log_pl_knots
        .iter()
        .zip(&prior.p)
        .map(|(v, p)| p * (v - m).exp())
        .sum();
    m + s.ln()
}

/// Log posterior probabilities `(null, non-null)` of one biomarker.
pub fn log_posterior(table: &ProfileTable, prior: &MixturePrior) -> (f64, f64) {
    let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
    let a = ln(prior.pi) + table.log_pl_null;
    let b = ln(1.0 - prior.pi) + log_alternative(table, prior);
    let den = log_sum_exp2(a, b);
    (a - den, b - den)
}

pub fn posterior_nonnull(table: &ProfileTable, prior: &MixturePrior) -> f64 {
    log_posterior(table, prior).1.exp()
}

/// `log ODS_k = log sum_l p_l PL_k(a_l) - log PL_k(0)`
pub fn log_ods(table: &ProfileTable, prior: &MixturePrior) -> f64 {
    log_alternative(table, prior) - table.log_pl_null
}

pub fn ods(table: &ProfileTable, prior: &MixturePrior) -> f64 {
    log_ods(table, prior).exp()
}

/// Ranking inputs of one biomarker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdsScore {
    pub k: usize,
    pub log_ods: f64,
    pub post_null: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSet {
    pub level: f64,
    /// ODS of the last selected biomarker; `+inf` for the empty set.
    pub lambda: f64,
    /// Selected biomarkers in ranking order.
    pub members: Vec<usize>,
    /// Mean posterior null probability over the members (0 when empty).
    pub estimated_fdr: f64,
}

/// Sorts by ODS descending (ties: smaller posterior null, then index) and keeps the
/// longest prefix whose mean posterior null probability does not exceed `level`.
pub fn select_at_fdr(scores: &[OdsScore], level: f64) -> SelectionSet {
    let mut order: Vec<&OdsScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.log_ods
            .total_cmp(&a.log_ods)
            .then(a.post_null.total_cmp(&b.post_null))
            .then(a.k.cmp(&b.k))
    });
    let mut cum = 0.0;
    let mut best = 0;
    let mut best_cum = 0.0;
    for (j, s) in order.iter().enumerate() {
        cum += s.post_null;
        let mean = cum / (j + 1) as f64;
        if mean <= level * (1.0 + FDR_SLACK) {
            best = j + 1;
            best_cum = cum;
        }
    }
    let members: Vec<usize> = order[..best].iter().map(|s| s.k).collect();
    SelectionSet {
        level,
        lambda: if best == 0 {
            f64::INFINITY
        } else {
            order[best - 1].log_ods.exp()
        },
        members,
        estimated_fdr: if best == 0 { 0.0 } else { best_cum / best as f64 },
    }
}

/// Two-sided normal p-values and Storey q-values (`lambda = 0.5`).
pub fn qvalues(stats: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = stats
        .iter()
        .map(|z| erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
        .collect();
    let q = qvalues_from_p(&p);
    (p, q)
}

/// Storey null proportion with a single tuning value of 0.5, clamped to `[1/m, 1]`.
pub fn storey_pi0(p: &[f64]) -> f64 {
    let m = p.len() as f64;
    let above = p.iter().filter(|&&v| v > 0.5).count() as f64;
    (above / (0.5 * m)).clamp(1.0 / m, 1.0)
}

pub fn qvalues_from_p(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    if m == 0 {
        return Vec::new();
    }
    let pi0 = storey_pi0(p);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        let v = pi0 * m as f64 * p[i] / (rank + 1) as f64;
        running = running.min(v).min(1.0);
        q[i] = running;
    }
    // tied p-values share the smallest q in the tie
    for w in order.windows(2).rev() {
        if p[w[0]] == p[w[1]] {
            q[w[0]] = q[w[0]].min(q[w[1]]);
            q[w[1]] = q[w[0]];
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompetitorStat {
    /// `beta_hat / se` from the weighted fit.
    pub t_stat: f64,
    /// Arm-wise difference statistic.
    pub s_stat: f64,
    /// Weighted fit unusable; `t_stat` set to 0.
    pub t_failed: bool,
    /// An arm-specific fit failed; `s_stat` set to 0.
    pub s_failed: bool,
}

struct Arm {
    rows: Vec<usize>,
    loss: LossData,
    confounders: Vec<Vec<f64>>,
    residual_variance: bool,
}

impl Arm {
    fn new(d: &Dataset, kind: LossKind, treated: bool) -> Result<Self> {
        let rows: Vec<usize> = (0..d.n())
            .filter(|&i| (d.treatment()[i] > 0.0) == treated)
            .collect();
        let outcomes = d.outcomes().subset(&rows);
        // arm fits are unweighted: logistic (or least squares) on (1, X_k, Z) for binary
        // outcomes, Cox on X_k alone for survival outcomes
        let (loss, confounders) = match (&outcomes, kind) {
            (Outcomes::Survival { .. }, _) => (LossData::new(LossKind::Cox, &outcomes)?, Vec::new()),
            (Outcomes::Binary(_), k) => (
                LossData::new(k, &outcomes)?,
                (0..d.q())
                    .map(|j| rows.iter().map(|&i| d.confounder(j)[i]).collect())
                    .collect(),
            ),
        };
        Ok(Arm {
            rows,
            loss,
            confounders,
            residual_variance: kind == LossKind::Squared,
        })
    }

    /// Estimate and standard error of the biomarker coefficient.
    fn fit(&self, x: &[f64]) -> Option<(f64, f64)> {
        let m = self.rows.len();
        let xk: Vec<f64> = self.rows.iter().map(|&i| x[i]).collect();
        let ones = vec![1.0; m];
        let (design, idx) = if matches!(self.loss, LossData::Cox(_)) {
            (Design::from_columns(m, &[&xk]), 0)
        } else {
            let mut cols: Vec<&[f64]> = vec![&ones, &xk];
            cols.extend(self.confounders.iter().map(Vec::as_slice));
            (Design::from_columns(m, &cols), 1)
        };
        let w = vec![1.0; m];
        let res = newton::minimize(
            |th| self.loss.objective(&w, &design, th),
            |th| self.loss.value(&w, &design.predictor(th)),
            vec![0.0; design.ncols()],
        );
        if !res.converged {
            return None;
        }
        let inv = res.inverse_hessian()?;
        let mut var = inv[(idx, idx)];
        if self.residual_variance {
            // least squares: Hessian is 2 D'D, variance is sigma^2 (D'D)^-1
            let dof = m as f64 - design.ncols() as f64;
            if dof <= 0.0 {
                return None;
            }
            var *= 2.0 * res.objective.value / dof;
        }
        (var > 0.0 && var.is_finite()).then(|| (res.theta[idx], var.sqrt()))
    }
}

/// `T_k` from the weighted fits and `S_k` from unweighted arm-specific fits.
pub fn competitor_stats(
    d: &Dataset,
    kind: LossKind,
    fits: &[BiomarkerFit],
    workers: usize,
) -> Result<Vec<CompetitorStat>> {
    kind.check_compatible(d.outcomes())?;
    let min_arm = d.q() + 2;
    let treated = Arm::new(d, kind, true)?;
    let control = Arm::new(d, kind, false)?;
    if treated.rows.len() < min_arm || control.rows.len() < min_arm {
        return Err(Error::InvalidData(format!(
            "each arm needs at least {min_arm} subjects for arm-wise fits"
        )));
    }
    Ok(with_workers(workers, || {
        fits.par_iter()
            .map(|f| {
                let (t_stat, t_failed) = if f.converged() {
                    (f.beta_hat / f.se(), false)
                } else {
                    (0.0, true)
                };
                let x = d.biomarker(f.k);
                let arms = if d.is_constant_biomarker(f.k) {
                    None
                } else {
                    treated.fit(x).zip(control.fit(x))
                };
                let (s_stat, s_failed) = match arms {
                    Some(((b1, s1), (b0, s0))) => ((b1 - b0) / (s1 * s1 + s0 * s0).sqrt(), false),
                    None => (0.0, true),
                };
                CompetitorStat {
                    t_stat,
                    s_stat,
                    t_failed,
                    s_failed,
                }
            })
            .collect()
    }))
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerResult {
    pub k: usize,
    pub beta_hat: f64,
    pub se: f64,
    pub ods: f64,
    pub log_ods: f64,
    pub post_null: f64,
    pub log_post_null: f64,
    pub log_post_nonnull: f64,
    /// False for biomarkers without a usable fit; they get ODS 1 and the prior null
    /// probability and are never selected.
    pub eligible: bool,
    pub t_stat: f64,
    pub s_stat: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub s_p_value: f64,
    pub s_q_value: f64,
    pub selected: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ScreeningResult {
    pub rows: Vec<BiomarkerResult>,
    pub levels: Vec<f64>,
    pub selections: Vec<SelectionSet>,
    pub pi_hat: f64,
}

/// Scores every biomarker and forms the selection sets at each level.
///
/// `tables` holds one table per usable fit (matched by `k`); other biomarkers are kept
/// as ineligible rows.
pub fn screen(
    fits: &[BiomarkerFit],
    tables: &[ProfileTable],
    prior: &MixturePrior,
    competitors: &[CompetitorStat],
    levels: &[f64],
) -> Result<ScreeningResult> {
    if competitors.len() != fits.len() {
        return Err(Error::InvalidArgument("competitor statistics misaligned with fits".into()));
    }
    let p = fits.len();
    let pi = prior.pi;
    let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
    let mut rows: Vec<BiomarkerResult> = fits
        .iter()
        .zip(competitors)
        .map(|(f, c)| BiomarkerResult {
            k: f.k,
            beta_hat: f.beta_hat,
            se: f.se(),
            ods: 1.0,
            log_ods: 0.0,
            post_null: pi,
            log_post_null: ln(pi),
            log_post_nonnull: ln(1.0 - pi),
            eligible: false,
            t_stat: c.t_stat,
            s_stat: c.s_stat,
            p_value: f64::NAN,
            q_value: f64::NAN,
            s_p_value: f64::NAN,
            s_q_value: f64::NAN,
            selected: vec![false; levels.len()],
        })
        .collect();
    for t in tables {
        let row = rows
            .get_mut(t.k)
            .filter(|r| r.k == t.k)
            .ok_or_else(|| Error::InvalidArgument(format!("table for unknown biomarker {}", t.k)))?;
        let (lpn, lpa) = log_posterior(t, prior);
        row.log_ods = log_ods(t, prior);
        row.ods = row.log_ods.exp();
        row.log_post_null = lpn;
        row.log_post_nonnull = lpa;
        row.post_null = lpn.exp();
        row.eligible = true;
    }
    let (tp, tq) = qvalues(&competitors.iter().map(|c| c.t_stat).collect::<Vec<_>>());
    let (sp, sq) = qvalues(&competitors.iter().map(|c| c.s_stat).collect::<Vec<_>>());
    for (k, row) in rows.iter_mut().enumerate() {
        row.p_value = tp[k];
        row.q_value = tq[k];
        row.s_p_value = sp[k];
        row.s_q_value = sq[k];
    }

    let scores: Vec<OdsScore> = rows
        .iter()
        .filter(|r| r.eligible)
        .map(|r| OdsScore {
            k: r.k,
            log_ods: r.log_ods,
            post_null: r.post_null,
        })
        .collect();
    let selections: Vec<SelectionSet> = levels.iter().map(|&lv| select_at_fdr(&scores, lv)).collect();
    for (li, sel) in selections.iter().enumerate() {
        for &k in &sel.members {
            rows[k].selected[li] = true;
        }
    }
    debug_assert_eq!(rows.len(), p);
    Ok(ScreeningResult {
        rows,
        levels: levels.to_vec(),
        selections,
        pi_hat: pi,
    })
}

impl ScreeningResult {
    /// Largest deviation of `log ODS + log((1-pi)/pi)` from the log posterior odds.
    pub fn ods_identity_error(&self) -> f64 {
        let pi = self.pi_hat;
        if !(pi > 0.0 && pi < 1.0) {
            return 0.0;
        }
        let offset = (1.0 - pi).ln() - pi.ln();
        self.rows
            .iter()
            .filter(|r| r.log_post_null.is_finite() && r.log_post_nonnull.is_finite())
            .map(|r| ((r.log_ods + offset) - (r.log_post_nonnull - r.log_post_null)).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the ODS/posterior identity, nesting of the selection sets across levels,
    /// and that every estimated FDR respects its level.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let err = self.ods_identity_error();
        if err > 1e-8 {
            return Err(format!("ODS/posterior identity violated by {err:e}"));
        }
        let mut by_level: Vec<&SelectionSet> = self.selections.iter().collect();
        by_level.sort_by(|a, b| a.level.partial_cmp(&b.level).unwrap_or(Ordering::Equal));
        for pair in by_level.windows(2) {
            let larger: std::collections::HashSet<usize> = pair[1].members.iter().copied().collect();
            if !pair[0].members.iter().all(|k| larger.contains(k)) {
                return Err(format!(
                    "selection at {} is not nested in selection at {}",
                    pair[0].level, pair[1].level
                ));
            }
        }
        for s in &self.selections {
            if s.estimated_fdr > s.level * (1.0 + FDR_SLACK) {
                return Err(format!("estimated FDR {} above level {}", s.estimated_fdr, s.level));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::ProfileMethod;
    use crate::prior_em::KnotGrid;

    fn prior(pi: f64, p: Vec<f64>) -> MixturePrior {
        let l = p.len();
        MixturePrior {
            pi,
            p,
            grid: KnotGrid::new(-1.0, 1.0, l.max(2)).map(|mut g| {
                g.a.truncate(l);
                g
            })
            .unwrap(),
        }
    }

    fn table(null: f64, knots: Vec<f64>) -> ProfileTable {
        ProfileTable {
            k: 0,
            log_pl_null: null,
            log_pl_knots: knots,
            method: ProfileMethod::Normal,
        }
    }

    #[test]
    fn posterior_limits() {
        let t = table(-2.0, vec![-1.0, -3.0]);
        assert_eq!(posterior_nonnull(&t, &prior(0.0, vec![0.5, 0.5])), 1.0);
        assert_eq!(posterior_nonnull(&t, &prior(1.0, vec![0.5, 0.5])), 0.0);
    }

    #[test]
    fn posterior_three_quarters() {
        // sum_l p_l PL(a_l) = 3 PL(0)
        let t = table(0.7, vec![0.7 + 2f64.ln(), 0.7 + 4f64.ln()]);
        let pr = prior(0.5, vec![0.5, 0.5]);
        assert!((posterior_nonnull(&t, &pr) - 0.75).abs() < 1e-14);
        assert!((ods(&t, &pr) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn flat_likelihood_gives_unit_ods() {
        let t = table(-5.0, vec![-5.0; 4]);
        assert!((ods(&t, &prior(0.3, vec![0.25; 4])) - 1.0).abs() < 1e-14);
    }

    fn scores(post: &[f64]) -> Vec<OdsScore> {
        post.iter()
            .enumerate()
            .map(|(k, &p)| OdsScore {
                k,
                log_ods: -(k as f64),
                post_null: p,
            })
            .collect()
    }

    #[test]
    fn running_average_selection() {
        let s = scores(&[0.01, 0.04, 0.10, 0.30]);
        assert_eq!(select_at_fdr(&s, 0.05).members, vec![0, 1, 2]);
        assert_eq!(select_at_fdr(&s, 0.10).members.len(), 3);
        assert_eq!(select_at_fdr(&s, 0.15).members.len(), 4);
        let sel = select_at_fdr(&s, 0.10);
        assert!((sel.lambda - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn perfect_signal_selects_everything() {
        let s = scores(&[0.0; 5]);
        let sel = select_at_fdr(&s, 0.01);
        assert_eq!(sel.members.len(), 5);
        assert_eq!(sel.estimated_fdr, 0.0);
    }

    #[test]
    fn empty_selection_has_infinite_threshold() {
        let sel = select_at_fdr(&scores(&[0.9, 0.8]), 0.05);
        assert!(sel.members.is_empty());
        assert_eq!(sel.lambda, f64::INFINITY);
    }

    #[test]
    fn hand_computed_qvalues() {
        let q = qvalues_from_p(&[0.02, 0.04, 0.5, 1.0]);
        let expected = [0.04, 0.04, 1.0 / 3.0, 0.5];
        for (a, b) in q.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{q:?}");
        }
        assert_eq!(storey_pi0(&[0.02, 0.04, 0.5, 1.0]), 0.5);
    }

    #[test]
    fn pure_null_qvalues_saturate() {
        let q = qvalues_from_p(&[1.0; 6]);
        assert_eq!(storey_pi0(&[1.0; 6]), 1.0);
        assert!(q.iter().all(|&v| v == 1.0));
        let (p, _) = qvalues(&[0.0, 0.0]);
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
