//! Tab-separated output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fit::BiomarkerFit;
use crate::prior_em::{EmTrace, MixturePrior};
use crate::screening::{qvalues, CompetitorStat, ScreeningResult};
use crate::simulation::{BenchmarkSummary, SimTruth};

/// Shortest round-trip text for a number; `NA` for NaN.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Column name for a selection indicator, e.g. `sel_05` for 0.05.
pub fn selection_column(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("sel_{:02}", pct.round() as i64)
    } else {
        format!("sel_{}", fmt_num(level))
    }
}

struct Tsv {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl Tsv {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Tsv {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn line<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        let mut first = true;
        for f in fields {
            if !first {
                self.out.write_all(b"\t").map_err(|e| Error::io(&self.path, e))?;
            }
            first = false;
            self.out
                .write_all(f.as_ref().as_bytes())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn report_header(levels: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = [
        "biomarker", "beta_hat", "se", "ods", "post_null", "t_stat", "s_stat", "p_value", "q_value",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(levels.iter().map(|&l| selection_column(l)));
    h
}

fn estimate_fields(fit: &BiomarkerFit) -> [String; 2] {
    if fit.converged() {
        [fmt_num(fit.beta_hat), fmt_num(fit.se())]
    } else {
        ["NA".into(), "NA".into()]
    }
}

/// Main per-biomarker report. `p_value`/`q_value` belong to the weighted Wald statistic.
pub fn write_screen_report(
    path: &Path,
    names: &[String],
    fits: &[BiomarkerFit],
    result: &ScreeningResult,
) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&report_header(&result.levels))?;
    for (row, fit) in result.rows.iter().zip(fits) {
        let [b, se] = estimate_fields(fit);
        let mut f = vec![
            names[row.k].clone(),
            b,
            se,
            fmt_num(row.ods),
            fmt_num(row.post_null),
            fmt_num(row.t_stat),
            fmt_num(row.s_stat),
            fmt_num(row.p_value),
            fmt_num(row.q_value),
        ];
        f.extend(row.selected.iter().map(|&s| if s { "1" } else { "0" }.to_string()));
        tsv.line(&f)?;
    }
    tsv.finish()
}

/// Same layout as the main report with only the competitor columns populated.
pub fn write_qvalue_report(
    path: &Path,
    names: &[String],
    fits: &[BiomarkerFit],
    competitors: &[CompetitorStat],
    levels: &[f64],
) -> Result<()> {
    let t: Vec<f64> = competitors.iter().map(|c| c.t_stat).collect();
    let (p, q) = qvalues(&t);
    let mut tsv = Tsv::create(path)?;
    tsv.line(&report_header(levels))?;
    for (k, (fit, c)) in fits.iter().zip(competitors).enumerate() {
        let [b, se] = estimate_fields(fit);
        let mut f = vec![
            names[k].clone(),
            b,
            se,
            "NA".into(),
            "NA".into(),
            fmt_num(c.t_stat),
            fmt_num(c.s_stat),
            fmt_num(p[k]),
            fmt_num(q[k]),
        ];
        f.extend(levels.iter().map(|_| "NA".to_string()));
        tsv.line(&f)?;
    }
    tsv.finish()
}

/// Arm-difference statistic with its own p- and q-values, plus failure flags.
pub fn write_competitors(path: &Path, names: &[String], competitors: &[CompetitorStat]) -> Result<()> {
    let s: Vec<f64> = competitors.iter().map(|c| c.s_stat).collect();
    let (p, q) = qvalues(&s);
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["biomarker", "t_stat", "t_failed", "s_stat", "s_failed", "s_p_value", "s_q_value"])?;
    for (k, c) in competitors.iter().enumerate() {
        tsv.line(&[
            names[k].clone(),
            fmt_num(c.t_stat),
            (c.t_failed as u8).to_string(),
            fmt_num(c.s_stat),
            (c.s_failed as u8).to_string(),
            fmt_num(p[k]),
            fmt_num(q[k]),
        ])?;
    }
    tsv.finish()
}

/// Per-biomarker fit diagnostics: `k, converged, iterations, beta_hat, se`, where `k` is
/// the biomarker name.
pub fn write_fit_diagnostics(path: &Path, names: &[String], fits: &[BiomarkerFit]) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["k", "converged", "iterations", "beta_hat", "se"])?;
    for f in fits {
        tsv.line(&[
            names[f.k].clone(),
            (f.converged() as u8).to_string(),
            f.iterations.to_string(),
            fmt_num(f.beta_hat),
            fmt_num(f.se()),
        ])?;
    }
    tsv.finish()
}

pub fn write_prior(path: &Path, prior: &MixturePrior) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&[format!("# null_mass\t{}", fmt_num(prior.pi))])?;
    tsv.line(&["knot", "mass"])?;
    for (a, p) in prior.grid.a.iter().zip(&prior.p) {
        tsv.line(&[fmt_num(*a), fmt_num(*p)])?;
    }
    tsv.finish()
}

pub fn write_em_trace(path: &Path, trace: &EmTrace) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["iter", "loglik", "pi"])?;
    for (i, (ll, pi)) in trace.loglik.iter().zip(&trace.pi).enumerate() {
        tsv.line(&[i.to_string(), fmt_num(*ll), fmt_num(*pi)])?;
    }
    tsv.finish()
}

pub fn write_truth(path: &Path, names: &[String], truth: &SimTruth) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["biomarker", "beta", "null"])?;
    for (k, b) in truth.beta.iter().enumerate() {
        tsv.line(&[names[k].clone(), fmt_num(*b), (truth.null_mask[k] as u8).to_string()])?;
    }
    tsv.finish()
}

/// Averages across replications: `method, fdr_level, avg_tp, avg_fp`.
pub fn write_benchmark(path: &Path, summary: &BenchmarkSummary) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["method", "fdr_level", "avg_tp", "avg_fp"])?;
    for r in &summary.rows {
        tsv.line(&[r.method.clone(), fmt_num(r.fdr_level), fmt_num(r.avg_tp), fmt_num(r.avg_fp)])?;
    }
    tsv.finish()
}

/// Per-replication counts.
pub fn write_replications(path: &Path, summary: &BenchmarkSummary) -> Result<()> {
    let mut tsv = Tsv::create(path)?;
    tsv.line(&["rep", "method", "fdr_level", "tp", "fp", "censoring"])?;
    for rec in &summary.records {
        let cens = rec.censoring_fraction.map_or("NA".into(), fmt_num);
        for (m, name) in summary.methods.iter().enumerate() {
            for (l, level) in summary.levels.iter().enumerate() {
                let c = rec.counts[m][l];
                tsv.line(&[
                    rec.rep.to_string(),
                    name.clone(),
                    fmt_num(*level),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    cens.clone(),
                ])?;
            }
        }
    }
    tsv.finish()
}

/// Flat `key = value` file.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (k, v) in entries {
        writeln!(f, "{k} = {v}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.25), "0.25");
        assert_eq!(fmt_num(f64::NAN), "NA");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(1e-300), "1e-300");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-3.5e20), "-3.5e20");
    }

    #[test]
    fn selection_column_names() {
        assert_eq!(selection_column(0.05), "sel_05");
        assert_eq!(selection_column(0.10), "sel_10");
        assert_eq!(selection_column(0.2), "sel_20");
        assert_eq!(selection_column(0.125), "sel_0.125");
    }
}
