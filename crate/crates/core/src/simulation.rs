//! Synthetic cohorts with correlated biomarkers, confounded treatment assignment and
//! mixture-distributed interaction effects, plus a Monte-Carlo benchmark harness.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::data::{Dataset, Outcomes, Schema};
use crate::error::{Error, Result};
use crate::fit::{fit_biomarkers, FitContext, ProfileMethod};
use crate::loss::{sigmoid, LossKind};
use crate::pipeline::{odp_from_fits, DEFAULT_FDR_LEVELS};
use crate::prior_em::EmOptions;
use crate::propensity::{compute_weights, PropensitySpec};
use crate::screening::{competitor_stats, qvalues};
use crate::with_workers;

/// Main-effect coefficients of `X_1..X_6`.
pub const GAMMA: [f64; 6] = [0.2, -0.2, 0.2, -0.2, 0.2, -0.2];
/// Coefficients of `X_1^2..X_6^2`.
pub const DELTA: [f64; 6] = [0.2, -0.2, 0.2, -0.2, 0.2, -0.2];
/// Coefficients of `T Z_1` and `T Z_2`.
pub const XI: [f64; 2] = [0.1, 0.1];
pub const NOISE_SD: f64 = 5.0;
pub const CENSOR_RANGE: (f64, f64) = (20.0, 60.0);
const AR: f64 = 0.1;
const Z_CORR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimOutcome {
    Binary,
    Survival,
}

impl fmt::Display for SimOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimOutcome::Binary => "binary",
            SimOutcome::Survival => "survival",
        })
    }
}

impl FromStr for SimOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(SimOutcome::Binary),
            "survival" => Ok(SimOutcome::Survival),
            _ => Err(Error::InvalidArgument(format!("unknown outcome kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub outcome: SimOutcome,
    pub pi_null: f64,
    pub replications: usize,
    pub seed: u64,
    pub fdr_levels: Vec<f64>,
    /// Knot counts for the plug-in method; one benchmark row set per entry.
    pub plugin_knots: Vec<usize>,
    /// Knot counts for the normal-approximation method.
    pub normal_knots: Vec<usize>,
    /// Estimate the propensity by cross-validated lasso instead of using the truth.
    pub estimate_propensity: bool,
    pub em: EmOptions,
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            p: 3000,
            outcome: SimOutcome::Binary,
            pi_null: 0.8,
            replications: 200,
            seed: 1,
            fdr_levels: DEFAULT_FDR_LEVELS.to_vec(),
            plugin_knots: vec![100],
            normal_knots: vec![100],
            estimate_propensity: false,
            em: EmOptions::default(),
            workers: 0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 10 {
            return Err(Error::InvalidArgument(format!(
                "simulation needs n >= 2 and p >= 10, got n={} p={}",
                self.n, self.p
            )));
        }
        if !(self.pi_null > 0.0 && self.pi_null < 1.0) {
            return Err(Error::InvalidArgument(format!("pi_null {} outside (0,1)", self.pi_null)));
        }
        if self.fdr_levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::InvalidArgument("FDR levels must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub beta: Vec<f64>,
    pub null_mask: Vec<bool>,
}

impl SimTruth {
    pub fn nonnull_count(&self) -> usize {
        self.null_mask.iter().filter(|&&m| !m).count()
    }
}

/// Independent stream for replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Rows are mean-zero normal with covariance `0.1^|i-j|`, built by an AR(1) recursion.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - AR * AR).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, j)] = if j == 0 { e } else { AR * x[(i, j - 1)] + innov * e };
        }
    }
    x
}

/// Two unit-variance confounders with correlation 0.2 and mean `0.1 X_1 - 0.1 X_10`.
pub fn gen_confounders<R: Rng + ?Sized>(x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    if x.ncols() < 10 {
        return Err(Error::InvalidArgument(format!(
            "confounders depend on X_10 but only {} biomarkers were generated",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let l21 = Z_CORR;
    let l22 = (1.0 - Z_CORR * Z_CORR).sqrt();
    let mut z = DMatrix::zeros(n, 2);
    for i in 0..n {
        let mu = 0.1 * x[(i, 0)] - 0.1 * x[(i, 9)];
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        z[(i, 0)] = mu + e1;
        z[(i, 1)] = mu + l21 * e1 + l22 * e2;
    }
    Ok(z)
}

/// Treatment in `{-1, +1}` and the true propensity `P(T = +1 | X, Z)`.
pub fn gen_treatment<R: Rng + ?Sized>(x: &DMatrix<f64>, z: &DMatrix<f64>, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows();
    let mut t = Vec::with_capacity(n);
    let mut prop = Vec::with_capacity(n);
    for i in 0..n {
        let x2 = if x.ncols() > 1 { x[(i, 1)] } else { 0.0 };
        let z1 = if z.ncols() > 0 { z[(i, 0)] } else { 0.0 };
        let pr = sigmoid(0.2 * x[(i, 0)] + 0.1 * x2 + 0.1 * z1);
        let u: f64 = rng.random();
        t.push(if u < pr { 1.0 } else { -1.0 });
        prop.push(pr);
    }
    (t, prop)
}

/// Each effect is 0 with probability `pi_null`, otherwise drawn from
/// `0.3 N(0.2, 0.1^2) + 0.7 N(-0.5, 0.1^2)`.
pub fn gen_effects<R: Rng + ?Sized>(p: usize, pi_null: f64, rng: &mut R) -> SimTruth {
    let pos = Normal::new(0.2, 0.1).expect("valid normal");
    let neg = Normal::new(-0.5, 0.1).expect("valid normal");
    let mut beta = Vec::with_capacity(p);
    let mut null_mask = Vec::with_capacity(p);
    for _ in 0..p {
        let u: f64 = rng.random();
        if u < pi_null {
            beta.push(0.0);
            null_mask.push(true);
        } else {
            let v: f64 = rng.random();
            beta.push(if v < 0.3 { pos.sample(rng) } else { neg.sample(rng) });
            null_mask.push(false);
        }
    }
    SimTruth { beta, null_mask }
}

/// Latent index without the noise term.
pub fn latent_index(x: &DMatrix<f64>, z: &DMatrix<f64>, t: &[f64], truth: &SimTruth) -> Vec<f64> {
    let n = x.nrows();
    let mut idx = vec![0.0; n];
    for j in 0..GAMMA.len().min(x.ncols()) {
        for (i, v) in idx.iter_mut().enumerate() {
            let xv = x[(i, j)];
            *v += GAMMA[j] * xv + DELTA[j] * xv * xv;
        }
    }
    let mut inter = vec![0.0; n];
    for (j, &b) in truth.beta.iter().enumerate() {
        if b != 0.0 {
            for (i, v) in inter.iter_mut().enumerate() {
                *v += b * x[(i, j)];
            }
        }
    }
    for i in 0..n {
        let zs: f64 = (0..z.ncols().min(2)).map(|j| XI[j] * z[(i, j)]).sum();
        idx[i] += t[i] * (inter[i] + zs);
    }
    idx
}

pub fn gen_outcome<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    t: &[f64],
    truth: &SimTruth,
    outcome: SimOutcome,
    rng: &mut R,
) -> Result<Outcomes> {
    if truth.beta.len() != x.ncols() || t.len() != x.nrows() || z.nrows() != x.nrows() {
        return Err(Error::InvalidArgument("simulation dimensions do not match".into()));
    }
    let idx = latent_index(x, z, t, truth);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid normal");
    Ok(match outcome {
        SimOutcome::Binary => Outcomes::Binary(
            idx.iter()
                .map(|v| if v + noise.sample(rng) > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        ),
        SimOutcome::Survival => {
            let censor = Uniform::new(CENSOR_RANGE.0, CENSOR_RANGE.1).expect("valid range");
            let mut time = Vec::with_capacity(idx.len());
            let mut event = Vec::with_capacity(idx.len());
            for v in &idx {
                let y = (v + noise.sample(rng)).exp();
                let c = censor.sample(rng);
                time.push(y.min(c).max(f64::MIN_POSITIVE));
                event.push(y <= c);
            }
            Outcomes::Survival { time, event }
        }
    })
}

/// One generated cohort with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Biomarkers `x1..xp`, confounders `z1, z2`, and the true propensity as the auxiliary
    /// column `propensity`.
    pub dataset: Dataset,
    pub truth: SimTruth,
    pub propensity: Vec<f64>,
}

pub fn simulate<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    outcome: SimOutcome,
    pi_null: f64,
    rng: &mut R,
) -> Result<SimulatedData> {
    if !(pi_null > 0.0 && pi_null < 1.0) {
        return Err(Error::InvalidArgument(format!("pi_null {pi_null} outside (0,1)")));
    }
    let x = gen_covariates(n, p, rng);
    let z = gen_confounders(&x, rng)?;
    let (t, propensity) = gen_treatment(&x, &z, rng);
    let truth = gen_effects(p, pi_null, rng);
    let outcomes = gen_outcome(&x, &z, &t, &truth, outcome, rng)?;
    let schema = match outcome {
        SimOutcome::Binary => Schema::binary(),
        SimOutcome::Survival => Schema::survival(),
    }
    .with_confounders(["z1", "z2"]);
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(outcomes, t, x, z, names, schema)?.with_auxiliary("propensity", propensity.clone())?;
    Ok(SimulatedData {
        dataset,
        truth,
        propensity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Odp { method: ProfileMethod, knots: usize },
    Wald,
    ArmDifference,
}

/// True and false positives of one method at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
}

impl Counts {
    pub fn fdp(&self) -> f64 {
        let total = self.tp + self.fp;
        if total == 0 {
            0.0
        } else {
            self.fp as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub nonnull: usize,
    pub treated_fraction: f64,
    pub censoring_fraction: Option<f64>,
    /// Screening runs whose ODS/posterior identity or selection nesting check failed.
    pub invariant_violations: usize,
    /// `counts[m][l]` for method `m` and level `l`.
    pub counts: Vec<Vec<Counts>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub fdr_level: f64,
    pub avg_tp: f64,
    pub avg_fp: f64,
    /// Average realized false discovery proportion.
    pub avg_fdp: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub methods: Vec<String>,
    pub levels: Vec<f64>,
    pub rows: Vec<BenchmarkRow>,
    pub records: Vec<ReplicationRecord>,
    /// Failed replications with their error messages; excluded from the averages.
    pub failures: Vec<(usize, String)>,
}

impl BenchmarkSummary {
    pub fn row(&self, method: &str, level: f64) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.fdr_level - level).abs() < 1e-12)
    }

    pub fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }
}

fn method_list(cfg: &SimConfig) -> Vec<(String, BenchMethod)> {
    let mut out = Vec::new();
    let mut push = |label: &str, method: ProfileMethod, knots: &[usize]| {
        for &l in knots {
            let name = if knots.len() == 1 {
                label.to_string()
            } else {
                format!("{label}(L={l})")
            };
            out.push((name, BenchMethod::Odp { method, knots: l }));
        }
    };
    push("ODP-P", ProfileMethod::Plugin, &cfg.plugin_knots);
    push("ODP-N", ProfileMethod::Normal, &cfg.normal_knots);
    out.push(("T".into(), BenchMethod::Wald));
    out.push(("S".into(), BenchMethod::ArmDifference));
    out
}

fn count(selected: impl Iterator<Item = usize>, truth: &SimTruth) -> Counts {
    let mut c = Counts::default();
    for k in selected {
        if truth.null_mask[k] {
            c.fp += 1;
        } else {
            c.tp += 1;
        }
    }
    c
}

/// Generates and analyses one replication.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<ReplicationRecord> {
    let mut rng = replication_rng(cfg.seed, rep as u64);
    let sim = simulate(cfg.n, cfg.p, cfg.outcome, cfg.pi_null, &mut rng)?;
    let d = &sim.dataset;
    let prop = if cfg.estimate_propensity {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(rep as u64);
        PropensitySpec::Lasso {
            folds: 10,
            grid_size: 100,
        }
        .resolve(d, seed)?
        .probabilities
    } else {
        sim.propensity.clone()
    };
    let weights = compute_weights(d.treatment(), &prop)?;
    let kind = LossKind::default_for(d.outcomes());
    let ctx = FitContext::new(d, &weights, kind)?;
    let fits = fit_biomarkers(&ctx, 0);
    let competitors = competitor_stats(d, kind, &fits, 0)?;
    let em = EmOptions {
        workers: 0,
        ..cfg.em.clone()
    };
    let levels = &cfg.fdr_levels;

    let mut counts = Vec::new();
    let mut invariant_violations = 0;
    for (_, m) in method_list(cfg) {
        let per_level: Vec<Counts> = match m {
            BenchMethod::Odp { method, knots } => {
                let run = odp_from_fits(&ctx, &fits, &competitors, method, knots, &em, levels, 0)?;
                if run.result.check_invariants().is_err() {
                    invariant_violations += 1;
                }
                run.result
                    .selections
                    .iter()
                    .map(|s| count(s.members.iter().copied(), &sim.truth))
                    .collect()
            }
            BenchMethod::Wald | BenchMethod::ArmDifference => {
                let stats: Vec<f64> = competitors
                    .iter()
                    .map(|c| if m == BenchMethod::Wald { c.t_stat } else { c.s_stat })
                    .collect();
                let (_, q) = qvalues(&stats);
                levels
                    .iter()
                    .map(|&lv| count((0..q.len()).filter(|&k| q[k] <= lv), &sim.truth))
                    .collect()
            }
        };
        counts.push(per_level);
    }
    let censoring_fraction = match d.outcomes() {
        Outcomes::Survival { event, .. } => Some(event.iter().filter(|e| !**e).count() as f64 / event.len() as f64),
        Outcomes::Binary(_) => None,
    };
    Ok(ReplicationRecord {
        rep,
        nonnull: sim.truth.nonnull_count(),
        treated_fraction: d.treated_count() as f64 / d.n() as f64,
        censoring_fraction,
        invariant_violations,
        counts,
    })
}

/// Runs all replications (in parallel, each on its own random stream) and averages the
/// true/false positive counts of every method at every level.
pub fn run_benchmark(cfg: &SimConfig) -> Result<BenchmarkSummary> {
    cfg.validate()?;
    let methods = method_list(cfg);
    let results: Vec<Result<ReplicationRecord>> = with_workers(cfg.workers, || {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, rep))
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures.push((rep, e.to_string()));
            }
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} replications failed", failures.len(), cfg.replications);
    }
    if records.is_empty() {
        return Err(Error::InvalidData("every replication failed".into()));
    }
    let reps = records.len() as f64;
    let mut rows = Vec::new();
    for (m, (name, _)) in methods.iter().enumerate() {
        for (l, &level) in cfg.fdr_levels.iter().enumerate() {
            let (mut tp, mut fp, mut fdp) = (0.0, 0.0, 0.0);
            for rec in &records {
                let c = rec.counts[m][l];
                tp += c.tp as f64;
                fp += c.fp as f64;
                fdp += c.fdp();
            }
            rows.push(BenchmarkRow {
                method: name.clone(),
                fdr_level: level,
                avg_tp: tp / reps,
                avg_fp: fp / reps,
                avg_fdp: fdp / reps,
            });
        }
    }
    Ok(BenchmarkSummary {
        methods: methods.into_iter().map(|(n, _)| n).collect(),
        levels: cfg.fdr_levels.clone(),
        rows,
        records,
        failures,
    })
}
