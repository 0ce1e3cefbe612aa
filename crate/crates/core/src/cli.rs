//! Command-line front end: `simulate`, `screen`, `benchmark` and `qvalue`.
//!
//! Every option can also come from a `key = value` file given with `--config`; flags on
//! the command line win. The effective settings are written to `provenance.txt` in the
//! output directory, which is itself a valid config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};

use crate::data::{load_dataset, write_dataset, OutcomeColumns, Schema};
use crate::error::{Error, Result};
use crate::fit::{fit_biomarkers, FitContext, ProfileMethod};
use crate::loss::LossKind;
use crate::pipeline::{run_screen, ScreenConfig};
use crate::prior_em::{EmOptions, MStep};
use crate::propensity::{compute_weights, PropensitySpec};
use crate::report;
use crate::screening::competitor_stats;
use crate::simulation::{replication_rng, run_benchmark, simulate, SimConfig, SimOutcome};

type Settings = BTreeMap<String, String>;

const DATA_KEYS: &[(&str, &str)] = &[
    ("data", "input CSV file"),
    ("outcome", "outcome column(s): `y` or `time,event`"),
    ("treatment", "treatment column (0/1 or -1/+1)"),
    ("confounders", "comma-separated confounder columns"),
    ("ignore", "comma-separated columns that are neither biomarkers nor confounders"),
    ("loss", "squared | binomial | cox (default from the outcome)"),
    ("propensity", "constant:P | column:NAME | lasso:folds=10[,grid=100]"),
    ("fdr", "comma-separated FDR levels"),
    ("seed", "random seed"),
    ("workers", "worker threads (0 = all cores)"),
    ("out", "output directory"),
];

const SCREEN_KEYS: &[(&str, &str)] = &[
    ("method", "plugin | normal"),
    ("knots", "number of prior knots"),
    ("em-tol", "relative log-likelihood tolerance"),
    ("em-maxiter", "maximum EM iterations"),
    ("mstep", "weighted | unweighted"),
];

const SIM_KEYS: &[(&str, &str)] = &[
    ("outcome", "binary | survival"),
    ("n", "subjects"),
    ("p", "biomarkers (at least 10)"),
    ("pi0", "null probability"),
    ("seed", "random seed"),
    ("out", "output directory"),
];

const BENCH_KEYS: &[(&str, &str)] = &[
    ("reps", "replications"),
    ("fdr", "comma-separated FDR levels"),
    ("plugin-knots", "comma-separated knot counts for the plug-in method"),
    ("normal-knots", "comma-separated knot counts for the normal method"),
    ("propensity", "true | lasso"),
    ("em-tol", "relative log-likelihood tolerance"),
    ("em-maxiter", "maximum EM iterations"),
    ("mstep", "weighted | unweighted"),
    ("workers", "worker threads (0 = all cores)"),
];

fn sub(name: &'static str, about: &'static str, groups: &[&[(&'static str, &'static str)]]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value settings file"),
    );
    let mut seen = Vec::new();
    for group in groups {
        for &(key, help) in *group {
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            cmd = cmd.arg(Arg::new(key).long(key).value_name("VALUE").help(help));
        }
    }
    cmd
}

pub fn command() -> Command {
    Command::new("odpscreen")
        .about("Empirical-Bayes screening of predictive biomarkers")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(sub("simulate", "generate a synthetic cohort", &[SIM_KEYS]))
        .subcommand(sub("screen", "rank biomarkers by the optimal discovery statistic", &[DATA_KEYS, SCREEN_KEYS]))
        .subcommand(sub("qvalue", "Wald-type statistics with q-values only", &[DATA_KEYS]))
        .subcommand(sub("benchmark", "Monte-Carlo comparison on synthetic cohorts", &[SIM_KEYS, BENCH_KEYS]))
}

fn parse_config(path: &Path) -> Result<Settings> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            )));
        };
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

/// Config file values overlaid by explicit flags.
fn settings(m: &ArgMatches, cmd: &Command) -> Result<Settings> {
    let mut s = match m.get_one::<String>("config") {
        Some(path) => parse_config(Path::new(path))?,
        None => Settings::new(),
    };
    let known: Vec<&str> = cmd.get_arguments().map(|a| a.get_id().as_str()).collect();
    if let Some(bad) = s.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown config key '{bad}'")));
    }
    for id in known {
        if id == "config" {
            continue;
        }
        if let Some(v) = m.get_one::<String>(id) {
            s.insert(id.to_string(), v.clone());
        }
    }
    s.remove("config");
    Ok(s)
}

struct Resolver {
    s: Settings,
}

impl Resolver {
    fn str(&mut self, key: &str, default: &str) -> String {
        self.s.entry(key.to_string()).or_insert_with(|| default.to_string()).clone()
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key, default);
        v.parse()
            .map_err(|e| Error::InvalidArgument(format!("--{key} '{v}': {e}")))
    }

    fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key, default);
        v.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|e| Error::InvalidArgument(format!("--{key} '{x}': {e}"))))
            .collect()
    }

    fn names(&mut self, key: &str) -> Vec<String> {
        self.str(key, "")
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(String::from)
            .collect()
    }

    fn out_dir(&mut self) -> Result<PathBuf> {
        let dir = PathBuf::from(self.str("out", "."));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn provenance(&self, dir: &Path, command: &str) -> Result<()> {
        let mut entries = vec![(
            "# odpscreen".to_string(),
            format!("{} {command}", env!("CARGO_PKG_VERSION")),
        )];
        entries.extend(self.s.iter().map(|(k, v)| (k.clone(), v.clone())));
        report::write_key_values(&dir.join("provenance.txt"), &entries)
    }
}

fn fdr_levels(r: &mut Resolver) -> Result<Vec<f64>> {
    let levels: Vec<f64> = r.list("fdr", "0.05,0.10,0.15,0.20")?;
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidArgument("--fdr levels must lie in (0,1)".into()));
    }
    Ok(levels)
}

fn em_options(r: &mut Resolver, workers: usize) -> Result<EmOptions> {
    let d = EmOptions::default();
    let tol: f64 = r.parse("em-tol", &d.tol.to_string())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("--em-tol must be positive".into()));
    }
    Ok(EmOptions {
        tol,
        max_iter: r.parse("em-maxiter", &d.max_iter.to_string())?,
        mstep: r.parse::<MStep>("mstep", &d.mstep.to_string())?,
        workers,
    })
}

struct Loaded {
    data: crate::data::Dataset,
    loss: Option<LossKind>,
    propensity: PropensitySpec,
    seed: u64,
    workers: usize,
    levels: Vec<f64>,
}

fn load(r: &mut Resolver) -> Result<Loaded> {
    let path = r.str("data", "");
    if path.is_empty() {
        return Err(Error::InvalidArgument("--data is required".into()));
    }
    let outcome = OutcomeColumns::parse(&r.str("outcome", "y"))?;
    let propensity: PropensitySpec = r.parse("propensity", "constant:0.5")?;
    let mut auxiliary = r.names("ignore");
    if let PropensitySpec::Column(name) = &propensity {
        if !auxiliary.contains(name) {
            auxiliary.push(name.clone());
        }
    }
    let schema = Schema {
        outcome,
        treatment: r.str("treatment", "trt"),
        confounders: r.names("confounders"),
        auxiliary,
    };
    let loss = match r.str("loss", "auto").as_str() {
        "auto" => None,
        other => Some(other.parse()?),
    };
    let seed = r.parse("seed", "1")?;
    let workers = r.parse("workers", "0")?;
    let levels = fdr_levels(r)?;
    let data = load_dataset(&path, &schema)?;
    log::info!("loaded {} subjects, {} biomarkers, {} confounders", data.n(), data.p(), data.q());
    Ok(Loaded {
        data,
        loss,
        propensity,
        seed,
        workers,
        levels,
    })
}

fn cmd_screen(r: &mut Resolver) -> Result<()> {
    let l = load(r)?;
    let cfg = ScreenConfig {
        loss: l.loss,
        method: r.parse::<ProfileMethod>("method", "plugin")?,
        knots: r.parse("knots", "100")?,
        fdr_levels: l.levels,
        em: em_options(r, l.workers)?,
        propensity: l.propensity,
        seed: l.seed,
        workers: l.workers,
    };
    let dir = r.out_dir()?;
    let out = run_screen(&l.data, &cfg)?;
    let names = l.data.biomarker_names();
    report::write_screen_report(&dir.join("report.tsv"), names, &out.fits, &out.odp.result)?;
    report::write_competitors(&dir.join("competitors.tsv"), names, &out.competitors)?;
    report::write_fit_diagnostics(&dir.join("fits.tsv"), names, &out.fits)?;
    report::write_prior(&dir.join("prior.tsv"), &out.odp.prior)?;
    report::write_em_trace(&dir.join("em_trace.tsv"), &out.odp.trace)?;
    r.provenance(&dir, "screen")?;
    for s in &out.odp.result.selections {
        log::info!(
            "FDR {}: {} selected (estimated FDR {:.4})",
            s.level,
            s.members.len(),
            s.estimated_fdr
        );
    }
    Ok(())
}

fn cmd_qvalue(r: &mut Resolver) -> Result<()> {
    let l = load(r)?;
    let kind = l.loss.unwrap_or_else(|| LossKind::default_for(l.data.outcomes()));
    kind.check_compatible(l.data.outcomes())?;
    let dir = r.out_dir()?;
    let prop = l.propensity.resolve(&l.data, l.seed)?;
    let w = compute_weights(l.data.treatment(), &prop.probabilities)?;
    let ctx = FitContext::new(&l.data, &w, kind)?;
    let fits = fit_biomarkers(&ctx, l.workers);
    let comp = competitor_stats(&l.data, kind, &fits, l.workers)?;
    let names = l.data.biomarker_names();
    report::write_qvalue_report(&dir.join("report.tsv"), names, &fits, &comp, &l.levels)?;
    report::write_competitors(&dir.join("competitors.tsv"), names, &comp)?;
    report::write_fit_diagnostics(&dir.join("fits.tsv"), names, &fits)?;
    r.provenance(&dir, "qvalue")
}

fn sim_basics(r: &mut Resolver) -> Result<(SimOutcome, usize, usize, f64, u64)> {
    Ok((
        r.parse("outcome", "binary")?,
        r.parse("n", "1000")?,
        r.parse("p", "3000")?,
        r.parse("pi0", "0.8")?,
        r.parse("seed", "1")?,
    ))
}

fn cmd_simulate(r: &mut Resolver) -> Result<()> {
    let (outcome, n, p, pi0, seed) = sim_basics(r)?;
    let dir = r.out_dir()?;
    let sim = simulate(n, p, outcome, pi0, &mut replication_rng(seed, 0))?;
    write_dataset(&sim.dataset, dir.join("data.csv"))?;
    report::write_truth(&dir.join("truth.tsv"), sim.dataset.biomarker_names(), &sim.truth)?;
    r.provenance(&dir, "simulate")?;
    log::info!(
        "wrote {} subjects, {} biomarkers ({} non-null)",
        n,
        p,
        sim.truth.nonnull_count()
    );
    Ok(())
}

fn cmd_benchmark(r: &mut Resolver) -> Result<()> {
    let (outcome, n, p, pi_null, seed) = sim_basics(r)?;
    let workers = r.parse("workers", "0")?;
    let estimate_propensity = match r.str("propensity", "true").as_str() {
        "true" => false,
        "lasso" => true,
        other => return Err(Error::InvalidArgument(format!("--propensity '{other}': expected true or lasso"))),
    };
    let cfg = SimConfig {
        n,
        p,
        outcome,
        pi_null,
        replications: r.parse("reps", "200")?,
        seed,
        fdr_levels: fdr_levels(r)?,
        plugin_knots: r.list("plugin-knots", "100")?,
        normal_knots: r.list("normal-knots", "100")?,
        estimate_propensity,
        em: em_options(r, 0)?,
        workers,
    };
    let dir = r.out_dir()?;
    let summary = run_benchmark(&cfg)?;
    report::write_benchmark(&dir.join("benchmark.tsv"), &summary)?;
    report::write_replications(&dir.join("replications.tsv"), &summary)?;
    r.provenance(&dir, "benchmark")?;
    if !summary.failures.is_empty() {
        log::warn!("{} replications failed and were excluded", summary.failures.len());
    }
    Ok(())
}

/// Runs the command line and returns the process exit status: 0 on success, 2 for
/// usage or validation errors, 1 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cmd = command();
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let result = settings(sub, sub_cmd).and_then(|s| {
        let mut r = Resolver { s };
        match name {
            "simulate" => cmd_simulate(&mut r),
            "screen" => cmd_screen(&mut r),
            "qvalue" => cmd_qvalue(&mut r),
            "benchmark" => cmd_benchmark(&mut r),
            _ => unreachable!(),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            if e.is_validation() {
                eprintln!("{}", sub_cmd.clone().render_usage());
                2
            } else {
                1
            }
        }
    }
}
