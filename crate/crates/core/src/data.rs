//! Observed-data structures and CSV ingestion.
//!
//! A [`Dataset`] holds one outcome per subject (all binary or all right-censored
//! survival), a treatment arm coded `-1`/`+1`, a biomarker matrix `X` (n x p) and a
//! confounder matrix `Z` (n x q, possibly empty). Matrices are column-major so that
//! per-biomarker access is contiguous.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcome of a single subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Binary { y: bool },
    Survival { time: f64, event: bool },
}

/// Column-wise storage of the outcome vector; a single variant for the whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcomes {
    /// 0/1 indicators stored as reals.
    Binary(Vec<f64>),
    /// Observed (possibly censored) times and event indicators (1 = failure observed).
    Survival { time: Vec<f64>, event: Vec<bool> },
}

impl Outcomes {
    pub fn len(&self) -> usize {
        match self {
            Outcomes::Binary(y) => y.len(),
            Outcomes::Survival { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_survival(&self) -> bool {
        matches!(self, Outcomes::Survival { .. })
    }

    pub fn get(&self, i: usize) -> Outcome {
        match self {
            Outcomes::Binary(y) => Outcome::Binary { y: y[i] > 0.5 },
            Outcomes::Survival { time, event } => Outcome::Survival {
                time: time[i],
                event: event[i],
            },
        }
    }

    /// Gathers a subset of subjects, preserving the given order.
    pub fn subset(&self, rows: &[usize]) -> Outcomes {
        match self {
            Outcomes::Binary(y) => Outcomes::Binary(rows.iter().map(|&i| y[i]).collect()),
            Outcomes::Survival { time, event } => Outcomes::Survival {
                time: rows.iter().map(|&i| time[i]).collect(),
                event: rows.iter().map(|&i| event[i]).collect(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Outcomes::Binary(y) => {
                if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidData(format!(
                        "binary outcome of subject {i} is {} (expected 0 or 1)",
                        y[i]
                    )));
                }
            }
            Outcomes::Survival { time, event } => {
                if time.len() != event.len() {
                    return Err(Error::InvalidData(
                        "survival time and event vectors differ in length".into(),
                    ));
                }
                if let Some(i) = time.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
                    return Err(Error::InvalidData(format!(
                        "survival time of subject {i} is {} (must be positive)",
                        time[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Names of the outcome column(s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumns {
    Binary(String),
    Survival { time: String, event: String },
}

impl OutcomeColumns {
    /// Parses `y` (binary) or `time,event` (survival).
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [y] if !y.is_empty() => Ok(OutcomeColumns::Binary(y.to_string())),
            [t, e] if !t.is_empty() && !e.is_empty() => Ok(OutcomeColumns::Survival {
                time: t.to_string(),
                event: e.to_string(),
            }),
            _ => Err(Error::Schema(format!(
                "outcome must be 'y' or 'time,event', got '{spec}'"
            ))),
        }
    }

    fn names(&self) -> Vec<&str> {
        match self {
            OutcomeColumns::Binary(y) => vec![y.as_str()],
            OutcomeColumns::Survival { time, event } => vec![time.as_str(), event.as_str()],
        }
    }
}

impl fmt::Display for OutcomeColumns {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeColumns::Binary(y) => write!(f, "{y}"),
            OutcomeColumns::Survival { time, event } => write!(f, "{time},{event}"),
        }
    }
}

/// Column-role mapping for CSV files. Every column not named here is a biomarker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub outcome: OutcomeColumns,
    pub treatment: String,
    pub confounders: Vec<String>,
    /// Non-biomarker columns carried along verbatim (e.g. a supplied propensity).
    pub auxiliary: Vec<String>,
}

impl Schema {
    pub fn binary() -> Self {
        Schema {
            outcome: OutcomeColumns::Binary("y".into()),
            treatment: "trt".into(),
            confounders: Vec::new(),
            auxiliary: Vec::new(),
        }
    }

    pub fn survival() -> Self {
        Schema {
            outcome: OutcomeColumns::Survival {
                time: "time".into(),
                event: "event".into(),
            },
            ..Schema::binary()
        }
    }

    pub fn with_confounders<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.confounders = names.into_iter().map(Into::into).collect();
        self
    }

    fn reserved(&self) -> Vec<&str> {
        let mut v = self.outcome.names();
        v.push(&self.treatment);
        v.extend(self.confounders.iter().map(String::as_str));
        v.extend(self.auxiliary.iter().map(String::as_str));
        v
    }
}

/// Validated observed data. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    outcomes: Outcomes,
    treatment: Vec<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    biomarker_names: Vec<String>,
    auxiliary: Vec<(String, Vec<f64>)>,
    schema: Schema,
}

impl Dataset {
    /// Builds a dataset from already-parsed parts. `treatment` must be coded `-1`/`+1`.
    pub fn new(
        outcomes: Outcomes,
        treatment: Vec<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        biomarker_names: Vec<String>,
        schema: Schema,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 subjects, got {n}")));
        }
        if treatment.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(Error::InvalidData(format!(
                "dimension mismatch: {n} outcomes, {} treatments, X has {} rows, Z has {} rows",
                treatment.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        if biomarker_names.len() != x.ncols() {
            return Err(Error::InvalidData(format!(
                "{} biomarker names for {} columns",
                biomarker_names.len(),
                x.ncols()
            )));
        }
        if z.ncols() != schema.confounders.len() {
            return Err(Error::InvalidData(format!(
                "Z has {} columns but schema names {} confounders",
                z.ncols(),
                schema.confounders.len()
            )));
        }
        outcomes.validate()?;
        if let Some(i) = treatment.iter().position(|&t| t != 1.0 && t != -1.0) {
            return Err(Error::InvalidData(format!(
                "treatment of subject {i} is {} (expected -1 or +1)",
                treatment[i]
            )));
        }
        check_both_arms(&treatment)?;
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate value".into()));
        }
        let mut seen = HashSet::new();
        for name in &biomarker_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate biomarker name '{name}'")));
            }
        }
        Ok(Dataset {
            outcomes,
            treatment,
            x,
            z,
            biomarker_names,
            auxiliary: Vec::new(),
            schema,
        })
    }

    /// Attaches a named auxiliary column (length n).
    pub fn with_auxiliary(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.n() {
            return Err(Error::InvalidData(format!(
                "auxiliary column '{name}' has {} entries, expected {}",
                values.len(),
                self.n()
            )));
        }
        if !self.schema.auxiliary.contains(&name) {
            self.schema.auxiliary.push(name.clone());
        }
        self.auxiliary.push((name, values));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    /// Number of biomarkers.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of confounders.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn outcomes(&self) -> &Outcomes {
        &self.outcomes
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Contiguous view of biomarker column `k`.
    pub fn biomarker(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[k * n..(k + 1) * n]
    }

    pub fn confounder(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.z.as_slice()[j * n..(j + 1) * n]
    }

    pub fn biomarker_names(&self) -> &[String] {
        &self.biomarker_names
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn auxiliary(&self, name: &str) -> Option<&[f64]> {
        self.auxiliary
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&t| t > 0.0).count()
    }

    /// True when every entry of biomarker `k` equals the first.
    pub fn is_constant_biomarker(&self, k: usize) -> bool {
        is_constant(self.biomarker(k))
    }
}

pub(crate) fn is_constant(col: &[f64]) -> bool {
    col.split_first()
        .map(|(first, rest)| rest.iter().all(|v| v == first))
        .unwrap_or(true)
}

fn check_both_arms(treatment: &[f64]) -> Result<()> {
    let treated = treatment.iter().filter(|&&t| t > 0.0).count();
    if treated == 0 || treated == treatment.len() {
        return Err(Error::InvalidData("both treatment arms required".into()));
    }
    Ok(())
}

/// Maps a raw treatment column onto `-1`/`+1`. `{0,1}` codings map 0 to -1;
/// columns already in `{-1,+1}` are returned unchanged.
pub fn recode_treatment(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(raw.iter().map(|&v| if v == 1.0 { 1.0 } else { -1.0 }).collect())
    } else if raw.iter().all(|&v| v == -1.0 || v == 1.0) {
        Ok(raw.to_vec())
    } else {
        Err(Error::InvalidData(
            "treatment must be coded {0,1} or {-1,+1}".into(),
        ))
    }
}

/// Reads a CSV file with a header row and splits its columns by `schema`.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name '{name}'")));
        }
    }
    let index_of = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    // validate the schema before reading any data
    for name in schema.reserved() {
        index_of(name)?;
    }
    let reserved: HashSet<&str> = schema.reserved().into_iter().collect();
    let biomarker_cols: Vec<usize> = (0..header.len())
        .filter(|&j| !reserved.contains(header[j].as_str()))
        .collect();

    let ncol = header.len();
    let mut values: Vec<f64> = Vec::new();
    let mut nrows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != ncol {
            return Err(Error::Cell {
                row: r + 1,
                column: String::new(),
                message: format!("expected {ncol} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Cell {
                row: r + 1,
                column: header[j].clone(),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("non-numeric value '{cell}'")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row: r + 1,
                    column: header[j].clone(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values.push(v);
        }
        nrows += 1;
    }

    let column = |j: usize| -> Vec<f64> { (0..nrows).map(|i| values[i * ncol + j]).collect() };

    let outcomes = match &schema.outcome {
        OutcomeColumns::Binary(y) => {
            let j = index_of(y)?;
            let y = column(j);
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Cell {
                    row: i + 1,
                    column: header[j].clone(),
                    message: "binary outcome must be 0 or 1".into(),
                });
            }
            Outcomes::Binary(y)
        }
        OutcomeColumns::Survival { time, event } => {
            let (jt, je) = (index_of(time)?, index_of(event)?);
            let t = column(jt);
            if let Some(i) = t.iter().position(|&v| v <= 0.0) {
                return Err(Error::Cell {
                    row: i + 1,
                    column: header[jt].clone(),
                    message: "survival time must be positive".into(),
                });
            }
            let e = column(je);
            if let Some(i) = e.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Cell {
                    row: i + 1,
                    column: header[je].clone(),
                    message: "event indicator must be 0 or 1".into(),
                });
            }
            Outcomes::Survival {
                time: t,
                event: e.iter().map(|&v| v == 1.0).collect(),
            }
        }
    };

    let treatment = recode_treatment(&column(index_of(&schema.treatment)?))?;

    let mut x = DMatrix::<f64>::zeros(nrows, biomarker_cols.len());
    for (k, &j) in biomarker_cols.iter().enumerate() {
        for i in 0..nrows {
            x[(i, k)] = values[i * ncol + j];
        }
    }
    let mut z = DMatrix::<f64>::zeros(nrows, schema.confounders.len());
    for (c, name) in schema.confounders.iter().enumerate() {
        let j = index_of(name)?;
        for i in 0..nrows {
            z[(i, c)] = values[i * ncol + j];
        }
    }
    let auxiliary = schema
        .auxiliary
        .iter()
        .map(|name| Ok((name.clone(), column(index_of(name)?))))
        .collect::<Result<Vec<_>>>()?;
    drop(values);

    let names = biomarker_cols.iter().map(|&j| header[j].clone()).collect();
    let mut schema = schema.clone();
    schema.auxiliary.clear();
    let mut d = Dataset::new(outcomes, treatment, x, z, names, schema)?;
    for (name, v) in auxiliary {
        d = d.with_auxiliary(name, v)?;
    }
    Ok(d)
}

/// Writes `d` as CSV: outcome column(s), treatment (as -1/+1), confounders, auxiliary
/// columns, then biomarkers. Numbers use the shortest representation that parses back
/// to the identical `f64`.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let schema = d.schema();
    let mut header: Vec<&str> = schema.outcome.names();
    header.push(&schema.treatment);
    header.extend(schema.confounders.iter().map(String::as_str));
    header.extend(d.auxiliary.iter().map(|(n, _)| n.as_str()));
    header.extend(d.biomarker_names.iter().map(String::as_str));

    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..d.n() {
        line.clear();
        match d.outcomes() {
            Outcomes::Binary(y) => push_num(&mut line, y[i]),
            Outcomes::Survival { time, event } => {
                push_num(&mut line, time[i]);
                push_num(&mut line, if event[i] { 1.0 } else { 0.0 });
            }
        }
        push_num(&mut line, d.treatment[i]);
        for c in 0..d.q() {
            push_num(&mut line, d.z[(i, c)]);
        }
        for (_, v) in &d.auxiliary {
            push_num(&mut line, v[i]);
        }
        for k in 0..d.p() {
            push_num(&mut line, d.x[(i, k)]);
        }
        line.pop();
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn push_num(line: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(line, "{v},");
}

/// Non-fatal findings about a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    ConstantBiomarker { index: usize, name: String },
    /// Treated fraction outside [0.1, 0.9].
    TreatmentImbalance { treated_fraction: f64 },
    /// Minority class of a binary outcome below 10%.
    OutcomeImbalance { positive_fraction: f64 },
    CensoringFraction(f64),
    NoConfounders,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ConstantBiomarker { index, name } => {
                write!(f, "constant biomarker: column {index} ('{name}')")
            }
            Diagnostic::TreatmentImbalance { treated_fraction } => write!(
                f,
                "extreme class imbalance: treated fraction {treated_fraction:.3}"
            ),
            Diagnostic::OutcomeImbalance { positive_fraction } => write!(
                f,
                "extreme class imbalance: outcome positive fraction {positive_fraction:.3}"
            ),
            Diagnostic::CensoringFraction(c) => write!(f, "censoring fraction {c:.3}"),
            Diagnostic::NoConfounders => write!(f, "q=0; models fit without Z"),
        }
    }
}

const IMBALANCE: f64 = 0.1;

pub fn validate_dataset(d: &Dataset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for k in 0..d.p() {
        if d.is_constant_biomarker(k) {
            out.push(Diagnostic::ConstantBiomarker {
                index: k,
                name: d.biomarker_names[k].clone(),
            });
        }
    }
    let n = d.n() as f64;
    let treated_fraction = d.treated_count() as f64 / n;
    if !(IMBALANCE..=1.0 - IMBALANCE).contains(&treated_fraction) {
        out.push(Diagnostic::TreatmentImbalance { treated_fraction });
    }
    match d.outcomes() {
        Outcomes::Binary(y) => {
            let positive_fraction = y.iter().sum::<f64>() / n;
            if !(IMBALANCE..=1.0 - IMBALANCE).contains(&positive_fraction) {
                out.push(Diagnostic::OutcomeImbalance { positive_fraction });
            }
        }
        Outcomes::Survival { event, .. } => {
            let censored = event.iter().filter(|&&e| !e).count() as f64;
            out.push(Diagnostic::CensoringFraction(censored / n));
        }
    }
    if d.q() == 0 {
        out.push(Diagnostic::NoConfounders);
    }
    out
}
