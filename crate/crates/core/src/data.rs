//! Subject-level recurrent-event data.
//!
//! A [`Cohort`] is a validated collection of [`SubjectRecord`]s sharing one
//! covariate dimension. Records are immutable once built; every constructor
//! checks the observation-model invariants (events inside follow-up, strictly
//! increasing, no recurrence at the instant of death).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn from_indicator(v: u8) -> Option<Arm> {
        match v {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.indicator())
    }
}

/// One subject's observed data: arm, follow-up `T = min(C, D)`, death
/// indicator, recurrent event times and baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    id: String,
    arm: Arm,
    followup: f64,
    terminal: bool,
    events: Vec<f64>,
    covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn new(
        id: impl Into<String>,
        arm: Arm,
        followup: f64,
        terminal: bool,
        events: Vec<f64>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if !(followup.is_finite() && followup >= 0.0) {
            return Err(Error::InvalidRecord(format!(
                "subject {id}: follow-up must be a nonnegative finite number, got {followup}"
            )));
        }
        let mut prev: Option<f64> = None;
        for &t in &events {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidRecord(format!(
                    "subject {id}: event time {t} is not a nonnegative finite number"
                )));
            }
            if t > followup {
                return Err(Error::InvalidRecord(format!(
                    "subject {id}: event after follow-up ({t} > {followup})"
                )));
            }
            if let Some(p) = prev {
                if t <= p {
                    return Err(Error::InvalidRecord(format!(
                        "subject {id}: event times must be strictly increasing ({p} then {t})"
                    )));
                }
            }
            prev = Some(t);
        }
        if terminal && prev == Some(followup) {
            return Err(Error::InvalidRecord(format!(
                "subject {id}: recurrent event at the terminal event time {followup}"
            )));
        }
        if let Some(x) = covariates.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "subject {id}: covariate value {x} is not finite"
            )));
        }
        Ok(SubjectRecord {
            id,
            arm,
            followup,
            terminal,
            events,
            covariates,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn followup(&self) -> f64 {
        self.followup
    }

    pub fn terminal(&self) -> bool {
        self.terminal
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    /// Same subject with a different arm label.
    pub fn with_arm(&self, arm: Arm) -> SubjectRecord {
        SubjectRecord {
            arm,
            ..self.clone()
        }
    }

    /// Same subject with replaced covariates. The caller is responsible for
    /// keeping the cohort's dimension consistent.
    pub fn with_covariates(&self, covariates: Vec<f64>) -> Result<SubjectRecord> {
        SubjectRecord::new(
            self.id.clone(),
            self.arm,
            self.followup,
            self.terminal,
            self.events.clone(),
            covariates,
        )
    }
}

/// Validated set of subjects sharing the covariate dimension `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    subjects: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
}

impl Cohort {
    pub fn new(subjects: Vec<SubjectRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if s.covariates.len() != p {
                return Err(Error::InvalidRecord(format!(
                    "subject {}: expected {p} covariates, found {}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Cohort {
            subjects,
            covariate_names,
        })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn arm_records(&self, arm: Arm) -> Vec<&SubjectRecord> {
        self.subjects.iter().filter(|s| s.arm == arm).collect()
    }

    /// `(n0, n1)`.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self
            .subjects
            .iter()
            .filter(|s| s.arm == Arm::Treatment)
            .count();
        (self.subjects.len() - n1, n1)
    }

    /// Restrict to the named covariates, in the given order.
    pub fn select_covariates<S: AsRef<str>>(&self, names: &[S]) -> Result<Cohort> {
        let idx = names
            .iter()
            .map(|name| {
                let name = name.as_ref();
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown covariate {name:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut r = s.clone();
                r.covariates = idx.iter().map(|&j| s.covariates[j]).collect();
                r
            })
            .collect();
        Cohort::new(
            subjects,
            idx.iter()
                .map(|&j| self.covariate_names[j].clone())
                .collect(),
        )
    }

    /// Swap treatment and control labels for every subject.
    pub fn relabeled(&self) -> Cohort {
        Cohort {
            subjects: self
                .subjects
                .iter()
                .map(|s| s.with_arm(s.arm.other()))
                .collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Number of subjects with follow-up `T_i >= u`.
pub fn risk_set_count<'a, I>(records: I, u: f64) -> usize
where
    I: IntoIterator<Item = &'a SubjectRecord>,
{
    records.into_iter().filter(|s| s.followup >= u).count()
}

// ---------------------------------------------------------------------------
// Covariate centering
// ---------------------------------------------------------------------------

/// Covariates centered at the pooled (both-arm) sample mean.
#[derive(Debug, Clone)]
pub struct CenteredCovariates {
    names: Vec<String>,
    matrix: DMatrix<f64>,
    means: Vec<f64>,
    degenerate: Vec<bool>,
}

impl CenteredCovariates {
    /// `n x p` matrix of `X_i = X*_i - mean`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Columns with zero pooled variance.
    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// Indices of the columns usable for adjustment.
    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.degenerate.len())
            .filter(|&j| !self.degenerate[j])
            .collect()
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn center_covariates(cohort: &Cohort) -> Result<CenteredCovariates> {
    let (n, p) = (cohort.n(), cohort.p());
    if p == 0 {
        return Err(Error::NoCovariates);
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty cohort".into()));
    }
    let raw = DMatrix::from_fn(n, p, |i, j| cohort.subjects[i].covariates[j]);
    let mut means = Vec::with_capacity(p);
    let mut degenerate = Vec::with_capacity(p);
    let mut matrix = raw.clone();
    for j in 0..p {
        let col = raw.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let first = col[0];
        degenerate.push(col.iter().all(|&x| x == first));
        for i in 0..n {
            matrix[(i, j)] = if degenerate[j] { 0.0 } else { col[i] - mean };
        }
        means.push(mean);
    }
    Ok(CenteredCovariates {
        names: cohort.covariate_names.clone(),
        matrix,
        means,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Analysis configuration
// ---------------------------------------------------------------------------

/// Population-level summary contrasting the two arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Difference,
    Ratio,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Difference => "difference",
            Estimand::Ratio => "ratio",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimandChoice {
    Difference,
    Ratio,
    Both,
}

impl EstimandChoice {
    pub fn estimands(self) -> Vec<Estimand> {
        match self {
            EstimandChoice::Difference => vec![Estimand::Difference],
            EstimandChoice::Ratio => vec![Estimand::Ratio],
            EstimandChoice::Both => vec![Estimand::Difference, Estimand::Ratio],
        }
    }
}

/// Which area is analysed: under the mean cumulative function, or under the
/// survival curve (restricted mean survival time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Auc,
    Rmst,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Auc => "auc",
            Endpoint::Rmst => "rmst",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub tau: f64,
    pub alpha: f64,
    pub estimand: EstimandChoice,
    pub endpoint: Endpoint,
    /// How far `tau` may exceed an arm's largest follow-up time before the
    /// estimators refuse to evaluate. Zero means strict.
    pub horizon_grace: f64,
}

impl AnalysisConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let cfg = AnalysisConfig {
            tau,
            alpha: 0.05,
            estimand: EstimandChoice::Both,
            endpoint: Endpoint::Auc,
            horizon_grace: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_estimand(mut self, estimand: EstimandChoice) -> Self {
        self.estimand = estimand;
        self
    }

    pub fn with_endpoint(mut self, endpoint: Endpoint) -> Self {
        self.endpoint = endpoint;
        self
    }

    pub fn with_horizon_grace(mut self, grace: f64) -> Result<Self> {
        self.horizon_grace = grace;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.horizon_grace >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "horizon grace must be nonnegative, got {}",
                self.horizon_grace
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tabular ingestion
// ---------------------------------------------------------------------------

const SUBJECT_FIXED: [&str; 4] = ["id", "arm", "followup", "terminal"];

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, row: usize) -> Result<T> {
    if raw.is_empty() {
        return Err(Error::Parse {
            row,
            message: format!("missing {what} value"),
        });
    }
    raw.parse::<T>().map_err(|_| Error::Parse {
        row,
        message: format!("non-numeric {what} {raw:?}"),
    })
}

fn parse_indicator(raw: &str, what: &str, row: usize) -> Result<u8> {
    let v: u8 = raw.parse().map_err(|_| Error::Parse {
        row,
        message: format!("{what} must be 0 or 1, got {raw:?}"),
    })?;
    if v > 1 {
        return Err(Error::Parse {
            row,
            message: format!("{what} must be 0 or 1, got {raw:?}"),
        });
    }
    Ok(v)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Read a cohort from a subjects table (`id,arm,followup,terminal,x1..xp`)
/// and an events table (`id,time`).
///
/// Row numbers in errors are 1-based file lines, the header being line 1.
pub fn ingest_cohort<R1: Read, R2: Read>(subjects: R1, events: R2) -> Result<Cohort> {
    let mut srdr = csv_reader(subjects);
    let header = srdr.headers().map_err(csv_err)?.clone();
    if header.len() < 4 || header.iter().take(4).ne(SUBJECT_FIXED.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            message: format!(
                "subjects header must start with id,arm,followup,terminal; got {:?}",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let covariate_names: Vec<String> = header.iter().skip(4).map(str::to_owned).collect();

    struct Row {
        id: String,
        arm: Arm,
        followup: f64,
        terminal: bool,
        covariates: Vec<f64>,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in srdr.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec.get(0).unwrap_or("").to_owned();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "missing id".into(),
            });
        }
        let arm = Arm::from_indicator(parse_indicator(&rec[1], "arm", row)?).unwrap();
        let followup: f64 = parse_field(&rec[2], "followup", row)?;
        if !(followup.is_finite() && followup >= 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("followup must be nonnegative, got {followup}"),
            });
        }
        let terminal = parse_indicator(&rec[3], "terminal", row)? == 1;
        let covariates = (4..header.len())
            .map(|j| {
                let v: f64 = parse_field(&rec[j], &format!("covariate {}", &header[j]), row)?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("covariate {} is not finite", &header[j]),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        if index.contains_key(&id) {
            return Err(Error::Parse {
                row,
                message: format!("duplicate id {id:?}"),
            });
        }
        index.insert(id.clone(), rows.len());
        rows.push(Row {
            id,
            arm,
            followup,
            terminal,
            covariates,
        });
    }

    let mut erdr = csv_reader(events);
    let eheader = erdr.headers().map_err(csv_err)?.clone();
    if eheader.len() != 2 || &eheader[0] != "id" || &eheader[1] != "time" {
        return Err(Error::Parse {
            row: 1,
            message: "events header must be id,time".into(),
        });
    }
    // (time, row) per subject
    let mut grouped: Vec<Vec<(f64, usize)>> = vec![Vec::new(); rows.len()];
    for rec in erdr.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = &rec[0];
        let &k = index.get(id).ok_or_else(|| Error::Parse {
            row,
            message: format!("unknown id {id:?}"),
        })?;
        let t: f64 = parse_field(&rec[1], "time", row)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Parse {
                row,
                message: format!("event time must be nonnegative, got {t}"),
            });
        }
        let subj = &rows[k];
        if t > subj.followup {
            return Err(Error::Parse {
                row,
                message: format!("event after follow-up for {id:?} ({t} > {})", subj.followup),
            });
        }
        if subj.terminal && t == subj.followup {
            return Err(Error::Parse {
                row,
                message: format!("recurrent event at the terminal event time for {id:?}"),
            });
        }
        grouped[k].push((t, row));
    }

    let mut subjects = Vec::with_capacity(rows.len());
    for (row, mut evs) in rows.into_iter().zip(grouped) {
        evs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = evs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                row: w[0].1.max(w[1].1),
                message: format!("duplicate event time {} for {:?}", w[0].0, row.id),
            });
        }
        subjects.push(SubjectRecord::new(
            row.id,
            row.arm,
            row.followup,
            row.terminal,
            evs.into_iter().map(|(t, _)| t).collect(),
            row.covariates,
        )?);
    }
    Cohort::new(subjects, covariate_names)
}

/// Write a cohort in the two-table layout read by [`ingest_cohort`].
/// Numbers use the shortest representation that round-trips exactly.
pub fn write_cohort<W1: Write, W2: Write>(cohort: &Cohort, subjects: W1, events: W2) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut sw = csv::Writer::from_writer(subjects);
    let mut header: Vec<String> = SUBJECT_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(cohort.covariate_names.iter().cloned());
    sw.write_record(&header).map_err(io)?;
    let mut ew = csv::Writer::from_writer(events);
    ew.write_record(["id", "time"]).map_err(io)?;
    for s in &cohort.subjects {
        let mut rec = vec![
            s.id.clone(),
            s.arm.indicator().to_string(),
            s.followup.to_string(),
            u8::from(s.terminal).to_string(),
        ];
        rec.extend(s.covariates.iter().map(|x| x.to_string()));
        sw.write_record(&rec).map_err(io)?;
        for t in &s.events {
            ew.write_record([s.id.as_str(), t.to_string().as_str()])
                .map_err(io)?;
        }
    }
    sw.flush()?;
    ew.flush()?;
    Ok(())
}
