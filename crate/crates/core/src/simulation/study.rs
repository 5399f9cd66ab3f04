//! Replicated studies: simulate, analyze, aggregate.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::generate::{
    gen_baseline, gen_death_censor, gen_recurrent, gen_recurrent_gap, gen_rmst_baseline,
    gen_rmst_case,
};
use super::{ScenarioSpec, Scheme};
use crate::data::{
    center_covariates, AnalysisConfig, Arm, Cohort, Endpoint, Estimand, EstimandChoice,
    SubjectRecord,
};
use crate::error::{Error, Result};
use crate::inference::{normal_critical, CohortAnalysis};
use crate::randomization::{simple_randomize_with, spb_randomize_with, strata_from_covariates};

const ESTIMANDS: [Estimand; 2] = [Estimand::Difference, Estimand::Ratio];

/// Random stream of replicate `index`.
pub fn replicate_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Draw one synthetic trial: covariates, allocation, then outcomes.
pub fn simulate_cohort(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Cohort> {
    spec.validate()?;
    let x = match spec.endpoint {
        Endpoint::Auc => gen_baseline(spec.n, rng),
        Endpoint::Rmst => gen_rmst_baseline(spec.n, rng),
    };
    let arms = match spec.scheme {
        Scheme::Simple => simple_randomize_with(spec.n, 0.5, rng)?,
        Scheme::Spb => {
            let split: Vec<f64> = x.iter().map(|r| r[0]).collect();
            let graded: Vec<f64> = x.iter().map(|r| r[1]).collect();
            spb_randomize_with(
                &strata_from_covariates(&split, &graded)?,
                spec.block_size,
                rng,
            )?
        }
    };
    let subjects = x
        .iter()
        .zip(&arms)
        .enumerate()
        .map(|(i, (xi, &arm))| {
            let (f, events) = match spec.endpoint {
                Endpoint::Auc => {
                    let f = gen_death_censor(xi, rng);
                    let events = if spec.case == 5 {
                        gen_recurrent_gap(spec.theta, arm, xi, f.followup, rng)
                    } else {
                        gen_recurrent(spec.case, spec.theta, arm, xi, f.followup, rng)?
                    };
                    (f, events)
                }
                Endpoint::Rmst => (
                    gen_rmst_case(spec.case, spec.theta, arm, xi, rng)?,
                    Vec::new(),
                ),
            };
            SubjectRecord::new(
                format!("s{i}"),
                arm,
                f.followup,
                f.terminal,
                events,
                xi.to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(subjects, vec!["x1".into(), "x2".into(), "x3".into()])
}

/// One (estimand, analysis) result of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateCell {
    pub estimand: Estimand,
    /// Position in the table: the adjusted column.
    pub adjusted: bool,
    /// Whether an adjustment was actually fitted.
    pub fitted: bool,
    pub point: f64,
    pub se: f64,
    pub z: f64,
    pub sigma2_l: f64,
    pub sigma2_cl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub n0: usize,
    pub n1: usize,
    pub u0: f64,
    pub u1: f64,
    pub death_fraction: f64,
    pub mean_followup: f64,
    pub mean_events_control: f64,
    pub mean_events_treated: f64,
    pub cells: Vec<ReplicateCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub index: u64,
    pub message: String,
}

fn arm_event_mean(cohort: &Cohort, arm: Arm) -> f64 {
    let recs = cohort.arm_records(arm);
    recs.iter().map(|r| r.events().len()).sum::<usize>() as f64 / recs.len().max(1) as f64
}

/// Simulate and analyze replicate `index` of `spec`.
pub fn run_replicate(spec: &ScenarioSpec, index: u64) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(spec.base_seed, index);
    let cohort = simulate_cohort(spec, &mut rng)?;
    let config = AnalysisConfig::new(spec.tau)?
        .with_alpha(spec.alpha)?
        .with_estimand(EstimandChoice::Both)
        .with_endpoint(spec.endpoint)
        .with_horizon_grace(spec.horizon_grace)?;
    let analysis = CohortAnalysis::new(&cohort, &config)?;
    let x = center_covariates(&cohort)?;
    let mut cells = Vec::with_capacity(4);
    let mut warnings = Vec::new();
    for kind in ESTIMANDS {
        for adjusted in [false, true] {
            let r = if adjusted {
                analysis.adjusted(kind, &x, &mut warnings)?
            } else {
                analysis.unadjusted(kind)?
            };
            cells.push(ReplicateCell {
                estimand: kind,
                adjusted,
                fitted: r.result.adjusted,
                point: r.result.point,
                se: r.result.se,
                z: r.result.z,
                sigma2_l: r.sigma2_l,
                sigma2_cl: r.sigma2_cl,
            });
        }
    }
    let (n0, n1) = analysis.sizes();
    let n = cohort.n() as f64;
    Ok(ReplicateOutcome {
        index,
        n0,
        n1,
        u0: analysis.control.area,
        u1: analysis.treated.area,
        death_fraction: cohort.subjects().iter().filter(|r| r.terminal()).count() as f64 / n,
        mean_followup: cohort.subjects().iter().map(|r| r.followup()).sum::<f64>() / n,
        mean_events_control: arm_event_mean(&cohort, Arm::Control),
        mean_events_treated: arm_event_mean(&cohort, Arm::Treatment),
        cells,
    })
}

/// Monte Carlo summary of one (estimand, analysis) column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub estimand: Estimand,
    pub adjusted: bool,
    /// Mean of the unadjusted point estimates.
    pub est: f64,
    /// Mean of this column's point estimates minus `est`.
    pub bias: f64,
    pub mean_se: f64,
    pub median_se: f64,
    /// Standard deviation of the point estimates (divisor `reps - 1`).
    pub mc_sd: f64,
    /// `mc_sd / sqrt(reps)`, the Monte Carlo error of `est` and `bias`.
    pub mc_se: f64,
    /// Percentage of intervals covering `est`.
    pub cp: f64,
    /// Percentage of replicates rejecting at level alpha.
    pub power: f64,
    pub replicates: usize,
    /// Replicates where `sigma^2_CL > sigma^2_L`.
    pub variance_violations: usize,
    /// Adjusted-column replicates that fell back to the unadjusted analysis.
    pub fallbacks: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Aggregate replicate outcomes into the four table columns.
pub fn summarize(outcomes: &[ReplicateOutcome], alpha: f64) -> Vec<CellSummary> {
    let crit = normal_critical(alpha);
    let pick = |kind: Estimand, adjusted: bool| -> Vec<&ReplicateCell> {
        outcomes
            .iter()
            .flat_map(|o| o.cells.iter())
            .filter(|c| c.estimand == kind && c.adjusted == adjusted)
            .collect()
    };
    let mut out = Vec::with_capacity(4);
    for kind in ESTIMANDS {
        let reference: Vec<f64> = pick(kind, false).iter().map(|c| c.point).collect();
        let est = mean(&reference);
        for adjusted in [false, true] {
            let cells = pick(kind, adjusted);
            let points: Vec<f64> = cells.iter().map(|c| c.point).collect();
            let ses: Vec<f64> = cells.iter().map(|c| c.se).collect();
            let reps = cells.len();
            let pct = |k: usize| 100.0 * k as f64 / reps as f64;
            let covered = cells
                .iter()
                .filter(|c| (c.point - est).abs() <= crit * c.se)
                .count();
            let rejected = cells.iter().filter(|c| c.z.abs() > crit).count();
            let mc_sd = sample_sd(&points);
            out.push(CellSummary {
                estimand: kind,
                adjusted,
                est,
                bias: mean(&points) - est,
                mean_se: mean(&ses),
                median_se: median(&ses),
                mc_sd,
                mc_se: mc_sd / (reps as f64).sqrt(),
                cp: pct(covered),
                power: pct(rejected),
                replicates: reps,
                variance_violations: cells.iter().filter(|c| c.sigma2_cl > c.sigma2_l).count(),
                fallbacks: cells.iter().filter(|c| c.adjusted && !c.fitted).count(),
            });
        }
    }
    out
}

/// Everything produced by one study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub spec: ScenarioSpec,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<ReplicateFailure>,
    #[serde(skip)]
    pub replicates: Vec<ReplicateOutcome>,
}

impl StudyResult {
    pub fn cell(&self, estimand: Estimand, adjusted: bool) -> &CellSummary {
        self.cells
            .iter()
            .find(|c| c.estimand == estimand && c.adjusted == adjusted)
            .expect("all four cells are always present")
    }

    pub fn total_variance_violations(&self) -> usize {
        self.cells.iter().map(|c| c.variance_violations).sum()
    }
}

/// Run every replicate on the current rayon pool.
pub fn run_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    spec.validate()?;
    let results: Vec<Result<ReplicateOutcome>> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(spec, r))
        .collect();
    let mut replicates = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => replicates.push(o),
            Err(e) => {
                log::warn!("replicate {index} failed: {e}");
                failures.push(ReplicateFailure {
                    index: index as u64,
                    message: e.to_string(),
                });
            }
        }
    }
    if failures.len() * 100 > spec.replicates {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: spec.replicates,
            first: failures[0].message.clone(),
        });
    }
    Ok(StudyResult {
        spec: spec.clone(),
        cells: summarize(&replicates, spec.alpha),
        failures,
        replicates,
    })
}

/// [`run_study`] on a dedicated pool of `threads` workers (0 = rayon default).
pub fn run_study_with_threads(spec: &ScenarioSpec, threads: usize) -> Result<StudyResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| run_study(spec))
}

/// Format a value in full precision, or rounded to `digits` decimals.
pub fn format_number(x: f64, digits: Option<usize>) -> String {
    match digits {
        Some(d) => format!("{x:.d$}"),
        None => x.to_string(),
    }
}

fn round(x: f64, digits: Option<usize>) -> f64 {
    match digits {
        Some(d) => format!("{x:.d$}").parse().unwrap_or(x),
        None => x,
    }
}

impl StudyResult {
    /// Table-style CSV, one row per (estimand, analysis).
    pub fn write_summary_csv<W: Write>(&self, w: W, digits: Option<usize>) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "endpoint",
            "case",
            "scheme",
            "theta",
            "n",
            "tau",
            "estimand",
            "analysis",
            "Est",
            "Bias",
            "Mean",
            "Median",
            "MC",
            "MC_SE",
            "CP",
            "Power",
            "replicates",
            "failed",
            "variance_violations",
            "fallbacks",
        ])
        .map_err(io)?;
        let s = &self.spec;
        for c in &self.cells {
            let f = |x: f64| format_number(x, digits);
            wtr.write_record([
                s.endpoint.to_string(),
                s.case.to_string(),
                s.scheme.to_string(),
                s.theta.to_string(),
                s.n.to_string(),
                s.tau.to_string(),
                c.estimand.to_string(),
                if c.adjusted { "adjusted" } else { "unadjusted" }.to_string(),
                f(c.est),
                f(c.bias),
                f(c.mean_se),
                f(c.median_se),
                f(c.mc_sd),
                f(c.mc_se),
                f(c.cp),
                f(c.power),
                c.replicates.to_string(),
                self.failures.len().to_string(),
                c.variance_violations.to_string(),
                c.fallbacks.to_string(),
            ])
            .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON object with the scenario, the four cells and any failures.
    pub fn write_json<W: Write>(&self, mut w: W, digits: Option<usize>) -> Result<()> {
        let mut value = self.clone();
        for c in &mut value.cells {
            for x in [
                &mut c.est,
                &mut c.bias,
                &mut c.mean_se,
                &mut c.median_se,
                &mut c.mc_sd,
                &mut c.mc_se,
                &mut c.cp,
                &mut c.power,
            ] {
                *x = round(*x, digits);
            }
        }
        serde_json::to_writer_pretty(&mut w, &value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    /// Per-replicate, per-cell records (full precision).
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "replicate",
            "estimand",
            "analysis",
            "fitted",
            "point",
            "se",
            "z",
            "sigma2_l",
            "sigma2_cl",
            "n0",
            "n1",
            "u0",
            "u1",
        ])
        .map_err(io)?;
        for o in &self.replicates {
            for c in &o.cells {
                wtr.write_record([
                    o.index.to_string(),
                    c.estimand.to_string(),
                    if c.adjusted { "adjusted" } else { "unadjusted" }.to_string(),
                    c.fitted.to_string(),
                    c.point.to_string(),
                    c.se.to_string(),
                    c.z.to_string(),
                    c.sigma2_l.to_string(),
                    c.sigma2_cl.to_string(),
                    o.n0.to_string(),
                    o.n1.to_string(),
                    o.u0.to_string(),
                    o.u1.to_string(),
                ])
                .map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(endpoint: Endpoint, case: u8, scheme: Scheme) -> ScenarioSpec {
        ScenarioSpec::new(endpoint, case, -0.32, 200, scheme)
            .with_replicates(12)
            .with_seed(42)
    }

    #[test]
    fn replicate_streams_are_independent_of_order() {
        let spec = small(Endpoint::Auc, 1, Scheme::Spb);
        let a = run_replicate(&spec, 5).unwrap();
        let _ = run_replicate(&spec, 4).unwrap();
        assert_eq!(a, run_replicate(&spec, 5).unwrap());
        assert_ne!(a.cells, run_replicate(&spec, 6).unwrap().cells);
    }

    #[test]
    fn study_is_deterministic_across_thread_counts() {
        let spec = small(Endpoint::Auc, 3, Scheme::Simple);
        let one = run_study_with_threads(&spec, 1).unwrap();
        let four = run_study_with_threads(&spec, 4).unwrap();
        assert_eq!(one, four);
        let mut a = Vec::new();
        let mut b = Vec::new();
        one.write_summary_csv(&mut a, None).unwrap();
        four.write_summary_csv(&mut b, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_case_runs() {
        for case in 1..=5 {
            let r = run_study(&small(Endpoint::Auc, case, Scheme::Spb)).unwrap();
            assert!(r.failures.is_empty());
            assert_eq!(r.total_variance_violations(), 0);
        }
        for case in 1..=2 {
            let r = run_study(&small(Endpoint::Rmst, case, Scheme::Simple)).unwrap();
            assert!(r.failures.is_empty());
            assert_eq!(r.total_variance_violations(), 0);
        }
    }

    #[test]
    fn summary_metrics_by_hand() {
        let cell = |estimand, adjusted, point: f64, se: f64| ReplicateCell {
            estimand,
            adjusted,
            fitted: adjusted,
            point,
            se,
            z: point / se,
            sigma2_l: 1.0,
            sigma2_cl: if adjusted { 0.5 } else { 1.0 },
        };
        let outcome = |i: u64, p: f64| ReplicateOutcome {
            index: i,
            n0: 1,
            n1: 1,
            u0: 1.0,
            u1: 1.0,
            death_fraction: 0.0,
            mean_followup: 1.0,
            mean_events_control: 0.0,
            mean_events_treated: 0.0,
            cells: vec![
                cell(Estimand::Difference, false, p, 1.0),
                cell(Estimand::Difference, true, p + 0.5, 0.5),
                cell(Estimand::Ratio, false, p, 1.0),
                cell(Estimand::Ratio, true, p, 1.0),
            ],
        };
        let outs = vec![outcome(0, 0.0), outcome(1, 2.0), outcome(2, 4.0)];
        let cells = summarize(&outs, 0.05);
        let un = &cells[0];
        assert_eq!(un.est, 2.0);
        assert_eq!(un.bias, 0.0);
        assert_eq!(un.mc_sd, 2.0);
        assert_eq!(un.mean_se, 1.0);
        // |p - 2| <= 1.96: only the middle replicate
        assert!((un.cp - 100.0 / 3.0).abs() < 1e-12);
        // |z| > 1.96 for z = 2, 4
        assert!((un.power - 200.0 / 3.0).abs() < 1e-12);
        let adj = &cells[1];
        assert_eq!(adj.bias, 0.5);
        assert_eq!(adj.median_se, 0.5);
        assert_eq!(adj.fallbacks, 0);
    }

    #[test]
    fn csv_and_json_outputs() {
        let r = run_study(&small(Endpoint::Auc, 5, Scheme::Simple)).unwrap();
        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf, Some(3)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with(
            "endpoint,case,scheme,theta,n,tau,estimand,analysis,Est,Bias,Mean,Median,MC"
        ));
        let mut buf = Vec::new();
        r.write_json(&mut buf, None).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["cells"].as_array().unwrap().len(), 4);
        let mut buf = Vec::new();
        r.write_replicates_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 4 * 12);
    }
}
