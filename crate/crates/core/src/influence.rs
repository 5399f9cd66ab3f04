//! Per-subject influence values built from estimated martingale increments.
//!
//! For the area under the MCF, `psi_i = P_i - Q_i` with
//!
//! ```text
//! P_i = sum_{u <= tau} (tau - u) S(u-) / (Y(u)/n) * dM_i(u)
//! Q_i = sum_{v <= tau} [sum_{s in (v, tau]} (tau - s) dmu(s)] / (Y(v)/n) * dM^D_i(v)
//! ```
//!
//! where `dM_i(u) = dN_i(u) - 1(T_i >= u) dR(u)` and
//! `dM^D_i(v) = dN^D_i(v) - 1(T_i >= v) dA^D(v)`. Each sum splits into a
//! jump term at the subject's own event or death times and a compensator
//! term over times `<= min(T_i, tau)`, which is a prefix sum.

use std::io::Write;

use crate::data::{Arm, SubjectRecord};
use crate::error::{Error, Result};
use crate::estimators::{kaplan_meier, terminal_hazard_increments, ArmEstimators, RiskSet};
use crate::step::StepFunction;

/// Influence triples for one arm, in the order of the arm's records.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSet {
    pub arm: Arm,
    pub tau: f64,
    pub ids: Vec<String>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub psi: Vec<f64>,
}

impl InfluenceSet {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// `(1/n) sum psi_i^2`.
    pub fn mean_square(&self) -> f64 {
        self.psi.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// Influence-based standard error of the arm-level estimate.
    pub fn standard_error(&self) -> f64 {
        (self.mean_square() / self.len() as f64).sqrt()
    }

    /// Diagnostic dump with columns `id,arm,p,q,psi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["id", "arm", "p", "q", "psi"])
            .map_err(io)?;
        for i in 0..self.len() {
            wtr.write_record([
                self.ids[i].clone(),
                self.arm.indicator().to_string(),
                self.p[i].to_string(),
                self.q[i].to_string(),
                self.psi[i].to_string(),
            ])
            .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn common_arm(records: &[&SubjectRecord]) -> Result<Arm> {
    let arm = records
        .first()
        .ok_or_else(|| Error::Contract("influence values need a nonempty arm".into()))?
        .arm();
    if records.iter().any(|r| r.arm() != arm) {
        return Err(Error::Contract("influence records span both arms".into()));
    }
    Ok(arm)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "tau must be nonnegative, got {tau}"
        )))
    }
}

/// Position of `u` among `times`, or a contract error naming `what`.
fn locate(times: &[f64], u: f64, what: &str) -> Result<usize> {
    times
        .binary_search_by(|t| t.total_cmp(&u))
        .map_err(|_| Error::Contract(format!("{what} at {u} missing from the arm estimators")))
}

/// Jump weights `g_k` at times `<= tau` and the prefix sums of `g_k * dH_k`.
struct Integrand {
    times: Vec<f64>,
    weight: Vec<f64>,
    compensator: Vec<f64>,
}

impl Integrand {
    fn new(times: &[f64], weight: Vec<f64>, increments: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut compensator = Vec::with_capacity(weight.len() + 1);
        compensator.push(0.0);
        for (g, dh) in weight.iter().zip(increments) {
            acc += g * dh;
            compensator.push(acc);
        }
        Integrand {
            times: times[..weight.len()].to_vec(),
            weight,
            compensator,
        }
    }

    /// `sum_{t_k <= upper} g_k dH_k`.
    fn compensated(&self, upper: f64) -> f64 {
        self.compensator[self.times.partition_point(|&t| t <= upper)]
    }
}

/// Influence values of the arm-level area under the MCF at `tau`.
pub fn influence_auc(
    records: &[&SubjectRecord],
    est: &ArmEstimators,
    tau: f64,
) -> Result<InfluenceSet> {
    check_tau(tau)?;
    let arm = common_arm(records)?;
    if est.n_arm() != records.len() {
        return Err(Error::Contract(format!(
            "estimators built from {} subjects, influence requested for {}",
            est.n_arm(),
            records.len()
        )));
    }
    let n = records.len() as f64;

    let rate_times = est.rate.times();
    let rate_inc = est.rate.values();
    let n_events = rate_times.partition_point(|&u| u <= tau);
    let p_weight: Vec<f64> = rate_times[..n_events]
        .iter()
        .map(|&u| (tau - u) * est.survival.value_at_left(u) * n / est.risk(u) as f64)
        .collect();
    let p_int = Integrand::new(rate_times, p_weight, rate_inc);

    // inner(v) = sum_{s in (v, tau]} (tau - s) dmu(s), as total minus a prefix
    let mu_times = est.mcf.times();
    let mu_inc = est.mcf.increments();
    let mut area_prefix = Vec::with_capacity(mu_times.len() + 1);
    area_prefix.push(0.0);
    for (k, (&s, dmu)) in mu_times.iter().zip(&mu_inc).enumerate() {
        let term = if s <= tau { (tau - s) * dmu } else { 0.0 };
        area_prefix.push(area_prefix[k] + term);
    }
    let area_total = *area_prefix.last().unwrap();
    let inner = |v: f64| area_total - area_prefix[mu_times.partition_point(|&s| s <= v)];

    let death_times = est.terminal_hazard.times();
    let n_deaths = death_times.partition_point(|&v| v <= tau);
    let q_weight: Vec<f64> = death_times[..n_deaths]
        .iter()
        .map(|&v| inner(v) * n / est.risk(v) as f64)
        .collect();
    let q_int = Integrand::new(death_times, q_weight, est.terminal_hazard.values());

    let mut set = InfluenceSet {
        arm,
        tau,
        ids: Vec::with_capacity(records.len()),
        p: Vec::with_capacity(records.len()),
        q: Vec::with_capacity(records.len()),
        psi: Vec::with_capacity(records.len()),
    };
    for r in records {
        let upper = r.followup().min(tau);
        let mut p = 0.0 - p_int.compensated(upper);
        for &u in r.events().iter().take_while(|&&u| u <= tau) {
            p += p_int.weight[locate(rate_times, u, "recurrent event")?];
        }
        let mut q = 0.0 - q_int.compensated(upper);
        if r.terminal() && r.followup() <= tau {
            q += q_int.weight[locate(death_times, r.followup(), "death")?];
        }
        set.ids.push(r.id().to_string());
        set.p.push(p);
        set.q.push(q);
        set.psi.push(p - q);
    }
    Ok(set)
}

/// Influence values of the arm-level restricted mean survival time at `tau`.
///
/// `psi_i = -sum_{s <= tau} [int_s^tau S(u) du] / (Y(s)/n) * dM^D_i(s)`.
/// Reported with `P_i = 0` and `Q_i = -psi_i` so that the RMST path shares
/// the transform and adjustment code with the AUC path.
pub fn influence_rmst(
    records: &[&SubjectRecord],
    survival: &StepFunction,
    tau: f64,
) -> Result<InfluenceSet> {
    check_tau(tau)?;
    let arm = common_arm(records)?;
    if *survival != kaplan_meier(records) {
        return Err(Error::Contract(
            "survival curve was not estimated from these records".into(),
        ));
    }
    let n = records.len() as f64;
    let risk = RiskSet::new(records);
    let hazard = terminal_hazard_increments(records);
    let death_times = hazard.times();
    let n_deaths = death_times.partition_point(|&v| v <= tau);
    let total = survival.integral(tau);
    let weight = death_times[..n_deaths]
        .iter()
        .map(|&s| {
            if survival.value_at_left(s) <= 0.0 {
                return Err(Error::SurvivalVanished(s));
            }
            Ok((total - survival.integral(s)) * n / risk.at(s) as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let int = Integrand::new(death_times, weight, hazard.values());

    let mut set = InfluenceSet {
        arm,
        tau,
        ids: Vec::with_capacity(records.len()),
        p: vec![0.0; records.len()],
        q: Vec::with_capacity(records.len()),
        psi: Vec::with_capacity(records.len()),
    };
    for r in records {
        let mut m = 0.0 - int.compensated(r.followup().min(tau));
        if r.terminal() && r.followup() <= tau {
            m += int.weight[locate(death_times, r.followup(), "death")?];
        }
        set.ids.push(r.id().to_string());
        set.q.push(m);
        set.psi.push(0.0 - m);
    }
    Ok(set)
}
