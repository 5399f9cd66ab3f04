//! Per-arm nonparametric estimators.
//!
//! All quantities are step functions over the observed event or death
//! times, and every integral is an exact finite sum over their jumps:
//!
//! * `S(u)`   Kaplan-Meier survival of the terminal event,
//! * `dR(u)`  Nelson-Aalen increments of the recurrent-event rate,
//! * `mu(t)`  mean cumulative function, `sum_{u <= t} S(u-) dR(u)`,
//! * `dA(u)`  Nelson-Aalen increments of the terminal-event hazard.
//!
//! The survival weight inside every integral is the left limit `S(u-)`,
//! i.e. the probability of still being alive at `u`.

use crate::data::SubjectRecord;
use crate::error::{Error, Result};
use crate::step::{StepFunction, StepKind};

/// Sorted follow-up times, answering `Y(u) = #{i : T_i >= u}`.
#[derive(Debug, Clone)]
pub struct RiskSet {
    followups: Vec<f64>,
}

impl RiskSet {
    pub fn new(records: &[&SubjectRecord]) -> Self {
        let mut followups: Vec<f64> = records.iter().map(|r| r.followup()).collect();
        followups.sort_by(f64::total_cmp);
        RiskSet { followups }
    }

    pub fn at(&self, u: f64) -> usize {
        self.followups.len() - self.followups.partition_point(|&t| t < u)
    }

    pub fn n(&self) -> usize {
        self.followups.len()
    }

    pub fn max_followup(&self) -> f64 {
        self.followups.last().copied().unwrap_or(0.0)
    }
}

/// Distinct values of a sorted slice with their multiplicities.
fn tally(sorted: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut times: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &t in sorted {
        if times.last() == Some(&t) {
            *counts.last_mut().unwrap() += 1;
        } else {
            times.push(t);
            counts.push(1);
        }
    }
    (times, counts)
}

fn death_times(records: &[&SubjectRecord]) -> Vec<f64> {
    let mut d: Vec<f64> = records
        .iter()
        .filter(|r| r.terminal())
        .map(|r| r.followup())
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Product-limit survival of the terminal event. Right-continuous; its left
/// limit `S(u-)` estimates `P(D >= u)`.
pub fn kaplan_meier(records: &[&SubjectRecord]) -> StepFunction {
    let risk = RiskSet::new(records);
    let (times, deaths) = tally(&death_times(records));
    let mut level = 1.0;
    let values = times
        .iter()
        .zip(&deaths)
        .map(|(&t, &d)| {
            level *= 1.0 - d as f64 / risk.at(t) as f64;
            level
        })
        .collect();
    StepFunction::new(times, values, StepKind::Cumulative, 1.0)
        .expect("tallied times are strictly increasing")
}

/// Nelson-Aalen increments `dR(u) = (events at u) / Y(u)` of the recurrent
/// event rate among subjects still under observation.
pub fn rate_increments(records: &[&SubjectRecord]) -> Result<StepFunction> {
    let risk = RiskSet::new(records);
    let mut all: Vec<f64> = records
        .iter()
        .flat_map(|r| r.events().iter().copied())
        .collect();
    all.sort_by(f64::total_cmp);
    let (times, counts) = tally(&all);
    let values = times
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| {
            let y = risk.at(t);
            if y == 0 {
                return Err(Error::Contract(format!(
                    "event at {t} with an empty risk set"
                )));
            }
            Ok(c as f64 / y as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    StepFunction::new(times, values, StepKind::Increment, 0.0)
}

/// Nelson-Aalen increments of the terminal-event hazard; each lies in `[0, 1]`.
pub fn terminal_hazard_increments(records: &[&SubjectRecord]) -> StepFunction {
    let risk = RiskSet::new(records);
    let (times, deaths) = tally(&death_times(records));
    let values = times
        .iter()
        .zip(&deaths)
        .map(|(&t, &d)| d as f64 / risk.at(t) as f64)
        .collect();
    StepFunction::new(times, values, StepKind::Increment, 0.0)
        .expect("tallied times are strictly increasing")
}

/// Ghosh-Lin mean cumulative function `mu(t) = sum_{u_k <= t} S(u_k-) dR(u_k)`.
pub fn mcf(survival: &StepFunction, rate: &StepFunction) -> StepFunction {
    let mut level = 0.0;
    let values = rate
        .times()
        .iter()
        .zip(rate.increments())
        .map(|(&u, dr)| {
            level += survival.value_at_left(u) * dr;
            level
        })
        .collect();
    StepFunction::new(rate.times().to_vec(), values, StepKind::Cumulative, 0.0)
        .expect("rate jump times are strictly increasing")
}

/// `int_0^tau mu(t) dt = sum_{u_k <= tau} (tau - u_k) dmu(u_k)`.
pub fn area_under_mcf(mcf: &StepFunction, tau: f64) -> f64 {
    mcf.times()
        .iter()
        .zip(mcf.increments())
        .take_while(|(&u, _)| u <= tau)
        .map(|(&u, dmu)| (tau - u) * dmu)
        .sum()
}

/// Restricted mean survival time `int_0^tau S(u) du`.
pub fn rmst(survival: &StepFunction, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    Ok(survival.integral(tau))
}

/// Every per-arm estimator, built once and shared by the area and influence
/// computations.
#[derive(Debug, Clone)]
pub struct ArmEstimators {
    pub survival: StepFunction,
    pub rate: StepFunction,
    pub mcf: StepFunction,
    pub terminal_hazard: StepFunction,
    risk: RiskSet,
}

impl ArmEstimators {
    pub fn from_records(records: &[&SubjectRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Contract("estimators need a nonempty arm".into()));
        }
        let survival = kaplan_meier(records);
        let rate = rate_increments(records)?;
        let mcf = mcf(&survival, &rate);
        Ok(ArmEstimators {
            terminal_hazard: terminal_hazard_increments(records),
            survival,
            rate,
            mcf,
            risk: RiskSet::new(records),
        })
    }

    /// `Y(u)`.
    pub fn risk(&self, u: f64) -> usize {
        self.risk.at(u)
    }

    pub fn n_arm(&self) -> usize {
        self.risk.n()
    }

    pub fn max_followup(&self) -> f64 {
        self.risk.max_followup()
    }

    /// Fails when `tau` lies past the last follow-up by more than `grace`.
    pub fn check_horizon(&self, tau: f64, grace: f64) -> Result<()> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "tau must be nonnegative, got {tau}"
            )));
        }
        if tau > self.max_followup() + grace {
            return Err(Error::HorizonBeyondRisk {
                tau,
                max_followup: self.max_followup(),
            });
        }
        Ok(())
    }
}

/// Area under the estimated MCF over `[0, tau]`.
pub fn auc(arm: &ArmEstimators, tau: f64) -> Result<f64> {
    auc_with_grace(arm, tau, 0.0)
}

pub fn auc_with_grace(arm: &ArmEstimators, tau: f64, grace: f64) -> Result<f64> {
    arm.check_horizon(tau, grace)?;
    Ok(area_under_mcf(&arm.mcf, tau))
}

/// RMST of an arm, with the same horizon rule as [`auc`].
pub fn arm_rmst(arm: &ArmEstimators, tau: f64, grace: f64) -> Result<f64> {
    arm.check_horizon(tau, grace)?;
    rmst(&arm.survival, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;

    fn rec(fu: f64, term: bool, ev: &[f64]) -> SubjectRecord {
        SubjectRecord::new("s", Arm::Control, fu, term, ev.to_vec(), vec![]).unwrap()
    }

    fn refs(v: &[SubjectRecord]) -> Vec<&SubjectRecord> {
        v.iter().collect()
    }

    #[test]
    fn km_two_deaths() {
        let v = vec![rec(1.0, true, &[]), rec(2.0, true, &[])];
        let s = kaplan_meier(&refs(&v));
        assert_eq!(s.value_at(0.5), 1.0);
        assert_eq!(s.value_at(1.0), 0.5);
        assert_eq!(s.value_at(1.99), 0.5);
        assert_eq!(s.value_at(2.0), 0.0);
    }

    #[test]
    fn km_no_deaths_is_one() {
        let v = vec![rec(1.0, false, &[]), rec(2.0, false, &[])];
        let s = kaplan_meier(&refs(&v));
        assert!(s.is_empty());
        assert_eq!(s.value_at(10.0), 1.0);
    }

    #[test]
    fn km_with_censoring_between_deaths() {
        let v = vec![
            rec(1.0, true, &[]),
            rec(1.5, false, &[]),
            rec(2.0, true, &[]),
        ];
        let s = kaplan_meier(&refs(&v));
        assert!((s.value_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.value_at(2.0), 0.0);
    }

    #[test]
    fn rate_increment_examples() {
        let v = vec![rec(2.0, false, &[1.0]), rec(2.0, false, &[])];
        let r = rate_increments(&refs(&v)).unwrap();
        assert_eq!(r.times(), &[1.0]);
        assert_eq!(r.values(), &[0.5]);

        let v = vec![rec(2.0, false, &[1.0]), rec(2.0, false, &[1.0])];
        assert_eq!(rate_increments(&refs(&v)).unwrap().values(), &[1.0]);

        let v = vec![rec(2.0, false, &[])];
        assert!(rate_increments(&refs(&v)).unwrap().is_empty());
    }

    #[test]
    fn mcf_examples() {
        let v = vec![rec(2.0, false, &[1.0]), rec(2.0, false, &[])];
        let est = ArmEstimators::from_records(&refs(&v)).unwrap();
        assert_eq!(est.mcf.value_at(0.99), 0.0);
        assert_eq!(est.mcf.value_at(1.0), 0.5);

        // death at 0.5 halves the survival weight of the later event
        let v = vec![rec(0.5, true, &[]), rec(2.0, false, &[1.0])];
        let est = ArmEstimators::from_records(&refs(&v)).unwrap();
        assert_eq!(est.rate.values(), &[1.0]);
        assert_eq!(est.mcf.jump_at(1.0), 0.5);

        let empty = StepFunction::empty(StepKind::Increment, 0.0);
        let m = mcf(&kaplan_meier(&refs(&v)), &empty);
        assert_eq!(m.value_at(5.0), 0.0);
    }

    #[test]
    fn auc_examples() {
        let v = vec![rec(2.0, false, &[1.0]), rec(2.0, false, &[])];
        let est = ArmEstimators::from_records(&refs(&v)).unwrap();
        assert_eq!(auc(&est, 2.0).unwrap(), 0.5);
        assert_eq!(auc(&est, 0.0).unwrap(), 0.0);
        assert_eq!(est.mcf.integral(2.0), 0.5);
        let err = auc(&est, 2.5).unwrap_err();
        assert!(err.to_string().contains("horizon beyond observed risk"));
        assert!(auc_with_grace(&est, 2.05, 0.1).is_ok());
    }

    #[test]
    fn terminal_hazard_examples() {
        let v = vec![rec(1.0, true, &[]), rec(2.0, true, &[])];
        let h = terminal_hazard_increments(&refs(&v));
        assert_eq!(h.times(), &[1.0, 2.0]);
        assert_eq!(h.values(), &[0.5, 1.0]);

        let v = vec![rec(1.0, false, &[])];
        assert!(terminal_hazard_increments(&refs(&v)).is_empty());

        // death and censoring tied: both at risk, one death
        let v = vec![rec(1.0, true, &[]), rec(1.0, false, &[])];
        assert_eq!(terminal_hazard_increments(&refs(&v)).values(), &[0.5]);
    }

    #[test]
    fn rmst_examples() {
        let v = vec![rec(2.0, false, &[]), rec(3.0, false, &[])];
        assert_eq!(rmst(&kaplan_meier(&refs(&v)), 2.0).unwrap(), 2.0);

        let v = vec![rec(1.0, true, &[]), rec(2.0, false, &[])];
        assert_eq!(rmst(&kaplan_meier(&refs(&v)), 2.0).unwrap(), 1.5);
    }

    #[test]
    fn risk_counts_with_ties() {
        let v = vec![
            rec(1.0, true, &[]),
            rec(1.0, false, &[]),
            rec(3.0, false, &[]),
        ];
        let r = RiskSet::new(&refs(&v));
        assert_eq!(r.at(1.0), 3);
        assert_eq!(r.at(1.0000001), 1);
        assert_eq!(r.at(0.0), 3);
        assert_eq!(r.at(4.0), 0);
    }
}
