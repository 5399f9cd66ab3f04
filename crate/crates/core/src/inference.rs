//! Unadjusted and covariate-adjusted Wald inference for the difference and
//! log-ratio of arm-level areas.
//!
//! Influence values are first rescaled into transformed outcomes `(P^k, Q^k)`
//! so that the linearized statistic is a plain difference of arm sums. The
//! adjustment regresses each transformed outcome on pooled-centered
//! covariates within each arm and subtracts the fitted imbalance.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::{AnalysisConfig, Arm, CenteredCovariates, Cohort, Endpoint, Estimand};
use crate::error::{Error, Result};
use crate::estimators::{arm_rmst, auc_with_grace, ArmEstimators};
use crate::influence::{influence_auc, influence_rmst, InfluenceSet};

/// Scale on which a confidence interval is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiScale {
    Identity,
    Exp,
}

impl Estimand {
    pub fn ci_scale(self) -> CiScale {
        match self {
            Estimand::Difference => CiScale::Identity,
            Estimand::Ratio => CiScale::Exp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldSummary {
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Upper `alpha/2` quantile of the standard normal.
pub fn normal_critical(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided normal p-value `2(1 - Phi(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Wald test and `100(1 - alpha)%` interval from a point estimate and its
/// variance. With [`CiScale::Exp`] the interval endpoints are exponentiated.
pub fn wald_summary(point: f64, variance: f64, alpha: f64, scale: CiScale) -> Result<WaldSummary> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::NonPositiveVariance(variance));
    }
    if !point.is_finite() {
        return Err(Error::Contract(format!(
            "non-finite point estimate {point}"
        )));
    }
    let se = variance.sqrt();
    let half = normal_critical(alpha) * se;
    let (lo, hi) = (point - half, point + half);
    let (ci_lower, ci_upper) = match scale {
        CiScale::Identity => (lo, hi),
        CiScale::Exp => (lo.exp(), hi.exp()),
    };
    let z = point / se;
    Ok(WaldSummary {
        point,
        se,
        ci_lower,
        ci_upper,
        z,
        p_value: two_sided_p(z),
    })
}

/// One line of analysis output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub estimand: Estimand,
    pub adjusted: bool,
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
    pub tau: f64,
    pub alpha: f64,
    pub n0: usize,
    pub n1: usize,
}

/// Influence values rescaled for one estimand, in pooled cohort order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedOutcomes {
    pub kind: Estimand,
    pub arms: Vec<Arm>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl TransformedOutcomes {
    pub fn n(&self) -> usize {
        self.arms.len()
    }

    pub fn psi(&self, i: usize) -> f64 {
        self.p[i] - self.q[i]
    }

    /// `(1/n)[sum_treated (P^k - Q^k) - sum_control (P^k - Q^k)]`.
    pub fn linearized(&self) -> f64 {
        let s: f64 = (0..self.n())
            .map(|i| match self.arms[i] {
                Arm::Treatment => self.psi(i),
                Arm::Control => -self.psi(i),
            })
            .sum();
        s / self.n() as f64
    }

    /// `sigma^2_L = (1/n) sum_i (psi^k_i)^2`.
    pub fn sigma2(&self) -> f64 {
        (0..self.n()).map(|i| self.psi(i).powi(2)).sum::<f64>() / self.n() as f64
    }
}

/// Multiplier applied to each arm's influence values for estimand `kind`,
/// returned as `(control, treated)`.
pub fn outcome_scales(
    kind: Estimand,
    n0: usize,
    n1: usize,
    u0: f64,
    u1: f64,
) -> Result<(f64, f64)> {
    let (n0f, n1f) = (n0 as f64, n1 as f64);
    match kind {
        Estimand::Difference => Ok(((n1f / n0f).sqrt(), (n0f / n1f).sqrt())),
        Estimand::Ratio => {
            if u0 <= 0.0 {
                return Err(Error::LogRatioUndefined(0));
            }
            if u1 <= 0.0 {
                return Err(Error::LogRatioUndefined(1));
            }
            Ok((n1f / u0, n0f / u1))
        }
    }
}

/// Interleave the two arms' rescaled influence values back into cohort order.
pub fn transform_outcomes(
    kind: Estimand,
    arms: &[Arm],
    control: &InfluenceSet,
    treated: &InfluenceSet,
    u0: f64,
    u1: f64,
) -> Result<TransformedOutcomes> {
    let (n0, n1) = (control.len(), treated.len());
    let count = |a| arms.iter().filter(|&&x| x == a).count();
    if count(Arm::Control) != n0 || count(Arm::Treatment) != n1 {
        return Err(Error::Contract(
            "arm labels do not match the influence sets".into(),
        ));
    }
    let (s0, s1) = outcome_scales(kind, n0, n1, u0, u1)?;
    let (mut i0, mut i1) = (0, 0);
    let mut p = Vec::with_capacity(arms.len());
    let mut q = Vec::with_capacity(arms.len());
    for &a in arms {
        let (set, k, s) = match a {
            Arm::Control => (control, &mut i0, s0),
            Arm::Treatment => (treated, &mut i1, s1),
        };
        p.push(s * set.p[*k]);
        q.push(s * set.q[*k]);
        *k += 1;
    }
    Ok(TransformedOutcomes {
        kind,
        arms: arms.to_vec(),
        p,
        q,
    })
}

/// `n/(n0 n1)` for the ratio, `n/sqrt(n0 n1)` for the difference: converts the
/// transformed-outcome scale back to the estimand scale.
pub fn unit_factor(kind: Estimand, n0: usize, n1: usize) -> f64 {
    let (n, n0, n1) = ((n0 + n1) as f64, n0 as f64, n1 as f64);
    match kind {
        Estimand::Difference => n / (n0 * n1).sqrt(),
        Estimand::Ratio => n / (n0 * n1),
    }
}

/// Per-arm least-squares fits of the transformed outcomes on covariates.
#[derive(Debug, Clone)]
pub struct AdjustmentFit {
    pub columns: Vec<String>,
    pub beta1_p: DVector<f64>,
    pub beta1_q: DVector<f64>,
    pub beta0_p: DVector<f64>,
    pub beta0_q: DVector<f64>,
    /// `(1/n) sum_i X_i X_i^T` over the pooled cohort.
    pub sigma_x: DMatrix<f64>,
    /// Estimated chance imbalance `A`.
    pub a_hat: f64,
    /// Used covariate rows, one per subject.
    x: DMatrix<f64>,
    n0: usize,
    n1: usize,
}

impl AdjustmentFit {
    /// `beta1_P - beta1_Q + beta0_P - beta0_Q`.
    pub fn b(&self) -> DVector<f64> {
        &self.beta1_p - &self.beta1_q + &self.beta0_p - &self.beta0_q
    }

    fn weight(&self) -> f64 {
        let n = (self.n0 + self.n1) as f64;
        self.n0 as f64 * self.n1 as f64 / (n * n)
    }

    /// `(n0 n1 / n^2) b^T Sigma_X b`, as a matrix quadratic form.
    pub fn variance_reduction_quadratic(&self) -> f64 {
        let b = self.b();
        self.weight() * (b.transpose() * &self.sigma_x * &b)[(0, 0)]
    }

    /// The same reduction as `(n0 n1 / n^2) (1/n) sum_i (X_i^T b)^2`, which is
    /// nonnegative term by term.
    pub fn variance_reduction(&self) -> f64 {
        let xb = &self.x * self.b();
        self.weight() * xb.norm_squared() / self.x.nrows() as f64
    }
}

/// Names of a collinear group among `cols` of `x`, if any: the first column
/// found to lie in the span of its predecessors plus the columns it loads on.
fn collinear_group(x: &DMatrix<f64>, names: &[String]) -> Option<Vec<String>> {
    let mut basis: Vec<usize> = Vec::new();
    for k in 0..x.ncols() {
        let col = x.column(k).into_owned();
        let norm2 = col.norm_squared();
        if norm2 == 0.0 {
            return Some(vec![names[k].clone()]);
        }
        if basis.is_empty() {
            basis.push(k);
            continue;
        }
        let b = x.select_columns(&basis);
        let gram = b.transpose() * &b;
        let coef = gram
            .cholesky()
            .map(|c| c.solve(&(b.transpose() * &col)))
            .unwrap_or_else(|| DVector::zeros(basis.len()));
        let resid = &col - &b * &coef;
        if resid.norm_squared() <= 1e-10 * norm2 {
            let scale = coef.amax().max(f64::MIN_POSITIVE);
            let mut group: Vec<String> = basis
                .iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() > 1e-8 * scale)
                .map(|(&j, _)| names[j].clone())
                .collect();
            group.push(names[k].clone());
            return Some(group);
        }
        basis.push(k);
    }
    None
}

fn arm_rows(x: &DMatrix<f64>, arms: &[Arm], arm: Arm) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..arms.len()).filter(|&i| arms[i] == arm).collect();
    x.select_rows(&idx)
}

fn arm_values(v: &[f64], arms: &[Arm], arm: Arm) -> DVector<f64> {
    DVector::from_iterator(
        arms.iter().filter(|&&a| a == arm).count(),
        v.iter()
            .zip(arms)
            .filter(|(_, &a)| a == arm)
            .map(|(&y, _)| y),
    )
}

/// Fit `(beta_{j,P}, beta_{j,Q})` for both arms on the columns of `x`
/// (already centered, one row per subject in cohort order).
pub fn fit_adjustment_matrix(
    outcomes: &TransformedOutcomes,
    x: &DMatrix<f64>,
    names: &[String],
) -> Result<AdjustmentFit> {
    let arms = &outcomes.arms;
    if x.nrows() != arms.len() || names.len() != x.ncols() {
        return Err(Error::Contract(
            "covariate matrix does not match the cohort".into(),
        ));
    }
    let n = arms.len() as f64;
    let mut betas = Vec::with_capacity(4);
    for arm in [Arm::Treatment, Arm::Control] {
        let xa = arm_rows(x, arms, arm);
        if let Some(columns) = collinear_group(&xa, names) {
            return Err(Error::SingularGram {
                arm: arm.indicator(),
                columns,
            });
        }
        let chol = (xa.transpose() * &xa)
            .cholesky()
            .ok_or_else(|| Error::SingularGram {
                arm: arm.indicator(),
                columns: names.to_vec(),
            })?;
        for y in [&outcomes.p, &outcomes.q] {
            betas.push(chol.solve(&(xa.transpose() * arm_values(y, arms, arm))));
        }
    }
    let [beta1_p, beta1_q, beta0_p, beta0_q]: [DVector<f64>; 4] =
        betas.try_into().expect("four fits");
    let d1 = &beta1_p - &beta1_q;
    let d0 = &beta0_p - &beta0_q;
    let a_hat = (0..arms.len())
        .map(|i| {
            let xi = x.row(i);
            match arms[i] {
                Arm::Treatment => (xi * &d1)[(0, 0)],
                Arm::Control => -(xi * &d0)[(0, 0)],
            }
        })
        .sum::<f64>()
        / n;
    let n1 = arms.iter().filter(|&&a| a == Arm::Treatment).count();
    Ok(AdjustmentFit {
        columns: names.to_vec(),
        beta1_p,
        beta1_q,
        beta0_p,
        beta0_q,
        sigma_x: x.transpose() * x / n,
        a_hat,
        x: x.clone(),
        n0: arms.len() - n1,
        n1,
    })
}

/// Columns of `x` usable for adjustment, and warnings for those dropped:
/// pooled-degenerate columns and columns constant within one arm.
pub fn usable_columns(x: &CenteredCovariates, arms: &[Arm]) -> (Vec<usize>, Vec<String>) {
    let mut keep = Vec::new();
    let mut warnings = Vec::new();
    for j in 0..x.p() {
        let name = &x.names()[j];
        if x.degenerate()[j] {
            warnings.push(format!("covariate {name} is constant and was dropped"));
            continue;
        }
        let col = x.matrix().column(j);
        let constant_in = [Arm::Control, Arm::Treatment].into_iter().find(|&arm| {
            let mut vals = (0..arms.len()).filter(|&i| arms[i] == arm).map(|i| col[i]);
            match vals.next() {
                Some(first) => vals.all(|v| v == first),
                None => false,
            }
        });
        if let Some(arm) = constant_in {
            warnings.push(format!(
                "covariate {name} is constant within arm {} and was dropped",
                arm.indicator()
            ));
            continue;
        }
        keep.push(j);
    }
    (keep, warnings)
}

/// Adjustment fit on the usable columns of `x`. `None` when no column
/// survives or an arm is too small for the regression.
pub fn fit_adjustment(
    outcomes: &TransformedOutcomes,
    x: &CenteredCovariates,
    warnings: &mut Vec<String>,
) -> Result<Option<AdjustmentFit>> {
    let (cols, mut dropped) = usable_columns(x, &outcomes.arms);
    warnings.append(&mut dropped);
    if cols.is_empty() {
        warnings.push("no usable covariates; reporting unadjusted inference".into());
        return Ok(None);
    }
    let p = cols.len();
    let n1 = outcomes
        .arms
        .iter()
        .filter(|&&a| a == Arm::Treatment)
        .count();
    let n0 = outcomes.n() - n1;
    if n0 < p + 2 || n1 < p + 2 {
        warnings.push(format!(
            "arm sizes ({n0}, {n1}) too small for {p} covariates; reporting unadjusted inference"
        ));
        return Ok(None);
    }
    let names: Vec<String> = cols.iter().map(|&j| x.names()[j].clone()).collect();
    fit_adjustment_matrix(outcomes, &x.matrix().select_columns(&cols), &names).map(Some)
}

/// Arm-level estimate and influence values for the configured endpoint.
#[derive(Debug, Clone)]
pub struct ArmSummary {
    pub area: f64,
    pub influence: InfluenceSet,
}

impl ArmSummary {
    pub fn new(records: &[&crate::data::SubjectRecord], config: &AnalysisConfig) -> Result<Self> {
        let est = ArmEstimators::from_records(records)?;
        let (tau, grace) = (config.tau, config.horizon_grace);
        let (area, influence) = match config.endpoint {
            Endpoint::Auc => (
                auc_with_grace(&est, tau, grace)?,
                influence_auc(records, &est, tau)?,
            ),
            Endpoint::Rmst => (
                arm_rmst(&est, tau, grace)?,
                influence_rmst(records, &est.survival, tau)?,
            ),
        };
        Ok(ArmSummary { area, influence })
    }

    /// Within-arm mean of squared influence values.
    pub fn mean_square(&self) -> f64 {
        self.influence.mean_square()
    }
}

/// Inference for one estimand, with the quantities behind it.
#[derive(Debug, Clone)]
pub struct EstimandAnalysis {
    pub result: InferenceResult,
    /// `sigma^2_L`.
    pub sigma2_l: f64,
    /// `sigma^2_CL`; equals `sigma2_l` for unadjusted results.
    pub sigma2_cl: f64,
    pub fit: Option<AdjustmentFit>,
}

/// Both arms of one cohort, ready for unadjusted or adjusted inference.
#[derive(Debug, Clone)]
pub struct CohortAnalysis {
    pub config: AnalysisConfig,
    pub arms: Vec<Arm>,
    pub control: ArmSummary,
    pub treated: ArmSummary,
}

impl CohortAnalysis {
    pub fn new(cohort: &Cohort, config: &AnalysisConfig) -> Result<Self> {
        config.validate()?;
        let (n0, n1) = cohort.arm_sizes();
        if n0 == 0 {
            return Err(Error::EmptyArm(0));
        }
        if n1 == 0 {
            return Err(Error::EmptyArm(1));
        }
        Ok(CohortAnalysis {
            config: *config,
            arms: cohort.subjects().iter().map(|r| r.arm()).collect(),
            control: ArmSummary::new(&cohort.arm_records(Arm::Control), config)?,
            treated: ArmSummary::new(&cohort.arm_records(Arm::Treatment), config)?,
        })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.control.influence.len(), self.treated.influence.len())
    }

    /// `U1 - U0` or `log(U1/U0)`.
    pub fn point(&self, kind: Estimand) -> Result<f64> {
        let (u0, u1) = (self.control.area, self.treated.area);
        match kind {
            Estimand::Difference => Ok(u1 - u0),
            Estimand::Ratio => {
                outcome_scales(kind, 1, 1, u0, u1)?;
                Ok((u1 / u0).ln())
            }
        }
    }

    /// Variance of the unadjusted point estimate from within-arm mean squares.
    pub fn unadjusted_variance(&self, kind: Estimand) -> f64 {
        let (n0, n1) = self.sizes();
        let (m0, m1) = (self.control.mean_square(), self.treated.mean_square());
        let (u0, u1) = (self.control.area, self.treated.area);
        match kind {
            Estimand::Difference => m1 / n1 as f64 + m0 / n0 as f64,
            Estimand::Ratio => m1 / (n1 as f64 * u1 * u1) + m0 / (n0 as f64 * u0 * u0),
        }
    }

    pub fn outcomes(&self, kind: Estimand) -> Result<TransformedOutcomes> {
        transform_outcomes(
            kind,
            &self.arms,
            &self.control.influence,
            &self.treated.influence,
            self.control.area,
            self.treated.area,
        )
    }

    fn result(&self, kind: Estimand, adjusted: bool, w: WaldSummary) -> InferenceResult {
        let (n0, n1) = self.sizes();
        InferenceResult {
            estimand: kind,
            adjusted,
            point: w.point,
            se: w.se,
            ci_lower: w.ci_lower,
            ci_upper: w.ci_upper,
            z: w.z,
            p_value: w.p_value,
            tau: self.config.tau,
            alpha: self.config.alpha,
            n0,
            n1,
        }
    }

    pub fn unadjusted(&self, kind: Estimand) -> Result<EstimandAnalysis> {
        let point = self.point(kind)?;
        let sigma2 = self.outcomes(kind)?.sigma2();
        let w = wald_summary(
            point,
            self.unadjusted_variance(kind),
            self.config.alpha,
            kind.ci_scale(),
        )?;
        Ok(EstimandAnalysis {
            result: self.result(kind, false, w),
            sigma2_l: sigma2,
            sigma2_cl: sigma2,
            fit: None,
        })
    }

    /// Adjusted inference; falls back to the unadjusted result (flagged
    /// `adjusted = false`) when no adjustment can be fitted.
    pub fn adjusted(
        &self,
        kind: Estimand,
        x: &CenteredCovariates,
        warnings: &mut Vec<String>,
    ) -> Result<EstimandAnalysis> {
        if x.n() != self.arms.len() {
            return Err(Error::Contract("covariates do not match the cohort".into()));
        }
        let outcomes = self.outcomes(kind)?;
        let Some(fit) = fit_adjustment(&outcomes, x, warnings)? else {
            return self.unadjusted(kind);
        };
        let (n0, n1) = self.sizes();
        let c = unit_factor(kind, n0, n1);
        let point = self.point(kind)? - c * fit.a_hat;
        let sigma2_l = outcomes.sigma2();
        let sigma2_cl = sigma2_l - fit.variance_reduction();
        let n = (n0 + n1) as f64;
        let w = wald_summary(
            point,
            c * c * sigma2_cl / n,
            self.config.alpha,
            kind.ci_scale(),
        )?;
        Ok(EstimandAnalysis {
            result: self.result(kind, true, w),
            sigma2_l,
            sigma2_cl,
            fit: Some(fit),
        })
    }
}

/// Results of a full analysis of one cohort.
#[derive(Debug, Clone, Default)]
pub struct AnalysisReport {
    pub results: Vec<InferenceResult>,
    pub warnings: Vec<String>,
}

pub fn unadjusted_inference(
    cohort: &Cohort,
    config: &AnalysisConfig,
) -> Result<Vec<InferenceResult>> {
    let a = CohortAnalysis::new(cohort, config)?;
    config
        .estimand
        .estimands()
        .into_iter()
        .map(|k| a.unadjusted(k).map(|e| e.result))
        .collect()
}

pub fn adjusted_inference(
    cohort: &Cohort,
    config: &AnalysisConfig,
    x: &CenteredCovariates,
) -> Result<AnalysisReport> {
    let a = CohortAnalysis::new(cohort, config)?;
    let mut report = AnalysisReport::default();
    for k in config.estimand.estimands() {
        let r = a.adjusted(k, x, &mut report.warnings)?;
        report.results.push(r.result);
    }
    report.warnings.dedup();
    Ok(report)
}

/// Unadjusted results for every requested estimand, followed by adjusted
/// ones when covariates are given.
pub fn analyze(
    cohort: &Cohort,
    config: &AnalysisConfig,
    covariates: Option<&CenteredCovariates>,
) -> Result<AnalysisReport> {
    let a = CohortAnalysis::new(cohort, config)?;
    let mut report = AnalysisReport::default();
    let kinds = config.estimand.estimands();
    for &k in &kinds {
        report.results.push(a.unadjusted(k)?.result);
    }
    if let Some(x) = covariates {
        for &k in &kinds {
            let r = a.adjusted(k, x, &mut report.warnings)?;
            report.results.push(r.result);
        }
    }
    report.warnings.dedup();
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}
