//! Replicated trial simulations and their summary tables.
//!
//! Replicate `r` of a study draws from its own ChaCha8 stream: the
//! generator is seeded with `base_seed` and switched to stream `r`, so the
//! results do not depend on thread count or execution order.

pub mod generate;
pub mod study;

use serde::{Deserialize, Serialize};

use crate::data::Endpoint;
use crate::error::{Error, Result};

pub use generate::{
    gen_baseline, gen_death_censor, gen_recurrent, gen_recurrent_gap, gen_rmst_baseline,
    gen_rmst_case, Followup,
};
pub use study::{
    run_replicate, run_study, run_study_with_threads, CellSummary, ReplicateCell, ReplicateFailure,
    ReplicateOutcome, StudyResult,
};

/// Treatment allocation design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Simple,
    Spb,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Simple => "simple",
            Scheme::Spb => "spb",
        })
    }
}

fn default_tau() -> f64 {
    2.0
}

fn default_alpha() -> f64 {
    0.05
}

fn default_grace() -> f64 {
    0.1
}

fn default_block() -> usize {
    4
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub endpoint: Endpoint,
    pub case: u8,
    pub theta: f64,
    pub n: usize,
    pub scheme: Scheme,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Allowed excess of `tau` over an arm's largest follow-up.
    #[serde(default = "default_grace")]
    pub horizon_grace: f64,
    #[serde(default = "default_block")]
    pub block_size: usize,
}

impl ScenarioSpec {
    pub fn new(endpoint: Endpoint, case: u8, theta: f64, n: usize, scheme: Scheme) -> Self {
        ScenarioSpec {
            endpoint,
            case,
            theta,
            n,
            scheme,
            tau: default_tau(),
            replicates: 1000,
            base_seed: 0,
            alpha: default_alpha(),
            horizon_grace: default_grace(),
            block_size: default_block(),
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| Error::InvalidScenario(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let cases = match self.endpoint {
            Endpoint::Auc => 1..=5,
            Endpoint::Rmst => 1..=2,
        };
        if !cases.contains(&self.case) {
            return bad(format!(
                "case {} is not defined for endpoint {} (valid: {}..={})",
                self.case,
                self.endpoint,
                cases.start(),
                cases.end()
            ));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if !self.theta.is_finite() {
            return bad(format!("theta must be finite, got {}", self.theta));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.horizon_grace >= 0.0) {
            return bad(format!(
                "horizon grace must be nonnegative, got {}",
                self.horizon_grace
            ));
        }
        if self.block_size == 0 || !self.block_size.is_multiple_of(2) {
            return bad(format!(
                "block size must be positive and even, got {}",
                self.block_size
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let spec = ScenarioSpec::from_toml_str(
            "endpoint = \"auc\"\ncase = 1\ntheta = -0.32\nn = 400\nscheme = \"spb\"\nreplicates = 10\nbase_seed = 7\n",
        )
        .unwrap();
        assert_eq!(spec.tau, 2.0);
        assert_eq!(spec.alpha, 0.05);
        assert_eq!(spec.block_size, 4);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(ScenarioSpec::from_toml_str(&text).unwrap(), spec);
    }

    #[test]
    fn validation() {
        let ok = ScenarioSpec::new(Endpoint::Auc, 5, 0.0, 400, Scheme::Simple);
        assert!(ok.validate().is_ok());
        let mut s = ok.clone();
        s.case = 9;
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));
        let s = ScenarioSpec::new(Endpoint::Rmst, 3, 0.0, 400, Scheme::Simple);
        assert!(s.validate().is_err());
        assert!(ok.clone().with_replicates(0).validate().is_err());
        assert!(ScenarioSpec::from_toml_str("case = 1").is_err());
        assert!(ScenarioSpec::from_toml_str(
            "endpoint = \"auc\"\ncase = 1\ntheta = 0\nn = 40\nscheme = \"simple\"\nreplicates = 1\nbase_seed = 0\nextra = 1\n"
        )
        .is_err());
    }
}
