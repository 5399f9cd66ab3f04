//! Synthetic trial generators.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, StandardNormal, Uniform};

use crate::data::Arm;
use crate::error::{Error, Result};

/// Coefficients of the recurrent-event intensity `rho0(t) exp(theta(t) j + X^T eta)`.
pub const ETA_RECURRENT: [f64; 3] = [0.2, 0.2, 0.2];
/// Coefficients of the death hazard `0.05 exp(X^T xi)`.
pub const XI_DEATH: [f64; 3] = [0.1, 0.1, 0.1];
/// Coefficients of the RMST scenarios.
pub const ETA_RMST: [f64; 3] = [0.5, 0.5, 0.5];
/// Longest possible follow-up in the recurrent-event scenarios.
pub const MAX_FOLLOWUP: f64 = 2.0;

fn dot(x: &[f64; 3], b: &[f64; 3]) -> f64 {
    x.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// `X1 ~ Bernoulli(0.5)`, `X2, X3 ~ N(0, sd 2)`, independent.
pub fn gen_baseline<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let wide = Normal::new(0.0, 2.0).expect("valid sd");
    (0..n)
        .map(|_| {
            let x1 = f64::from(u8::from(coin.sample(rng)));
            [x1, wide.sample(rng), wide.sample(rng)]
        })
        .collect()
}

/// Three independent standard normal covariates.
pub fn gen_rmst_baseline<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ]
        })
        .collect()
}

/// Death, censoring and observed follow-up of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Followup {
    pub death: f64,
    pub censor: f64,
    pub followup: f64,
    pub terminal: bool,
}

/// `D = 5/365 + Exp(rate 0.05 exp(X^T xi))`, `C ~ U(1, 2)`,
/// `T = min(D, C, 2)`, `delta = 1(D <= min(C, 2))`.
pub fn gen_death_censor<R: Rng + ?Sized>(x: &[f64; 3], rng: &mut R) -> Followup {
    let rate = 0.05 * dot(x, &XI_DEATH).exp();
    let death = 5.0 / 365.0 + Exp::new(rate).expect("positive rate").sample(rng);
    let censor: f64 = Uniform::new(1.0, 2.0).expect("valid range").sample(rng);
    let limit = censor.min(MAX_FOLLOWUP);
    Followup {
        death,
        censor,
        followup: death.min(limit),
        terminal: death <= limit,
    }
}

/// Time-varying log effect `theta_case(t) = a2 t^2 + a1 t + a0`, as `(a2, a1, a0)`.
pub fn effect_coefficients(case: u8, theta: f64) -> Result<(f64, f64, f64)> {
    match case {
        1 => Ok((0.0, 0.0, theta)),
        2 => Ok((-0.25 * theta, theta, 0.0)),
        3 => Ok((-theta, 2.0 * theta, 0.0)),
        4 => Ok((-0.25 * theta, 0.0, theta)),
        _ => Err(Error::InvalidScenario(format!(
            "intensity cases are 1 to 4, got {case}"
        ))),
    }
}

/// Intensity `0.3 t exp(theta_case(t) j + X^T eta)` of the recurrent process.
pub fn intensity(coef: (f64, f64, f64), j: f64, lin: f64, t: f64) -> f64 {
    let (a2, a1, a0) = coef;
    0.3 * t * ((a2 * t * t + a1 * t + a0) * j + lin).exp()
}

/// Exact maximum of [`intensity`] over `[0, upper]`. The log-intensity has
/// derivative `1/t + 2 a2 t + a1`, so the interior critical points solve
/// `2 a2 t^2 + a1 t + 1 = 0`.
pub fn intensity_envelope(coef: (f64, f64, f64), j: f64, lin: f64, upper: f64) -> f64 {
    let (a2, a1) = (coef.0 * j, coef.1 * j);
    let mut candidates = vec![upper];
    if a2 == 0.0 {
        if a1 != 0.0 {
            candidates.push(-1.0 / a1);
        }
    } else {
        let disc = a1 * a1 - 8.0 * a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            candidates.push((-a1 + r) / (4.0 * a2));
            candidates.push((-a1 - r) / (4.0 * a2));
        }
    }
    candidates
        .into_iter()
        .filter(|&t| t > 0.0 && t <= upper)
        .map(|t| intensity(coef, j, lin, t))
        .fold(0.0, f64::max)
}

/// Recurrent events on `(0, followup)` for intensity cases 1 to 4, by
/// thinning a homogeneous process at the exact envelope rate.
pub fn gen_recurrent<R: Rng + ?Sized>(
    case: u8,
    theta: f64,
    arm: Arm,
    x: &[f64; 3],
    followup: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let coef = effect_coefficients(case, theta)?;
    let j = f64::from(arm.indicator());
    let lin = dot(x, &ETA_RECURRENT);
    let bound = intensity_envelope(coef, j, lin, followup);
    let mut events = Vec::new();
    if !(bound > 0.0) {
        return Ok(events);
    }
    let gap = Exp::new(bound).expect("positive envelope");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= followup {
            return Ok(events);
        }
        if rng.random::<f64>() * bound < intensity(coef, j, lin, t) {
            events.push(t);
        }
    }
}

/// Case 5 gap-time process: `gap = exp(-theta I + X^T eta - 0.7) + Exp(mean 0.25)`,
/// with event times kept while below `followup`.
pub fn gen_recurrent_gap<R: Rng + ?Sized>(
    theta: f64,
    arm: Arm,
    x: &[f64; 3],
    followup: f64,
    rng: &mut R,
) -> Vec<f64> {
    let floor = (-theta * f64::from(arm.indicator()) + dot(x, &ETA_RECURRENT) - 0.7).exp();
    let noise = Exp::new(4.0).expect("positive rate");
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        t += floor + noise.sample(rng);
        if t >= followup {
            return events;
        }
        events.push(t);
    }
}

/// Survival scenarios for the RMST endpoint, with `C ~ U(10, 40)`.
///
/// Case 1: hazard `log(2) exp(-theta j + eta^T X)`.
/// Case 2: `D = exp(theta j + eta^T X) + Exp(1)`.
pub fn gen_rmst_case<R: Rng + ?Sized>(
    case: u8,
    theta: f64,
    arm: Arm,
    x: &[f64; 3],
    rng: &mut R,
) -> Result<Followup> {
    let j = f64::from(arm.indicator());
    let lin = dot(x, &ETA_RMST);
    let death = match case {
        1 => Exp::new(std::f64::consts::LN_2 * (-theta * j + lin).exp())
            .map_err(|e| Error::InvalidScenario(e.to_string()))?
            .sample(rng),
        2 => (theta * j + lin).exp() + Exp::new(1.0).expect("unit rate").sample(rng),
        _ => {
            return Err(Error::InvalidScenario(format!(
                "RMST cases are 1 and 2, got {case}"
            )))
        }
    };
    let censor: f64 = Uniform::new(10.0, 40.0).expect("valid range").sample(rng);
    Ok(Followup {
        death,
        censor,
        followup: death.min(censor),
        terminal: death <= censor,
    })
}
