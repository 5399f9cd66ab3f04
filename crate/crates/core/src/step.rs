//! Right-continuous step functions on `[0, inf)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Whether `values` hold post-jump levels or jump sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    Cumulative,
    Increment,
}

/// A piecewise-constant, right-continuous function with finitely many jumps.
///
/// For [`StepKind::Cumulative`] the `k`-th value is the level on
/// `[t_k, t_{k+1})`. For [`StepKind::Increment`] it is the jump at `t_k`, and
/// the implied level is `initial + sum of jumps at or before u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    kind: StepKind,
    initial: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, kind: StepKind, initial: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Contract(format!(
                "step function: {} jump times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Contract(
                "step function: jump times must be strictly increasing".into(),
            ));
        }
        Ok(StepFunction {
            times,
            values,
            kind,
            initial,
        })
    }

    pub fn empty(kind: StepKind, initial: f64) -> Self {
        StepFunction {
            times: Vec::new(),
            values: Vec::new(),
            kind,
            initial,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of jumps at or before `u`.
    fn count_le(&self, u: f64) -> usize {
        self.times.partition_point(|&t| t <= u)
    }

    /// Number of jumps strictly before `u`.
    fn count_lt(&self, u: f64) -> usize {
        self.times.partition_point(|&t| t < u)
    }

    fn level_after(&self, k: usize) -> f64 {
        match (self.kind, k) {
            (_, 0) => self.initial,
            (StepKind::Cumulative, k) => self.values[k - 1],
            (StepKind::Increment, k) => self.initial + self.values[..k].iter().sum::<f64>(),
        }
    }

    /// Level at `u` (right-continuous).
    pub fn value_at(&self, u: f64) -> f64 {
        self.level_after(self.count_le(u))
    }

    /// Left limit `f(u-)`.
    pub fn value_at_left(&self, u: f64) -> f64 {
        self.level_after(self.count_lt(u))
    }

    /// Size of the jump at exactly `u` (zero if `u` is not a jump time).
    pub fn jump_at(&self, u: f64) -> f64 {
        match self.times.binary_search_by(|t| t.total_cmp(&u)) {
            Ok(k) => match self.kind {
                StepKind::Increment => self.values[k],
                StepKind::Cumulative => self.values[k] - self.level_after(k),
            },
            Err(_) => 0.0,
        }
    }

    /// Jump sizes in time order, whichever representation is stored.
    pub fn increments(&self) -> Vec<f64> {
        match self.kind {
            StepKind::Increment => self.values.clone(),
            StepKind::Cumulative => {
                let mut prev = self.initial;
                self.values
                    .iter()
                    .map(|&v| {
                        let d = v - prev;
                        prev = v;
                        d
                    })
                    .collect()
            }
        }
    }

    /// Post-jump levels in time order.
    pub fn levels(&self) -> Vec<f64> {
        match self.kind {
            StepKind::Cumulative => self.values.clone(),
            StepKind::Increment => {
                let mut acc = self.initial;
                self.values
                    .iter()
                    .map(|&d| {
                        acc += d;
                        acc
                    })
                    .collect()
            }
        }
    }

    /// Exact `int_0^upper f(t) dt` over the rectangles of the step function.
    pub fn integral(&self, upper: f64) -> f64 {
        if upper <= 0.0 {
            return 0.0;
        }
        let levels = self.levels();
        let mut total = 0.0;
        let mut left = 0.0;
        let mut level = self.initial;
        for (&t, &next) in self.times.iter().zip(&levels) {
            if t >= upper {
                break;
            }
            if t > left {
                total += level * (t - left);
                left = t;
            }
            level = next;
        }
        total + level * (upper - left)
    }

    /// Write `time,value` rows (post-jump levels), preceded by the value at 0.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["time", "value"]).map_err(io)?;
        if self.times.first().is_none_or(|&t| t > 0.0) {
            wtr.write_record(["0".to_string(), self.initial.to_string()])
                .map_err(io)?;
        }
        for (t, v) in self.times.iter().zip(self.levels()) {
            wtr.write_record([t.to_string(), v.to_string()])
                .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cum() -> StepFunction {
        StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.0], StepKind::Cumulative, 1.0).unwrap()
    }

    #[test]
    fn right_continuous_and_left_limits() {
        let s = cum();
        assert_eq!(s.value_at(0.0), 1.0);
        assert_eq!(s.value_at(0.999), 1.0);
        assert_eq!(s.value_at(1.0), 0.5);
        assert_eq!(s.value_at_left(1.0), 1.0);
        assert_eq!(s.value_at_left(2.0), 0.5);
        assert_eq!(s.value_at(5.0), 0.0);
        assert_eq!(s.jump_at(1.0), -0.5);
        assert_eq!(s.jump_at(1.5), 0.0);
    }

    #[test]
    fn increment_kind() {
        let s =
            StepFunction::new(vec![1.0, 3.0], vec![0.5, 0.25], StepKind::Increment, 0.0).unwrap();
        assert_eq!(s.value_at(2.0), 0.5);
        assert_eq!(s.value_at(3.0), 0.75);
        assert_eq!(s.value_at_left(3.0), 0.5);
        assert_eq!(s.jump_at(3.0), 0.25);
        assert_eq!(s.levels(), vec![0.5, 0.75]);
    }

    #[test]
    fn integral_rectangles() {
        let s = cum();
        assert_eq!(s.integral(2.0), 1.5);
        assert_eq!(s.integral(0.5), 0.5);
        assert_eq!(s.integral(3.0), 1.5);
        assert_eq!(s.integral(0.0), 0.0);
        let zero_jump = StepFunction::new(vec![0.0], vec![2.0], StepKind::Cumulative, 1.0).unwrap();
        assert_eq!(zero_jump.integral(1.0), 2.0);
    }

    #[test]
    fn rejects_unsorted() {
        assert!(
            StepFunction::new(vec![1.0, 1.0], vec![0.0, 0.0], StepKind::Increment, 0.0).is_err()
        );
        assert!(StepFunction::new(vec![1.0], vec![], StepKind::Increment, 0.0).is_err());
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        cum().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "time,value\n0,1\n1,0.5\n2,0\n");
    }
}
