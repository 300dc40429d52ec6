//! Scalar functions of time: constants, sampled series and closed forms.

use alloc::vec::Vec;

/// A sampled series, linearly interpolated and held constant outside its range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    /// Returns `None` if the series is empty, lengths differ, or times are not
    /// strictly increasing.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Option<Self> {
        if times.is_empty() || times.len() != values.len() {
            return None;
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        Some(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // first index with times[k] > t; k >= 1 here
        let k = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub(crate) fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.values {
            *v = f(*v);
        }
    }
}

/// A time-dependent scalar parameter.
#[allow(unpredictable_function_pointer_comparisons)]
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    Constant(f64),
    Sampled(PiecewiseLinear),
    /// Closed form, used by the manufactured solution.
    Analytic(fn(f64) -> f64),
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant(c) => *c,
            TimeProfile::Sampled(s) => s.eval(t),
            TimeProfile::Analytic(f) => f(t),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            TimeProfile::Constant(c) => Some(*c),
            _ => None,
        }
    }
}

impl From<f64> for TimeProfile {
    fn from(c: f64) -> Self {
        TimeProfile::Constant(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn interpolates_and_holds() {
        let s = PiecewiseLinear::new(vec![0.0, 10.0, 20.0], vec![1.0, 3.0, -1.0]).unwrap();
        assert_eq!(s.eval(-5.0), 1.0);
        assert_eq!(s.eval(0.0), 1.0);
        assert_eq!(s.eval(5.0), 2.0);
        assert_eq!(s.eval(10.0), 3.0);
        assert_eq!(s.eval(15.0), 1.0);
        assert_eq!(s.eval(25.0), -1.0);
    }

    #[test]
    fn rejects_bad_series() {
        assert!(PiecewiseLinear::new(vec![], vec![]).is_none());
        assert!(PiecewiseLinear::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_none());
        assert!(PiecewiseLinear::new(vec![0.0], vec![1.0, 2.0]).is_none());
    }
}
