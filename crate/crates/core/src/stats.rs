//! Small Monte Carlo helpers: compensated sums and mean estimates.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }

    /// Standard error of `self - other` for independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.se.hypot(other.se)
    }
}

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sample mean with standard error `s / sqrt(n)`.
pub fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate { value: f64::NAN, se: f64::NAN };
    }
    let mean = compensated_sum(xs.iter().copied()) / n as f64;
    if n == 1 {
        return Estimate { value: mean, se: 0.0 };
    }
    let ss = compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
    let var = ss / (n - 1) as f64;
    Estimate { value: mean, se: (var / n as f64).sqrt() }
}

/// Central moment summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Moments {
        let n = xs.len();
        let nf = n as f64;
        let mean = compensated_sum(xs.iter().copied()) / nf;
        let m = |k: i32| compensated_sum(xs.iter().map(|x| (x - mean).powi(k))) / nf;
        let (m2, m3, m4) = (m(2), m(3), m(4));
        Moments {
            n,
            mean,
            variance: m2 * nf / (nf - 1.0),
            skewness: m3 / m2.powf(1.5),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        }
    }

    /// Large-sample standard errors of skewness and excess kurtosis under normality.
    pub fn normal_shape_se(&self) -> (f64, f64) {
        let n = self.n as f64;
        ((6.0 / n).sqrt(), (24.0 / n).sqrt())
    }
}
