//! The change of measure that removes the decaying forcing `-beta w0^2 exp(-2 nu t)`.
//!
//! With `theta(t) = (beta w0^2 / sigma) exp(-2 nu t)` and complex Brownian
//! motion `B = B1 + i B2`, the density
//!
//! ```text
//! M_t = exp( int Re(theta) dB1 + int Im(theta) dB2 - 1/2 int |theta|^2 dt )
//! ```
//!
//! makes `B - int theta dt` a Brownian motion, so the forced equation under
//! `M_t dP` has the law of the autonomous one. The sign of the stochastic
//! integral is the one that shifts the drift by `+theta`; the opposite sign
//! leaves the moments of `M` unchanged but doubles the forcing instead of
//! removing it.

use std::path::Path;

use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Params;
use crate::integrate::{sup, ComplexStepper, IntegratorConfig};
use crate::rng::RngStream;
use crate::stats::{compensated_sum, mean_estimate, Estimate, Moments};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSpec {
    pub w0: C,
    pub beta: f64,
    pub nu: f64,
    pub sigma: f64,
}

impl ThetaSpec {
    pub fn new(w0: C, beta: f64, nu: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma != 0.0) {
            return Err(Error::Config(format!("sigma must be nonzero, got {sigma}")));
        }
        if !(nu.is_finite() && nu > 0.0) || !beta.is_finite() || !(w0.re.is_finite() && w0.im.is_finite()) {
            return Err(Error::Config("theta needs finite beta, w0 and nu > 0".into()));
        }
        Ok(ThetaSpec { w0, beta, nu, sigma })
    }

    pub fn from_params(p: &Params, w0: C, sigma: f64) -> Result<Self> {
        Self::new(w0, p.beta(), p.nu(), sigma)
    }
}

pub fn theta(t: f64, spec: &ThetaSpec) -> C {
    spec.beta * spec.w0 * spec.w0 / spec.sigma * (-2.0 * spec.nu * t).exp()
}

/// `int_0^T |theta|^2 ds`; `T` may be `f64::INFINITY`.
pub fn theta_l2(spec: &ThetaSpec, t: f64) -> f64 {
    let a = spec.beta * spec.beta * spec.w0.norm_sqr().powi(2) / (spec.sigma * spec.sigma);
    a * -(-4.0 * spec.nu * t).exp_m1() / (4.0 * spec.nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub log_m: Vec<f64>,
}

/// `M` along given Brownian increments `(dB1, dB2)` on the grid `k * dt`.
pub fn martingale_along(increments: &[(f64, f64)], spec: &ThetaSpec, dt: f64) -> MartingalePath {
    let n = increments.len();
    let mut times = Vec::with_capacity(n + 1);
    let mut log_m = Vec::with_capacity(n + 1);
    times.push(0.0);
    log_m.push(0.0);
    let mut acc = 0.0;
    for (k, (d1, d2)) in increments.iter().enumerate() {
        let th = theta(k as f64 * dt, spec);
        acc += th.re * d1 + th.im * d2 - 0.5 * th.norm_sqr() * dt;
        times.push((k + 1) as f64 * dt);
        log_m.push(acc);
    }
    let m = log_m.iter().map(|l| l.exp()).collect();
    MartingalePath { times, m, log_m }
}

fn log_m_sample(spec: &ThetaSpec, cfg: &IntegratorConfig, stream: RngStream) -> f64 {
    let n = cfg.n_steps();
    let mut src = stream.normals();
    let mut acc = 0.0;
    for k in 0..n {
        let h = cfg.step_len(k, n);
        let q = h.sqrt();
        let (a, b) = src.pair();
        let th = theta(k as f64 * cfg.dt, spec);
        acc += th.re * a * q + th.im * b * q - 0.5 * th.norm_sqr() * h;
    }
    acc
}

/// Samples of `log M_t` on `n_paths` independent streams `(seed, k)`.
pub fn sample_log_m(spec: &ThetaSpec, t: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    let cfg = IntegratorConfig { dt, t_max: t, ..Default::default() };
    cfg.validate()?;
    Ok((0..n_paths)
        .into_par_iter()
        .map(|k| log_m_sample(spec, &cfg, RngStream::new(seed, k as u64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub n_paths: usize,
    pub t: f64,
    pub dt: f64,
    pub seed: u64,
    pub mean_m: Estimate,
    pub mean_m2: Estimate,
    pub closed_form_m2: f64,
    pub theta_energy: f64,
    pub log_m: Moments,
    pub pass_mean_m: bool,
    pub pass_mean_m2: bool,
}

/// Monte Carlo `E[M_t]` and `E[M_t^2]` with `dt = 1e-3`.
pub fn check_moments(spec: &ThetaSpec, t: f64, n_paths: usize, seed: u64) -> Result<MomentReport> {
    check_moments_with(spec, t, 1e-3, n_paths, seed)
}

pub fn check_moments_with(spec: &ThetaSpec, t: f64, dt: f64, n_paths: usize, seed: u64) -> Result<MomentReport> {
    if n_paths < 100 {
        return Err(Error::Config("check_moments needs at least 100 paths".into()));
    }
    let logs = sample_log_m(spec, t, dt, n_paths, seed)?;
    let m: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
    let m2: Vec<f64> = logs.iter().map(|l| (2.0 * l).exp()).collect();
    let mean_m = mean_estimate(&m);
    let mean_m2 = mean_estimate(&m2);
    let energy = theta_l2(spec, t);
    let closed_form_m2 = energy.exp();
    Ok(MomentReport {
        n_paths,
        t,
        dt,
        seed,
        mean_m,
        mean_m2,
        closed_form_m2,
        theta_energy: energy,
        log_m: Moments::of(&logs),
        pass_mean_m: mean_m.within(1.0, 3.0) || mean_m.se == 0.0 && mean_m.value == 1.0,
        pass_mean_m2: mean_m2.within(closed_form_m2, 3.0) || mean_m2.se == 0.0 && mean_m2.value == closed_form_m2,
    })
}

/// Bounded test functions shipped with the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    /// `exp(-|z|^2)`
    Gaussian,
    /// `arctan(Re z)`
    ArctanRe,
}

impl TestFunction {
    #[inline]
    pub fn eval(&self, z: C) -> f64 {
        match self {
            TestFunction::Gaussian => (-z.norm_sqr()).exp(),
            TestFunction::ArctanRe => z.re.atan(),
        }
    }
}

impl std::str::FromStr for TestFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(TestFunction::Gaussian),
            "arctan-re" => Ok(TestFunction::ArctanRe),
            _ => Err(Error::Parse(format!("unknown test function '{s}' (gaussian, arctan-re)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawEquivalenceReport {
    pub f: TestFunction,
    pub t: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `E[M_t f(z~_t)]`
    pub lhs: Estimate,
    /// `E[f(z_t)]`
    pub rhs: Estimate,
    /// `E[f(z~_t)]`, the unweighted negative control.
    pub unweighted: Estimate,
    pub excluded_lhs: usize,
    pub excluded_rhs: usize,
    pub pass: bool,
    pub control_separated: bool,
}

enum PathEnd {
    Value { z: C, log_m: f64 },
    Exploded,
}

fn forced_path(z0: C, w0: C, p: &Params, sigma: f64, cfg: &IntegratorConfig, spec: Option<&ThetaSpec>, stream: RngStream) -> Result<PathEnd> {
    let stepper = ComplexStepper::new(p, sigma, w0, cfg)?;
    let n = cfg.n_steps();
    let mut src = stream.normals();
    let (mut z, mut w) = (z0, w0);
    let mut log_m = 0.0;
    for k in 0..n {
        let t = k as f64 * cfg.dt;
        let h = cfg.step_len(k, n);
        let (a, b) = src.pair();
        if let Some(s) = spec {
            let q = h.sqrt();
            let th = theta(t, s);
            log_m += th.re * a * q + th.im * b * q - 0.5 * th.norm_sqr() * h;
        }
        if stepper.step(&mut z, &mut w, t, h, (a, b)).is_some() || !(sup(z) < cfg.blowup_radius) {
            return Ok(PathEnd::Exploded);
        }
    }
    Ok(PathEnd::Value { z, log_m })
}

/// Compares `E[M_t f(z~_t)]` with `E[f(z_t)]`. Forced path `k` uses stream
/// `(seed, 2k)`, autonomous path `k` uses `(seed, 2k + 1)`. The stepping
/// method and `dt` come from `cfg`; its horizon is replaced by `t`.
#[allow(clippy::too_many_arguments)]
pub fn law_equivalence(
    z0: C,
    w0: C,
    p: &Params,
    sigma: f64,
    t: f64,
    f: TestFunction,
    n_paths: usize,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<LawEquivalenceReport> {
    let cfg = IntegratorConfig { t_max: t, ..*cfg };
    cfg.validate()?;
    let spec = ThetaSpec::from_params(p, w0, sigma)?;
    let zero = C::new(0.0, 0.0);
    let ends = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let a = forced_path(z0, w0, p, sigma, &cfg, Some(&spec), RngStream::new(seed, 2 * k as u64))?;
            let b = forced_path(z0, zero, p, sigma, &cfg, None, RngStream::new(seed, 2 * k as u64 + 1))?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut weighted, mut plain, mut auto) = (Vec::new(), Vec::new(), Vec::new());
    let (mut ex_l, mut ex_r) = (0, 0);
    for (a, b) in &ends {
        match a {
            PathEnd::Value { z, log_m } => {
                let fz = f.eval(*z);
                weighted.push(log_m.exp() * fz);
                plain.push(fz);
            }
            PathEnd::Exploded => ex_l += 1,
        }
        match b {
            PathEnd::Value { z, .. } => auto.push(f.eval(*z)),
            PathEnd::Exploded => ex_r += 1,
        }
    }
    if ex_l + ex_r > 0 {
        log::warn!("law_equivalence: excluded {ex_l} forced and {ex_r} autonomous exploded paths");
    }
    let lhs = mean_estimate(&weighted);
    let rhs = mean_estimate(&auto);
    let unweighted = mean_estimate(&plain);
    let band = 3.0 * lhs.combined_se(&rhs);
    Ok(LawEquivalenceReport {
        f,
        t,
        n_paths,
        seed,
        lhs,
        rhs,
        unweighted,
        excluded_lhs: ex_l,
        excluded_rhs: ex_r,
        pass: (lhs.value - rhs.value).abs() <= band,
        control_separated: (unweighted.value - rhs.value).abs() > 3.0 * unweighted.combined_se(&rhs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovReport {
    pub spec: ThetaSpec,
    pub theta_l2_infinity: f64,
    pub moments: MomentReport,
    pub equivalence: Vec<LawEquivalenceReport>,
}

impl GirsanovReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// `sum_k |theta(k dt)|^2 dt`, the discrete energy used by the samplers.
pub fn discrete_theta_energy(spec: &ThetaSpec, t: f64, dt: f64) -> f64 {
    let n = (t / dt).round() as usize;
    compensated_sum((0..n).map(|k| theta(k as f64 * dt, spec).norm_sqr() * dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(w0: C) -> ThetaSpec {
        ThetaSpec::new(w0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(0.0, &unit(C::new(1.0, 0.0))), C::new(1.0, 0.0));
        assert_eq!(theta(0.0, &unit(C::new(0.0, 1.0))).re, -1.0);
        assert_eq!(theta(3.0, &unit(C::new(0.0, 0.0))), C::new(0.0, 0.0));
        assert!(ThetaSpec::new(C::new(1.0, 0.0), 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn theta_energy() {
        let s = unit(C::new(1.0, 0.0));
        assert!((theta_l2(&s, f64::INFINITY) - 0.25).abs() < 1e-16);
        assert_eq!(theta_l2(&unit(C::new(0.0, 0.0)), f64::INFINITY), 0.0);
        let mut prev = 0.0;
        for t in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let v = theta_l2(&s, t);
            assert!(v >= prev);
            prev = v;
        }
        assert!((prev - 0.25).abs() < 1e-15);
        let s = ThetaSpec::new(C::new(0.5, 1.5), -2.0, 0.3, 0.7).unwrap();
        let quad = discrete_theta_energy(&s, 4.0, 1e-5);
        assert!((quad - theta_l2(&s, 4.0)).abs() < 1e-3 * quad);
    }

    #[test]
    fn martingale_trivial() {
        let path = martingale_along(&[(0.0, 0.0); 10], &unit(C::new(0.0, 0.0)), 0.1);
        assert!(path.m.iter().all(|&m| m == 1.0));
        assert_eq!(path.times.len(), 11);
        let path = martingale_along(&[(0.3, -0.2); 4], &unit(C::new(1.0, 0.0)), 0.1);
        assert_eq!(path.m[0], 1.0);
        assert!(path.m.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn zero_forcing_has_unit_martingale() {
        let r = check_moments_with(&unit(C::new(0.0, 0.0)), 1.0, 1e-2, 200, 1).unwrap();
        assert_eq!(r.mean_m.value, 1.0);
        assert_eq!(r.mean_m.se, 0.0);
        assert!(r.pass_mean_m && r.pass_mean_m2);
    }

    #[test]
    fn small_moment_run() {
        let r = check_moments_with(&unit(C::new(1.0, 0.0)), 2.0, 1e-2, 20_000, 5).unwrap();
        assert!(r.pass_mean_m, "{:?}", r.mean_m);
        assert!(r.pass_mean_m2, "{:?} vs {}", r.mean_m2, r.closed_form_m2);
    }

    #[test]
    fn zero_forcing_law_equivalence_is_trivial() {
        let cfg = IntegratorConfig { dt: 1e-2, ..Default::default() };
        let r = law_equivalence(C::new(0.0, 0.0), C::new(0.0, 0.0), &Params::unit(), 1.0, 1.0, TestFunction::ArctanRe, 2000, 3, &cfg).unwrap();
        assert!(r.pass);
        assert_eq!(r.lhs, r.unweighted);
    }
}
