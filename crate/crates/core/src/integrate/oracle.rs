//! Closed-form blow-up oracles.
//!
//! [`riccati_oracle`] solves the constant-coefficient scalar equation
//! `x' = -nu x + beta x^2 + k`. [`real_axis_oracle`] solves the reduced
//! real-axis equation `y' = -nu y + beta y^2 - beta c exp(-2 nu t)` with
//! `c = y2(0)^2 - y4(0)^2` exactly: the substitution `y = -u'/(beta u)`
//! followed by `s = exp(-nu t)` linearizes it to `u_ss = (beta^2 c / nu^2) u`,
//! so blow-up is the first zero of `u` for `s` in `(0, 1)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::Params;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiccatiOutcome {
    Survived,
    Exploded { t_star: f64 },
}

impl RiccatiOutcome {
    pub fn exploded(&self) -> bool {
        matches!(self, RiccatiOutcome::Exploded { .. })
    }
}

/// Exact behavior of `x' = -nu x + beta x^2 + k` from `x0`.
pub fn riccati_oracle(x0: f64, nu: f64, beta: f64, k: f64) -> Result<RiccatiOutcome> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidParams(format!("riccati oracle needs beta != 0, got {beta}")));
    }
    if !(x0.is_finite() && nu.is_finite() && k.is_finite()) {
        return Err(Error::InvalidParams("riccati oracle needs finite inputs".into()));
    }
    if beta < 0.0 {
        // x -> -x maps the problem onto beta > 0.
        return riccati_oracle(-x0, nu, -beta, -k);
    }
    let disc = nu * nu - 4.0 * beta * k;
    if disc > 0.0 {
        let sq = disc.sqrt();
        let r2 = (nu + sq) / (2.0 * beta);
        let r1 = (nu - sq) / (2.0 * beta);
        if x0 <= r2 {
            return Ok(RiccatiOutcome::Survived);
        }
        let t_star = ((x0 - r1) / (x0 - r2)).ln() / (beta * (r2 - r1));
        Ok(RiccatiOutcome::Exploded { t_star })
    } else if disc == 0.0 {
        let r = nu / (2.0 * beta);
        if x0 <= r {
            return Ok(RiccatiOutcome::Survived);
        }
        Ok(RiccatiOutcome::Exploded { t_star: 1.0 / (beta * (x0 - r)) })
    } else {
        let c = nu / (2.0 * beta);
        let q = (-disc).sqrt() / (2.0 * beta);
        let t_star = (std::f64::consts::FRAC_PI_2 - ((x0 - c) / q).atan()) / (beta * q);
        Ok(RiccatiOutcome::Exploded { t_star })
    }
}

fn check_real_axis(y2_0: f64, y4_0: f64) -> Result<()> {
    if y2_0 != 0.0 && y4_0 != 0.0 {
        return Err(Error::Config(
            "real-axis oracle needs y2(0) = 0 or y4(0) = 0 (otherwise y3 leaves the axis)".into(),
        ));
    }
    if !(y2_0.is_finite() && y4_0.is_finite()) {
        return Err(Error::Config("real-axis oracle needs finite inputs".into()));
    }
    Ok(())
}

/// Exact explosion threshold `T` on the real axis (`y3 = 0`).
///
/// A start explodes iff `sign(beta) * y1(0) > T`. Returns `-inf` when every
/// start explodes (`y2 = 0` and `|beta y4| / nu >= pi`).
pub fn real_axis_threshold(y2_0: f64, y4_0: f64, p: &Params) -> Result<f64> {
    check_real_axis(y2_0, y4_0)?;
    let (nu, b) = (p.nu(), p.beta().abs());
    if y2_0 != 0.0 {
        let a = y2_0.abs();
        let kappa = b * a / nu;
        Ok(a / kappa.tanh())
    } else if y4_0 != 0.0 {
        let a = y4_0.abs();
        let kappa = b * a / nu;
        if kappa >= std::f64::consts::PI {
            Ok(f64::NEG_INFINITY)
        } else {
            Ok(a / kappa.tan())
        }
    } else {
        Ok(nu / b)
    }
}

/// Exact outcome of the real-axis reduced system from `y1(0)`.
pub fn real_axis_oracle(y1_0: f64, y2_0: f64, y4_0: f64, p: &Params) -> Result<RiccatiOutcome> {
    check_real_axis(y2_0, y4_0)?;
    if !y1_0.is_finite() {
        return Err(Error::Config("real-axis oracle needs finite y1(0)".into()));
    }
    let (nu, b) = (p.nu(), p.beta().abs());
    let y = p.beta().signum() * y1_0;
    let m = b * y / nu;
    // tau0 in (0, 1) is the first zero of u(tau) with u(0)=1, u'(0)=-m.
    let tau0 = if y2_0 != 0.0 {
        let kappa = b * y2_0.abs() / nu;
        let ratio = kappa / m;
        if m <= 0.0 || ratio >= kappa.tanh() {
            return Ok(RiccatiOutcome::Survived);
        }
        ratio.atanh() / kappa
    } else if y4_0 != 0.0 {
        let kappa = b * y4_0.abs() / nu;
        let theta = std::f64::consts::FRAC_PI_2 - (m / kappa).atan();
        if theta >= kappa {
            return Ok(RiccatiOutcome::Survived);
        }
        theta / kappa
    } else {
        if m <= 1.0 {
            return Ok(RiccatiOutcome::Survived);
        }
        1.0 / m
    };
    if tau0 >= 1.0 {
        return Ok(RiccatiOutcome::Survived);
    }
    Ok(RiccatiOutcome::Exploded { t_star: -(-tau0).ln_1p() / nu })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    #[test]
    fn logistic_blowup_time() {
        let o = riccati_oracle(2.0, 1.0, 1.0, 0.0).unwrap();
        match o {
            RiccatiOutcome::Exploded { t_star } => assert!((t_star - 2f64.ln()).abs() < 1e-15),
            _ => panic!(),
        }
        assert_eq!(riccati_oracle(1.0, 1.0, 1.0, 0.0).unwrap(), RiccatiOutcome::Survived);
        assert_eq!(riccati_oracle(0.5, 1.0, 1.0, 0.0).unwrap(), RiccatiOutcome::Survived);
    }

    #[test]
    fn frozen_forcing_threshold_is_golden_ratio() {
        let k = -1.0;
        assert!(!riccati_oracle(GOLDEN - 1e-9, 1.0, 1.0, k).unwrap().exploded());
        assert!(riccati_oracle(GOLDEN + 1e-9, 1.0, 1.0, k).unwrap().exploded());
    }

    #[test]
    fn double_root_boundary_survives() {
        // disc = 1 - 4k = 0 at k = 1/4, root 1/2.
        assert_eq!(riccati_oracle(0.5, 1.0, 1.0, 0.25).unwrap(), RiccatiOutcome::Survived);
        match riccati_oracle(1.5, 1.0, 1.0, 0.25).unwrap() {
            RiccatiOutcome::Exploded { t_star } => assert!((t_star - 1.0).abs() < 1e-15),
            _ => panic!(),
        }
    }

    #[test]
    fn complex_roots_always_explode() {
        // nu = 0: x' = x^2 + 1 from 0 is tan t.
        match riccati_oracle(0.0, 0.0, 1.0, 1.0).unwrap() {
            RiccatiOutcome::Exploded { t_star } => {
                assert!((t_star - std::f64::consts::FRAC_PI_2).abs() < 1e-15)
            }
            _ => panic!(),
        }
    }

    #[test]
    fn negative_beta_mirrors() {
        assert!(riccati_oracle(-2.0, 1.0, -1.0, 0.0).unwrap().exploded());
        assert!(!riccati_oracle(2.0, 1.0, -1.0, 0.0).unwrap().exploded());
        assert!(riccati_oracle(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn real_axis_unforced_matches_riccati() {
        let p = Params::unit();
        for y in [0.5, 1.0, 1.2, 2.0, 5.0] {
            assert_eq!(
                real_axis_oracle(y, 0.0, 0.0, &p).unwrap().exploded(),
                riccati_oracle(y, 1.0, 1.0, 0.0).unwrap().exploded()
            );
        }
        match real_axis_oracle(2.0, 0.0, 0.0, &p).unwrap() {
            RiccatiOutcome::Exploded { t_star } => assert!((t_star - 2f64.ln()).abs() < 1e-15),
            _ => panic!(),
        }
    }

    #[test]
    fn real_axis_thresholds() {
        let p = Params::unit();
        let t_b = real_axis_threshold(1.0, 0.0, &p).unwrap();
        assert!((t_b - 1.0 / 1f64.tanh()).abs() < 1e-15);
        assert!(t_b < GOLDEN);
        let t_a = real_axis_threshold(0.0, 1.0, &p).unwrap();
        assert!((t_a - 1.0 / 1f64.tan()).abs() < 1e-15);
        assert_eq!(real_axis_threshold(0.0, 4.0, &p).unwrap(), f64::NEG_INFINITY);
        assert_eq!(real_axis_threshold(0.0, 0.0, &p).unwrap(), 1.0);
        assert!(real_axis_threshold(1.0, 1.0, &p).is_err());
        for (y2, y4) in [(1.0, 0.0), (0.0, 1.0), (0.0, 2.5)] {
            let t = real_axis_threshold(y2, y4, &p).unwrap();
            assert!(!real_axis_oracle(t - 1e-9, y2, y4, &p).unwrap().exploded());
            assert!(real_axis_oracle(t + 1e-9, y2, y4, &p).unwrap().exploded());
        }
    }
}
