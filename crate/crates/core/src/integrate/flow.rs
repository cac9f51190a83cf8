//! Closed-form flow of the noise-free `y`-system.
//!
//! With `z = y1 + i y3` and `w = y2 + i y4` the drift reads
//! `z' = -nu z + beta z^2 - beta w^2`, `w' = -nu w`. Over a step `h`,
//! with `r = exp(-nu h)`, `k = beta (1 - r) / nu` and `x = -k w`,
//!
//! ```text
//! z(h) = r (z cosh x - k w^2 shc x) / (cosh x - k z shc x),   shc x = sinh x / x
//! w(h) = r w
//! ```
//!
//! The map is exact, so steps compose to roundoff. A pole of the
//! denominator inside a step is a true blow-up; steps that could straddle
//! one are subdivided so the radius crossing is located on a fine grid.

use num_complex::Complex64 as C;

use crate::dynamics::Params;

/// Subdivide when `|beta| * max(|z|, |w|) * h` exceeds this.
const SCAN_TRIGGER: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub(crate) struct FlowCoeffs {
    pub h: f64,
    pub r: f64,
    pub k: f64,
}

impl FlowCoeffs {
    pub fn new(p: &Params, h: f64) -> Self {
        let em1 = (-p.nu() * h).exp_m1();
        FlowCoeffs { h, r: 1.0 + em1, k: -p.beta() / p.nu() * em1 }
    }
}

#[inline]
fn cosh_shc(x: C) -> (C, C) {
    if x.norm_sqr() < 1e-4 {
        let x2 = x * x;
        let ch = 1.0 + x2 * (0.5 + x2 * (1.0 / 24.0 + x2 * (1.0 / 720.0)));
        let shc = 1.0 + x2 * (1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 * (1.0 / 5040.0)));
        (ch, shc)
    } else {
        (x.cosh(), x.sinh() / x)
    }
}

/// One exact step; no pole check.
#[inline]
pub(crate) fn flow(z: C, w: C, c: &FlowCoeffs) -> (C, C) {
    if w.re == 0.0 && w.im == 0.0 {
        return (c.r * z / (1.0 - c.k * z), w);
    }
    let x = -c.k * w;
    let (ch, shc) = cosh_shc(x);
    let num = z * ch - c.k * (w * w) * shc;
    let den = ch - c.k * z * shc;
    (c.r * num / den, w * c.r)
}

#[inline]
pub(crate) fn sup(z: C) -> f64 {
    z.re.abs().max(z.im.abs())
}

#[inline]
fn finite(z: C) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Outcome of [`advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Advance {
    Finite,
    /// Radius reached `tau` into the step.
    Exploded(f64),
}

/// Advance `(z, w)` by `c.h`, subdividing near poles. Detects the radius
/// only inside subdivided steps; callers test the end state themselves.
#[inline]
pub(crate) fn advance(z: &mut C, w: &mut C, c: &FlowCoeffs, p: &Params, radius: f64) -> Advance {
    let b = p.beta().abs();
    let scale = z.norm().max(w.norm());
    if b * scale * c.h < SCAN_TRIGGER {
        let (z1, w1) = flow(*z, *w, c);
        *z = z1;
        *w = w1;
        return Advance::Finite;
    }
    let mut tau = 0.0;
    loop {
        let remaining = c.h - tau;
        let scale = z.norm().max(w.norm());
        let sub = (SCAN_TRIGGER / (b * scale)).min(remaining);
        let last = sub >= remaining;
        let (z1, w1) = flow(*z, *w, &FlowCoeffs::new(p, sub));
        *z = z1;
        *w = w1;
        tau = if last { c.h } else { tau + sub };
        if !finite(*z) || !finite(*w) || sup(*z) >= radius || sup(*w) >= radius {
            return Advance::Exploded(tau);
        }
        if last {
            return Advance::Finite;
        }
    }
}
