//! System parameters, the two coordinate frames and the drift fields.
//!
//! The original frame `x = (Re z, Im z, Re w, Im w)` and the eigen-aligned
//! frame `y` are related by a fixed linear map `L` (see [`coord_matrix`]).
//! In `y` the pair `(y2, y4)` decouples and decays exponentially, which is
//! what makes the reduced two-dimensional systems possible.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Constants `nu > 0`, `alpha != 0`, `beta != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct Params {
    nu: f64,
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    nu: f64,
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawParams> for Params {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        Params::new(r.nu, r.alpha, r.beta)
    }
}

impl From<Params> for RawParams {
    fn from(p: Params) -> Self {
        RawParams { nu: p.nu, alpha: p.alpha, beta: p.beta }
    }
}

impl Params {
    pub fn new(nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidParams(format!("nu must be positive and finite, got {nu}")));
        }
        if !alpha.is_finite() || alpha == 0.0 {
            return Err(Error::InvalidParams(format!("alpha must be nonzero and finite, got {alpha}")));
        }
        if !beta.is_finite() || beta == 0.0 {
            return Err(Error::InvalidParams(format!("beta must be nonzero and finite, got {beta}")));
        }
        Ok(Params { nu, alpha, beta })
    }

    /// `nu = alpha = beta = 1`.
    pub fn unit() -> Self {
        Params { nu: 1.0, alpha: 1.0, beta: 1.0 }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// `alpha / beta`.
    pub fn ratio(&self) -> f64 {
        self.alpha / self.beta
    }
}

fn check_finite(v: [f64; 4]) -> Result<[f64; 4]> {
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteState { index: index + 1, value });
        }
    }
    Ok(v)
}

/// State in the original frame: `(Re z, Im z, Re w, Im w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateX {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
}

/// State in the eigen-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateY {
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub y4: f64,
}

impl StateX {
    pub fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Result<Self> {
        Self::from_array([x1, x2, x3, x4])
    }
    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        let [x1, x2, x3, x4] = check_finite(a)?;
        Ok(StateX { x1, x2, x3, x4 })
    }
    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.x4]
    }
}

impl StateY {
    pub fn new(y1: f64, y2: f64, y3: f64, y4: f64) -> Result<Self> {
        Self::from_array([y1, y2, y3, y4])
    }
    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        let [y1, y2, y3, y4] = check_finite(a)?;
        Ok(StateY { y1, y2, y3, y4 })
    }
    pub fn to_array(self) -> [f64; 4] {
        [self.y1, self.y2, self.y3, self.y4]
    }
}

/// State of the reduced `(y1, y3)` system with `y2, y4` frozen at their
/// initial values; their decay enters through `exp(-2 nu t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub t: f64,
    pub y1: f64,
    pub y3: f64,
    pub y2_0: f64,
    pub y4_0: f64,
}

impl ReducedState {
    pub fn new(t: f64, y1: f64, y3: f64, y2_0: f64, y4_0: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::Config(format!("reduced state needs t >= 0, got {t}")));
        }
        check_finite([y1, y3, y2_0, y4_0])?;
        Ok(ReducedState { t, y1, y3, y2_0, y4_0 })
    }
}

/// The linear map `y = L x`.
pub fn coord_matrix(p: &Params) -> [[f64; 4]; 4] {
    let a = 0.5 * p.ratio();
    [
        [0.5, 0.0, a, 0.0],
        [0.5, 0.0, -a, 0.0],
        [0.0, 0.5, 0.0, a],
        [0.0, 0.5, 0.0, -a],
    ]
}

pub fn to_y(x: &StateX, p: &Params) -> StateY {
    let y = to_y_array(x.to_array(), p);
    StateY { y1: y[0], y2: y[1], y3: y[2], y4: y[3] }
}

pub fn to_x(y: &StateY, p: &Params) -> StateX {
    let x = to_x_array(y.to_array(), p);
    StateX { x1: x[0], x2: x[1], x3: x[2], x4: x[3] }
}

#[inline]
pub(crate) fn to_y_array(x: [f64; 4], p: &Params) -> [f64; 4] {
    let a = p.ratio();
    [
        0.5 * (x[0] + a * x[2]),
        0.5 * (x[0] - a * x[2]),
        0.5 * (x[1] + a * x[3]),
        0.5 * (x[1] - a * x[3]),
    ]
}

#[inline]
pub(crate) fn to_x_array(y: [f64; 4], p: &Params) -> [f64; 4] {
    let b = p.beta / p.alpha;
    [y[0] + y[1], y[2] + y[3], b * (y[0] - y[1]), b * (y[2] - y[3])]
}

pub fn drift_x(x: &StateX, p: &Params) -> [f64; 4] {
    drift_x_array(x.to_array(), p)
}

pub fn drift_y(y: &StateY, p: &Params) -> [f64; 4] {
    drift_y_array(y.to_array(), p)
}

#[inline]
pub(crate) fn drift_x_array(x: [f64; 4], p: &Params) -> [f64; 4] {
    let re = x[0] * x[2] - x[1] * x[3];
    let im = x[1] * x[2] + x[0] * x[3];
    [
        -p.nu * x[0] + p.alpha * re,
        -p.nu * x[1] + p.alpha * im,
        -p.nu * x[2] + p.beta * re,
        -p.nu * x[3] + p.beta * im,
    ]
}

#[inline]
pub(crate) fn drift_y_array(y: [f64; 4], p: &Params) -> [f64; 4] {
    let [y1, y2, y3, y4] = y;
    [
        -p.nu * y1 + p.beta * ((y1 * y1 - y2 * y2) - (y3 * y3 - y4 * y4)),
        -p.nu * y2,
        -p.nu * y3 + 2.0 * p.beta * (y1 * y3 - y2 * y4),
        -p.nu * y4,
    ]
}

pub fn drift_reduced(s: &ReducedState, p: &Params) -> [f64; 2] {
    let decay = (-2.0 * p.nu * s.t).exp();
    [
        -p.nu * s.y1 + p.beta * (s.y1 * s.y1 - s.y3 * s.y3)
            - p.beta * (s.y2_0 * s.y2_0 - s.y4_0 * s.y4_0) * decay,
        -p.nu * s.y3 + 2.0 * p.beta * s.y1 * s.y3 - 2.0 * p.beta * s.y2_0 * s.y4_0 * decay,
    ]
}

/// Jacobian of [`drift_x`] at `x`.
pub fn jacobian_x(x: &StateX, p: &Params) -> [[f64; 4]; 4] {
    let (nu, a, b) = (p.nu, p.alpha, p.beta);
    let StateX { x1, x2, x3, x4 } = *x;
    [
        [-nu + a * x3, -a * x4, a * x1, -a * x2],
        [a * x4, -nu + a * x3, a * x2, a * x1],
        [b * x3, -b * x4, -nu + b * x1, -b * x2],
        [b * x4, b * x3, b * x2, -nu + b * x1],
    ]
}

/// The origin and the saddle `(nu/beta, 0, nu/alpha, 0)`.
pub fn fixed_points(p: &Params) -> (StateX, StateX) {
    let zero = StateX { x1: 0.0, x2: 0.0, x3: 0.0, x4: 0.0 };
    let saddle = StateX { x1: p.nu / p.beta, x2: 0.0, x3: p.nu / p.alpha, x4: 0.0 };
    (zero, saddle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPoint {
    Origin,
    Saddle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Linearization {
    pub center: StateX,
    pub jacobian: [[f64; 4]; 4],
    pub eigenvalues: [f64; 4],
    /// Unnormalized, in the same order as `eigenvalues`.
    pub eigenvectors: [[f64; 4]; 4],
}

impl Linearization {
    /// Eigenvectors scaled to unit Euclidean length.
    pub fn normalized_eigenvectors(&self) -> [[f64; 4]; 4] {
        self.eigenvectors.map(|v| {
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            v.map(|c| c / n)
        })
    }

    /// `max_k ||J v_k - lambda_k v_k|| / ||v_k||`.
    pub fn max_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (lam, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let jv = mat_vec(&self.jacobian, v);
            let r = (0..4).map(|i| (jv[i] - lam * v[i]).powi(2)).sum::<f64>().sqrt();
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            worst = worst.max(r / n);
        }
        worst
    }
}

pub(crate) fn mat_vec(m: &[[f64; 4]; 4], v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

pub fn linearize(p: &Params, which: FixedPoint) -> Linearization {
    let (origin, saddle) = fixed_points(p);
    let nu = p.nu;
    match which {
        FixedPoint::Origin => {
            let mut ev = [[0.0; 4]; 4];
            for (k, v) in ev.iter_mut().enumerate() {
                v[k] = 1.0;
            }
            Linearization {
                center: origin,
                jacobian: jacobian_x(&origin, p),
                eigenvalues: [-nu; 4],
                eigenvectors: ev,
            }
        }
        FixedPoint::Saddle => {
            let r = p.ratio();
            Linearization {
                center: saddle,
                jacobian: jacobian_x(&saddle, p),
                eigenvalues: [-nu, -nu, nu, nu],
                eigenvectors: [
                    [0.0, -r, 0.0, 1.0],
                    [-r, 0.0, 1.0, 0.0],
                    [0.0, r, 0.0, 1.0],
                    [r, 0.0, 1.0, 0.0],
                ],
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(nu: f64, a: f64, b: f64) -> Params {
        Params::new(nu, a, b).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn params_reject_degenerate() {
        assert!(Params::new(0.0, 1.0, 1.0).is_err());
        assert!(Params::new(-1.0, 1.0, 1.0).is_err());
        assert!(Params::new(1.0, 0.0, 1.0).is_err());
        assert!(Params::new(1.0, 1.0, 0.0).is_err());
        assert!(Params::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(Params::new(1.0, f64::INFINITY, 1.0).is_err());
        assert!(Params::new(1.0, -2.0, -3.0).is_ok());
    }

    #[test]
    fn params_serde_validates() {
        let ok: Params = serde_json::from_str(r#"{"nu":1.0,"alpha":2.0,"beta":3.0}"#).unwrap();
        assert_eq!(ok, p(1.0, 2.0, 3.0));
        assert!(serde_json::from_str::<Params>(r#"{"nu":0.0,"alpha":2.0,"beta":3.0}"#).is_err());
    }

    #[test]
    fn states_reject_non_finite() {
        assert!(StateX::new(0.0, f64::NAN, 0.0, 0.0).is_err());
        assert!(StateY::new(f64::INFINITY, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn to_y_examples() {
        let x = StateX::new(1.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(to_y(&x, &Params::unit()).to_array(), [1.0, 0.0, 0.0, 0.0]);
        let x = StateX::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(to_y(&x, &p(1.0, 2.0, 1.0)).to_array(), [1.5, -0.5, 1.5, -0.5]);
        let zero = StateX::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(to_y(&zero, &p(3.0, -2.0, 5.0)).to_array(), [0.0; 4]);
    }

    #[test]
    fn to_x_examples() {
        let y = StateY::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(to_x(&y, &Params::unit()).to_array(), [1.0, 0.0, 1.0, 0.0]);
        let q = p(1.0, 2.0, 3.0);
        let x = StateX::new(0.3, -1.2, 0.7, 2.0).unwrap();
        let back = to_x(&to_y(&x, &q), &q);
        assert!(close(&back.to_array(), &x.to_array(), 1e-14));
    }

    #[test]
    fn drift_x_examples() {
        let q = p(1.0, 1.0, 1.0);
        assert_eq!(drift_x(&StateX::new(1.0, 0.0, 0.0, 0.0).unwrap(), &q), [-1.0, 0.0, 0.0, 0.0]);
        for q in [p(1.0, 1.0, 1.0), p(2.0, 4.0, 1.0), p(0.7, -3.0, 2.5)] {
            let (a, b) = fixed_points(&q);
            assert_eq!(drift_x(&a, &q), [0.0; 4]);
            assert!(close(&drift_x(&b, &q), &[0.0; 4], 1e-15));
        }
    }

    #[test]
    fn drift_y_examples() {
        let q = Params::unit();
        assert_eq!(drift_y(&StateY::new(1.0, 0.0, 0.0, 0.0).unwrap(), &q), [0.0; 4]);
        let x = StateX::new(0.5, 0.5, 0.5, 0.5).unwrap();
        let lhs = drift_y(&to_y(&x, &q), &q);
        let rhs = mat_vec(&coord_matrix(&q), &drift_x(&x, &q));
        assert!(close(&lhs, &rhs, 1e-15));
    }

    #[test]
    fn drift_reduced_examples() {
        let q = Params::unit();
        let s = ReducedState::new(0.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(drift_reduced(&s, &q), [-1.0, 0.0]);
        let s = ReducedState::new(20.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        let d = drift_reduced(&s, &q);
        assert!(d[0].abs() < 5e-18 && d[1].abs() < 5e-18);
        assert!(ReducedState::new(-1.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn fixed_point_example() {
        let (_, s) = fixed_points(&p(2.0, 4.0, 1.0));
        assert_eq!(s.to_array(), [2.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn linearization_origin() {
        let l = linearize(&p(2.5, 1.0, 3.0), FixedPoint::Origin);
        assert_eq!(l.eigenvalues, [-2.5; 4]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.jacobian[i][j], if i == j { -2.5 } else { 0.0 });
            }
        }
    }

    #[test]
    fn linearization_saddle() {
        let l = linearize(&Params::unit(), FixedPoint::Saddle);
        assert_eq!(l.eigenvalues, [-1.0, -1.0, 1.0, 1.0]);
        let q = p(2.0, 3.0, 5.0);
        let l = linearize(&q, FixedPoint::Saddle);
        let expected = [
            [0.0, 0.0, 2.0 * 3.0 / 5.0, 0.0],
            [0.0, 0.0, 0.0, 2.0 * 3.0 / 5.0],
            [2.0 * 5.0 / 3.0, 0.0, 0.0, 0.0],
            [0.0, 2.0 * 5.0 / 3.0, 0.0, 0.0],
        ];
        for i in 0..4 {
            assert!(close(&l.jacobian[i], &expected[i], 1e-15));
        }
        assert!(l.max_residual() <= 1e-12);
        for v in l.normalized_eigenvectors() {
            let n: f64 = v.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-15);
        }
    }
}
