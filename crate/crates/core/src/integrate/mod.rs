//! Time-steppers with blow-up detection.
//!
//! Three methods are available:
//!
//! * [`Method::Euler`]: explicit Euler, or Euler-Maruyama with noise.
//! * [`Method::Rk4`]: classical Runge-Kutta, deterministic runs only.
//! * [`Method::ExactFlow`]: advances the noise-free `y`-system with its
//!   closed-form flow (see `flow.rs`); with noise this is a Lie splitting,
//!   exact drift flow followed by the additive increment. It never produces
//!   the spurious overflow that explicit Euler shows on large excursions
//!   of a quadratic drift, which matters for long or many-path runs.
//!
//! Every run draws exactly two standard normals per step from its
//! [`RngStream`], whatever the noise mode, so streams stay aligned.

mod flow;
mod oracle;

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::dynamics::{drift_x_array, drift_y_array, to_x_array, to_y_array, Params, StateX, StateY};
use crate::rng::RngStream;
use crate::{Error, Result};

pub(crate) use flow::{advance, sup, Advance, FlowCoeffs};
pub use oracle::{real_axis_oracle, real_axis_threshold, riccati_oracle, RiccatiOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Euler,
    Rk4,
    ExactFlow,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "exact-flow" => Ok(Method::ExactFlow),
            _ => Err(Error::Parse(format!("unknown method '{s}' (euler, rk4, exact-flow)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub blowup_radius: f64,
    pub method: Method,
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: 1e-3, t_max: 20.0, blowup_radius: 1e6, method: Method::Euler, record_stride: 1 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > self.dt) {
            return Err(Error::Config(format!("t_max must exceed dt, got {}", self.t_max)));
        }
        if !(self.blowup_radius > 0.0) {
            return Err(Error::Config("blowup_radius must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the last one is shortened to land on `t_max`.
    pub fn n_steps(&self) -> usize {
        let q = self.t_max / self.dt;
        let r = q.round();
        if (q - r).abs() <= 1e-9 * q {
            r as usize
        } else {
            q.ceil() as usize
        }
    }

    pub(crate) fn step_len(&self, i: usize, n: usize) -> f64 {
        if i + 1 == n {
            self.t_max - (n - 1) as f64 * self.dt
        } else {
            self.dt
        }
    }
}

/// Coordinate frame of recorded states. `Z` is the complex `(y1, y3)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    X,
    Y,
    Z,
}

impl Frame {
    pub fn tag(&self) -> &'static str {
        match self {
            Frame::X => "x",
            Frame::Y => "y",
            Frame::Z => "z",
        }
    }
}

/// Initial condition with its frame declared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    X(StateX),
    Y(StateY),
}

impl InitialState {
    pub fn frame(&self) -> Frame {
        match self {
            InitialState::X(_) => Frame::X,
            InitialState::Y(_) => Frame::Y,
        }
    }
    pub fn to_array(&self) -> [f64; 4] {
        match self {
            InitialState::X(s) => s.to_array(),
            InitialState::Y(s) => s.to_array(),
        }
    }
    fn to_y(self, p: &Params) -> [f64; 4] {
        match self {
            InitialState::X(s) => to_y_array(s.to_array(), p),
            InitialState::Y(s) => s.to_array(),
        }
    }
}

impl From<StateX> for InitialState {
    fn from(s: StateX) -> Self {
        InitialState::X(s)
    }
}
impl From<StateY> for InitialState {
    fn from(s: StateY) -> Self {
        InitialState::Y(s)
    }
}

/// Brownian forcing. Matrices are 4x2: row `i` is the coordinate, column
/// `k` the Brownian component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum NoiseConfig {
    #[default]
    None,
    /// `sigma dB` on `z` and `(beta/alpha) sigma dB` on `w`.
    MainSde { sigma: f64 },
    /// Unit real noise on `Im z`.
    ImZ,
    /// Matrix acting in `y`-coordinates.
    General { sigma_matrix: [[f64; 2]; 4] },
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseConfig::MainSde { sigma } if !(sigma.is_finite() && *sigma != 0.0) => {
                Err(Error::Config(format!("main-sde sigma must be nonzero, got {sigma}")))
            }
            NoiseConfig::General { sigma_matrix } if sigma_matrix.iter().flatten().any(|v| !v.is_finite()) => {
                Err(Error::Config("general sigma matrix must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseConfig::None)
    }

    /// Noise matrix in `frame` (`X` or `Y`); `None` for no noise.
    pub fn matrix(&self, frame: Frame, p: &Params) -> Option<[[f64; 2]; 4]> {
        let b_over_a = p.beta() / p.alpha();
        let m = match (self, frame) {
            (NoiseConfig::None, _) => return None,
            (NoiseConfig::MainSde { sigma }, Frame::X) => {
                let s = *sigma;
                [[s, 0.0], [0.0, s], [b_over_a * s, 0.0], [0.0, b_over_a * s]]
            }
            (NoiseConfig::MainSde { sigma }, _) => [[*sigma, 0.0], [0.0, 0.0], [0.0, *sigma], [0.0, 0.0]],
            (NoiseConfig::ImZ, Frame::X) => [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            (NoiseConfig::ImZ, _) => [[0.0, 0.0], [0.0, 0.0], [0.5, 0.0], [0.5, 0.0]],
            (NoiseConfig::General { sigma_matrix }, Frame::X) => {
                let g = sigma_matrix;
                let col = |k: usize| to_x_array([g[0][k], g[1][k], g[2][k], g[3][k]], p);
                let (c0, c1) = (col(0), col(1));
                [[c0[0], c1[0]], [c0[1], c1[1]], [c0[2], c1[2]], [c0[3], c1[3]]]
            }
            (NoiseConfig::General { sigma_matrix }, _) => *sigma_matrix,
        };
        Some(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Survived,
    /// First time the sup-norm reached the blow-up radius, or a step overflowed.
    Exploded { time: f64 },
}

impl Verdict {
    pub fn exploded(&self) -> bool {
        matches!(self, Verdict::Exploded { .. })
    }
    pub fn explosion_time(&self) -> Option<f64> {
        match self {
            Verdict::Exploded { time } => Some(*time),
            Verdict::Survived => None,
        }
    }
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Survived => "survived",
            Verdict::Exploded { .. } => "exploded",
        }
    }
}

/// A recordable state: four real coordinates or one complex number.
pub trait RecordState: Copy {
    fn columns(&self) -> [Option<f64>; 4];
}

impl RecordState for [f64; 4] {
    fn columns(&self) -> [Option<f64>; 4] {
        self.map(Some)
    }
}

impl RecordState for C {
    fn columns(&self) -> [Option<f64>; 4] {
        [Some(self.re), Some(self.im), None, None]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord<S = [f64; 4]> {
    pub frame: Frame,
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub verdict: Verdict,
}

impl<S: RecordState> TrajectoryRecord<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn last_state(&self) -> Option<&S> {
        self.states.last()
    }

    /// CSV with header `t,frame,c1,c2,c3,c4,verdict`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,frame,c1,c2,c3,c4,verdict\n");
        let n = self.times.len();
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let _ = write!(out, "{t},{}", self.frame.tag());
            for c in s.columns() {
                match c {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push(',');
            if i + 1 == n {
                out.push_str(self.verdict.label());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_csv())
    }
}

fn sup4(s: &[f64; 4]) -> f64 {
    // NaN propagates through f64::max only partially; fold it explicitly.
    let mut m: f64 = 0.0;
    for v in s {
        if v.is_nan() {
            return f64::NAN;
        }
        m = m.max(v.abs());
    }
    m
}

/// Generic stepping loop. `step` advances the internal state in place and
/// may report an explosion offset into the step.
fn run<I: Copy, S, F, P, N>(
    cfg: &IntegratorConfig,
    record: bool,
    frame: Frame,
    s0: I,
    mut step: F,
    project: P,
    norm: N,
) -> Result<TrajectoryRecord<S>>
where
    F: FnMut(&mut I, f64, f64) -> Option<f64>,
    P: Fn(&I) -> S,
    N: Fn(&I) -> f64,
{
    cfg.validate()?;
    let n0 = norm(&s0);
    if !(n0 < cfg.blowup_radius) {
        return Err(Error::Config(format!(
            "blowup_radius {} must exceed the initial norm {n0}",
            cfg.blowup_radius
        )));
    }
    let n = cfg.n_steps();
    let cap = if record { n / cfg.record_stride + 2 } else { 0 };
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    if record {
        times.push(0.0);
        states.push(project(&s0));
    }
    let mut s = s0;
    for i in 0..n {
        let t = i as f64 * cfg.dt;
        let h = cfg.step_len(i, n);
        let t1 = if i + 1 == n { cfg.t_max } else { (i + 1) as f64 * cfg.dt };
        let hit = match step(&mut s, t, h) {
            Some(tau) => Some((t + tau).min(t1)),
            None if !(norm(&s) < cfg.blowup_radius) => Some(t1),
            None => None,
        };
        if let Some(time) = hit {
            if record {
                times.push(time);
                states.push(project(&s));
            }
            return Ok(TrajectoryRecord { frame, times, states, verdict: Verdict::Exploded { time } });
        }
        if record && ((i + 1) % cfg.record_stride == 0 || i + 1 == n) {
            times.push(t1);
            states.push(project(&s));
        }
    }
    Ok(TrajectoryRecord { frame, times, states, verdict: Verdict::Survived })
}

type Drift = fn([f64; 4], &Params) -> [f64; 4];

fn drift_for(frame: Frame) -> Drift {
    match frame {
        Frame::X => drift_x_array,
        _ => drift_y_array,
    }
}

#[inline]
fn axpy(a: [f64; 4], s: f64, b: [f64; 4]) -> [f64; 4] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]]
}

fn rk4_step(y: [f64; 4], p: &Params, h: f64, f: Drift) -> [f64; 4] {
    let k1 = f(y, p);
    let k2 = f(axpy(y, h / 2.0, k1), p);
    let k3 = f(axpy(y, h / 2.0, k2), p);
    let k4 = f(axpy(y, h, k3), p);
    [0, 1, 2, 3].map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Internal state of the exact-flow method: `z = y1 + i y3`, `w = y2 + i y4`.
#[derive(Clone, Copy)]
struct Zw {
    z: C,
    w: C,
}

impl Zw {
    fn from_y(y: [f64; 4]) -> Self {
        Zw { z: C::new(y[0], y[2]), w: C::new(y[1], y[3]) }
    }
    fn y(&self) -> [f64; 4] {
        [self.z.re, self.w.re, self.z.im, self.w.im]
    }
    fn sup(&self) -> f64 {
        sup4(&self.y())
    }
}

fn exact_flow_run(
    x0: InitialState,
    p: &Params,
    cfg: &IntegratorConfig,
    noise_y: Option<[[f64; 2]; 4]>,
    rng: Option<RngStream>,
    record: bool,
) -> Result<TrajectoryRecord> {
    let frame = x0.frame();
    let coeffs = FlowCoeffs::new(p, cfg.dt);
    let sq = cfg.dt.sqrt();
    let radius = cfg.blowup_radius;
    let mut src = rng.map(|r| r.normals());
    let pp = *p;
    let step = move |s: &mut Zw, _t: f64, h: f64| {
        let c = if h == coeffs.h { coeffs } else { FlowCoeffs::new(&pp, h) };
        let xi = src.as_mut().map(|g| g.pair());
        if let Advance::Exploded(tau) = advance(&mut s.z, &mut s.w, &c, &pp, radius) {
            return Some(tau);
        }
        if let (Some(g), Some((a, b))) = (noise_y.as_ref(), xi) {
            let q = if h == coeffs.h { sq } else { h.sqrt() };
            let d = [0, 1, 2, 3].map(|i| (g[i][0] * a + g[i][1] * b) * q);
            s.z += C::new(d[0], d[2]);
            s.w += C::new(d[1], d[3]);
        }
        None
    };
    let s0 = Zw::from_y(x0.to_y(p));
    match frame {
        Frame::X => run(cfg, record, frame, s0, step, |s| to_x_array(s.y(), &pp), Zw::sup),
        _ => run(cfg, record, frame, s0, step, Zw::y, Zw::sup),
    }
}

fn ode_run(x0: InitialState, p: &Params, cfg: &IntegratorConfig, record: bool) -> Result<TrajectoryRecord> {
    let frame = x0.frame();
    let f = drift_for(frame);
    let pp = *p;
    match cfg.method {
        Method::Euler => run(
            cfg,
            record,
            frame,
            x0.to_array(),
            |s: &mut [f64; 4], _t, h| {
                *s = axpy(*s, h, f(*s, &pp));
                None
            },
            |s| *s,
            sup4,
        ),
        Method::Rk4 => run(
            cfg,
            record,
            frame,
            x0.to_array(),
            |s: &mut [f64; 4], _t, h| {
                *s = rk4_step(*s, &pp, h, f);
                None
            },
            |s| *s,
            sup4,
        ),
        Method::ExactFlow => exact_flow_run(x0, p, cfg, None, None, record),
    }
}

fn sde_run(
    x0: InitialState,
    p: &Params,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    rng: RngStream,
    record: bool,
) -> Result<TrajectoryRecord> {
    noise.validate()?;
    let frame = x0.frame();
    let Some(g) = noise.matrix(frame, p) else {
        return Err(Error::Config("integrate_sde needs a noise mode other than none".into()));
    };
    match cfg.method {
        Method::Rk4 => Err(Error::Config("rk4 is deterministic only; use euler or exact-flow with noise".into())),
        Method::ExactFlow => exact_flow_run(x0, p, cfg, noise.matrix(Frame::Y, p), Some(rng), record),
        Method::Euler => {
            let f = drift_for(frame);
            let pp = *p;
            let sq = cfg.dt.sqrt();
            let dt = cfg.dt;
            let mut src = rng.normals();
            run(
                cfg,
                record,
                frame,
                x0.to_array(),
                move |s: &mut [f64; 4], _t, h| {
                    let (a, b) = src.pair();
                    let q = if h == dt { sq } else { h.sqrt() };
                    let d = f(*s, &pp);
                    for i in 0..4 {
                        s[i] += h * d[i] + (g[i][0] * a + g[i][1] * b) * q;
                    }
                    None
                },
                |s| *s,
                sup4,
            )
        }
    }
}

/// Deterministic run of the four-dimensional system.
pub fn integrate_ode(x0: impl Into<InitialState>, p: &Params, cfg: &IntegratorConfig) -> Result<TrajectoryRecord> {
    ode_run(x0.into(), p, cfg, true)
}

/// Verdict only; nothing is recorded.
pub fn ode_verdict(x0: impl Into<InitialState>, p: &Params, cfg: &IntegratorConfig) -> Result<Verdict> {
    Ok(ode_run(x0.into(), p, cfg, false)?.verdict)
}

/// Stochastic run with `noise`; Euler-Maruyama for [`Method::Euler`],
/// exact-flow splitting for [`Method::ExactFlow`].
pub fn integrate_sde(
    x0: impl Into<InitialState>,
    p: &Params,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    rng: RngStream,
) -> Result<TrajectoryRecord> {
    sde_run(x0.into(), p, cfg, noise, rng, true)
}

/// Verdict only; nothing is recorded.
pub fn sde_verdict(
    x0: impl Into<InitialState>,
    p: &Params,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    rng: RngStream,
) -> Result<Verdict> {
    Ok(sde_run(x0.into(), p, cfg, noise, rng, false)?.verdict)
}

/// One-step map of the forced complex equation
/// `dz = (-nu z + beta z^2 - beta w0^2 exp(-2 nu t)) dt + sigma dB`.
///
/// `w` carries `w0 exp(-nu t)`; under Euler the forcing is evaluated from
/// the closed form at the left endpoint.
#[derive(Debug, Clone)]
pub(crate) struct ComplexStepper {
    p: Params,
    sigma: f64,
    method: Method,
    w0sq: C,
    coeffs: FlowCoeffs,
    dt: f64,
    sq: f64,
    radius: f64,
}

impl ComplexStepper {
    pub fn new(p: &Params, sigma: f64, w0: C, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if !(sigma.is_finite() && sigma != 0.0) {
            return Err(Error::Config(format!("sigma must be nonzero, got {sigma}")));
        }
        if cfg.method == Method::Rk4 {
            return Err(Error::Config("rk4 is deterministic only; use euler or exact-flow with noise".into()));
        }
        Ok(ComplexStepper {
            p: *p,
            sigma,
            method: cfg.method,
            w0sq: w0 * w0,
            coeffs: FlowCoeffs::new(p, cfg.dt),
            dt: cfg.dt,
            sq: cfg.dt.sqrt(),
            radius: cfg.blowup_radius,
        })
    }

    #[inline]
    pub fn step(&self, z: &mut C, w: &mut C, t: f64, h: f64, xi: (f64, f64)) -> Option<f64> {
        let q = if h == self.dt { self.sq } else { h.sqrt() };
        match self.method {
            Method::ExactFlow => {
                let c = if h == self.coeffs.h { self.coeffs } else { FlowCoeffs::new(&self.p, h) };
                if let Advance::Exploded(tau) = advance(z, w, &c, &self.p, self.radius) {
                    return Some(tau);
                }
            }
            _ => {
                let (nu, beta) = (self.p.nu(), self.p.beta());
                let mut d = -nu * *z + beta * (*z * *z);
                if self.w0sq != C::new(0.0, 0.0) {
                    d -= beta * self.w0sq * (-2.0 * nu * t).exp();
                    *w *= (-nu * h).exp();
                }
                *z += h * d;
            }
        }
        *z += C::new(self.sigma * xi.0 * q, self.sigma * xi.1 * q);
        None
    }
}

fn complex_run(
    z0: C,
    w0: C,
    p: &Params,
    sigma: f64,
    cfg: &IntegratorConfig,
    rng: RngStream,
    record: bool,
) -> Result<TrajectoryRecord<C>> {
    if !(z0.re.is_finite() && z0.im.is_finite() && w0.re.is_finite() && w0.im.is_finite()) {
        return Err(Error::Config("initial values must be finite".into()));
    }
    let stepper = ComplexStepper::new(p, sigma, w0, cfg)?;
    let mut src = rng.normals();
    run(
        cfg,
        record,
        Frame::Z,
        (z0, w0),
        move |s: &mut (C, C), t, h| {
            let xi = src.pair();
            stepper.step(&mut s.0, &mut s.1, t, h, xi)
        },
        |s| s.0,
        |s| if s.0.re.is_nan() || s.0.im.is_nan() { f64::NAN } else { sup(s.0) },
    )
}

/// The forced complex equation started at `(z0, w0)`.
pub fn integrate_ztilde(
    z0: C,
    w0: C,
    p: &Params,
    sigma: f64,
    cfg: &IntegratorConfig,
    rng: RngStream,
) -> Result<TrajectoryRecord<C>> {
    complex_run(z0, w0, p, sigma, cfg, rng, true)
}

/// The autonomous complex equation `dz = (-nu z + beta z^2) dt + sigma dB`.
pub fn integrate_z(z0: C, p: &Params, sigma: f64, cfg: &IntegratorConfig, rng: RngStream) -> Result<TrajectoryRecord<C>> {
    complex_run(z0, C::new(0.0, 0.0), p, sigma, cfg, rng, true)
}
