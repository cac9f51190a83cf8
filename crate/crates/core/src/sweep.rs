//! Grids of initial conditions classified by blow-up.
//!
//! Cells are numbered row-major: the first varying axis is the slow index.
//! Stochastic cell `c` with replicate `r` uses stream `(seed, c * reps + r)`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Params, StateX, StateY};
use crate::integrate::{ode_verdict, sde_verdict, Frame, InitialState, IntegratorConfig, NoiseConfig, Verdict};
use crate::rng::RngStream;
use crate::{Error, Result};

/// One varying coordinate: `index` in `1..=4`, values `min, min + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub index: usize,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }
    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }
    pub fn values(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub frame: Frame,
    /// Two `(index, value)` pairs.
    pub fixed: [(usize, f64); 2],
    pub vary: [Axis; 2],
}

impl GridSpec {
    pub fn new(frame: Frame, fixed: [(usize, f64); 2], vary: [Axis; 2]) -> Result<Self> {
        let g = GridSpec { frame, fixed, vary };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame == Frame::Z {
            return Err(Error::Config("grid frame must be x or y".into()));
        }
        let mut seen = [false; 4];
        let idx = self.fixed.iter().map(|f| f.0).chain(self.vary.iter().map(|a| a.index));
        for i in idx {
            if !(1..=4).contains(&i) || seen[i - 1] {
                return Err(Error::Config("fixed and varying indices must partition {1,2,3,4}".into()));
            }
            seen[i - 1] = true;
        }
        for a in &self.vary {
            if !(a.step.is_finite() && a.step > 0.0) || !(a.max >= a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Config(format!("bad axis range for coordinate {}", a.index)));
            }
        }
        if self.fixed.iter().any(|f| !f.1.is_finite()) {
            return Err(Error::Config("fixed values must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.vary[0].count(), self.vary[1].count())
    }

    pub fn n_cells(&self) -> usize {
        let (a, b) = self.dims();
        a * b
    }

    /// Varying-axis values of a cell.
    pub fn cell_values(&self, cell: usize) -> (f64, f64) {
        let n2 = self.vary[1].count();
        (self.vary[0].value(cell / n2), self.vary[1].value(cell % n2))
    }

    pub fn initial_state(&self, cell: usize) -> Result<InitialState> {
        let mut a = [0.0; 4];
        for (i, v) in self.fixed {
            a[i - 1] = v;
        }
        let (v1, v2) = self.cell_values(cell);
        a[self.vary[0].index - 1] = v1;
        a[self.vary[1].index - 1] = v2;
        Ok(match self.frame {
            Frame::X => InitialState::X(StateX::from_array(a)?),
            _ => InitialState::Y(StateY::from_array(a)?),
        })
    }

    /// Parse `"y3=0.5,y4=0"`.
    pub fn parse_fixed(s: &str) -> Result<(Frame, [(usize, f64); 2])> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("expected two fixed coordinates, got '{s}'")));
        }
        let mut out = [(0, 0.0); 2];
        let mut frame = None;
        for (slot, part) in out.iter_mut().zip(&parts) {
            let (name, val) = part.split_once('=').ok_or_else(|| Error::Parse(format!("expected name=value, got '{part}'")))?;
            let (f, i) = parse_coord(name)?;
            if frame.is_some_and(|g| g != f) {
                return Err(Error::Parse("mixed x and y coordinates".into()));
            }
            frame = Some(f);
            *slot = (i, parse_f64(val)?);
        }
        Ok((frame.unwrap_or(Frame::Y), out))
    }

    /// Parse `"y1=-3:3:0.5"`.
    pub fn parse_axis(s: &str) -> Result<(Frame, Axis)> {
        let (name, range) = s.split_once('=').ok_or_else(|| Error::Parse(format!("expected name=min:max:step, got '{s}'")))?;
        let (frame, index) = parse_coord(name.trim())?;
        let r: Vec<&str> = range.split(':').collect();
        if r.len() != 3 {
            return Err(Error::Parse(format!("expected min:max:step, got '{range}'")));
        }
        Ok((frame, Axis { index, min: parse_f64(r[0])?, max: parse_f64(r[1])?, step: parse_f64(r[2])? }))
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("not a number: '{s}'")))
}

fn parse_coord(name: &str) -> Result<(Frame, usize)> {
    let mut ch = name.chars();
    let frame = match ch.next() {
        Some('x') => Frame::X,
        Some('y') => Frame::Y,
        _ => return Err(Error::Parse(format!("coordinate must be x1..x4 or y1..y4, got '{name}'"))),
    };
    match ch.as_str().parse::<usize>() {
        Ok(i) if (1..=4).contains(&i) => Ok((frame, i)),
        _ => Err(Error::Parse(format!("coordinate must be x1..x4 or y1..y4, got '{name}'"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cells {
    Verdicts { verdicts: Vec<Verdict> },
    Survival { fractions: Vec<f64>, reps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: GridSpec,
    pub params: Params,
    pub integrator: IntegratorConfig,
    pub noise: NoiseConfig,
    pub seed: Option<u64>,
    pub cells: Cells,
}

impl SweepResult {
    /// Survival indicator or fraction per cell.
    pub fn survival(&self) -> Vec<f64> {
        match &self.cells {
            Cells::Verdicts { verdicts } => verdicts.iter().map(|v| if v.exploded() { 0.0 } else { 1.0 }).collect(),
            Cells::Survival { fractions, .. } => fractions.clone(),
        }
    }

    pub fn min_survival(&self) -> f64 {
        self.survival().into_iter().fold(1.0, f64::min)
    }

    pub fn explosions(&self) -> usize {
        self.survival().iter().filter(|&&s| s < 1.0).count()
    }

    /// CSV `v1,v2,verdict_or_probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("v1,v2,verdict_or_probability\n");
        for c in 0..self.grid.n_cells() {
            let (a, b) = self.grid.cell_values(c);
            let _ = match &self.cells {
                Cells::Verdicts { verdicts } => writeln!(out, "{a},{b},{}", verdicts[c].label()),
                Cells::Survival { fractions, .. } => writeln!(out, "{a},{b},{}", fractions[c]),
            };
        }
        out
    }

    /// Writes `sweep.csv`, `sweep.json` and `plot_sweep.py` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        crate::io::write_text(dir.join("sweep.csv"), &self.to_csv())?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            grid: &'a GridSpec,
            params: &'a Params,
            integrator: &'a IntegratorConfig,
            noise: &'a NoiseConfig,
            seed: Option<u64>,
            reps: Option<usize>,
        }
        let reps = match &self.cells {
            Cells::Survival { reps, .. } => Some(*reps),
            _ => None,
        };
        crate::io::write_json(
            dir.join("sweep.json"),
            &Sidecar {
                grid: &self.grid,
                params: &self.params,
                integrator: &self.integrator,
                noise: &self.noise,
                seed: self.seed,
                reps,
            },
        )?;
        crate::io::write_text(dir.join("plot_sweep.py"), PLOT_SCRIPT)
    }
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Star/diamond map of a sweep: blue stars survive, red diamonds explode."""
import csv, json, sys, os
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
level = float(sys.argv[1]) if len(sys.argv) > 1 else 0.99
meta = json.load(open(os.path.join(here, "sweep.json")))
ok, bad = [], []
for row in csv.DictReader(open(os.path.join(here, "sweep.csv"))):
    v = row["verdict_or_probability"]
    good = v == "survived" if v in ("survived", "exploded") else float(v) >= level
    (ok if good else bad).append((float(row["v1"]), float(row["v2"])))
frame = meta["grid"]["frame"]
a, b = (ax["index"] for ax in meta["grid"]["vary"])
if ok:
    plt.scatter(*zip(*ok), marker="*", c="tab:blue", label="survived")
if bad:
    plt.scatter(*zip(*bad), marker="D", c="tab:red", label="exploded")
plt.xlabel(f"{frame}{a}(0)")
plt.ylabel(f"{frame}{b}(0)")
plt.legend()
plt.savefig(os.path.join(here, "sweep.png"), dpi=150)
"#;

/// One deterministic run per cell.
pub fn sweep_ode(g: &GridSpec, p: &Params, cfg: &IntegratorConfig) -> Result<SweepResult> {
    g.validate()?;
    let verdicts = (0..g.n_cells())
        .into_par_iter()
        .map(|c| ode_verdict(g.initial_state(c)?, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        grid: g.clone(),
        params: *p,
        integrator: *cfg,
        noise: NoiseConfig::None,
        seed: None,
        cells: Cells::Verdicts { verdicts },
    })
}

/// `reps` stochastic runs per cell; records the surviving fraction.
pub fn sweep_sde(
    g: &GridSpec,
    p: &Params,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    reps: usize,
    seed: u64,
) -> Result<SweepResult> {
    g.validate()?;
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let fractions = (0..g.n_cells())
        .into_par_iter()
        .map(|c| {
            let x0 = g.initial_state(c)?;
            let mut alive = 0usize;
            for r in 0..reps {
                let stream = RngStream::new(seed, (c * reps + r) as u64);
                if !sde_verdict(x0, p, cfg, noise, stream)?.exploded() {
                    alive += 1;
                }
            }
            Ok(alive as f64 / reps as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        grid: g.clone(),
        params: *p,
        integrator: *cfg,
        noise: *noise,
        seed: Some(seed),
        cells: Cells::Survival { fractions, reps },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCase {
    /// `y2(0) = 0`.
    A,
    /// `y4(0) = 0`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrediction {
    pub case: BoundaryCase,
    pub threshold: f64,
}

/// Closed-form sufficient explosion thresholds along the `y1(0)` axis:
/// `nu/beta` in case A and `(nu/beta + sqrt((nu/beta)^2 + 4 y2(0)^2)) / 2` in case B.
pub fn predicted_boundary(p: &Params, case: BoundaryCase, y2_0: Option<f64>) -> Result<BoundaryPrediction> {
    let r = p.nu() / p.beta();
    let threshold = match case {
        BoundaryCase::A => r,
        BoundaryCase::B => {
            let y2 = y2_0.ok_or_else(|| Error::Config("case B needs y2(0)".into()))?;
            0.5 * (r + (r * r + 4.0 * y2 * y2).sqrt())
        }
    };
    Ok(BoundaryPrediction { case, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Agreement {
    Deviation { max_deviation: f64 },
    NoCrossing,
}

/// First explosive `y1(0)` along each scan line, scanning `y1` upward.
/// Lines are indexed by the other varying axis.
pub fn empirical_thresholds(sr: &SweepResult) -> Result<Vec<Option<f64>>> {
    let g = &sr.grid;
    if g.frame != Frame::Y {
        return Err(Error::Config("boundary scans need a y-frame grid".into()));
    }
    let Cells::Verdicts { verdicts } = &sr.cells else {
        return Err(Error::Config("boundary scans need a deterministic sweep".into()));
    };
    let y1_axis = g
        .vary
        .iter()
        .position(|a| a.index == 1)
        .ok_or_else(|| Error::Config("sweep must vary y1(0)".into()))?;
    let (n1, n2) = g.dims();
    let (lines, along) = if y1_axis == 0 { (n2, n1) } else { (n1, n2) };
    Ok((0..lines)
        .map(|l| {
            (0..along).find_map(|k| {
                let cell = if y1_axis == 0 { k * n2 + l } else { l * n2 + k };
                verdicts[cell].exploded().then(|| g.vary[y1_axis].value(k))
            })
        })
        .collect())
}

/// Largest distance between the first explosive cell of each scan line and
/// the predicted threshold.
pub fn boundary_agreement(sr: &SweepResult, bp: &BoundaryPrediction) -> Result<Agreement> {
    let found: Vec<f64> = empirical_thresholds(sr)?.into_iter().flatten().collect();
    if found.is_empty() {
        return Ok(Agreement::NoCrossing);
    }
    let max_deviation = found.iter().map(|v| (v - bp.threshold).abs()).fold(0.0, f64::max);
    Ok(Agreement::Deviation { max_deviation })
}
