//! Time averages and occupation histograms along long trajectories.
//!
//! Recorded states are weighted by the time until the next record (left
//! Riemann sums), so thinned records still integrate correctly.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::integrate::{RecordState, TrajectoryRecord, Verdict};
use crate::stats::compensated_sum;
use crate::{Error, Result};

/// Axis-aligned rectangle in the `(y1, y3)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub y1_min: f64,
    pub y1_max: f64,
    pub y3_min: f64,
    pub y3_max: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window::square(4.0)
    }
}

impl Window {
    /// `[-a, a]^2`.
    pub fn square(a: f64) -> Self {
        Window { y1_min: -a, y1_max: a, y3_min: -a, y3_max: a }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.y1_min, self.y1_max, self.y3_min, self.y3_max].iter().all(|v| v.is_finite())
            && self.y1_max > self.y1_min
            && self.y3_max > self.y3_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad window {self:?}")))
        }
    }

    pub fn contains_rect(&self, other: &Window) -> bool {
        other.y1_min >= self.y1_min && other.y1_max <= self.y1_max && other.y3_min >= self.y3_min && other.y3_max <= self.y3_max
    }

    /// Parse `"y1_min,y1_max,y3_min,y3_max"`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad window '{s}'"))))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(Error::Parse(format!("window needs four numbers, got '{s}'")));
        }
        let w = Window { y1_min: v[0], y1_max: v[1], y3_min: v[2], y3_max: v[3] };
        w.validate()?;
        Ok(w)
    }
}

/// Normalized time fractions per bin. `mass[i1 * n3 + i3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub window: Window,
    pub bins: (usize, usize),
    pub mass: Vec<f64>,
    pub total_time: f64,
    pub outside_mass: f64,
}

impl OccupationHistogram {
    pub fn widths(&self) -> (f64, f64) {
        let w = &self.window;
        ((w.y1_max - w.y1_min) / self.bins.0 as f64, (w.y3_max - w.y3_min) / self.bins.1 as f64)
    }

    /// Bin `(i1, i3)` as a rectangle.
    pub fn bin_rect(&self, i1: usize, i3: usize) -> Window {
        let (a, b) = self.widths();
        let w = &self.window;
        Window {
            y1_min: w.y1_min + i1 as f64 * a,
            y1_max: w.y1_min + (i1 + 1) as f64 * a,
            y3_min: w.y3_min + i3 as f64 * b,
            y3_max: w.y3_min + (i3 + 1) as f64 * b,
        }
    }

    pub fn bin_of(&self, y1: f64, y3: f64) -> Option<(usize, usize)> {
        let (a, b) = self.widths();
        let w = &self.window;
        let f1 = ((y1 - w.y1_min) / a).floor();
        let f3 = ((y3 - w.y3_min) / b).floor();
        let ok = f1 >= 0.0 && f3 >= 0.0 && (f1 as usize) < self.bins.0 && (f3 as usize) < self.bins.1;
        ok.then_some((f1 as usize, f3 as usize))
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.mass.iter().copied()) + self.outside_mass
    }

    fn same_geometry(&self, other: &Self) -> Result<()> {
        if self.window != other.window || self.bins != other.bins {
            return Err(Error::Geometry("histograms have different windows or bins".into()));
        }
        Ok(())
    }

    /// Time-weighted merge of two histograms over the same geometry.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        self.same_geometry(other)?;
        let t = self.total_time + other.total_time;
        let (a, b) = (self.total_time / t, other.total_time / t);
        Ok(OccupationHistogram {
            window: self.window,
            bins: self.bins,
            mass: self.mass.iter().zip(&other.mass).map(|(x, y)| a * x + b * y).collect(),
            total_time: t,
            outside_mass: a * self.outside_mass + b * other.outside_mass,
        })
    }

    /// Mirror image under `y3 -> -y3`; needs a window symmetric in `y3`.
    pub fn flip_y3(&self) -> Result<Self> {
        if self.window.y3_min != -self.window.y3_max {
            return Err(Error::Geometry("flip needs a window symmetric in y3".into()));
        }
        let (n1, n3) = self.bins;
        let mut mass = vec![0.0; n1 * n3];
        for i in 0..n1 {
            for j in 0..n3 {
                mass[i * n3 + j] = self.mass[i * n3 + (n3 - 1 - j)];
            }
        }
        Ok(OccupationHistogram { mass, ..self.clone() })
    }

    /// CSV `y1_lo,y1_hi,y3_lo,y3_hi,mass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y1_lo,y1_hi,y3_lo,y3_hi,mass\n");
        for i in 0..self.bins.0 {
            for j in 0..self.bins.1 {
                let r = self.bin_rect(i, j);
                let _ = writeln!(out, "{},{},{},{},{}", r.y1_min, r.y1_max, r.y3_min, r.y3_max, self.mass[i * self.bins.1 + j]);
            }
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv). Mass outside the window is
    /// recovered as `1 - sum(mass)`; `total_time` is not stored and reads as 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if k == 0 {
                if line.trim() != "y1_lo,y1_hi,y3_lo,y3_hi,mass" {
                    return Err(Error::Parse("histogram csv header mismatch".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("histogram csv line {}", k + 1))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::Parse(format!("histogram csv line {} needs 5 fields", k + 1)));
            }
            rows.push(v);
        }
        let first = rows.first().ok_or_else(|| Error::Parse("empty histogram csv".into()))?;
        let n3 = rows.iter().take_while(|r| r[0] == first[0]).count();
        if n3 == 0 || rows.len() % n3 != 0 {
            return Err(Error::Parse("histogram csv is not a full grid".into()));
        }
        let n1 = rows.len() / n3;
        let last = rows.last().unwrap();
        let window = Window { y1_min: first[0], y1_max: last[1], y3_min: first[2], y3_max: last[3] };
        window.validate()?;
        let mass: Vec<f64> = rows.iter().map(|r| r[4]).collect();
        let outside_mass = (1.0 - compensated_sum(mass.iter().copied())).max(0.0);
        Ok(OccupationHistogram { window, bins: (n1, n3), mass, total_time: 0.0, outside_mass })
    }

    /// Writes `histogram.csv`, `histogram.json` and `plot_histogram.py`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        crate::io::write_text(dir.join("histogram.csv"), &self.to_csv())?;
        let meta = serde_json::json!({
            "window": self.window,
            "bins": [self.bins.0, self.bins.1],
            "total_time": self.total_time,
            "outside_mass": self.outside_mass,
            "run": extra,
        });
        crate::io::write_json(dir.join("histogram.json"), &meta)?;
        crate::io::write_text(dir.join("plot_histogram.py"), PLOT_SCRIPT)
    }
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Intensity plot of an occupation histogram over the (y1, y3) plane."""
import csv, os
import numpy as np
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
rows = [tuple(map(float, r)) for r in list(csv.reader(open(os.path.join(here, "histogram.csv"))))[1:]]
y1 = sorted({r[0] for r in rows}); y3 = sorted({r[2] for r in rows})
m = np.zeros((len(y3), len(y1)))
for a, b, c, d, mass in rows:
    m[y3.index(c), y1.index(a)] = mass / ((b - a) * (d - c))
ext = [rows[0][0], rows[-1][1], rows[0][2], rows[-1][3]]
plt.imshow(m, origin="lower", extent=ext, cmap="viridis", aspect="equal")
plt.colorbar(label="density")
plt.xlabel("y1"); plt.ylabel("y3")
plt.savefig(os.path.join(here, "histogram.png"), dpi=150)
"#;

/// Left-Riemann weights of records on `[burn_in, T]`, `T` the last time.
fn weights(times: &[f64], burn_in: f64) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 2 {
        return Err(Error::Config("trajectory too short to average".into()));
    }
    let horizon = times[n - 1];
    if !(burn_in >= 0.0 && burn_in < horizon) {
        return Err(Error::Config(format!("burn_in {burn_in} must lie in [0, {horizon})")));
    }
    Ok((0..n)
        .map(|k| {
            if k + 1 == n {
                return 0.0;
            }
            let a = times[k].max(burn_in);
            let b = times[k + 1];
            (b - a).max(0.0)
        })
        .collect())
}

fn check_survived<S>(traj: &TrajectoryRecord<S>) -> Result<()> {
    match traj.verdict {
        Verdict::Exploded { time } => Err(Error::Exploded { time }),
        Verdict::Survived => Ok(()),
    }
}

/// `(1 / (T - burn_in)) * sum f(state) dt` over records after `burn_in`.
pub fn time_average<S: RecordState>(traj: &TrajectoryRecord<S>, f: impl Fn(&S) -> f64, burn_in: f64) -> Result<f64> {
    check_survived(traj)?;
    let w = weights(&traj.times, burn_in)?;
    let total = compensated_sum(w.iter().copied());
    let s = compensated_sum(traj.states.iter().zip(&w).filter(|(_, &w)| w > 0.0).map(|(s, w)| f(s) * w));
    Ok(s / total)
}

/// Occupation histogram of `project(state)` over `window`.
pub fn occupation_measure_by<S: RecordState>(
    traj: &TrajectoryRecord<S>,
    project: impl Fn(&S) -> (f64, f64),
    window: Window,
    bins: (usize, usize),
    burn_in: f64,
) -> Result<OccupationHistogram> {
    check_survived(traj)?;
    window.validate()?;
    if bins.0 == 0 || bins.1 == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let w = weights(&traj.times, burn_in)?;
    let mut h = OccupationHistogram { window, bins, mass: vec![0.0; bins.0 * bins.1], total_time: 0.0, outside_mass: 0.0 };
    let mut raw = vec![0.0; bins.0 * bins.1];
    let mut comp = vec![0.0; bins.0 * bins.1];
    let mut outside = 0.0;
    for (s, &wk) in traj.states.iter().zip(&w) {
        if wk == 0.0 {
            continue;
        }
        let (a, b) = project(s);
        match h.bin_of(a, b) {
            Some((i, j)) => {
                // Kahan per bin; long runs add ~1e6 small weights.
                let k = i * bins.1 + j;
                let y = wk - comp[k];
                let t = raw[k] + y;
                comp[k] = (t - raw[k]) - y;
                raw[k] = t;
            }
            None => outside += wk,
        }
    }
    let total = compensated_sum(w.iter().copied());
    h.mass = raw.iter().map(|m| m / total).collect();
    h.outside_mass = outside / total;
    h.total_time = total;
    Ok(h)
}

/// Occupation histogram of a complex trajectory, `(Re z, Im z) = (y1, y3)`.
pub fn occupation_measure(traj: &TrajectoryRecord<C>, window: Window, bins: (usize, usize), burn_in: f64) -> Result<OccupationHistogram> {
    occupation_measure_by(traj, |z| (z.re, z.im), window, bins, burn_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureDistance {
    pub l1: f64,
    pub tv: f64,
}

/// L1 and total variation distance, counting the outside mass as one more bin.
pub fn compare_measures(a: &OccupationHistogram, b: &OccupationHistogram) -> Result<MeasureDistance> {
    a.same_geometry(b)?;
    let l1 = compensated_sum(a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs())) + (a.outside_mass - b.outside_mass).abs();
    Ok(MeasureDistance { l1, tv: l1 / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub f_id: String,
    pub time_average: f64,
    pub reference: f64,
    pub burn_in: f64,
    pub horizon: f64,
}
