//! Stationary forward-Kolmogorov solver on a disk.
//!
//! The operator `L* f = -div(b f) + D1 f_11 + D3 f_33` (with `Dk = sigma_k^2 / 2`)
//! is discretized on a uniform grid masked to the disk. Advection is written
//! in flux form with face-averaged drift, which makes the assembled matrix the
//! exact transpose of the generator stencil on interior nodes. Nodes on the
//! staircase boundary carry Dirichlet rows.

pub mod sparse;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Params;
use crate::ergodic::{OccupationHistogram, Window};
use crate::stats::compensated_sum;
use crate::{Error, Result};

pub use sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// Uniform `n x n` grid on `[-half_width, half_width]^2`, masked to the disk
/// of radius `radius`. Node `(i, j)` sits at `(coord(i), coord(j))` and has
/// flat index `i * n + j`, `i` along `y1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeGrid {
    pub half_width: f64,
    pub radius: f64,
    pub n: usize,
    pub h: f64,
    pub mask: Vec<NodeKind>,
}

impl PdeGrid {
    pub fn new(n: usize, half_width: f64, radius: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::Config(format!("grid needs at least 5 nodes per axis, got {n}")));
        }
        if !(half_width > 0.0 && half_width.is_finite() && radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("bad grid extent half_width={half_width} radius={radius}")));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let mut g = PdeGrid { half_width, radius, n, h, mask: Vec::new() };
        let r2 = radius * radius * (1.0 + 1e-12);
        let inside = |i: isize, j: isize| -> bool {
            if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
                return false;
            }
            let (a, b) = (g.coord(i as usize), g.coord(j as usize));
            a * a + b * b <= r2
        };
        let mut mask = Vec::with_capacity(n * n);
        for i in 0..n as isize {
            for j in 0..n as isize {
                let kind = if !inside(i, j) {
                    NodeKind::Exterior
                } else if [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(di, dj)| inside(i + di, j + dj)) {
                    NodeKind::Interior
                } else {
                    NodeKind::Boundary
                };
                mask.push(kind);
            }
        }
        g.mask = mask;
        Ok(g)
    }

    /// The default computational domain: disk of radius 4 in `[-4, 4]^2`.
    pub fn disk(n: usize) -> Result<Self> {
        PdeGrid::new(n, 4.0, 4.0)
    }

    /// Symmetric about zero bit-for-bit: `coord(n-1-k) == -coord(k)`.
    pub fn coord(&self, k: usize) -> f64 {
        self.h * (k as f64 - (self.n - 1) as f64 / 2.0)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn kind(&self, i: usize, j: usize) -> NodeKind {
        self.mask[self.index(i, j)]
    }

    pub fn in_disk(&self, i: usize, j: usize) -> bool {
        self.kind(i, j) != NodeKind::Exterior
    }

    /// Index of the node mirrored in `y3`.
    pub fn flip(&self, idx: usize) -> usize {
        let (i, j) = (idx / self.n, idx % self.n);
        self.index(i, self.n - 1 - j)
    }

    /// Unknown numbering over in-disk nodes: `(node_of_unknown, unknown_of_node)`.
    fn numbering(&self) -> (Vec<usize>, Vec<Option<usize>>) {
        let mut node_of = Vec::new();
        let mut unknown_of = vec![None; self.mask.len()];
        for (idx, k) in self.mask.iter().enumerate() {
            if *k != NodeKind::Exterior {
                unknown_of[idx] = Some(node_of.len());
                node_of.push(idx);
            }
        }
        (node_of, unknown_of)
    }

    /// Node index range `[lo, hi)` of coordinates in the half-open interval `[a, b)`.
    fn node_range(&self, a: f64, b: f64) -> (usize, usize) {
        let off = (self.n - 1) as f64 / 2.0;
        let first = ((a / self.h + off) - 1e-9).ceil().max(0.0) as usize;
        let end = (((b / self.h + off) - 1e-9).ceil().max(0.0) as usize).min(self.n);
        (first.min(end), end)
    }
}

/// Nodal density values; exterior nodes hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: PdeGrid,
    pub values: Vec<f64>,
    pub normalized: bool,
}

/// Sparse stationary system `A f = rhs` over in-disk nodes.
#[derive(Debug, Clone)]
pub struct AdjointOperator {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub sigma1: f64,
    pub sigma3: f64,
    /// `None` when assembled from a custom drift.
    pub params: Option<Params>,
    pub grid: PdeGrid,
    pub node_of_unknown: Vec<usize>,
    pub unknown_of_node: Vec<Option<usize>>,
    /// Largest cell Peclet number `|b| h / D` over interior nodes.
    pub peclet_max: f64,
}

/// Drift of the `z` equation at `w = 0`, as `(Re, Im)`.
pub fn reduced_drift(p: &Params) -> impl Fn(f64, f64) -> (f64, f64) + Sync + '_ {
    move |y1, y3| {
        let (nu, beta) = (p.nu(), p.beta());
        (-nu * y1 + beta * (y1 * y1 - y3 * y3), -nu * y3 + 2.0 * beta * y1 * y3)
    }
}

fn check_sigmas(sigma1: f64, sigma3: f64) -> Result<()> {
    if sigma1 == 0.0 || sigma3 == 0.0 || !sigma1.is_finite() || !sigma3.is_finite() {
        return Err(Error::InvalidParams(format!("sigma1={sigma1}, sigma3={sigma3} must be finite and nonzero")));
    }
    Ok(())
}

/// Face drifts `(b1_e, b1_w, b3_n, b3_s)` at an interior node.
fn face_drifts(g: &PdeGrid, drift: &(impl Fn(f64, f64) -> (f64, f64) + Sync), i: usize, j: usize) -> [f64; 4] {
    let (x, y) = (g.coord(i), g.coord(j));
    let bp = drift(x, y);
    let be = drift(g.coord(i + 1), y);
    let bw = drift(g.coord(i - 1), y);
    let bn = drift(x, g.coord(j + 1));
    let bs = drift(x, g.coord(j - 1));
    [0.5 * (bp.0 + be.0), 0.5 * (bw.0 + bp.0), 0.5 * (bp.1 + bn.1), 0.5 * (bs.1 + bp.1)]
}

pub fn build_adjoint(p: &Params, sigma1: f64, sigma3: f64, g: &PdeGrid) -> Result<AdjointOperator> {
    let mut op = build_adjoint_with(&reduced_drift(p), sigma1, sigma3, g)?;
    op.params = Some(*p);
    Ok(op)
}

/// Assembles the adjoint for an arbitrary planar drift `(y1, y3) -> (b1, b3)`.
pub fn build_adjoint_with(
    drift: &(impl Fn(f64, f64) -> (f64, f64) + Sync),
    sigma1: f64,
    sigma3: f64,
    g: &PdeGrid,
) -> Result<AdjointOperator> {
    check_sigmas(sigma1, sigma3)?;
    let (node_of, unknown_of) = g.numbering();
    let (h, n) = (g.h, g.n);
    let d1 = 0.5 * sigma1 * sigma1;
    let d3 = 0.5 * sigma3 * sigma3;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = node_of
        .par_iter()
        .map(|&idx| {
            let (i, j) = (idx / n, idx % n);
            let u = |ii: usize, jj: usize| unknown_of[g.index(ii, jj)].expect("interior neighbor in disk");
            if g.mask[idx] == NodeKind::Boundary {
                return (vec![(u(i, j), 1.0)], 0.0);
            }
            let [b1e, b1w, b3n, b3s] = face_drifts(g, drift, i, j);
            let (bx, by) = drift(g.coord(i), g.coord(j));
            let pe = (bx.abs() * h / d1).max(by.abs() * h / d3);
            let (k1, k3) = (d1 / (h * h), d3 / (h * h));
            let row = vec![
                (u(i + 1, j), -b1e / (2.0 * h) + k1),
                (u(i - 1, j), b1w / (2.0 * h) + k1),
                (u(i, j + 1), -b3n / (2.0 * h) + k3),
                (u(i, j - 1), b3s / (2.0 * h) + k3),
                (u(i, j), -(b1e - b1w) / (2.0 * h) - (b3n - b3s) / (2.0 * h) - 2.0 * k1 - 2.0 * k3),
            ];
            (row, pe)
        })
        .collect();
    let peclet_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if peclet_max > 2.0 {
        log::warn!("cell Peclet number reaches {peclet_max:.3} (> 2); centered advection may oscillate");
    }
    let matrix = CsrMatrix::from_rows(node_of.len(), rows.into_iter().map(|r| r.0).collect());
    let mut op = AdjointOperator {
        matrix,
        rhs: Vec::new(),
        sigma1,
        sigma3,
        params: None,
        grid: g.clone(),
        node_of_unknown: node_of,
        unknown_of_node: unknown_of,
        peclet_max,
    };
    op.rhs = op.boundary_rhs(0.1);
    Ok(op)
}

/// Generator stencil `b . grad phi + D1 phi_11 + D3 phi_33` with face-averaged
/// drift, assembled row by row on interior nodes. Boundary rows are empty.
/// Shares the unknown numbering of [`build_adjoint_with`].
pub fn build_generator_with(
    drift: &(impl Fn(f64, f64) -> (f64, f64) + Sync),
    sigma1: f64,
    sigma3: f64,
    g: &PdeGrid,
) -> Result<CsrMatrix> {
    check_sigmas(sigma1, sigma3)?;
    let (node_of, unknown_of) = g.numbering();
    let (h, n) = (g.h, g.n);
    let (d1, d3) = (0.5 * sigma1 * sigma1, 0.5 * sigma3 * sigma3);
    let rows = node_of
        .iter()
        .map(|&idx| {
            if g.mask[idx] != NodeKind::Interior {
                return Vec::new();
            }
            let (i, j) = (idx / n, idx % n);
            let u = |ii: usize, jj: usize| unknown_of[g.index(ii, jj)].unwrap();
            let [b1e, b1w, b3n, b3s] = face_drifts(g, drift, i, j);
            let mut row = Vec::with_capacity(9);
            // b1_e (phi_E - phi_P) / 2h + b1_w (phi_P - phi_W) / 2h, same in y3.
            for (q, b, sign) in [(u(i + 1, j), b1e, 1.0), (u(i - 1, j), b1w, -1.0), (u(i, j + 1), b3n, 1.0), (u(i, j - 1), b3s, -1.0)] {
                row.push((q, sign * b / (2.0 * h)));
                row.push((u(i, j), -sign * b / (2.0 * h)));
            }
            for (q, d) in [(u(i + 1, j), d1), (u(i - 1, j), d1), (u(i, j + 1), d3), (u(i, j - 1), d3)] {
                row.push((q, d / (h * h)));
                row.push((u(i, j), -d / (h * h)));
            }
            row
        })
        .collect();
    Ok(CsrMatrix::from_rows(node_of.len(), rows))
}

pub fn build_generator(p: &Params, sigma1: f64, sigma3: f64, g: &PdeGrid) -> Result<CsrMatrix> {
    build_generator_with(&reduced_drift(p), sigma1, sigma3, g)
}

impl AdjointOperator {
    pub fn n_unknowns(&self) -> usize {
        self.node_of_unknown.len()
    }

    fn boundary_rhs(&self, value: f64) -> Vec<f64> {
        self.node_of_unknown
            .iter()
            .map(|&idx| if self.grid.mask[idx] == NodeKind::Boundary { value } else { 0.0 })
            .collect()
    }

    /// Largest `|A(P,Q) - A(flip P, flip Q)|`; zero when the operator commutes
    /// with the `y3 -> -y3` reflection.
    pub fn flip_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for r in 0..self.n_unknowns() {
            let fr = self.unknown_of_node[g.flip(self.node_of_unknown[r])].expect("disk is symmetric");
            for (c, v) in self.matrix.row(r) {
                let fc = self.unknown_of_node[g.flip(self.node_of_unknown[c])].expect("disk is symmetric");
                worst = worst.max((self.matrix.get(fr, fc) - v).abs());
            }
            if self.matrix.row_nnz(r) != self.matrix.row_nnz(fr) {
                return f64::INFINITY;
            }
        }
        worst
    }

    /// Relative mismatch of `<L phi, psi>` and `<phi, L* psi>` for random
    /// vectors supported on interior nodes.
    pub fn duality_defect(&self, generator: &CsrMatrix, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let interior: Vec<bool> = self.node_of_unknown.iter().map(|&i| self.grid.mask[i] == NodeKind::Interior).collect();
        let mut draw = || -> Vec<f64> { interior.iter().map(|&b| if b { rng.random_range(-1.0..1.0) } else { 0.0 }).collect() };
        let (phi, psi) = (draw(), draw());
        let lphi = generator.matvec(&phi);
        let lstar_psi = self.matrix.matvec(&psi);
        let a: Vec<f64> = lphi.iter().zip(&psi).map(|(x, y)| x * y).collect();
        let b: Vec<f64> = phi.iter().zip(&lstar_psi).zip(&interior).map(|((x, y), &m)| if m { x * y } else { 0.0 }).collect();
        let scale = a.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        (compensated_sum(a) - compensated_sum(b)).abs() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Direct up to 60k unknowns, iterative above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SolverKind::Auto),
            "direct" => Ok(SolverKind::Direct),
            "iterative" => Ok(SolverKind::Iterative),
            _ => Err(Error::Parse(format!("unknown solver '{s}' (auto, direct, iterative)"))),
        }
    }
}

pub fn solve_stationary(op: &AdjointOperator, boundary_value: f64) -> Result<DensityField> {
    solve_stationary_with(op, boundary_value, SolverKind::Auto)
}

pub fn solve_stationary_with(op: &AdjointOperator, boundary_value: f64, kind: SolverKind) -> Result<DensityField> {
    if !(boundary_value.is_finite() && boundary_value >= 0.0) {
        return Err(Error::Config(format!("boundary value {boundary_value} must be finite and nonnegative")));
    }
    let rhs = op.boundary_rhs(boundary_value);
    let direct = match kind {
        SolverKind::Auto => op.n_unknowns() <= 60_000,
        SolverKind::Direct => true,
        SolverKind::Iterative => false,
    };
    let x = if direct {
        sparse::solve_direct(&op.matrix, &rhs)?
    } else {
        sparse::solve_iterative(&op.matrix, &rhs, 1e-12, 20_000)?
    };
    let mut values = vec![0.0; op.grid.mask.len()];
    for (u, &idx) in op.node_of_unknown.iter().enumerate() {
        values[idx] = x[u];
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(0.0, f64::min);
    if min < 0.0 {
        if -min < 1e-8 * max {
            values.iter_mut().for_each(|v| *v = v.max(0.0));
        } else {
            return Err(Error::Numerical(format!("stationary solution has negative values down to {min:e} (max {max:e})")));
        }
    }
    Ok(DensityField { grid: op.grid.clone(), values, normalized: false })
}

/// Scales to unit mass `sum f h^2` over in-disk nodes.
pub fn normalize(f: &DensityField) -> Result<DensityField> {
    if f.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Numerical("cannot normalize a field with negative or non-finite values".into()));
    }
    let mass = f.mass();
    if !(mass > 0.0) {
        return Err(Error::Numerical("field has zero total mass".into()));
    }
    Ok(DensityField { grid: f.grid.clone(), values: f.values.iter().map(|v| v / mass).collect(), normalized: true })
}

/// Mode along with its location, as `(y1, y3, value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub y1: f64,
    pub y3: f64,
    pub value: f64,
}

/// Log-quadratic fit to the core of the `y3 = 0` profile and the ratio
/// `f / fit` on the tail interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyTail {
    /// `log f ~ c0 + c1 y1 + c2 y1^2` on the core.
    pub fit: [f64; 3],
    pub ratios: Vec<(f64, f64)>,
    pub increasing: bool,
}

impl DensityField {
    /// Samples `f(y1, y3)` on in-disk nodes.
    pub fn from_fn(grid: PdeGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n;
        let values = (0..n * n)
            .map(|idx| if grid.mask[idx] == NodeKind::Exterior { 0.0 } else { f(grid.coord(idx / n), grid.coord(idx % n)) })
            .collect();
        DensityField { grid, values, normalized: false }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// `sum f h^2` over in-disk nodes.
    pub fn mass(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        compensated_sum(self.values.iter().zip(&self.grid.mask).filter(|(_, k)| **k != NodeKind::Exterior).map(|(v, _)| v * h2))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `max |f(y1, y3) - f(y1, -y3)| / max f`.
    pub fn symmetry_residual(&self) -> f64 {
        let worst = (0..self.values.len()).map(|k| (self.values[k] - self.values[self.grid.flip(k)]).abs()).fold(0.0, f64::max);
        worst / self.max_value().max(f64::MIN_POSITIVE)
    }

    pub fn mode(&self) -> Mode {
        let (k, v) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        let n = self.grid.n;
        Mode { y1: self.grid.coord(k / n), y3: self.grid.coord(k % n), value: v }
    }

    /// Cell-averaged masses on `bins` over `window`. Nodes of the disk that
    /// fall outside the window count toward `outside_mass`; the result sums
    /// to one.
    pub fn to_histogram(&self, window: Window, bins: (usize, usize)) -> Result<OccupationHistogram> {
        window.validate()?;
        if bins.0 == 0 || bins.1 == 0 {
            return Err(Error::Config("histogram needs at least one bin per axis".into()));
        }
        let mut hist = OccupationHistogram { window, bins, mass: vec![0.0; bins.0 * bins.1], total_time: 0.0, outside_mass: 0.0 };
        for i1 in 0..bins.0 {
            for i3 in 0..bins.1 {
                let m = self.cell_mass(&hist.bin_rect(i1, i3))?;
                hist.mass[i1 * bins.1 + i3] = m;
            }
        }
        let (n, h2) = (self.grid.n, self.grid.h * self.grid.h);
        let outside = (0..n * n)
            .filter(|&k| self.grid.mask[k] != NodeKind::Exterior)
            .filter(|&k| hist.bin_of(self.grid.coord(k / n), self.grid.coord(k % n)).is_none())
            .map(|k| self.values[k] * h2);
        hist.outside_mass = compensated_sum(outside);
        let total = hist.total();
        if !(total > 0.0) {
            return Err(Error::Numerical("field has zero mass over the window".into()));
        }
        hist.mass.iter_mut().for_each(|m| *m /= total);
        hist.outside_mass /= total;
        Ok(hist)
    }

    /// Mean nodal value inside `rect` (half-open) times its area.
    fn cell_mass(&self, rect: &Window) -> Result<f64> {
        let (a0, a1) = self.grid.node_range(rect.y1_min, rect.y1_max);
        let (b0, b1) = self.grid.node_range(rect.y3_min, rect.y3_max);
        if a0 >= a1 || b0 >= b1 {
            return Err(Error::Geometry(format!("no grid node inside bin {rect:?}; grid is coarser than the bins")));
        }
        let mut acc = Vec::with_capacity((a1 - a0) * (b1 - b0));
        for i in a0..a1 {
            for j in b0..b1 {
                acc.push(self.value(i, j));
            }
        }
        let count = acc.len() as f64;
        Ok(compensated_sum(acc) / count * (rect.y1_max - rect.y1_min) * (rect.y3_max - rect.y3_min))
    }

    /// Profile along `y3 = 0` compared with a Gaussian fitted where the
    /// profile exceeds a quarter of its maximum.
    pub fn heavy_tail(&self, from: f64, to: f64) -> Result<HeavyTail> {
        let n = self.grid.n;
        if n % 2 == 0 {
            return Err(Error::Geometry("heavy-tail profile needs a node row on y3 = 0 (odd n)".into()));
        }
        let j = n / 2;
        let row: Vec<(f64, f64)> = (0..n).filter(|&i| self.grid.in_disk(i, j)).map(|i| (self.grid.coord(i), self.value(i, j))).collect();
        let peak = row.iter().map(|r| r.1).fold(0.0, f64::max);
        let top = row.iter().position(|r| r.1 == peak).unwrap();
        let mut lo = top;
        while lo > 0 && row[lo - 1].1 >= 0.25 * peak {
            lo -= 1;
        }
        let mut hi = top;
        while hi + 1 < row.len() && row[hi + 1].1 >= 0.25 * peak {
            hi += 1;
        }
        let fit = fit_log_quadratic(&row[lo..=hi])?;
        if !(fit[2] < 0.0) {
            return Err(Error::Numerical(format!("log-quadratic fit is not concave: {fit:?}")));
        }
        let ratios: Vec<(f64, f64)> = row
            .iter()
            .filter(|(y, _)| *y >= from && *y <= to)
            .map(|&(y, v)| (y, v / (fit[0] + fit[1] * y + fit[2] * y * y).exp()))
            .collect();
        let increasing = ratios.len() >= 2 && ratios.windows(2).all(|w| w[1].1 > w[0].1);
        Ok(HeavyTail { fit, ratios, increasing })
    }

    /// CSV `y1,y3,f` over in-disk nodes.
    pub fn to_csv(&self) -> String {
        let n = self.grid.n;
        let mut out = String::from("y1,y3,f\n");
        for k in 0..n * n {
            if self.grid.mask[k] != NodeKind::Exterior {
                let _ = writeln!(out, "{},{},{}", self.grid.coord(k / n), self.grid.coord(k % n), self.values[k]);
            }
        }
        out
    }

    /// Reads [`to_csv`](Self::to_csv) output back onto the grid with the
    /// given extent; the node count is inferred from the spacing.
    pub fn from_csv(text: &str, half_width: f64, radius: f64) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if k == 0 {
                if line.trim() != "y1,y3,f" {
                    return Err(Error::Parse("density csv header mismatch".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("density csv line {}", k + 1))))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(Error::Parse(format!("density csv line {} needs 3 fields", k + 1)));
            }
            rows.push(v);
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let h = xs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if !h.is_finite() {
            return Err(Error::Parse("density csv has fewer than two distinct y1 values".into()));
        }
        let n = (2.0 * half_width / h).round() as usize + 1;
        let grid = PdeGrid::new(n, half_width, radius)?;
        let off = (n - 1) as f64 / 2.0;
        let mut values = vec![0.0; n * n];
        let mut seen = 0;
        for r in &rows {
            let (i, j) = ((r[0] / grid.h + off).round(), (r[1] / grid.h + off).round());
            if i < 0.0 || j < 0.0 || i as usize >= n || j as usize >= n {
                return Err(Error::Geometry(format!("density node ({}, {}) lies off the grid", r[0], r[1])));
            }
            let idx = grid.index(i as usize, j as usize);
            if grid.mask[idx] == NodeKind::Exterior {
                return Err(Error::Geometry(format!("density node ({}, {}) lies outside the disk", r[0], r[1])));
            }
            values[idx] = r[2];
            seen += 1;
        }
        let expected = grid.mask.iter().filter(|k| **k != NodeKind::Exterior).count();
        if seen != expected {
            return Err(Error::Geometry(format!("density csv has {seen} nodes, grid expects {expected}")));
        }
        let mut f = DensityField { grid, values, normalized: false };
        f.normalized = (f.mass() - 1.0).abs() <= 1e-9;
        Ok(f)
    }

    /// Writes `density.csv`, `density.json` and `plot_density.py`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        crate::io::write_text(dir.join("density.csv"), &self.to_csv())?;
        let meta = serde_json::json!({
            "n": self.grid.n,
            "half_width": self.grid.half_width,
            "radius": self.grid.radius,
            "h": self.grid.h,
            "normalized": self.normalized,
            "mass": self.mass(),
            "symmetry_residual": self.symmetry_residual(),
            "mode": self.mode(),
            "run": extra,
        });
        crate::io::write_json(dir.join("density.json"), &meta)?;
        crate::io::write_text(dir.join("plot_density.py"), PLOT_SCRIPT)
    }
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Intensity plot of a stationary density over the (y1, y3) plane."""
import csv, os
import numpy as np
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
rows = np.array([list(map(float, r)) for r in list(csv.reader(open(os.path.join(here, "density.csv"))))[1:]])
y1 = np.unique(rows[:, 0]); y3 = np.unique(rows[:, 1])
f = np.full((len(y3), len(y1)), np.nan)
f[np.searchsorted(y3, rows[:, 1]), np.searchsorted(y1, rows[:, 0])] = rows[:, 2]
plt.imshow(f, origin="lower", extent=[y1[0], y1[-1], y3[0], y3[-1]], cmap="viridis", aspect="equal")
plt.colorbar(label="f")
plt.xlabel("y1"); plt.ylabel("y3")
plt.savefig(os.path.join(here, "density.png"), dpi=150)
"#;

/// Least squares for `log v ~ c0 + c1 y + c2 y^2`.
fn fit_log_quadratic(pts: &[(f64, f64)]) -> Result<[f64; 3]> {
    if pts.len() < 3 || pts.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::Numerical("need three positive samples for a log-quadratic fit".into()));
    }
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for &(y, v) in pts {
        let basis = [1.0, y, y * y];
        let l = v.ln();
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
            b[r] += basis[r] * l;
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 {
        return Err(Error::Numerical("singular log-quadratic fit".into()));
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *o = det(&m) / d;
    }
    Ok(out)
}

/// L1 distance between the field and a histogram over the bins of `h` that
/// lie inside `region` and inside the disk, after renormalizing both to unit
/// mass on those bins.
pub fn pde_vs_histogram(f: &DensityField, h: &OccupationHistogram, region: Window) -> Result<f64> {
    region.validate()?;
    if !h.window.contains_rect(&region) {
        return Err(Error::Geometry(format!("region {region:?} is not inside histogram window {:?}", h.window)));
    }
    let eps = 1e-9;
    let r2 = f.grid.radius * f.grid.radius * (1.0 + 1e-12);
    let mut pde = Vec::new();
    let mut emp = Vec::new();
    for i1 in 0..h.bins.0 {
        for i3 in 0..h.bins.1 {
            let r = h.bin_rect(i1, i3);
            let in_region = r.y1_min >= region.y1_min - eps
                && r.y1_max <= region.y1_max + eps
                && r.y3_min >= region.y3_min - eps
                && r.y3_max <= region.y3_max + eps;
            let corners_in = [(r.y1_min, r.y3_min), (r.y1_min, r.y3_max), (r.y1_max, r.y3_min), (r.y1_max, r.y3_max)]
                .iter()
                .all(|(a, b)| a * a + b * b <= r2);
            if in_region && corners_in {
                pde.push(f.cell_mass(&r)?);
                emp.push(h.mass[i1 * h.bins.1 + i3]);
            }
        }
    }
    if pde.is_empty() {
        return Err(Error::Geometry("no histogram bin lies inside both the region and the disk".into()));
    }
    let (sp, se) = (compensated_sum(pde.iter().copied()), compensated_sum(emp.iter().copied()));
    if !(sp > 0.0 && se > 0.0) {
        return Err(Error::Numerical("zero mass on the compared bins".into()));
    }
    Ok(compensated_sum(pde.iter().zip(&emp).map(|(a, b)| (a / sp - b / se).abs())))
}

/// L1 change between a solution and one on the grid refined by two, sampled
/// at the coarse nodes inside `region` and normalized there.
pub fn refinement_delta(coarse: &DensityField, fine: &DensityField, region: Window) -> Result<f64> {
    let (c, f) = (&coarse.grid, &fine.grid);
    if f.n - 1 != 2 * (c.n - 1) || f.half_width != c.half_width || f.radius != c.radius {
        return Err(Error::Geometry(format!("grid with n={} is not a 2x refinement of n={}", f.n, c.n)));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..c.n {
        for j in 0..c.n {
            let (y1, y3) = (c.coord(i), c.coord(j));
            if c.in_disk(i, j) && y1 >= region.y1_min && y1 <= region.y1_max && y3 >= region.y3_min && y3 <= region.y3_max {
                a.push(coarse.value(i, j));
                b.push(fine.value(2 * i, 2 * j));
            }
        }
    }
    let (sa, sb) = (compensated_sum(a.iter().copied()), compensated_sum(b.iter().copied()));
    if !(sa > 0.0 && sb > 0.0) {
        return Err(Error::Numerical("zero mass in the refinement region".into()));
    }
    Ok(compensated_sum(a.iter().zip(&b).map(|(x, y)| (x / sa - y / sb).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Params {
        Params::unit()
    }

    fn zero_drift(_: f64, _: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    #[test]
    fn mask_invariants() {
        let g = PdeGrid::disk(33).unwrap();
        let n = g.n;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(g.coord(n - 1 - i), -g.coord(i));
                match g.kind(i, j) {
                    NodeKind::Interior => {
                        for (a, b) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                            assert!(g.in_disk(a, b));
                        }
                    }
                    NodeKind::Boundary => {
                        let out = [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|(di, dj)| {
                            let (a, b) = (i as isize + di, j as isize + dj);
                            a < 0 || b < 0 || a >= n as isize || b >= n as isize || !g.in_disk(a as usize, b as usize)
                        });
                        assert!(out);
                    }
                    NodeKind::Exterior => assert!(g.coord(i).hypot(g.coord(j)) > 4.0),
                }
            }
        }
        assert_eq!(g.kind(16, 16), NodeKind::Interior);
        assert_eq!(g.kind(0, 16), NodeKind::Boundary);
        assert_eq!(g.kind(0, 0), NodeKind::Exterior);
    }

    #[test]
    fn drift_free_matrix_is_five_point_laplacian() {
        let g = PdeGrid::disk(17).unwrap();
        let op = build_adjoint_with(&zero_drift, 1.0, 1.0, &g).unwrap();
        let k = 0.5 / (g.h * g.h);
        for (u, &idx) in op.node_of_unknown.iter().enumerate() {
            let (i, j) = (idx / g.n, idx % g.n);
            if g.mask[idx] == NodeKind::Boundary {
                assert_eq!(op.matrix.row_nnz(u), 1);
                assert_eq!(op.matrix.get(u, u), 1.0);
                continue;
            }
            assert_eq!(op.matrix.row_nnz(u), 5);
            assert_eq!(op.matrix.get(u, u), -4.0 * k);
            for (a, b) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                let q = op.unknown_of_node[g.index(a, b)].unwrap();
                assert_eq!(op.matrix.get(u, q), k);
            }
        }
    }

    #[test]
    fn drift_free_solution_is_constant() {
        let g = PdeGrid::disk(33).unwrap();
        let op = build_adjoint_with(&zero_drift, 1.0, 1.0, &g).unwrap();
        let f = solve_stationary(&op, 0.1).unwrap();
        for (v, k) in f.values.iter().zip(&g.mask) {
            if *k != NodeKind::Exterior {
                assert!((v - 0.1).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn discrete_duality_and_symmetry() {
        let g = PdeGrid::disk(65).unwrap();
        let op = build_adjoint(&unit(), 1.0, 1.0, &g).unwrap();
        let gen = build_generator(&unit(), 1.0, 1.0, &g).unwrap();
        for seed in 0..3 {
            assert!(op.duality_defect(&gen, seed) < 1e-12);
        }
        assert_eq!(op.flip_defect(), 0.0);
        assert!((0..op.n_unknowns()).all(|r| op.matrix.row_nnz(r) <= 5));
    }

    #[test]
    fn duality_detects_a_non_transpose() {
        let g = PdeGrid::disk(33).unwrap();
        let op = build_adjoint(&unit(), 1.0, 1.0, &g).unwrap();
        let wrong = build_generator(&unit(), 1.0, 1.5, &g).unwrap();
        assert!(op.duality_defect(&wrong, 1) > 1e-6);
    }

    #[test]
    fn normalize_constant_and_idempotent() {
        let g = PdeGrid::disk(129).unwrap();
        let f = DensityField::from_fn(g, |_, _| 0.1);
        let nf = normalize(&f).unwrap();
        assert!((nf.mass() - 1.0).abs() < 1e-10);
        let expect = 1.0 / (16.0 * std::f64::consts::PI);
        assert!((nf.values[nf.grid.index(64, 64)] / expect - 1.0).abs() < 0.01);
        let again = normalize(&nf).unwrap();
        for (a, b) in nf.values.iter().zip(&again.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
        let zero = DensityField::from_fn(PdeGrid::disk(9).unwrap(), |_, _| 0.0);
        assert!(normalize(&zero).is_err());
    }

    #[test]
    fn binned_field_is_probability_vector() {
        let g = PdeGrid::disk(129).unwrap();
        let f = normalize(&DensityField::from_fn(g, |a, b| (-(a * a + b * b) / 3.0).exp())).unwrap();
        let hist = f.to_histogram(Window::square(4.0), (40, 40)).unwrap();
        assert!(hist.mass.iter().all(|m| *m >= 0.0));
        assert!((hist.total() - 1.0).abs() < 1e-12);
    }

    /// Bin masses of a density by 16x16 midpoint quadrature, independent of the PDE grid.
    fn quadrature_histogram(dens: impl Fn(f64, f64) -> f64, window: Window, bins: (usize, usize)) -> OccupationHistogram {
        let mut h = OccupationHistogram { window, bins, mass: vec![0.0; bins.0 * bins.1], total_time: 0.0, outside_mass: 0.0 };
        for i in 0..bins.0 {
            for j in 0..bins.1 {
                let r = h.bin_rect(i, j);
                let (da, db) = ((r.y1_max - r.y1_min) / 16.0, (r.y3_max - r.y3_min) / 16.0);
                let mut s = 0.0;
                for a in 0..16 {
                    for b in 0..16 {
                        s += dens(r.y1_min + (a as f64 + 0.5) * da, r.y3_min + (b as f64 + 0.5) * db) * da * db;
                    }
                }
                h.mass[i * bins.1 + j] = s;
            }
        }
        h
    }

    #[test]
    fn identical_gaussians_agree() {
        let gauss = |a: f64, b: f64| (-((a + 0.5).powi(2) + b * b) / 2.0).exp();
        let f = DensityField::from_fn(PdeGrid::disk(257).unwrap(), gauss);
        let h = quadrature_histogram(gauss, Window::square(4.0), (40, 40));
        let l1 = pde_vs_histogram(&f, &h, Window::square(3.0)).unwrap();
        assert!(l1 < 0.01, "{l1}");
    }

    /// L1 between two histograms renormalized over the bins inside `[-3,3]^2` and the disk.
    fn restricted_l1(a: &OccupationHistogram, b: &OccupationHistogram) -> f64 {
        let mut pairs = Vec::new();
        for i in 0..a.bins.0 {
            for j in 0..a.bins.1 {
                let r = a.bin_rect(i, j);
                let far = [r.y1_min, r.y1_max].iter().flat_map(|x| [r.y3_min, r.y3_max].map(|y| x.hypot(y))).fold(0.0, f64::max);
                if Window::square(3.0 + 1e-9).contains_rect(&r) && far <= 4.0 {
                    pairs.push((a.mass[i * a.bins.1 + j], b.mass[i * a.bins.1 + j]));
                }
            }
        }
        let (sa, sb) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        pairs.iter().map(|(x, y)| (x / sa - y / sb).abs()).sum()
    }

    #[test]
    fn flipping_respects_triangle_inequality() {
        let g = PdeGrid::disk(129).unwrap();
        let f = DensityField::from_fn(g, |a, b| (-((a + 0.5).powi(2) + (b - 0.2).powi(2))).exp());
        let h = quadrature_histogram(|a, b| (-((a + 0.3).powi(2) + (b + 0.4).powi(2))).exp(), Window::square(4.0), (40, 40));
        let hf = h.flip_y3().unwrap();
        let region = Window::square(3.0);
        let d = pde_vs_histogram(&f, &h, region).unwrap();
        let d_flip = pde_vs_histogram(&f, &hf, region).unwrap();
        let residual = restricted_l1(&h, &hf);
        assert!(residual > 0.1);
        assert!((d - d_flip).abs() <= residual + 1e-12);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let f = DensityField::from_fn(PdeGrid::disk(65).unwrap(), |_, _| 1.0);
        let h = quadrature_histogram(|_, _| 1.0, Window::square(2.0), (10, 10));
        assert!(matches!(pde_vs_histogram(&f, &h, Window::square(3.0)), Err(Error::Geometry(_))));
        let coarse = DensityField::from_fn(PdeGrid::disk(9).unwrap(), |_, _| 1.0);
        let fine_bins = quadrature_histogram(|_, _| 1.0, Window::square(4.0), (40, 40));
        assert!(pde_vs_histogram(&coarse, &fine_bins, Window::square(3.0)).is_err());
    }

    #[test]
    fn unit_solution_shape() {
        let g = PdeGrid::disk(65).unwrap();
        let op = build_adjoint(&unit(), 1.0, 1.0, &g).unwrap();
        let f = normalize(&solve_stationary(&op, 0.1).unwrap()).unwrap();
        assert!(f.symmetry_residual() < 1e-8);
        let m = f.mode();
        assert!(m.y1 < 0.0 && m.y3.abs() <= g.h, "{m:?}");
        assert!(f.heavy_tail(1.5, 3.5).unwrap().increasing);
    }

    #[test]
    fn direct_and_iterative_solutions_agree() {
        let g = PdeGrid::disk(49).unwrap();
        let op = build_adjoint(&unit(), 1.0, 1.0, &g).unwrap();
        let a = solve_stationary_with(&op, 0.1, SolverKind::Direct).unwrap();
        let b = solve_stationary_with(&op, 0.1, SolverKind::Iterative).unwrap();
        let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8 * a.max_value(), "{worst}");
    }

    #[test]
    fn csv_round_trip() {
        let g = PdeGrid::disk(34).unwrap();
        let f = DensityField::from_fn(g, |a, b| 1.0 + a * 0.3 - b * b * 0.01);
        let back = DensityField::from_csv(&f.to_csv(), 4.0, 4.0).unwrap();
        assert_eq!(back.grid.n, 34);
        assert_eq!(back.values, f.values);
        assert!(DensityField::from_csv("a,b\n", 4.0, 4.0).is_err());
    }

    #[test]
    fn refinement_needs_matching_grids() {
        let a = DensityField::from_fn(PdeGrid::disk(17).unwrap(), |_, _| 1.0);
        let b = DensityField::from_fn(PdeGrid::disk(33).unwrap(), |_, _| 1.0);
        assert!(refinement_delta(&a, &b, Window::square(3.0)).unwrap() < 1e-15);
        assert!(refinement_delta(&a, &a, Window::square(3.0)).is_err());
    }

    #[test]
    fn zero_sigma_is_rejected() {
        let g = PdeGrid::disk(9).unwrap();
        assert!(build_adjoint(&unit(), 0.0, 1.0, &g).is_err());
    }
}
