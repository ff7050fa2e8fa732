//! Gyration tensors about the tether point and what is computed from them.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sampler::TrackedBridge;
use crate::sum::KahanSum;
use crate::{Error, Result};

/// Symmetric 2x2 second-moment tensor of tracked points about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GyrationTensor {
    pub t11: f64,
    pub t12: f64,
    pub t22: f64,
}

impl GyrationTensor {
    pub fn new(t11: f64, t12: f64, t22: f64) -> Self {
        GyrationTensor { t11, t12, t22 }
    }

    /// Second moments of `(x[i], y[i])` divided by the number of points.
    ///
    /// The first and last points are the tether endpoints: they count in the
    /// normalizer `2 + |S|` but contribute nothing to the sums.
    pub fn from_points(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len(), "coordinate slices differ in length");
        let n = x.len();
        if n <= 2 {
            return GyrationTensor::default();
        }
        let (mut sxx, mut sxy, mut syy) = (
            KahanSum::default(),
            KahanSum::default(),
            KahanSum::default(),
        );
        for (&a, &b) in x[1..n - 1].iter().zip(&y[1..n - 1]) {
            sxx.add(a * a);
            sxy.add(a * b);
            syy.add(b * b);
        }
        let norm = n as f64;
        GyrationTensor {
            t11: sxx.total() / norm,
            t12: sxy.total() / norm,
            t22: syy.total() / norm,
        }
    }

    /// Radius of gyration squared.
    pub fn trace(&self) -> f64 {
        self.t11 + self.t22
    }

    pub fn det(&self) -> f64 {
        self.t11 * self.t22 - self.t12 * self.t12
    }

    pub fn is_zero(&self) -> bool {
        self.t11 == 0.0 && self.t12 == 0.0 && self.t22 == 0.0
    }
}

pub fn gyration_tensor(bridge: &TrackedBridge) -> GyrationTensor {
    GyrationTensor::from_points(bridge.x(), bridge.y())
}

/// Eigenvalues `lambda1 >= lambda2` and the angle of the leading eigenvector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenShape {
    pub lambda1: f64,
    pub lambda2: f64,
    /// In `[0, pi)`. Zero for isotropic tensors.
    pub theta: f64,
}

/// Closed-form symmetric eigen-decomposition.
pub fn eigen(tensor: &GyrationTensor) -> Result<EigenShape> {
    let GyrationTensor { t11, t12, t22 } = *tensor;
    if !(t11.is_finite() && t12.is_finite() && t22.is_finite()) {
        return Err(Error::Numeric(format!("non-finite tensor {tensor:?}")));
    }
    let mean = 0.5 * (t11 + t22);
    let half_diff = 0.5 * (t11 - t22);
    let radius = half_diff.hypot(t12);
    let lambda1 = (mean + radius).max(0.0);
    // det / lambda1 keeps precision when lambda2 << lambda1.
    let lambda2 = if lambda1 > 0.0 {
        (tensor.det() / lambda1).clamp(0.0, lambda1)
    } else {
        0.0
    };
    let theta = if radius == 0.0 {
        0.0
    } else {
        let mut th = 0.5 * t12.atan2(half_diff);
        if th < 0.0 {
            th += PI;
        }
        if th >= PI {
            th -= PI;
        }
        th
    };
    Ok(EigenShape {
        lambda1,
        lambda2,
        theta,
    })
}

/// The ellipse `v^T T^-1 v = kappa^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseShape {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub theta: f64,
    pub kappa: f64,
}

impl EllipseShape {
    pub fn aspect_ratio(&self) -> f64 {
        self.semi_major / self.semi_minor
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn ellipse(tensor: &GyrationTensor, kappa: f64) -> Result<EllipseShape> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let e = eigen(tensor)?;
    if !(e.lambda2 > 1e-14) {
        return Err(Error::DegenerateGeometry(format!(
            "tensor is singular (eigenvalues {}, {})",
            e.lambda1, e.lambda2
        )));
    }
    Ok(EllipseShape {
        semi_major: kappa * e.lambda1.sqrt(),
        semi_minor: kappa * e.lambda2.sqrt(),
        theta: e.theta,
        kappa,
    })
}

/// Ensemble estimators of asphericity and radius of gyration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub a_hat: f64,
    pub r2_hat: f64,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub n: usize,
    /// Delta-method standard error of `a_hat` from the sample covariance of
    /// the per-bridge `(det, trace^2)` pairs.
    pub a_stderr: f64,
    pub r2_stderr: f64,
}

/// `alpha = mean(T11 T22 - T12^2)`, `beta = mean((T11 + T22)^2)`,
/// `A = 1 - 4 alpha / beta`, `r2 = mean(T11 + T22)`.
pub fn estimate_ensemble(tensors: &[GyrationTensor]) -> Result<EnsembleEstimate> {
    let n = tensors.len();
    if n < 2 {
        return Err(Error::DegenerateEnsemble(format!(
            "need at least 2 tensors, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = |f: &dyn Fn(&GyrationTensor) -> f64| -> f64 {
        tensors.iter().map(f).collect::<KahanSum>().total() / nf
    };
    let alpha = mean(&|t| t.det());
    let beta = mean(&|t| t.trace() * t.trace());
    let r2 = mean(&|t| t.trace());
    if !(beta > 0.0) {
        return Err(Error::DegenerateEnsemble(
            "all gyration tensors are zero".into(),
        ));
    }
    let centered = |f: &dyn Fn(&GyrationTensor) -> f64| -> f64 {
        tensors.iter().map(f).collect::<KahanSum>().total() / (nf - 1.0)
    };
    let var_det = centered(&|t| (t.det() - alpha).powi(2));
    let var_sq = centered(&|t| (t.trace() * t.trace() - beta).powi(2));
    let cov = centered(&|t| (t.det() - alpha) * (t.trace() * t.trace() - beta));
    let var_tr = centered(&|t| (t.trace() - r2).powi(2));

    let g_alpha = -4.0 / beta;
    let g_beta = 4.0 * alpha / (beta * beta);
    let var_a =
        (g_alpha * g_alpha * var_det + 2.0 * g_alpha * g_beta * cov + g_beta * g_beta * var_sq)
            / nf;

    Ok(EnsembleEstimate {
        a_hat: 1.0 - 4.0 * alpha / beta,
        r2_hat: r2,
        alpha_hat: alpha,
        beta_hat: beta,
        n,
        a_stderr: var_a.max(0.0).sqrt(),
        r2_stderr: (var_tr.max(0.0) / nf).sqrt(),
    })
}

/// Rotates a bridge so its principal axis is horizontal, then by `pi` if
/// needed so the centroid of its interior points has `x >= 0`.
pub fn align(bridge: &TrackedBridge) -> Result<TrackedBridge> {
    let tensor = gyration_tensor(bridge);
    let e = eigen(&tensor)?;
    if !(e.lambda1 > 0.0) {
        return Err(Error::DegenerateGeometry(
            "bridge has no displaced interior points to align".into(),
        ));
    }
    let (s, c) = e.theta.sin_cos();
    let mut x: Vec<f64> = Vec::with_capacity(bridge.len());
    let mut y: Vec<f64> = Vec::with_capacity(bridge.len());
    for (&a, &b) in bridge.x().iter().zip(bridge.y()) {
        x.push(c * a + s * b);
        y.push(-s * a + c * b);
    }
    let n = x.len();
    let centroid: KahanSum = x[1..n - 1].iter().copied().collect();
    if centroid.total() < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
        y.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(bridge.with_positions(x, y))
}

/// Regular grid of `nx * ny` nodes spanning a rectangle, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(Error::Domain(format!("invalid grid bounds {self:?}")));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Domain("grid needs at least 2 nodes per axis".into()));
        }
        if self.nx.checked_mul(self.ny).is_none_or(|n| n > 1 << 28) {
            return Err(Error::Domain("grid is too large".into()));
        }
        Ok(())
    }

    /// Bounding box of `points` padded by `margin` on every side.
    pub fn around(points: &[[f64; 2]], margin: f64, nx: usize, ny: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("no points to bound".into()));
        }
        let mut b = [
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for p in points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].max(p[0]);
            b[2] = b[2].min(p[1]);
            b[3] = b[3].max(p[1]);
        }
        let spec = GridSpec {
            x_min: b[0] - margin,
            x_max: b[1] + margin,
            y_min: b[2] - margin,
            y_max: b[3] + margin,
            nx,
            ny,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy()
    }
}

/// Density values on a [`GridSpec`], row-major with `y` as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

const GRID_MAGIC: &[u8; 4] = b"TBKD";
const GRID_VERSION: u32 = 1;
const GRID_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 * 8;

impl DensityGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    /// Riemann-sum integral over the grid.
    pub fn mass(&self) -> f64 {
        let s: KahanSum = self.values.iter().copied().collect();
        s.total() * self.grid.dx() * self.grid.dy()
    }

    /// `(E[x^2], E[y^2], E[xy])` of the normalized grid density.
    pub fn second_moments(&self) -> (f64, f64, f64) {
        let (mut mass, mut xx, mut yy, mut xy) = (
            KahanSum::default(),
            KahanSum::default(),
            KahanSum::default(),
            KahanSum::default(),
        );
        for j in 0..self.grid.ny {
            let y = self.grid.y(j);
            for i in 0..self.grid.nx {
                let x = self.grid.x(i);
                let d = self.at(i, j);
                mass.add(d);
                xx.add(d * x * x);
                yy.add(d * y * y);
                xy.add(d * x * y);
            }
        }
        let m = mass.total();
        (xx.total() / m, yy.total() / m, xy.total() / m)
    }

    /// Mass in the half-planes `x < 0` and `x > 0`.
    pub fn half_plane_masses(&self) -> (f64, f64) {
        let (mut left, mut right) = (KahanSum::default(), KahanSum::default());
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let x = self.grid.x(i);
                if x < 0.0 {
                    left.add(self.at(i, j));
                } else if x > 0.0 {
                    right.add(self.at(i, j));
                }
            }
        }
        let cell = self.grid.dx() * self.grid.dy();
        (left.total() * cell, right.total() * cell)
    }

    /// CSV with header `x,y,density`, rows in storage order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "density"])?;
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                w.write_record([
                    self.grid.x(i).to_string(),
                    self.grid.y(j).to_string(),
                    self.at(i, j).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Little-endian binary: magic `TBKD`, `u32` version, `u64` rows (`ny`),
    /// `u64` columns (`nx`), `f64` bounds `x_min, x_max, y_min, y_max`, then
    /// `ny * nx` row-major `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GRID_HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid.ny as u64).to_le_bytes());
        out.extend_from_slice(&(self.grid.nx as u64).to_le_bytes());
        for v in [
            self.grid.x_min,
            self.grid.x_max,
            self.grid.y_min,
            self.grid.y_max,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GRID_HEADER_LEN {
            return Err(Error::Parse(format!(
                "grid file too short: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != GRID_MAGIC {
            return Err(Error::Parse("bad grid magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != GRID_VERSION {
            return Err(Error::Parse(format!("unsupported grid version {version}")));
        }
        let to_usize =
            |v: u64| usize::try_from(v).map_err(|_| Error::Parse("grid dimension overflow".into()));
        let ny = to_usize(u64_at(8))?;
        let nx = to_usize(u64_at(16))?;
        let grid = GridSpec {
            x_min: f64_at(24),
            x_max: f64_at(32),
            y_min: f64_at(40),
            y_max: f64_at(48),
            nx,
            ny,
        };
        grid.validate().map_err(|e| Error::Parse(e.to_string()))?;
        let body = &bytes[GRID_HEADER_LEN..];
        if body.len() != nx * ny * 8 {
            return Err(Error::Parse(format!(
                "grid body has {} bytes, expected {}",
                body.len(),
                nx * ny * 8
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DensityGrid { grid, values })
    }
}

/// Kernel contributions beyond this many bandwidths are dropped; the
/// neglected Gaussian weight is below `exp(-32)`.
const KDE_CUTOFF: f64 = 8.0;

/// Isotropic Gaussian kernel density estimate evaluated on a grid.
///
/// Work is split into fixed-size chunks of points and the partial grids are
/// added in chunk order, so the result does not depend on the thread count.
pub fn kde_grid(points: &[[f64; 2]], bandwidth: f64, grid: GridSpec) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::Domain(
            "kernel density estimate needs at least one point".into(),
        ));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    grid.validate()?;
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::Domain("points must be finite".into()));
    }
    const CHUNK: usize = 2048;
    let cells = grid.nx * grid.ny;
    let partials: Vec<Vec<f64>> = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; cells];
            let mut wx = Vec::new();
            let mut wy = Vec::new();
            for p in chunk {
                let (i0, i1) = node_window(p[0], grid.x_min, grid.dx(), grid.nx, bandwidth);
                let (j0, j1) = node_window(p[1], grid.y_min, grid.dy(), grid.ny, bandwidth);
                if i0 > i1 || j0 > j1 {
                    continue;
                }
                let gauss = |d: f64| (-0.5 * (d / bandwidth).powi(2)).exp();
                wx.clear();
                wx.extend((i0..=i1).map(|i| gauss(grid.x(i) - p[0])));
                wy.clear();
                wy.extend((j0..=j1).map(|j| gauss(grid.y(j) - p[1])));
                for (dj, &w_y) in wy.iter().enumerate() {
                    let row = (j0 + dj) * grid.nx;
                    for (di, &w_x) in wx.iter().enumerate() {
                        acc[row + i0 + di] += w_x * w_y;
                    }
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; cells];
    for part in &partials {
        for (v, p) in values.iter_mut().zip(part) {
            *v += p;
        }
    }
    let norm = 1.0 / (points.len() as f64 * 2.0 * PI * bandwidth * bandwidth);
    values.iter_mut().for_each(|v| *v *= norm);
    Ok(DensityGrid { grid, values })
}

/// Inclusive index range of grid nodes within the kernel cutoff of `p`.
/// Returns an empty range (`start > end`) when no node is in reach.
fn node_window(p: f64, min: f64, step: f64, n: usize, h: f64) -> (usize, usize) {
    let lo = ((p - KDE_CUTOFF * h - min) / step).ceil();
    let hi = ((p + KDE_CUTOFF * h - min) / step).floor();
    let lo = lo.max(0.0);
    let hi = hi.min((n - 1) as f64);
    if lo > hi {
        return (1, 0);
    }
    (lo as usize, hi as usize)
}
