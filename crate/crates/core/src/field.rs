//! Uniform Cartesian grids, nonnegative scalar fields on them, finite
//! differences and ball/sphere quadrature.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{self, ManifoldSpec, Point};

/// Sub-samples per cell side used for partial-cell area fractions.
pub const SUBSAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: Point,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(origin: Point, h: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("h", format!("spacing {h} must be positive")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(
                "dims",
                format!("{nx}x{ny} needs at least 2 nodes per axis"),
            ));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("origin", "non-finite coordinate"));
        }
        Ok(Grid { origin, h, nx, ny })
    }

    /// Square grid of `n x n` nodes covering `[c - half, c + half]^2`.
    pub fn square(center: Point, half_width: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("resolution", "need at least 2 nodes"));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        Grid::new([center[0] - half_width, center[1] - half_width], h, n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    #[inline]
    pub fn node_at(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.node(i, j)
    }

    pub fn upper(&self) -> Point {
        self.node(self.nx - 1, self.ny - 1)
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }

    /// Whether the closed ball lies inside the node box.
    pub fn contains_ball(&self, x: Point, r: f64) -> bool {
        let hi = self.upper();
        let eps = 1e-12 * self.h;
        x[0] - r >= self.origin[0] - eps
            && x[1] - r >= self.origin[1] - eps
            && x[0] + r <= hi[0] + eps
            && x[1] + r <= hi[1] + eps
    }

    pub fn contains_point(&self, p: Point) -> bool {
        self.contains_ball(p, 0.0)
    }

    /// Nearest node to `p`, clamped to the grid.
    pub fn nearest_node(&self, p: Point) -> (usize, usize) {
        let fi = ((p[0] - self.origin[0]) / self.h).round();
        let fj = ((p[1] - self.origin[1]) / self.h).round();
        (
            fi.clamp(0.0, (self.nx - 1) as f64) as usize,
            fj.clamp(0.0, (self.ny - 1) as f64) as usize,
        )
    }

    /// Index ranges of nodes whose dual cells may meet the ball, clipped.
    fn node_range(&self, x: Point, r: f64) -> (usize, usize, usize, usize) {
        let pad = r + self.h;
        let lo_i = ((x[0] - pad - self.origin[0]) / self.h).floor().max(0.0) as usize;
        let lo_j = ((x[1] - pad - self.origin[1]) / self.h).floor().max(0.0) as usize;
        let hi_i = (((x[0] + pad - self.origin[0]) / self.h).ceil().max(0.0) as usize).min(self.nx - 1);
        let hi_j = (((x[1] + pad - self.origin[1]) / self.h).ceil().max(0.0) as usize).min(self.ny - 1);
        (lo_i, hi_i, lo_j, hi_j)
    }
}

/// Node weights approximating `∫_{B_r(x)} f` by `Σ w_i f_i`: each node owns
/// its dual cell, weighted by the fraction of that cell inside the ball.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    pub center: Point,
    pub radius: f64,
    pub entries: Vec<(usize, f64)>,
}

impl BallQuadrature {
    pub fn new(grid: &Grid, x: Point, r: f64) -> Result<Self> {
        if !grid.contains_ball(x, r) {
            return Err(Error::OutsideGrid {
                x: x[0],
                y: x[1],
                radius: r,
            });
        }
        Ok(Self::clipped(grid, x, r))
    }

    /// Same weights restricted to the part of the ball covered by the grid.
    pub fn clipped(grid: &Grid, x: Point, r: f64) -> Self {
        let h = grid.h;
        let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
        let (lo_i, hi_i, lo_j, hi_j) = grid.node_range(x, r);
        let cell = h * h;
        let mut entries = Vec::new();
        let r2 = r * r;
        let s = SUBSAMPLES as f64;
        for j in lo_j..=hi_j {
            for i in lo_i..=hi_i {
                let p = grid.node(i, j);
                let d = geometry::distance(p, x);
                let w = if d + half_diag <= r {
                    cell
                } else if d - half_diag >= r {
                    0.0
                } else {
                    let mut inside = 0usize;
                    for b in 0..SUBSAMPLES {
                        for a in 0..SUBSAMPLES {
                            let q = [
                                p[0] - 0.5 * h + (a as f64 + 0.5) * h / s,
                                p[1] - 0.5 * h + (b as f64 + 0.5) * h / s,
                            ];
                            let dx = q[0] - x[0];
                            let dy = q[1] - x[1];
                            if dx * dx + dy * dy < r2 {
                                inside += 1;
                            }
                        }
                    }
                    cell * inside as f64 / (s * s)
                };
                if w > 0.0 {
                    entries.push((grid.index(i, j), w));
                }
            }
        }
        BallQuadrature {
            center: x,
            radius: r,
            entries,
        }
    }

    pub fn area(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    #[inline]
    pub fn integrate(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.entries.iter().map(|&(idx, w)| w * f(idx)).sum()
    }
}

/// Equally spaced points on a circle with the arc-length weight.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub center: Point,
    pub radius: f64,
    pub points: Vec<Point>,
    pub weight: f64,
}

impl SphereQuadrature {
    /// `N = max(64, ceil(8 pi r / h))` samples.
    pub fn new(grid: &Grid, x: Point, r: f64) -> Result<Self> {
        if !grid.contains_ball(x, r) {
            return Err(Error::OutsideGrid {
                x: x[0],
                y: x[1],
                radius: r,
            });
        }
        let n = sphere_samples(r, grid.h);
        Ok(Self::with_samples(x, r, n))
    }

    pub fn with_samples(x: Point, r: f64, n: usize) -> Self {
        let points = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                [x[0] + r * t.cos(), x[1] + r * t.sin()]
            })
            .collect();
        SphereQuadrature {
            center: x,
            radius: r,
            points,
            weight: 2.0 * PI * r / n as f64,
        }
    }

    pub fn integrate(&self, mut f: impl FnMut(Point) -> f64) -> f64 {
        self.weight * self.points.iter().map(|&p| f(p)).sum::<f64>()
    }
}

pub fn sphere_samples(r: f64, h: f64) -> usize {
    64usize.max((8.0 * PI * r / h).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Dirichlet (fixed) nodes.
    pub dirichlet: Vec<bool>,
}

impl ScalarField {
    /// Validates finiteness and nonnegativity; grid-boundary nodes are
    /// marked Dirichlet.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(
                "values",
                format!("expected {} entries, got {}", grid.len(), values.len()),
            ));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if value < 0.0 {
                return Err(Error::NegativeValue { index, value });
            }
        }
        let dirichlet = (0..grid.len())
            .map(|idx| {
                let (i, j) = grid.coords(idx);
                !grid.is_interior(i, j)
            })
            .collect();
        Ok(ScalarField {
            grid,
            values,
            dirichlet,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|idx| f(grid.node_at(idx))).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::new(grid, vec![0.0; grid.len()]).expect("zeros are valid")
    }

    pub fn with_dirichlet(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.grid.len() {
            return Err(Error::invalid("dirichlet", "mask length mismatch"));
        }
        self.dirichlet = mask;
        Ok(self)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear interpolant; `None` outside the grid.
    pub fn interpolate(&self, p: Point) -> Option<f64> {
        interpolate_values(&self.grid, &self.values, p)
    }

    pub fn gradient(&self, i: usize, j: usize) -> Result<Point> {
        if !self.grid.is_interior(i, j) {
            return Err(Error::BoundaryNode { i, j });
        }
        Ok(self.nodal_gradient(i, j))
    }

    pub fn laplacian(&self, i: usize, j: usize) -> Result<f64> {
        if !self.grid.is_interior(i, j) {
            return Err(Error::BoundaryNode { i, j });
        }
        let h = self.grid.h;
        let c = self.at(i, j);
        Ok((self.at(i + 1, j) + self.at(i - 1, j) + self.at(i, j + 1) + self.at(i, j - 1) - 4.0 * c) / (h * h))
    }

    /// Central differences inside, one-sided on the grid boundary.
    pub fn nodal_gradient(&self, i: usize, j: usize) -> Point {
        let h = self.grid.h;
        let g = &self.grid;
        let dx = if i == 0 {
            (self.at(1, j) - self.at(0, j)) / h
        } else if i + 1 == g.nx {
            (self.at(i, j) - self.at(i - 1, j)) / h
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        };
        let dy = if j == 0 {
            (self.at(i, 1) - self.at(i, 0)) / h
        } else if j + 1 == g.ny {
            (self.at(i, j) - self.at(i, j - 1)) / h
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        };
        [dx, dy]
    }

    /// Bilinear interpolation of the nodal gradients.
    pub fn gradient_at(&self, p: Point) -> Option<Point> {
        let (i, j, s, t) = cell_coords(&self.grid, p)?;
        let g00 = self.nodal_gradient(i, j);
        let g10 = self.nodal_gradient(i + 1, j);
        let g01 = self.nodal_gradient(i, j + 1);
        let g11 = self.nodal_gradient(i + 1, j + 1);
        let mix = |k: usize| {
            (1.0 - s) * (1.0 - t) * g00[k] + s * (1.0 - t) * g10[k] + (1.0 - s) * t * g01[k] + s * t * g11[k]
        };
        Some([mix(0), mix(1)])
    }

    /// Dirichlet energy density at a node from the adjacent edge differences;
    /// summing `h^2` times it over all nodes gives the edge sum `Σ (Δu)^2`.
    pub fn energy_density(&self, idx: usize) -> f64 {
        let g = &self.grid;
        let (i, j) = g.coords(idx);
        let c = self.values[idx];
        let h2 = g.h * g.h;
        let pair = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => 0.5 * ((a - c).powi(2) + (b - c).powi(2)),
            (Some(a), None) | (None, Some(a)) => (a - c).powi(2),
            (None, None) => 0.0,
        };
        let left = (i > 0).then(|| self.at(i - 1, j));
        let right = (i + 1 < g.nx).then(|| self.at(i + 1, j));
        let down = (j > 0).then(|| self.at(i, j - 1));
        let up = (j + 1 < g.ny).then(|| self.at(i, j + 1));
        (pair(left, right) + pair(down, up)) / h2
    }

    pub fn to_csv_string(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(g.len() * 20);
        writeln!(out, "{},{},{},{},{}", g.nx, g.ny, g.h, g.origin[0], g.origin[1]).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{}", self.at(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "empty field file".into(),
        })?;
        let parts: Vec<&str> = header.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(Error::Parse {
                line: 1,
                reason: "header must be nx,ny,h,ox,oy".into(),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: 1,
            reason: format!("bad {what}"),
        };
        let nx: usize = parts[0].parse().map_err(|_| bad("nx"))?;
        let ny: usize = parts[1].parse().map_err(|_| bad("ny"))?;
        let h: f64 = parts[2].parse().map_err(|_| bad("h"))?;
        let ox: f64 = parts[3].parse().map_err(|_| bad("ox"))?;
        let oy: f64 = parts[4].parse().map_err(|_| bad("oy"))?;
        let grid = Grid::new([ox, oy], h, nx, ny)?;
        let mut values = Vec::with_capacity(grid.len());
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                    line: n + 1,
                    reason: format!("bad value {tok:?}"),
                })?;
                values.push(v);
            }
        }
        Self::new(grid, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Cell containing `p` and the local coordinates in it.
#[inline]
fn cell_coords(grid: &Grid, p: Point) -> Option<(usize, usize, f64, f64)> {
    let fx = (p[0] - grid.origin[0]) / grid.h;
    let fy = (p[1] - grid.origin[1]) / grid.h;
    let tol = 1e-9;
    if fx < -tol || fy < -tol || fx > (grid.nx - 1) as f64 + tol || fy > (grid.ny - 1) as f64 + tol {
        return None;
    }
    let i = (fx.floor().max(0.0) as usize).min(grid.nx - 2);
    let j = (fy.floor().max(0.0) as usize).min(grid.ny - 2);
    Some((i, j, (fx - i as f64).clamp(0.0, 1.0), (fy - j as f64).clamp(0.0, 1.0)))
}

pub(crate) fn interpolate_values(grid: &Grid, values: &[f64], p: Point) -> Option<f64> {
    let (i, j, s, t) = cell_coords(grid, p)?;
    let v = |a: usize, b: usize| values[grid.index(a, b)];
    Some(
        (1.0 - s) * (1.0 - t) * v(i, j)
            + s * (1.0 - t) * v(i + 1, j)
            + (1.0 - s) * t * v(i, j + 1)
            + s * t * v(i + 1, j + 1),
    )
}

pub fn integrate_ball(field: &ScalarField, x: Point, r: f64) -> Result<f64> {
    let quad = BallQuadrature::new(&field.grid, x, r)?;
    Ok(quad.integrate(|idx| field.values[idx]))
}

pub fn average_ball(field: &ScalarField, x: Point, r: f64) -> Result<f64> {
    Ok(integrate_ball(field, x, r)? / (PI * r * r))
}

pub fn integrate_sphere(field: &ScalarField, x: Point, r: f64) -> Result<f64> {
    let quad = SphereQuadrature::new(&field.grid, x, r)?;
    Ok(quad.integrate(|p| field.interpolate(p).unwrap_or(0.0)))
}

pub fn average_sphere(field: &ScalarField, x: Point, r: f64) -> Result<f64> {
    Ok(integrate_sphere(field, x, r)? / (2.0 * PI * r))
}

/// Area of `{u > threshold} ∩ B_r(x)` by cell counting; the part of the ball
/// outside the grid is ignored.
pub fn positivity_volume(field: &ScalarField, x: Point, r: f64, threshold: f64) -> f64 {
    BallQuadrature::clipped(&field.grid, x, r).integrate(|idx| if field.values[idx] > threshold { 1.0 } else { 0.0 })
}

/// `Q = dist(., Gamma)^gamma` sampled at every node of a grid.
#[derive(Debug, Clone)]
pub struct WeightMap {
    pub gamma: f64,
    pub manifold: ManifoldSpec,
    pub q: Vec<f64>,
}

impl WeightMap {
    pub fn new(grid: &Grid, manifold: &ManifoldSpec, gamma: f64) -> Self {
        let q = (0..grid.len())
            .map(|idx| geometry::distance_and_weight(grid.node_at(idx), manifold, gamma).1)
            .collect();
        WeightMap {
            gamma,
            manifold: manifold.clone(),
            q,
        }
    }

    #[inline]
    pub fn q2(&self, idx: usize) -> f64 {
        self.q[idx] * self.q[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::square([0.0, 0.0], 1.0, n).unwrap()
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let f = ScalarField::from_fn(unit_grid(33), |_| 2.5).unwrap();
        assert_eq!(f.gradient(10, 12).unwrap(), [0.0, 0.0]);
        assert!(f.gradient(0, 3).is_err());
        assert!(f.laplacian(32, 3).is_err());
    }

    #[test]
    fn laplacian_of_quadratic_is_exact() {
        let f = ScalarField::from_fn(unit_grid(65), |p| p[0] * p[0]).unwrap();
        assert!((f.laplacian(32, 32).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |n: usize| {
            let f = ScalarField::from_fn(unit_grid(n), |p| (p[0] + 2.0).powi(3) + p[1].powi(2) * p[0] + 1.0).unwrap();
            let (i, j) = f.grid.nearest_node([0.25, 0.5]);
            let p = f.grid.node(i, j);
            let g = f.gradient(i, j).unwrap();
            let exact = [3.0 * (p[0] + 2.0).powi(2) + p[1].powi(2), 2.0 * p[1] * p[0]];
            (g[0] - exact[0]).abs() + (g[1] - exact[1]).abs()
        };
        let ratio = err(33) / err(65);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn sector_laplacian_vanishes_under_refinement() {
        let model = crate::blowup::SectorSolution::new(0.5, -5.0 * PI / 6.0, 1.0);
        let probe = [0.05, -0.6];
        let lap = |n: usize| {
            let f = ScalarField::from_fn(unit_grid(n), |p| model.value(p)).unwrap();
            let (i, j) = f.grid.nearest_node(probe);
            f.laplacian(i, j).unwrap().abs()
        };
        let coarse = lap(65);
        let fine = lap(257);
        assert!(fine < coarse);
        assert!(fine < 1e-3, "{fine}");
    }

    #[test]
    fn ball_and_sphere_examples() {
        let g = unit_grid(257);
        let one = ScalarField::from_fn(g, |_| 1.0).unwrap();
        let area = integrate_ball(&one, [0.0, 0.0], 0.5).unwrap();
        assert!((area - PI / 4.0).abs() < 1e-3, "{area}");

        // odd integrand on a symmetric ball: use a shifted field u = x + 2
        let lin = ScalarField::from_fn(g, |p| p[0] + 2.0).unwrap();
        let v = integrate_ball(&lin, [0.0, 0.0], 0.7).unwrap() - 2.0 * integrate_ball(&one, [0.0, 0.0], 0.7).unwrap();
        assert!(v.abs() < 1e-6, "{v}");

        let sq = ScalarField::from_fn(g, |p| p[0] * p[0] + p[1] * p[1]).unwrap();
        let avg = average_sphere(&sq, [0.0, 0.0], 1.0).unwrap();
        assert!((avg - 1.0).abs() < 1e-4, "{avg}");

        let len = integrate_sphere(&one, [0.1, -0.2], 0.6).unwrap();
        assert!((len - 2.0 * PI * 0.6).abs() < 1e-6);
        assert!(integrate_ball(&one, [0.5, 0.0], 0.6).is_err());
    }

    #[test]
    fn positivity_volume_examples() {
        let g = unit_grid(257);
        let one = ScalarField::from_fn(g, |_| 1.0).unwrap();
        assert!((positivity_volume(&one, [0.0, 0.0], 1.0, 0.0) - PI).abs() < 1e-3);
        assert_eq!(positivity_volume(&ScalarField::zeros(g), [0.0, 0.0], 1.0, 0.0), 0.0);
        let model = crate::blowup::SectorSolution::new(0.5, -5.0 * PI / 6.0, 1.0);
        let sector = ScalarField::from_fn(g, |p| model.value(p)).unwrap();
        let v = positivity_volume(&sector, [0.0, 0.0], 1.0, 0.0);
        assert!((v - PI / 3.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn rejects_negative_values() {
        let err = ScalarField::from_fn(unit_grid(9), |p| -(p[0] * p[0] + p[1] * p[1])).unwrap_err();
        assert!(matches!(err, Error::NegativeValue { .. }));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = Grid::new([-0.3, 1.7], 0.013_7, 11, 7).unwrap();
        let f = ScalarField::from_fn(g, |p| (p[0] * 3.1).sin().abs() * 1e-7 + p[1].exp()).unwrap();
        let text = f.to_csv_string();
        let back = ScalarField::from_csv_str(&text).unwrap();
        assert_eq!(back.grid, f.grid);
        for (a, b) in back.values.iter().zip(&f.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_csv_string(), text);
    }

    proptest! {
        #[test]
        fn ball_quadrature_reproduces_disk_area(
            cx in -0.4f64..0.4, cy in -0.4f64..0.4, r in 0.1f64..0.55,
        ) {
            let g = unit_grid(129);
            let area = BallQuadrature::new(&g, [cx, cy], r).unwrap().area();
            let exact = PI * r * r;
            prop_assert!((area - exact).abs() / exact <= 2.0 * g.h / r);
        }
    }
}
