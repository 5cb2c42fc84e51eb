//! Rescalings `u_{x,r}` and `T_{x,r} u`, the homogeneous sector model, blow-up
//! sequences and symmetry deficits.
//!
//! Every `L^2(B_1)` quantity here goes through one polar quadrature
//! ([`POLAR_ANGLES`] angles, [`POLAR_RADII`] midpoint radii) so deficits from
//! different comparison classes are directly comparable. With that shared
//! rule the best `(1 + gamma)`-homogeneous comparison is a closed-form radial
//! projection, and the two-sided profile class reduces to a circular
//! correlation of the same radial moments.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField, SphereQuadrature, WeightMap};
use crate::geometry::{golden_section, Point};
use crate::weiss;

/// Nodes per axis of the fixed reference grid on `B_1`.
pub const REFERENCE_NODES: usize = 129;
/// Candidate directions for the one-symmetric comparison class.
pub const DIRECTIONS: usize = 720;
/// Candidate rotations when aligning a blow-up with the sector model.
pub const ROTATIONS: usize = 720;
pub const POLAR_ANGLES: usize = 720;
pub const POLAR_RADII: usize = 128;
/// Default ratio between the two radii of the rigidity probe.
pub const RIGIDITY_RATIO: f64 = 0.25;

/// Any function that can be evaluated on the unit ball.
pub trait DiskField {
    fn value(&self, y: Point) -> f64;
}

impl<F: Fn(Point) -> f64> DiskField for F {
    fn value(&self, y: Point) -> f64 {
        self(y)
    }
}

/// `A r^{1+gamma} sin((1+gamma) theta')` on the sector
/// `0 <= theta' = theta - orientation <= pi / (1 + gamma)`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorSolution {
    pub gamma: f64,
    pub orientation: f64,
    pub amplitude: f64,
}

impl SectorSolution {
    pub fn new(gamma: f64, orientation: f64, amplitude: f64) -> Self {
        SectorSolution {
            gamma,
            orientation,
            amplitude,
        }
    }

    /// Sector hanging below the horizontal axis, symmetric about the
    /// downward vertical, with the amplitude for which `|∇u| = Q` holds on
    /// both edges when `Q = |x_2|^gamma`.
    pub fn hanging(gamma: f64) -> Self {
        let aperture = PI / (1.0 + gamma);
        SectorSolution::new(gamma, -PI / 2.0 - aperture / 2.0, hanging_amplitude(gamma))
    }

    pub fn aperture(&self) -> f64 {
        PI / (1.0 + self.gamma)
    }

    /// Angular profile on the unit circle at absolute angle `theta`.
    #[inline]
    pub fn angular(&self, theta: f64) -> f64 {
        let t = (theta - self.orientation).rem_euclid(2.0 * PI);
        if t <= self.aperture() {
            (self.amplitude * ((1.0 + self.gamma) * t).sin()).max(0.0)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn value(&self, p: Point) -> f64 {
        let r = p[0].hypot(p[1]);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(1.0 + self.gamma) * self.angular(p[1].atan2(p[0]))
    }

    pub fn sample(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |p| self.value(p)).expect("sector values are nonnegative")
    }
}

impl DiskField for SectorSolution {
    fn value(&self, y: Point) -> f64 {
        SectorSolution::value(self, y)
    }
}

/// Amplitude making the hanging sector satisfy `|∇u| = |x_2|^gamma` on its edges.
pub fn hanging_amplitude(gamma: f64) -> f64 {
    let half = PI / (2.0 * (1.0 + gamma));
    half.cos().powf(gamma) / (1.0 + gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by `r^{1+gamma}`.
    PowerLaw,
    /// Divide by the `L^2(∂B_1)` norm of the rescaled trace.
    Trace,
}

/// A rescaled copy of a field resampled on the reference grid over `[-1, 1]^2`.
#[derive(Debug, Clone)]
pub struct Rescaling {
    pub center: Point,
    pub scale: f64,
    pub normalization: Normalization,
    /// Value the raw samples were divided by.
    pub constant: f64,
    pub field: ScalarField,
}

impl DiskField for Rescaling {
    fn value(&self, y: Point) -> f64 {
        self.field.interpolate(y).unwrap_or(0.0)
    }
}

pub fn reference_grid() -> Grid {
    Grid::square([0.0, 0.0], 1.0, REFERENCE_NODES).expect("valid reference grid")
}

pub fn rescale(u: &ScalarField, x: Point, r: f64, normalization: Normalization, gamma: f64) -> Result<Rescaling> {
    if !(r > 0.0) || !u.grid.contains_ball(x, r) {
        return Err(Error::OutsideGrid {
            x: x[0],
            y: x[1],
            radius: r,
        });
    }
    let grid = reference_grid();
    let reach = 1.0 + 2.0 * grid.h;
    let mut values = vec![0.0; grid.len()];
    for (idx, v) in values.iter_mut().enumerate() {
        let y = grid.node_at(idx);
        if y[0].hypot(y[1]) > reach {
            continue;
        }
        let p = [x[0] + r * y[0], x[1] + r * y[1]];
        *v = u.interpolate(p).unwrap_or(0.0);
    }
    let mut field = ScalarField::new(grid, values)?;
    let constant = match normalization {
        Normalization::PowerLaw => r.powf(1.0 + gamma),
        Normalization::Trace => {
            let norm = trace_norm(&field);
            if !(norm > 1e-150) {
                return Err(Error::VanishingTrace {
                    x: x[0],
                    y: x[1],
                    radius: r,
                });
            }
            norm
        }
    };
    for v in &mut field.values {
        *v /= constant;
    }
    Ok(Rescaling {
        center: x,
        scale: r,
        normalization,
        constant,
        field,
    })
}

/// `L^2(∂B_1)` norm of a field on the reference grid, with the standard
/// sphere quadrature.
pub fn trace_norm(field: &ScalarField) -> f64 {
    let quad = SphereQuadrature::new(&field.grid, [0.0, 0.0], 1.0).expect("unit sphere in reference grid");
    quad.integrate(|p| field.interpolate(p).unwrap_or(0.0).powi(2)).sqrt()
}

/// Polar samples of a field on `B_1` together with its trace on `∂B_1`.
#[derive(Debug, Clone)]
pub struct PolarSamples {
    /// `values[m * POLAR_RADII + k] = u(rho_k, theta_m)`.
    pub values: Vec<f64>,
    pub trace: Vec<f64>,
}

#[inline]
fn polar_angle(m: usize) -> f64 {
    2.0 * PI * m as f64 / POLAR_ANGLES as f64
}

#[inline]
fn polar_radius(k: usize) -> f64 {
    (k as f64 + 0.5) / POLAR_RADII as f64
}

const D_THETA: f64 = 2.0 * PI / POLAR_ANGLES as f64;
const D_RHO: f64 = 1.0 / POLAR_RADII as f64;

impl PolarSamples {
    pub fn of(field: &impl DiskField) -> Self {
        let mut values = Vec::with_capacity(POLAR_ANGLES * POLAR_RADII);
        let mut trace = Vec::with_capacity(POLAR_ANGLES);
        for m in 0..POLAR_ANGLES {
            let (s, c) = polar_angle(m).sin_cos();
            for k in 0..POLAR_RADII {
                let rho = polar_radius(k);
                values.push(field.value([rho * c, rho * s]));
            }
            trace.push(field.value([c, s]));
        }
        PolarSamples { values, trace }
    }

    pub fn trace_norm(&self) -> f64 {
        (self.trace.iter().map(|v| v * v).sum::<f64>() * D_THETA).sqrt()
    }

    /// `T_{0,1}` applied in the polar rule.
    pub fn normalized(mut self) -> Option<Self> {
        let n = self.trace_norm();
        if !(n > 1e-150) {
            return None;
        }
        self.values.iter_mut().for_each(|v| *v /= n);
        self.trace.iter_mut().for_each(|v| *v /= n);
        Some(self)
    }

    pub fn norm2(&self) -> f64 {
        let mut total = 0.0;
        for m in 0..POLAR_ANGLES {
            for k in 0..POLAR_RADII {
                let v = self.values[m * POLAR_RADII + k];
                total += v * v * polar_radius(k);
            }
        }
        total * D_RHO * D_THETA
    }

    /// Radial moments `G_d(theta) = ∫ u(rho, theta) rho^{d+1} d rho`.
    pub fn moments(&self, degree: f64) -> Vec<f64> {
        let weights: Vec<f64> = (0..POLAR_RADII)
            .map(|k| polar_radius(k).powf(degree + 1.0) * D_RHO)
            .collect();
        (0..POLAR_ANGLES)
            .map(|m| {
                let row = &self.values[m * POLAR_RADII..(m + 1) * POLAR_RADII];
                row.iter().zip(&weights).map(|(v, w)| v * w).sum()
            })
            .collect()
    }

    pub fn distance(&self, other: &PolarSamples) -> f64 {
        let mut total = 0.0;
        for m in 0..POLAR_ANGLES {
            for k in 0..POLAR_RADII {
                let d = self.values[m * POLAR_RADII + k] - other.values[m * POLAR_RADII + k];
                total += d * d * polar_radius(k);
            }
        }
        (total * D_RHO * D_THETA).sqrt()
    }
}

/// `∫ rho^{2d+1} d rho` in the polar rule.
fn radial_mass(degree: f64) -> f64 {
    (0..POLAR_RADII)
        .map(|k| polar_radius(k).powf(2.0 * degree + 1.0) * D_RHO)
        .sum()
}

fn l2_angle(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() * D_THETA).sqrt()
}

/// The comparison family realising a deficit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum ComparisonClass {
    Homogeneous { degree: f64 },
    TwoSidedProfile { degree: f64 },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryDeficit {
    pub j: usize,
    pub deficit: f64,
    pub class: ComparisonClass,
    /// Angle of `e` for the profile class.
    pub direction: Option<f64>,
    /// Unnormalised `(a, b)` of `a (x.e)_+^d + b (x.e)_-^d`.
    pub coefficients: Option<(f64, f64)>,
}

/// Homogeneity degrees of the comparison functions: the blow-up degree
/// `1 + gamma` and the flat free-boundary degree 1.
pub fn comparison_degrees(gamma: f64) -> Vec<f64> {
    if (gamma).abs() < 1e-12 {
        vec![1.0]
    } else {
        vec![1.0 + gamma, 1.0]
    }
}

/// Distance in `L^2(B_1)` from `T_{0,1} field` to the nearest normalised
/// `j`-symmetric homogeneous function (`j` in {0, 1}).
pub fn symmetry_deficit(field: &impl DiskField, j: usize, gamma: f64) -> Result<SymmetryDeficit> {
    if j > 1 {
        return Err(Error::SymmetryDimension { j });
    }
    let samples = PolarSamples::of(field).normalized().ok_or(Error::VanishingTrace {
        x: 0.0,
        y: 0.0,
        radius: 1.0,
    })?;
    Ok(deficit_from_samples(&samples, j, gamma))
}

/// Deficit with respect to functions invariant in every direction
/// (constants); the top of the symmetry hierarchy in the plane.
pub fn translation_deficit(field: &impl DiskField) -> Result<f64> {
    let samples = PolarSamples::of(field).normalized().ok_or(Error::VanishingTrace {
        x: 0.0,
        y: 0.0,
        radius: 1.0,
    })?;
    Ok(translation_from_samples(&samples))
}

pub(crate) fn translation_from_samples(samples: &PolarSamples) -> f64 {
    constant_distance2(samples, samples.norm2()).max(0.0).sqrt()
}

fn constant_distance2(samples: &PolarSamples, norm2: f64) -> f64 {
    let g0 = samples.moments(0.0);
    let mean: f64 = g0.iter().sum::<f64>() * D_THETA;
    norm2 - 2.0 * mean / (2.0 * PI).sqrt() + radial_mass(0.0)
}

pub(crate) fn deficit_from_samples(samples: &PolarSamples, j: usize, gamma: f64) -> SymmetryDeficit {
    let norm2 = samples.norm2();
    let mut best = SymmetryDeficit {
        j,
        deficit: constant_distance2(samples, norm2),
        class: ComparisonClass::Constant,
        direction: None,
        coefficients: None,
    };
    for degree in comparison_degrees(gamma) {
        let g = samples.moments(degree);
        let mass = radial_mass(degree);
        if j == 0 {
            let d2 = norm2 - 2.0 * l2_angle(&g) + mass;
            if d2 < best.deficit {
                best = SymmetryDeficit {
                    j,
                    deficit: d2,
                    class: ComparisonClass::Homogeneous { degree },
                    direction: None,
                    coefficients: None,
                };
            }
        } else {
            let (phi, value, coeffs) = best_profile(&g, degree);
            let d2 = norm2 - 2.0 * value + mass;
            if d2 < best.deficit {
                best = SymmetryDeficit {
                    j,
                    deficit: d2,
                    class: ComparisonClass::TwoSidedProfile { degree },
                    direction: Some(phi),
                    coefficients: Some(coeffs),
                };
            }
        }
    }
    best.deficit = best.deficit.max(0.0).sqrt();
    best
}

/// `max_{a,b >= 0} <G, psi_e> ` over unit profiles `psi_e ∝ a K(. - phi) + b K(. - phi - pi)`.
fn profile_score(g: &[f64], degree: f64, phi: f64) -> (f64, (f64, f64)) {
    let mut up = 0.0;
    let mut um = 0.0;
    let mut p = 0.0;
    for (m, gm) in g.iter().enumerate() {
        let c = (polar_angle(m) - phi).cos();
        let k = c.abs().powf(degree);
        if c > 0.0 {
            up += gm * k;
            p += k * k;
        } else if c < 0.0 {
            um += gm * k;
        }
    }
    up *= D_THETA;
    um *= D_THETA;
    p *= D_THETA;
    let (a, b) = (up.max(0.0), um.max(0.0));
    let value = if a == 0.0 && b == 0.0 {
        up.max(um) / p.sqrt()
    } else {
        a.hypot(b) / p.sqrt()
    };
    // least-squares coefficients in L^2(B_1): <u, P> / ||P||^2
    let q = p * radial_mass(degree);
    (value, (a / q, b / q))
}

fn best_profile(g: &[f64], degree: f64) -> (f64, f64, (f64, f64)) {
    let step = PI / DIRECTIONS as f64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for e in 0..DIRECTIONS {
        let phi = step * e as f64;
        let v = profile_score(g, degree, phi).0;
        if v > best.1 {
            best = (phi, v);
        }
    }
    let phi = golden_section(
        &|phi| -profile_score(g, degree, phi).0,
        best.0 - step,
        best.0 + step,
        1e-10,
    );
    let (value, coeffs) = profile_score(g, degree, phi);
    if value >= best.1 {
        (phi.rem_euclid(PI), value, coeffs)
    } else {
        let (v, c) = profile_score(g, degree, best.0);
        (best.0, v, c)
    }
}

/// Best rotation of the normalised sector model against a normalised field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alignment {
    pub orientation: f64,
    pub distance: f64,
}

pub fn align_with_sector(field: &impl DiskField, gamma: f64) -> Result<Alignment> {
    let samples = PolarSamples::of(field).normalized().ok_or(Error::VanishingTrace {
        x: 0.0,
        y: 0.0,
        radius: 1.0,
    })?;
    let degree = 1.0 + gamma;
    let g = samples.moments(degree);
    let model = SectorSolution::new(gamma, 0.0, 1.0);
    let mut psi: Vec<f64> = (0..POLAR_ANGLES).map(|m| model.angular(polar_angle(m))).collect();
    let n = l2_angle(&psi);
    psi.iter_mut().for_each(|v| *v /= n);
    let norm2 = samples.norm2();
    let mass = radial_mass(degree);
    let shift_per_rotation = POLAR_ANGLES / ROTATIONS;
    let mut best = Alignment {
        orientation: 0.0,
        distance: f64::INFINITY,
    };
    for rot in 0..ROTATIONS {
        let shift = rot * shift_per_rotation;
        let mut inner = 0.0;
        for m in 0..POLAR_ANGLES {
            inner += g[m] * psi[(m + POLAR_ANGLES - shift) % POLAR_ANGLES];
        }
        let d2 = norm2 - 2.0 * inner * D_THETA + mass;
        let d = d2.max(0.0).sqrt();
        if d < best.distance {
            best = Alignment {
                orientation: polar_angle(shift),
                distance: d,
            };
        }
    }
    Ok(best)
}

/// `L^2(B_1)` distance between two fields in the polar rule.
pub fn l2_distance(a: &impl DiskField, b: &impl DiskField) -> f64 {
    PolarSamples::of(a).distance(&PolarSamples::of(b))
}

#[derive(Debug, Clone)]
pub struct BlowupSequence {
    pub scales: Vec<f64>,
    pub rescalings: Vec<Rescaling>,
    /// `||T_{r_i} - T_{r_{i+1}}||_{L^2(B_1)}`.
    pub distances: Vec<f64>,
    /// A scale had vanishing trace and the sequence stops there.
    pub truncated: bool,
    pub converged: bool,
}

pub fn blowup_sequence(
    u: &ScalarField,
    x: Point,
    gamma: f64,
    scales: &[f64],
    tolerance: f64,
) -> Result<BlowupSequence> {
    let mut rescalings = Vec::new();
    let mut used = Vec::new();
    let mut truncated = false;
    for &r in scales {
        match rescale(u, x, r, Normalization::Trace, gamma) {
            Ok(t) => {
                rescalings.push(t);
                used.push(r);
            }
            Err(Error::VanishingTrace { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let polar: Vec<PolarSamples> = rescalings.iter().map(PolarSamples::of).collect();
    let distances: Vec<f64> = polar.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let converged = !truncated && distances.last().is_some_and(|&d| d < tolerance);
    Ok(BlowupSequence {
        scales: used,
        rescalings,
        distances,
        truncated,
        converged,
    })
}

/// Dyadic scales `top, top/2, ...` not below `bottom`.
pub fn dyadic_scales(top: f64, bottom: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = top;
    while r >= bottom * (1.0 - 1e-12) {
        out.push(r);
        r *= 0.5;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RigidityProbe {
    pub scale: f64,
    pub weiss_drop: f64,
    pub deficit: f64,
}

/// `(W(x, scale) - W(x, RIGIDITY_RATIO * scale), 0-symmetry deficit of T_{x,scale} u)`.
pub fn rigidity_probe(u: &ScalarField, weights: &WeightMap, x: Point, scale: f64) -> Result<RigidityProbe> {
    let gamma = weights.gamma;
    let outer = weiss::weiss_density(u, weights, x, scale)?;
    let inner = weiss::weiss_density(u, weights, x, RIGIDITY_RATIO * scale)?;
    let t = rescale(u, x, scale, Normalization::Trace, gamma)?;
    let deficit = symmetry_deficit(&t, 0, gamma)?.deficit;
    Ok(RigidityProbe {
        scale,
        weiss_drop: outer - inner,
        deficit,
    })
}
