//! Weiss `(1 + gamma)`-density, its almost-monotonicity audit, the
//! homogeneity deficit, and volume densities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{self, BallQuadrature, ScalarField, SphereQuadrature, WeightMap};
use crate::geometry::{self, Point};

/// Below this fraction of the ball a point is flagged degenerate.
pub const THETA_CUT: f64 = 0.05;
/// Below this value the Weiss density is classified degenerate.
pub const WEISS_CUT: f64 = 0.05;
/// Smallest admissible radius, in grid spacings.
pub const MIN_RADIUS_CELLS: f64 = 4.0;

pub fn weiss_density(u: &ScalarField, weights: &WeightMap, x: Point, r: f64) -> Result<f64> {
    let h = u.grid.h;
    if r < MIN_RADIUS_CELLS * h * (1.0 - 1e-12) {
        return Err(Error::RadiusTooSmall {
            radius: r,
            minimum: MIN_RADIUS_CELLS * h,
        });
    }
    let gamma = weights.gamma;
    let ball = BallQuadrature::new(&u.grid, x, r)?;
    let bulk = ball.integrate(|idx| {
        let chi = if u.values[idx] > 0.0 { weights.q2(idx) } else { 0.0 };
        u.energy_density(idx) + chi
    });
    let sphere = SphereQuadrature::new(&u.grid, x, r)?;
    let trace = sphere.integrate(|p| u.interpolate(p).unwrap_or(0.0).powi(2));
    let n = 2.0;
    Ok(bulk / r.powf(n + 2.0 * gamma) - (1.0 + gamma) * trace / r.powf(n + 1.0 + 2.0 * gamma))
}

/// `r^{-(n + 2 gamma)} ∫_{B_r} Q^2 χ`, the value the density takes on
/// homogeneous minimizers.
pub fn weighted_volume(u: &ScalarField, weights: &WeightMap, x: Point, r: f64) -> Result<f64> {
    let ball = BallQuadrature::new(&u.grid, x, r)?;
    let v = ball.integrate(|idx| if u.values[idx] > 0.0 { weights.q2(idx) } else { 0.0 });
    Ok(v / r.powf(2.0 + 2.0 * weights.gamma))
}

/// Drift allowance `16 (gamma / alpha) [Γ]_α R^α`.
pub fn drift_allowance(gamma: f64, alpha: f64, seminorm: f64, r: f64) -> f64 {
    16.0 * gamma / alpha * seminorm * r.powf(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeissProfile {
    pub point: Point,
    /// Strictly decreasing.
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
    pub allowance: Vec<f64>,
}

impl WeissProfile {
    pub fn compute(
        u: &ScalarField,
        weights: &WeightMap,
        x: Point,
        scales: &[f64],
        seminorm: f64,
        alpha: f64,
    ) -> Result<Self> {
        if scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("scales", "must be strictly decreasing"));
        }
        let values = scales
            .iter()
            .map(|&r| weiss_density(u, weights, x, r))
            .collect::<Result<Vec<_>>>()?;
        let allowance = scales
            .iter()
            .map(|&r| drift_allowance(weights.gamma, alpha, seminorm, r))
            .collect();
        Ok(WeissProfile {
            point: x,
            scales: scales.to_vec(),
            values,
            allowance,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,r,W,allowance\n");
        for k in 0..self.scales.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.point[0], self.point[1], self.scales[k], self.values[k], self.allowance[k]
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub r: f64,
    pub big_r: f64,
    pub w_r: f64,
    pub w_big_r: f64,
    pub excess: f64,
}

/// Pairs `r < R` with `W(r) > W(R) + 16 (gamma / alpha) [Γ]_α R^α + tolerance`.
pub fn monotonicity_audit(
    profile: &WeissProfile,
    seminorm: f64,
    alpha: f64,
    gamma: f64,
    tolerance: f64,
) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    let s = &profile.scales;
    let w = &profile.values;
    for a in 0..s.len() {
        for b in 0..s.len() {
            if s[a] >= s[b] {
                continue;
            }
            let bound = w[b] + drift_allowance(gamma, alpha, seminorm, s[b]) + tolerance;
            if w[a] > bound {
                out.push(MonotonicityViolation {
                    r: s[a],
                    big_r: s[b],
                    w_r: w[a],
                    w_big_r: w[b],
                    excess: w[a] - bound,
                });
            }
        }
    }
    out
}

/// `∫_{r1}^{r2} s^{-(n+2+2γ)} ∫_{∂B_s} (∇u·(y - x) - (1+γ) u)^2 dσ ds`
/// with one midpoint shell per grid spacing.
pub fn homogeneity_deficit(u: &ScalarField, x: Point, gamma: f64, r1: f64, r2: f64) -> Result<f64> {
    if !(r1 > 0.0 && r1 < r2) {
        return Err(Error::invalid("annulus", "need 0 < r1 < r2"));
    }
    if !u.grid.contains_ball(x, r2) {
        return Err(Error::OutsideGrid {
            x: x[0],
            y: x[1],
            radius: r2,
        });
    }
    let shells = ((r2 - r1) / u.grid.h).ceil().max(1.0) as usize;
    let ds = (r2 - r1) / shells as f64;
    let mut total = 0.0;
    for k in 0..shells {
        let s = r1 + (k as f64 + 0.5) * ds;
        let sphere = SphereQuadrature::with_samples(x, s, field::sphere_samples(s, u.grid.h));
        let inner = sphere.integrate(|p| {
            let grad = u.gradient_at(p).unwrap_or([0.0; 2]);
            let v = u.interpolate(p).unwrap_or(0.0);
            let e = geometry::dot(grad, geometry::sub(p, x)) - (1.0 + gamma) * v;
            e * e
        });
        total += inner * s.powf(-(4.0 + 2.0 * gamma)) * ds;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub point: Point,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    /// Mean of the two smallest radii.
    pub limit: f64,
    pub degenerate: bool,
}

pub fn volume_density(u: &ScalarField, x: Point, radii: &[f64]) -> Result<DensityEstimate> {
    let min = MIN_RADIUS_CELLS * u.grid.h;
    if let Some(&r) = radii.iter().find(|&&r| r < min * (1.0 - 1e-12)) {
        return Err(Error::RadiusTooSmall {
            radius: r,
            minimum: min,
        });
    }
    if radii.is_empty() {
        return Err(Error::invalid("radii", "empty"));
    }
    let theta: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let ball = BallQuadrature::clipped(&u.grid, x, r);
            ball.integrate(|idx| if u.values[idx] > 0.0 { 1.0 } else { 0.0 }) / ball.area()
        })
        .collect();
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let limit = if order.len() >= 2 {
        0.5 * (theta[order[0]] + theta[order[1]])
    } else {
        theta[order[0]]
    };
    Ok(DensityEstimate {
        point: x,
        radii: radii.to_vec(),
        theta,
        limit,
        degenerate: limit < THETA_CUT,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum LowerBoundEntry {
    Classified {
        point: Point,
        /// `2 W(r_min) - W(2 r_min)`.
        estimate: f64,
        raw: f64,
        degenerate: bool,
    },
    /// `u > 0` on the whole probe ball: not a free-boundary point.
    Rejected { point: Point, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundProbe {
    pub r_min: f64,
    pub entries: Vec<LowerBoundEntry>,
    /// Largest gap between consecutive sorted estimates, and the value
    /// below which the lower cluster lies.
    pub gap: Option<(f64, f64)>,
}

pub fn energy_lower_bound_probe(u: &ScalarField, weights: &WeightMap, points: &[Point]) -> Result<LowerBoundProbe> {
    let r_min = 8.0 * u.grid.h;
    let mut entries = Vec::new();
    for &x in points {
        let ball = BallQuadrature::new(&u.grid, x, r_min)?;
        if ball.entries.iter().all(|&(idx, _)| u.values[idx] > 0.0) {
            entries.push(LowerBoundEntry::Rejected {
                point: x,
                reason: "positive on the whole probe ball".into(),
            });
            continue;
        }
        let raw = weiss_density(u, weights, x, r_min)?;
        let coarse = weiss_density(u, weights, x, 2.0 * r_min)?;
        let estimate = 2.0 * raw - coarse;
        entries.push(LowerBoundEntry::Classified {
            point: x,
            estimate,
            raw,
            degenerate: estimate < WEISS_CUT,
        });
    }
    let mut values: Vec<f64> = entries
        .iter()
        .filter_map(|e| match e {
            LowerBoundEntry::Classified { estimate, .. } => Some(*estimate),
            _ => None,
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let gap = values
        .windows(2)
        .map(|w| (w[1] - w[0], w[0]))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    Ok(LowerBoundProbe { r_min, entries, gap })
}
