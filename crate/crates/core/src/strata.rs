//! Quantitative strata, the Σ / S split of singular points on `Γ`,
//! Minkowski-content fits, Jones β-numbers and packing sums.

use std::f64::consts::LN_2;

use nalgebra::{Matrix2, SymmetricEigen};
use serde::Serialize;

use crate::blowup::{self, Normalization, PolarSamples};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{self, log_log_slope, ManifoldKind, ManifoldSpec, Point};
use crate::weiss::{self, THETA_CUT};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl PointMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::invalid("weights", "one weight per point"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", format!("{w} is not a positive finite mass")));
        }
        Ok(PointMeasure { points, weights })
    }

    pub fn unit(points: Vec<Point>) -> Self {
        let weights = vec![1.0; points.len()];
        PointMeasure { points, weights }
    }

    pub fn mass_in(&self, x: Point, r: f64) -> f64 {
        self.in_ball(x, r).map(|(_, w)| w).sum()
    }

    fn in_ball(&self, x: Point, r: f64) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(move |(p, _)| geometry::distance(**p, x) <= r)
            .map(|(p, w)| (*p, *w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaProfile {
    pub center: Point,
    pub radius: f64,
    pub k: usize,
    pub beta2: f64,
    /// Descending.
    pub eigenvalues: [f64; 2],
    pub center_of_mass: Point,
    pub mass: f64,
}

/// `β² = μ(B_r) / r^{k+2} (λ_{k+1} + ... + λ_n)` from the normalised second
/// moments of `μ` restricted to the closed ball `B_r(x)`.
pub fn beta_number(mu: &PointMeasure, x: Point, r: f64, k: usize) -> Result<BetaProfile> {
    if k > 2 {
        return Err(Error::invalid("k", "plane dimension exceeds the ambient dimension"));
    }
    let mass = mu.mass_in(x, r);
    if !(mass > 0.0) {
        return Err(Error::EmptyBall {
            x: x[0],
            y: x[1],
            radius: r,
        });
    }
    let mut com = [0.0; 2];
    for (p, w) in mu.in_ball(x, r) {
        com[0] += w * p[0];
        com[1] += w * p[1];
    }
    com = geometry::scale(com, 1.0 / mass);
    let mut b = Matrix2::zeros();
    for (p, w) in mu.in_ball(x, r) {
        let d = geometry::sub(p, com);
        b[(0, 0)] += w * d[0] * d[0];
        b[(0, 1)] += w * d[0] * d[1];
        b[(1, 1)] += w * d[1] * d[1];
    }
    b[(1, 0)] = b[(0, 1)];
    b /= mass;
    let eig = SymmetricEigen::new(b);
    let mut lambda = [eig.eigenvalues[0].max(0.0), eig.eigenvalues[1].max(0.0)];
    if lambda[0] < lambda[1] {
        lambda.swap(0, 1);
    }
    let tail: f64 = lambda[k.min(2)..].iter().sum();
    Ok(BetaProfile {
        center: x,
        radius: r,
        k,
        beta2: mass / r.powi(k as i32 + 2) * tail,
        eigenvalues: lambda,
        center_of_mass: com,
        mass,
    })
}

/// `β²` for lines (`k = 1`) by direct search over directions: a 3600-step
/// scan refined by golden section, with the weighted mean as offset. A
/// cross-check on [`beta_number`] that does not use the eigen-solver.
pub fn beta_by_direction_search(mu: &PointMeasure, x: Point, r: f64) -> Result<f64> {
    let pts: Vec<(Point, f64)> = mu.in_ball(x, r).collect();
    let mass: f64 = pts.iter().map(|(_, w)| w).sum();
    if !(mass > 0.0) {
        return Err(Error::EmptyBall {
            x: x[0],
            y: x[1],
            radius: r,
        });
    }
    let cost = |theta: f64| {
        let n = [-theta.sin(), theta.cos()];
        let c = pts.iter().map(|(p, w)| w * geometry::dot(*p, n)).sum::<f64>() / mass;
        pts.iter()
            .map(|(p, w)| w * (geometry::dot(*p, n) - c).powi(2))
            .sum::<f64>()
    };
    let m = 3600;
    let step = std::f64::consts::PI / m as f64;
    let best = (0..m)
        .map(|i| i as f64 * step)
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .expect("nonempty scan");
    let t = geometry::golden_section(&cost, best - step, best + step, 1e-14);
    Ok(cost(t).min(cost(best)) / r.powi(3))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReifenbergSum {
    pub total: f64,
    /// `(s, Σ_z μ_z β²(z, s))` per dyadic scale.
    pub per_scale: Vec<(f64, f64)>,
    /// `r^k`, the line the sum is compared against.
    pub reference: f64,
}

/// Dyadic approximation of `∫_0^r ∫_{B_{2r}(x)} β²(z, s) dμ(z) ds / s`:
/// scales `s = r 2^{-i}` each carry `ln 2`; scales below half the smallest
/// inter-point distance contribute nothing and are skipped.
pub fn reifenberg_sum(mu: &PointMeasure, x: Point, r: f64, k: usize) -> Result<ReifenbergSum> {
    let mut gap = f64::INFINITY;
    for (a, p) in mu.points.iter().enumerate() {
        for q in &mu.points[a + 1..] {
            let d = geometry::distance(*p, *q);
            if d > 0.0 {
                gap = gap.min(d);
            }
        }
    }
    let mut per_scale = Vec::new();
    let mut total = 0.0;
    if gap.is_finite() {
        let mut s = r;
        while s >= 0.5 * gap {
            let mut layer = 0.0;
            for (z, w) in mu.in_ball(x, 2.0 * r) {
                layer += w * beta_number(mu, z, s, k)?.beta2;
            }
            per_scale.push((s, layer));
            total += layer * LN_2;
            s *= 0.5;
        }
    }
    Ok(ReifenbergSum {
        total,
        per_scale,
        reference: r.powi(k as i32),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingResult {
    pub sum: f64,
    /// Index pairs of overlapping balls.
    pub overlaps: Vec<(usize, usize)>,
}

/// `Σ r_q^j` over balls, listing overlapping pairs (touching is allowed).
pub fn packing_check(balls: &[(Point, f64)], j: usize) -> PackingResult {
    let sum = balls.iter().map(|(_, r)| r.powi(j as i32)).sum();
    let mut overlaps = Vec::new();
    for a in 0..balls.len() {
        for b in a + 1..balls.len() {
            if geometry::distance(balls[a].0, balls[b].0) < balls[a].1 + balls[b].1 - 1e-12 {
                overlaps.push((a, b));
            }
        }
    }
    PackingResult { sum, overlaps }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularTag {
    /// Volume density at least the cut: an `S` point.
    NonDegenerate,
    /// Volume density below the cut: a `Σ` point.
    Degenerate,
    /// Vanishing trace at some tested scale.
    DegenerateCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointStrata {
    pub point: Point,
    pub scales: Vec<f64>,
    /// `deficit[j][i]`: distance of `T_{x, scales[i]} u` from the
    /// `(j + 1)`-symmetric class.
    pub deficits: [Vec<f64>; 2],
    /// Membership in `S^j_{ε, ρ}` for `j = 0, 1`.
    pub in_stratum: [bool; 2],
    pub theta: f64,
    pub tag: SingularTag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumReport {
    pub epsilon: f64,
    pub rho: f64,
    pub points: Vec<PointStrata>,
}

impl StratumReport {
    /// Membership recomputed for other thresholds from the stored deficits.
    pub fn membership(&self, index: usize, j: usize, epsilon: f64, rho: f64) -> bool {
        let p = &self.points[index];
        if p.tag == SingularTag::DegenerateCandidate {
            return false;
        }
        p.scales
            .iter()
            .zip(&p.deficits[j])
            .filter(|(s, _)| **s >= rho * (1.0 - 1e-12))
            .all(|(_, d)| *d >= epsilon)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,r,j,deficit\n");
        for p in &self.points {
            for j in 0..2 {
                for (r, d) in p.scales.iter().zip(&p.deficits[j]) {
                    s.push_str(&format!("{},{},{},{},{}\n", p.point[0], p.point[1], r, j + 1, d));
                }
            }
        }
        s
    }
}

/// Distance from `x` to the nearest fixed node of `u`.
pub fn distance_to_boundary(u: &ScalarField, x: Point) -> f64 {
    (0..u.grid.len())
        .filter(|&idx| u.dirichlet[idx])
        .map(|idx| geometry::distance(u.grid.node_at(idx), x))
        .fold(f64::INFINITY, f64::min)
}

/// Dyadic scales `R, R/2, ...` down to `rho`, with `R` the distance to the
/// domain boundary capped so the ball stays in the grid.
pub fn strata_scales(u: &ScalarField, x: Point, rho: f64) -> Vec<f64> {
    let g = &u.grid;
    let up = g.upper();
    let in_grid = (x[0] - g.origin[0])
        .min(up[0] - x[0])
        .min(x[1] - g.origin[1])
        .min(up[1] - x[1]);
    let top = distance_to_boundary(u, x).min(in_grid);
    blowup::dyadic_scales(top, rho)
}

/// Radii for volume densities: `16h` and `32h`, clear of the few-cell
/// lattice defect at a free-boundary tip.
pub fn density_radii(h: f64) -> [f64; 2] {
    [32.0 * h, 16.0 * h]
}

/// Radius of the ball that decides whether a `Γ` sample meets the free boundary.
pub const DETECTION_CELLS: f64 = 8.0;

pub fn classify_strata(
    u: &ScalarField,
    gamma: f64,
    candidates: &[Point],
    epsilon: f64,
    rho: f64,
) -> Result<StratumReport> {
    let h = u.grid.h;
    if rho < 8.0 * h * (1.0 - 1e-12) {
        return Err(Error::RadiusTooSmall {
            radius: rho,
            minimum: 8.0 * h,
        });
    }
    let mut points = Vec::new();
    for &x in candidates {
        let all_scales = strata_scales(u, x, rho);
        let mut scales = Vec::new();
        let mut deficits = [Vec::new(), Vec::new()];
        let mut vanished = false;
        for &r in &all_scales {
            let t = match blowup::rescale(u, x, r, Normalization::Trace, gamma) {
                Ok(t) => t,
                Err(Error::VanishingTrace { .. }) => {
                    vanished = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let samples = PolarSamples::of(&t).normalized();
            let Some(samples) = samples else {
                vanished = true;
                break;
            };
            scales.push(r);
            deficits[0].push(blowup::deficit_from_samples(&samples, 1, gamma).deficit);
            deficits[1].push(blowup::translation_from_samples(&samples));
        }
        let theta = weiss::volume_density(u, x, &density_radii(h))?.limit;
        let tag = if vanished {
            SingularTag::DegenerateCandidate
        } else if theta < THETA_CUT {
            SingularTag::Degenerate
        } else {
            SingularTag::NonDegenerate
        };
        let in_stratum = if vanished || scales.is_empty() {
            [false, false]
        } else {
            [
                deficits[0].iter().all(|&d| d >= epsilon),
                deficits[1].iter().all(|&d| d >= epsilon),
            ]
        };
        points.push(PointStrata {
            point: x,
            scales,
            deficits,
            in_stratum,
            theta,
            tag,
        });
    }
    Ok(StratumReport { epsilon, rho, points })
}

/// Points of `Γ`, spaced by `h`, whose `8h`-ball sees both `u > τ` and
/// `u <= τ`, at least `margin` away from the domain boundary. Returned in
/// clusters of points closer than `4h`.
pub fn gamma_free_boundary_clusters(
    u: &ScalarField,
    manifold: &ManifoldSpec,
    tau: f64,
    margin: f64,
) -> Vec<Vec<Point>> {
    let g = &u.grid;
    let h = g.h;
    let samples: Vec<Point> = match manifold.kind {
        ManifoldKind::SinglePoint => vec![manifold.anchor],
        _ => {
            let lo = g.origin[0] - manifold.anchor[0];
            let hi = g.upper()[0] - manifold.anchor[0];
            let n = ((hi - lo) / h).round() as i64;
            (0..=n).map(|k| manifold.point_at(lo + k as f64 * h)).collect()
        }
    };
    let reach = DETECTION_CELLS.ceil() as i64 + 1;
    let mut hits = Vec::new();
    for x in samples {
        if !g.contains_ball(x, margin) || distance_to_boundary(u, x) < margin {
            continue;
        }
        let (ci, cj) = g.nearest_node(x);
        let (mut above, mut below) = (false, false);
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let (i, j) = (ci as i64 + di, cj as i64 + dj);
                if i < 0 || j < 0 || i >= g.nx as i64 || j >= g.ny as i64 {
                    continue;
                }
                let p = g.node(i as usize, j as usize);
                if geometry::distance(p, x) > DETECTION_CELLS * h {
                    continue;
                }
                if u.at(i as usize, j as usize) > tau {
                    above = true;
                } else {
                    below = true;
                }
            }
        }
        if above && below {
            hits.push(x);
        }
    }
    let mut clusters: Vec<Vec<Point>> = Vec::new();
    for x in hits {
        match clusters.last_mut() {
            Some(c) if geometry::distance(*c.last().expect("nonempty"), x) < 4.0 * h => c.push(x),
            _ => clusters.push(vec![x]),
        }
    }
    clusters
}

/// Middle member of each cluster.
pub fn cluster_representatives(clusters: &[Vec<Point>]) -> Vec<Point> {
    clusters.iter().map(|c| c[c.len() / 2]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularDecomposition {
    pub sigma: Vec<Point>,
    pub s: Vec<Point>,
    pub theta: Vec<(Point, f64)>,
    /// Sampled `Γ ∩ FB` points within `h` of an `S` sample yet labelled `Σ`.
    pub closure_violations: Vec<Point>,
}

/// Split the free-boundary points of `Γ` by volume density.
pub fn decompose_singular(
    u: &ScalarField,
    manifold: &ManifoldSpec,
    tau: f64,
    margin: f64,
) -> Result<SingularDecomposition> {
    let h = u.grid.h;
    let clusters = gamma_free_boundary_clusters(u, manifold, tau, margin);
    let mut sigma = Vec::new();
    let mut s = Vec::new();
    let mut theta = Vec::new();
    let mut labelled: Vec<(Point, bool)> = Vec::new();
    for cluster in &clusters {
        for &x in cluster {
            let t = weiss::volume_density(u, x, &density_radii(h))?.limit;
            labelled.push((x, t >= THETA_CUT));
        }
        let rep = cluster[cluster.len() / 2];
        let t = weiss::volume_density(u, rep, &density_radii(h))?.limit;
        theta.push((rep, t));
        if t < THETA_CUT {
            sigma.push(rep);
        } else {
            s.push(rep);
        }
    }
    let closure_violations = labelled
        .iter()
        .filter(|(x, is_s)| {
            !is_s
                && labelled
                    .iter()
                    .any(|(y, other_s)| *other_s && geometry::distance(*x, *y) <= h * (1.0 + 1e-9) && x != y)
        })
        .map(|(x, _)| *x)
        .filter(|x| s.iter().any(|rep| geometry::distance(*rep, *x) <= h * (1.0 + 1e-9)))
        .collect();
    Ok(SingularDecomposition {
        sigma,
        s,
        theta,
        closure_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinkowskiFit {
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    /// `Vol / r^{n - j}`.
    pub normalized: Vec<f64>,
    pub slope: Option<f64>,
}

/// Area of `B_r(S ∩ B_1)` by counting cells of side `cell`, and the
/// log-log slope against `r`.
pub fn minkowski_content(points: &[Point], radii: &[f64], cell: f64, j: usize) -> Result<MinkowskiFit> {
    if !(cell > 0.0) {
        return Err(Error::invalid("cell", "must be positive"));
    }
    let inside: Vec<Point> = points.iter().copied().filter(|p| geometry::norm(*p) < 1.0).collect();
    let mut volumes = Vec::new();
    for &r in radii {
        if inside.is_empty() {
            volumes.push(0.0);
            continue;
        }
        let lo = [
            inside.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - r,
            inside.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - r,
        ];
        let hi = [
            inside.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + r,
            inside.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + r,
        ];
        let nx = ((hi[0] - lo[0]) / cell).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).ceil() as usize + 1;
        let mut marked = vec![false; nx * ny];
        for p in &inside {
            let i0 = ((p[0] - r - lo[0]) / cell).floor().max(0.0) as usize;
            let i1 = (((p[0] + r - lo[0]) / cell).ceil() as usize).min(nx - 1);
            let j0 = ((p[1] - r - lo[1]) / cell).floor().max(0.0) as usize;
            let j1 = (((p[1] + r - lo[1]) / cell).ceil() as usize).min(ny - 1);
            for jj in j0..=j1 {
                for ii in i0..=i1 {
                    let c = [lo[0] + (ii as f64 + 0.5) * cell, lo[1] + (jj as f64 + 0.5) * cell];
                    if geometry::distance(c, *p) < r {
                        marked[jj * nx + ii] = true;
                    }
                }
            }
        }
        volumes.push(marked.iter().filter(|m| **m).count() as f64 * cell * cell);
    }
    let normalized = radii
        .iter()
        .zip(&volumes)
        .map(|(r, v)| v / r.powi(2 - j.min(2) as i32))
        .collect();
    let slope = if inside.is_empty() {
        None
    } else {
        log_log_slope(radii, &volumes)
    };
    Ok(MinkowskiFit {
        radii: radii.to_vec(),
        volumes,
        normalized,
        slope,
    })
}

/// Dyadic radii `0.25, 0.125, ...` not below `4h`.
pub fn minkowski_radii(h: f64) -> Vec<f64> {
    blowup::dyadic_scales(0.25, 4.0 * h)
}

/// `ε* = min` over `S` points and scales of the distance to the
/// one-symmetric class; `None` when no `S` point was tested.
pub fn containment_audit(report: &StratumReport) -> Option<f64> {
    report
        .points
        .iter()
        .filter(|p| p.tag == SingularTag::NonDegenerate)
        .flat_map(|p| p.deficits[0].iter().copied())
        .reduce(f64::min)
}
