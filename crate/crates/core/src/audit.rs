//! Free-boundary extraction and audits of the growth, Lipschitz,
//! interior-ball and perimeter estimates.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{BallQuadrature, ScalarField, SphereQuadrature, WeightMap};
use crate::geometry::{self, log_log_slope, ManifoldSpec, Point};

/// Marching-squares contour `{u = τ}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundary {
    pub threshold: f64,
    pub segments: Vec<[Point; 2]>,
    /// Polylines through the segments; closed chains repeat their first point.
    pub chains: Vec<Vec<Point>>,
}

impl FreeBoundary {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Point> + '_ {
        self.chains.iter().flatten().copied()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| geometry::distance(s[0], s[1])).sum()
    }

    /// Distance from every chain vertex to `Γ`.
    pub fn gamma_distances(&self, manifold: &ManifoldSpec) -> Vec<f64> {
        self.vertices()
            .map(|p| geometry::project(p, manifold).distance)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("chain,x,y\n");
        for (c, chain) in self.chains.iter().enumerate() {
            for p in chain {
                s.push_str(&format!("{},{},{}\n", c, p[0], p[1]));
            }
        }
        s
    }
}

pub fn extract_free_boundary(u: &ScalarField, tau: f64) -> Result<FreeBoundary> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("threshold", "must be nonnegative"));
    }
    let g = &u.grid;
    let f = |i: usize, j: usize| u.at(i, j) - tau;
    // edge ids: 2 idx for (i,j)-(i+1,j), 2 idx + 1 for (i,j)-(i,j+1)
    let crossing = |a: (usize, usize), b: (usize, usize)| -> Point {
        let (fa, fb) = (f(a.0, a.1), f(b.0, b.1));
        let (pa, pb) = (g.node(a.0, a.1), g.node(b.0, b.1));
        let t = fa / (fa - fb);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut segments = Vec::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let inside: Vec<bool> = corners.iter().map(|&(a, b)| f(a, b) > 0.0).collect();
            let ids = [
                2 * g.index(i, j),
                2 * g.index(i + 1, j) + 1,
                2 * g.index(i, j + 1),
                2 * g.index(i, j) + 1,
            ];
            let cut: Vec<usize> = (0..4).filter(|&e| inside[e] != inside[(e + 1) % 4]).collect();
            let pairs: Vec<(usize, usize)> = match cut.len() {
                0 => continue,
                2 => vec![(cut[0], cut[1])],
                _ => {
                    let centre = (0..4).map(|k| f(corners[k].0, corners[k].1)).sum::<f64>() / 4.0;
                    // keep the positive corners connected when the centre is positive
                    if (centre > 0.0) == inside[0] {
                        vec![(0, 1), (2, 3)]
                    } else {
                        vec![(3, 0), (1, 2)]
                    }
                }
            };
            for (a, b) in pairs {
                let pa = crossing(corners[a], corners[(a + 1) % 4]);
                let pb = crossing(corners[b], corners[(b + 1) % 4]);
                segments.push([pa, pb]);
                edges.push([ids[a], ids[b]]);
            }
        }
    }
    let chains = link_segments(&segments, &edges);
    Ok(FreeBoundary {
        threshold: tau,
        segments,
        chains,
    })
}

fn link_segments(segments: &[[Point; 2]], edges: &[[usize; 2]]) -> Vec<Vec<Point>> {
    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, e) in edges.iter().enumerate() {
        by_edge.entry(e[0]).or_default().push(s);
        by_edge.entry(e[1]).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();
    let other = |s: usize, e: usize| if edges[s][0] == e { edges[s][1] } else { edges[s][0] };
    let point_of = |s: usize, e: usize| {
        if edges[s][0] == e {
            segments[s][0]
        } else {
            segments[s][1]
        }
    };
    let next = |used: &[bool], e: usize| by_edge[&e].iter().copied().find(|&s| !used[s]);
    // open chains first: start at edges that belong to a single segment
    let mut starts: Vec<usize> = by_edge.iter().filter(|(_, v)| v.len() == 1).map(|(e, _)| *e).collect();
    starts.sort_unstable();
    let all: Vec<usize> = {
        let mut v: Vec<usize> = by_edge.keys().copied().collect();
        v.sort_unstable();
        v
    };
    for e0 in starts.into_iter().chain(all) {
        while let Some(s0) = next(&used, e0) {
            let mut chain = vec![point_of(s0, e0)];
            let mut s = s0;
            let mut e = e0;
            loop {
                used[s] = true;
                let e_next = other(s, e);
                chain.push(point_of(s, e_next));
                e = e_next;
                match next(&used, e) {
                    Some(t) => s = t,
                    None => break,
                }
            }
            chains.push(chain);
        }
    }
    chains
}

/// Threshold `h^{1+γ}` used to suppress single-cell noise near `Γ`.
pub fn default_threshold(h: f64, gamma: f64) -> f64 {
    h.powf(1.0 + gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditSample {
    pub point: Point,
    pub radius: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    UpperGrowth,
    LowerGrowth,
    BulkGrowth,
    NoInteriorBall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub point: Point,
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub name: String,
    pub upper: Vec<AuditSample>,
    pub lower: Vec<AuditSample>,
    pub bulk: Vec<AuditSample>,
    pub c_max: Option<f64>,
    pub c_min: Option<f64>,
    pub bulk_min: Option<f64>,
    pub violations: Vec<Violation>,
    /// Samples whose ball left the grid.
    pub skipped: usize,
    /// Lower-bound samples with too few positive nodes to decide `u ≢ 0`.
    pub excluded: usize,
}

/// Reference constants the growth ratios are checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthReference {
    pub c_max: f64,
    pub c_min: f64,
    pub bulk_min: f64,
}

/// Evenly spaced subsample of at most `n` items.
fn spread<T: Copy>(items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|k| items[k * items.len() / n]).collect()
}

pub const GROWTH_SAMPLES: usize = 64;
/// Positive nodes needed in `B_{r/2}` before a lower-growth sample counts.
pub const MIN_POSITIVE_NODES: usize = 4;

pub fn growth_audit(
    u: &ScalarField,
    weights: &WeightMap,
    fb: &FreeBoundary,
    radii: &[f64],
    reference: Option<GrowthReference>,
) -> AuditReport {
    let g = &u.grid;
    let gamma = weights.gamma;
    let vertices: Vec<Point> = fb.vertices().collect();
    let points = spread(&vertices, GROWTH_SAMPLES);
    let mut report = AuditReport {
        name: "growth".into(),
        upper: vec![],
        lower: vec![],
        bulk: vec![],
        c_max: None,
        c_min: None,
        bulk_min: None,
        violations: vec![],
        skipped: 0,
        excluded: 0,
    };
    for &x in &points {
        let d = geometry::project(x, &weights.manifold).distance;
        for &r in radii {
            let Ok(sphere) = SphereQuadrature::new(g, x, r) else {
                report.skipped += 1;
                continue;
            };
            let mean = sphere.integrate(|p| u.interpolate(p).unwrap_or(0.0)) / (2.0 * PI * r);
            let q_max = (d + r).powf(gamma);
            let upper = mean / (r * q_max);
            report.upper.push(AuditSample {
                point: x,
                radius: r,
                ratio: upper,
            });
            let q_min = (d - 0.5 * r).max(0.0).powf(gamma);
            if q_min > 0.0 {
                let half = BallQuadrature::clipped(g, x, 0.5 * r);
                let positive = half.entries.iter().filter(|&&(idx, _)| u.values[idx] > 0.0).count();
                if positive >= MIN_POSITIVE_NODES {
                    report.lower.push(AuditSample {
                        point: x,
                        radius: r,
                        ratio: mean / (r * q_min),
                    });
                } else {
                    report.excluded += 1;
                }
            }
        }
    }
    // bulk growth at positive nodes away from Γ and the fixed nodes
    let positive: Vec<usize> = (0..g.len())
        .filter(|&idx| u.values[idx] > 0.0 && !u.dirichlet[idx] && weights.q[idx] > 0.0)
        .collect();
    if !vertices.is_empty() {
        for idx in spread(&positive, 4 * GROWTH_SAMPLES) {
            let p = g.node_at(idx);
            let dist = vertices
                .iter()
                .map(|v| geometry::distance(*v, p))
                .fold(f64::INFINITY, f64::min);
            if dist < g.h {
                continue;
            }
            report.bulk.push(AuditSample {
                point: p,
                radius: dist,
                ratio: u.values[idx] / (dist * weights.q[idx]),
            });
        }
    }
    let fold = |v: &[AuditSample], max: bool| {
        v.iter()
            .map(|s| s.ratio)
            .reduce(|a, b| if max { a.max(b) } else { a.min(b) })
    };
    report.c_max = fold(&report.upper, true);
    report.c_min = fold(&report.lower, false);
    report.bulk_min = fold(&report.bulk, false);
    if let Some(reference) = reference {
        let mut v = Vec::new();
        v.extend(
            report
                .upper
                .iter()
                .filter(|s| s.ratio > reference.c_max)
                .map(|s| Violation {
                    kind: ViolationKind::UpperGrowth,
                    point: s.point,
                    radius: s.radius,
                    value: s.ratio,
                }),
        );
        v.extend(
            report
                .lower
                .iter()
                .filter(|s| s.ratio < reference.c_min)
                .map(|s| Violation {
                    kind: ViolationKind::LowerGrowth,
                    point: s.point,
                    radius: s.radius,
                    value: s.ratio,
                }),
        );
        v.extend(
            report
                .bulk
                .iter()
                .filter(|s| s.ratio < reference.bulk_min)
                .map(|s| Violation {
                    kind: ViolationKind::BulkGrowth,
                    point: s.point,
                    radius: s.radius,
                    value: s.ratio,
                }),
        );
        report.violations = v;
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzFit {
    pub center: Point,
    pub radii: Vec<f64>,
    pub maxima: Vec<f64>,
    pub slope: Option<f64>,
    /// `slope - γ`.
    pub excess: Option<f64>,
}

/// `max_{B_r} |∇u|` with central nodal gradients, and its log-log slope.
pub fn lipschitz_audit(u: &ScalarField, gamma: f64, center: Point, radii: &[f64]) -> LipschitzFit {
    let g = &u.grid;
    let maxima: Vec<f64> = radii
        .iter()
        .map(|&r| {
            BallQuadrature::clipped(g, center, r)
                .entries
                .iter()
                .filter(|&&(idx, _)| geometry::distance(g.node_at(idx), center) <= r)
                .map(|&(idx, _)| {
                    let (i, j) = g.coords(idx);
                    geometry::norm(u.nodal_gradient(i, j))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let slope = if maxima.iter().all(|m| *m > 0.0) {
        log_log_slope(radii, &maxima)
    } else {
        None
    };
    LipschitzFit {
        center,
        radii: radii.to_vec(),
        maxima,
        slope,
        excess: slope.map(|s| s - gamma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum InteriorBall {
    Found {
        point: Point,
        center: Point,
        /// Radius as a fraction of `r`.
        c: f64,
        min_value: f64,
    },
    /// `B_r(x)` meets `Γ` or `u ≡ 0` on it.
    Filtered {
        point: Point,
    },
    Missing {
        point: Point,
    },
}

pub const INTERIOR_BALL_ANGLES: usize = 128;

/// For each `x`, search `∂B_{r/2}(x)` for `y` with `u >= c_min r Q_min / 4`
/// on `B_{c r}(y)`, returning the largest such `c`, in steps of `h / r`,
/// up to `1/2`.
pub fn interior_ball_audit(
    u: &ScalarField,
    weights: &WeightMap,
    points: &[Point],
    r: f64,
    c_min: f64,
) -> Vec<InteriorBall> {
    let g = &u.grid;
    let gamma = weights.gamma;
    points
        .iter()
        .map(|&x| {
            let d = geometry::project(x, &weights.manifold).distance;
            let ball = BallQuadrature::clipped(g, x, r);
            if d <= r || ball.entries.iter().all(|&(idx, _)| u.values[idx] <= 0.0) {
                return InteriorBall::Filtered { point: x };
            }
            let q_min = (d - r).powf(gamma);
            let level = c_min * r * q_min / 4.0;
            let mut best: Option<(Point, f64, f64)> = None;
            let steps = (0.5 * r / g.h).floor().max(1.0) as usize;
            for a in 0..INTERIOR_BALL_ANGLES {
                let t = 2.0 * PI * a as f64 / INTERIOR_BALL_ANGLES as f64;
                let y = [x[0] + 0.5 * r * t.cos(), x[1] + 0.5 * r * t.sin()];
                if !g.contains_point(y) || u.interpolate(y).unwrap_or(0.0) < level {
                    continue;
                }
                let mut found = None;
                for k in 1..=steps {
                    let rho = k as f64 * g.h;
                    let b = BallQuadrature::clipped(g, y, rho);
                    let inside: Vec<f64> = b
                        .entries
                        .iter()
                        .filter(|&&(idx, _)| geometry::distance(g.node_at(idx), y) <= rho)
                        .map(|&(idx, _)| u.values[idx])
                        .collect();
                    let m = inside.iter().copied().fold(f64::INFINITY, f64::min);
                    if inside.is_empty() || m < level {
                        break;
                    }
                    found = Some((rho / r, m));
                }
                if let Some((c, m)) = found {
                    if best.is_none_or(|b| c > b.1) {
                        best = Some((y, c, m));
                    }
                }
            }
            match best {
                Some((y, c, m)) => InteriorBall::Found {
                    point: x,
                    center: y,
                    c,
                    min_value: m,
                },
                None => InteriorBall::Missing { point: x },
            }
        })
        .collect()
}

/// Ball or annulus `inner < |x - center| < outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub center: Point,
    pub inner: f64,
    pub outer: f64,
}

impl Region {
    pub fn ball(center: Point, radius: f64) -> Self {
        Region {
            center,
            inner: 0.0,
            outer: radius,
        }
    }

    fn contains(&self, p: Point) -> bool {
        let d = geometry::distance(p, self.center);
        d < self.outer && d >= self.inner
    }

    /// Length of the part of segment `ab` inside the region.
    fn clip_length(&self, a: Point, b: Point) -> f64 {
        let inside_disc = |r: f64| chord_inside(a, b, self.center, r);
        let outer = inside_disc(self.outer);
        if self.inner > 0.0 {
            outer - inside_disc(self.inner)
        } else {
            outer
        }
    }
}

/// Length of `ab ∩ B_r(c)`.
fn chord_inside(a: Point, b: Point, c: Point, r: f64) -> f64 {
    let d = geometry::sub(b, a);
    let f = geometry::sub(a, c);
    let len2 = geometry::dot(d, d);
    if len2 == 0.0 {
        return 0.0;
    }
    // |f + t d|^2 = r^2
    let bq = 2.0 * geometry::dot(f, d);
    let cq = geometry::dot(f, f) - r * r;
    let disc = bq * bq - 4.0 * len2 * cq;
    if disc <= 0.0 {
        return 0.0;
    }
    let s = disc.sqrt();
    let t0 = ((-bq - s) / (2.0 * len2)).max(0.0);
    let t1 = ((-bq + s) / (2.0 * len2)).min(1.0);
    (t1 - t0).max(0.0) * len2.sqrt()
}

pub const COAREA_LEVELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoareaResult {
    pub epsilon: f64,
    /// `∫_{0 < u <= ε} |∇u|^2 + Q^2` over the region.
    pub layer_energy: f64,
    /// `(1/ε) ∫_0^ε H^1({u = t} ∩ region) dt`.
    pub perimeter: f64,
    pub level_lengths: Vec<f64>,
    /// `min Q` over the region, when required positive.
    pub q_min: Option<f64>,
    /// `perimeter * sqrt(q_min)`, the constant in the `C / sqrt(Q_min)` bound.
    pub bound_constant: Option<f64>,
}

pub fn coarea_perimeter(
    u: &ScalarField,
    weights: &WeightMap,
    region: Region,
    epsilon: f64,
    away_from_gamma: bool,
) -> Result<CoareaResult> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1]"));
    }
    let g = &u.grid;
    let q_min = if away_from_gamma {
        let d = geometry::project(region.center, &weights.manifold).distance;
        if d <= region.outer {
            return Err(Error::Precondition("region touches Γ".into()));
        }
        Some((d - region.outer).powf(weights.gamma))
    } else {
        None
    };
    let layer_energy = BallQuadrature::clipped(g, region.center, region.outer).integrate(|idx| {
        let v = u.values[idx];
        if v > 0.0 && v <= epsilon && region.contains(g.node_at(idx)) {
            u.energy_density(idx) + weights.q2(idx)
        } else {
            0.0
        }
    });
    let mut level_lengths = Vec::with_capacity(COAREA_LEVELS);
    for k in 0..COAREA_LEVELS {
        let t = epsilon * (k as f64 + 0.5) / COAREA_LEVELS as f64;
        let fb = extract_free_boundary(u, t)?;
        level_lengths.push(fb.segments.iter().map(|s| region.clip_length(s[0], s[1])).sum());
    }
    let perimeter = level_lengths.iter().sum::<f64>() / COAREA_LEVELS as f64;
    Ok(CoareaResult {
        epsilon,
        layer_energy,
        perimeter,
        level_lengths,
        q_min,
        bound_constant: q_min.map(|q| perimeter * q.sqrt()),
    })
}

/// `C` in `layer_energy <= C ε` for each `ε`, and `max C / min C`.
pub fn layer_constants(results: &[CoareaResult]) -> (Vec<f64>, f64) {
    let cs: Vec<f64> = results.iter().map(|r| r.layer_energy / r.epsilon).collect();
    let hi = cs.iter().copied().fold(0.0, f64::max);
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    (cs, if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Perimeters over the dyadic annuli `2^{-k-1} < |x - c| < 2^{-k}`, `k >= 0`,
/// down to `4h`, and their partial sums.
pub fn annulus_perimeters(
    u: &ScalarField,
    weights: &WeightMap,
    center: Point,
    top: f64,
    epsilon: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut r = top;
    while r >= 8.0 * u.grid.h {
        let region = Region {
            center,
            inner: 0.5 * r,
            outer: r,
        };
        total += coarea_perimeter(u, weights, region, epsilon, false)?.perimeter;
        out.push((0.5 * r, total));
        r *= 0.5;
    }
    Ok(out)
}

pub const CORNER_FIT_RADIUS: f64 = 0.2;
pub const CORNER_INNER_CELLS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CornerAngle {
    pub vertex: Point,
    pub angle: f64,
    /// Unit directions of the fitted rays.
    pub rays: [Point; 2],
    pub arms: usize,
}

/// Included angle, on the positivity side, between the two longest arms
/// of the free boundary in the annulus `inner <= |p - vertex| <= fit_radius`.
/// Each arm gets a total-least-squares line.
pub fn corner_angle(
    fb: &FreeBoundary,
    u: &ScalarField,
    vertex: Point,
    fit_radius: f64,
    inner: f64,
) -> Result<CornerAngle> {
    let mut arms: Vec<Vec<Point>> = Vec::new();
    for chain in &fb.chains {
        let mut current: Vec<Point> = Vec::new();
        for &p in chain {
            let d = geometry::distance(p, vertex);
            if d >= inner && d <= fit_radius {
                current.push(p);
            } else if !current.is_empty() {
                arms.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            arms.push(current);
        }
    }
    arms.retain(|a| a.len() >= 3);
    arms.sort_by_key(|a| std::cmp::Reverse(a.len()));
    let count = arms.len();
    if count < 2 {
        return Err(Error::Precondition(format!(
            "{count} free-boundary arms leave the vertex, need 2"
        )));
    }
    let rays = [fit_ray(&arms[0], vertex), fit_ray(&arms[1], vertex)];
    let between = geometry::dot(rays[0], rays[1]).clamp(-1.0, 1.0).acos();
    let bisector = {
        let b = geometry::add(rays[0], rays[1]);
        let n = geometry::norm(b);
        if n > 1e-12 {
            geometry::scale(b, 1.0 / n)
        } else {
            [-rays[0][1], rays[0][0]]
        }
    };
    let probe = 0.5 * (inner + fit_radius);
    let at = |dir: Point| {
        u.interpolate(geometry::add(vertex, geometry::scale(dir, probe)))
            .unwrap_or(0.0)
    };
    let angle = if at(bisector) >= at(geometry::scale(bisector, -1.0)) {
        between
    } else {
        2.0 * PI - between
    };
    Ok(CornerAngle {
        vertex,
        angle,
        rays,
        arms: count,
    })
}

fn fit_ray(points: &[Point], vertex: Point) -> Point {
    let n = points.len() as f64;
    let c = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = geometry::sub(*p, c);
        sxx += d[0] * d[0];
        sxy += d[0] * d[1];
        syy += d[1] * d[1];
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = [theta.cos(), theta.sin()];
    if geometry::dot(dir, geometry::sub(c, vertex)) < 0.0 {
        geometry::scale(dir, -1.0)
    } else {
        dir
    }
}
