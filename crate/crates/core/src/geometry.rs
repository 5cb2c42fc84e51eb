//! The submanifold on which the weight `Q = dist(., Gamma)^gamma` degenerates.
//!
//! Only analytic families are supported: a horizontal line, a single point, or
//! the graph `t -> anchor + (t, sum_i c_i |t|^{p_i})` of a finite power series.
//! These cover flat and curved one-dimensional manifolds and the
//! zero-dimensional case in the plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Samples used to bracket the nearest graph parameter.
pub const PROJECTION_SAMPLES: usize = 1024;
/// Golden-section stopping width on the graph parameter.
pub const PROJECTION_TOLERANCE: f64 = 1e-10;
/// Two local minima closer than this in distance are a tie.
pub const TIE_TOLERANCE: f64 = 1e-8;

const SEMINORM_SAMPLES: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKind {
    AxisLine,
    SinglePoint,
    GraphCurve,
}

/// One term `coeff * t^power` of a graph function. Integer powers keep the
/// sign of `t`; fractional powers use `|t|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphTerm {
    pub power: f64,
    pub coeff: f64,
}

impl GraphTerm {
    fn is_integer(&self) -> bool {
        self.power.fract() == 0.0 && self.power >= 0.0 && self.power <= 64.0
    }

    #[inline]
    fn value(&self, t: f64) -> f64 {
        if self.is_integer() {
            self.coeff * t.powi(self.power as i32)
        } else {
            self.coeff * t.abs().powf(self.power)
        }
    }

    #[inline]
    fn slope(&self, t: f64) -> f64 {
        if self.power == 0.0 {
            return 0.0;
        }
        if self.is_integer() {
            self.coeff * self.power * t.powi(self.power as i32 - 1)
        } else {
            self.coeff * self.power * t.abs().powf(self.power - 1.0) * t.signum()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    /// Hölder exponent of the tangent map, in (0, 1].
    pub alpha: f64,
    pub anchor: Point,
    pub terms: Vec<GraphTerm>,
    /// Declared bound `M` on the Hölder seminorm, if any.
    pub seminorm_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub nearest: Point,
    pub distance: f64,
    pub normal: Point,
    pub unique: bool,
}

impl ManifoldSpec {
    /// The horizontal line through `anchor`.
    pub fn axis_line(anchor: Point) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::AxisLine,
            alpha: 1.0,
            anchor,
            terms: Vec::new(),
            seminorm_bound: None,
        }
    }

    pub fn single_point(anchor: Point) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::SinglePoint,
            alpha: 1.0,
            anchor,
            terms: Vec::new(),
            seminorm_bound: None,
        }
    }

    pub fn graph_curve(anchor: Point, terms: Vec<GraphTerm>, alpha: f64) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::GraphCurve,
            alpha,
            anchor,
            terms,
            seminorm_bound: None,
        }
    }

    pub fn with_seminorm_bound(mut self, bound: f64) -> Self {
        self.seminorm_bound = Some(bound);
        self
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            ManifoldKind::SinglePoint => 0,
            ManifoldKind::AxisLine | ManifoldKind::GraphCurve => 1,
        }
    }

    /// Checks the structural invariants. `window` is the half-width of the
    /// chart over which the declared seminorm bound is verified.
    pub fn validate(&self, window: f64) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha", format!("{} not in (0, 1]", self.alpha)));
        }
        if !self.anchor.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("anchor", "non-finite coordinate"));
        }
        if self.kind == ManifoldKind::GraphCurve {
            if self.terms.is_empty() {
                return Err(Error::invalid("graph", "graph curve without terms"));
            }
            for term in &self.terms {
                if !term.power.is_finite() || !term.coeff.is_finite() {
                    return Err(Error::invalid("graph", "non-finite term"));
                }
                if term.power != 0.0 && term.power < 1.0 + self.alpha {
                    return Err(Error::invalid("graph", format!("power {} below 1 + alpha", term.power)));
                }
            }
            if !self.graph_value(0.0).is_finite() || !self.graph_slope(0.0).is_finite() {
                return Err(Error::invalid("graph", "non-finite value at the anchor"));
            }
        }
        if let Some(bound) = self.seminorm_bound {
            let computed = holder_seminorm(self, window);
            if computed > bound * (1.0 + 1e-12) {
                return Err(Error::invalid(
                    "seminorm_bound",
                    format!("computed seminorm {computed} exceeds declared bound {bound}"),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn graph_value(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.value(t)).sum()
    }

    #[inline]
    pub fn graph_slope(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.slope(t)).sum()
    }

    /// Point of a graph curve at parameter `t`.
    pub fn graph_point(&self, t: f64) -> Point {
        [self.anchor[0] + t, self.anchor[1] + self.graph_value(t)]
    }

    /// Parameterised point on the manifold, `t` measured from the anchor.
    /// Points ignore `t`.
    pub fn point_at(&self, t: f64) -> Point {
        match self.kind {
            ManifoldKind::AxisLine => [self.anchor[0] + t, self.anchor[1]],
            ManifoldKind::SinglePoint => self.anchor,
            ManifoldKind::GraphCurve => self.graph_point(t),
        }
    }

    /// Unit normal at parameter `t` (upward for lines and graphs).
    pub fn normal_at(&self, t: f64) -> Point {
        match self.kind {
            ManifoldKind::AxisLine | ManifoldKind::SinglePoint => [0.0, 1.0],
            ManifoldKind::GraphCurve => {
                let s = self.graph_slope(t);
                let n = (1.0 + s * s).sqrt();
                [-s / n, 1.0 / n]
            }
        }
    }

    /// The dilated manifold `(Gamma - center) / r`.
    pub fn rescaled(&self, center: Point, r: f64) -> ManifoldSpec {
        let anchor = scale(sub(self.anchor, center), 1.0 / r);
        let terms = self
            .terms
            .iter()
            .map(|t| GraphTerm {
                power: t.power,
                coeff: t.coeff * r.powf(t.power - 1.0),
            })
            .collect();
        ManifoldSpec {
            kind: self.kind,
            alpha: self.alpha,
            anchor,
            terms,
            seminorm_bound: self.seminorm_bound.map(|m| m * r.powf(self.alpha)),
        }
    }
}

/// `(dist(x, Gamma), dist(x, Gamma)^gamma)`.
pub fn distance_and_weight(x: Point, manifold: &ManifoldSpec, gamma: f64) -> (f64, f64) {
    let d = project(x, manifold).distance;
    let w = if d == 0.0 { 0.0 } else { d.powf(gamma) };
    (d, w)
}

pub fn project(x: Point, manifold: &ManifoldSpec) -> ProjectionResult {
    match manifold.kind {
        ManifoldKind::AxisLine => {
            let dy = x[1] - manifold.anchor[1];
            ProjectionResult {
                nearest: [x[0], manifold.anchor[1]],
                distance: dy.abs(),
                normal: [0.0, if dy < 0.0 { -1.0 } else { 1.0 }],
                unique: true,
            }
        }
        ManifoldKind::SinglePoint => {
            let d = distance(x, manifold.anchor);
            let normal = if d > 0.0 {
                scale(sub(x, manifold.anchor), 1.0 / d)
            } else {
                [0.0, 1.0]
            };
            ProjectionResult {
                nearest: manifold.anchor,
                distance: d,
                normal,
                // every direction is a minimiser from the anchor itself
                unique: d > 0.0,
            }
        }
        ManifoldKind::GraphCurve => project_graph(x, manifold),
    }
}

fn project_graph(x: Point, m: &ManifoldSpec) -> ProjectionResult {
    let tx = x[0] - m.anchor[0];
    let vertical = x[1] - m.anchor[1] - m.graph_value(tx);
    if vertical == 0.0 {
        return ProjectionResult {
            nearest: x,
            distance: 0.0,
            normal: m.normal_at(tx),
            unique: true,
        };
    }
    // The minimiser t* satisfies |t* - tx| <= |x - p(t*)| <= |vertical|.
    let reach = vertical.abs();
    let lo = tx - reach;
    let hi = tx + reach;
    let n = PROJECTION_SAMPLES;
    let step = (hi - lo) / (n - 1) as f64;
    let sq = |t: f64| {
        let p = m.graph_point(t);
        let d = sub(x, p);
        d[0] * d[0] + d[1] * d[1]
    };
    let samples: Vec<f64> = (0..n).map(|i| sq(lo + step * i as f64)).collect();

    let mut minima: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let left = if i > 0 { samples[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < n { samples[i + 1] } else { f64::INFINITY };
        if samples[i] <= left && samples[i] <= right {
            let a = lo + step * i.saturating_sub(1) as f64;
            let b = lo + step * (i + 1).min(n - 1) as f64;
            let t = golden_section(&sq, a, b, PROJECTION_TOLERANCE);
            minima.push((t, sq(t).sqrt()));
        }
    }
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (t_best, d_best) = minima[0];
    let unique = !minima[1..]
        .iter()
        .any(|&(t, d)| (d - d_best).abs() <= TIE_TOLERANCE && (t - t_best).abs() > 2.0 * step);
    let nearest = m.graph_point(t_best);
    let normal = if d_best > 0.0 {
        scale(sub(x, nearest), 1.0 / d_best)
    } else {
        m.normal_at(t_best)
    };
    ProjectionResult {
        nearest,
        distance: d_best,
        normal,
        unique,
    }
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [a, b, mid]
        .into_iter()
        .min_by(|p, q| f(*p).total_cmp(&f(*q)))
        .unwrap_or(mid)
}

/// Sampled Hölder seminorm `sup |Df(y) - Df(z)| / |y - z|^alpha` of the
/// tangent map over parameters in `[-window, window]` around the anchor.
pub fn holder_seminorm(manifold: &ManifoldSpec, window: f64) -> f64 {
    if manifold.kind != ManifoldKind::GraphCurve || window <= 0.0 {
        return 0.0;
    }
    let n = SEMINORM_SAMPLES;
    let ts: Vec<f64> = (0..n)
        .map(|i| -window + 2.0 * window * i as f64 / (n - 1) as f64)
        .collect();
    let slopes: Vec<f64> = ts.iter().map(|&t| manifold.graph_slope(t)).collect();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let q = (slopes[i] - slopes[j]).abs() / (ts[j] - ts[i]).powf(manifold.alpha);
            best = best.max(q);
        }
    }
    best
}

/// Area of `B_delta(Gamma) ∩ B_radius(center)` by counting cells of side
/// `cell` whose centre lies in both sets.
pub fn tube_volume(manifold: &ManifoldSpec, delta: f64, center: Point, radius: f64, cell: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if !(cell > 0.0) || !(radius > 0.0) {
        return Err(Error::invalid("cell", "cell size and radius must be positive"));
    }
    let n = (2.0 * radius / cell).ceil() as i64;
    let start = [center[0] - radius, center[1] - radius];
    // For graphs, |y - g(x)| / sqrt(1 + L^2) <= dist <= |y - g(x)| with L
    // the largest slope nearby; only the band in between needs a projection.
    let lipschitz = if manifold.kind == ManifoldKind::GraphCurve {
        let lo = center[0] - radius - 2.0 * delta - manifold.anchor[0];
        let hi = center[0] + radius + 2.0 * delta - manifold.anchor[0];
        (0..=4096)
            .map(|k| manifold.graph_slope(lo + (hi - lo) * k as f64 / 4096.0).abs())
            .fold(0.0, f64::max)
            * 1.01
    } else {
        f64::INFINITY
    };
    let mut count = 0usize;
    for j in 0..n {
        for i in 0..n {
            let p = [start[0] + (i as f64 + 0.5) * cell, start[1] + (j as f64 + 0.5) * cell];
            if distance(p, center) >= radius {
                continue;
            }
            if lipschitz.is_finite() {
                let vertical = (p[1] - manifold.graph_point(p[0] - manifold.anchor[0])[1]).abs();
                if vertical < delta {
                    count += 1;
                    continue;
                }
                if vertical >= delta * (1.0 + lipschitz * lipschitz).sqrt() {
                    continue;
                }
            }
            if project(p, manifold).distance < delta {
                count += 1;
            }
        }
    }
    Ok(count as f64 * cell * cell)
}

/// Least-squares slope of `log y` against `log x`, skipping non-positive pairs.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parabola(c: f64) -> ManifoldSpec {
        ManifoldSpec::graph_curve([0.0, 0.0], vec![GraphTerm { power: 2.0, coeff: c }], 1.0)
    }

    #[test]
    fn axis_line_distance() {
        let (d, w) = distance_and_weight([0.3, 0.4], &ManifoldSpec::axis_line([0.0, 0.0]), 0.5);
        assert!((d - 0.4).abs() < 1e-15);
        assert!((w - 0.4f64.sqrt()).abs() < 1e-12);
        assert!((w - 0.632_455_532).abs() < 1e-9);
        let (d, w) = distance_and_weight([1.0, 0.0], &ManifoldSpec::axis_line([0.0, 0.0]), 3.0);
        assert_eq!((d, w), (0.0, 0.0));
    }

    #[test]
    fn graph_distance_matches_dense_sampling() {
        // independent oracle: 2e6 uniform samples, then local golden refinement
        let m = parabola(0.05);
        let x = [1.0, 0.2];
        let sq = |t: f64| (x[0] - t).powi(2) + (x[1] - 0.05 * t * t).powi(2);
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=2_000_000 {
            let t = -2.0 + 4.0 * i as f64 / 2e6;
            let v = sq(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        let t = golden_section(&sq, best.0 - 4e-6, best.0 + 4e-6, 1e-13);
        let oracle = sq(t).sqrt();
        let (d, w) = distance_and_weight(x, &m, 1.0);
        assert!((d - oracle).abs() < 1e-9, "{d} vs {oracle}");
        assert!((w - d).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let p = project([0.3, 0.4], &ManifoldSpec::axis_line([0.0, 0.0]));
        assert_eq!(p.nearest, [0.3, 0.0]);
        assert_eq!(p.normal, [0.0, 1.0]);
        assert!(p.unique);

        let p = project([0.0, 1.0], &ManifoldSpec::single_point([0.0, 0.0]));
        assert_eq!(p.nearest, [0.0, 0.0]);
        assert_eq!(p.distance, 1.0);

        // y = t^2 / 2 has curvature radius 1 at the vertex; (0, 2) sees two
        // symmetric minimisers at t = ±sqrt(2)
        let p = project([0.0, 2.0], &parabola(0.5));
        assert!(!p.unique);
        assert!((p.nearest[0].abs() - 2f64.sqrt()).abs() < 1e-6);
        assert!((p.distance - 3f64.sqrt()).abs() < 1e-9);
        assert!(project([0.1, 2.0], &parabola(0.5)).unique);
    }

    #[test]
    fn seminorm_examples() {
        assert_eq!(holder_seminorm(&ManifoldSpec::axis_line([0.0, 0.0]), 1.0), 0.0);
        assert!((holder_seminorm(&parabola(0.05), 1.0) - 0.1).abs() < 1e-12);

        // f(t) = |t|^1.5 with alpha = 1/2; oracle: random pair sampling on [-1, 1]
        let m = ManifoldSpec::graph_curve([0.0, 0.0], vec![GraphTerm { power: 1.5, coeff: 1.0 }], 0.5);
        let df = |t: f64| 1.5 * t.abs().sqrt() * t.signum();
        let mut oracle = 0.0_f64;
        for i in 0..4000 {
            for j in 0..4000 {
                let y = -1.0 + 2.0 * (i as f64 + 0.37) / 4000.0;
                let z = -1.0 + 2.0 * (j as f64 + 0.71) / 4000.0;
                if y != z {
                    oracle = oracle.max((df(y) - df(z)).abs() / (y - z).abs().sqrt());
                }
            }
        }
        let computed = holder_seminorm(&m, 1.0);
        assert!((computed - oracle).abs() < 5e-3, "{computed} vs {oracle}");
        // the supremum is attained by symmetric pairs: 3 / sqrt(2)
        assert!((computed - 3.0 / 2f64.sqrt()).abs() < 5e-3);
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut m = parabola(0.05);
        m.alpha = 0.0;
        assert!(m.validate(1.0).is_err());
        let m = parabola(0.05).with_seminorm_bound(0.05);
        assert!(m.validate(1.0).is_err());
        assert!(parabola(0.05).with_seminorm_bound(0.1).validate(1.0).is_ok());
    }

    #[test]
    fn tube_volume_examples() {
        let line = ManifoldSpec::axis_line([0.0, 0.0]);
        let v = tube_volume(&line, 0.25, [0.0, 0.0], 1.0, 2e-3).unwrap();
        assert!(v <= 1.0);
        assert!(v > 0.9);
        let point = ManifoldSpec::single_point([0.0, 0.0]);
        let cell = 1e-3;
        let v = tube_volume(&point, 0.1, [0.0, 0.0], 1.0, cell).unwrap();
        let exact = std::f64::consts::PI * 0.01;
        assert!((v - exact).abs() < 2.0 * std::f64::consts::PI * 0.1 * cell);
    }

    #[test]
    fn tube_volume_exponent_on_curved_manifold() {
        let m = parabola(0.3);
        let deltas: Vec<f64> = (2..=6).map(|i| 0.5f64.powi(i)).collect();
        let vols: Vec<f64> = deltas
            .iter()
            .map(|&d| tube_volume(&m, d, [0.0, 0.0], 1.0, 2e-3).unwrap())
            .collect();
        let slope = log_log_slope(&deltas, &vols).unwrap();
        assert!((slope - 1.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn normal_drift_and_graph_containment() {
        let m = parabola(0.4);
        let seminorm = holder_seminorm(&m, 1.0);
        for &t0 in &[-0.5, 0.0, 0.3] {
            let x0 = m.point_at(t0);
            let nu = m.normal_at(t0);
            for &r in &[0.05, 0.1, 0.2, 0.4] {
                for k in 0..=200 {
                    let t = t0 - r + 2.0 * r * k as f64 / 200.0;
                    let x = m.point_at(t);
                    if distance(x, x0) > r {
                        continue;
                    }
                    let drift = dot(sub(x, x0), nu).abs();
                    assert!(drift <= 8.0 * seminorm * r.powf(1.0 + m.alpha) + 1e-12);
                }
            }
        }
        for k in 0..=100 {
            let y = -1.0 + 0.02 * k as f64;
            assert!(m.graph_value(y).abs() <= seminorm * y.abs().powi(2) + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn distance_is_one_lipschitz(
            ax in -1.5f64..1.5, ay in -1.5f64..1.5,
            bx in -1.5f64..1.5, by in -1.5f64..1.5,
            c in 0.01f64..0.8,
        ) {
            let m = parabola(c);
            let da = project([ax, ay], &m).distance;
            let db = project([bx, by], &m).distance;
            prop_assert!((da - db).abs() <= distance([ax, ay], [bx, by]) + 1e-9);
        }

        #[test]
        fn seminorm_rescales_like_r_to_alpha(
            c in 0.01f64..1.0, r in 0.1f64..1.0, alpha in 0.3f64..1.0,
        ) {
            let m = ManifoldSpec::graph_curve(
                [0.0, 0.0],
                vec![GraphTerm { power: 1.0 + alpha + 0.5, coeff: c }],
                alpha,
            );
            let base = holder_seminorm(&m, 1.0);
            let dilated = holder_seminorm(&m.rescaled([0.0, 0.0], r), 1.0 / r);
            prop_assert!((dilated - base * r.powf(alpha)).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
