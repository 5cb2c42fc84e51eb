//! Acceptance criteria 1-12, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::time::Instant;

use freebound::audit::{self, Region};
use freebound::blowup::{dyadic_scales, SectorSolution};
use freebound::field::{Grid, ScalarField, WeightMap};
use freebound::geometry::{self, golden_section, GraphTerm, ManifoldSpec, Point};
use freebound::minimizer::{self, ScenarioConfig, SolveConfig, SolveOutcome};
use freebound::strata::{self, PointMeasure};
use freebound::weiss::{self, WeissProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RESOLUTIONS: [usize; 3] = [129, 257, 513];
const HALF_WIDTH: f64 = 2.0;

const CORNER_TOL: f64 = 0.15;
const APERTURE_TOL: f64 = 0.15;
const WEISS_SPREAD: f64 = 0.05;
const MONOTONICITY_TOL: f64 = 0.05;
const DENSITY_TOL: f64 = 0.05;
const LIPSCHITZ_TOL: f64 = 0.15;
const HOMOGENEITY_FINAL: f64 = 0.05;
const BETA_TOL: f64 = 1e-9;
const CORNER_BETA_TOL: f64 = 1e-6;
const MINKOWSKI_TOL: f64 = 0.1;
const MINKOWSKI_SPREAD: f64 = 2.0;
const CONTAINMENT_SPREAD: f64 = 2.0;
const PERIMETER_TOL: f64 = 0.1;
const LAYER_SPREAD: f64 = 2.0;
const SUBHARMONIC_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-8;
const RUNTIME_513: f64 = 300.0;
/// Half the radius of the Stokes domain; the default 0.2 window lies inside
/// the lattice tip defect at 129^2 and is reported alongside.
const STOKES_FIT_RADIUS: f64 = 1.0;

struct Criterion {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Criterion {
    Criterion { passed, detail }
}

struct Solved {
    outcome: SolveOutcome,
    weights: WeightMap,
    seconds: f64,
}

fn grid(n: usize) -> Grid {
    Grid::square([0.0, 0.0], HALF_WIDTH, n).expect("grid")
}

fn solve(config: &ScenarioConfig, n: usize) -> Solved {
    let g = grid(n);
    let start = Instant::now();
    let outcome = minimizer::solve(config, g, &SolveConfig::default()).expect("solve");
    Solved {
        outcome,
        weights: WeightMap::new(&g, &config.manifold, config.gamma),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn corner(u: &ScalarField, gamma: f64, fit_radius: f64) -> Option<f64> {
    let fb = audit::extract_free_boundary(u, audit::default_threshold(u.grid.h, gamma)).ok()?;
    audit::corner_angle(&fb, u, [0.0, 0.0], fit_radius, audit::CORNER_INNER_CELLS * u.grid.h)
        .ok()
        .map(|c| c.angle)
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn criterion_1(stokes: &[Solved]) -> Criterion {
    let target = 2.0 * PI / 3.0;
    let error = |s: &Solved, fit: f64| corner(&s.outcome.field, 0.5, fit).map(|a| (a - target).abs());
    let default_window: Vec<String> = stokes
        .iter()
        .map(|s| error(s, audit::CORNER_FIT_RADIUS).map_or("n/a".into(), |e| format!("{e:.4}")))
        .collect();
    let errors: Vec<Option<f64>> = stokes.iter().map(|s| error(s, STOKES_FIT_RADIUS)).collect();
    let Some(errors) = errors.into_iter().collect::<Option<Vec<f64>>>() else {
        return check(false, "corner not found".into());
    };
    let within = errors.iter().all(|e| *e <= CORNER_TOL);
    let shrinking = errors.windows(2).all(|w| w[1] <= w[0]);
    let seconds = stokes.last().unwrap().seconds;
    check(
        within && shrinking && seconds <= RUNTIME_513,
        format!(
            "errors {errors:.4?} at fit radius {STOKES_FIT_RADIUS} (tol {CORNER_TOL}, non-increasing; fit radius {} gives [{}]), 513^2 solve {seconds:.1}s (limit {RUNTIME_513}s)",
            audit::CORNER_FIT_RADIUS,
            default_window.join(", ")
        ),
    )
}

fn criterion_2() -> Criterion {
    let mut ok = true;
    let mut parts = Vec::new();
    for gamma in [0.25, 1.0] {
        let s = solve(&ScenarioConfig::stokes(gamma), 257);
        let target = PI / (1.0 + gamma);
        match corner(&s.outcome.field, gamma, STOKES_FIT_RADIUS) {
            Some(a) => {
                ok &= (a - target).abs() <= APERTURE_TOL;
                parts.push(format!("gamma {gamma}: {a:.4} vs {target:.4}"));
            }
            None => {
                ok = false;
                parts.push(format!("gamma {gamma}: corner not found"));
            }
        }
    }
    check(ok, format!("{} (tol {APERTURE_TOL})", parts.join(", ")))
}

fn criterion_3() -> Criterion {
    let g = grid(257);
    let u = SectorSolution::hanging(0.5).sample(g);
    let w = WeightMap::new(&g, &ManifoldSpec::axis_line([0.0, 0.0]), 0.5);
    let radii: Vec<f64> = (0..10).map(|k| 0.1 * 10f64.powf(k as f64 / 9.0)).collect();
    let values: Vec<f64> = radii
        .iter()
        .map(|&r| weiss::weiss_density(&u, &w, [0.0, 0.0], r).expect("density"))
        .collect();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let rel = (hi - lo) / lo.abs().max(hi.abs());
    check(
        rel <= WEISS_SPREAD,
        format!("(max - min)/|W| = {rel:.2e} (tol {WEISS_SPREAD}), W in [{lo:.5}, {hi:.5}]"),
    )
}

fn criterion_4() -> Criterion {
    let (alpha, seminorm, gamma) = (1.0, 0.1, 0.5);
    let manifold = ManifoldSpec::graph_curve(
        [0.0, 0.0],
        vec![GraphTerm {
            power: 2.0,
            coeff: 0.05,
        }],
        alpha,
    );
    let config = ScenarioConfig {
        manifold: manifold.clone(),
        ..ScenarioConfig::stokes(gamma)
    };
    let s = solve(&config, 257);
    let u = &s.outcome.field;
    let scales = dyadic_scales(0.5, 8.0 * u.grid.h);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..10 {
        let t = -0.45 + 0.9 * k as f64 / 9.0;
        let x = manifold.graph_point(t);
        let profile = WeissProfile::compute(u, &s.weights, x, &scales, seminorm, alpha).expect("profile");
        let v = weiss::monotonicity_audit(&profile, seminorm, alpha, gamma, MONOTONICITY_TOL);
        violations += v.len();
        for m in &v {
            worst = worst.max(m.excess);
        }
    }
    check(
        violations == 0,
        format!(
            "{violations} violations at 10 points over r in [8h, 0.5] (tol {MONOTONICITY_TOL}){}",
            if violations > 0 {
                format!(", worst excess {worst:.3e}")
            } else {
                String::new()
            }
        ),
    )
}

fn criterion_5(fine: &Solved) -> Criterion {
    let u = &fine.outcome.field;
    let target = 1.0 / 3.0;
    let d = weiss::volume_density(u, [0.0, 0.0], &strata::density_radii(u.grid.h)).expect("density");
    check(
        (d.limit - target).abs() <= DENSITY_TOL,
        format!("theta {:.4} vs {target:.4} (tol {DENSITY_TOL})", d.limit),
    )
}

fn criterion_6(fine: &Solved) -> Criterion {
    let u = &fine.outcome.field;
    let fit = audit::lipschitz_audit(u, 0.5, [0.0, 0.0], &dyadic_scales(0.5, 8.0 * u.grid.h));
    match fit.excess {
        Some(e) => check(
            e.abs() <= LIPSCHITZ_TOL,
            format!(
                "slope {:.4}, slope - gamma {e:.4} (tol {LIPSCHITZ_TOL})",
                fit.slope.unwrap()
            ),
        ),
        None => check(false, "slope undefined".into()),
    }
}

fn criterion_7(fine: &Solved) -> Criterion {
    let u = &fine.outcome.field;
    let d: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
        .iter()
        .map(|&r| weiss::homogeneity_deficit(u, [0.0, 0.0], 0.5, r, 2.0 * r).expect("deficit"))
        .collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let last = *d.last().unwrap();
    check(
        decreasing && last < HOMOGENEITY_FINAL,
        format!("deficits {d:.4?} (decreasing, final < {HOMOGENEITY_FINAL})"),
    )
}

/// Best line by direction search; for a fixed direction the optimal offset
/// is the weighted mean.
fn brute_force_beta(mu: &PointMeasure, x: Point, r: f64) -> f64 {
    let pts: Vec<(Point, f64)> = mu
        .points
        .iter()
        .zip(&mu.weights)
        .filter(|(p, _)| geometry::distance(**p, x) <= r)
        .map(|(p, w)| (*p, *w))
        .collect();
    let cost = |theta: f64| {
        let n = [-theta.sin(), theta.cos()];
        let mass: f64 = pts.iter().map(|(_, w)| w).sum();
        let c = pts.iter().map(|(p, w)| w * geometry::dot(*p, n)).sum::<f64>() / mass;
        pts.iter()
            .map(|(p, w)| w * (geometry::dot(*p, n) - c).powi(2))
            .sum::<f64>()
    };
    let m = 3600;
    let step = PI / m as f64;
    let best = (0..m)
        .map(|i| i as f64 * step)
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .unwrap();
    let t = golden_section(&cost, best - step, best + step, 1e-14);
    cost(t).min(cost(best)) / r.powi(3)
}

fn criterion_8() -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pts: Vec<Point> = (0..10)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let ws: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..2.0)).collect();
        let mu = PointMeasure::new(pts, ws).expect("measure");
        let a = strata::beta_number(&mu, [0.0, 0.0], 1.5, 1).expect("beta").beta2;
        worst = worst.max((a - brute_force_beta(&mu, [0.0, 0.0], 1.5)).abs());
    }
    let square = PointMeasure::unit(vec![[0.5, 0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, -0.5]]);
    let b = strata::beta_number(&square, [0.0, 0.0], 1.0, 1).expect("beta").beta2;
    check(
        worst <= BETA_TOL && (b - 1.0).abs() <= CORNER_BETA_TOL,
        format!("max |eig - brute| {worst:.2e} (tol {BETA_TOL}), square corners {b:.9} (tol {CORNER_BETA_TOL})"),
    )
}

fn singular_points(s: &Solved) -> Vec<Point> {
    let u = &s.outcome.field;
    let tau = audit::default_threshold(u.grid.h, 0.5);
    strata::decompose_singular(u, &s.weights.manifold, tau, 0.25)
        .expect("decomposition")
        .s
}

fn criterion_9(fine: &Solved) -> Criterion {
    let h = fine.outcome.field.grid.h;
    let points = singular_points(fine);
    let radii = strata::minkowski_radii(h);
    let fit = strata::minkowski_content(&points, &radii, h / 4.0, 0).expect("minkowski");
    let Some(slope) = fit.slope else {
        return check(false, format!("no singular points ({} found)", points.len()));
    };
    let ratio = spread(&fit.normalized);
    check(
        (slope - 2.0).abs() <= MINKOWSKI_TOL && ratio <= MINKOWSKI_SPREAD,
        format!("{} singular point(s), slope {slope:.4} (tol {MINKOWSKI_TOL}), max/min Vol/r^2 {ratio:.3} (limit {MINKOWSKI_SPREAD})", points.len()),
    )
}

fn criterion_10(stokes: &[Solved]) -> Criterion {
    let mut eps = Vec::new();
    for s in stokes {
        let u = &s.outcome.field;
        let points = singular_points(s);
        let report = strata::classify_strata(u, 0.5, &points, 0.05, 8.0 * u.grid.h).expect("strata");
        match strata::containment_audit(&report) {
            Some(e) => eps.push(e),
            None => return check(false, format!("no S points at {}^2", u.grid.nx)),
        }
    }
    let ratio = spread(&eps);
    check(
        eps.iter().all(|e| *e > 0.0) && ratio <= CONTAINMENT_SPREAD,
        format!("eps* {eps:.4?}, max/min {ratio:.3} (limit {CONTAINMENT_SPREAD})"),
    )
}

fn criterion_11() -> Criterion {
    let g = grid(257);
    let u = SectorSolution::hanging(0.5).sample(g);
    let w = WeightMap::new(&g, &ManifoldSpec::axis_line([0.0, 0.0]), 0.5);
    let region = Region::ball([0.0, 0.0], 0.5);
    let results: Vec<_> = [0.02, 0.04, 0.08]
        .iter()
        .map(|&e| audit::coarea_perimeter(&u, &w, region, e, false).expect("coarea"))
        .collect();
    let perimeter = results[0].perimeter;
    let (cs, ratio) = audit::layer_constants(&results);
    check(
        (perimeter - 1.0).abs() <= PERIMETER_TOL && ratio <= LAYER_SPREAD,
        format!("perimeter {perimeter:.4} (tol {PERIMETER_TOL}), layer C {cs:.4?} max/min {ratio:.3} (limit {LAYER_SPREAD})"),
    )
}

fn criterion_12(stokes: &[Solved]) -> Criterion {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in stokes {
        let out = &s.outcome;
        let u = &out.field;
        let config = ScenarioConfig::stokes(0.5);
        let sector = config.initial_field(u.grid).expect("sector");
        let e = minimizer::energy(u, &s.weights, None, 0.0).total;
        let e_sector = minimizer::energy(&sector, &s.weights, None, 0.0).total;
        let monotone = out.history.windows(2).all(|w| w[1] <= w[0]);
        let violations = minimizer::subharmonicity_check(u, SUBHARMONIC_TOL * u.max_value()).len();
        let residual = minimizer::nodewise_optimality_residual(u);
        ok &= out.converged && e <= e_sector && monotone && violations == 0 && residual <= RESIDUAL_TOL;
        parts.push(format!(
            "{}^2: E {e:.6} <= {e_sector:.6}, monotone {monotone}, subharmonic violations {violations}, residual {residual:.1e}",
            u.grid.nx
        ));
    }
    check(ok, parts.join("; "))
}

fn main() {
    let start = Instant::now();
    let stokes: Vec<Solved> = RESOLUTIONS
        .iter()
        .map(|&n| solve(&ScenarioConfig::stokes(0.5), n))
        .collect();
    let fine = stokes.last().unwrap();
    let criteria: Vec<(usize, &str, Criterion)> = vec![
        (1, "stokes corner angle", criterion_1(&stokes)),
        (2, "generalized aperture", criterion_2()),
        (3, "weiss scale invariance", criterion_3()),
        (4, "almost-monotonicity", criterion_4()),
        (5, "volume density", criterion_5(fine)),
        (6, "lipschitz scaling", criterion_6(fine)),
        (7, "homogeneity of blow-ups", criterion_7(fine)),
        (8, "beta-number oracle", criterion_8()),
        (9, "minkowski exponent", criterion_9(fine)),
        (10, "containment", criterion_10(&stokes)),
        (11, "perimeter", criterion_11()),
        (12, "solver soundness", criterion_12(&stokes)),
    ];
    let mut failed = 0;
    for (k, name, c) in &criteria {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        if !c.passed {
            failed += 1;
        }
        println!("{tag} criterion {k:2} ({name}): {}", c.detail);
    }
    println!(
        "{} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    // FAIL lines are the verdict; the target itself fails only on a crash
}
