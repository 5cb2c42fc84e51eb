//! Scenario files, the stage runner and report emission.
//!
//! A scenario is a flat `key = value` file; `#` starts a comment and unknown
//! keys are rejected. Lists are comma separated. See [`KEYS`] for the schema.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audit::{self, AuditReport, CoareaResult, InteriorBall, LipschitzFit, Region};
use crate::blowup::{self, dyadic_scales, BlowupSequence, SymmetryDeficit};
use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField, WeightMap};
use crate::geometry::{self, GraphTerm, ManifoldKind, ManifoldSpec, Point};
use crate::minimizer::{self, BoundaryRecipe, Domain, EnergyBreakdown, ScenarioConfig, SolveConfig, SweepOrder};
use crate::strata::{self, BetaProfile, MinkowskiFit, PackingResult, PointMeasure, ReifenbergSum, StratumReport};
use crate::weiss::{self, DensityEstimate, MonotonicityViolation, WeissProfile};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("name", "scenario name"),
    ("gamma", "exponent of Q = dist(x, Γ)^γ"),
    ("manifold", "axis | point | graph"),
    ("anchor", "x, y of the manifold anchor"),
    ("graph_terms", "power:coeff, ... for the graph g(t) = Σ coeff |t|^power"),
    ("alpha", "Hölder exponent of Γ"),
    ("seminorm", "[Γ]_α; computed from the graph when absent"),
    ("boundary", "sector | constant | half-plane"),
    ("boundary_value", "value of constant data"),
    ("sector_orientation", "angle of the first sector edge"),
    ("sector_amplitude", "sector amplitude"),
    ("half_plane", "angle, offset, slope"),
    ("domain", "ball | grid"),
    ("domain_center", "x, y"),
    ("domain_radius", "radius of the ball domain"),
    ("half_width", "grid covers [-w, w]^2"),
    ("resolutions", "nodes per axis, each 2^k + 1"),
    ("field", "solve | sector (sample the sector of the boundary data)"),
    ("energy_budget", "Λ"),
    ("sup_bound", "A"),
    ("locality_radius", "ε₀, recorded"),
    ("standard_scale", "r₀, recorded"),
    ("energy_tolerance", "relative sweep energy decrease to stop at"),
    ("update_tolerance", "largest nodal update to stop at"),
    ("max_sweeps", "sweep limit"),
    ("sweep_order", "lexicographic | red-black"),
    ("positivity_threshold", "χ counts u > threshold"),
    ("relaxation", "over-relaxation factor; optimal when absent"),
    ("stages", "weiss, blowup, strata, beta, audit, stokes"),
    ("probe", "x, y of the point examined by stokes, blowup and coarea"),
    ("corner_fit_radius", "outer radius of the corner fit"),
    ("weiss_points", "Γ points for Weiss profiles"),
    ("monotonicity_tolerance", "slack of the almost-monotonicity audit"),
    ("strata_epsilon", "ε of the quantitative strata"),
    ("beta_measures", "random measures for the β cross-check"),
    ("check", "acceptance check evaluated on the report"),
    ("tolerance", "tolerance of the check"),
    ("seed", "seed for random sampling"),
    ("out", "output directory"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Weiss,
    Blowup,
    Strata,
    Beta,
    Audit,
    Stokes,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Weiss,
        Stage::Blowup,
        Stage::Strata,
        Stage::Beta,
        Stage::Audit,
        Stage::Stokes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Weiss => "weiss",
            Stage::Blowup => "blowup",
            Stage::Strata => "strata",
            Stage::Beta => "beta",
            Stage::Audit => "audit",
            Stage::Stokes => "stokes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("stages", format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    CornerAngle,
    WeissScaleInvariance,
    AlmostMonotonicity,
    VolumeDensity,
    LipschitzSlope,
    Homogeneity,
    BetaOracle,
    MinkowskiExponent,
    Containment,
    Perimeter,
    SolverSoundness,
}

impl CheckKind {
    const ALL: [CheckKind; 11] = [
        CheckKind::CornerAngle,
        CheckKind::WeissScaleInvariance,
        CheckKind::AlmostMonotonicity,
        CheckKind::VolumeDensity,
        CheckKind::LipschitzSlope,
        CheckKind::Homogeneity,
        CheckKind::BetaOracle,
        CheckKind::MinkowskiExponent,
        CheckKind::Containment,
        CheckKind::Perimeter,
        CheckKind::SolverSoundness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::CornerAngle => "corner-angle",
            CheckKind::WeissScaleInvariance => "weiss-scale-invariance",
            CheckKind::AlmostMonotonicity => "almost-monotonicity",
            CheckKind::VolumeDensity => "volume-density",
            CheckKind::LipschitzSlope => "lipschitz-slope",
            CheckKind::Homogeneity => "homogeneity",
            CheckKind::BetaOracle => "beta-oracle",
            CheckKind::MinkowskiExponent => "minkowski-exponent",
            CheckKind::Containment => "containment",
            CheckKind::Perimeter => "perimeter",
            CheckKind::SolverSoundness => "solver-soundness",
        }
    }

    /// Stage producing the numbers the check reads; `None` for the solve summary.
    pub fn stage(self) -> Option<Stage> {
        match self {
            CheckKind::CornerAngle | CheckKind::VolumeDensity | CheckKind::LipschitzSlope | CheckKind::Homogeneity => {
                Some(Stage::Stokes)
            }
            CheckKind::WeissScaleInvariance | CheckKind::AlmostMonotonicity => Some(Stage::Weiss),
            CheckKind::BetaOracle => Some(Stage::Beta),
            CheckKind::MinkowskiExponent | CheckKind::Containment => Some(Stage::Strata),
            CheckKind::Perimeter => Some(Stage::Audit),
            CheckKind::SolverSoundness => None,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("check", format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSource {
    Solve,
    Sector,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub scenario: ScenarioConfig,
    /// `[Γ]_α` override.
    pub seminorm: Option<f64>,
    pub half_width: f64,
    pub resolutions: Vec<usize>,
    pub field: FieldSource,
    pub solver: SolveConfig,
    pub stages: Vec<Stage>,
    pub probe: Point,
    pub corner_fit_radius: f64,
    pub weiss_points: usize,
    pub monotonicity_tolerance: f64,
    pub strata_epsilon: f64,
    pub beta_measures: usize,
    pub check: Option<(CheckKind, f64)>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults: the Stokes scenario at 257^2 with no analysis stages.
    pub fn stokes(gamma: f64) -> Self {
        RunConfig {
            name: "stokes".into(),
            scenario: ScenarioConfig::stokes(gamma),
            seminorm: None,
            half_width: 2.0,
            resolutions: vec![257],
            field: FieldSource::Solve,
            solver: SolveConfig::default(),
            stages: vec![],
            probe: [0.0, 0.0],
            corner_fit_radius: audit::CORNER_FIT_RADIUS,
            weiss_points: 1,
            monotonicity_tolerance: 0.05,
            strata_epsilon: 0.05,
            beta_measures: 0,
            check: None,
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.solver.validate()?;
        if self.resolutions.is_empty() {
            return Err(Error::invalid("resolutions", "empty"));
        }
        for &n in &self.resolutions {
            validate_resolution(n)?;
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::invalid("half_width", "must be positive"));
        }
        if !(self.corner_fit_radius > 0.0) {
            return Err(Error::invalid("corner_fit_radius", "must be positive"));
        }
        if !(self.monotonicity_tolerance > 0.0) {
            return Err(Error::invalid("monotonicity_tolerance", "must be positive"));
        }
        if !(self.strata_epsilon > 0.0) {
            return Err(Error::invalid("strata_epsilon", "must be positive"));
        }
        if let Some(s) = self.seminorm {
            if !(s >= 0.0) {
                return Err(Error::invalid("seminorm", "must be nonnegative"));
            }
        }
        if let Some((_, tol)) = self.check {
            if !(tol > 0.0) {
                return Err(Error::invalid("tolerance", "must be positive"));
            }
        }
        if self.field == FieldSource::Sector && self.scenario.boundary.sector(self.scenario.gamma).is_none() {
            return Err(Error::invalid("field", "sector needs sector boundary data"));
        }
        Ok(())
    }

    /// Stages requested, plus the one the check reads.
    pub fn active_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone();
        if let Some(st) = self.check.and_then(|(c, _)| c.stage()) {
            s.push(st);
        }
        s.sort();
        s.dedup();
        s
    }

    pub fn grid(&self, n: usize) -> Result<Grid> {
        Grid::square([0.0, 0.0], self.half_width, n)
    }

    pub fn seminorm(&self) -> f64 {
        self.seminorm
            .unwrap_or_else(|| geometry::holder_seminorm(&self.scenario.manifold, self.half_width))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut c = RunConfig::stokes(0.5);
        let get = |k: &str| pairs.get(k).map(|(_, v)| v.as_str());
        let num = |k: &str| -> Result<Option<f64>> { get(k).map(|v| parse_f64(k, v)).transpose() };
        let point = |k: &str| -> Result<Option<Point>> {
            get(k)
                .map(|v| {
                    let xs = parse_list(k, v)?;
                    match xs.as_slice() {
                        [a, b] => Ok([*a, *b]),
                        _ => Err(Error::invalid(k, "expected two numbers")),
                    }
                })
                .transpose()
        };
        if let Some(v) = get("name") {
            c.name = v.to_string();
        }
        if let Some(g) = num("gamma")? {
            c.scenario.gamma = g;
        }
        let anchor = point("anchor")?.unwrap_or([0.0, 0.0]);
        let alpha = num("alpha")?.unwrap_or(1.0);
        c.scenario.manifold = match get("manifold").unwrap_or("axis") {
            "axis" => ManifoldSpec::axis_line(anchor),
            "point" => ManifoldSpec::single_point(anchor),
            "graph" => {
                let terms =
                    get("graph_terms").ok_or_else(|| Error::invalid("graph_terms", "required for a graph manifold"))?;
                ManifoldSpec::graph_curve(anchor, parse_terms(terms)?, alpha)
            }
            other => return Err(Error::invalid("manifold", format!("unknown kind {other:?}"))),
        };
        if get("graph_terms").is_some() && c.scenario.manifold.kind != ManifoldKind::GraphCurve {
            return Err(Error::invalid("graph_terms", "only valid for a graph manifold"));
        }
        c.seminorm = num("seminorm")?;
        if let Some(s) = c.seminorm {
            c.scenario.manifold = c.scenario.manifold.clone().with_seminorm_bound(s);
        }
        c.scenario.boundary = match get("boundary").unwrap_or("sector") {
            "sector" => BoundaryRecipe::SectorTrace {
                orientation: num("sector_orientation")?,
                amplitude: num("sector_amplitude")?,
            },
            "constant" => BoundaryRecipe::Constant(num("boundary_value")?.unwrap_or(0.0)),
            "half-plane" => {
                let v =
                    get("half_plane").ok_or_else(|| Error::invalid("half_plane", "required for half-plane data"))?;
                match parse_list("half_plane", v)?.as_slice() {
                    [angle, offset, slope] => BoundaryRecipe::HalfPlane {
                        angle: *angle,
                        offset: *offset,
                        slope: *slope,
                    },
                    _ => return Err(Error::invalid("half_plane", "expected angle, offset, slope")),
                }
            }
            other => return Err(Error::invalid("boundary", format!("unknown recipe {other:?}"))),
        };
        c.scenario.domain = match get("domain").unwrap_or("ball") {
            "ball" => Domain::Ball {
                center: point("domain_center")?.unwrap_or([0.0, 0.0]),
                radius: num("domain_radius")?.unwrap_or(2.0),
            },
            "grid" => Domain::Grid,
            other => return Err(Error::invalid("domain", format!("unknown domain {other:?}"))),
        };
        let set = |dst: &mut f64, k: &str| -> Result<()> {
            if let Some(v) = num(k)? {
                *dst = v;
            }
            Ok(())
        };
        set(&mut c.scenario.energy_budget, "energy_budget")?;
        set(&mut c.scenario.sup_bound, "sup_bound")?;
        set(&mut c.scenario.locality_radius, "locality_radius")?;
        set(&mut c.scenario.standard_scale, "standard_scale")?;
        set(&mut c.half_width, "half_width")?;
        set(&mut c.solver.energy_tolerance, "energy_tolerance")?;
        set(&mut c.solver.update_tolerance, "update_tolerance")?;
        set(&mut c.solver.positivity_threshold, "positivity_threshold")?;
        set(&mut c.corner_fit_radius, "corner_fit_radius")?;
        set(&mut c.monotonicity_tolerance, "monotonicity_tolerance")?;
        set(&mut c.strata_epsilon, "strata_epsilon")?;
        c.solver.relaxation = num("relaxation")?;
        if let Some(v) = get("resolutions") {
            c.resolutions = parse_list("resolutions", v)?
                .into_iter()
                .map(|x| to_count("resolutions", x))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("max_sweeps") {
            c.solver.max_sweeps = to_count("max_sweeps", parse_f64("max_sweeps", v)?)?;
        }
        if let Some(v) = get("weiss_points") {
            c.weiss_points = to_count("weiss_points", parse_f64("weiss_points", v)?)?;
        }
        if let Some(v) = get("beta_measures") {
            c.beta_measures = to_count("beta_measures", parse_f64("beta_measures", v)?)?;
        }
        if let Some(v) = get("seed") {
            c.seed = v
                .parse()
                .map_err(|_| Error::invalid("seed", "expected a nonnegative integer"))?;
        }
        c.solver.order = match get("sweep_order").unwrap_or("lexicographic") {
            "lexicographic" => SweepOrder::Lexicographic,
            "red-black" => SweepOrder::RedBlack,
            other => return Err(Error::invalid("sweep_order", format!("unknown order {other:?}"))),
        };
        c.field = match get("field").unwrap_or("solve") {
            "solve" => FieldSource::Solve,
            "sector" => FieldSource::Sector,
            other => return Err(Error::invalid("field", format!("unknown source {other:?}"))),
        };
        if let Some(v) = get("stages") {
            c.stages = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(Stage::parse)
                .collect::<Result<_>>()?;
        }
        if let Some(p) = point("probe")? {
            c.probe = p;
        }
        c.check = match (get("check"), num("tolerance")?) {
            (Some(k), Some(t)) => Some((CheckKind::parse(k)?, t)),
            (Some(_), None) => return Err(Error::invalid("tolerance", "required with check")),
            (None, Some(_)) => return Err(Error::invalid("check", "required with tolerance")),
            (None, None) => None,
        };
        c.out = get("out").map(PathBuf::from);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical key/value form with every default spelled out.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let s = &self.scenario;
        put("name", self.name.clone());
        put("gamma", s.gamma.to_string());
        let mf = &s.manifold;
        put(
            "manifold",
            match mf.kind {
                ManifoldKind::AxisLine => "axis",
                ManifoldKind::SinglePoint => "point",
                ManifoldKind::GraphCurve => "graph",
            }
            .into(),
        );
        put("anchor", format!("{}, {}", mf.anchor[0], mf.anchor[1]));
        if mf.kind == ManifoldKind::GraphCurve {
            put(
                "graph_terms",
                mf.terms
                    .iter()
                    .map(|t| format!("{}:{}", t.power, t.coeff))
                    .collect::<Vec<_>>()
                    .join(", "),
            );
        }
        put("alpha", mf.alpha.to_string());
        put("seminorm", self.seminorm().to_string());
        match &s.boundary {
            BoundaryRecipe::SectorTrace { orientation, amplitude } => {
                put("boundary", "sector".into());
                let base = s.boundary.sector(s.gamma).expect("sector recipe");
                put(
                    "sector_orientation",
                    orientation.unwrap_or(base.orientation).to_string(),
                );
                put("sector_amplitude", amplitude.unwrap_or(base.amplitude).to_string());
            }
            BoundaryRecipe::Constant(a) => {
                put("boundary", "constant".into());
                put("boundary_value", a.to_string());
            }
            BoundaryRecipe::HalfPlane { angle, offset, slope } => {
                put("boundary", "half-plane".into());
                put("half_plane", format!("{angle}, {offset}, {slope}"));
            }
            BoundaryRecipe::Custom(_) => put("boundary", "custom".into()),
        }
        match s.domain {
            Domain::Ball { center, radius } => {
                put("domain", "ball".into());
                put("domain_center", format!("{}, {}", center[0], center[1]));
                put("domain_radius", radius.to_string());
            }
            Domain::Grid => put("domain", "grid".into()),
        }
        put("half_width", self.half_width.to_string());
        put(
            "resolutions",
            self.resolutions
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        put(
            "field",
            match self.field {
                FieldSource::Solve => "solve",
                FieldSource::Sector => "sector",
            }
            .into(),
        );
        put("energy_budget", s.energy_budget.to_string());
        put("sup_bound", s.sup_bound.to_string());
        put("locality_radius", s.locality_radius.to_string());
        put("standard_scale", s.standard_scale.to_string());
        let v = &self.solver;
        put("energy_tolerance", v.energy_tolerance.to_string());
        put("update_tolerance", v.update_tolerance.to_string());
        put("max_sweeps", v.max_sweeps.to_string());
        put(
            "sweep_order",
            match v.order {
                SweepOrder::Lexicographic => "lexicographic",
                SweepOrder::RedBlack => "red-black",
            }
            .into(),
        );
        put("positivity_threshold", v.positivity_threshold.to_string());
        if let Some(w) = v.relaxation {
            put("relaxation", w.to_string());
        }
        put(
            "stages",
            self.stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        );
        put("probe", format!("{}, {}", self.probe[0], self.probe[1]));
        put("corner_fit_radius", self.corner_fit_radius.to_string());
        put("weiss_points", self.weiss_points.to_string());
        put("monotonicity_tolerance", self.monotonicity_tolerance.to_string());
        put("strata_epsilon", self.strata_epsilon.to_string());
        put("beta_measures", self.beta_measures.to_string());
        if let Some((k, t)) = self.check {
            put("check", k.name().into());
            put("tolerance", t.to_string());
        }
        put("seed", self.seed.to_string());
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        m
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.echo() {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }
}

pub fn validate_resolution(n: usize) -> Result<()> {
    if n < 17 || !(n - 1).is_power_of_two() {
        return Err(Error::invalid("resolution", format!("{n} is not 2^k + 1 with k >= 4")));
    }
    Ok(())
}

/// `key -> (line, value)`; rejects unknown and repeated keys.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            reason: "expected key = value".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.iter().any(|(name, _)| *name == k) {
            return Err(Error::Parse {
                line: n + 1,
                reason: format!("unknown key {k:?}"),
            });
        }
        if out.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
            return Err(Error::Parse {
                line: n + 1,
                reason: format!("repeated key {k:?}"),
            });
        }
    }
    Ok(out)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => v
            .parse::<f64>()
            .ok()
            .filter(|x| !x.is_nan())
            .ok_or_else(|| Error::invalid(key, format!("{v:?} is not a number"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|t| parse_f64(key, t.trim())).collect()
}

fn to_count(key: &str, x: f64) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e9 {
        Ok(x as usize)
    } else {
        Err(Error::invalid(key, format!("{x} is not a count")))
    }
}

fn parse_terms(v: &str) -> Result<Vec<GraphTerm>> {
    v.split(',')
        .map(|t| {
            let (p, c) = t
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::invalid("graph_terms", format!("{t:?} is not power:coeff")))?;
            Ok(GraphTerm {
                power: parse_f64("graph_terms", p.trim())?,
                coeff: parse_f64("graph_terms", c.trim())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub source: FieldSource,
    pub converged: bool,
    pub sweeps: usize,
    pub last_update: f64,
    pub energy: EnergyBreakdown,
    /// Energy of the sector of the boundary data, when it has one.
    pub competitor_energy: Option<f64>,
    pub monotone: bool,
    pub residual: f64,
    pub subharmonic_violations: usize,
    pub max_value: f64,
    pub within_budget: bool,
    pub within_sup_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StokesSummary {
    pub corner_angle: Option<f64>,
    /// `π / (1 + γ)`.
    pub expected_angle: f64,
    pub fit_radius: f64,
    pub density: DensityEstimate,
    pub lipschitz: LipschitzFit,
    /// `(r, deficit over [r, 2r])`.
    pub homogeneity: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeissSummary {
    pub seminorm: f64,
    pub profiles: Vec<WeissProfile>,
    pub violations: Vec<MonotonicityViolation>,
    /// Largest `W(r) - W(R) - allowance(R)` over pairs `r < R`.
    pub margin: f64,
    /// `(r, W(probe, r))` on `[0.1, 1]`.
    pub probe_profile: Vec<(f64, f64)>,
    /// `(max - min) / max |W|` of the probe profile.
    pub probe_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupSummary {
    pub scales: Vec<f64>,
    pub distances: Vec<f64>,
    pub truncated: bool,
    pub converged: bool,
    /// Distance of the smallest rescaling to the best rotated sector.
    pub sector_distance: Option<f64>,
    pub sector_orientation: Option<f64>,
    /// Deficits of every rescaling against the `j = 0, 1` symmetric classes.
    pub deficits: Vec<ScaleDeficit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleDeficit {
    pub r: f64,
    #[serde(flatten)]
    pub deficit: SymmetryDeficit,
}

impl BlowupSummary {
    /// `x,y,r,j,deficit,direction`; the direction is empty for classes without one.
    pub fn deficits_csv(&self, x: Point) -> String {
        let mut s = String::from("x,y,r,j,deficit,direction\n");
        for d in &self.deficits {
            let dir = d.deficit.direction.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{dir}",
                x[0], x[1], d.r, d.deficit.j, d.deficit.deficit
            )
            .expect("string write");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataSummary {
    pub s_points: Vec<Point>,
    pub sigma_points: Vec<Point>,
    pub theta: Vec<(Point, f64)>,
    pub closure_violations: Vec<Point>,
    pub strata: StratumReport,
    pub epsilon_star: Option<f64>,
    pub minkowski: MinkowskiFit,
    /// `(r, Σ r^0)` over a greedy disjoint family of `B_r` centred on `S`.
    pub packing: Vec<(f64, PackingResult)>,
}

/// Greedy maximal family of pairwise disjoint balls `B_r(x)`, `x` in `points`.
pub fn disjoint_balls(points: &[Point], r: f64) -> Vec<(Point, f64)> {
    let mut chosen: Vec<(Point, f64)> = Vec::new();
    for &p in points {
        if chosen.iter().all(|(q, _)| geometry::distance(p, *q) >= 2.0 * r) {
            chosen.push((p, r));
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSummary {
    pub free_boundary_mass: f64,
    pub reifenberg: Option<ReifenbergSum>,
    pub random_measures: usize,
    /// Largest `|β²_eigen - β²_search|` over the random measures.
    pub random_max_error: Option<f64>,
    /// `β²` of the four corners of a square, which is exactly 1.
    pub square_corners: f64,
    /// `β²` of the free-boundary measure at the probe over dyadic radii.
    pub profiles: Vec<BetaProfile>,
}

/// `x,y,r,k,beta2,lambda1,lambda2,mass`.
pub fn beta_csv(profiles: &[BetaProfile]) -> String {
    let mut s = String::from("x,y,r,k,beta2,lambda1,lambda2,mass\n");
    for p in profiles {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.center[0], p.center[1], p.radius, p.k, p.beta2, p.eigenvalues[0], p.eigenvalues[1], p.mass
        )
        .expect("string write");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundarySummary {
    pub threshold: f64,
    pub chains: usize,
    pub vertices: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub free_boundary: FreeBoundarySummary,
    pub growth: AuditReport,
    pub interior_balls: Vec<InteriorBall>,
    pub coarea: Vec<CoareaResult>,
    pub layer_constants: Vec<f64>,
    pub layer_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub resolution: usize,
    pub h: f64,
    pub solve: SolveSummary,
    pub stokes: Option<StokesSummary>,
    pub weiss: Option<WeissSummary>,
    pub blowup: Option<BlowupSummary>,
    pub strata: Option<StrataSummary>,
    pub beta: Option<BetaSummary>,
    pub audit: Option<AuditSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Operation whose output is checked.
    pub operation: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationEntry {
    pub resolution: usize,
    pub source: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: BTreeMap<String, String>,
    pub runs: Vec<RunReport>,
    pub checks: Vec<Check>,
    pub violations: Vec<ViolationEntry>,
}

impl Report {
    pub fn converged(&self) -> bool {
        self.runs.iter().all(|r| r.solve.converged)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Field of one resolution: solved or sampled.
pub struct Computed {
    pub field: ScalarField,
    pub summary: SolveSummary,
    pub history: Vec<f64>,
}

pub fn compute_field(config: &RunConfig, n: usize) -> Result<Computed> {
    let grid = config.grid(n)?;
    let s = &config.scenario;
    let weights = WeightMap::new(&grid, &s.manifold, s.gamma);
    let (field, converged, sweeps, last_update, history, budget, sup) = match config.field {
        FieldSource::Solve => {
            let out = minimizer::solve(s, grid, &config.solver)?;
            (
                out.field,
                out.converged,
                out.sweeps,
                out.last_update,
                out.history,
                out.within_budget,
                out.within_sup_bound,
            )
        }
        FieldSource::Sector => {
            let sector = s.boundary.sector(s.gamma).expect("validated sector data");
            let mask = minimizer::dirichlet_mask(&grid, &s.domain);
            let f = sector.sample(grid).with_dirichlet(mask)?;
            let e = minimizer::energy(&f, &weights, None, config.solver.positivity_threshold).total;
            (f, true, 0, 0.0, vec![e], true, true)
        }
    };
    let summary = summarize_field(
        config,
        &field,
        &weights,
        &history,
        converged,
        sweeps,
        last_update,
        budget,
        sup,
    )?;
    Ok(Computed {
        field,
        summary,
        history,
    })
}

/// Field dump written by `solve` and read by the analysis stages.
pub fn field_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("field-{n}.csv"))
}

pub fn load_field(config: &RunConfig, dir: &Path, n: usize) -> Result<ScalarField> {
    let path = field_path(dir, n);
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "{} is missing; run `solve` first",
            path.display()
        )));
    }
    let f = ScalarField::read_csv(&path)?;
    let expected = config.grid(n)?;
    if f.grid != expected {
        return Err(Error::Precondition(format!(
            "{} does not match the configured grid",
            path.display()
        )));
    }
    f.with_dirichlet(minimizer::dirichlet_mask(&expected, &config.scenario.domain))
}

pub const SUBHARMONIC_TOLERANCE: f64 = 1e-6;

#[allow(clippy::too_many_arguments)]
fn summarize_field(
    config: &RunConfig,
    field: &ScalarField,
    weights: &WeightMap,
    history: &[f64],
    converged: bool,
    sweeps: usize,
    last_update: f64,
    within_budget: bool,
    within_sup_bound: bool,
) -> Result<SolveSummary> {
    let s = &config.scenario;
    let threshold = config.solver.positivity_threshold;
    let competitor_energy = match s.boundary.sector(s.gamma) {
        Some(_) => {
            let c = s.initial_field(field.grid)?;
            Some(minimizer::energy(&c, weights, None, threshold).total)
        }
        None => None,
    };
    let max_value = field.max_value();
    Ok(SolveSummary {
        source: config.field,
        converged,
        sweeps,
        last_update,
        energy: minimizer::energy(field, weights, None, threshold),
        competitor_energy,
        monotone: history.windows(2).all(|w| w[1] <= w[0]),
        residual: minimizer::nodewise_optimality_residual(field),
        subharmonic_violations: minimizer::subharmonicity_check(field, SUBHARMONIC_TOLERANCE * max_value).len(),
        max_value,
        within_budget,
        within_sup_bound,
    })
}

/// Summary of a field loaded from a dump (no solver telemetry).
pub fn summarize_loaded(config: &RunConfig, field: &ScalarField) -> Result<SolveSummary> {
    let s = &config.scenario;
    let weights = WeightMap::new(&field.grid, &s.manifold, s.gamma);
    let e = minimizer::energy(field, &weights, None, config.solver.positivity_threshold).total;
    summarize_field(config, field, &weights, &[e], true, 0, 0.0, true, true)
}

pub const HOMOGENEITY_RADII: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const GROWTH_RADII: [f64; 3] = [0.05, 0.1, 0.2];
pub const COAREA_EPSILONS: [f64; 3] = [0.02, 0.04, 0.08];
pub const COAREA_RADIUS: f64 = 0.5;
pub const INTERIOR_BALL_RADIUS: f64 = 0.1;
pub const INTERIOR_BALL_POINTS: usize = 16;
pub const STRATA_MARGIN: f64 = 0.25;
pub const BLOWUP_TOLERANCE: f64 = 0.05;

pub fn run_stokes(config: &RunConfig, u: &ScalarField) -> Result<StokesSummary> {
    let g = &u.grid;
    let gamma = config.scenario.gamma;
    let x = config.probe;
    let fb = audit::extract_free_boundary(u, audit::default_threshold(g.h, gamma))?;
    let corner_angle = audit::corner_angle(&fb, u, x, config.corner_fit_radius, audit::CORNER_INNER_CELLS * g.h)
        .ok()
        .map(|c| c.angle);
    let density = weiss::volume_density(u, x, &strata::density_radii(g.h))?;
    let lipschitz = audit::lipschitz_audit(u, gamma, x, &dyadic_scales(0.5, 8.0 * g.h));
    let homogeneity = HOMOGENEITY_RADII
        .iter()
        .filter(|&&r| g.contains_ball(x, 2.0 * r) && r >= weiss::MIN_RADIUS_CELLS * g.h)
        .map(|&r| Ok((r, weiss::homogeneity_deficit(u, x, gamma, r, 2.0 * r)?)))
        .collect::<Result<_>>()?;
    Ok(StokesSummary {
        corner_angle,
        expected_angle: PI / (1.0 + gamma),
        fit_radius: config.corner_fit_radius,
        density,
        lipschitz,
        homogeneity,
    })
}

/// `Γ` points for Weiss profiles: evenly spaced parameters in `[-0.45, 0.45]`.
pub fn weiss_points(config: &RunConfig) -> Vec<Point> {
    let m = &config.scenario.manifold;
    let k = config.weiss_points;
    if m.kind == ManifoldKind::SinglePoint || k <= 1 {
        return vec![m.point_at(0.0)];
    }
    (0..k)
        .map(|i| m.point_at(-0.45 + 0.9 * i as f64 / (k - 1) as f64))
        .collect()
}

pub fn run_weiss(config: &RunConfig, u: &ScalarField) -> Result<WeissSummary> {
    let g = &u.grid;
    let s = &config.scenario;
    let weights = WeightMap::new(g, &s.manifold, s.gamma);
    let seminorm = config.seminorm();
    let alpha = s.manifold.alpha;
    let mut profiles = Vec::new();
    let mut violations = Vec::new();
    let mut margin = f64::NEG_INFINITY;
    for x in weiss_points(config) {
        let scales: Vec<f64> = dyadic_scales(0.5, 8.0 * g.h)
            .into_iter()
            .filter(|&r| g.contains_ball(x, r))
            .collect();
        let p = WeissProfile::compute(u, &weights, x, &scales, seminorm, alpha)?;
        // scales decrease, so every earlier entry is a larger radius
        for (a, &w_r) in p.values.iter().enumerate() {
            for (&w_big, &big_r) in p.values.iter().zip(&scales).take(a) {
                margin = margin.max(w_r - w_big - weiss::drift_allowance(s.gamma, alpha, seminorm, big_r));
            }
        }
        violations.extend(weiss::monotonicity_audit(
            &p,
            seminorm,
            alpha,
            s.gamma,
            config.monotonicity_tolerance,
        ));
        profiles.push(p);
    }
    let probe_profile: Vec<(f64, f64)> = (0..10)
        .map(|k| 0.1 * 10f64.powf(k as f64 / 9.0))
        .filter(|&r| g.contains_ball(config.probe, r) && r >= weiss::MIN_RADIUS_CELLS * g.h)
        .map(|r| Ok((r, weiss::weiss_density(u, &weights, config.probe, r)?)))
        .collect::<Result<_>>()?;
    let probe_spread = (!probe_profile.is_empty()).then(|| {
        let hi = probe_profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let lo = probe_profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        (hi - lo) / hi.abs().max(lo.abs())
    });
    Ok(WeissSummary {
        seminorm,
        profiles,
        violations,
        margin,
        probe_profile,
        probe_spread,
    })
}

pub fn run_blowup(config: &RunConfig, u: &ScalarField) -> Result<(BlowupSummary, BlowupSequence)> {
    let g = &u.grid;
    let gamma = config.scenario.gamma;
    let scales: Vec<f64> = dyadic_scales(0.5, 8.0 * g.h)
        .into_iter()
        .filter(|&r| g.contains_ball(config.probe, r))
        .collect();
    let seq = blowup::blowup_sequence(u, config.probe, gamma, &scales, BLOWUP_TOLERANCE)?;
    let alignment = match seq.rescalings.last() {
        Some(t) => Some(blowup::align_with_sector(t, gamma)?),
        None => None,
    };
    let mut deficits = Vec::new();
    for (t, &r) in seq.rescalings.iter().zip(&seq.scales) {
        for j in 0..2 {
            deficits.push(ScaleDeficit {
                r,
                deficit: blowup::symmetry_deficit(t, j, gamma)?,
            });
        }
    }
    let summary = BlowupSummary {
        scales: seq.scales.clone(),
        distances: seq.distances.clone(),
        truncated: seq.truncated,
        converged: seq.converged,
        sector_distance: alignment.as_ref().map(|a| a.distance),
        sector_orientation: alignment.as_ref().map(|a| a.orientation),
        deficits,
    };
    Ok((summary, seq))
}

pub fn run_strata(config: &RunConfig, u: &ScalarField) -> Result<StrataSummary> {
    let g = &u.grid;
    let s = &config.scenario;
    let tau = audit::default_threshold(g.h, s.gamma);
    let d = strata::decompose_singular(u, &s.manifold, tau, STRATA_MARGIN)?;
    let candidates: Vec<Point> = d.s.iter().chain(&d.sigma).copied().collect();
    let report = strata::classify_strata(u, s.gamma, &candidates, config.strata_epsilon, 8.0 * g.h)?;
    let epsilon_star = strata::containment_audit(&report);
    let radii = strata::minkowski_radii(g.h);
    let minkowski = strata::minkowski_content(&d.s, &radii, g.h / 4.0, 0)?;
    let packing = radii
        .iter()
        .map(|&r| (r, strata::packing_check(&disjoint_balls(&d.s, r), 0)))
        .collect();
    Ok(StrataSummary {
        packing,
        s_points: d.s,
        sigma_points: d.sigma,
        theta: d.theta,
        closure_violations: d.closure_violations,
        strata: report,
        epsilon_star,
        minkowski,
    })
}

pub fn run_beta(config: &RunConfig, u: &ScalarField) -> Result<BetaSummary> {
    let g = &u.grid;
    let fb = audit::extract_free_boundary(u, audit::default_threshold(g.h, config.scenario.gamma))?;
    let mu = PointMeasure::unit(fb.vertices().collect());
    let radius = 0.5;
    let free_boundary_mass = mu.mass_in(config.probe, radius);
    let reifenberg = if free_boundary_mass > 0.0 {
        Some(strata::reifenberg_sum(&mu, config.probe, radius, 1)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst: Option<f64> = None;
    for _ in 0..config.beta_measures {
        let pts: Vec<Point> = (0..10)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let ws: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..2.0)).collect();
        let m = PointMeasure::new(pts, ws)?;
        let a = strata::beta_number(&m, [0.0, 0.0], 1.5, 1)?.beta2;
        let b = strata::beta_by_direction_search(&m, [0.0, 0.0], 1.5)?;
        worst = Some(worst.unwrap_or(0.0).max((a - b).abs()));
    }
    let square = PointMeasure::unit(vec![[0.5, 0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, -0.5]]);
    let profiles = dyadic_scales(radius, 8.0 * g.h)
        .into_iter()
        .filter(|&r| mu.mass_in(config.probe, r) > 0.0)
        .map(|r| strata::beta_number(&mu, config.probe, r, 1))
        .collect::<Result<_>>()?;
    Ok(BetaSummary {
        profiles,
        free_boundary_mass,
        reifenberg,
        random_measures: config.beta_measures,
        random_max_error: worst,
        square_corners: strata::beta_number(&square, [0.0, 0.0], 1.0, 1)?.beta2,
    })
}

/// Evenly spaced subsample of at most `n` items.
fn spread<T: Copy>(items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|k| items[k * items.len() / n]).collect()
}

pub fn run_audit(config: &RunConfig, u: &ScalarField) -> Result<(AuditSummary, audit::FreeBoundary)> {
    let g = &u.grid;
    let s = &config.scenario;
    let weights = WeightMap::new(g, &s.manifold, s.gamma);
    let fb = audit::extract_free_boundary(u, audit::default_threshold(g.h, s.gamma))?;
    let growth = audit::growth_audit(u, &weights, &fb, &GROWTH_RADII, None);
    let away: Vec<Point> = fb
        .vertices()
        .filter(|p| geometry::project(*p, &s.manifold).distance > INTERIOR_BALL_RADIUS)
        .collect();
    let c_min = growth.c_min.unwrap_or(0.0);
    let interior_balls = audit::interior_ball_audit(
        u,
        &weights,
        &spread(&away, INTERIOR_BALL_POINTS),
        INTERIOR_BALL_RADIUS,
        c_min,
    );
    let region = Region::ball(config.probe, COAREA_RADIUS);
    let coarea: Vec<CoareaResult> = COAREA_EPSILONS
        .iter()
        .map(|&e| audit::coarea_perimeter(u, &weights, region, e, false))
        .collect::<Result<_>>()?;
    let (layer_constants, layer_ratio) = audit::layer_constants(&coarea);
    let summary = AuditSummary {
        free_boundary: FreeBoundarySummary {
            threshold: fb.threshold,
            chains: fb.chains.len(),
            vertices: fb.vertices().count(),
            length: fb.length(),
        },
        growth,
        interior_balls,
        coarea,
        layer_constants,
        layer_ratio,
    };
    Ok((summary, fb))
}

/// Runs `stages` on one field. Writes the free-boundary polyline
/// and the Weiss and strata CSVs when `dir` is given.
pub fn analyze(
    config: &RunConfig,
    field: &ScalarField,
    solve: SolveSummary,
    stages: &[Stage],
    dir: Option<&Path>,
) -> Result<RunReport> {
    let n = field.grid.nx;
    let has = |s: Stage| stages.contains(&s);
    let mut run = RunReport {
        resolution: n,
        h: field.grid.h,
        solve,
        stokes: None,
        weiss: None,
        blowup: None,
        strata: None,
        beta: None,
        audit: None,
    };
    if has(Stage::Stokes) {
        run.stokes = Some(run_stokes(config, field)?);
    }
    if has(Stage::Weiss) {
        let w = run_weiss(config, field)?;
        if let Some(d) = dir {
            let csv: String = w
                .profiles
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let body = p.to_csv();
                    if k == 0 {
                        body
                    } else {
                        body.lines().skip(1).map(|l| format!("{l}\n")).collect()
                    }
                })
                .collect();
            std::fs::write(d.join(format!("weiss-{n}.csv")), csv)?;
        }
        run.weiss = Some(w);
    }
    if has(Stage::Blowup) {
        let (b, seq) = run_blowup(config, field)?;
        if let Some(d) = dir {
            std::fs::write(d.join(format!("blowup-deficits-{n}.csv")), b.deficits_csv(config.probe))?;
            for (k, t) in seq.rescalings.iter().enumerate() {
                t.field.write_csv(&d.join(format!("blowup-{n}-{k}.csv")))?;
            }
        }
        run.blowup = Some(b);
    }
    if has(Stage::Strata) {
        let s = run_strata(config, field)?;
        if let Some(d) = dir {
            std::fs::write(d.join(format!("strata-{n}.csv")), s.strata.to_csv())?;
        }
        run.strata = Some(s);
    }
    if has(Stage::Beta) {
        let b = run_beta(config, field)?;
        if let Some(d) = dir {
            std::fs::write(d.join(format!("beta-{n}.csv")), beta_csv(&b.profiles))?;
        }
        run.beta = Some(b);
    }
    if has(Stage::Audit) {
        let (a, fb) = run_audit(config, field)?;
        if let Some(d) = dir {
            std::fs::write(d.join(format!("free-boundary-{n}.csv")), fb.to_csv())?;
        }
        run.audit = Some(a);
    }
    Ok(run)
}

fn max_of(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::NEG_INFINITY, f64::max)
}

fn check(kind: CheckKind, operation: &str, value: f64, tolerance: f64, passed: bool, detail: String) -> Check {
    Check {
        name: kind.name().into(),
        operation: operation.into(),
        value,
        tolerance,
        passed,
        detail,
    }
}

/// Evaluates `kind` on the runs, ordered from coarse to fine.
pub fn evaluate(kind: CheckKind, tol: f64, gamma: f64, runs: &[RunReport]) -> Check {
    let finest = runs.last().expect("at least one run");
    let missing = |what: &str| check(kind, what, f64::NAN, tol, false, format!("{what} missing"));
    match kind {
        CheckKind::CornerAngle => {
            let errors: Option<Vec<f64>> = runs
                .iter()
                .map(|r| {
                    r.stokes
                        .as_ref()
                        .and_then(|s| s.corner_angle.map(|a| (a - s.expected_angle).abs()))
                })
                .collect();
            let Some(errors) = errors else {
                return missing("corner_angle");
            };
            let worst = max_of(errors.iter().copied());
            let shrinking = errors.windows(2).all(|w| w[1] <= w[0]);
            check(
                kind,
                "corner_angle",
                worst,
                tol,
                worst <= tol && shrinking,
                format!("|angle - π/(1+γ)| per resolution {errors:?}, non-increasing: {shrinking}"),
            )
        }
        CheckKind::WeissScaleInvariance => {
            let v: Option<Vec<f64>> = runs
                .iter()
                .map(|r| r.weiss.as_ref().and_then(|w| w.probe_spread))
                .collect();
            let Some(v) = v else {
                return missing("weiss_density");
            };
            let worst = max_of(v.into_iter());
            check(
                kind,
                "weiss_density",
                worst,
                tol,
                worst <= tol,
                "(max - min) / |W| over r in [0.1, 1]".into(),
            )
        }
        CheckKind::AlmostMonotonicity => {
            let v: Option<Vec<f64>> = runs.iter().map(|r| r.weiss.as_ref().map(|w| w.margin)).collect();
            let Some(v) = v else {
                return missing("monotonicity_audit");
            };
            let worst = max_of(v.into_iter());
            check(
                kind,
                "monotonicity_audit",
                worst,
                tol,
                worst <= tol,
                "largest W(r) - W(R) - 16 (γ/α) [Γ]_α R^α over r < R".into(),
            )
        }
        CheckKind::VolumeDensity => {
            let target = 1.0 / (2.0 * (1.0 + gamma));
            let v: Option<Vec<f64>> = runs
                .iter()
                .map(|r| r.stokes.as_ref().map(|s| s.density.limit))
                .collect();
            let Some(v) = v else {
                return missing("volume_density");
            };
            let worst = max_of(v.iter().map(|t| (t - target).abs()));
            check(
                kind,
                "volume_density",
                worst,
                tol,
                worst <= tol,
                format!("Θ per resolution {v:?} against {target}"),
            )
        }
        CheckKind::LipschitzSlope => {
            let v: Option<Vec<f64>> = runs
                .iter()
                .map(|r| r.stokes.as_ref().and_then(|s| s.lipschitz.excess))
                .collect();
            let Some(v) = v else {
                return missing("lipschitz_audit");
            };
            let worst = max_of(v.iter().map(|e| e.abs()));
            check(
                kind,
                "lipschitz_audit",
                worst,
                tol,
                worst <= tol,
                format!("slope - γ per resolution {v:?}"),
            )
        }
        CheckKind::Homogeneity => {
            let Some(s) = &finest.stokes else {
                return missing("homogeneity_deficit");
            };
            let d: Vec<f64> = s.homogeneity.iter().map(|p| p.1).collect();
            let Some(&last) = d.last() else {
                return missing("homogeneity_deficit");
            };
            let decreasing = d.windows(2).all(|w| w[1] < w[0]);
            check(
                kind,
                "homogeneity_deficit",
                last,
                tol,
                decreasing && last < tol,
                format!(
                    "deficits over [r, 2r] for r = {:?}: {d:?}, decreasing: {decreasing}",
                    HOMOGENEITY_RADII
                ),
            )
        }
        CheckKind::BetaOracle => {
            let Some(b) = &finest.beta else {
                return missing("beta_number");
            };
            let Some(err) = b.random_max_error else {
                return missing("beta_number cross-check");
            };
            let square = (b.square_corners - 1.0).abs();
            check(
                kind,
                "beta_number",
                err,
                tol,
                err <= tol && square <= 1e-6,
                format!(
                    "{} random measures; square corners |β² - 1| = {square:e} (tolerance 1e-6)",
                    b.random_measures
                ),
            )
        }
        CheckKind::MinkowskiExponent => {
            let Some(s) = &finest.strata else {
                return missing("minkowski_content");
            };
            let Some(slope) = s.minkowski.slope else {
                return check(
                    kind,
                    "minkowski_content",
                    f64::NAN,
                    tol,
                    false,
                    "no singular points".into(),
                );
            };
            let hi = max_of(s.minkowski.normalized.iter().copied());
            let lo = s.minkowski.normalized.iter().copied().fold(f64::INFINITY, f64::min);
            let err = (slope - 2.0).abs();
            check(
                kind,
                "minkowski_content",
                err,
                tol,
                err <= tol && hi / lo <= 2.0,
                format!("slope {slope}, max/min Vol/r^2 {} (limit 2)", hi / lo),
            )
        }
        CheckKind::Containment => {
            let eps: Option<Vec<f64>> = runs
                .iter()
                .map(|r| r.strata.as_ref().and_then(|s| s.epsilon_star))
                .collect();
            let Some(eps) = eps else {
                return missing("containment_audit");
            };
            let hi = max_of(eps.iter().copied());
            let lo = eps.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = hi / lo;
            check(
                kind,
                "containment_audit",
                ratio,
                tol,
                lo > 0.0 && ratio <= tol,
                format!("ε* per resolution {eps:?}; value is max/min"),
            )
        }
        CheckKind::Perimeter => {
            let Some(a) = &finest.audit else {
                return missing("coarea_perimeter");
            };
            let p = a.coarea[0].perimeter;
            let err = (p - 1.0).abs();
            check(
                kind,
                "coarea_perimeter",
                err,
                tol,
                err <= tol && a.layer_ratio <= 2.0,
                format!(
                    "perimeter {p} on B_{COAREA_RADIUS}; layer constants {:?}, max/min {} (limit 2)",
                    a.layer_constants, a.layer_ratio
                ),
            )
        }
        CheckKind::SolverSoundness => {
            let mut ok = true;
            let mut parts = Vec::new();
            let mut worst: f64 = 0.0;
            for r in runs {
                let s = &r.solve;
                let below = s.competitor_energy.is_none_or(|c| s.energy.total <= c);
                ok &= s.converged && below && s.monotone && s.subharmonic_violations == 0 && s.residual <= tol;
                worst = worst.max(s.residual);
                parts.push(format!(
                    "{}: converged {}, energy {} <= competitor {:?}: {below}, monotone {}, subharmonic violations {}",
                    r.resolution,
                    s.converged,
                    s.energy.total,
                    s.competitor_energy,
                    s.monotone,
                    s.subharmonic_violations
                ));
            }
            check(kind, "solve", worst, tol, ok, parts.join("; "))
        }
    }
}

fn collect_violations(runs: &[RunReport]) -> Vec<ViolationEntry> {
    let mut out = Vec::new();
    for r in runs {
        let n = r.resolution;
        let mut push = |source: &str, detail: String| {
            out.push(ViolationEntry {
                resolution: n,
                source: source.into(),
                detail,
            })
        };
        if r.solve.subharmonic_violations > 0 {
            push(
                "subharmonicity_check",
                format!("{} nodes", r.solve.subharmonic_violations),
            );
        }
        if let Some(w) = &r.weiss {
            for v in &w.violations {
                push(
                    "monotonicity_audit",
                    format!("r {} R {} excess {}", v.r, v.big_r, v.excess),
                );
            }
        }
        if let Some(a) = &r.audit {
            for v in &a.growth.violations {
                push(
                    "growth_audit",
                    format!("{:?} at {:?} r {} value {}", v.kind, v.point, v.radius, v.value),
                );
            }
            for b in &a.interior_balls {
                if let InteriorBall::Missing { point } = b {
                    push("interior_ball_audit", format!("no interior ball at {point:?}"));
                }
            }
        }
        if let Some(s) = &r.strata {
            for p in &s.closure_violations {
                push("decompose_singular", format!("Σ sample {p:?} next to an S sample"));
            }
        }
    }
    out
}

/// Assembles the report from per-resolution runs.
/// A check reading a stage outside `stages` is not evaluated.
pub fn assemble(config: &RunConfig, runs: Vec<RunReport>, stages: &[Stage]) -> Report {
    let checks = config
        .check
        .filter(|(kind, _)| !runs.is_empty() && kind.stage().is_none_or(|s| stages.contains(&s)))
        .map(|(kind, tol)| vec![evaluate(kind, tol, config.scenario.gamma, &runs)])
        .unwrap_or_default();
    Report {
        scenario: config.echo(),
        violations: collect_violations(&runs),
        runs,
        checks,
    }
}

/// Solve (or sample) every resolution and run the active stages. Field
/// dumps, solver histories and stage CSVs go to `dir` when given.
pub fn run_scenario(config: &RunConfig, stages: &[Stage], dir: Option<&Path>) -> Result<Report> {
    config.validate()?;
    let mut runs = Vec::new();
    for &n in &config.resolutions {
        let c = compute_field(config, n)?;
        if let Some(d) = dir {
            c.field.write_csv(&field_path(d, n))?;
            write_history(d, n, &c.history)?;
        }
        runs.push(analyze(config, &c.field, c.summary, stages, dir)?);
    }
    Ok(assemble(config, runs, stages))
}

pub fn write_history(dir: &Path, n: usize, history: &[f64]) -> Result<()> {
    let mut s = String::from("sweep,energy\n");
    for (k, e) in history.iter().enumerate() {
        writeln!(s, "{k},{e}").expect("string write");
    }
    std::fs::write(dir.join(format!("history-{n}.csv")), s)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    CsvBundle,
}

pub fn report_json(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// `path,value` for every scalar leaf of the JSON form.
pub fn report_flat_csv(report: &Report) -> Result<String> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    walk(&join(prefix, k), x, out);
                }
            }
            serde_json::Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&join(prefix, &i.to_string()), x, out);
                }
            }
            serde_json::Value::String(s) => writeln!(out, "{prefix},{}", quote(s)).expect("string write"),
            other => writeln!(out, "{prefix},{other}").expect("string write"),
        }
    }
    fn join(a: &str, b: &str) -> String {
        if a.is_empty() {
            b.to_string()
        } else {
            format!("{a}.{b}")
        }
    }
    fn quote(s: &str) -> String {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    }
    let value = serde_json::to_value(report)?;
    let mut out = String::from("path,value\n");
    walk("", &value, &mut out);
    Ok(out)
}

/// Writes `report.json`, or the bundle `report.csv`, `checks.csv` and
/// `violations.csv`. Output depends only on the report.
pub fn emit_report(report: &Report, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    match format {
        Format::Json => write("report.json", report_json(report)?)?,
        Format::CsvBundle => {
            write("report.csv", report_flat_csv(report)?)?;
            let mut c = String::from("name,operation,value,tolerance,passed\n");
            for k in &report.checks {
                writeln!(c, "{},{},{},{},{}", k.name, k.operation, k.value, k.tolerance, k.passed)
                    .expect("string write");
            }
            write("checks.csv", c)?;
            let mut v = String::from("resolution,source,detail\n");
            for e in &report.violations {
                writeln!(v, "{},{},\"{}\"", e.resolution, e.source, e.detail.replace('"', "\"\""))
                    .expect("string write");
            }
            write("violations.csv", v)?;
        }
    }
    Ok(written)
}
