//! Scenario files: a TOML (or JSON) description of an assembly plus solver
//! options.
//!
//! Physical quantities carry their unit in the key name (`length_mm`,
//! `tension_N`, `angle_deg`) and are converted to SI on load. A value may be
//! written as `{ required = "...", placeholder = x }` to mark an input that
//! must be supplied by the user; see [`ParseOptions`]. The format is
//! documented in `docs/scenario-format.md`.

pub mod export;
pub mod presets;
pub mod units;

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::assembly::{
    AssemblySpec, AssignmentStrategy, ModelError, StiffnessPair, StrainProfile, TendonSpec,
    TubeSpec,
};
use crate::routing::RoutingPath;
use crate::shooting::ShooterOptions;
use crate::so3::Vec3;
use units::{si_key, split_key, Dimension};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub assembly: AssemblySpec,
    pub solver: ShooterOptions,
    /// Field paths whose documented placeholder was used.
    pub placeholders: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// `(field path, value)` pairs applied before validation, e.g.
    /// `("tubes.0.outer_diameter_mm", "1.2")`.
    pub overrides: Vec<(String, String)>,
    /// Use the documented placeholder for required inputs that were not
    /// supplied instead of failing.
    pub accept_placeholders: bool,
}

impl ParseOptions {
    pub fn accepting_placeholders() -> Self {
        ParseOptions {
            overrides: Vec::new(),
            accept_placeholders: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Toml,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    /// Syntax errors carry a line/column location, structural errors a field
    /// path.
    Parse { location: String, message: String },
    Unit { path: String, message: String },
    Required { path: String, description: String },
    Validation { path: String, message: String },
    UnknownPreset(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Parse { location, message } => write!(f, "parse error at {location}: {message}"),
            ScenarioError::Unit { path, message } => write!(f, "unit error at {path}: {message}"),
            ScenarioError::Required { path, description } => write!(
                f,
                "required input {path} not supplied ({description}); pass --set {path}=<value> or accept placeholders"
            ),
            ScenarioError::Validation { path, message } => write!(f, "invalid scenario at {path}: {message}"),
            ScenarioError::UnknownPreset(name) => write!(
                f,
                "unknown preset '{name}'; available: {}",
                presets::PRESET_NAMES.join(", ")
            ),
        }
    }
}

/// Every problem found in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

impl From<ScenarioError> for ScenarioErrors {
    fn from(e: ScenarioError) -> Self {
        ScenarioErrors(vec![e])
    }
}

pub fn parse_scenario(text: &str, format: Format, options: &ParseOptions) -> Result<Scenario, ScenarioErrors> {
    let mut root: Value = match format {
        Format::Toml => toml::from_str(text).map_err(|e| ScenarioError::Parse {
            location: toml_location(text, &e),
            message: e.message().to_string(),
        })?,
        Format::Json => serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?,
    };
    let mut errors = Vec::new();
    for (path, raw) in &options.overrides {
        if let Err(e) = apply_override(&mut root, path, raw) {
            errors.push(e);
        }
    }
    let mut cx = Cx {
        errors,
        placeholders: Vec::new(),
        accept: options.accept_placeholders,
    };
    let scenario = build(&root, &mut cx);
    if !cx.errors.is_empty() {
        return Err(ScenarioErrors(cx.errors));
    }
    let mut scenario = scenario.expect("no errors implies a scenario");
    scenario.placeholders = cx.placeholders;
    Ok(scenario)
}

fn toml_location(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}")
        }
        None => "document".into(),
    }
}

fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), ScenarioError> {
    let value = parse_literal(raw);
    let missing = || ScenarioError::Parse {
        location: path.to_string(),
        message: "override path does not exist in the scenario".into(),
    };
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(missing)?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| missing())?;
                let slot = items.get_mut(idx).ok_or_else(missing)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(missing()),
        };
    }
    Err(missing())
}

/// A TOML literal (`1.5`, `[1, 2]`, `"text"`), or the raw text as a string.
fn parse_literal(raw: &str) -> Value {
    toml::from_str::<Map<String, Value>>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut m| m.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

struct Cx {
    errors: Vec<ScenarioError>,
    placeholders: Vec<String>,
    accept: bool,
}

impl Cx {
    fn parse(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ScenarioError::Parse {
            location: path.to_string(),
            message: message.into(),
        });
    }

    fn unit(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ScenarioError::Unit {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn invalid(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ScenarioError::Validation {
            path: path.to_string(),
            message: message.into(),
        });
    }

    /// Resolves a required-input marker to its placeholder, if accepted.
    fn resolve<'v>(&mut self, path: &str, v: &'v Value) -> Option<&'v Value> {
        let Value::Object(map) = v else {
            return Some(v);
        };
        let Some(desc) = map.get("required") else {
            return Some(v);
        };
        let description = desc.as_str().unwrap_or("required input").to_string();
        if !self.accept {
            self.errors.push(ScenarioError::Required {
                path: path.to_string(),
                description,
            });
            return None;
        }
        match map.get("placeholder") {
            Some(p) => {
                self.placeholders.push(path.to_string());
                Some(p)
            }
            None => {
                self.parse(path, "required input has no placeholder");
                None
            }
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// A JSON object being consumed; unconsumed keys are reported as unknown.
struct Table<'a> {
    path: String,
    map: &'a Map<String, Value>,
    used: RefCell<BTreeSet<&'a str>>,
}

impl<'a> Table<'a> {
    fn new(path: String, map: &'a Map<String, Value>) -> Self {
        Table {
            path,
            map,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn get(&self, key: &str) -> Option<(&'a str, &'a Value)> {
        let (k, v) = self.map.get_key_value(key)?;
        self.used.borrow_mut().insert(k.as_str());
        Some((k.as_str(), v))
    }

    /// Finds the key for `base` with any unit suffix and returns it with its
    /// SI conversion factor.
    fn quantity_key(&self, cx: &mut Cx, base: &str, dim: Dimension) -> Option<(&'a str, f64, &'a Value)> {
        let mut found: Vec<(&'a str, f64, &'a Value)> = Vec::new();
        for (k, v) in self.map {
            let (kbase, unit) = split_key(k);
            let path = join(&self.path, k);
            if k == base {
                self.used.borrow_mut().insert(k.as_str());
                if dim == Dimension::Dimensionless {
                    found.push((k.as_str(), 1.0, v));
                } else {
                    cx.unit(
                        &path,
                        format!("missing unit suffix; write e.g. {}", si_key(base, dim)),
                    );
                }
            } else if kbase == base {
                let unit = unit.expect("suffix present when base differs");
                self.used.borrow_mut().insert(k.as_str());
                if unit.dimension != dim {
                    cx.unit(
                        &path,
                        format!("expected a {dim} but suffix '{}' is a {}", unit.suffix, unit.dimension),
                    );
                } else {
                    found.push((k.as_str(), unit.factor, v));
                }
            }
        }
        if found.len() > 1 {
            cx.parse(&join(&self.path, base), "quantity given more than once");
            return None;
        }
        found.pop()
    }

    fn scalar(&self, cx: &mut Cx, base: &str, dim: Dimension) -> Option<f64> {
        let (key, factor, v) = self.quantity_key(cx, base, dim)?;
        let path = join(&self.path, key);
        let v = cx.resolve(&path, v)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x * factor),
            _ => {
                cx.parse(&path, "expected a finite number");
                None
            }
        }
    }

    fn has(&self, base: &str) -> bool {
        self.map.keys().any(|k| k == base || split_key(k).0 == base)
    }

    fn required_scalar(&self, cx: &mut Cx, base: &str, dim: Dimension) -> Option<f64> {
        if !self.has(base) {
            cx.parse(&join(&self.path, base), format!("missing field (e.g. {})", si_key(base, dim)));
            return None;
        }
        self.scalar(cx, base, dim)
    }

    fn vector(&self, cx: &mut Cx, base: &str, dim: Dimension) -> Option<Vec<f64>> {
        let (key, factor, v) = self.quantity_key(cx, base, dim)?;
        let path = join(&self.path, key);
        let v = cx.resolve(&path, v)?;
        let Some(items) = v.as_array() else {
            cx.parse(&path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let ipath = format!("{path}.{i}");
            let item = cx.resolve(&ipath, item)?;
            match item.as_f64() {
                Some(x) if x.is_finite() => out.push(x * factor),
                _ => {
                    cx.parse(&ipath, "expected a finite number");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn vec3(&self, cx: &mut Cx, base: &str, dim: Dimension) -> Option<Vec3> {
        let v = self.vector(cx, base, dim)?;
        if v.len() != 3 {
            cx.parse(&join(&self.path, base), "expected three components");
            return None;
        }
        Some(Vec3::new(v[0], v[1], v[2]))
    }

    fn integer(&self, cx: &mut Cx, key: &str) -> Option<i64> {
        let (_, v) = self.get(key)?;
        let path = join(&self.path, key);
        let v = cx.resolve(&path, v)?;
        match v.as_i64() {
            Some(i) => Some(i),
            None => {
                cx.parse(&path, "expected an integer");
                None
            }
        }
    }

    fn string(&self, cx: &mut Cx, key: &str) -> Option<&'a str> {
        let (_, v) = self.get(key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                cx.parse(&join(&self.path, key), "expected a string");
                None
            }
        }
    }

    fn table(&self, cx: &mut Cx, key: &str) -> Option<Table<'a>> {
        let (_, v) = self.get(key)?;
        let path = join(&self.path, key);
        match v.as_object() {
            Some(m) => Some(Table::new(path, m)),
            None => {
                cx.parse(&path, "expected a table");
                None
            }
        }
    }

    fn tables(&self, cx: &mut Cx, key: &str) -> Option<Vec<Table<'a>>> {
        let (_, v) = self.get(key)?;
        let path = join(&self.path, key);
        let Some(items) = v.as_array() else {
            cx.parse(&path, "expected an array of tables");
            return None;
        };
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match item.as_object() {
                Some(m) => out.push(Table::new(format!("{path}.{i}"), m)),
                None => cx.parse(&format!("{path}.{i}"), "expected a table"),
            }
        }
        Some(out)
    }

    fn finish(self, cx: &mut Cx) {
        let used = self.used.borrow();
        for k in self.map.keys() {
            if !used.contains(k.as_str()) {
                cx.parse(&join(&self.path, k), "unknown field");
            }
        }
    }
}

fn build(root: &Value, cx: &mut Cx) -> Option<Scenario> {
    let Some(map) = root.as_object() else {
        cx.parse("document", "top level must be a table");
        return None;
    };
    let top = Table::new(String::new(), map);
    match top.integer(cx, "schema_version") {
        Some(SCHEMA_VERSION) => {}
        Some(v) => cx.parse("schema_version", format!("unsupported schema version {v}")),
        None if !map.contains_key("schema_version") => cx.parse("schema_version", "missing field"),
        None => {}
    }
    let name = top.string(cx, "name").unwrap_or("scenario").to_string();
    let description = top.string(cx, "description").unwrap_or("").to_string();

    let tubes: Vec<Option<TubeSpec>> = match top.tables(cx, "tubes") {
        Some(ts) if !ts.is_empty() => ts.into_iter().map(|t| parse_tube(t, cx)).collect(),
        Some(_) => {
            cx.invalid("tubes", "at least one tube is required");
            Vec::new()
        }
        None => {
            if !map.contains_key("tubes") {
                cx.parse("tubes", "missing field");
            }
            Vec::new()
        }
    };
    let n = tubes.len();
    let tendons: Vec<Option<ParsedTendon>> = top
        .tables(cx, "tendons")
        .unwrap_or_default()
        .into_iter()
        .map(|t| parse_tendon(t, cx, &tubes))
        .collect();

    let mut assembly_twists = vec![0.0; n];
    let mut assembly_translations = vec![0.0; n];
    let mut strategy = AssignmentStrategy::default();
    if let Some(act) = top.table(cx, "actuation") {
        for (base, target) in [
            ("base_twist", &mut assembly_twists),
            ("base_translation", &mut assembly_translations),
        ] {
            let dim = if base == "base_twist" {
                Dimension::Angle
            } else {
                Dimension::Length
            };
            if let Some(v) = act.vector(cx, base, dim) {
                if v.len() == n {
                    *target = v;
                } else {
                    cx.invalid(
                        &join("actuation", base),
                        format!("expected {n} entries (one per tube), got {}", v.len()),
                    );
                }
            }
        }
        if let Some(s) = act.string(cx, "strategy") {
            match parse_strategy(s) {
                Some(st) => strategy = st,
                None => cx.parse(
                    "actuation.strategy",
                    format!("unknown strategy '{s}' (outermost_of_segment | terminating_tube)"),
                ),
            }
        }
        act.finish(cx);
    }

    let solver = top
        .table(cx, "solver")
        .map(|t| parse_solver(t, cx))
        .unwrap_or_default();
    top.finish(cx);

    if tubes.iter().any(Option::is_none) || tendons.iter().any(Option::is_none) || !cx.errors.is_empty() {
        return None;
    }
    let assembly = AssemblySpec {
        tubes: tubes.into_iter().flatten().collect(),
        tendons: tendons
            .into_iter()
            .flatten()
            .map(|t| {
                let mut spec = t.spec;
                if !t.explicit_termination {
                    spec.termination += assembly_translations[spec.tube];
                }
                spec
            })
            .collect(),
        base_twists: assembly_twists,
        base_translations: assembly_translations.clone(),
        strategy,
    };
    for e in assembly.validate() {
        let path = match &e {
            ModelError::InvalidTube { tube, .. } => format!("tubes.{tube}"),
            ModelError::InvalidTendon { tendon, .. } | ModelError::TendonBeyondTip { tendon, .. } => {
                format!("tendons.{tendon}")
            }
            ModelError::NotNested { inner, .. } => format!("tubes.{inner}"),
            _ => "document".into(),
        };
        cx.invalid(&path, e.to_string());
    }
    if let Err(e) = solver.validate() {
        cx.invalid("solver", e);
    }
    Some(Scenario {
        name,
        description,
        assembly,
        solver,
        placeholders: Vec::new(),
    })
}

fn parse_strategy(s: &str) -> Option<AssignmentStrategy> {
    match s {
        "outermost_of_segment" | "A" => Some(AssignmentStrategy::OutermostOfSegment),
        "terminating_tube" | "B" => Some(AssignmentStrategy::TerminatingTube),
        _ => None,
    }
}

fn strategy_name(s: AssignmentStrategy) -> &'static str {
    match s {
        AssignmentStrategy::OutermostOfSegment => "outermost_of_segment",
        AssignmentStrategy::TerminatingTube => "terminating_tube",
    }
}

fn parse_tube(t: Table<'_>, cx: &mut Cx) -> Option<TubeSpec> {
    let length = t.required_scalar(cx, "length", Dimension::Length);
    let youngs = t.required_scalar(cx, "youngs_modulus", Dimension::Modulus);
    let shear = t.required_scalar(cx, "shear_modulus", Dimension::Modulus);
    let od = t.required_scalar(cx, "outer_diameter", Dimension::Length);
    let id = if t.has("inner_diameter") {
        t.scalar(cx, "inner_diameter", Dimension::Length)
    } else {
        Some(0.0)
    };
    let precurvature = match t.table(cx, "precurvature") {
        Some(p) => parse_precurvature(p, cx),
        None => Some(StrainProfile::straight()),
    };
    let prestrain = match t.table(cx, "prestrain") {
        Some(p) => parse_profile(p, cx, "strain", Dimension::Dimensionless, "strain_slope", Dimension::Curvature),
        None => Some(StrainProfile::unit_axial()),
    };
    let stiffness = match t.table(cx, "stiffness") {
        Some(s) => {
            let bending = s.required_scalar(cx, "bending", Dimension::BendingStiffness);
            let torsion = s.required_scalar(cx, "torsion", Dimension::BendingStiffness);
            let axial = s.required_scalar(cx, "axial", Dimension::Force);
            let shear_k = s.required_scalar(cx, "shear", Dimension::Force);
            s.finish(cx);
            Some(Some(StiffnessPair::from_diagonals(
                Vec3::new(shear_k?, shear_k?, axial?),
                Vec3::new(bending?, bending?, torsion?),
            )))
        }
        None => Some(None),
    };
    t.finish(cx);
    Some(TubeSpec {
        length: length?,
        youngs_modulus: youngs?,
        shear_modulus: shear?,
        outer_diameter: od?,
        inner_diameter: id?,
        precurvature: precurvature?,
        prestrain: prestrain?,
        stiffness_override: stiffness?,
    })
}

fn parse_precurvature(p: Table<'_>, cx: &mut Cx) -> Option<StrainProfile> {
    let family = p.string(cx, "family");
    let out = match family {
        Some("straight") => Some(StrainProfile::straight()),
        Some("circular_arc") => {
            let kappa = if p.has("radius") {
                p.scalar(cx, "radius", Dimension::Length).and_then(|r| {
                    if r > 0.0 {
                        Some(1.0 / r)
                    } else {
                        cx.invalid(&join(&p.path, "radius"), "radius must be positive");
                        None
                    }
                })
            } else {
                p.required_scalar(cx, "curvature", Dimension::Curvature)
            };
            let angle = p.scalar(cx, "plane_angle", Dimension::Angle).unwrap_or(0.0);
            kappa.map(|k| StrainProfile::circular_arc(k, angle))
        }
        Some("helix") => {
            let radius = p.required_scalar(cx, "radius", Dimension::Length);
            let rise = p.required_scalar(cx, "rise", Dimension::Length);
            let angle = p.scalar(cx, "plane_angle", Dimension::Angle).unwrap_or(0.0);
            match (radius, rise) {
                (Some(r), Some(b)) if r > 0.0 || b != 0.0 => Some(StrainProfile::helix(r, b, angle)),
                (Some(_), Some(_)) => {
                    cx.invalid(&p.path, "helix radius and rise cannot both be zero");
                    None
                }
                _ => None,
            }
        }
        Some("constant") | Some("linear") => {
            return parse_profile(p, cx, "curvature", Dimension::Curvature, "curvature_slope", Dimension::CurvatureRate);
        }
        Some(other) => {
            cx.parse(
                &join(&p.path, "family"),
                format!("unknown pre-curvature family '{other}' (straight | circular_arc | helix | constant | linear)"),
            );
            None
        }
        None => {
            cx.parse(&join(&p.path, "family"), "missing field");
            None
        }
    };
    p.finish(cx);
    out
}

/// `family = "constant"` with `<value>` or `family = "linear"` with
/// `<value>` and `<slope>`, each a 3-vector.
fn parse_profile(
    p: Table<'_>,
    cx: &mut Cx,
    value: &str,
    value_dim: Dimension,
    slope: &str,
    slope_dim: Dimension,
) -> Option<StrainProfile> {
    let out = match p.string(cx, "family") {
        Some("constant") => p.vec3(cx, value, value_dim).map(StrainProfile::constant),
        Some("linear") => {
            let v = p.vec3(cx, value, value_dim);
            let s = p.vec3(cx, slope, slope_dim);
            Some(StrainProfile::linear(v?, s?))
        }
        Some(other) => {
            cx.parse(&join(&p.path, "family"), format!("unknown profile family '{other}' (constant | linear)"));
            None
        }
        None => {
            cx.parse(&join(&p.path, "family"), "missing field");
            None
        }
    };
    if out.is_none() && !p.has(value) {
        cx.parse(&join(&p.path, value), "missing field");
    }
    p.finish(cx);
    out
}

/// A tendon whose termination defaults to the tip of its tube once base
/// translations are known.
struct ParsedTendon {
    spec: TendonSpec,
    explicit_termination: bool,
}

fn parse_tendon(t: Table<'_>, cx: &mut Cx, tubes: &[Option<TubeSpec>]) -> Option<ParsedTendon> {
    let tube = match t.integer(cx, "tube") {
        Some(i) if i >= 0 && (i as usize) < tubes.len() => Some(i as usize),
        Some(i) => {
            cx.invalid(&join(&t.path, "tube"), format!("tube index {i} out of range (0..{})", tubes.len()));
            None
        }
        None => {
            if !t.map.contains_key("tube") {
                cx.parse(&join(&t.path, "tube"), "missing field");
            }
            None
        }
    };
    let tension = t.required_scalar(cx, "tension", Dimension::Force);
    let explicit_termination = t.has("termination");
    let termination = if explicit_termination {
        t.scalar(cx, "termination", Dimension::Length)
    } else {
        tube.and_then(|k| tubes[k].as_ref()).map(|spec| spec.length)
    };
    let routing = match t.table(cx, "routing") {
        Some(r) => parse_routing(r, cx),
        None => {
            cx.parse(&join(&t.path, "routing"), "missing field");
            None
        }
    };
    t.finish(cx);
    Some(ParsedTendon {
        spec: TendonSpec {
            routing: routing?,
            tension: tension?,
            termination: termination?,
            tube: tube?,
        },
        explicit_termination,
    })
}

fn parse_routing(r: Table<'_>, cx: &mut Cx) -> Option<RoutingPath> {
    let has = |base: &str| r.has(base);
    let out = match r.string(cx, "family") {
        Some("straight") => {
            if has("offset") {
                r.vector(cx, "offset", Dimension::Length).and_then(|v| {
                    if v.len() == 2 {
                        Some(RoutingPath::straight(Vec3::new(v[0], v[1], 0.0)))
                    } else {
                        cx.parse(&join(&r.path, "offset"), "expected two components [d1, d2]");
                        None
                    }
                })
            } else {
                let radius = r.required_scalar(cx, "radius", Dimension::Length);
                let angle = r.required_scalar(cx, "angle", Dimension::Angle);
                Some(RoutingPath::straight_polar(radius?, angle?))
            }
        }
        Some("helical") => {
            let radius = r.required_scalar(cx, "radius", Dimension::Length);
            let pitch = r.required_scalar(cx, "pitch", Dimension::Length);
            let phase = r.scalar(cx, "phase", Dimension::Angle).unwrap_or(0.0);
            Some(RoutingPath::helical(radius?, pitch?, phase))
        }
        Some("piecewise_angular") => {
            let s = r.vector(cx, "knot_arclength", Dimension::Length);
            let a = r.vector(cx, "knot_angle", Dimension::Angle);
            let rho = r.vector(cx, "knot_radius", Dimension::Length);
            match (s, a, rho) {
                (Some(s), Some(a), Some(rho)) if s.len() == a.len() && a.len() == rho.len() => {
                    let knots: Vec<_> = (0..s.len()).map(|i| (s[i], a[i], rho[i])).collect();
                    match RoutingPath::piecewise_angular(&knots) {
                        Ok(p) => Some(p),
                        Err(e) => {
                            cx.invalid(&r.path, e.to_string());
                            None
                        }
                    }
                }
                (Some(_), Some(_), Some(_)) => {
                    cx.parse(&r.path, "knot arrays must have equal lengths");
                    None
                }
                _ => {
                    for base in ["knot_arclength", "knot_angle", "knot_radius"] {
                        if !has(base) {
                            cx.parse(&join(&r.path, base), "missing field");
                        }
                    }
                    None
                }
            }
        }
        Some(other) => {
            cx.parse(
                &join(&r.path, "family"),
                format!("unknown routing family '{other}' (straight | helical | piecewise_angular)"),
            );
            None
        }
        None => {
            cx.parse(&join(&r.path, "family"), "missing field");
            None
        }
    };
    r.finish(cx);
    out
}

fn parse_solver(t: Table<'_>, cx: &mut Cx) -> ShooterOptions {
    let mut o = ShooterOptions::default();
    let count = |cx: &mut Cx, key: &str, target: &mut usize| {
        if let Some(v) = t.integer(cx, key) {
            if v >= 1 {
                *target = v as usize;
            } else {
                cx.invalid(&join(&t.path, key), "must be at least 1");
            }
        }
    };
    count(cx, "steps_per_segment", &mut o.steps_per_segment);
    count(cx, "max_iterations", &mut o.max_iterations);
    let fields: [(&str, Dimension, &mut f64); 7] = [
        ("force_tolerance", Dimension::Force, &mut o.force_tolerance),
        ("moment_tolerance", Dimension::Moment, &mut o.moment_tolerance),
        ("continuation_step", Dimension::Force, &mut o.continuation_step),
        ("min_step", Dimension::Dimensionless, &mut o.min_step),
        ("curvature_perturbation", Dimension::Curvature, &mut o.curvature_perturbation),
        ("strain_perturbation", Dimension::Dimensionless, &mut o.strain_perturbation),
        ("dilation_perturbation", Dimension::Dimensionless, &mut o.dilation_perturbation),
    ];
    for (base, dim, target) in fields {
        if let Some(v) = t.scalar(cx, base, dim) {
            *target = v;
        }
    }
    t.finish(cx);
    o
}

fn profile_value(p: &StrainProfile, value: &str, value_dim: Dimension, slope: &str, slope_dim: Dimension) -> Value {
    let mut m = Map::new();
    match p {
        StrainProfile::Constant { value: v } => {
            m.insert("family".into(), json!("constant"));
            m.insert(si_key(value, value_dim), json!(v));
        }
        StrainProfile::Linear { value: v, slope: s } => {
            m.insert("family".into(), json!("linear"));
            m.insert(si_key(value, value_dim), json!(v));
            m.insert(si_key(slope, slope_dim), json!(s));
        }
    }
    Value::Object(m)
}

impl Scenario {
    pub fn new(name: &str, assembly: AssemblySpec) -> Self {
        Scenario {
            name: name.to_string(),
            description: String::new(),
            assembly,
            solver: ShooterOptions::default(),
            placeholders: Vec::new(),
        }
    }

    /// Canonical document in SI units.
    pub fn to_value(&self) -> Value {
        let a = &self.assembly;
        let tubes: Vec<Value> = a
            .tubes
            .iter()
            .map(|t| {
                let mut m = Map::new();
                m.insert("length_m".into(), json!(t.length));
                m.insert("youngs_modulus_Pa".into(), json!(t.youngs_modulus));
                m.insert("shear_modulus_Pa".into(), json!(t.shear_modulus));
                m.insert("outer_diameter_m".into(), json!(t.outer_diameter));
                m.insert("inner_diameter_m".into(), json!(t.inner_diameter));
                m.insert(
                    "precurvature".into(),
                    profile_value(&t.precurvature, "curvature", Dimension::Curvature, "curvature_slope", Dimension::CurvatureRate),
                );
                m.insert(
                    "prestrain".into(),
                    profile_value(&t.prestrain, "strain", Dimension::Dimensionless, "strain_slope", Dimension::Curvature),
                );
                if let Some(k) = &t.stiffness_override {
                    m.insert(
                        "stiffness".into(),
                        json!({
                            "bending_Nm2": k.k_bt[(0, 0)],
                            "torsion_Nm2": k.k_bt[(2, 2)],
                            "axial_N": k.k_se[(2, 2)],
                            "shear_N": k.k_se[(0, 0)],
                        }),
                    );
                }
                Value::Object(m)
            })
            .collect();
        let tendons: Vec<Value> = a
            .tendons
            .iter()
            .map(|t| {
                let routing = match &t.routing {
                    RoutingPath::Straight { offset } => json!({
                        "family": "straight",
                        "offset_m": [offset[0], offset[1]],
                    }),
                    RoutingPath::Helical { radius, pitch, phase } => json!({
                        "family": "helical",
                        "radius_m": radius,
                        "pitch_m": pitch,
                        "phase_rad": phase,
                    }),
                    RoutingPath::PiecewiseAngular(spline) => {
                        let k = spline.knots();
                        json!({
                            "family": "piecewise_angular",
                            "knot_arclength_m": k.iter().map(|x| x.0).collect::<Vec<_>>(),
                            "knot_angle_rad": k.iter().map(|x| x.1).collect::<Vec<_>>(),
                            "knot_radius_m": k.iter().map(|x| x.2).collect::<Vec<_>>(),
                        })
                    }
                };
                json!({
                    "tube": t.tube,
                    "tension_N": t.tension,
                    "termination_m": t.termination,
                    "routing": routing,
                })
            })
            .collect();
        let o = &self.solver;
        json!({
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "tubes": tubes,
            "tendons": tendons,
            "actuation": {
                "base_twist_rad": a.base_twists,
                "base_translation_m": a.base_translations,
                "strategy": strategy_name(a.strategy),
            },
            "solver": {
                "steps_per_segment": o.steps_per_segment,
                "max_iterations": o.max_iterations,
                "force_tolerance_N": o.force_tolerance,
                "moment_tolerance_Nm": o.moment_tolerance,
                "continuation_step_N": o.continuation_step,
                "min_step": o.min_step,
                "curvature_perturbation_per_m": o.curvature_perturbation,
                "strain_perturbation": o.strain_perturbation,
                "dilation_perturbation": o.dilation_perturbation,
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_value()).expect("scenario documents are TOML-representable")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("scenario documents serialize")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
