//! Tubes, tendons and the segment decomposition of a telescoping assembly.
//!
//! Arc length `s` is measured along the composite from the base plate. Tube
//! `k` occupies `[translation_k, translation_k + length_k]`; translations are
//! non-positive so that every tube is present at `s = 0`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

use crate::routing::RoutingPath;
use crate::so3::{Mat3, Vec3};

/// Tendon terminations and tube tips closer than this are merged.
pub const STATION_SNAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("assembly has no tubes")]
    EmptyAssembly,
    #[error("tube {tube}: {reason}")]
    InvalidTube { tube: usize, reason: String },
    #[error("tendon {tendon}: {reason}")]
    InvalidTendon { tendon: usize, reason: String },
    #[error("invalid routing: {0}")]
    InvalidRouting(String),
    #[error("arc length {s} outside routing domain [{lo}, {hi}]")]
    OutOfDomain { s: f64, lo: f64, hi: f64 },
    #[error("tendon {tendon} terminates at {termination} m, beyond the tip of tube {tube} at {tip} m")]
    TendonBeyondTip {
        tendon: usize,
        tube: usize,
        termination: f64,
        tip: f64,
    },
    #[error("tubes {outer} and {inner} do not nest: inner OD {inner_od} m ≥ outer ID {outer_id} m")]
    NotNested {
        outer: usize,
        inner: usize,
        inner_od: f64,
        outer_id: f64,
    },
    #[error("{0}")]
    Inconsistent(String),
}

/// A strain field along a tube, evaluated in the tube's local arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum StrainProfile {
    Constant { value: [f64; 3] },
    /// `value + slope * s`
    Linear { value: [f64; 3], slope: [f64; 3] },
}

impl StrainProfile {
    pub fn constant(v: Vec3) -> Self {
        StrainProfile::Constant { value: v.into() }
    }

    pub fn linear(value: Vec3, slope: Vec3) -> Self {
        StrainProfile::Linear {
            value: value.into(),
            slope: slope.into(),
        }
    }

    /// Unstrained curvature of a straight tube.
    pub fn straight() -> Self {
        Self::constant(Vec3::zeros())
    }

    /// Rest linear strain of an inextensible, unsheared tube.
    pub fn unit_axial() -> Self {
        Self::constant(Vec3::z())
    }

    /// Constant curvature `kappa` that bends the tube toward the body-frame
    /// direction `[cos plane_angle, sin plane_angle, 0]`.
    pub fn circular_arc(kappa: f64, plane_angle: f64) -> Self {
        let (s, c) = plane_angle.sin_cos();
        Self::constant(Vec3::new(-kappa * s, kappa * c, 0.0))
    }

    /// Rest curvature of a helical backbone with the given coil radius and
    /// rise per turn, bending toward `plane_angle` as in [`circular_arc`].
    ///
    /// [`circular_arc`]: StrainProfile::circular_arc
    pub fn helix(radius: f64, rise_per_turn: f64, plane_angle: f64) -> Self {
        let b = rise_per_turn / (2.0 * PI);
        let denom = radius * radius + b * b;
        let kappa = radius / denom;
        let torsion = b / denom;
        let (s, c) = plane_angle.sin_cos();
        Self::constant(Vec3::new(-kappa * s, kappa * c, torsion))
    }

    /// Value and arc-length derivative at local arc length `s`.
    pub fn eval(&self, s: f64) -> (Vec3, Vec3) {
        match self {
            StrainProfile::Constant { value } => (Vec3::from(*value), Vec3::zeros()),
            StrainProfile::Linear { value, slope } => {
                let slope = Vec3::from(*slope);
                (Vec3::from(*value) + slope * s, slope)
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            StrainProfile::Constant { value } => value.iter().all(|x| x.is_finite()),
            StrainProfile::Linear { value, slope } => {
                value.iter().chain(slope.iter()).all(|x| x.is_finite())
            }
        }
    }
}

/// Diagonal shear/extension and bending/torsion stiffness of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessPair {
    /// `diag(GA, GA, EA)` in N.
    pub k_se: Mat3,
    /// `diag(EI_xx, EI_yy, GJ_zz)` in N·m².
    pub k_bt: Mat3,
}

impl StiffnessPair {
    pub fn from_diagonals(k_se: Vec3, k_bt: Vec3) -> Self {
        StiffnessPair {
            k_se: Mat3::from_diagonal(&k_se),
            k_bt: Mat3::from_diagonal(&k_bt),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        StiffnessPair {
            k_se: self.k_se * factor,
            k_bt: self.k_bt * factor,
        }
    }

    fn is_valid(&self) -> bool {
        let diag_ok = |m: &Mat3| {
            (0..3).all(|i| m[(i, i)].is_finite() && m[(i, i)] > 0.0)
                && (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0))
        };
        diag_ok(&self.k_se) && diag_ok(&self.k_bt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    /// m
    pub length: f64,
    /// Pa
    pub youngs_modulus: f64,
    /// Pa
    pub shear_modulus: f64,
    /// m
    pub outer_diameter: f64,
    /// m; zero for a solid rod
    pub inner_diameter: f64,
    /// Rest curvature `u*(s)` in the tube frame (1/m).
    pub precurvature: StrainProfile,
    /// Rest linear strain `v*(s)` (dimensionless).
    pub prestrain: StrainProfile,
    /// Replaces the annulus formulas when present.
    pub stiffness_override: Option<StiffnessPair>,
}

impl TubeSpec {
    /// Straight annular tube with default rest strains.
    pub fn straight(length: f64, youngs: f64, shear: f64, od: f64, id: f64) -> Self {
        TubeSpec {
            length,
            youngs_modulus: youngs,
            shear_modulus: shear,
            outer_diameter: od,
            inner_diameter: id,
            precurvature: StrainProfile::straight(),
            prestrain: StrainProfile::unit_axial(),
            stiffness_override: None,
        }
    }

    pub fn with_precurvature(mut self, profile: StrainProfile) -> Self {
        self.precurvature = profile;
        self
    }

    pub fn with_stiffness(mut self, stiffness: StiffnessPair) -> Self {
        self.stiffness_override = Some(stiffness);
        self
    }

    fn validate(&self, index: usize) -> Vec<ModelError> {
        let mut errors = Vec::new();
        let mut bad = |reason: &str| {
            errors.push(ModelError::InvalidTube {
                tube: index,
                reason: reason.to_string(),
            })
        };
        if !(self.length.is_finite() && self.length > 0.0) {
            bad("length must be positive");
        }
        if !(self.youngs_modulus.is_finite() && self.youngs_modulus > 0.0) {
            bad("elastic modulus must be positive");
        }
        if !(self.shear_modulus.is_finite() && self.shear_modulus > 0.0) {
            bad("shear modulus must be positive");
        }
        if !(self.inner_diameter.is_finite() && self.inner_diameter >= 0.0) {
            bad("inner diameter must be non-negative");
        }
        if !(self.outer_diameter.is_finite() && self.outer_diameter > self.inner_diameter) {
            bad("outer diameter must exceed inner diameter");
        }
        if !self.precurvature.is_finite() || !self.prestrain.is_finite() {
            bad("rest strain profiles must be finite");
        }
        if let Some(k) = &self.stiffness_override {
            if !k.is_valid() {
                bad("stiffness override must be diagonal with positive entries");
            }
        }
        errors
    }
}

/// Section constants of an annulus: area, second moment, polar moment.
pub fn annulus_constants(od: f64, id: f64) -> (f64, f64, f64) {
    let area = PI / 4.0 * (od * od - id * id);
    let second = PI / 64.0 * (od.powi(4) - id.powi(4));
    (area, second, 2.0 * second)
}

/// Section stiffness from the linear constitutive law; an explicit override
/// on the tube wins.
pub fn section_stiffness(tube: &TubeSpec) -> StiffnessPair {
    if let Some(k) = tube.stiffness_override {
        return k;
    }
    let (area, second, polar) = annulus_constants(tube.outer_diameter, tube.inner_diameter);
    let ga = tube.shear_modulus * area;
    let ea = tube.youngs_modulus * area;
    let ei = tube.youngs_modulus * second;
    let gj = tube.shear_modulus * polar;
    StiffnessPair::from_diagonals(Vec3::new(ga, ga, ea), Vec3::new(ei, ei, gj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TendonSpec {
    /// Path in the frame of whichever tube carries the tendon's distributed
    /// load, evaluated at composite arc length.
    pub routing: RoutingPath,
    /// N
    pub tension: f64,
    /// Composite arc length at which the tendon is anchored (m).
    pub termination: f64,
    /// Tube the tendon is anchored to.
    pub tube: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStrategy {
    /// Each tendon loads the tube it terminates on.
    TerminatingTube,
    /// Every active tendon loads the outermost tube of the segment.
    #[default]
    OutermostOfSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySpec {
    /// Outermost first.
    pub tubes: Vec<TubeSpec>,
    pub tendons: Vec<TendonSpec>,
    /// Base rotation of each tube about `d3` relative to tube 0 (rad).
    pub base_twists: Vec<f64>,
    /// Offset of each tube's proximal end along the composite (m, ≤ 0).
    pub base_translations: Vec<f64>,
    pub strategy: AssignmentStrategy,
}

impl AssemblySpec {
    /// Untwisted, untranslated assembly with the default strategy.
    pub fn new(tubes: Vec<TubeSpec>, tendons: Vec<TendonSpec>) -> Self {
        let n = tubes.len();
        AssemblySpec {
            tubes,
            tendons,
            base_twists: vec![0.0; n],
            base_translations: vec![0.0; n],
            strategy: AssignmentStrategy::default(),
        }
    }

    pub fn with_strategy(mut self, strategy: AssignmentStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_base_twists(mut self, twists: Vec<f64>) -> Self {
        self.base_twists = twists;
        self
    }

    pub fn tube_count(&self) -> usize {
        self.tubes.len()
    }

    /// Composite arc length of the tip of tube `k`.
    pub fn tip_station(&self, k: usize) -> f64 {
        self.base_translations[k] + self.tubes[k].length
    }

    /// Local arc length of tube `k` at composite station `s`.
    pub fn local_arclength(&self, k: usize, s: f64) -> f64 {
        s - self.base_translations[k]
    }

    pub fn max_tip(&self) -> f64 {
        (0..self.tubes.len())
            .map(|k| self.tip_station(k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_tension(&self) -> f64 {
        self.tendons.iter().map(|t| t.tension).fold(0.0, f64::max)
    }

    pub fn stiffness(&self) -> Vec<StiffnessPair> {
        self.tubes.iter().map(section_stiffness).collect()
    }

    /// Same assembly with every tension multiplied by `factor`.
    pub fn with_tension_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tendons {
            t.tension *= factor;
        }
        out
    }

    /// Every validation failure, not just the first.
    pub fn validate(&self) -> Vec<ModelError> {
        let n = self.tubes.len();
        if n == 0 {
            return vec![ModelError::EmptyAssembly];
        }
        let mut errors: Vec<ModelError> = self
            .tubes
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.validate(i))
            .collect();
        if self.base_twists.len() != n || self.base_translations.len() != n {
            errors.push(ModelError::Inconsistent(format!(
                "expected {n} base twists and translations, got {} and {}",
                self.base_twists.len(),
                self.base_translations.len()
            )));
            return errors;
        }
        if self.base_twists[0] != 0.0 {
            errors.push(ModelError::Inconsistent(
                "base twist of the outermost tube must be zero".into(),
            ));
        }
        if self.base_twists.iter().any(|t| !t.is_finite()) {
            errors.push(ModelError::Inconsistent("base twists must be finite".into()));
        }
        for (k, &d) in self.base_translations.iter().enumerate() {
            if !(d.is_finite() && d <= 0.0) {
                errors.push(ModelError::InvalidTube {
                    tube: k,
                    reason: "base translation must be ≤ 0 so the tube is present at the base"
                        .into(),
                });
            } else if self.tubes[k].length.is_finite() && self.tip_station(k) <= 0.0 {
                errors.push(ModelError::InvalidTube {
                    tube: k,
                    reason: "tube is fully retracted behind the base".into(),
                });
            }
        }
        for k in 1..n {
            let outer = &self.tubes[k - 1];
            let inner = &self.tubes[k];
            if outer.inner_diameter > 0.0 && inner.outer_diameter >= outer.inner_diameter {
                errors.push(ModelError::NotNested {
                    outer: k - 1,
                    inner: k,
                    inner_od: inner.outer_diameter,
                    outer_id: outer.inner_diameter,
                });
            }
        }
        for (j, t) in self.tendons.iter().enumerate() {
            let mut bad = |reason: String| {
                errors.push(ModelError::InvalidTendon { tendon: j, reason })
            };
            if t.tube >= n {
                bad(format!("tube index {} out of range", t.tube));
                continue;
            }
            if !(t.tension.is_finite() && t.tension >= 0.0) {
                bad("tension must be non-negative".into());
            }
            if let Err(e) = t.routing.validate() {
                bad(e.to_string());
            }
            let tip = self.tip_station(t.tube);
            if !(t.termination.is_finite() && t.termination > 0.0) {
                bad("termination must be positive".into());
            } else if t.termination > tip + STATION_SNAP {
                errors.push(ModelError::TendonBeyondTip {
                    tendon: j,
                    tube: t.tube,
                    termination: t.termination,
                    tip,
                });
            } else {
                let (lo, hi) = t.routing.domain();
                if lo > 1e-9 || hi < t.termination.min(tip) - 1e-9 {
                    bad(format!(
                        "routing domain [{lo}, {hi}] does not cover [0, {}]",
                        t.termination
                    ));
                }
            }
        }
        errors
    }

    /// Termination of tendon `j` after snapping onto a nearby tube tip.
    pub fn snapped_termination(&self, j: usize) -> f64 {
        let t = &self.tendons[j];
        (0..self.tubes.len())
            .map(|k| self.tip_station(k))
            .find(|tip| (tip - t.termination).abs() <= STATION_SNAP)
            .unwrap_or(t.termination)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Ascending; the first entry is the segment's outermost tube.
    pub active_tubes: Vec<usize>,
    pub active_tendons: Vec<usize>,
    /// Tubes whose tip lies at `end`.
    pub ending_tubes: Vec<usize>,
    /// Tendons anchored at `end`.
    pub terminating_tendons: Vec<usize>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn outermost(&self) -> usize {
        self.active_tubes[0]
    }

    pub fn is_final(&self) -> bool {
        self.ending_tubes.len() == self.active_tubes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub segments: Vec<Segment>,
}

impl SegmentPlan {
    pub fn boundaries(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.end).collect()
    }
}

/// Splits `[0, max tip]` at every tube tip and tendon termination.
pub fn segment_plan(assembly: &AssemblySpec) -> Result<SegmentPlan, ModelError> {
    if assembly.tubes.is_empty() {
        return Err(ModelError::EmptyAssembly);
    }
    let n = assembly.tubes.len();
    let mut stations: Vec<f64> = (0..n).map(|k| assembly.tip_station(k)).collect();
    stations.extend((0..assembly.tendons.len()).map(|j| assembly.snapped_termination(j)));
    stations.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(stations.len());
    for s in stations {
        match merged.last() {
            Some(&last) if s - last <= STATION_SNAP => {}
            _ => merged.push(s),
        }
    }
    let at = |a: f64, b: f64| (a - b).abs() <= STATION_SNAP;
    let mut segments = Vec::with_capacity(merged.len());
    let mut start = 0.0;
    for &end in &merged {
        let active_tubes: Vec<usize> = (0..n)
            .filter(|&k| assembly.tip_station(k) > start + STATION_SNAP)
            .collect();
        if active_tubes.is_empty() {
            break;
        }
        let active_tendons: Vec<usize> = (0..assembly.tendons.len())
            .filter(|&j| assembly.snapped_termination(j) > start + STATION_SNAP)
            .collect();
        let ending_tubes = active_tubes
            .iter()
            .copied()
            .filter(|&k| at(assembly.tip_station(k), end))
            .collect();
        let terminating_tendons = active_tendons
            .iter()
            .copied()
            .filter(|&j| at(assembly.snapped_termination(j), end))
            .collect();
        segments.push(Segment {
            start,
            end,
            active_tubes,
            active_tendons,
            ending_tubes,
            terminating_tendons,
        });
        start = end;
    }
    Ok(SegmentPlan { segments })
}

/// For each segment, the tube carrying each active tendon's distributed load.
pub type TendonAssignment = BTreeMap<usize, Vec<usize>>;

pub fn assign_tendons(assembly: &AssemblySpec, plan: &SegmentPlan) -> Vec<TendonAssignment> {
    plan.segments
        .iter()
        .map(|seg| assign_segment(assembly, seg))
        .collect()
}

pub(crate) fn assign_segment(assembly: &AssemblySpec, seg: &Segment) -> TendonAssignment {
    let mut map = TendonAssignment::new();
    for &j in &seg.active_tendons {
        let carrier = match assembly.strategy {
            AssignmentStrategy::OutermostOfSegment => seg.outermost(),
            AssignmentStrategy::TerminatingTube => assembly.tendons[j].tube,
        };
        map.entry(carrier).or_default().push(j);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tube(length: f64) -> TubeSpec {
        TubeSpec::straight(length, 50e9, 20e9, 1e-3, 0.0)
    }

    fn tendon(tube: usize, termination: f64) -> TendonSpec {
        TendonSpec {
            routing: RoutingPath::straight(Vec3::new(0.0, 2e-3, 0.0)),
            tension: 1.0,
            termination,
            tube,
        }
    }

    #[test]
    fn stiffness_of_helical_rig_outer_tube() {
        let t = TubeSpec::straight(0.28, 65e9, 24.4e9, 1.35e-3, 1.07e-3);
        let (area, second, polar) = annulus_constants(1.35e-3, 1.07e-3);
        assert_relative_eq!(area, 5.322e-7, max_relative = 1e-3);
        assert_relative_eq!(second, 9.87e-14, max_relative = 1e-3);
        assert_relative_eq!(polar, 2.0 * second);
        let k = section_stiffness(&t);
        assert_relative_eq!(k.k_bt[(0, 0)], 6.42e-3, max_relative = 2e-3);
        assert_relative_eq!(k.k_bt[(1, 1)], 6.42e-3, max_relative = 2e-3);
        assert_relative_eq!(k.k_bt[(2, 2)], 4.82e-3, max_relative = 2e-3);
        assert_relative_eq!(k.k_se[(2, 2)], 65e9 * area);
        assert_relative_eq!(k.k_se[(0, 0)], 24.4e9 * area);
    }

    #[test]
    fn solid_rod_area() {
        let (area, _, _) = annulus_constants(2e-3, 0.0);
        assert_relative_eq!(area, PI * 4e-6 / 4.0);
    }

    #[test]
    fn override_wins() {
        let k = StiffnessPair::from_diagonals(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(section_stiffness(&tube(0.1).with_stiffness(k)), k);
    }

    #[test]
    fn two_tube_plan() {
        let a = AssemblySpec::new(vec![tube(0.140), tube(0.180)], vec![]);
        let plan = segment_plan(&a).unwrap();
        assert_eq!(plan.segments.len(), 2);
        assert_eq!((plan.segments[0].start, plan.segments[0].end), (0.0, 0.140));
        assert_eq!(plan.segments[0].active_tubes, vec![0, 1]);
        assert_eq!(plan.segments[0].ending_tubes, vec![0]);
        assert_eq!((plan.segments[1].start, plan.segments[1].end), (0.140, 0.180));
        assert_eq!(plan.segments[1].active_tubes, vec![1]);
        assert!(plan.segments[1].is_final());
    }

    #[test]
    fn single_tube_with_tip_tendon_is_one_segment() {
        let a = AssemblySpec::new(vec![tube(0.2)], vec![tendon(0, 0.2)]);
        let plan = segment_plan(&a).unwrap();
        assert_eq!(plan.segments.len(), 1);
        assert_eq!(plan.segments[0].terminating_tendons, vec![0]);
    }

    #[test]
    fn three_tube_plan() {
        let a = AssemblySpec::new(vec![tube(0.140), tube(0.187), tube(0.24622)], vec![]);
        let plan = segment_plan(&a).unwrap();
        let sets: Vec<_> = plan.segments.iter().map(|s| s.active_tubes.clone()).collect();
        assert_eq!(sets, vec![vec![0, 1, 2], vec![1, 2], vec![2]]);
        assert_eq!(plan.boundaries(), vec![0.140, 0.187, 0.24622]);
    }

    #[test]
    fn inner_tube_ending_inside_outer() {
        let a = AssemblySpec::new(vec![tube(0.28), tube(0.14)], vec![]);
        let plan = segment_plan(&a).unwrap();
        assert_eq!(plan.segments[0].ending_tubes, vec![1]);
        assert_eq!(plan.segments[1].active_tubes, vec![0]);
    }

    #[test]
    fn termination_snaps_onto_tip_and_interior_terminations_split() {
        let a = AssemblySpec::new(
            vec![tube(0.2)],
            vec![tendon(0, 0.2 - 5e-7), tendon(0, 0.1)],
        );
        let plan = segment_plan(&a).unwrap();
        assert_eq!(plan.boundaries(), vec![0.1, 0.2]);
        assert_eq!(plan.segments[0].terminating_tendons, vec![1]);
        assert_eq!(plan.segments[1].terminating_tendons, vec![0]);
        assert_eq!(plan.segments[1].active_tendons, vec![0]);
    }

    #[test]
    fn coincident_tips_merge() {
        let a = AssemblySpec::new(vec![tube(0.15), tube(0.15)], vec![tendon(1, 0.15)]);
        let plan = segment_plan(&a).unwrap();
        assert_eq!(plan.segments.len(), 1);
        assert_eq!(plan.segments[0].ending_tubes, vec![0, 1]);
    }

    #[test]
    fn empty_assembly() {
        let a = AssemblySpec::new(vec![], vec![]);
        assert_eq!(segment_plan(&a), Err(ModelError::EmptyAssembly));
        assert_eq!(a.validate(), vec![ModelError::EmptyAssembly]);
    }

    #[test]
    fn validation_collects_all_errors() {
        let mut a = AssemblySpec::new(vec![tube(0.18)], vec![tendon(0, 0.2), tendon(3, 0.1)]);
        a.tubes[0].shear_modulus = -1.0;
        let errors = a.validate();
        assert_eq!(errors.len(), 3, "{errors:?}");
        assert!(errors
            .iter()
            .any(|e| matches!(e, ModelError::TendonBeyondTip { .. })));
    }

    #[test]
    fn nesting_is_checked() {
        let outer = TubeSpec::straight(0.1, 1e9, 1e9, 2e-3, 1e-3);
        let inner = TubeSpec::straight(0.2, 1e9, 1e9, 1.2e-3, 0.0);
        let a = AssemblySpec::new(vec![outer, inner], vec![]);
        assert!(matches!(a.validate()[0], ModelError::NotNested { .. }));
    }

    #[test]
    fn assignment_strategies() {
        let tubes = vec![tube(0.14), tube(0.187), tube(0.246)];
        let tendons = vec![tendon(0, 0.14), tendon(1, 0.187), tendon(2, 0.246)];
        let a = AssemblySpec::new(tubes.clone(), tendons.clone())
            .with_strategy(AssignmentStrategy::OutermostOfSegment);
        let plan = segment_plan(&a).unwrap();
        let by_a = assign_tendons(&a, &plan);
        assert_eq!(by_a[0].get(&0), Some(&vec![0, 1, 2]));
        assert_eq!(by_a[0].len(), 1);
        assert_eq!(by_a[1].get(&1), Some(&vec![1, 2]));

        let b = a.clone().with_strategy(AssignmentStrategy::TerminatingTube);
        let by_b = assign_tendons(&b, &plan);
        for j in 0..3 {
            assert_eq!(by_b[0].get(&j), Some(&vec![j]));
        }

        let single = AssemblySpec::new(vec![tube(0.2)], vec![tendon(0, 0.2)]);
        let plan = segment_plan(&single).unwrap();
        assert_eq!(
            assign_tendons(&single, &plan),
            assign_tendons(
                &single.clone().with_strategy(AssignmentStrategy::TerminatingTube),
                &plan
            )
        );
    }

    #[test]
    fn circular_arc_bends_toward_plane_angle() {
        let (u, du) = StrainProfile::circular_arc(5.0, 0.0).eval(0.3);
        assert_eq!(du, Vec3::zeros());
        // d3' = u × e3 must point along +d1.
        assert_relative_eq!(u.cross(&Vec3::z()), Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn helix_curvature_and_torsion() {
        let (u, _) = StrainProfile::helix(0.01, 0.05, 0.0).eval(0.0);
        let b = 0.05 / (2.0 * PI);
        assert_relative_eq!(u.norm(), 1.0 / (0.01f64.powi(2) + b * b).sqrt());
        assert_relative_eq!(u.z, b / (1e-4 + b * b));
    }
}
