//! Shooting solution of the boundary value problem.
//!
//! The unknown base strains are integrated segment by segment. Where a tube
//! ends or a tendon is anchored, [`apply_transition`] applies the tendon point
//! loads, keeps the composite wrench continuous and re-expresses the state in
//! the frame of the new outermost tube. Each tube end contributes its own d3
//! force and moment mismatch to the residual; the final tip contributes the
//! full composite wrench mismatch, which keeps the residual square.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    assign_segment, segment_plan, AssemblySpec, ModelError, Segment, SegmentPlan, StiffnessPair,
    TendonAssignment,
};
use crate::so3::{d3_selector, e3, reorthonormalize, rot_d3, Mat3, Vec3};
use crate::strain::{
    assemble_system, derived_strains, distributed_load, solve_rates, state_derivative,
    tendon_kinematics, tube_strain_rates, tube_wrenches, InnerTubeState, RodState, SegmentContext,
    StateDerivative, StrainError, TubeWrench,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShooterOptions {
    pub steps_per_segment: usize,
    /// N
    pub force_tolerance: f64,
    /// N·m
    pub moment_tolerance: f64,
    pub max_iterations: usize,
    /// Largest tension increment per continuation step (N).
    pub continuation_step: f64,
    /// Smallest line-search step before the iteration is declared stalled.
    pub min_step: f64,
    pub curvature_perturbation: f64,
    pub strain_perturbation: f64,
    pub dilation_perturbation: f64,
}

impl Default for ShooterOptions {
    fn default() -> Self {
        ShooterOptions {
            steps_per_segment: 200,
            force_tolerance: 1e-8,
            moment_tolerance: 1e-10,
            max_iterations: 50,
            continuation_step: 0.5,
            min_step: 1.0 / 1024.0,
            curvature_perturbation: 1e-6,
            strain_perturbation: 1e-8,
            dilation_perturbation: 1e-8,
        }
    }
}

impl ShooterOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("force_tolerance", self.force_tolerance),
            ("moment_tolerance", self.moment_tolerance),
            ("continuation_step", self.continuation_step),
            ("min_step", self.min_step),
            ("curvature_perturbation", self.curvature_perturbation),
            ("strain_perturbation", self.strain_perturbation),
            ("dilation_perturbation", self.dilation_perturbation),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.steps_per_segment == 0 {
            return Err("steps_per_segment must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.min_step > 1.0 {
            return Err("min_step must not exceed 1".into());
        }
        Ok(())
    }

    pub fn continuation_steps(&self, max_tension: f64) -> usize {
        ((max_tension / self.continuation_step).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShootError {
    #[error("invalid assembly: {}", join(.0))]
    Model(Vec<ModelError>),
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("invalid shooting guess: {0}")]
    InvalidGuess(String),
    #[error(transparent)]
    Strain(#[from] StrainError),
    #[error("continuing-tube stiffness system is singular at s = {station}")]
    SingularTransition { station: f64 },
    #[error("frame degenerated during integration at s = {station}")]
    DegenerateFrame { station: f64 },
    #[error("no convergence: {reason}")]
    NoConvergence {
        reason: String,
        trace: Vec<IterationRecord>,
    },
}

fn join(errors: &[ModelError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<ModelError> for ShootError {
    fn from(e: ModelError) -> Self {
        ShootError::Model(vec![e])
    }
}

/// Unknown base strains: `[u (3), v (3), (u_d3, β) per inner tube]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingGuess {
    pub u: Vec3,
    pub v: Vec3,
    /// `(u_d3, β)` for tubes `1..n`.
    pub inner: Vec<(f64, f64)>,
}

impl ShootingGuess {
    /// Rest strains at the base with aligned dilation.
    pub fn rest(assembly: &AssemblySpec) -> Self {
        let rest = |k: usize| {
            let local = assembly.local_arclength(k, 0.0);
            let spec = &assembly.tubes[k];
            (spec.precurvature.eval(local).0, spec.prestrain.eval(local).0)
        };
        let (u, v) = rest(0);
        ShootingGuess {
            u,
            v,
            inner: (1..assembly.tubes.len()).map(|k| (rest(k).0.z, 1.0)).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        6 + 2 * self.inner.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.dimension());
        x.extend(self.u.iter());
        x.extend(self.v.iter());
        for &(a, b) in &self.inner {
            x.push(a);
            x.push(b);
        }
        DVector::from_vec(x)
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        ShootingGuess {
            u: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
            inner: (6..x.len()).step_by(2).map(|i| (x[i], x[i + 1])).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ShootError> {
        if !self.to_vector().iter().all(|x| x.is_finite()) {
            return Err(ShootError::InvalidGuess("non-finite entry".into()));
        }
        if self.v.z <= 0.0 {
            return Err(ShootError::InvalidGuess("axial strain must be positive".into()));
        }
        if self.inner.iter().any(|&(_, b)| b <= 0.0) {
            return Err(ShootError::InvalidGuess("dilation must be positive".into()));
        }
        Ok(())
    }

    fn perturbations(&self, options: &ShooterOptions) -> Vec<f64> {
        let mut h = vec![options.curvature_perturbation; 3];
        h.extend([options.strain_perturbation; 3]);
        for _ in &self.inner {
            h.push(options.curvature_perturbation);
            h.push(options.dilation_perturbation);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Force,
    Moment,
}

/// Stacked tip-wrench mismatches, one block per tube-end event.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryResidual {
    pub values: DVector<f64>,
    pub kinds: Vec<ResidualKind>,
}

impl BoundaryResidual {
    /// Largest component measured in units of its tolerance.
    pub fn scaled_norm(&self, options: &ShooterOptions) -> f64 {
        self.values
            .iter()
            .zip(&self.kinds)
            .map(|(r, k)| (r / tolerance(*k, options)).abs())
            .fold(0.0, f64::max)
    }
}

fn tolerance(kind: ResidualKind, options: &ShooterOptions) -> f64 {
    match kind {
        ResidualKind::Force => options.force_tolerance,
        ResidualKind::Moment => options.moment_tolerance,
    }
}

/// Point load of an anchored tendon, in the old reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoad {
    pub tendon: usize,
    pub tube: usize,
    pub force: Vec3,
    pub moment: Vec3,
}

/// Wrench bookkeeping at one segment boundary, in the frame of the reference
/// tube before the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub station: f64,
    pub ending_tubes: Vec<usize>,
    pub loads: Vec<PointLoad>,
    /// Per active tube before the event: `(tube, n, m)` rotated into the
    /// reference frame.
    pub before: Vec<(usize, Vec3, Vec3)>,
    /// Per continuing tube after the event, same frame.
    pub after: Vec<(usize, Vec3, Vec3)>,
}

/// State after a segment boundary plus the residual contributed there.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    /// `None` after the final tip.
    pub state: Option<RodState>,
    pub residual: Vec<f64>,
    pub kinds: Vec<ResidualKind>,
    pub record: TransitionRecord,
}

/// Fixed-step classic RK4 over `[start, end]`, re-orthonormalizing `R` after
/// every step. Returns `steps + 1` states including `y0`.
pub fn rk4_segment<F>(y0: &RodState, end: f64, steps: usize, mut f: F) -> Result<Vec<RodState>, ShootError>
where
    F: FnMut(&RodState) -> Result<StateDerivative, ShootError>,
{
    let start = y0.s;
    let h = (end - start) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0.clone());
    let mut y = y0.clone();
    for i in 0..steps {
        let k1 = f(&y)?;
        let k2 = f(&y.advanced(&k1, 0.5 * h))?;
        let k3 = f(&y.advanced(&k2, 0.5 * h))?;
        let k4 = f(&y.advanced(&k3, h))?;
        let avg = StateDerivative::rk4_average([&k1, &k2, &k3, &k4]);
        let mut next = y.advanced(&avg, h);
        next.s = if i + 1 == steps {
            end
        } else {
            start + (i + 1) as f64 * h
        };
        next.r = reorthonormalize(&next.r).map_err(|_| ShootError::DegenerateFrame { station: next.s })?;
        out.push(next.clone());
        y = next;
    }
    Ok(out)
}

pub fn integrate_segment(
    y0: &RodState,
    segment: &Segment,
    ctx: &SegmentContext<'_>,
    steps: usize,
) -> Result<Vec<RodState>, ShootError> {
    rk4_segment(y0, segment.end, steps, |y| Ok(state_derivative(y, ctx)?))
}

/// Terminating tendons' point loads, rotated into the reference frame.
fn point_loads(
    state: &RodState,
    segment: &Segment,
    assembly: &AssemblySpec,
    stiffness: &[StiffnessPair],
    carriers: &TendonAssignment,
) -> Result<Vec<PointLoad>, ShootError> {
    let mut subset = TendonAssignment::new();
    for (&tube, tendons) in carriers {
        for &j in tendons {
            if segment.terminating_tendons.contains(&j) {
                subset.entry(tube).or_default().push(j);
            }
        }
    }
    let ctx = SegmentContext {
        assembly,
        stiffness,
        carriers: &subset,
    };
    let strains = derived_strains(state);
    let mut loads = Vec::new();
    for tk in tendon_kinematics(state, &strains, &ctx)? {
        let (f, m) = tk.anchor_load();
        let (theta, _) = state
            .twist_dilation(tk.carrier)
            .expect("carrier is active");
        let rot = rot_d3(theta);
        loads.push(PointLoad {
            tendon: tk.tendon,
            tube: assembly.tendons[tk.tendon].tube,
            force: rot * f,
            moment: rot * m,
        });
    }
    loads.sort_by_key(|l| l.tendon);
    Ok(loads)
}

fn rotated(w: &TubeWrench) -> (usize, Vec3, Vec3) {
    let rot = rot_d3(w.theta);
    (w.tube, rot * w.force, rot * w.moment)
}

pub fn apply_transition(
    state: &RodState,
    segment: &Segment,
    assembly: &AssemblySpec,
    stiffness: &[StiffnessPair],
    carriers: &TendonAssignment,
) -> Result<TransitionOutcome, ShootError> {
    let loads = point_loads(state, segment, assembly, stiffness, carriers)?;
    let wrenches = tube_wrenches(state, assembly, stiffness);
    let before: Vec<(usize, Vec3, Vec3)> = wrenches.iter().map(rotated).collect();
    let on_tube = |k: usize| {
        loads
            .iter()
            .filter(|l| l.tube == k)
            .fold((Vec3::zeros(), Vec3::zeros()), |(f, m), l| (f + l.force, m + l.moment))
    };

    let mut composite_n = Vec3::zeros();
    let mut composite_m = Vec3::zeros();
    for (_, n, m) in &before {
        composite_n += n;
        composite_m += m;
    }
    for l in &loads {
        composite_n -= l.force;
        composite_m -= l.moment;
    }

    let mut residual = Vec::new();
    let mut kinds = Vec::new();
    let mut continuing = Vec::new();
    for &(tube, n, m) in &before {
        let (f, t) = on_tube(tube);
        if segment.ending_tubes.contains(&tube) {
            if !segment.is_final() {
                residual.extend([n.z - f.z, m.z - t.z]);
                kinds.extend([ResidualKind::Force, ResidualKind::Moment]);
            }
        } else {
            continuing.push((tube, n.z - f.z, m.z - t.z));
        }
    }

    let mut record = TransitionRecord {
        station: segment.end,
        ending_tubes: segment.ending_tubes.clone(),
        loads: loads.clone(),
        before: before.clone(),
        after: Vec::new(),
    };

    if segment.is_final() {
        let ending: Vec<_> = before
            .iter()
            .map(|&(tube, n, m)| {
                let (f, t) = on_tube(tube);
                (n - f, m - t)
            })
            .collect();
        residual.extend([composite_n.x, composite_n.y]);
        kinds.extend([ResidualKind::Force; 2]);
        for (n, _) in &ending {
            residual.push(n.z);
            kinds.push(ResidualKind::Force);
        }
        residual.extend([composite_m.x, composite_m.y]);
        kinds.extend([ResidualKind::Moment; 2]);
        for (_, m) in &ending {
            residual.push(m.z);
            kinds.push(ResidualKind::Moment);
        }
        return Ok(TransitionOutcome {
            state: None,
            residual,
            kinds,
            record,
        });
    }

    let new_state = resolve_continuing(state, &continuing, composite_n, composite_m, assembly, stiffness, segment.end)?;
    let theta_new_ref = state.twist_dilation(new_state.reference).unwrap().0;
    let back = rot_d3(theta_new_ref);
    record.after = tube_wrenches(&new_state, assembly, stiffness)
        .iter()
        .map(|w| {
            let (tube, n, m) = rotated(w);
            (tube, back * n, back * m)
        })
        .collect();
    Ok(TransitionOutcome {
        state: Some(new_state),
        residual,
        kinds,
        record,
    })
}

/// Strains of the continuing tubes that reproduce the composite bending
/// wrench and each tube's own d3 force and moment.
///
/// `continuing` holds `(tube, n_z, m_z)`; the composite wrench is in the old
/// reference frame.
fn resolve_continuing(
    state: &RodState,
    continuing: &[(usize, f64, f64)],
    composite_n: Vec3,
    composite_m: Vec3,
    assembly: &AssemblySpec,
    stiffness: &[StiffnessPair],
    station: f64,
) -> Result<RodState, ShootError> {
    let singular = || ShootError::SingularTransition { station };
    let (reference, _, _) = continuing[0];
    let (theta_ref, beta_ref) = state.twist_dilation(reference).unwrap();
    let to_new = rot_d3(theta_ref).transpose();
    let target_n = to_new * composite_n;
    let target_m = to_new * composite_m;
    let c = continuing.len();

    // Twist and dilation of each continuing tube relative to the new reference.
    let rel: Vec<(usize, f64, f64)> = continuing
        .iter()
        .map(|&(k, _, _)| {
            let (t, b) = state.twist_dilation(k).unwrap();
            (k, t - theta_ref, b / beta_ref)
        })
        .collect();
    let rest: Vec<(Vec3, Vec3)> = rel
        .iter()
        .map(|&(k, _, _)| {
            let local = assembly.local_arclength(k, station);
            let spec = &assembly.tubes[k];
            (spec.precurvature.eval(local).0, spec.prestrain.eval(local).0)
        })
        .collect();

    // Moments are linear in [u (3), u_d3 per inner continuing tube].
    let dim = 2 + c;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for (idx, &(k, theta, _)) in rel.iter().enumerate() {
        let rot = rot_d3(theta);
        let kb = stiffness[k].k_bt;
        let from_u = if idx == 0 {
            Mat3::identity()
        } else {
            rot.transpose() - d3_selector()
        };
        let full = rot * kb * from_u;
        let rest_term = rot * kb * rest[idx].0;
        let row_z = 2 + idx;
        for col in 0..3 {
            a[(0, col)] += full[(0, col)];
            a[(1, col)] += full[(1, col)];
            a[(row_z, col)] = (kb * from_u)[(2, col)];
        }
        b[0] += rest_term.x;
        b[1] += rest_term.y;
        b[row_z] = continuing[idx].2 + (kb * rest[idx].0).z;
        if idx > 0 {
            let col = 2 + idx;
            let ke = kb * e3();
            let rke = rot * ke;
            a[(0, col)] = rke.x;
            a[(1, col)] = rke.y;
            a[(row_z, col)] = ke.z;
        }
    }
    b[0] += target_m.x;
    b[1] += target_m.y;
    let moments = solve_small(&a, &b).ok_or_else(singular)?;
    let u = Vec3::new(moments[0], moments[1], moments[2]);

    // Forces are bilinear in v and β; Newton from the continuous strains.
    let mut v = to_new * state.v * beta_ref;
    let mut betas: Vec<f64> = rel.iter().skip(1).map(|r| r.2).collect();
    let fdim = 2 + c;
    for _ in 0..20 {
        let mut jac = DMatrix::zeros(fdim, fdim);
        let mut res = DVector::zeros(fdim);
        for (idx, &(k, theta, _)) in rel.iter().enumerate() {
            let rot = rot_d3(theta);
            let ks = stiffness[k].k_se;
            let beta = if idx == 0 { 1.0 } else { betas[idx - 1] };
            let local_v = rot.transpose() * v * beta;
            let n = ks * (local_v - rest[idx].1);
            let n_ref = rot * n;
            let dn_dv = ks * rot.transpose() * beta;
            let row_z = 2 + idx;
            res[0] += n_ref.x;
            res[1] += n_ref.y;
            res[row_z] = n.z - continuing[idx].1;
            let rd = rot * dn_dv;
            for col in 0..3 {
                jac[(0, col)] += rd[(0, col)];
                jac[(1, col)] += rd[(1, col)];
                jac[(row_z, col)] = dn_dv[(2, col)];
            }
            if idx > 0 {
                let dn_db = ks * rot.transpose() * v;
                let col = 2 + idx;
                let r = rot * dn_db;
                jac[(0, col)] = r.x;
                jac[(1, col)] = r.y;
                jac[(row_z, col)] = dn_db.z;
            }
        }
        res[0] -= target_n.x;
        res[1] -= target_n.y;
        let step = solve_small(&jac, &(-&res)).ok_or_else(singular)?;
        v += Vec3::new(step[0], step[1], step[2]);
        for (m, beta) in betas.iter_mut().enumerate() {
            *beta += step[3 + m];
        }
        let scale = v.norm().max(1.0);
        if step.amax() <= 1e-15 * scale {
            break;
        }
    }
    if v.z <= 0.0 || betas.iter().any(|&b| b <= 0.0) {
        return Err(singular());
    }

    Ok(RodState {
        s: station,
        p: state.p,
        r: state.r * rot_d3(theta_ref),
        u,
        v,
        reference,
        inner: rel
            .iter()
            .enumerate()
            .skip(1)
            .map(|(idx, &(tube, theta, _))| InnerTubeState {
                tube,
                theta,
                u_d3: moments[2 + idx],
                beta: betas[idx - 1],
            })
            .collect(),
    })
}

fn solve_small(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(max > 0.0 && min > max * 1e-12) {
        return None;
    }
    svd.solve(b, 0.0).ok()
}

/// One full integration from a guess.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingRun {
    pub residual: BoundaryResidual,
    /// Strictly increasing stations; boundaries keep the pre-event state.
    pub stations: Vec<RodState>,
    pub transitions: Vec<TransitionRecord>,
    /// Rate solves whose residual exceeded the consistency tolerance.
    pub inconsistent_solves: usize,
}

/// Segment plan, tendon carriers and stiffness of an assembly.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub assembly: AssemblySpec,
    pub plan: SegmentPlan,
    pub carriers: Vec<TendonAssignment>,
    pub stiffness: Vec<StiffnessPair>,
}

impl Prepared {
    pub fn new(assembly: &AssemblySpec) -> Result<Self, ShootError> {
        let errors = assembly.validate();
        if !errors.is_empty() {
            return Err(ShootError::Model(errors));
        }
        let plan = segment_plan(assembly)?;
        let carriers = plan.segments.iter().map(|s| assign_segment(assembly, s)).collect();
        Ok(Prepared {
            assembly: assembly.clone(),
            plan,
            carriers,
            stiffness: assembly.stiffness(),
        })
    }

    pub fn base_state(&self, guess: &ShootingGuess) -> RodState {
        RodState {
            s: 0.0,
            p: Vec3::zeros(),
            r: Mat3::identity(),
            u: guess.u,
            v: guess.v,
            reference: 0,
            inner: guess
                .inner
                .iter()
                .enumerate()
                .map(|(m, &(u_d3, beta))| InnerTubeState {
                    tube: m + 1,
                    theta: self.assembly.base_twists[m + 1],
                    u_d3,
                    beta,
                })
                .collect(),
        }
    }

    pub fn context(&self, segment: usize) -> SegmentContext<'_> {
        SegmentContext {
            assembly: &self.assembly,
            stiffness: &self.stiffness,
            carriers: &self.carriers[segment],
        }
    }

    pub fn run(&self, guess: &ShootingGuess, steps: usize, record: bool) -> Result<ShootingRun, ShootError> {
        guess.validate()?;
        let mut state = self.base_state(guess);
        let mut stations = vec![state.clone()];
        let mut transitions = Vec::new();
        let mut values = Vec::new();
        let mut kinds = Vec::new();
        let mut inconsistent = 0;
        for (i, seg) in self.plan.segments.iter().enumerate() {
            let ctx = self.context(i);
            let traj = rk4_segment(&state, seg.end, steps, |y| {
                let d = state_derivative(y, &ctx)?;
                if !d.consistent {
                    inconsistent += 1;
                }
                Ok(d)
            })?;
            let end = traj.last().unwrap().clone();
            if record {
                stations.extend(traj.into_iter().skip(1));
            }
            let out = apply_transition(&end, seg, &self.assembly, &self.stiffness, &self.carriers[i])?;
            values.extend(out.residual);
            kinds.extend(out.kinds);
            transitions.push(out.record);
            match out.state {
                Some(next) => state = next,
                None => break,
            }
        }
        Ok(ShootingRun {
            residual: BoundaryResidual {
                values: DVector::from_vec(values),
                kinds,
            },
            stations,
            transitions,
            inconsistent_solves: inconsistent,
        })
    }
}

pub fn boundary_residual(
    guess: &ShootingGuess,
    assembly: &AssemblySpec,
    options: &ShooterOptions,
) -> Result<BoundaryResidual, ShootError> {
    Ok(Prepared::new(assembly)?
        .run(guess, options.steps_per_segment, false)?
        .residual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub continuation_step: usize,
    /// Fraction of the full tensions being solved for.
    pub tension_scale: f64,
    pub iteration: usize,
    /// Scaled ∞-norm of the residual at the start of the iteration.
    pub residual_norm: f64,
    /// Accepted line-search step; zero on the converged pass.
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub continuation_steps: usize,
    /// Continuation steps that failed and were split in half.
    pub refinements: usize,
    /// Scaled ∞-norm of the final residual (converged below 1).
    pub residual_norm: f64,
    pub residual: Vec<f64>,
    pub residual_kinds: Vec<ResidualKind>,
    pub inconsistent_solves: usize,
    pub options: ShooterOptions,
    pub trace: Vec<IterationRecord>,
}

/// Per-tube quantities at a station, in the tube's own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSample {
    pub tube: usize,
    pub theta: f64,
    pub beta: f64,
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
    pub m: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub state: RodState,
    pub tubes: Vec<TubeSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub stations: Vec<Station>,
    pub guess: ShootingGuess,
    pub transitions: Vec<TransitionRecord>,
    pub report: ConvergenceReport,
}

impl Solution {
    pub fn tip(&self) -> Vec3 {
        self.stations.last().unwrap().state.p
    }

    pub fn tip_frame(&self) -> Mat3 {
        self.stations.last().unwrap().state.r
    }

    pub fn station_values(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.state.s).collect()
    }
}

fn sample(state: &RodState, prepared: &Prepared) -> Station {
    let strains = derived_strains(state);
    let wrenches = tube_wrenches(state, &prepared.assembly, &prepared.stiffness);
    Station {
        state: state.clone(),
        tubes: strains
            .tubes
            .iter()
            .zip(&wrenches)
            .map(|(ts, w)| TubeSample {
                tube: ts.tube,
                theta: ts.theta,
                beta: ts.beta,
                u: ts.u,
                v: ts.v,
                n: w.force,
                m: w.moment,
            })
            .collect(),
    }
}

/// Damped Newton on the boundary residual, starting from `guess`.
fn newton(
    prepared: &Prepared,
    guess: &DVector<f64>,
    options: &ShooterOptions,
    continuation_step: usize,
    tension_scale: f64,
    trace: &mut Vec<IterationRecord>,
) -> Result<(DVector<f64>, usize), ShootError> {
    let steps = options.steps_per_segment;
    let eval = |x: &DVector<f64>| -> Result<BoundaryResidual, ShootError> {
        Ok(prepared.run(&ShootingGuess::from_vector(x), steps, false)?.residual)
    };
    let mut x = guess.clone();
    let mut r = eval(&x)?;
    let h = ShootingGuess::from_vector(&x).perturbations(options);
    let weights = DVector::from_iterator(r.values.len(), r.kinds.iter().map(|k| 1.0 / tolerance(*k, options)));
    let scaled = |r: &BoundaryResidual| r.values.component_mul(&weights);
    let no_conv = |reason: String, trace: &Vec<IterationRecord>| ShootError::NoConvergence {
        reason,
        trace: trace.clone(),
    };
    for iteration in 1..=options.max_iterations {
        let norm = r.scaled_norm(options);
        if norm < 1.0 {
            trace.push(IterationRecord {
                continuation_step,
                tension_scale,
                iteration,
                residual_norm: norm,
                step_length: 0.0,
            });
            return Ok((x, iteration));
        }
        let f0 = scaled(&r);
        let mut jac = DMatrix::zeros(f0.len(), x.len());
        for (col, &hc) in h.iter().enumerate() {
            let mut xp = x.clone();
            xp[col] += hc;
            let fp = scaled(&eval(&xp)?);
            jac.set_column(col, &((fp - &f0) / hc));
        }
        let svd = jac.svd(true, true);
        let eps = svd.singular_values.max() * f0.len() as f64 * f64::EPSILON;
        let delta = svd
            .solve(&(-&f0), eps)
            .map_err(|e| no_conv(format!("Jacobian solve failed: {e}"), trace))?;
        let f0_norm = f0.norm();
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = &x + &delta * alpha;
            match eval(&trial) {
                Ok(rt) if scaled(&rt).norm() < f0_norm => break Some((trial, rt)),
                Ok(_) | Err(ShootError::InvalidGuess(_)) | Err(ShootError::Strain(_))
                | Err(ShootError::SingularTransition { .. }) | Err(ShootError::DegenerateFrame { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
            if alpha < options.min_step {
                break None;
            }
        };
        trace.push(IterationRecord {
            continuation_step,
            tension_scale,
            iteration,
            residual_norm: norm,
            step_length: if accepted.is_some() { alpha } else { 0.0 },
        });
        match accepted {
            Some((xn, rn)) => {
                x = xn;
                r = rn;
            }
            None => {
                return Err(no_conv(
                    format!(
                        "line search stalled at continuation step {continuation_step} (tension scale {tension_scale:.4}), iteration {iteration} (scaled residual {norm:.3e})"
                    ),
                    trace,
                ))
            }
        }
    }
    Err(no_conv(
        format!(
            "iteration cap {} reached at continuation step {continuation_step} (tension scale {tension_scale:.4}) (scaled residual {:.3e})",
            options.max_iterations,
            r.scaled_norm(options)
        ),
        trace,
    ))
}

/// Deepest halving of a failed continuation step.
const MAX_REFINEMENT_DEPTH: usize = 6;

/// Converged guesses along the tension ramp.
struct Ramp<'a> {
    assembly: &'a AssemblySpec,
    options: &'a ShooterOptions,
    /// `(tension scale, guess vector)`, most recent last.
    history: Vec<(f64, DVector<f64>)>,
    trace: Vec<IterationRecord>,
    iterations: usize,
    refinements: usize,
}

impl Ramp<'_> {
    /// Linear extrapolation through the last two converged guesses.
    fn predict(&self, scale: f64) -> DVector<f64> {
        match self.history.as_slice() {
            [.., (t0, x0), (t1, x1)] => x1 + (x1 - x0) * ((scale - t1) / (t1 - t0)),
            [.., (_, x1)] => x1.clone(),
            [] => unreachable!("ramp history starts with the seed"),
        }
    }

    /// Newton from `seed` at `scale`, without refinement.
    fn advance(&mut self, step: usize, seed: DVector<f64>, scale: f64) -> Result<(), ShootError> {
        let prepared = Prepared::new(&self.assembly.with_tension_scale(scale))?;
        let (x, its) = newton(&prepared, &seed, self.options, step, scale, &mut self.trace)?;
        self.iterations += its;
        self.history.push((scale, x));
        Ok(())
    }

    /// Converges at `scale`, halving the increment from the last converged
    /// scale when Newton fails.
    fn reach(&mut self, step: usize, scale: f64, depth: usize) -> Result<(), ShootError> {
        let prepared = Prepared::new(&self.assembly.with_tension_scale(scale))?;
        let previous = self.history.last().unwrap().1.clone();
        let predicted = self.predict(scale);
        let seed = if predicted != previous && better(&prepared, &predicted, &previous, self.options) {
            predicted
        } else {
            previous
        };
        match newton(&prepared, &seed, self.options, step, scale, &mut self.trace) {
            Ok((x, its)) => {
                self.iterations += its;
                self.history.push((scale, x));
                Ok(())
            }
            Err(ShootError::NoConvergence { .. }) if depth < MAX_REFINEMENT_DEPTH => {
                self.refinements += 1;
                let from = self.history.last().unwrap().0;
                self.reach(step, 0.5 * (from + scale), depth + 1)?;
                self.reach(step, scale, depth + 1)
            }
            Err(ShootError::NoConvergence { reason, .. }) => Err(ShootError::NoConvergence {
                reason,
                trace: self.trace.clone(),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Whether `a` has a smaller scaled residual than `b`; failed runs lose.
fn better(prepared: &Prepared, a: &DVector<f64>, b: &DVector<f64>, options: &ShooterOptions) -> bool {
    let norm = |x: &DVector<f64>| {
        prepared
            .run(&ShootingGuess::from_vector(x), options.steps_per_segment, false)
            .map(|r| r.residual.scaled_norm(options))
            .unwrap_or(f64::INFINITY)
    };
    norm(a) < norm(b)
}

/// Solves the assembly's statics, ramping tensions from zero.
pub fn shoot(assembly: &AssemblySpec, options: &ShooterOptions) -> Result<Solution, ShootError> {
    shoot_from(assembly, options, &ShootingGuess::rest(assembly), true)
}

/// Like [`shoot`], starting from `guess`. With `ramp` false the full tension
/// is applied at once, which suits warm starts from a nearby solution.
pub fn shoot_from(
    assembly: &AssemblySpec,
    options: &ShooterOptions,
    guess: &ShootingGuess,
    ramp: bool,
) -> Result<Solution, ShootError> {
    options.validate().map_err(ShootError::Options)?;
    let full = Prepared::new(assembly)?;
    if guess.inner.len() + 1 != assembly.tubes.len() {
        return Err(ShootError::InvalidGuess(format!(
            "guess has {} inner tubes, assembly has {}",
            guess.inner.len(),
            assembly.tubes.len() - 1
        )));
    }
    guess.validate()?;
    let steps = if ramp {
        options.continuation_steps(assembly.max_tension())
    } else {
        1
    };
    let mut ramp_state = Ramp {
        assembly,
        options,
        history: vec![(0.0, guess.to_vector())],
        trace: Vec::new(),
        iterations: 0,
        refinements: 0,
    };
    if !ramp {
        ramp_state.advance(1, guess.to_vector(), 1.0)?;
    } else {
        for k in 1..=steps {
            ramp_state.reach(k, k as f64 / steps as f64, 0)?;
        }
    }
    let current = ShootingGuess::from_vector(&ramp_state.history.last().unwrap().1);
    let (trace, iterations, refinements) = (ramp_state.trace, ramp_state.iterations, ramp_state.refinements);
    let run = full.run(&current, options.steps_per_segment, true)?;
    let stations = run.stations.iter().map(|s| sample(s, &full)).collect();
    Ok(Solution {
        stations,
        guess: current,
        transitions: run.transitions,
        report: ConvergenceReport {
            converged: true,
            iterations,
            continuation_steps: steps,
            refinements,
            residual_norm: run.residual.scaled_norm(options),
            residual: run.residual.values.iter().copied().collect(),
            residual_kinds: run.residual.kinds,
            inconsistent_solves: run.inconsistent_solves,
            options: *options,
            trace,
        },
    })
}

/// Distributed force and moment per unit length of every active tendon at a
/// station, in the world frame (moment about the world origin).
pub fn distributed_wrench_world(state: &RodState, ctx: &SegmentContext<'_>) -> Result<(Vec3, Vec3), ShootError> {
    let system = assemble_system(state, ctx)?;
    let sol = solve_rates(&system)?;
    let d = crate::strain::derivative_from_rates(state, &sol.x, sol.consistent);
    let strains = derived_strains(state);
    let mut force = Vec3::zeros();
    let mut moment = Vec3::zeros();
    for tk in tendon_kinematics(state, &strains, ctx)? {
        let ts = strains.get(tk.carrier).unwrap();
        let (du, dv) = tube_strain_rates(state, ts, &d);
        let (f, t) = distributed_load(&tk, &du, &dv);
        let to_world = state.r * rot_d3(ts.theta);
        let fw = to_world * f;
        force += fw;
        moment += to_world * t + state.p.cross(&fw);
    }
    Ok((force, moment))
}

/// Composite internal force and moment (world frame, moment about the world
/// origin) carried across the station.
pub fn composite_wrench_world(state: &RodState, assembly: &AssemblySpec, stiffness: &[StiffnessPair]) -> (Vec3, Vec3) {
    let mut force = Vec3::zeros();
    let mut moment = Vec3::zeros();
    for w in tube_wrenches(state, assembly, stiffness) {
        let to_world = state.r * rot_d3(w.theta);
        let f = to_world * w.force;
        force += f;
        moment += to_world * w.moment + state.p.cross(&f);
    }
    (force, moment)
}

/// `θ_i(s) − θ_i(0) − ∫(u_d3,i − u_z) ds` by composite Simpson over the
/// exported stations of each segment, for every inner tube active at the
/// base. Returns the worst absolute deviation (rad).
pub fn twist_quadrature_defect(solution: &Solution) -> f64 {
    let mut worst: f64 = 0.0;
    // Integrate along maximal runs with an unchanged reference tube.
    let stations = &solution.stations;
    let mut start = 0;
    while start < stations.len() {
        let reference = stations[start].state.reference;
        let mut end = start;
        while end + 1 < stations.len() && stations[end + 1].state.reference == reference {
            end += 1;
        }
        let run = &stations[start..=end];
        let tubes: Vec<usize> = run[0].state.inner.iter().map(|t| t.tube).collect();
        for tube in tubes {
            let samples: Vec<(f64, f64, f64)> = run
                .iter()
                .map_while(|st| {
                    st.state
                        .inner
                        .iter()
                        .find(|t| t.tube == tube)
                        .map(|t| (st.state.s, t.theta, t.u_d3 - st.state.u.z))
                })
                .collect();
            let mut integral = 0.0;
            let mut k = 0;
            while k + 2 < samples.len() {
                let (s0, _, f0) = samples[k];
                let (s1, _, f1) = samples[k + 1];
                let (s2, t2, f2) = samples[k + 2];
                if ((s1 - s0) - (s2 - s1)).abs() > 1e-9 * (s2 - s0) {
                    break;
                }
                integral += (s2 - s0) / 6.0 * (f0 + 4.0 * f1 + f2);
                let scale = ((s2 - samples[0].0) / 0.1).max(1.0);
                worst = worst.max((t2 - samples[0].1 - integral).abs() / scale);
                k += 2;
            }
        }
        start = end + 1;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{TendonSpec, TubeSpec};
    use crate::routing::RoutingPath;
    use crate::so3::hat;
    use approx::assert_relative_eq;

    fn straight_tube(length: f64) -> TubeSpec {
        TubeSpec::straight(length, 65e9, 24.4e9, 1.35e-3, 1.07e-3)
    }

    #[test]
    fn straight_rest_tip_is_exact() {
        for steps in [1, 7, 200] {
            let a = AssemblySpec::new(vec![straight_tube(0.2)], vec![]);
            let p = Prepared::new(&a).unwrap();
            let run = p.run(&ShootingGuess::rest(&a), steps, true).unwrap();
            let tip = run.stations.last().unwrap().p;
            assert!((tip - Vec3::new(0.0, 0.0, 0.2)).norm() < 1e-12);
            assert_eq!(run.residual.values, DVector::zeros(6));
            assert_eq!(run.stations.len(), steps + 1);
        }
    }

    #[test]
    fn prescribed_arc() {
        let y0 = RodState {
            s: 0.0,
            p: Vec3::zeros(),
            r: Mat3::identity(),
            u: Vec3::new(10.0, 0.0, 0.0),
            v: Vec3::z(),
            reference: 0,
            inner: vec![],
        };
        let f = |y: &RodState| {
            Ok(StateDerivative {
                dp: y.r * y.v,
                dr: y.r * hat(&y.u),
                du: Vec3::zeros(),
                dv: Vec3::zeros(),
                inner: vec![],
                consistent: true,
            })
        };
        let tip = |steps| rk4_segment(&y0, 0.1, steps, f).unwrap().last().unwrap().p;
        let exact = Vec3::new(0.0, -(1.0 - 1f64.cos()) / 10.0, 1f64.sin() / 10.0);
        assert!((tip(200) - exact).norm() < 1e-12);
        // About d1 with positive curvature the centerline bends toward −d2.
        assert_relative_eq!(exact.y.abs(), 0.04597, epsilon = 1e-5);
        assert_relative_eq!(exact.z, 0.08415, epsilon = 1e-5);
        let e1 = (tip(4) - exact).norm();
        let e2 = (tip(8) - exact).norm();
        assert!((e1 / e2 - 16.0).abs() < 1.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn zero_tension_converges_on_first_pass() {
        let a = AssemblySpec::new(vec![straight_tube(0.2), TubeSpec::straight(0.3, 50e9, 20e9, 1e-3, 0.5e-3)], vec![]);
        let sol = shoot(&a, &ShooterOptions::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert_eq!(sol.report.continuation_steps, 1);
        assert_eq!(sol.report.residual.len(), 8);
    }

    #[test]
    fn axial_tendon_compresses_uniformly() {
        let tube = straight_tube(0.2);
        let ea = crate::assembly::section_stiffness(&tube).k_se[(2, 2)];
        let a = AssemblySpec::new(
            vec![tube],
            vec![TendonSpec {
                routing: RoutingPath::straight(Vec3::zeros()),
                tension: 2.0,
                termination: 0.2,
                tube: 0,
            }],
        );
        let mut g = ShootingGuess::rest(&a);
        g.v.z = 1.0 - 2.0 / ea;
        let r = boundary_residual(&g, &a, &ShooterOptions::default()).unwrap();
        assert!(r.values.amax() < 1e-9, "{}", r.values);
        let sol = shoot(&a, &ShooterOptions::default()).unwrap();
        assert_relative_eq!(sol.guess.v.z, 1.0 - 2.0 / ea, epsilon = 1e-13);
    }

    #[test]
    fn offset_tendon_tip_moment() {
        let a = AssemblySpec::new(
            vec![straight_tube(0.2)],
            vec![TendonSpec {
                routing: RoutingPath::straight(Vec3::new(6.5e-3, 0.0, 0.0)),
                tension: 2.0,
                termination: 0.2,
                tube: 0,
            }],
        );
        let p = Prepared::new(&a).unwrap();
        let run = p.run(&ShootingGuess::rest(&a), 50, false).unwrap();
        // Straight state: constitutive moment zero, so the residual is minus
        // the tendon's point moment r × (−λ e3) = λ ρ e2.
        assert_relative_eq!(run.residual.values[4], -0.013, epsilon = 1e-12);
        assert_eq!(run.residual.kinds[4], ResidualKind::Moment);
    }

    #[test]
    fn unloaded_transition_keeps_strains() {
        let a = AssemblySpec::new(
            vec![straight_tube(0.1), TubeSpec::straight(0.2, 50e9, 20e9, 1e-3, 0.5e-3)],
            vec![],
        );
        let p = Prepared::new(&a).unwrap();
        let seg = &p.plan.segments[0];
        let state = RodState {
            s: 0.1,
            p: Vec3::new(0.0, 0.0, 0.1),
            r: Mat3::identity(),
            u: Vec3::zeros(),
            v: Vec3::z(),
            reference: 0,
            inner: vec![InnerTubeState {
                tube: 1,
                theta: 0.0,
                u_d3: 0.0,
                beta: 1.0,
            }],
        };
        let out = apply_transition(&state, seg, &a, &p.stiffness, &p.carriers[0]).unwrap();
        let next = out.state.unwrap();
        assert_eq!(next.reference, 1);
        assert_relative_eq!(next.u, Vec3::zeros(), epsilon = 1e-15);
        assert_relative_eq!(next.v, Vec3::z(), epsilon = 1e-15);
        assert_eq!(out.residual, vec![0.0, 0.0]);
    }

    #[test]
    fn transition_reindexes_frames() {
        let tubes = vec![
            TubeSpec::straight(0.1, 50e9, 20e9, 2e-3, 1.6e-3),
            TubeSpec::straight(0.2, 50e9, 20e9, 1.4e-3, 1.0e-3),
            TubeSpec::straight(0.3, 50e9, 20e9, 0.8e-3, 0.0),
        ];
        let a = AssemblySpec::new(tubes, vec![]);
        let p = Prepared::new(&a).unwrap();
        let (t2, t3) = (0.4, -1.1);
        let state = RodState {
            s: 0.1,
            p: Vec3::new(0.01, 0.0, 0.1),
            r: rot_d3(0.2),
            u: Vec3::zeros(),
            v: Vec3::z(),
            reference: 0,
            inner: vec![
                InnerTubeState { tube: 1, theta: t2, u_d3: 0.0, beta: 1.0 },
                InnerTubeState { tube: 2, theta: t3, u_d3: 0.0, beta: 1.0 },
            ],
        };
        let out = apply_transition(&state, &p.plan.segments[0], &a, &p.stiffness, &p.carriers[0]).unwrap();
        let next = out.state.unwrap();
        assert_relative_eq!(next.r, rot_d3(0.2) * rot_d3(t2), epsilon = 1e-15);
        assert_relative_eq!(next.inner[0].theta, t3 - t2);
        assert_eq!(next.p, state.p);
    }

    #[test]
    fn transition_preserves_composite_wrench() {
        let tubes = vec![
            TubeSpec::straight(0.1, 60e9, 22e9, 2e-3, 1.6e-3),
            TubeSpec::straight(0.2, 50e9, 20e9, 1.4e-3, 1.0e-3),
            TubeSpec::straight(0.3, 80e9, 30e9, 0.8e-3, 0.0),
        ];
        let a = AssemblySpec::new(tubes, vec![]);
        let p = Prepared::new(&a).unwrap();
        let state = RodState {
            s: 0.1,
            p: Vec3::zeros(),
            r: Mat3::identity(),
            u: Vec3::new(3.0, -1.0, 0.2),
            v: Vec3::new(0.002, -0.001, 1.0005),
            reference: 0,
            inner: vec![
                InnerTubeState { tube: 1, theta: 0.7, u_d3: 0.5, beta: 1.0002 },
                InnerTubeState { tube: 2, theta: -0.3, u_d3: -0.4, beta: 0.9999 },
            ],
        };
        let out = apply_transition(&state, &p.plan.segments[0], &a, &p.stiffness, &p.carriers[0]).unwrap();
        let sum = |w: &[(usize, Vec3, Vec3)]| w.iter().fold((Vec3::zeros(), Vec3::zeros()), |a, b| (a.0 + b.1, a.1 + b.2));
        let (nb, mb) = sum(&out.record.before);
        let (na, ma) = sum(&out.record.after);
        assert_relative_eq!(na.xy(), nb.xy(), epsilon = 1e-9);
        assert_relative_eq!(ma.xy(), mb.xy(), epsilon = 1e-12);
        for (k, n, m) in &out.record.after {
            let (_, n0, m0) = out.record.before.iter().find(|b| b.0 == *k).unwrap();
            assert_relative_eq!(n.z, n0.z, epsilon = 1e-9);
            assert_relative_eq!(m.z, m0.z, epsilon = 1e-14);
        }
        assert_eq!(out.residual.len(), 2);
    }

    #[test]
    fn residual_dimension_matches_guess() {
        for n in 1..=4 {
            let tubes = (0..n)
                .map(|k| TubeSpec::straight(0.1 + 0.05 * k as f64, 50e9, 20e9, 2e-3 - 0.4e-3 * k as f64, 1.8e-3 - 0.4e-3 * k as f64))
                .collect();
            let a = AssemblySpec::new(tubes, vec![]);
            let g = ShootingGuess::rest(&a);
            let r = boundary_residual(&g, &a, &ShooterOptions { steps_per_segment: 5, ..Default::default() }).unwrap();
            assert_eq!(r.values.len(), g.dimension());
            assert_eq!(r.values.len(), 6 + 2 * (n - 1));
        }
    }
}
