//! Strain ODEs of a tendon-loaded concentric tube assembly.
//!
//! The state carries the curvature `u` and linear strain `v` of the
//! reference (outermost active) tube plus, for every other active tube, its
//! relative twist `θ`, torsional curvature `u_d3` and relative dilation `β`.
//! Curvature and shear of inner tubes follow from the compatibility maps
//!
//! ```text
//! u_i = R_d3(θ_i)ᵀ u + θ'_i e3,     θ'_i = u_d3,i − u_z
//! v_i = β_i R_d3(θ_i)ᵀ v
//! ```
//!
//! The arc-length rates `x = [u', v', u_d3,i', β_i']` solve a square system
//! `A x = b` of `4 + 2n` rows: the d1/d2 components of the summed moment
//! balance, one d3 moment row per tube, the d1/d2 components of the summed
//! force balance, and one d3 force row per tube. Inter-tube contact loads
//! cancel in the sums and have no d3 component, so they never appear.
//!
//! Each tube's balance is first written in its own frame as
//! `Mu u̇_i + Mv v̇_i = m_rhs` and `Fu u̇_i + Fv v̇_i = f_rhs`
//! ([`TubeBalance`]); the chain rule through the compatibility maps
//! ([`CompatibilityMap`]) then distributes those coefficients over `x`.

use nalgebra::{DMatrix, DVector, Matrix2x3, RowVector3, Vector2};
use thiserror::Error;

use crate::assembly::{AssemblySpec, ModelError, StiffnessPair, TendonAssignment};
use crate::routing::routing_eval;
use crate::so3::{d3_selector, e3, hat, rot_d3, rot_d3_transpose_derivative, Mat3, Vec3};

/// Tendon tangents shorter than this are treated as an invalid routing.
pub const MIN_TENDON_SPEED: f64 = 1e-9;
/// Condition estimate above which the rate system is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative residual above which a rate solve is flagged as inconsistent.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrainError {
    #[error("tendon {tendon} has a stationary path (|p_b'| = {speed:.3e})")]
    DegenerateTendon { tendon: usize, speed: f64 },
    #[error("rate system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("tendon {tendon} is assigned to inactive tube {tube}")]
    InactiveCarrier { tendon: usize, tube: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Relative twist, torsional curvature and dilation of a non-reference tube.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InnerTubeState {
    pub tube: usize,
    pub theta: f64,
    pub u_d3: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RodState {
    pub s: f64,
    pub p: Vec3,
    /// Material frame of the reference tube (columns d1, d2, d3).
    pub r: Mat3,
    pub u: Vec3,
    pub v: Vec3,
    /// Index of the reference (outermost active) tube.
    pub reference: usize,
    pub inner: Vec<InnerTubeState>,
}

impl RodState {
    pub fn active_tubes(&self) -> Vec<usize> {
        std::iter::once(self.reference)
            .chain(self.inner.iter().map(|t| t.tube))
            .collect()
    }

    pub fn tube_count(&self) -> usize {
        1 + self.inner.len()
    }

    /// `(θ, β)` of an active tube relative to the reference.
    pub fn twist_dilation(&self, tube: usize) -> Option<(f64, f64)> {
        if tube == self.reference {
            return Some((0.0, 1.0));
        }
        self.inner
            .iter()
            .find(|t| t.tube == tube)
            .map(|t| (t.theta, t.beta))
    }

    /// `self + h * d`, used by the Runge–Kutta stages.
    pub fn advanced(&self, d: &StateDerivative, h: f64) -> RodState {
        RodState {
            s: self.s + h,
            p: self.p + d.dp * h,
            r: self.r + d.dr * h,
            u: self.u + d.du * h,
            v: self.v + d.dv * h,
            reference: self.reference,
            inner: self
                .inner
                .iter()
                .zip(&d.inner)
                .map(|(t, dt)| InnerTubeState {
                    tube: t.tube,
                    theta: t.theta + dt.dtheta * h,
                    u_d3: t.u_d3 + dt.du_d3 * h,
                    beta: t.beta + dt.dbeta * h,
                })
                .collect(),
        }
    }
}

/// Curvature and linear strain of one tube in its own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeStrain {
    pub tube: usize,
    pub theta: f64,
    pub beta: f64,
    /// `θ'`; zero for the reference tube.
    pub twist_rate: f64,
    pub u: Vec3,
    pub v: Vec3,
}

/// Strains of every active tube, reference first.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedTubeStrains {
    pub tubes: Vec<TubeStrain>,
}

impl DerivedTubeStrains {
    pub fn get(&self, tube: usize) -> Option<&TubeStrain> {
        self.tubes.iter().find(|t| t.tube == tube)
    }
}

pub fn derived_strains(state: &RodState) -> DerivedTubeStrains {
    let mut tubes = Vec::with_capacity(state.tube_count());
    tubes.push(TubeStrain {
        tube: state.reference,
        theta: 0.0,
        beta: 1.0,
        twist_rate: 0.0,
        u: state.u,
        v: state.v,
    });
    for t in &state.inner {
        let rt = rot_d3(t.theta).transpose();
        let twist_rate = t.u_d3 - state.u.z;
        tubes.push(TubeStrain {
            tube: t.tube,
            theta: t.theta,
            beta: t.beta,
            twist_rate,
            u: rt * state.u + e3() * twist_rate,
            v: rt * state.v * t.beta,
        });
    }
    DerivedTubeStrains { tubes }
}

/// Tendon tangent data entering the distributed-load model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TendonKinematics {
    pub tendon: usize,
    /// Tube whose frame `r` is expressed in and which carries the load.
    pub carrier: usize,
    /// Carrier curvature and strain used to build `pb_dot`.
    pub u: Vec3,
    pub v: Vec3,
    pub r: Vec3,
    pub dr: Vec3,
    pub ddr: Vec3,
    pub tension: f64,
    /// `[u] r + r' + v`
    pub pb_dot: Vec3,
}

impl TendonKinematics {
    /// `λ / |pb_dot|³`
    pub fn scale(&self) -> f64 {
        self.tension / self.pb_dot.norm().powi(3)
    }

    /// `[pb_dot]²`, the projector (up to sign and scale) orthogonal to the
    /// tendon tangent.
    pub fn projector(&self) -> Mat3 {
        let h = hat(&self.pb_dot);
        h * h
    }

    /// State-only part of the tendon's second derivative:
    /// `[u] pb_dot + [u] r' + r''`.
    pub fn known_curvature_term(&self) -> Vec3 {
        self.u.cross(&self.pb_dot) + self.u.cross(&self.dr) + self.ddr
    }

    /// Point force and moment the anchored tendon exerts on its tube.
    pub fn anchor_load(&self) -> (Vec3, Vec3) {
        let f = -self.pb_dot.normalize() * self.tension;
        (f, self.r.cross(&f))
    }
}

/// Everything about the current segment the ODE needs beyond the state.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext<'a> {
    pub assembly: &'a AssemblySpec,
    pub stiffness: &'a [StiffnessPair],
    /// Carrier tube → tendons whose distributed load it carries.
    pub carriers: &'a TendonAssignment,
}

pub fn tendon_kinematics(
    state: &RodState,
    strains: &DerivedTubeStrains,
    ctx: &SegmentContext<'_>,
) -> Result<Vec<TendonKinematics>, StrainError> {
    let mut out = Vec::new();
    for (&carrier, tendons) in ctx.carriers {
        for &j in tendons {
            let strain = strains
                .get(carrier)
                .ok_or(StrainError::InactiveCarrier {
                    tendon: j,
                    tube: carrier,
                })?;
            let spec = &ctx.assembly.tendons[j];
            let path = routing_eval(&spec.routing, state.s)?;
            let pb_dot = strain.u.cross(&path.r) + path.dr + strain.v;
            let speed = pb_dot.norm();
            if !(speed >= MIN_TENDON_SPEED) {
                return Err(StrainError::DegenerateTendon { tendon: j, speed });
            }
            out.push(TendonKinematics {
                tendon: j,
                carrier,
                u: strain.u,
                v: strain.v,
                r: path.r,
                dr: path.dr,
                ddr: path.ddr,
                tension: spec.tension,
                pb_dot,
            });
        }
    }
    Ok(out)
}

/// Moment and force balance of one tube in its own frame, linear in that
/// tube's strain rates:
///
/// ```text
/// moment_u u̇_i + moment_v v̇_i = moment_rhs
/// force_u  u̇_i + force_v  v̇_i = force_rhs
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeBalance {
    pub moment_u: Mat3,
    pub moment_v: Mat3,
    pub moment_rhs: Vec3,
    pub force_u: Mat3,
    pub force_v: Mat3,
    pub force_rhs: Vec3,
}

/// Rest strains of one tube at a station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestStrains {
    pub u: Vec3,
    pub du: Vec3,
    pub v: Vec3,
    pub dv: Vec3,
}

impl RestStrains {
    pub fn of(assembly: &AssemblySpec, tube: usize, s: f64) -> Self {
        let local = assembly.local_arclength(tube, s);
        let spec = &assembly.tubes[tube];
        let (u, du) = spec.precurvature.eval(local);
        let (v, dv) = spec.prestrain.eval(local);
        RestStrains { u, du, v, dv }
    }
}

pub fn tube_balance(
    strain: &TubeStrain,
    rest: &RestStrains,
    stiffness: &StiffnessPair,
    tendons: &[&TendonKinematics],
) -> TubeBalance {
    let (k_se, k_bt) = (stiffness.k_se, stiffness.k_bt);
    let (u, v) = (strain.u, strain.v);
    let m = k_bt * (u - rest.u);
    let n = k_se * (v - rest.v);
    let mut out = TubeBalance {
        moment_u: k_bt,
        moment_v: Mat3::zeros(),
        moment_rhs: k_bt * rest.du - u.cross(&m) - v.cross(&n),
        force_u: Mat3::zeros(),
        force_v: k_se,
        force_rhs: k_se * rest.dv - u.cross(&n),
    };
    for tk in tendons {
        let c = tk.scale();
        let proj = tk.projector() * c;
        let r_hat = hat(&tk.r);
        let known = tk.known_curvature_term();
        out.moment_u += r_hat * proj * r_hat;
        out.moment_v -= r_hat * proj;
        out.moment_rhs += r_hat * proj * known;
        out.force_u += proj * r_hat;
        out.force_v -= proj;
        out.force_rhs += proj * known;
    }
    out
}

/// Chain rule from the unknown rates to one tube's strain rates:
///
/// ```text
/// u̇_i = u_from_u u̇ + e3 u̇_d3,i + u_known
/// v̇_i = v_from_v v̇ + v_from_beta β̇_i + v_known
/// ```
///
/// For the reference tube `u̇_i = u̇` and `v̇_i = v̇`, and there are no
/// `u_d3`/`β` columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityMap {
    pub is_reference: bool,
    pub u_from_u: Mat3,
    pub u_known: Vec3,
    pub v_from_v: Mat3,
    pub v_from_beta: Vec3,
    pub v_known: Vec3,
}

pub fn compatibility_map(state: &RodState, strain: &TubeStrain) -> CompatibilityMap {
    if strain.tube == state.reference {
        return CompatibilityMap {
            is_reference: true,
            u_from_u: Mat3::identity(),
            u_known: Vec3::zeros(),
            v_from_v: Mat3::identity(),
            v_from_beta: Vec3::zeros(),
            v_known: Vec3::zeros(),
        };
    }
    let rt = rot_d3(strain.theta).transpose();
    let drt = rot_d3_transpose_derivative(strain.theta);
    CompatibilityMap {
        is_reference: false,
        u_from_u: rt - d3_selector(),
        u_known: drt * state.u * strain.twist_rate,
        v_from_v: rt * strain.beta,
        v_from_beta: rt * state.v,
        v_known: drt * state.v * (strain.beta * strain.twist_rate),
    }
}

/// Coefficients of one balance equation (moment or force) of one tube,
/// expressed over the unknown rates and rotated into the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBalance {
    pub u: Mat3,
    pub v: Mat3,
    /// Column multiplying this tube's `u̇_d3` (zero for the reference).
    pub u_d3: Vec3,
    /// Column multiplying this tube's `β̇` (zero for the reference).
    pub beta: Vec3,
    pub rhs: Vec3,
}

fn project(coeff_u: &Mat3, coeff_v: &Mat3, rhs: &Vec3, map: &CompatibilityMap, theta: f64) -> ProjectedBalance {
    let rot = rot_d3(theta);
    let (u_d3, beta) = if map.is_reference {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        (rot * coeff_u * e3(), rot * coeff_v * map.v_from_beta)
    };
    ProjectedBalance {
        u: rot * coeff_u * map.u_from_u,
        v: rot * coeff_v * map.v_from_v,
        u_d3,
        beta,
        rhs: rot * (rhs - coeff_u * map.u_known - coeff_v * map.v_known),
    }
}

/// Moment balance of tube `i` over the unknown rates, in the reference frame.
pub fn projected_moment(balance: &TubeBalance, map: &CompatibilityMap, theta: f64) -> ProjectedBalance {
    project(&balance.moment_u, &balance.moment_v, &balance.moment_rhs, map, theta)
}

/// Force balance of tube `i` over the unknown rates, in the reference frame.
pub fn projected_force(balance: &TubeBalance, map: &CompatibilityMap, theta: f64) -> ProjectedBalance {
    project(&balance.force_u, &balance.force_v, &balance.force_rhs, map, theta)
}

/// d1/d2 rows of a summed balance (blocks `G` for moments, `J` for forces).
#[derive(Debug, Clone, PartialEq)]
pub struct SumBlocks {
    pub u: Matrix2x3<f64>,
    pub v: Matrix2x3<f64>,
    /// Per inner tube, in state order.
    pub u_d3: Vec<Vector2<f64>>,
    pub beta: Vec<Vector2<f64>>,
    pub rhs: Vector2<f64>,
}

/// d3 row of one tube's balance (blocks `H` for moments, `K` for forces).
#[derive(Debug, Clone, PartialEq)]
pub struct D3Row {
    pub u: RowVector3<f64>,
    pub v: RowVector3<f64>,
    /// Coefficient of this tube's own `u̇_d3` (zero for the reference).
    pub u_d3: f64,
    pub beta: f64,
    pub rhs: f64,
}

fn sum_blocks(parts: &[ProjectedBalance]) -> SumBlocks {
    let top = |m: &Mat3| m.fixed_view::<2, 3>(0, 0).into_owned();
    let top_v = |v: &Vec3| Vector2::new(v.x, v.y);
    let mut out = SumBlocks {
        u: Matrix2x3::zeros(),
        v: Matrix2x3::zeros(),
        u_d3: Vec::new(),
        beta: Vec::new(),
        rhs: Vector2::zeros(),
    };
    for (k, p) in parts.iter().enumerate() {
        out.u += top(&p.u);
        out.v += top(&p.v);
        out.rhs += top_v(&p.rhs);
        if k > 0 {
            out.u_d3.push(top_v(&p.u_d3));
            out.beta.push(top_v(&p.beta));
        }
    }
    out
}

fn d3_row(p: &ProjectedBalance) -> D3Row {
    D3Row {
        u: p.u.row(2).into_owned(),
        v: p.v.row(2).into_owned(),
        u_d3: p.u_d3.z,
        beta: p.beta.z,
        rhs: p.rhs.z,
    }
}

/// Per-tube balances, maps and tendon data at one state.
#[derive(Debug, Clone)]
pub struct BalanceSet {
    pub strains: DerivedTubeStrains,
    pub tendons: Vec<TendonKinematics>,
    pub balances: Vec<TubeBalance>,
    pub maps: Vec<CompatibilityMap>,
}

pub fn balance_set(state: &RodState, ctx: &SegmentContext<'_>) -> Result<BalanceSet, StrainError> {
    let strains = derived_strains(state);
    let tendons = tendon_kinematics(state, &strains, ctx)?;
    let mut balances = Vec::with_capacity(strains.tubes.len());
    let mut maps = Vec::with_capacity(strains.tubes.len());
    for ts in &strains.tubes {
        let carried: Vec<&TendonKinematics> =
            tendons.iter().filter(|t| t.carrier == ts.tube).collect();
        let rest = RestStrains::of(ctx.assembly, ts.tube, state.s);
        balances.push(tube_balance(ts, &rest, &ctx.stiffness[ts.tube], &carried));
        maps.push(compatibility_map(state, ts));
    }
    Ok(BalanceSet {
        strains,
        tendons,
        balances,
        maps,
    })
}

impl BalanceSet {
    fn projected(&self, moment: bool) -> Vec<ProjectedBalance> {
        self.strains
            .tubes
            .iter()
            .zip(self.balances.iter().zip(&self.maps))
            .map(|(ts, (b, m))| {
                if moment {
                    projected_moment(b, m, ts.theta)
                } else {
                    projected_force(b, m, ts.theta)
                }
            })
            .collect()
    }

    /// `G` blocks and `RHS₁`.
    pub fn moment_sum_blocks(&self) -> SumBlocks {
        sum_blocks(&self.projected(true))
    }

    /// `ᵢH` blocks and `RHS₂,ᵢ`, one per active tube.
    pub fn moment_d3_rows(&self) -> Vec<D3Row> {
        self.projected(true).iter().map(d3_row).collect()
    }

    /// `J` blocks and `RHS₃`.
    pub fn force_sum_blocks(&self) -> SumBlocks {
        sum_blocks(&self.projected(false))
    }

    /// `ᵢK` blocks and `RHS₄,ᵢ`, one per active tube.
    pub fn force_d3_rows(&self) -> Vec<D3Row> {
        self.projected(false).iter().map(d3_row).collect()
    }
}

/// `A x = b` with `x = [u̇ (3), v̇ (3), u̇_d3,i (n−1), β̇_i (n−1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Active tube count.
    pub tubes: usize,
}

impl LinearSystem {
    pub fn dimension(tubes: usize) -> usize {
        4 + 2 * tubes
    }

    /// Row-equilibrated SVD least squares. Row scaling leaves the solution
    /// set of a consistent system unchanged, so the minimum-norm solution is
    /// the same as for the raw system.
    pub fn solve_min_norm(&self) -> RateSolution {
        let dim = self.a.nrows();
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        for i in 0..dim {
            let scale = a.row(i).amax();
            if scale > 0.0 {
                a.row_mut(i).scale_mut(1.0 / scale);
                b[i] /= scale;
            }
        }
        let svd = a.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        let condition = if sigma_min > 0.0 {
            sigma_max / sigma_min
        } else {
            f64::INFINITY
        };
        let eps = sigma_max * dim as f64 * f64::EPSILON;
        let x = svd
            .solve(&b, eps)
            .unwrap_or_else(|_| DVector::zeros(self.a.ncols()));
        let residual = (&self.a * &x - &self.b).norm();
        let b_norm = self.b.norm();
        RateSolution {
            x,
            residual,
            condition,
            consistent: residual <= CONSISTENCY_TOLERANCE * b_norm.max(f64::MIN_POSITIVE)
                || residual <= 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSolution {
    pub x: DVector<f64>,
    /// `‖A x − b‖`
    pub residual: f64,
    /// Ratio of extreme singular values of the row-equilibrated matrix.
    pub condition: f64,
    /// False when the residual exceeds the consistency tolerance.
    pub consistent: bool,
}

pub fn assemble_system(state: &RodState, ctx: &SegmentContext<'_>) -> Result<LinearSystem, StrainError> {
    Ok(assemble_from(&balance_set(state, ctx)?))
}

pub fn assemble_from(set: &BalanceSet) -> LinearSystem {
    let n = set.strains.tubes.len();
    let dim = LinearSystem::dimension(n);
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let col_ud3 = |k: usize| 6 + (k - 1);
    let col_beta = |k: usize| 6 + (n - 1) + (k - 1);

    let put_sum = |row: usize, blocks: &SumBlocks, a: &mut DMatrix<f64>, b: &mut DVector<f64>| {
        a.view_mut((row, 0), (2, 3)).copy_from(&blocks.u);
        a.view_mut((row, 3), (2, 3)).copy_from(&blocks.v);
        for k in 1..n {
            a.view_mut((row, col_ud3(k)), (2, 1)).copy_from(&blocks.u_d3[k - 1]);
            a.view_mut((row, col_beta(k)), (2, 1)).copy_from(&blocks.beta[k - 1]);
        }
        b.rows_mut(row, 2).copy_from(&blocks.rhs);
    };
    let put_row = |row: usize, k: usize, r: &D3Row, a: &mut DMatrix<f64>, b: &mut DVector<f64>| {
        a.view_mut((row, 0), (1, 3)).copy_from(&r.u);
        a.view_mut((row, 3), (1, 3)).copy_from(&r.v);
        if k > 0 {
            a[(row, col_ud3(k))] = r.u_d3;
            a[(row, col_beta(k))] = r.beta;
        }
        b[row] = r.rhs;
    };

    put_sum(0, &set.moment_sum_blocks(), &mut a, &mut b);
    for (k, r) in set.moment_d3_rows().iter().enumerate() {
        put_row(2 + k, k, r, &mut a, &mut b);
    }
    put_sum(2 + n, &set.force_sum_blocks(), &mut a, &mut b);
    for (k, r) in set.force_d3_rows().iter().enumerate() {
        put_row(4 + n + k, k, r, &mut a, &mut b);
    }
    LinearSystem { a, b, tubes: n }
}

/// Minimum-norm rates, rejecting near-singular systems.
pub fn solve_rates(system: &LinearSystem) -> Result<RateSolution, StrainError> {
    let sol = system.solve_min_norm();
    if !(sol.condition <= MAX_CONDITION) {
        return Err(StrainError::IllConditioned {
            condition: sol.condition,
        });
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRates {
    pub dtheta: f64,
    pub du_d3: f64,
    pub dbeta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub dp: Vec3,
    pub dr: Mat3,
    pub du: Vec3,
    pub dv: Vec3,
    pub inner: Vec<InnerRates>,
    pub consistent: bool,
}

impl StateDerivative {
    /// `(k1 + 2 k2 + 2 k3 + k4) / 6`
    pub fn rk4_average(k: [&StateDerivative; 4]) -> StateDerivative {
        let w = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        let mut out = StateDerivative {
            dp: Vec3::zeros(),
            dr: Mat3::zeros(),
            du: Vec3::zeros(),
            dv: Vec3::zeros(),
            inner: vec![
                InnerRates {
                    dtheta: 0.0,
                    du_d3: 0.0,
                    dbeta: 0.0
                };
                k[0].inner.len()
            ],
            consistent: k.iter().all(|d| d.consistent),
        };
        for (d, wi) in k.iter().zip(w) {
            out.dp += d.dp * wi;
            out.dr += d.dr * wi;
            out.du += d.du * wi;
            out.dv += d.dv * wi;
            for (o, r) in out.inner.iter_mut().zip(&d.inner) {
                o.dtheta += r.dtheta * wi;
                o.du_d3 += r.du_d3 * wi;
                o.dbeta += r.dbeta * wi;
            }
        }
        out
    }
}

pub fn derivative_from_rates(state: &RodState, x: &DVector<f64>, consistent: bool) -> StateDerivative {
    let n = state.tube_count();
    StateDerivative {
        dp: state.r * state.v,
        dr: state.r * hat(&state.u),
        du: Vec3::new(x[0], x[1], x[2]),
        dv: Vec3::new(x[3], x[4], x[5]),
        inner: state
            .inner
            .iter()
            .enumerate()
            .map(|(m, t)| InnerRates {
                dtheta: t.u_d3 - state.u.z,
                du_d3: x[6 + m],
                dbeta: x[6 + (n - 1) + m],
            })
            .collect(),
        consistent,
    }
}

pub fn state_derivative(state: &RodState, ctx: &SegmentContext<'_>) -> Result<StateDerivative, StrainError> {
    let system = assemble_system(state, ctx)?;
    let sol = solve_rates(&system)?;
    Ok(derivative_from_rates(state, &sol.x, sol.consistent))
}

/// Strain rates `(u̇_i, v̇_i)` of an active tube given the solved rates.
pub fn tube_strain_rates(state: &RodState, strain: &TubeStrain, d: &StateDerivative) -> (Vec3, Vec3) {
    let map = compatibility_map(state, strain);
    if map.is_reference {
        return (d.du, d.dv);
    }
    let m = state
        .inner
        .iter()
        .position(|t| t.tube == strain.tube)
        .expect("strain belongs to an inner tube of this state");
    let r = &d.inner[m];
    (
        map.u_from_u * d.du + e3() * r.du_d3 + map.u_known,
        map.v_from_v * d.dv + map.v_from_beta * r.dbeta + map.v_known,
    )
}

/// Distributed force and moment (per unit length, carrier frame) applied by
/// a tendon once the carrier's strain rates are known.
pub fn distributed_load(tk: &TendonKinematics, du: &Vec3, dv: &Vec3) -> (Vec3, Vec3) {
    let pdd = tk.known_curvature_term() - tk.r.cross(du) + dv;
    let f = -(tk.projector() * pdd) * tk.scale();
    (f, tk.r.cross(&f))
}

/// Internal force and moment of every active tube in its own frame.
pub fn tube_wrenches(state: &RodState, assembly: &AssemblySpec, stiffness: &[StiffnessPair]) -> Vec<TubeWrench> {
    derived_strains(state)
        .tubes
        .iter()
        .map(|ts| {
            let rest = RestStrains::of(assembly, ts.tube, state.s);
            let k = &stiffness[ts.tube];
            TubeWrench {
                tube: ts.tube,
                theta: ts.theta,
                force: k.k_se * (ts.v - rest.v),
                moment: k.k_bt * (ts.u - rest.u),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeWrench {
    pub tube: usize,
    pub theta: f64,
    pub force: Vec3,
    pub moment: Vec3,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assign_tendons, segment_plan, AssignmentStrategy, TendonSpec, TubeSpec};
    use crate::routing::RoutingPath;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rest_state(n: usize) -> RodState {
        RodState {
            s: 0.0,
            p: Vec3::zeros(),
            r: Mat3::identity(),
            u: Vec3::zeros(),
            v: Vec3::z(),
            reference: 0,
            inner: (1..n)
                .map(|tube| InnerTubeState {
                    tube,
                    theta: 0.0,
                    u_d3: 0.0,
                    beta: 1.0,
                })
                .collect(),
        }
    }

    fn single_tube(tendons: Vec<TendonSpec>) -> AssemblySpec {
        AssemblySpec::new(vec![TubeSpec::straight(0.2, 65e9, 24.4e9, 1.35e-3, 1.07e-3)], tendons)
    }

    fn solve_at(state: &RodState, assembly: &AssemblySpec) -> (LinearSystem, RateSolution) {
        let plan = segment_plan(assembly).unwrap();
        let assignment = assign_tendons(assembly, &plan);
        let stiffness = assembly.stiffness();
        let ctx = SegmentContext {
            assembly,
            stiffness: &stiffness,
            carriers: &assignment[0],
        };
        let sys = assemble_system(state, &ctx).unwrap();
        let sol = solve_rates(&sys).unwrap();
        (sys, sol)
    }

    #[test]
    fn aligned_inner_tube_matches_reference() {
        let mut st = rest_state(2);
        st.u = Vec3::new(1.0, -2.0, 0.5);
        st.v = Vec3::new(0.01, 0.02, 0.99);
        st.inner[0].u_d3 = 0.5;
        let d = derived_strains(&st);
        assert_eq!(d.tubes[1].u, st.u);
        assert_eq!(d.tubes[1].v, st.v);
    }

    #[test]
    fn antipodal_inner_tube_flips_bending() {
        let mut st = rest_state(2);
        st.u = Vec3::new(3.0, 0.0, 0.7);
        st.inner[0].theta = PI;
        st.inner[0].u_d3 = 0.7;
        let d = derived_strains(&st);
        assert_relative_eq!(d.tubes[1].u, Vec3::new(-3.0, 0.0, 0.7), epsilon = 1e-14);
    }

    #[test]
    fn shared_tangent_construction() {
        // Build the inner strain from the common tangent directly.
        let r1 = crate::so3::reorthonormalize(&(Mat3::identity() + hat(&Vec3::new(0.2, -0.1, 0.4)))).unwrap();
        let mut st = rest_state(2);
        st.r = r1;
        st.v = Vec3::new(0.03, -0.02, 1.01);
        st.inner[0].theta = 0.8;
        st.inner[0].beta = 1.03;
        let e1 = st.v.norm();
        let t = r1 * st.v / e1;
        let ei = st.inner[0].beta * e1;
        let ri = r1 * rot_d3(0.8);
        let expected = ri.transpose() * (t * ei);
        assert_relative_eq!(derived_strains(&st).tubes[1].v, expected, epsilon = 1e-14);
    }

    #[test]
    fn tendon_tangent_examples() {
        let a = single_tube(vec![TendonSpec {
            routing: RoutingPath::straight(Vec3::new(0.0, 6.5e-3, 0.0)),
            tension: 1.0,
            termination: 0.2,
            tube: 0,
        }]);
        let stiffness = a.stiffness();
        let carriers = [(0usize, vec![0usize])].into_iter().collect();
        let ctx = SegmentContext {
            assembly: &a,
            stiffness: &stiffness,
            carriers: &carriers,
        };
        let mut st = rest_state(1);
        let tk = tendon_kinematics(&st, &derived_strains(&st), &ctx).unwrap();
        assert_eq!(tk[0].pb_dot, Vec3::z());
        st.u = Vec3::new(10.0, 0.0, 0.0);
        let tk = tendon_kinematics(&st, &derived_strains(&st), &ctx).unwrap();
        assert_relative_eq!(tk[0].pb_dot, Vec3::new(0.0, 0.0, 1.065), epsilon = 1e-15);

        let helix = RoutingPath::helical(6.5e-3, 0.720, 31.0 * PI / 18.0);
        let mut a2 = a.clone();
        a2.tendons[0].routing = helix;
        let ctx2 = SegmentContext {
            assembly: &a2,
            ..ctx
        };
        let st = rest_state(1);
        let tk = tendon_kinematics(&st, &derived_strains(&st), &ctx2).unwrap();
        let speed = 6.5e-3 * 2.0 * PI / 0.720;
        assert_relative_eq!(tk[0].pb_dot.z, 1.0);
        assert_relative_eq!(tk[0].pb_dot.norm(), (1.0 + speed * speed).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_tendon_rejected() {
        let a = single_tube(vec![TendonSpec {
            routing: RoutingPath::straight(Vec3::zeros()),
            tension: 1.0,
            termination: 0.2,
            tube: 0,
        }]);
        let stiffness = a.stiffness();
        let carriers = [(0usize, vec![0usize])].into_iter().collect();
        let ctx = SegmentContext {
            assembly: &a,
            stiffness: &stiffness,
            carriers: &carriers,
        };
        let mut st = rest_state(1);
        st.v = Vec3::zeros();
        assert!(matches!(
            state_derivative(&st, &ctx),
            Err(StrainError::DegenerateTendon { tendon: 0, .. })
        ));
    }

    #[test]
    fn rest_system_is_block_diagonal_with_zero_rates() {
        let a = single_tube(vec![]);
        let (sys, sol) = solve_at(&rest_state(1), &a);
        let k = a.stiffness()[0];
        let mut expected = DMatrix::zeros(6, 6);
        expected.view_mut((0, 0), (3, 3)).copy_from(&k.k_bt);
        expected.view_mut((3, 3), (3, 3)).copy_from(&k.k_se);
        assert_eq!(sys.a, expected);
        assert_eq!(sys.b, DVector::zeros(6));
        assert_eq!(sol.x, DVector::zeros(6));
    }

    #[test]
    fn straight_tendon_at_rest_has_zero_rates() {
        let a = single_tube(vec![TendonSpec {
            routing: RoutingPath::straight(Vec3::new(6.5e-3, 0.0, 0.0)),
            tension: 2.0,
            termination: 0.2,
            tube: 0,
        }]);
        let (sys, sol) = solve_at(&rest_state(1), &a);
        assert_eq!(sys.b, DVector::zeros(6));
        assert!(sol.x.norm() < 1e-15);
    }

    #[test]
    fn solve_identity() {
        let sys = LinearSystem {
            a: DMatrix::identity(6, 6),
            b: DVector::from_fn(6, |i, _| if i == 0 { 1.0 } else { 0.0 }),
            tubes: 1,
        };
        let sol = solve_rates(&sys).unwrap();
        assert_eq!(sol.x, sys.b);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn rank_deficient_consistent_system_gives_min_norm() {
        // Rows 0 and 1 identical; b consistent.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let b = DVector::from_vec(vec![5.0, 5.0, 6.0]);
        let sys = LinearSystem { a: a.clone(), b: b.clone(), tubes: 0 };
        let sol = sys.solve_min_norm();
        // Pseudo-inverse oracle: min-norm solution of x + 2y = 5 is (1, 2); z = 2.
        assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 2.0, 2.0]), epsilon = 1e-12);
        assert!(sol.residual < 1e-12);
        assert!(sol.consistent);
        assert!(matches!(solve_rates(&sys), Err(StrainError::IllConditioned { .. })));
    }

    #[test]
    fn dimensions_for_one_to_four_tubes() {
        for n in 1..=4 {
            let tubes = (0..n)
                .map(|k| TubeSpec::straight(0.1 + 0.05 * k as f64, 50e9, 20e9, 2e-3 - 0.4e-3 * k as f64, 0.0))
                .collect();
            let a = AssemblySpec::new(tubes, vec![]);
            let (sys, _) = solve_at(&rest_state(n), &a);
            assert_eq!(sys.a.shape(), (4 + 2 * n, 4 + 2 * n));
            assert_eq!(sys.b.len(), 4 + 2 * n);
        }
    }

    #[test]
    fn twist_rate_definition() {
        let a = AssemblySpec::new(
            vec![
                TubeSpec::straight(0.1, 50e9, 20e9, 2e-3, 1.5e-3),
                TubeSpec::straight(0.2, 50e9, 20e9, 1e-3, 0.0),
            ],
            vec![],
        );
        let stiffness = a.stiffness();
        let carriers = TendonAssignment::new();
        let ctx = SegmentContext {
            assembly: &a,
            stiffness: &stiffness,
            carriers: &carriers,
        };
        let mut st = rest_state(2);
        st.u.z = 0.3;
        st.inner[0].u_d3 = 1.1;
        let d = state_derivative(&st, &ctx).unwrap();
        assert_relative_eq!(d.inner[0].dtheta, 0.8);
    }

    #[test]
    fn straight_rest_derivative() {
        let a = single_tube(vec![]);
        let stiffness = a.stiffness();
        let carriers = TendonAssignment::new();
        let ctx = SegmentContext {
            assembly: &a,
            stiffness: &stiffness,
            carriers: &carriers,
        };
        let mut st = rest_state(1);
        st.r = rot_d3(0.4);
        let d = state_derivative(&st, &ctx).unwrap();
        assert_relative_eq!(d.dp, Vec3::z());
        assert_eq!(d.dr, Mat3::zeros());
        assert_eq!(d.du, Vec3::zeros());
        assert_eq!(d.dv, Vec3::zeros());
    }

    #[test]
    fn straight_tendon_straight_rod_has_no_distributed_load() {
        let tk = TendonKinematics {
            tendon: 0,
            carrier: 0,
            u: Vec3::zeros(),
            v: Vec3::z(),
            r: Vec3::new(1e-3, 0.0, 0.0),
            dr: Vec3::zeros(),
            ddr: Vec3::zeros(),
            tension: 3.0,
            pb_dot: Vec3::z(),
        };
        let (f, t) = distributed_load(&tk, &Vec3::zeros(), &Vec3::zeros());
        assert_eq!(f, Vec3::zeros());
        assert_eq!(t, Vec3::zeros());
    }

    #[test]
    fn distributed_force_ignores_tangential_acceleration() {
        let pb = Vec3::new(0.1, -0.2, 1.0);
        let tk = TendonKinematics {
            tendon: 0,
            carrier: 0,
            u: Vec3::zeros(),
            v: pb,
            r: Vec3::zeros(),
            dr: Vec3::zeros(),
            ddr: pb * 0.7,
            tension: 2.0,
            pb_dot: pb,
        };
        let (f, _) = distributed_load(&tk, &Vec3::zeros(), &Vec3::zeros());
        assert!(f.norm() < 1e-15);
    }

    #[test]
    fn strategies_agree_when_terminating_tube_is_outermost() {
        let tubes = vec![
            TubeSpec::straight(0.14, 45e9, 16.91e9, 2.0e-3, 1.6e-3),
            TubeSpec::straight(0.18, 215e9, 80e9, 1.4e-3, 1.1e-3),
        ];
        let tendons = vec![TendonSpec {
            routing: RoutingPath::straight_polar(3e-3, 1.0),
            tension: 2.0,
            termination: 0.14,
            tube: 0,
        }];
        let a = AssemblySpec::new(tubes, tendons);
        let b = a.clone().with_strategy(AssignmentStrategy::TerminatingTube);
        let mut st = rest_state(2);
        st.u = Vec3::new(2.0, -1.0, 0.3);
        st.v = Vec3::new(0.001, 0.002, 0.999);
        st.inner[0] = InnerTubeState {
            tube: 1,
            theta: 0.4,
            u_d3: -0.2,
            beta: 1.001,
        };
        let (sa, _) = solve_at(&st, &a);
        let (sb, _) = solve_at(&st, &b);
        assert_eq!(sa, sb);
    }
}
