//! Independent reference models for checking the main solver.
//!
//! Nothing here calls into [`crate::strain`] or [`crate::shooting`]; each
//! oracle restates its own physics so a disagreement points at one side.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid oracle input: {0}")]
    Invalid(String),
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Second moment of area and area of an annulus (solid when `id` is zero).
pub fn annulus(od: f64, id: f64) -> (f64, f64) {
    let i = std::f64::consts::PI / 64.0 * (od.powi(4) - id.powi(4));
    let a = std::f64::consts::PI / 4.0 * (od * od - id * id);
    (i, a)
}

/// A single Cosserat rod with straight-routed tendons and constant rest
/// strains: the classic one-tube tendon model.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTubeTendonModel {
    pub length: f64,
    /// `diag(GA, GA, EA)`
    pub k_se: Matrix3<f64>,
    /// `diag(EI, EI, GJ)`
    pub k_bt: Matrix3<f64>,
    pub u_star: Vector3<f64>,
    pub v_star: Vector3<f64>,
    /// `(offset in the body frame, tension)`
    pub tendons: Vec<(Vector3<f64>, f64)>,
}

/// Rod state along the single-tube model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodPoint {
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleTubeSolution {
    pub u0: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub points: Vec<RodPoint>,
}

impl SingleTubeSolution {
    pub fn tip(&self) -> Vector3<f64> {
        self.points.last().unwrap().p
    }
}

impl SingleTubeTendonModel {
    /// Annular tube with diagonal stiffness from its section constants.
    pub fn annular(length: f64, e: f64, g: f64, od: f64, id: f64) -> Self {
        let (i, a) = annulus(od, id);
        SingleTubeTendonModel {
            length,
            k_se: Matrix3::from_diagonal(&Vector3::new(g * a, g * a, e * a)),
            k_bt: Matrix3::from_diagonal(&Vector3::new(e * i, e * i, 2.0 * g * i)),
            u_star: Vector3::zeros(),
            v_star: Vector3::z(),
            tendons: Vec::new(),
        }
    }

    /// Linear system for `[u', v']` with moment rows first:
    /// `[[K_bt + H, B], [G, K_se + A]] x = [c; d]`.
    pub fn system(&self, u: &Vector3<f64>, v: &Vector3<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut a_sum = Matrix3::zeros();
        let mut b_sum = Matrix3::zeros();
        let mut g_sum = Matrix3::zeros();
        let mut h_sum = Matrix3::zeros();
        let mut a_vec = Vector3::zeros();
        let mut b_vec = Vector3::zeros();
        for (r, tension) in &self.tendons {
            let pb = u.cross(r) + v;
            let sp = skew(&pb);
            let ai = -*tension / pb.norm().powi(3) * sp * sp;
            let rs = skew(r);
            let bi = rs * ai;
            a_sum += ai;
            b_sum += bi;
            g_sum -= ai * rs;
            h_sum -= bi * rs;
            let ak = ai * u.cross(&pb);
            a_vec += ak;
            b_vec += r.cross(&ak);
        }
        let c = -u.cross(&(self.k_bt * (u - self.u_star))) - v.cross(&(self.k_se * (v - self.v_star))) - b_vec;
        let d = -u.cross(&(self.k_se * (v - self.v_star))) - a_vec;
        let mut m = DMatrix::zeros(6, 6);
        m.view_mut((0, 0), (3, 3)).copy_from(&(self.k_bt + h_sum));
        m.view_mut((0, 3), (3, 3)).copy_from(&b_sum);
        m.view_mut((3, 0), (3, 3)).copy_from(&g_sum);
        m.view_mut((3, 3), (3, 3)).copy_from(&(self.k_se + a_sum));
        let mut rhs = DVector::zeros(6);
        rhs.rows_mut(0, 3).copy_from(&c);
        rhs.rows_mut(3, 3).copy_from(&d);
        (m, rhs)
    }

    fn derivative(&self, y: &RodPoint) -> Result<RodPoint, OracleError> {
        let (m, rhs) = self.system(&y.u, &y.v);
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| OracleError::NoConvergence("singular strain system".into()))?;
        Ok(RodPoint {
            p: y.r * y.v,
            r: y.r * skew(&y.u),
            u: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        })
    }

    /// Fixed-step RK4 from the clamped base.
    pub fn integrate(&self, u0: &Vector3<f64>, v0: &Vector3<f64>, steps: usize) -> Result<Vec<RodPoint>, OracleError> {
        let h = self.length / steps as f64;
        let mut y = RodPoint {
            p: Vector3::zeros(),
            r: Matrix3::identity(),
            u: *u0,
            v: *v0,
        };
        let add = |y: &RodPoint, k: &RodPoint, c: f64| RodPoint {
            p: y.p + k.p * c,
            r: y.r + k.r * c,
            u: y.u + k.u * c,
            v: y.v + k.v * c,
        };
        let mut out = vec![y];
        for _ in 0..steps {
            let k1 = self.derivative(&y)?;
            let k2 = self.derivative(&add(&y, &k1, h / 2.0))?;
            let k3 = self.derivative(&add(&y, &k2, h / 2.0))?;
            let k4 = self.derivative(&add(&y, &k3, h))?;
            let mut next = RodPoint {
                p: y.p + (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * (h / 6.0),
                r: y.r + (k1.r + k2.r * 2.0 + k3.r * 2.0 + k4.r) * (h / 6.0),
                u: y.u + (k1.u + k2.u * 2.0 + k3.u * 2.0 + k4.u) * (h / 6.0),
                v: y.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (h / 6.0),
            };
            let svd = next.r.svd(true, true);
            next.r = svd.u.unwrap() * svd.v_t.unwrap();
            out.push(next);
            y = next;
        }
        Ok(out)
    }

    /// Tip wrench mismatch in the body frame, forces then moments.
    fn tip_residual(&self, tip: &RodPoint) -> DVector<f64> {
        let mut n = self.k_se * (tip.v - self.v_star);
        let mut m = self.k_bt * (tip.u - self.u_star);
        for (r, tension) in &self.tendons {
            let pb = tip.u.cross(r) + tip.v;
            let f = -pb.normalize() * *tension;
            n -= f;
            m -= r.cross(&f);
        }
        DVector::from_iterator(6, n.iter().chain(m.iter()).copied())
    }

    /// Newton shooting on `(u(0), v(0))` with tensions ramped in increments
    /// of at most 0.25 N.
    pub fn solve(&self, steps: usize) -> Result<SingleTubeSolution, OracleError> {
        let max_tension = self.tendons.iter().map(|t| t.1).fold(0.0, f64::max);
        let ramps = ((max_tension / 0.25).ceil() as usize).max(1);
        let mut x = DVector::from_iterator(6, self.u_star.iter().chain(self.v_star.iter()).copied());
        let mut previous = x.clone();
        let force_scale = self.k_se[(2, 2)];
        let moment_scale = self.k_bt[(0, 0)] / self.length;
        for k in 1..=ramps {
            let mut model = self.clone();
            for t in &mut model.tendons {
                t.1 *= k as f64 / ramps as f64;
            }
            let f = |x: &DVector<f64>| -> Result<DVector<f64>, OracleError> {
                let u = Vector3::new(x[0], x[1], x[2]);
                let v = Vector3::new(x[3], x[4], x[5]);
                let pts = model.integrate(&u, &v, steps)?;
                let mut r = model.tip_residual(pts.last().unwrap());
                for i in 0..3 {
                    r[i] /= force_scale;
                    r[i + 3] /= moment_scale;
                }
                Ok(r)
            };
            let mut r = f(&x)?;
            // Extrapolate through the previous two ramps; the base shear
            // is too stiff for Newton to cover a whole ramp from rest.
            let last = x.clone();
            let predicted = &x * 2.0 - &previous;
            if let Ok(rp) = f(&predicted) {
                if rp.norm() < r.norm() {
                    x = predicted;
                    r = rp;
                }
            }
            let mut converged = false;
            for _ in 0..60 {
                if r.amax() < 1e-14 {
                    converged = true;
                    break;
                }
                let mut jac = DMatrix::zeros(6, 6);
                for c in 0..6 {
                    let h = if c < 3 { 1e-6 } else { 1e-8 };
                    let mut xp = x.clone();
                    xp[c] += h;
                    let mut xm = x.clone();
                    xm[c] -= h;
                    jac.set_column(c, &((f(&xp)? - f(&xm)?) / (2.0 * h)));
                }
                let dx = jac
                    .lu()
                    .solve(&(-&r))
                    .ok_or_else(|| OracleError::NoConvergence("singular shooting Jacobian".into()))?;
                let mut alpha = 1.0;
                loop {
                    let trial = &x + &dx * alpha;
                    if let Ok(rt) = f(&trial) {
                        if rt.norm() < r.norm() {
                            x = trial;
                            r = rt;
                            break;
                        }
                    }
                    alpha *= 0.5;
                    if alpha < 1e-4 {
                        // Round-off floor: accept the current point if it is
                        // already tight.
                        converged = r.amax() < 1e-11;
                        break;
                    }
                }
                if alpha < 1e-4 {
                    break;
                }
            }
            if !converged {
                return Err(OracleError::NoConvergence(format!(
                    "single-tube shooting stalled at ramp {k}/{ramps} (scaled residual {:.3e})",
                    r.amax()
                )));
            }
            previous = last;
        }
        let u0 = Vector3::new(x[0], x[1], x[2]);
        let v0 = Vector3::new(x[3], x[4], x[5]);
        Ok(SingleTubeSolution {
            u0,
            v0,
            points: self.integrate(&u0, &v0, steps)?,
        })
    }
}

/// One elastic layer of a planar rod (e.g. one tube of a concentric pair).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarLayer {
    /// N·m²
    pub bending: f64,
    /// N
    pub axial: f64,
    /// 1/m, positive toward +y
    pub rest_curvature: f64,
}

/// A clamped rod in the y–z plane discretized into straight segments, with
/// one tendon at a constant in-plane offset terminated at the tip.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarDiscreteRod {
    pub rest_lengths: Vec<f64>,
    pub layers: Vec<PlanarLayer>,
    /// Offset toward +y (m).
    pub tendon_offset: f64,
    pub tension: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarEquilibrium {
    /// `(z, y)` node positions from the base (origin) to the tip.
    pub nodes: Vec<Vector2<f64>>,
    /// Net force on every free node (N); zero at equilibrium.
    pub node_forces: Vec<Vector2<f64>>,
    pub iterations: usize,
}

impl PlanarEquilibrium {
    pub fn tip(&self) -> Vector2<f64> {
        *self.nodes.last().unwrap()
    }

    pub fn max_node_force(&self) -> f64 {
        self.node_forces.iter().map(|f| f.amax()).fold(0.0, f64::max)
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn perp(a: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-a.y, a.x)
}

impl PlanarDiscreteRod {
    pub fn uniform(length: f64, segments: usize, layers: Vec<PlanarLayer>, tendon_offset: f64, tension: f64) -> Self {
        PlanarDiscreteRod {
            rest_lengths: vec![length / segments as f64; segments],
            layers,
            tendon_offset,
            tension,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.rest_lengths.len() < 2 {
            return Err(OracleError::Invalid("at least 3 nodes are required".into()));
        }
        if self.rest_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(OracleError::Invalid("rest lengths must be positive".into()));
        }
        if self.layers.is_empty() || self.layers.iter().any(|l| !(l.bending > 0.0 && l.axial > 0.0)) {
            return Err(OracleError::Invalid("stiffness must be positive".into()));
        }
        Ok(())
    }

    /// Bend angle at each node: node 0 turns from the clamped tangent `+z`
    /// into the first segment.
    fn bend_angles(&self, edges: &[Vector2<f64>]) -> Vec<f64> {
        let base = Vector2::new(1.0, 0.0);
        (0..edges.len())
            .map(|j| {
                let prev = if j == 0 { base } else { edges[j - 1] };
                cross2(&prev, &edges[j]).atan2(prev.dot(&edges[j]))
            })
            .collect()
    }

    /// Length over which the bend at node `j` is distributed.
    fn voronoi(&self, j: usize) -> f64 {
        let l = &self.rest_lengths;
        if j == 0 {
            0.5 * l[0]
        } else {
            0.5 * (l[j - 1] + l[j])
        }
    }

    /// Elastic energy plus the tendon potential `λ · tendon length`. The
    /// tendon runs parallel to the centerline at the offset, so its length is
    /// the centerline length minus `offset · total bend`.
    pub fn energy(&self, edges: &[Vector2<f64>]) -> f64 {
        let phi = self.bend_angles(edges);
        let mut e = 0.0;
        for (i, edge) in edges.iter().enumerate() {
            let l0 = self.rest_lengths[i];
            let stretch = edge.norm() - l0;
            let ell = self.voronoi(i);
            for layer in &self.layers {
                e += 0.5 * layer.axial / l0 * stretch * stretch;
                let d = phi[i] - layer.rest_curvature * ell;
                e += 0.5 * layer.bending / ell * d * d;
            }
            e += self.tension * (edge.norm() - self.tendon_offset * phi[i]);
        }
        e
    }

    /// Gradient of [`Self::energy`] with respect to each edge vector.
    pub fn gradient(&self, edges: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let phi = self.bend_angles(edges);
        let mut g = vec![Vector2::zeros(); edges.len()];
        for (i, edge) in edges.iter().enumerate() {
            let l0 = self.rest_lengths[i];
            let len = edge.norm();
            let ell = self.voronoi(i);
            let unit = edge / len;
            let mut de_dphi = -self.tension * self.tendon_offset;
            for layer in &self.layers {
                g[i] += unit * (layer.axial / l0 * (len - l0));
                de_dphi += layer.bending / ell * (phi[i] - layer.rest_curvature * ell);
            }
            g[i] += unit * self.tension;
            // dφ_i/de_i and dφ_i/de_{i-1}
            g[i] += perp(edge) / (len * len) * de_dphi;
            if i > 0 {
                let prev = edges[i - 1];
                g[i - 1] -= perp(&prev) / prev.norm_squared() * de_dphi;
            }
        }
        g
    }

    fn node_forces(&self, grad: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        // Node k+1 ends edge k and starts edge k+1: x_{k+1} enters e_k with +
        // and e_{k+1} with −.
        (0..grad.len())
            .map(|k| {
                let next = grad.get(k + 1).copied().unwrap_or_else(Vector2::zeros);
                -(grad[k] - next)
            })
            .collect()
    }

    /// Newton descent on the edge vectors until every node force is below
    /// `1e-10` N. Tension and rest curvature are applied in stages that each
    /// turn the tip by at most about a radian.
    pub fn minimize(&self) -> Result<PlanarEquilibrium, OracleError> {
        self.validate()?;
        let bending: f64 = self.layers.iter().map(|l| l.bending).sum();
        let rest_moment: f64 = self.layers.iter().map(|l| l.bending * l.rest_curvature).sum();
        let length: f64 = self.rest_lengths.iter().sum();
        let turn = ((self.tension * self.tendon_offset).abs() + rest_moment.abs()) * length / bending;
        let stages = turn.ceil().max(1.0) as usize;

        let mut edges: Vec<Vector2<f64>> = self.rest_lengths.iter().map(|&l| Vector2::new(l, 0.0)).collect();
        let mut iterations = 0;
        for k in 1..=stages {
            let f = k as f64 / stages as f64;
            let stage = PlanarDiscreteRod {
                tension: self.tension * f,
                layers: self
                    .layers
                    .iter()
                    .map(|l| PlanarLayer {
                        rest_curvature: l.rest_curvature * f,
                        ..*l
                    })
                    .collect(),
                ..self.clone()
            };
            let (next, used) = stage.descend(&edges)?;
            edges = next;
            iterations += used;
        }

        let forces = self.node_forces(&self.gradient(&edges));
        let mut nodes = vec![Vector2::zeros()];
        for e in &edges {
            let last = *nodes.last().unwrap();
            nodes.push(last + e);
        }
        Ok(PlanarEquilibrium {
            nodes,
            node_forces: forces,
            iterations,
        })
    }

    fn descend(&self, start: &[Vector2<f64>]) -> Result<(Vec<Vector2<f64>>, usize), OracleError> {
        let n = self.rest_lengths.len();
        let pack = |e: &[Vector2<f64>]| DVector::from_iterator(2 * n, e.iter().flat_map(|v| [v.x, v.y]));
        let unpack = |x: &DVector<f64>| (0..n).map(|i| Vector2::new(x[2 * i], x[2 * i + 1])).collect::<Vec<_>>();
        let grad = |x: &DVector<f64>| pack(&self.gradient(&unpack(x)));
        let energy = |x: &DVector<f64>| self.energy(&unpack(x));
        let mut x = pack(start);
        let mut g = grad(&x);
        let tol = 1e-10;
        let mut iterations = 0;
        while iterations < 200 {
            let forces = self.node_forces(&self.gradient(&unpack(&x)));
            if forces.iter().all(|f| f.amax() < tol) {
                break;
            }
            iterations += 1;
            let mut hess = DMatrix::zeros(2 * n, 2 * n);
            let h = 1e-7 * self.rest_lengths[0];
            for c in 0..2 * n {
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                hess.set_column(c, &((grad(&xp) - grad(&xm)) / (2.0 * h)));
            }
            hess = (&hess + hess.transpose()) * 0.5;
            let mut mu = 0.0;
            let dx = loop {
                let mut shifted = hess.clone();
                for i in 0..2 * n {
                    shifted[(i, i)] += mu;
                }
                match shifted.cholesky() {
                    Some(ch) => break ch.solve(&(-&g)),
                    None => mu = if mu == 0.0 { 1e-6 * hess.diagonal().amax() } else { mu * 10.0 },
                }
            };
            let e0 = energy(&x);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-8 {
                let trial = &x + &dx * alpha;
                let gt = grad(&trial);
                // Near the minimum the energy difference is lost to round-off;
                // a smaller gradient is then the better measure.
                if energy(&trial) < e0 || gt.norm() < g.norm() {
                    x = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(OracleError::NoConvergence(format!(
                    "planar energy descent stalled (gradient {:.3e} N)",
                    g.amax()
                )));
            }
        }
        let edges = unpack(&x);
        let forces = self.node_forces(&self.gradient(&edges));
        let max_force = forces.iter().map(|f| f.amax()).fold(0.0, f64::max);
        if max_force >= tol {
            return Err(OracleError::NoConvergence(format!(
                "planar energy descent hit the iteration cap (node force {max_force:.3e} N)"
            )));
        }
        Ok((edges, iterations))
    }
}

/// Bending curvature of two fully overlapping, torsionally relaxed tubes
/// with constant pre-curvatures, expressed in the frame of tube 1. Tube 2 is
/// rotated by `theta` about the common axis.
pub fn ctr_overlap_curvature(
    k_bt_1: &Matrix3<f64>,
    k_bt_2: &Matrix3<f64>,
    u1_star: &Vector3<f64>,
    u2_star: &Vector3<f64>,
    theta: f64,
) -> Vector3<f64> {
    let rot = Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos());
    let k1 = k_bt_1.fixed_view::<2, 2>(0, 0).into_owned();
    let k2 = rot * k_bt_2.fixed_view::<2, 2>(0, 0) * rot.transpose();
    let rhs = k1 * u1_star.xy() + k2 * (rot * u2_star.xy());
    let u = (k1 + k2).lu().solve(&rhs).expect("bending stiffness is positive definite");
    Vector3::new(u.x, u.y, 0.0)
}

/// Worst entry-wise deviation between `jacobian(x0)` and a central
/// difference of `f` with step `h`, relative to the largest Jacobian entry.
pub fn fd_jacobian_check<F, J>(f: F, jacobian: J, x0: &DVector<f64>, h: f64) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let analytic = jacobian(x0);
    let mut worst: f64 = 0.0;
    for c in 0..x0.len() {
        let mut xp = x0.clone();
        xp[c] += h;
        let mut xm = x0.clone();
        xm[c] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        worst = worst.max((col - analytic.column(c)).amax());
    }
    worst / analytic.amax().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn layer(bending: f64) -> PlanarLayer {
        PlanarLayer {
            bending,
            axial: 1e4,
            rest_curvature: 0.0,
        }
    }

    #[test]
    fn zero_tension_is_rest() {
        let rod = PlanarDiscreteRod::uniform(0.2, 50, vec![layer(1e-3)], 2e-3, 0.0);
        let eq = rod.minimize().unwrap();
        assert_relative_eq!(eq.tip(), Vector2::new(0.2, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn small_load_matches_beam_theory() {
        let (ei, r, lambda, l) = (2e-3, 2e-3, 0.05, 0.2);
        let rod = PlanarDiscreteRod::uniform(l, 200, vec![layer(ei)], r, lambda);
        let eq = rod.minimize().unwrap();
        let beam = lambda * r * l * l / (2.0 * ei);
        assert_relative_eq!(eq.tip().y, beam, max_relative = 0.05);
        assert!(eq.max_node_force() < 1e-10);
    }

    #[test]
    fn soft_rod_curls_past_half_a_turn() {
        let (ei, r, lambda, l) = (1e-4, 1e-3, 1.3929601811649464, 0.28248751053281);
        let eq = PlanarDiscreteRod::uniform(l, 10, vec![layer(ei)], r, lambda).minimize().unwrap();
        assert!(eq.max_node_force() < 1e-10);
        let edges: Vec<_> = eq.nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let turn: f64 = edges.windows(2).map(|e| cross2(&e[0], &e[1]).atan2(e[0].dot(&e[1]))).sum();
        // Pure bending: the turn between the first and last edge spans L·(1 − 1/segments).
        let expected = lambda * r / ei * l * 0.9;
        assert_relative_eq!(turn, expected, max_relative = 0.02);
    }

    #[test]
    fn equal_layers_add() {
        let two = PlanarDiscreteRod::uniform(0.15, 60, vec![layer(1e-3), layer(1e-3)], 3e-3, 1.0);
        let one = PlanarDiscreteRod::uniform(
            0.15,
            60,
            vec![PlanarLayer {
                bending: 2e-3,
                axial: 2e4,
                rest_curvature: 0.0,
            }],
            3e-3,
            1.0,
        );
        assert_relative_eq!(two.minimize().unwrap().tip(), one.minimize().unwrap().tip(), epsilon = 1e-13);
    }

    #[test]
    fn planar_gradient_matches_differences() {
        let rod = PlanarDiscreteRod::uniform(
            0.1,
            6,
            vec![PlanarLayer {
                bending: 1e-3,
                axial: 50.0,
                rest_curvature: 3.0,
            }],
            2e-3,
            0.7,
        );
        let edges: Vec<_> = (0..6)
            .map(|i| Vector2::new(0.016 + 1e-4 * i as f64, 0.002 * (i as f64).sin()))
            .collect();
        let x0 = DVector::from_iterator(12, edges.iter().flat_map(|v| [v.x, v.y]));
        let unpack = |x: &DVector<f64>| (0..6).map(|i| Vector2::new(x[2 * i], x[2 * i + 1])).collect::<Vec<_>>();
        let dev = fd_jacobian_check(
            |x| DVector::from_element(1, rod.energy(&unpack(x))),
            |x| {
                let g = rod.gradient(&unpack(x));
                DMatrix::from_iterator(1, 12, g.iter().flat_map(|v| [v.x, v.y]))
            },
            &x0,
            1e-7,
        );
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn overlap_curvature_cases() {
        let k = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.8));
        let kappa = 1.0 / 0.219;
        let u = Vector3::new(kappa, 0.0, 0.0);
        assert_relative_eq!(ctr_overlap_curvature(&k, &k, &u, &u, 0.0), u, epsilon = 1e-12);
        assert!(ctr_overlap_curvature(&k, &k, &u, &u, PI).norm() < 1e-12);
        let half = ctr_overlap_curvature(&k, &k, &u, &u, PI / 2.0);
        assert_relative_eq!(half.norm(), kappa / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(half.norm(), 3.229, epsilon = 5e-4);
    }

    #[test]
    fn linear_map_has_no_deviation() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let dev = fd_jacobian_check(|x| &a * x, |_| a.clone(), &DVector::from_vec(vec![0.3, -1.0, 2.0]), 1e-3);
        assert!(dev < 1e-12);
    }

    #[test]
    fn single_tube_offset_tendon_bends_into_an_arc() {
        let mut m = SingleTubeTendonModel::annular(0.2, 60e9, 23e9, 1.2e-3, 0.9e-3);
        m.tendons.push((Vector3::new(0.0, 2e-3, 0.0), 0.5));
        let sol = m.solve(100).unwrap();
        let kappa = 0.5 * 2e-3 / m.k_bt[(0, 0)];
        // The tendon moment is constant, so the curvature is too.
        for pt in &sol.points {
            assert_relative_eq!(pt.u.norm(), kappa, max_relative = 1e-9);
        }
    }
}
