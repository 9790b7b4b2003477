//! Tendon routing paths expressed in the cross-sectional frame of the tube
//! that carries the tendon.
//!
//! Every family returns `r(s) = [x, y, 0]` together with its first two
//! arc-length derivatives, which the distributed-load model needs.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::so3::Vec3;
use crate::ModelError;

/// Position of a tendon in the body frame and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingSample {
    pub r: Vec3,
    pub dr: Vec3,
    pub ddr: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RoutingPath {
    /// Constant offset from the centerline; the third component must be zero.
    Straight { offset: [f64; 3] },
    /// `radius * [cos(2πs/pitch + phase), sin(2πs/pitch + phase), 0]`.
    Helical {
        radius: f64,
        /// Arc length per full turn (m).
        pitch: f64,
        phase: f64,
    },
    /// Polar routing `radius(s) * [cos angle(s), sin angle(s), 0]` with both
    /// coordinates interpolated by natural cubic splines through the knots.
    PiecewiseAngular(AngularSpline),
}

impl RoutingPath {
    pub fn straight(offset: Vec3) -> Self {
        RoutingPath::Straight {
            offset: [offset.x, offset.y, offset.z],
        }
    }

    /// Straight tendon at `radius` from the centerline, `angle` measured from
    /// `d1` toward `d2`.
    pub fn straight_polar(radius: f64, angle: f64) -> Self {
        RoutingPath::straight(Vec3::new(radius * angle.cos(), radius * angle.sin(), 0.0))
    }

    pub fn helical(radius: f64, pitch: f64, phase: f64) -> Self {
        RoutingPath::Helical {
            radius,
            pitch,
            phase,
        }
    }

    pub fn piecewise_angular(knots: &[(f64, f64, f64)]) -> Result<Self, ModelError> {
        AngularSpline::new(knots).map(RoutingPath::PiecewiseAngular)
    }

    /// Arc-length interval on which the path is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            RoutingPath::Straight { .. } | RoutingPath::Helical { .. } => (0.0, f64::INFINITY),
            RoutingPath::PiecewiseAngular(spline) => spline.domain(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            RoutingPath::Straight { offset } => {
                if offset.iter().any(|x| !x.is_finite()) || offset[2] != 0.0 {
                    return Err(ModelError::InvalidRouting(
                        "straight offset must be finite with zero d3 component".into(),
                    ));
                }
            }
            RoutingPath::Helical {
                radius,
                pitch,
                phase,
            } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(ModelError::InvalidRouting("helix radius must be ≥ 0".into()));
                }
                if !(pitch.is_finite() && *pitch != 0.0) {
                    return Err(ModelError::InvalidRouting("helix pitch must be nonzero".into()));
                }
                if !phase.is_finite() {
                    return Err(ModelError::InvalidRouting("helix phase must be finite".into()));
                }
            }
            RoutingPath::PiecewiseAngular(spline) => spline.validate()?,
        }
        Ok(())
    }
}

/// Evaluates a routing path and its derivatives at arc length `s`.
pub fn routing_eval(path: &RoutingPath, s: f64) -> Result<RoutingSample, ModelError> {
    let (lo, hi) = path.domain();
    // Paths are sampled at segment ends, so allow round-off past the domain.
    let slack = 1e-9;
    if !s.is_finite() || s < lo - slack || s > hi + slack {
        return Err(ModelError::OutOfDomain { s, lo, hi });
    }
    let s = s.clamp(lo, hi);
    Ok(match path {
        RoutingPath::Straight { offset } => RoutingSample {
            r: Vec3::new(offset[0], offset[1], 0.0),
            dr: Vec3::zeros(),
            ddr: Vec3::zeros(),
        },
        RoutingPath::Helical {
            radius,
            pitch,
            phase,
        } => {
            let w = TAU / pitch;
            let (sn, cs) = (w * s + phase).sin_cos();
            RoutingSample {
                r: Vec3::new(radius * cs, radius * sn, 0.0),
                dr: Vec3::new(-radius * w * sn, radius * w * cs, 0.0),
                ddr: Vec3::new(-radius * w * w * cs, -radius * w * w * sn, 0.0),
            }
        }
        RoutingPath::PiecewiseAngular(spline) => {
            let (a, da, dda) = spline.angle.eval(s);
            let (rho, drho, ddrho) = spline.radius.eval(s);
            let (sn, cs) = a.sin_cos();
            let u = Vec3::new(cs, sn, 0.0);
            let n = Vec3::new(-sn, cs, 0.0);
            // d/ds of rho*u = rho' u + rho a' n; second derivative by product rule.
            RoutingSample {
                r: u * rho,
                dr: u * drho + n * (rho * da),
                ddr: u * (ddrho - rho * da * da) + n * (2.0 * drho * da + rho * dda),
            }
        }
    })
}

/// Knot table for [`RoutingPath::PiecewiseAngular`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AngularKnots", into = "AngularKnots")]
pub struct AngularSpline {
    knots: Vec<(f64, f64, f64)>,
    angle: CubicSpline,
    radius: CubicSpline,
}

#[derive(Serialize, Deserialize)]
struct AngularKnots {
    /// `(arc length m, angle rad, radius m)`
    knots: Vec<(f64, f64, f64)>,
}

impl TryFrom<AngularKnots> for AngularSpline {
    type Error = ModelError;
    fn try_from(k: AngularKnots) -> Result<Self, Self::Error> {
        AngularSpline::new(&k.knots)
    }
}

impl From<AngularSpline> for AngularKnots {
    fn from(s: AngularSpline) -> Self {
        AngularKnots { knots: s.knots }
    }
}

impl AngularSpline {
    pub fn new(knots: &[(f64, f64, f64)]) -> Result<Self, ModelError> {
        if knots.len() < 2 {
            return Err(ModelError::InvalidRouting(
                "piecewise-angular routing needs at least two knots".into(),
            ));
        }
        if knots
            .iter()
            .any(|k| !(k.0.is_finite() && k.1.is_finite() && k.2.is_finite()))
        {
            return Err(ModelError::InvalidRouting("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::InvalidRouting(
                "knot arc lengths must be strictly increasing".into(),
            ));
        }
        if knots.iter().any(|k| k.2 < 0.0) {
            return Err(ModelError::InvalidRouting("knot radius must be ≥ 0".into()));
        }
        let s: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let angle = CubicSpline::natural(&s, &knots.iter().map(|k| k.1).collect::<Vec<_>>());
        let radius = CubicSpline::natural(&s, &knots.iter().map(|k| k.2).collect::<Vec<_>>());
        Ok(AngularSpline {
            knots: knots.to_vec(),
            angle,
            radius,
        })
    }

    pub fn knots(&self) -> &[(f64, f64, f64)] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    fn validate(&self) -> Result<(), ModelError> {
        AngularSpline::new(&self.knots).map(|_| ())
    }
}

/// Natural cubic spline (zero end curvature), C² on its domain.
#[derive(Debug, Clone, PartialEq)]
struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    fn natural(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative equations.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        CubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    /// Value, first and second derivative.
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        let i = match self.x.partition_point(|&xi| xi <= s) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        self.eval_piece(i, s)
    }

    fn eval_piece(&self, i: usize, s: f64) -> (f64, f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - s) / h;
        let b = (s - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0
            + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let curvature = a * m0 + b * m1;
        (value, slope, curvature)
    }
}
