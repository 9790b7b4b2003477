//! Unit suffixes accepted in scenario keys, e.g. `length_mm` or `tension_N`.

use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Modulus,
    /// Forces and axial/shear stiffness.
    Force,
    Moment,
    Angle,
    Curvature,
    /// Curvature per unit length.
    CurvatureRate,
    BendingStiffness,
    Dimensionless,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Length => "length",
            Dimension::Modulus => "modulus",
            Dimension::Force => "force",
            Dimension::Moment => "moment",
            Dimension::Angle => "angle",
            Dimension::Curvature => "curvature",
            Dimension::CurvatureRate => "curvature rate",
            Dimension::BendingStiffness => "bending stiffness",
            Dimension::Dimensionless => "dimensionless",
        };
        f.write_str(name)
    }
}

/// `(suffix, dimension, factor to SI)`
const SUFFIXES: &[(&str, Dimension, f64)] = &[
    ("m", Dimension::Length, 1.0),
    ("cm", Dimension::Length, 1e-2),
    ("mm", Dimension::Length, 1e-3),
    ("um", Dimension::Length, 1e-6),
    ("Pa", Dimension::Modulus, 1.0),
    ("MPa", Dimension::Modulus, 1e6),
    ("GPa", Dimension::Modulus, 1e9),
    ("N", Dimension::Force, 1.0),
    ("mN", Dimension::Force, 1e-3),
    ("Nm", Dimension::Moment, 1.0),
    ("Nmm", Dimension::Moment, 1e-3),
    ("rad", Dimension::Angle, 1.0),
    ("deg", Dimension::Angle, PI / 180.0),
    ("per_m", Dimension::Curvature, 1.0),
    ("per_mm", Dimension::Curvature, 1e3),
    ("per_m2", Dimension::CurvatureRate, 1.0),
    ("Nm2", Dimension::BendingStiffness, 1.0),
    ("Nmm2", Dimension::BendingStiffness, 1e-6),
];

/// Canonical SI suffix written by the serializer.
pub fn si_suffix(dim: Dimension) -> Option<&'static str> {
    match dim {
        Dimension::Length => Some("m"),
        Dimension::Modulus => Some("Pa"),
        Dimension::Force => Some("N"),
        Dimension::Moment => Some("Nm"),
        Dimension::Angle => Some("rad"),
        Dimension::Curvature => Some("per_m"),
        Dimension::CurvatureRate => Some("per_m2"),
        Dimension::BendingStiffness => Some("Nm2"),
        Dimension::Dimensionless => None,
    }
}

/// Key for `base` in canonical SI units.
pub fn si_key(base: &str, dim: Dimension) -> String {
    match si_suffix(dim) {
        Some(s) => format!("{base}_{s}"),
        None => base.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub suffix: &'static str,
    pub dimension: Dimension,
    pub factor: f64,
}

/// Splits `key` into its base name and the longest matching unit suffix.
pub fn split_key(key: &str) -> (&str, Option<Unit>) {
    let mut best: Option<(usize, Unit)> = None;
    for &(suffix, dimension, factor) in SUFFIXES {
        let tail = suffix.len() + 1;
        if key.len() > tail
            && key.ends_with(suffix)
            && key.as_bytes()[key.len() - tail] == b'_'
            && best.is_none_or(|(len, _)| tail > len)
        {
            best = Some((
                tail,
                Unit {
                    suffix,
                    dimension,
                    factor,
                },
            ));
        }
    }
    match best {
        Some((tail, unit)) => (&key[..key.len() - tail], Some(unit)),
        None => (key, None),
    }
}
