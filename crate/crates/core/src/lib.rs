//! Forward statics of tendon-actuated concentric tube robots.
//!
//! The robot is modelled as a set of nested Cosserat rods that share a
//! centerline. Tendons routed along the tubes apply distributed loads along
//! their path and point loads where they terminate. [`shooting`] solves the
//! resulting boundary value problem, integrating the strain ODEs of
//! [`strain`] segment by segment.

pub mod assembly;
pub mod oracles;
pub mod routing;
pub mod scenario;
pub mod shooting;
pub mod so3;
pub mod strain;
pub mod validation;

pub use assembly::ModelError;
