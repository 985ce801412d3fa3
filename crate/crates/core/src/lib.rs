//! Design and analysis of multi-arm multi-stage platform trials in which
//! treatment arms join an ongoing trial and are compared with concurrent
//! controls only.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm;
pub mod comparators;
pub mod design;
pub mod deviation;
pub mod error;
pub mod fwer;
pub mod mvn;
pub mod normal;
pub mod power;
pub mod quadrature;
pub mod roots;
pub mod sim;
pub mod size;

pub use design::{
    control_schedule, duration, shape_bounds, Boundaries, CalibratedDesign, DesignSpec, EffectConfig, Schedule,
    Shape,
};
pub use error::{Error, Result};
