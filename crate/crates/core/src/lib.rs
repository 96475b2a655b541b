//! Self-contained 2D racing simulator.
//!
//! - [`geometry`]: closed-circuit tracks and the geometric queries behind
//!   observations and course progress.
//! - [`dynamics`]: kinematic bicycle with grip saturation and wall contact.
//! - [`render`]: driver's-view ground-plane rasterizer.
//! - [`obs`]: observation vectors and target standardization.
//! - [`baseline`]: pure-pursuit driver used as the built-in AI analog.

// `!(x > 0.0)` is the NaN-rejecting form of the validation checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod dynamics;
pub mod geometry;
pub mod obs;
pub mod render;
pub mod vec2;

pub use baseline::{NoiseConfig, PursuitParams};
pub use dynamics::{Action, DedicatedFeatures, VehicleParams, VehicleState};
pub use geometry::{GeometryError, LookaheadWindow, Pose, Track, TrackSpec};
pub use obs::{EnvObservation, PolicyObservation, Standardizer};
pub use render::{CameraSpec, Frame};
pub use vec2::Vec2;
