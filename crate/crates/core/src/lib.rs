//! Object-augmented 2D maps.
//!
//! Detections of static objects (doors, fire extinguishers, benches, ...)
//! are lifted into 3D from a depth patch, reduced to a planar pose by shape
//! fitting, and fused into persistent map instances by Hungarian
//! association with a Mahalanobis gate and a constant-state Kalman filter.
//! Instances are anchored to trajectory nodes so they follow loop-closure
//! corrections.
//!
//! The crate also contains a seeded corridor simulator that produces
//! detection logs with ground truth, and the scoring used to evaluate
//! tracker settings.
//!
//! ```
//! use objmap::eval::{run_and_evaluate, DEFAULT_RADIUS};
//! use objmap::simulator::presets;
//!
//! let report = run_and_evaluate(&presets::noiseless_corridor(0), None, DEFAULT_RADIUS).unwrap();
//! assert_eq!(report.all.fp + report.all.fn_, 0);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod class;
pub mod eval;
pub mod fitting;
pub mod geometry;
pub mod map_io;
pub mod pipeline;
pub mod simulator;
pub mod tracker;

pub use class::ClassLabel;
pub use geometry::Pose2D;
pub use pipeline::{replay, TrackingConfig};
pub use simulator::{run_scenario, ScenarioConfig};
pub use tracker::{TrackedInstance, TrackerState};
