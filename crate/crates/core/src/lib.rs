//! Perception-to-action stack for intercepting a flying ball with a racket.
//!
//! The pipeline runs from noisy synthetic RGB-D observations to task-space
//! motion commands:
//!
//! 1. [`sensorsim`] renders detector-like 2D candidates and depth patches,
//!    which are filtered and tracked in image space by [`track2d`].
//! 2. [`camera`] lifts tracked centers to base-frame points with a
//!    range-dependent covariance.
//! 3. [`ekf`] fuses the points with the drag/bounce flight model of
//!    [`flightdyn`].
//! 4. [`predictor`] rolls the belief forward and extracts hit-plane crossings.
//! 5. [`planner`] turns crossings into base placements and a swing mode.
//! 6. [`targets`] maps the active plan to head, wrist, height and navigation
//!    targets.
//!
//! [`harness`] closes the loop against a kinematic executor on a simulated
//! multi-rate clock and reports hit/return metrics; [`scenario`] holds the
//! configuration file format.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod ekf;
pub mod error;
pub mod flightdyn;
pub mod geometry;
pub mod harness;
pub mod planner;
pub mod predictor;
pub mod scenario;
pub mod sensorsim;
pub mod targets;
pub mod track2d;

pub use camera::{Extrinsics, Intrinsics, Measurement3D, PixelSigmas};
pub use ekf::{Belief, EkfParams, ProjectileEstimate};
pub use error::{Error, Result};
pub use flightdyn::{BounceParams, DragParams, ProjectileState};
pub use geometry::{BasePose2D, Pose3D};
pub use harness::{BatchSummary, LoopRates, TrialResult};
pub use planner::{InterceptionPlan, PlannerConfig, SwingMode};
pub use predictor::{ExportGates, InterceptCandidate, Rollout};
pub use scenario::Scenario;
pub use targets::{SwingTemplates, TaskCommand};
pub use track2d::{AssocGates, Track2D, TrackState};
