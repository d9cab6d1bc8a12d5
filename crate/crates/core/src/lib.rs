//! Planar whole-body manipulation planning.
//!
//! The crate is organized bottom-up: closed-form proximity geometry, the
//! robot/object plant, contact costs, a small nonlinear programming solver,
//! the two-phase trajectory optimizer, the global tree planner, and an
//! independent quasi-dynamic simulator used to verify plans.

pub mod ad;
pub mod costs;
pub mod error;
pub mod nlp;
pub mod planner;
pub mod plant;
pub mod proximity;
pub mod scenario;
pub mod sim;
pub mod trajopt;

pub use ad::{clamp01, DiffScalar, Real};
pub use error::{Error, Result};
pub use plant::{
    coulomb_residuals, Attachment, Candidate, Chain, CoulombResiduals, ObjectModel, ObjectShape, Patch, Plant,
    PlantState, RobotModel, RobotSpec, Workspace,
};
pub use proximity::{
    point_segment_proximity, polygon_segment_proximity, round_proximity, segment_segment_proximity,
    ConvexPolygonStruct, ProximityResult, SegmentStruct, Vec2,
};
pub use costs::{CostDesign, CostParams};
pub use planner::{plan, PlanContext, PlanResult, PlanStats, PlanTree, PlannerSettings};
pub use scenario::{Scenario, ScenarioFile};
pub use sim::{deviation_replan, rollout, ExecutionLog, ReplanSettings, SimOptions, Trace};
pub use trajopt::{ContactForce, Phase, PhaseConfig, Step, Trajectory};
