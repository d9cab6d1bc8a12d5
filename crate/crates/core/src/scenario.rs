//! Scenario files and the built-in benchmark tasks.
//!
//! Files are TOML. Lengths are in meters; every angle (object heading,
//! joint angles, joint limits, base orientations, angular tolerances) is in
//! degrees and converted to radians on load.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::costs::{CostDesign, CostParams};
use crate::error::{Error, Result};
use crate::planner::PlannerSettings;
use crate::plant::{
    ObjectModel, ObjectShape, Plant, PlantState, RobotModel, RobotSpec, Workspace, DEFAULT_BASE_Y,
    DEFAULT_COLLISION_RADIUS, DEFAULT_CONTACT_RADIUS, DEFAULT_JOINT_LIMIT, DEFAULT_K_A, DEFAULT_LINKS, DEFAULT_U_MAX,
};
use crate::proximity::Vec2;
use crate::sim::ReplanSettings;
use crate::trajopt::PhaseConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPatchFile {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotFile {
    /// Link lengths shared by every arm.
    pub links: Vec<f64>,
    /// One base position per arm.
    pub bases: Vec<[f64; 2]>,
    /// Base orientation per arm (deg).
    pub base_angles: Vec<f64>,
    /// Symmetric joint limit (deg).
    pub joint_limit: f64,
    /// Largest joint command per step (rad).
    pub u_max: f64,
    /// Joint impedance (N m/rad).
    pub k_a: f64,
    pub patches_per_link: usize,
    pub contact_radius: f64,
    pub collision_radius: f64,
    /// Immobile patches (torso, base) used for contact and collision.
    pub fixed_patches: Vec<FixedPatchFile>,
}

impl Default for RobotFile {
    fn default() -> Self {
        Self {
            links: DEFAULT_LINKS.to_vec(),
            bases: vec![[0.0, -DEFAULT_BASE_Y], [0.0, DEFAULT_BASE_Y]],
            base_angles: vec![0.0, 0.0],
            joint_limit: DEFAULT_JOINT_LIMIT.to_degrees(),
            u_max: DEFAULT_U_MAX,
            k_a: DEFAULT_K_A,
            patches_per_link: 2,
            contact_radius: DEFAULT_CONTACT_RADIUS,
            collision_radius: DEFAULT_COLLISION_RADIUS,
            fixed_patches: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    #[default]
    Circle,
    Segment,
    Polygon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectFile {
    pub shape: ShapeKind,
    /// Rounding radius (the full radius for a circle).
    pub radius: f64,
    /// Segment endpoints in the object frame.
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Polygon vertices in the object frame, counter-clockwise.
    pub vertices: Vec<[f64; 2]>,
    pub mu: f64,
    /// Weight resting on the support (N).
    pub weight: f64,
    /// Rotational friction coefficient of the limit surface; defaults to
    /// `4/9 mu r_c`, the ellipsoidal approximation for a uniformly loaded
    /// disk of radius `r_c`.
    pub mu_r: Option<f64>,
    pub workspace_x: [f64; 2],
    pub workspace_y: [f64; 2],
}

impl Default for ObjectFile {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Circle,
            radius: 0.14,
            a: [0.0, 0.0],
            b: [0.0, 0.0],
            vertices: Vec::new(),
            mu: 0.5,
            weight: 10.0,
            mu_r: None,
            workspace_x: [-0.2, 1.2],
            workspace_y: [-1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    /// `(x m, y m, theta deg)`.
    pub q_u_init: [f64; 3],
    /// Joint angles (deg).
    pub q_a_init: Vec<f64>,
    /// `(x m, y m, theta deg)`.
    pub q_u_goal: [f64; 3],
}

/// Planner block; identical to [`PlannerSettings`] except that angles are in
/// degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerFile {
    pub greed: f64,
    /// `(position m, angle deg)`.
    pub goal_tolerance: [f64; 2],
    pub goal_margin: f64,
    pub w_xy: f64,
    pub w_theta: f64,
    pub rewire_radius: f64,
    /// Joint-space duplicate radius (deg).
    pub rewire_joint_radius: f64,
    pub p_rand: f64,
    pub timeout: f64,
    pub max_iterations: usize,
    pub max_attempts: usize,
    pub start_penetration: f64,
}

impl Default for PlannerFile {
    fn default() -> Self {
        let s = PlannerSettings::default();
        Self {
            greed: s.greed,
            goal_tolerance: [s.goal_tolerance[0], s.goal_tolerance[1].to_degrees()],
            goal_margin: s.goal_margin,
            w_xy: s.w_xy,
            w_theta: s.w_theta,
            rewire_radius: s.rewire_radius,
            rewire_joint_radius: s.rewire_joint_radius.to_degrees(),
            p_rand: s.p_rand,
            timeout: s.timeout,
            max_iterations: s.max_iterations,
            max_attempts: s.max_attempts,
            start_penetration: s.start_penetration,
        }
    }
}

/// Trajectory-optimizer block. The subgoal tolerance is derived from the
/// planner block and is not configurable here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajOptFile {
    pub n_cf: usize,
    pub nu_max: f64,
    pub max_manipulation_steps: usize,
    pub max_placements: usize,
    pub stall_tolerance: f64,
    pub stall_steps: usize,
    pub active_penetration: f64,
}

impl Default for TrajOptFile {
    fn default() -> Self {
        let c = PhaseConfig::default();
        Self {
            n_cf: c.n_cf,
            nu_max: c.nu_max,
            max_manipulation_steps: c.max_manipulation_steps,
            max_placements: c.max_placements,
            stall_tolerance: c.stall_tolerance,
            stall_steps: c.stall_steps,
            active_penetration: c.active_penetration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub robot: RobotFile,
    #[serde(default)]
    pub object: ObjectFile,
    pub task: TaskFile,
    #[serde(default)]
    pub planner: PlannerFile,
    #[serde(default)]
    pub costs: CostParams,
    #[serde(default)]
    pub trajopt: TrajOptFile,
    #[serde(default)]
    pub replan: ReplanSettings,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// A fully resolved task in internal units.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub seeds: Vec<u64>,
    pub plant: Plant,
    pub q_init: PlantState,
    pub goal: [f64; 3],
    pub costs: CostParams,
    pub phase: PhaseConfig,
    pub planner: PlannerSettings,
    pub replan: ReplanSettings,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files serialize")
    }

    pub fn build(&self) -> Result<Scenario> {
        let r = &self.robot;
        if r.bases.len() != r.base_angles.len() {
            return Err(Error::Scenario("robot.bases and robot.base_angles differ in length".into()));
        }
        if r.links.is_empty() || r.bases.is_empty() || r.patches_per_link == 0 {
            return Err(Error::Scenario("robot needs links, bases and at least one patch per link".into()));
        }
        let bases: Vec<Vec2> = r.bases.iter().map(|b| Vec2::new(b[0], b[1])).collect();
        let angles: Vec<f64> = r.base_angles.iter().map(|a| a.to_radians()).collect();
        let mut spec = RobotSpec::planar_arms(
            &bases,
            &angles,
            &r.links,
            r.patches_per_link,
            r.contact_radius,
            r.collision_radius,
        );
        let n = spec.q_lb.len();
        let limit = r.joint_limit.to_radians();
        spec.q_lb = vec![-limit; n];
        spec.q_ub = vec![limit; n];
        spec.u_max = vec![r.u_max; n];
        spec.k_a = vec![r.k_a; n];
        for p in &r.fixed_patches {
            spec = spec.with_fixed_patch(Vec2::new(p.a[0], p.a[1]), Vec2::new(p.b[0], p.b[1]), p.radius);
        }
        let robot = RobotModel::new(spec)?;

        let o = &self.object;
        let shape = match o.shape {
            ShapeKind::Circle => ObjectShape::Circle { radius: o.radius },
            ShapeKind::Segment => ObjectShape::Segment {
                a: Vec2::new(o.a[0], o.a[1]),
                b: Vec2::new(o.b[0], o.b[1]),
                radius: o.radius,
            },
            ShapeKind::Polygon => ObjectShape::Polygon {
                vertices: o.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect(),
                radius: o.radius,
            },
        };
        if !(o.weight > 0.0) {
            return Err(Error::Scenario("object.weight must be positive".into()));
        }
        let r_c = shape.bounding_radius();
        let mu_r = o.mu_r.unwrap_or(4.0 / 9.0 * o.mu * r_c);
        let l_u: Matrix3<f64> = ObjectModel::diagonal_limit_surface(o.mu, mu_r, o.weight, r_c);
        let workspace = Workspace {
            x: o.workspace_x,
            y: o.workspace_y,
        };
        let object = ObjectModel::new(shape, o.mu, l_u, workspace)?;
        let plant = Plant::new(robot, object);

        let t = &self.task;
        if t.q_a_init.len() != plant.n_joints() {
            return Err(Error::Scenario(format!(
                "task.q_a_init has {} entries, the robot has {} joints",
                t.q_a_init.len(),
                plant.n_joints()
            )));
        }
        let pose = |p: [f64; 3]| [p[0], p[1], p[2].to_radians()];
        let q_init = PlantState::new(pose(t.q_u_init), t.q_a_init.iter().map(|a| a.to_radians()).collect());

        let p = &self.planner;
        let planner = PlannerSettings {
            greed: p.greed,
            goal_tolerance: [p.goal_tolerance[0], p.goal_tolerance[1].to_radians()],
            goal_margin: p.goal_margin,
            w_xy: p.w_xy,
            w_theta: p.w_theta,
            rewire_radius: p.rewire_radius,
            rewire_joint_radius: p.rewire_joint_radius.to_radians(),
            p_rand: p.p_rand,
            timeout: p.timeout,
            max_iterations: p.max_iterations,
            max_attempts: p.max_attempts,
            start_penetration: p.start_penetration,
            seed: self.seeds.first().copied().unwrap_or(0),
        };
        planner.validate()?;
        self.costs.validate()?;
        let c = &self.trajopt;
        let phase = PhaseConfig {
            n_cf: c.n_cf,
            nu_max: c.nu_max,
            max_manipulation_steps: c.max_manipulation_steps,
            max_placements: c.max_placements,
            stall_tolerance: c.stall_tolerance,
            stall_steps: c.stall_steps,
            active_penetration: c.active_penetration,
            goal_tolerance: planner.search_tolerance(),
            ..PhaseConfig::default()
        };
        if phase.n_cf == 0 || !(phase.nu_max > 0.0) {
            return Err(Error::Scenario("trajopt.n_cf and trajopt.nu_max must be positive".into()));
        }
        Ok(Scenario {
            name: self.name.clone(),
            seeds: self.seeds.clone(),
            plant,
            q_init,
            goal: pose(t.q_u_goal),
            costs: self.costs.clone(),
            phase,
            planner,
            replan: self.replan.clone(),
        })
    }
}

impl Scenario {
    pub fn load(text: &str) -> Result<Self> {
        ScenarioFile::parse(text)?.build()
    }

    /// Planner settings with the given seed.
    pub fn planner_with_seed(&self, seed: u64) -> PlannerSettings {
        PlannerSettings {
            seed,
            ..self.planner.clone()
        }
    }
}

fn task(name: String, q_u_init: [f64; 3], q_a_init: [f64; 6], q_u_goal: [f64; 3]) -> ScenarioFile {
    ScenarioFile {
        name,
        seeds: default_seeds(),
        robot: RobotFile::default(),
        object: ObjectFile::default(),
        task: TaskFile {
            q_u_init,
            q_a_init: q_a_init.to_vec(),
            q_u_goal,
        },
        planner: PlannerFile::default(),
        costs: CostParams::default(),
        trajopt: TrajOptFile::default(),
        replan: ReplanSettings::default(),
    }
}

/// Sideways translation with a final heading of `theta` degrees.
pub fn scenario_1(theta: f64) -> ScenarioFile {
    task(
        format!("scenario-1-theta-{theta}"),
        [0.60, -0.20, 0.0],
        [-40.1, 0.0, 0.0, 40.1, 0.0, 0.0],
        [0.60, 0.20, theta],
    )
}

/// Pull toward the robot with a final heading of `theta` degrees.
pub fn scenario_2(theta: f64) -> ScenarioFile {
    task(
        format!("scenario-2-theta-{theta}"),
        [0.65, 0.0, 0.0],
        [0.0; 6],
        [0.35, 0.0, theta],
    )
}

/// Long sideways transfer across the robot.
pub fn scenario_3() -> ScenarioFile {
    task(
        "scenario-3".into(),
        [0.50, -0.55, 0.0],
        [45.0, 0.0, 0.0, 45.0, 0.0, 0.0],
        [0.50, 0.55, -90.0],
    )
}

/// Straight push away from the robot, starting between the outstretched
/// arms so the end effectors cannot reach behind the object.
pub fn scenario_4(design: CostDesign) -> ScenarioFile {
    let mut file = task(
        format!("scenario-4-{}", match design {
            CostDesign::Manipulability => "manipulability",
            CostDesign::Baseline => "baseline",
        }),
        [0.40, 0.0, 0.0],
        [0.0; 6],
        [0.80, 0.0, 0.0],
    );
    file.costs.design = design;
    file
}

/// The object rests against an immobile torso patch and must slide along
/// it to the goal.
pub fn torso_scenario() -> ScenarioFile {
    let mut file = task(
        "torso".into(),
        [0.45, -0.15, 0.0],
        [-40.0, 0.0, 0.0, 40.0, 0.0, 0.0],
        [0.45, 0.15, 0.0],
    );
    file.robot.fixed_patches.push(FixedPatchFile {
        a: [0.62, -0.45],
        b: [0.62, 0.45],
        radius: 0.03,
    });
    file.object.workspace_x = [-0.2, 0.62];
    file
}
