//! Tree search over plant states: sample a subgoal, pick the nearest node,
//! extend it with the trajectory optimizer, register the explored states,
//! and extract the cheapest root-to-goal path with Dijkstra's algorithm.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{wrap_angle, CostParams};
use crate::error::{Error, Result};
use crate::plant::{Plant, PlantState, Workspace};
use crate::trajopt::{within_tolerance, PhaseConfig, Step, TrajOpt, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSettings {
    /// Probability of sampling the final goal instead of a random pose.
    pub greed: f64,
    /// `(position m, angle rad)`.
    pub goal_tolerance: [f64; 2],
    /// The search stops at nodes within this fraction of the goal tolerance,
    /// leaving headroom for execution.
    pub goal_margin: f64,
    pub w_xy: f64,
    pub w_theta: f64,
    /// Nodes closer than this in the object metric are treated as
    /// duplicates.
    pub rewire_radius: f64,
    /// Joint-space radius (rad) within which duplicates must also lie.
    pub rewire_joint_radius: f64,
    /// Probability that nearest returns a uniformly random node.
    pub p_rand: f64,
    /// Wall-clock budget in seconds.
    pub timeout: f64,
    /// Deterministic iteration budget.
    pub max_iterations: usize,
    /// Extends from one node toward one subgoal before the pair is retired.
    pub max_attempts: usize,
    /// Penetration (m) accepted in the start state.
    pub start_penetration: f64,
    pub seed: u64,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            greed: 1.0,
            goal_tolerance: [0.02, 5f64.to_radians()],
            goal_margin: 0.8,
            w_xy: 1.0,
            w_theta: 0.1,
            rewire_radius: 0.01,
            rewire_joint_radius: 1e-3,
            p_rand: 0.1,
            timeout: 900.0,
            max_iterations: 60,
            max_attempts: 3,
            start_penetration: 2e-3,
            seed: 0,
        }
    }
}

impl PlannerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.greed) {
            return Err(Error::Scenario("greed must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.p_rand) {
            return Err(Error::Scenario("p_rand must lie in [0, 1]".into()));
        }
        if !(self.goal_tolerance[0] > 0.0 && self.goal_tolerance[1] > 0.0) {
            return Err(Error::Scenario("goal tolerances must be positive".into()));
        }
        if !(self.goal_margin > 0.0 && self.goal_margin <= 1.0) {
            return Err(Error::Scenario("goal_margin must lie in (0, 1]".into()));
        }
        if !(self.w_xy >= 0.0
            && self.w_theta >= 0.0
            && self.rewire_radius >= 0.0
            && self.timeout >= 0.0
            && self.start_penetration >= 0.0)
        {
            return Err(Error::Scenario(
                "metric weights, rewire radius, timeout and start penetration must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Tolerance at which the search accepts a node as the goal.
    pub fn search_tolerance(&self) -> [f64; 2] {
        self.goal_tolerance.map(|t| t * self.goal_margin)
    }

    /// Weighted object-pose distance `sqrt(w_xy |dxy|^2 + w_theta dtheta^2)`.
    pub fn distance(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dt = wrap_angle(a[2] - b[2]);
        (self.w_xy * (dx * dx + dy * dy) + self.w_theta * dt * dt).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub state: PlantState,
    /// Edge through which the node was first reached.
    pub parent: Option<usize>,
    /// Cost from the root along the parent chain.
    pub cost: f64,
    /// False once a cheaper duplicate represents this state in nearest
    /// queries.
    pub representative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub step: Step,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PlanTree {
    pub fn new(root: PlantState) -> Self {
        Self {
            nodes: vec![Node {
                state: root,
                parent: None,
                cost: 0.0,
                representative: true,
            }],
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node reached from `from` by `step`.
    pub fn add_node(&mut self, from: usize, step: Step, cost: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            state: step.state.clone(),
            parent: Some(self.edges.len()),
            cost: self.nodes[from].cost + cost,
            representative: true,
        });
        self.edges.push(Edge {
            from,
            to: id,
            step,
            cost,
        });
        id
    }

    /// Adds an edge between existing nodes.
    pub fn add_edge(&mut self, from: usize, to: usize, step: Step, cost: f64) {
        self.edges.push(Edge { from, to, step, cost });
    }

    /// Node ids on the parent chain from the root to `id`.
    pub fn root_path(&self, mut id: usize) -> Vec<usize> {
        let mut path = vec![id];
        while let Some(e) = self.nodes[id].parent {
            id = self.edges[e].from;
            path.push(id);
        }
        path.reverse();
        path
    }

    /// Minimum-cost edge sequence from the root to any node accepted by
    /// `is_goal`, as `(edge ids, total cost)`.
    pub fn shortest_path(&self, is_goal: impl Fn(&Node) -> bool) -> Option<(Vec<usize>, f64)> {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        let n = self.nodes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.from].push(i);
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[0] = 0.0;
        heap.push(Entry(0.0, 0));
        let mut best: Option<usize> = None;
        while let Some(Entry(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            if is_goal(&self.nodes[v]) {
                best = Some(v);
                break;
            }
            for &e in &out[v] {
                let edge = &self.edges[e];
                let nd = d + edge.cost;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    via[edge.to] = Some(e);
                    heap.push(Entry(nd, edge.to));
                }
            }
        }
        let goal = best?;
        let mut edges = Vec::new();
        let mut v = goal;
        while let Some(e) = via[v] {
            edges.push(e);
            v = self.edges[e].from;
        }
        edges.reverse();
        Some((edges, dist[goal]))
    }

    /// Trajectory along the given edge ids.
    pub fn trajectory(&self, edges: &[usize]) -> Trajectory {
        Trajectory {
            start: self.nodes[0].state.clone(),
            steps: edges.iter().map(|&e| self.edges[e].step.clone()).collect(),
        }
    }
}

/// Subgoal for the next extend: the goal with probability `greed`, else a
/// uniform pose in the workspace.
pub fn sample_subgoal<R: Rng>(settings: &PlannerSettings, rng: &mut R, workspace: &Workspace, goal: &[f64; 3]) -> [f64; 3] {
    if rng.gen::<f64>() < settings.greed {
        return *goal;
    }
    [
        rng.gen_range(workspace.x[0]..=workspace.x[1]),
        rng.gen_range(workspace.y[0]..=workspace.y[1]),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    ]
}

/// Representative node closest to `target` in the object metric, or a
/// uniformly random representative with probability `p_rand`. Nodes for
/// which `excluded` holds are skipped.
pub fn nearest<R: Rng>(
    tree: &PlanTree,
    target: &[f64; 3],
    settings: &PlannerSettings,
    rng: &mut R,
    excluded: impl Fn(usize) -> bool,
) -> Option<usize> {
    let eligible: Vec<usize> = (0..tree.nodes.len())
        .filter(|&i| tree.nodes[i].representative && !excluded(i))
        .collect();
    if eligible.is_empty() {
        return None;
    }
    if rng.gen::<f64>() < settings.p_rand {
        return Some(eligible[rng.gen_range(0..eligible.len())]);
    }
    eligible.into_iter().min_by(|&a, &b| {
        let da = settings.distance(&tree.nodes[a].state.q_u, target);
        let db = settings.distance(&tree.nodes[b].state.q_u, target);
        da.total_cmp(&db).then(a.cmp(&b))
    })
}

/// Appends every state of `steps` (executed from node `from`) as a node.
/// A new node within the rewire radii of an existing representative keeps
/// whichever of the two is cheaper from the root as the representative.
/// Returns the ids of the new nodes.
pub fn register_and_rewire(tree: &mut PlanTree, from: usize, steps: &[Step], settings: &PlannerSettings) -> Vec<usize> {
    let mut ids = Vec::with_capacity(steps.len());
    let mut prev = from;
    for step in steps {
        let cost = settings.distance(&tree.nodes[prev].state.q_u, &step.state.q_u);
        let id = tree.add_node(prev, step.clone(), cost);
        if settings.rewire_radius > 0.0 {
            let dup = (0..id).find(|&j| {
                let other = &tree.nodes[j];
                other.representative
                    && settings.distance(&other.state.q_u, &step.state.q_u) <= settings.rewire_radius
                    && joint_distance(&other.state.q_a, &step.state.q_a) <= settings.rewire_joint_radius
            });
            if let Some(j) = dup {
                if tree.nodes[id].cost < tree.nodes[j].cost {
                    tree.nodes[j].representative = false;
                } else {
                    tree.nodes[id].representative = false;
                }
            }
        }
        ids.push(id);
        prev = id;
    }
    ids
}

fn joint_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub wall_time: f64,
    pub iterations: usize,
    pub extends: usize,
    pub successful_extends: usize,
    pub nodes: usize,
    pub timed_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub success: bool,
    pub path: Option<Trajectory>,
    pub tree: PlanTree,
    pub stats: PlanStats,
    /// Every sampled subgoal in order.
    pub samples: Vec<[f64; 3]>,
}

/// Everything the planner needs besides the task.
pub struct PlanContext<'a> {
    pub plant: &'a Plant,
    pub cost: &'a CostParams,
    pub phase: &'a PhaseConfig,
    pub settings: &'a PlannerSettings,
}

/// Slack on joint and workspace bounds for rounding.
const BOUND_TOLERANCE: f64 = 1e-9;

/// Checks that `q` respects bounds and does not penetrate beyond `tol`.
pub fn check_feasible(plant: &Plant, q: &PlantState, tol: f64) -> Result<()> {
    if !q.is_finite() || q.q_a.len() != plant.n_joints() {
        return Err(Error::Scenario("state has wrong dimension or non-finite values".into()));
    }
    let robot = &plant.robot;
    for (j, (&v, (&lo, &hi))) in q.q_a.iter().zip(robot.q_lb.iter().zip(&robot.q_ub)).enumerate() {
        if v < lo - BOUND_TOLERANCE || v > hi + BOUND_TOLERANCE {
            return Err(Error::Scenario(format!(
                "joint {j} at {v:.6} rad is outside [{lo:.6}, {hi:.6}]"
            )));
        }
    }
    if !plant.is_within_bounds(q, BOUND_TOLERANCE) {
        return Err(Error::Scenario(format!(
            "object at ({:.4}, {:.4}) m is outside the workspace",
            q.q_u[0], q.q_u[1]
        )));
    }
    let cands = plant.contact_candidates(&q.q_u, &q.q_a);
    if let Some(c) = cands.iter().find(|c| c.prox.dp < -tol) {
        return Err(Error::Scenario(format!(
            "contact patch {} penetrates the object by {:.3e} m",
            c.patch, -c.prox.dp
        )));
    }
    if plant.robot.self_collision_distances(&q.q_a).iter().any(|&d| d < -tol) {
        return Err(Error::Scenario("robot is in self-collision".into()));
    }
    Ok(())
}

/// Plans from `q_init` to the object pose `goal`.
pub fn plan(ctx: &PlanContext, q_init: &PlantState, goal: &[f64; 3]) -> Result<PlanResult> {
    let settings = ctx.settings;
    settings.validate()?;
    ctx.cost.validate()?;
    check_feasible(ctx.plant, q_init, settings.start_penetration)?;
    if !ctx.plant.object.workspace.contains(goal) {
        return Err(Error::Scenario("goal lies outside the workspace".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut tree = PlanTree::new(q_init.clone());
    let mut stats = PlanStats::default();
    let mut samples = Vec::new();
    let search_tol = settings.search_tolerance();
    let phase = PhaseConfig {
        goal_tolerance: search_tol,
        ..ctx.phase.clone()
    };
    let opt = TrajOpt::new(ctx.plant, ctx.cost, &phase);
    let mut attempts: HashMap<(usize, [u64; 3]), usize> = HashMap::new();
    let is_goal = |n: &Node| within_tolerance(&n.state.q_u, goal, search_tol);

    let mut found = is_goal(&tree.nodes[0]);
    while !found && stats.iterations < settings.max_iterations {
        if start.elapsed().as_secs_f64() >= settings.timeout {
            stats.timed_out = true;
            break;
        }
        stats.iterations += 1;
        let sub = sample_subgoal(settings, &mut rng, &ctx.plant.object.workspace, goal);
        samples.push(sub);
        let key = sub.map(f64::to_bits);
        let Some(near) = nearest(&tree, &sub, settings, &mut rng, |i| {
            attempts.get(&(i, key)).copied().unwrap_or(0) >= settings.max_attempts
        }) else {
            if sub == *goal {
                break;
            }
            continue;
        };
        let attempt = attempts.entry((near, key)).or_insert(0);
        let k = *attempt;
        *attempt += 1;
        stats.extends += 1;
        let q_near = tree.nodes[near].state.clone();
        let segment = opt.extend(&q_near, &sub, k, &mut rng);
        log::debug!(
            "extend {} from node {near}: {} steps, error {:.4e} -> {:.4e}",
            stats.extends,
            segment.steps.len(),
            segment.initial_error,
            segment.terminal_error
        );
        if !segment.success || segment.steps.is_empty() {
            continue;
        }
        stats.successful_extends += 1;
        let ids = register_and_rewire(&mut tree, near, &segment.steps, settings);
        found = ids.iter().any(|&i| is_goal(&tree.nodes[i]));
    }
    if !found && start.elapsed().as_secs_f64() >= settings.timeout {
        stats.timed_out = true;
    }
    let path = if found {
        tree.shortest_path(is_goal).map(|(edges, _)| tree.trajectory(&edges))
    } else {
        None
    };
    stats.wall_time = start.elapsed().as_secs_f64();
    stats.nodes = tree.len();
    Ok(PlanResult {
        success: path.is_some(),
        path,
        tree,
        stats,
        samples,
    })
}
