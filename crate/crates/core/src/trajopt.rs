//! Two-phase sequential trajectory optimization.
//!
//! A placement phase moves the robot without applying force until a patch
//! touches the object at a location with good manipulability. Manipulation
//! steps then optimize the joint command together with a virtual system
//! displacement `nu`; forces are recovered from `nu` through the contact
//! Jacobian pseudo-inverse and must satisfy the Coulomb conditions.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{DiffScalar, Real};
use crate::costs::{contact_objective, distance_objective, wrap_angle, CostParams};
use crate::nlp::{self, ConstraintKind, Evaluation, NlpProblem, NlpSettings};
use crate::plant::{coulomb_residuals, Candidate, Plant, PlantState};
use crate::sim;

/// Constraint values in meters are multiplied by this (centimeters), so
/// solver tolerances act on comparable magnitudes.
const DIST_SCALE: f64 = 100.0;

/// `nu_a - u` is optimized in units of this many radians.
const NU_OFFSET_SCALE: f64 = 1e-3;

/// Tikhonov term of the contact Jacobian pseudo-inverse.
pub const PSEUDO_INVERSE_REGULARIZATION: f64 = 1e-8;

/// Largest coordinate gap tolerated between an optimized transition and the
/// exactly resolved one.
const REALIZE_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Placement,
    Manipulation,
}

/// Resolved force at one contact during one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactForce {
    /// Contact patch index.
    pub patch: usize,
    /// `(f_n, f_t)` applied to the object.
    pub f: [f64; 2],
    /// `(v_n, v_t)`: gap after the step and robot slip relative to the object.
    pub v: [f64; 2],
}

/// One transition `state_before -> state`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub u: Vec<f64>,
    pub state: PlantState,
    pub phase: Phase,
    /// Patches treated as active contacts for this step.
    pub active: Vec<usize>,
    pub forces: Vec<ContactForce>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub start: PlantState,
    pub steps: Vec<Step>,
    pub success: bool,
    pub initial_error: f64,
    pub terminal_error: f64,
}

impl TrajectorySegment {
    pub fn empty(start: PlantState, error: f64) -> Self {
        Self {
            start,
            steps: Vec::new(),
            success: true,
            initial_error: error,
            terminal_error: error,
        }
    }

    pub fn last_state(&self) -> &PlantState {
        self.steps.last().map_or(&self.start, |s| &s.state)
    }

    /// All states including the start.
    pub fn states(&self) -> impl Iterator<Item = &PlantState> {
        std::iter::once(&self.start).chain(self.steps.iter().map(|s| &s.state))
    }
}

/// A start state with the steps executed from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: PlantState,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.u.clone()).collect()
    }

    /// All states including the start.
    pub fn states(&self) -> Vec<PlantState> {
        std::iter::once(self.start.clone())
            .chain(self.steps.iter().map(|s| s.state.clone()))
            .collect()
    }

    pub fn last_state(&self) -> &PlantState {
        self.steps.last().map_or(&self.start, |s| &s.state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub n_cf: usize,
    pub n_cr: usize,
    pub nu_max: f64,
    /// Manipulation solves per extend.
    pub max_manipulation_steps: usize,
    /// Placement phases per extend.
    pub max_placements: usize,
    /// Goal-distance improvement below which a manipulation step counts as
    /// stalled.
    pub stall_tolerance: f64,
    pub stall_steps: usize,
    /// Subgoal tolerance `(position m, angle rad)`.
    pub goal_tolerance: [f64; 2],
    /// Penetration allowed after a step at contacts that were active before
    /// it (second-order error of the linearized contact model).
    pub active_penetration: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            n_cf: 5,
            n_cr: 1,
            nu_max: 0.05,
            max_manipulation_steps: 50,
            max_placements: 3,
            stall_tolerance: 1e-6,
            stall_steps: 3,
            goal_tolerance: [0.016, 4f64.to_radians()],
            active_penetration: 1e-3,
        }
    }
}

/// Position and angle error of an object pose to a goal.
pub fn pose_distance(q_u: &[f64; 3], goal: &[f64; 3]) -> (f64, f64) {
    let pos = ((q_u[0] - goal[0]).powi(2) + (q_u[1] - goal[1]).powi(2)).sqrt();
    (pos, wrap_angle(q_u[2] - goal[2]).abs())
}

pub fn within_tolerance(q_u: &[f64; 3], goal: &[f64; 3], tol: [f64; 2]) -> bool {
    let (p, a) = pose_distance(q_u, goal);
    p <= tol[0] && a <= tol[1]
}

/// Trajectory optimizer bound to a plant and cost design.
pub struct TrajOpt<'a> {
    pub plant: &'a Plant,
    pub cost: &'a CostParams,
    pub config: &'a PhaseConfig,
    pub nlp: NlpSettings,
}

/// Outcome of one placement phase.
#[derive(Clone, Debug)]
pub struct PlacementResult {
    pub steps: Vec<Step>,
    pub in_contact: bool,
    pub feasible: bool,
    pub objective: f64,
}

/// Outcome of one manipulation solve.
#[derive(Clone, Debug)]
pub struct ManipulationResult {
    pub step: Step,
    pub objective: f64,
    /// Decision vector, reusable as a warm start.
    pub x: Vec<f64>,
}

impl<'a> TrajOpt<'a> {
    pub fn new(plant: &'a Plant, cost: &'a CostParams, config: &'a PhaseConfig) -> Self {
        Self {
            plant,
            cost,
            config,
            nlp: NlpSettings {
                max_outer: 30,
                max_inner: 60,
                rho_max: 1e9,
                ..NlpSettings::default()
            },
        }
    }

    /// Indices of candidates with rounded distance at or below `delta_act`.
    pub fn active_set(&self, cands: &[Candidate<f64>]) -> Vec<usize> {
        cands
            .iter()
            .enumerate()
            .filter(|(_, c)| c.prox.dp <= self.cost.delta_act)
            .map(|(k, _)| k)
            .collect()
    }

    /// Contact-free phase of `n_cf` steps from `q`. `init` is the initial
    /// guess for the stacked inputs (zeros when `None`).
    pub fn placement_phase(&self, q: &PlantState, goal: &[f64; 3], init: Option<&[f64]>) -> PlacementResult {
        let problem = PlacementProblem::new(self, q, goal);
        let x0 = init.map_or_else(|| vec![0.0; problem.n()], |v| v.to_vec());
        let failed = PlacementResult {
            steps: Vec::new(),
            in_contact: false,
            feasible: false,
            objective: f64::INFINITY,
        };
        let Ok(sol) = nlp::solve(&problem, &x0, &self.nlp) else {
            return failed;
        };
        log::debug!(
            "placement solve: {} iterations, {} outer, violation {:.2e}, objective {:.4}",
            sol.iterations,
            sol.outer_iterations,
            sol.violation,
            sol.objective
        );
        if sol.violation > self.nlp.tol_feas * 10.0 {
            return failed;
        }
        let na = self.plant.n_joints();
        let mut steps = Vec::with_capacity(self.config.n_cf);
        let mut current = q.clone();
        for k in 0..self.config.n_cf {
            let u = sol.x[k * na..(k + 1) * na].to_vec();
            let mut predicted = current.clone();
            for (qi, ui) in predicted.q_a.iter_mut().zip(&u) {
                *qi += ui;
            }
            let Some(step) = self.realize(&current, u, &predicted, Phase::Placement) else {
                break;
            };
            current = step.state.clone();
            steps.push(step);
        }
        // Drop trailing steps that do not move the robot.
        while steps
            .last()
            .is_some_and(|s| s.u.iter().all(|v| v.abs() < 1e-9))
        {
            steps.pop();
        }
        let last = steps.last().map_or(q, |s| &s.state);
        let cands = self.plant.contact_candidates(&last.q_u, &last.q_a);
        PlacementResult {
            in_contact: !self.active_set(&cands).is_empty(),
            feasible: true,
            objective: sol.objective,
            steps,
        }
    }

    /// One contact-rich step from `q` with the active set detected at `q`.
    /// Returns `None` when the solve fails or its forces are not Coulomb
    /// feasible.
    pub fn manipulation_step(&self, q: &PlantState, goal: &[f64; 3], warm: Option<&[f64]>) -> Option<ManipulationResult> {
        let problem = ManipulationProblem::new(self, q, goal);
        if problem.active.is_empty() {
            return None;
        }
        let x0 = warm
            .filter(|w| w.len() == problem.n())
            .map_or_else(|| vec![0.0; problem.n()], |w| w.to_vec());
        let sol = nlp::solve(&problem, &x0, &self.nlp).ok()?;
        if sol.violation > self.nlp.tol_feas * 10.0 {
            log::debug!(
                "manipulation solve rejected: violation {:.3e}, status {:?}, {} iterations",
                sol.violation,
                sol.status,
                sol.iterations
            );
            return None;
        }
        log::debug!(
            "manipulation solve: {} active, {} iterations, {} outer, violation {:.2e}",
            problem.active.len(),
            sol.iterations,
            sol.outer_iterations,
            sol.violation
        );
        let (state, forces) = problem.resolve(&sol.x);
        let residual_ok = forces
            .iter()
            .all(|cf| coulomb_residuals(cf.f, cf.v, self.plant.object.mu).violation() <= 1e-6);
        if !residual_ok || !state.is_finite() {
            log::debug!("manipulation step rejected: Coulomb residuals {forces:?}");
            return None;
        }
        let na = self.plant.n_joints();
        let step = self.realize(q, sol.x[..na].to_vec(), &state, Phase::Manipulation)?;
        Some(ManipulationResult {
            step,
            objective: sol.objective,
            x: sol.x,
        })
    }

    /// Advances `q` under `u` with the exact contact resolution of the
    /// simulator, which is what gets recorded so planned trajectories replay
    /// step for step. The optimized transition relaxes complementarity and
    /// agrees with the resolution to `REALIZE_TOLERANCE` in the common case.
    /// Placement steps must agree, since they promise not to move the object.
    /// Manipulation steps with several frictional contacts can admit more
    /// than one consistent contact mode; there the resolved outcome is kept
    /// if it is itself a feasible state.
    fn realize(&self, q: &PlantState, u: Vec<f64>, predicted: &PlantState, phase: Phase) -> Option<Step> {
        let options = sim::SimOptions {
            activation_distance: self.cost.delta_act,
            ..sim::SimOptions::default()
        };
        let resolved = sim::step(self.plant, q, &u, &options).ok()?;
        let gap = resolved
            .state
            .to_vec()
            .iter()
            .zip(predicted.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(gap <= REALIZE_TOLERANCE) {
            // Resolved states satisfy only the linearized gap; accept their
            // second-order penetration, or the depth the step started from.
            let deepest = self
                .plant
                .contact_candidates(&q.q_u, &q.q_a)
                .iter()
                .map(|c| -c.prox.dp)
                .fold(2.0 * self.config.active_penetration, f64::max);
            let feasible = crate::planner::check_feasible(self.plant, &resolved.state, deepest);
            log::debug!("{phase:?} step: resolved state differs by {gap:.3e}, feasible {}", feasible.is_ok());
            if phase == Phase::Placement || feasible.is_err() {
                return None;
            }
        }
        Some(Step {
            u,
            active: resolved.forces.iter().map(|f| f.patch).collect(),
            state: resolved.state,
            phase,
            forces: resolved.forces,
        })
    }

    /// Placement followed by repeated manipulation steps toward `goal`.
    ///
    /// `attempt` counts earlier extends from the same node toward the same
    /// goal; repeated attempts start with a randomized placement so they
    /// explore different contacts.
    pub fn extend<R: Rng>(&self, q_near: &PlantState, goal: &[f64; 3], attempt: usize, rng: &mut R) -> TrajectorySegment {
        let err = |q: &PlantState| distance_objective(&q.q_u, goal, &self.cost.w_d);
        let initial_error = err(q_near);
        if within_tolerance(&q_near.q_u, goal, self.config.goal_tolerance) {
            return TrajectorySegment::empty(q_near.clone(), initial_error);
        }
        let na = self.plant.n_joints();
        let mut steps: Vec<Step> = Vec::new();
        let mut placements = 0;
        let mut manipulations = 0;
        let mut stalled = 0;
        let mut warm: Option<Vec<f64>> = None;
        let mut best_error = initial_error;
        let mut force_placement = attempt > 0;
        loop {
            let q = steps.last().map_or(q_near, |s| &s.state).clone();
            if within_tolerance(&q.q_u, goal, self.config.goal_tolerance) {
                break;
            }
            let cands = self.plant.contact_candidates(&q.q_u, &q.q_a);
            let in_contact = !self.active_set(&cands).is_empty();
            if !in_contact || force_placement {
                if placements >= self.config.max_placements {
                    break;
                }
                placements += 1;
                let init: Option<Vec<f64>> = force_placement.then(|| {
                    let scale = 0.5;
                    (0..self.config.n_cf * na)
                        .map(|i| rng.gen_range(-scale..scale) * self.plant.robot.u_max[i % na])
                        .collect()
                });
                force_placement = false;
                let placed = self.placement_phase(&q, goal, init.as_deref());
                if !placed.feasible || placed.steps.is_empty() {
                    break;
                }
                steps.extend(placed.steps);
                warm = None;
                continue;
            }
            if manipulations >= self.config.max_manipulation_steps {
                break;
            }
            manipulations += 1;
            let Some(res) = self.manipulation_step(&q, goal, warm.as_deref()) else {
                // A failed solve from a warm start is retried cold once.
                if warm.take().is_some() {
                    continue;
                }
                if placements < self.config.max_placements {
                    force_placement = true;
                    continue;
                }
                break;
            };
            let mut res = res;
            let mut e = err(&res.step.state);
            // A warm start can pin the solver at a contact-breaking corner
            // with zero force; a non-improving warm step is re-solved cold.
            if warm.is_some() && e > err(&q) - self.config.stall_tolerance {
                if let Some(cold) = self.manipulation_step(&q, goal, None) {
                    let ec = err(&cold.step.state);
                    if ec < e {
                        res = cold;
                        e = ec;
                    }
                }
            }
            if e > best_error - self.config.stall_tolerance {
                stalled += 1;
            } else {
                stalled = 0;
            }
            best_error = best_error.min(e);
            warm = Some(res.x);
            steps.push(res.step);
            if stalled >= self.config.stall_steps {
                break;
            }
        }
        // Trim back to the state closest to the goal after the last
        // placement, so the segment never ends worse than it started.
        let mut best = (initial_error, 0);
        for (i, s) in steps.iter().enumerate() {
            let e = err(&s.state);
            if e <= best.0 {
                best = (e, i + 1);
            }
        }
        steps.truncate(best.1);
        let terminal_error = steps.last().map_or(initial_error, |s| err(&s.state));
        TrajectorySegment {
            start: q_near.clone(),
            success: !steps.is_empty() && terminal_error <= initial_error,
            steps,
            initial_error,
            terminal_error,
        }
    }
}

/// Placement NLP over the stacked inputs `u^0 .. u^{N-1}`.
struct PlacementProblem<'a, 'b> {
    opt: &'b TrajOpt<'a>,
    q_u: [f64; 3],
    q_a0: Vec<f64>,
    goal: [f64; 3],
    steps: usize,
    /// Contacts active at the start, whose linearized gap must stay open
    /// during the first step.
    active0: Vec<usize>,
    cands0: Vec<Candidate<f64>>,
    /// `(step, joint, upper)` joint-bound constraints that can become active.
    bounds: Vec<(usize, usize, bool)>,
    kinds: Vec<ConstraintKind>,
}

impl<'a, 'b> PlacementProblem<'a, 'b> {
    fn new(opt: &'b TrajOpt<'a>, q: &PlantState, goal: &[f64; 3]) -> Self {
        let plant = opt.plant;
        let robot = &plant.robot;
        let steps = opt.config.n_cf;
        let cands0 = plant.contact_candidates(&q.q_u, &q.q_a);
        let active0 = opt.active_set(&cands0);
        let mut bounds = Vec::new();
        for k in 1..=steps {
            for j in 0..robot.n_joints() {
                let reach = k as f64 * robot.u_max[j];
                if q.q_a[j] + reach >= robot.q_ub[j] {
                    bounds.push((k, j, true));
                }
                if q.q_a[j] - reach <= robot.q_lb[j] {
                    bounds.push((k, j, false));
                }
            }
        }
        let n_patch = robot.contact_patches().len();
        let n_pairs = robot.collision_pairs().len();
        let n = active0.len() + steps * (n_patch + n_pairs) + (steps - 1) * n_patch + bounds.len();
        Self {
            opt,
            q_u: q.q_u,
            q_a0: q.q_a.clone(),
            goal: *goal,
            steps,
            active0,
            cands0,
            bounds,
            kinds: vec![ConstraintKind::Inequality; n],
        }
    }

    fn na(&self) -> usize {
        self.q_a0.len()
    }

    /// Joint angles after `k` steps.
    fn q_a_at<T: Real>(&self, x: &[T], k: usize) -> Vec<T> {
        let na = self.na();
        (0..na)
            .map(|j| {
                let mut v = T::cst(self.q_a0[j]);
                for s in 0..k {
                    v += x[s * na + j];
                }
                v
            })
            .collect()
    }

    /// Constraints and objective contributions of state `k` (1-based).
    /// Returns `(distance constraints, linearized-gap constraints for the
    /// transition k -> k+1, objective if k is terminal)`.
    fn state_terms<T: Real>(&self, q_a: &[T], u_next: Option<&[T]>, k: usize) -> (Vec<T>, Vec<T>, Option<T>) {
        let plant = self.opt.plant;
        let q_u = self.q_u.map(T::cst);
        let frames = plant.robot.frames(q_a);
        let cands = plant.contact_candidates_with(&frames, &q_u);
        let mut dist: Vec<T> = cands.iter().map(|c| c.dp() * DIST_SCALE).collect();
        dist.extend(
            plant
                .robot
                .self_collision_distances_with(&frames)
                .into_iter()
                .map(|d| d * DIST_SCALE),
        );
        let gaps = u_next.map_or_else(Vec::new, |u| {
            let delta = self.opt.cost.delta_act;
            cands
                .iter()
                .map(|c| {
                    let mut lin = c.dp();
                    for (col, ui) in c.j_rob.iter().zip(u) {
                        lin -= col[0] * *ui;
                    }
                    lin.max_with(c.dp() - delta) * DIST_SCALE
                })
                .collect()
        });
        let objective =
            (k == self.steps).then(|| contact_objective(&cands, None, &q_u, &self.goal, self.opt.cost));
        (dist, gaps, objective)
    }

    fn bound_value<T: Real>(&self, q_a: &[T], j: usize, upper: bool) -> T {
        let robot = &self.opt.plant.robot;
        if upper {
            -q_a[j] + robot.q_ub[j]
        } else {
            q_a[j] - robot.q_lb[j]
        }
    }

    fn first_gaps<T: Real>(&self, u0: &[T]) -> Vec<T> {
        self.active0
            .iter()
            .map(|&k| {
                let c = &self.cands0[k];
                let mut lin = T::cst(c.prox.dp);
                for (col, ui) in c.j_rob.iter().zip(u0) {
                    lin -= *ui * col[0];
                }
                lin * DIST_SCALE
            })
            .collect()
    }
}

impl NlpProblem for PlacementProblem<'_, '_> {
    fn n(&self) -> usize {
        self.steps * self.na()
    }

    fn lower(&self) -> Vec<f64> {
        (0..self.n()).map(|i| -self.opt.plant.robot.u_max[i % self.na()]).collect()
    }

    fn upper(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.opt.plant.robot.u_max[i % self.na()]).collect()
    }

    fn kinds(&self) -> Vec<ConstraintKind> {
        self.kinds.clone()
    }

    fn eval<T: Real>(&self, x: &[T]) -> (T, Vec<T>) {
        let na = self.na();
        let mut c = self.first_gaps(&x[..na]);
        let mut objective = T::zero();
        let mut states = Vec::with_capacity(self.steps);
        for k in 1..=self.steps {
            let q_a = self.q_a_at(x, k);
            let u_next = (k < self.steps).then(|| &x[k * na..(k + 1) * na]);
            let (dist, gaps, obj) = self.state_terms(&q_a, u_next, k);
            c.extend(dist);
            c.extend(gaps);
            if let Some(o) = obj {
                objective = o;
            }
            states.push(q_a);
        }
        for &(k, j, upper) in &self.bounds {
            c.push(self.bound_value(&states[k - 1], j, upper));
        }
        (objective, c)
    }

    /// Seeds each state's joint vector separately and chains the result:
    /// `q_a^k` depends on every `u^j` with `j < k` with unit sensitivity.
    fn eval_with_gradient(&self, x: &[f64]) -> Evaluation {
        let na = self.na();
        let n = self.n();
        let mut constraints = Vec::new();
        let mut jacobian = Vec::new();
        let mut gradient = vec![0.0; n];
        let mut objective = 0.0;

        let u0 = DiffScalar::seed(&x[..na]);
        for g in self.first_gaps(&u0) {
            let mut row = vec![0.0; n];
            row[..na].copy_from_slice(g.partials());
            constraints.push(g.value());
            jacobian.push(row);
        }
        // Spread a derivative with respect to q_a^k over u^0 .. u^{k-1}.
        let spread = |d: &DiffScalar, k: usize, row: &mut [f64]| {
            for s in 0..k {
                for j in 0..na {
                    row[s * na + j] += d.partial(j);
                }
            }
        };
        let mut states = Vec::with_capacity(self.steps);
        for k in 1..=self.steps {
            let q_a_val = self.q_a_at(x, k);
            let q_a = DiffScalar::seed(&q_a_val);
            let u_next: Option<Vec<DiffScalar>> =
                (k < self.steps).then(|| x[k * na..(k + 1) * na].iter().map(|&v| DiffScalar::constant(v)).collect());
            let (dist, gaps, obj) = self.state_terms(&q_a, u_next.as_deref(), k);
            for d in dist {
                let mut row = vec![0.0; n];
                spread(&d, k, &mut row);
                constraints.push(d.value());
                jacobian.push(row);
            }
            if !gaps.is_empty() {
                // The linearized gap also depends on u^k directly through
                // -J_a^n u^k, evaluated at q_a^k.
                let q_u = self.q_u;
                let cands = self.opt.plant.contact_candidates(&q_u, &q_a_val);
                let delta = self.opt.cost.delta_act;
                for (g, c) in gaps.iter().zip(&cands) {
                    let mut row = vec![0.0; n];
                    spread(g, k, &mut row);
                    let lin: f64 =
                        c.prox.dp - c.j_rob.iter().zip(&x[k * na..(k + 1) * na]).map(|(col, u)| col[0] * u).sum::<f64>();
                    if lin >= c.prox.dp - delta {
                        for j in 0..na {
                            row[k * na + j] -= c.j_rob[j][0] * DIST_SCALE;
                        }
                    }
                    constraints.push(g.value());
                    jacobian.push(row);
                }
            }
            if let Some(o) = obj {
                objective = o.value();
                spread(&o, k, &mut gradient);
            }
            states.push(q_a);
        }
        for &(k, j, upper) in &self.bounds {
            let b = self.bound_value(&states[k - 1], j, upper);
            let mut row = vec![0.0; n];
            spread(&b, k, &mut row);
            constraints.push(b.value());
            jacobian.push(row);
        }
        Evaluation {
            objective,
            constraints,
            gradient,
            jacobian,
        }
    }
}

/// Manipulation NLP for one step. Decision vector: `u` (N_a), `nu_u` (3),
/// and `(nu_a - u) / NU_OFFSET_SCALE` (N_a).
struct ManipulationProblem<'a, 'b> {
    opt: &'b TrajOpt<'a>,
    q: PlantState,
    goal: [f64; 3],
    cands: Vec<Candidate<f64>>,
    active: Vec<usize>,
    /// `(J J^T + lambda I)^-1 J`, one row per active contact direction.
    projection: Vec<Vec<f64>>,
    /// Separation Jacobian rows of the active contacts.
    rows: Vec<[Vec<f64>; 2]>,
    force_scale: f64,
    /// `(joint, upper)` joint-bound constraints near activity.
    bounds: Vec<(usize, bool)>,
    mask: Vec<bool>,
    kinds: Vec<ConstraintKind>,
}

impl<'a, 'b> ManipulationProblem<'a, 'b> {
    fn new(opt: &'b TrajOpt<'a>, q: &PlantState, goal: &[f64; 3]) -> Self {
        let plant = opt.plant;
        let na = plant.n_joints();
        let nq = plant.n_q();
        let cands = plant.contact_candidates(&q.q_u, &q.q_a);
        let active = opt.active_set(&cands);
        let rows: Vec<[Vec<f64>; 2]> = active
            .iter()
            .map(|&k| [cands[k].separation_row(0), cands[k].separation_row(1)])
            .collect();
        let m = 2 * active.len();
        let j = DMatrix::from_fn(m, nq, |r, c| rows[r / 2][r % 2][c]);
        let gram = &j * j.transpose() + DMatrix::identity(m, m) * PSEUDO_INVERSE_REGULARIZATION;
        let projection = match gram.cholesky() {
            Some(ch) => {
                let p = ch.solve(&j);
                (0..m).map(|r| p.row(r).iter().copied().collect()).collect()
            }
            None => vec![vec![0.0; nq]; m],
        };
        let mut bounds = Vec::new();
        let robot = &plant.robot;
        for jn in 0..na {
            let reach = 2.0 * robot.u_max[jn];
            if q.q_a[jn] + reach >= robot.q_ub[jn] {
                bounds.push((jn, true));
            }
            if q.q_a[jn] - reach <= robot.q_lb[jn] {
                bounds.push((jn, false));
            }
        }
        let mut mask = vec![false; cands.len()];
        for &k in &active {
            mask[k] = true;
        }
        let mut kinds = Vec::new();
        use ConstraintKind::*;
        for _ in &active {
            kinds.extend([Inequality, Inequality, Inequality, Inequality, Complementarity, Complementarity, Complementarity]);
        }
        kinds.extend(std::iter::repeat(Inequality).take(cands.len() + robot.collision_pairs().len()));
        kinds.extend(std::iter::repeat(Inequality).take(4 * na + bounds.len() + 4));
        let force_scale = 0.01 * plant.object.l_u()[(0, 0)];
        Self {
            opt,
            q: q.clone(),
            goal: *goal,
            cands,
            active,
            projection,
            rows,
            force_scale,
            bounds,
            mask,
            kinds,
        }
    }

    fn na(&self) -> usize {
        self.q.q_a.len()
    }

    /// Forces of the active contacts and the next state.
    fn forces_and_state<T: Real>(&self, x: &[T]) -> (Vec<[T; 2]>, [T; 3], Vec<T>) {
        let plant = self.opt.plant;
        let na = self.na();
        let u = &x[..na];
        let nu_u = &x[na..na + 3];
        let offset = &x[na + 3..];
        let l_u = plant.object.l_u();
        let mut r: Vec<T> = (0..3)
            .map(|i| (0..3).fold(T::zero(), |acc, j| acc + nu_u[j] * l_u[(i, j)]))
            .collect();
        r.extend((0..na).map(|i| offset[i] * (plant.robot.k_a[i] * NU_OFFSET_SCALE)));
        let flat: Vec<T> = self
            .projection
            .iter()
            .map(|row| row.iter().zip(&r).fold(T::zero(), |acc, (p, ri)| acc + *ri * *p))
            .collect();
        let forces: Vec<[T; 2]> = flat.chunks(2).map(|c| [c[0], c[1]]).collect();
        let contacts: Vec<(&Candidate<f64>, [T; 2])> =
            self.active.iter().zip(&forces).map(|(&k, f)| (&self.cands[k], *f)).collect();
        let q_u = self.q.q_u.map(T::cst);
        let q_a: Vec<T> = self.q.q_a.iter().map(|&v| T::cst(v)).collect();
        let (next_u, next_a) = plant.apply_forces(&q_u, &q_a, u, &contacts);
        (forces, next_u, next_a)
    }

    /// Gap after the step and slip of the robot relative to the object for
    /// active contact `i`.
    fn contact_velocity<T: Real>(&self, i: usize, dq: &[T]) -> [T; 2] {
        let k = self.active[i];
        let proj = |dir: usize| {
            self.rows[i][dir]
                .iter()
                .zip(dq)
                .fold(T::zero(), |acc, (j, d)| acc + *d * *j)
        };
        [proj(0) + self.cands[k].prox.dp, -proj(1)]
    }

    /// Plain-value next state and contact forces at `x`.
    fn resolve(&self, x: &[f64]) -> (PlantState, Vec<ContactForce>) {
        let (forces, next_u, next_a) = self.forces_and_state(x);
        let dq: Vec<f64> = next_u
            .iter()
            .chain(&next_a)
            .zip(self.q.q_u.iter().chain(&self.q.q_a))
            .map(|(a, b)| a - b)
            .collect();
        let contacts = forces
            .iter()
            .enumerate()
            .map(|(i, f)| ContactForce {
                patch: self.active[i],
                f: *f,
                v: self.contact_velocity(i, &dq),
            })
            .collect();
        (PlantState::new(next_u, next_a), contacts)
    }
}

impl NlpProblem for ManipulationProblem<'_, '_> {
    fn n(&self) -> usize {
        3 + 2 * self.na()
    }

    fn lower(&self) -> Vec<f64> {
        let robot = &self.opt.plant.robot;
        let nu = self.opt.config.nu_max;
        let mut lo: Vec<f64> = robot.u_max.iter().map(|u| -u).collect();
        lo.extend([-nu; 3]);
        lo.extend(robot.u_max.iter().map(|u| -(u + nu) / NU_OFFSET_SCALE));
        lo
    }

    fn upper(&self) -> Vec<f64> {
        self.lower().into_iter().map(|v| -v).collect()
    }

    fn kinds(&self) -> Vec<ConstraintKind> {
        self.kinds.clone()
    }

    fn eval<T: Real>(&self, x: &[T]) -> (T, Vec<T>) {
        let plant = self.opt.plant;
        let robot = &plant.robot;
        let na = self.na();
        let mu = plant.object.mu;
        let (forces, next_u, next_a) = self.forces_and_state(x);
        let dq: Vec<T> = next_u
            .iter()
            .chain(&next_a)
            .zip(self.q.q_u.iter().chain(&self.q.q_a))
            .map(|(a, b)| *a - *b)
            .collect();
        let mut c = Vec::with_capacity(self.kinds.len());
        for (i, f) in forces.iter().enumerate() {
            let f_n = f[0] / self.force_scale;
            let f_t = f[1] / self.force_scale;
            let [v_n, v_t] = self.contact_velocity(i, &dq);
            let gap = v_n * DIST_SCALE;
            let slip = v_t * DIST_SCALE;
            let upper_slack = f_n * mu - f_t;
            let lower_slack = f_n * mu + f_t;
            c.push(upper_slack);
            c.push(lower_slack);
            c.push(f_n);
            c.push(gap);
            c.push(f_n * gap);
            c.push(slip * upper_slack);
            c.push(-(slip * lower_slack));
        }
        let frames = robot.frames(&next_a);
        let cands = plant.contact_candidates_with(&frames, &next_u);
        let allowance = self.opt.config.active_penetration;
        for (k, cand) in cands.iter().enumerate() {
            // A start state already deeper than the allowance (possible after
            // a simulated step) may keep, but not deepen, its penetration.
            let floor = if self.mask[k] {
                (-allowance).min(self.cands[k].dp())
            } else {
                0.0
            };
            c.push((cand.dp() - floor) * DIST_SCALE);
        }
        c.extend(
            robot
                .self_collision_distances_with(&frames)
                .into_iter()
                .map(|d| d * DIST_SCALE),
        );
        let nu_max = self.opt.config.nu_max;
        for j in 0..na {
            let moved = next_a[j] - self.q.q_a[j];
            c.push(-moved + robot.u_max[j]);
            c.push(moved + robot.u_max[j]);
            let nu_a = x[j] + x[na + 3 + j] * NU_OFFSET_SCALE;
            c.push(-nu_a + nu_max);
            c.push(nu_a + nu_max);
        }
        for &(j, upper) in &self.bounds {
            c.push(if upper { -next_a[j] + robot.q_ub[j] } else { next_a[j] - robot.q_lb[j] });
        }
        let w = &plant.object.workspace;
        c.push(next_u[0] - w.x[0]);
        c.push(-next_u[0] + w.x[1]);
        c.push(next_u[1] - w.y[0]);
        c.push(-next_u[1] + w.y[1]);
        let objective = contact_objective(&cands, Some(&self.mask), &next_u, &self.goal, self.opt.cost)
            + distance_objective(&next_u, &self.goal, &self.opt.cost.w_d);
        (objective, c)
    }
}

/// Replays the steps of `segment` open-loop through the plant transition
/// using the stored forces, returning the largest state discrepancy.
pub fn replay_error(plant: &Plant, segment: &TrajectorySegment) -> f64 {
    let mut worst: f64 = 0.0;
    let mut q = segment.start.clone();
    for step in &segment.steps {
        let cands = plant.contact_candidates(&q.q_u, &q.q_a);
        let contacts: Vec<(&Candidate<f64>, [f64; 2])> =
            step.forces.iter().map(|cf| (&cands[cf.patch], cf.f)).collect();
        let next = plant.quasi_dynamic_step(&q, &step.u, &contacts);
        for (a, b) in next.to_vec().iter().zip(step.state.to_vec()) {
            worst = worst.max((a - b).abs());
        }
        q = step.state.clone();
    }
    worst
}
