//! Quasi-dynamic simulator used to verify plans.
//!
//! Each step detects the active contacts, resolves their forces from a
//! linear complementarity problem with a polyhedral friction cone (solved
//! with Lemke's algorithm), and integrates with its own transition built
//! from dense matrices. Nothing is shared with the planner except the
//! contact geometry.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{plan, PlanContext};
use crate::plant::{coulomb_residuals, contact_velocity, Candidate, Plant, PlantState};
use crate::trajopt::{within_tolerance, ContactForce, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Friction scale applied to the plant (contact friction and support
    /// limit surface).
    pub mu_scale: f64,
    /// Contacts with rounded distance at or below this are resolved.
    pub activation_distance: f64,
    /// Largest Coulomb residual accepted from the complementarity solve.
    pub tolerance: f64,
    pub max_pivots: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mu_scale: 1.0,
            activation_distance: 1e-3,
            tolerance: 1e-8,
            max_pivots: 500,
        }
    }
}

/// Solves `w = M z + q`, `w, z >= 0`, `w^T z = 0` with Lemke's algorithm
/// (covering vector of ones, lexicographic ratio test). Returns `None` on
/// ray termination or when the pivot budget runs out.
pub fn lemke(m: &DMatrix<f64>, q: &DVector<f64>, max_pivots: usize) -> Option<DVector<f64>> {
    let n = q.len();
    if q.iter().all(|&v| v >= 0.0) {
        return Some(DVector::zeros(n));
    }
    // Columns: w (n), z (n), z0, rhs. Rows encode w - M z - e z0 = q.
    let cols = 2 * n + 2;
    let z0 = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = DMatrix::<f64>::zeros(n, cols);
    for i in 0..n {
        t[(i, i)] = 1.0;
        for j in 0..n {
            t[(i, n + j)] = -m[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();
    let pivot = |t: &mut DMatrix<f64>, r: usize, c: usize| {
        let p = t[(r, c)];
        for j in 0..cols {
            t[(r, j)] /= p;
        }
        for i in 0..n {
            if i != r {
                let f = t[(i, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        let v = t[(r, j)];
                        t[(i, j)] -= f * v;
                    }
                }
            }
        }
    };
    let complement = |v: usize| if v < n { v + n } else { v - n };

    let r = (0..n).min_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap_or(0);
    pivot(&mut t, r, z0);
    let mut entering = complement(basis[r]);
    basis[r] = z0;
    const PIVOT_TOL: f64 = 1e-12;
    for _ in 0..max_pivots {
        let candidates: Vec<usize> = (0..n).filter(|&i| t[(i, entering)] > PIVOT_TOL).collect();
        if candidates.is_empty() {
            return None;
        }
        // Lexicographic minimum of (rhs, B^-1 row) / pivot column; the
        // artificial variable leaves first on ties.
        let ratio = |i: usize, j: usize| t[(i, j)] / t[(i, entering)];
        let mut rows = candidates;
        let mut key = rhs;
        let mut lex = 0;
        loop {
            let min = rows.iter().map(|&i| ratio(i, key)).fold(f64::INFINITY, f64::min);
            let scale = 1e-12 * (1.0 + min.abs());
            rows.retain(|&i| ratio(i, key) <= min + scale);
            if rows.len() == 1 || rows.iter().any(|&i| basis[i] == z0) || lex == n {
                break;
            }
            key = lex;
            lex += 1;
        }
        let r = rows.iter().copied().find(|&i| basis[i] == z0).unwrap_or(rows[0]);
        pivot(&mut t, r, entering);
        let leaving = basis[r];
        basis[r] = entering;
        if leaving == z0 {
            let mut z = DVector::zeros(n);
            for (i, &b) in basis.iter().enumerate() {
                if (n..2 * n).contains(&b) {
                    z[b - n] = t[(i, rhs)].max(0.0);
                }
            }
            return Some(z);
        }
        entering = complement(leaving);
    }
    None
}

/// Block-diagonal `diag(L_u, K_a)`.
pub fn impedance_matrix(plant: &Plant) -> DMatrix<f64> {
    let nq = plant.n_q();
    let mut m = DMatrix::zeros(nq, nq);
    let l_u = plant.object.l_u();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = l_u[(i, j)];
        }
    }
    for (i, k) in plant.robot.k_a.iter().enumerate() {
        m[(3 + i, 3 + i)] = *k;
    }
    m
}

/// Solves `M (q+ - q) = K u + sum_k J_k^T f_k`. The object block is
/// factorized densely; the diagonal robot block is divided out with the
/// command added separately, so a force-free step moves the joints by
/// exactly `u`.
pub fn transition(plant: &Plant, q: &PlantState, u: &[f64], contacts: &[(&Candidate<f64>, [f64; 2])]) -> PlantState {
    let nq = plant.n_q();
    let mut generalized = DVector::zeros(nq);
    for (cand, f) in contacts {
        let jn = DVector::from_vec(cand.separation_row(0));
        let jt = DVector::from_vec(cand.separation_row(1));
        generalized += jn * f[0] + jt * f[1];
    }
    let object = Vector3::new(generalized[0], generalized[1], generalized[2]);
    let dq_u = plant
        .object
        .l_u()
        .lu()
        .solve(&object)
        .unwrap_or_else(|| Vector3::from_element(f64::NAN));
    let q_u = [q.q_u[0] + dq_u[0], q.q_u[1] + dq_u[1], q.q_u[2] + dq_u[2]];
    let q_a = (0..plant.n_joints())
        .map(|i| q.q_a[i] + u[i] + generalized[3 + i] / plant.robot.k_a[i])
        .collect();
    PlantState { q_u, q_a }
}

/// Result of one simulated step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub state: PlantState,
    pub forces: Vec<ContactForce>,
}

/// Penetration (m) tolerated before a contact must push. Grazing contacts
/// whose force-free gap is zero up to rounding admit both a zero-force
/// sliding solution and a wedged sticking one; the slack selects the first.
const GRAZING_SLACK: f64 = 1e-9;

/// Resolves contact forces at `q` for command `u` and advances one step.
pub fn step(plant: &Plant, q: &PlantState, u: &[f64], options: &SimOptions) -> Result<SimStep> {
    let cands = plant.contact_candidates(&q.q_u, &q.q_a);
    let active: Vec<usize> = (0..cands.len())
        .filter(|&k| cands[k].prox.dp <= options.activation_distance)
        .collect();
    if active.is_empty() {
        return Ok(SimStep {
            state: transition(plant, q, u, &[]),
            forces: Vec::new(),
        });
    }
    let m = active.len();
    let nq = plant.n_q();
    let normal = DMatrix::from_fn(m, nq, |r, c| cands[active[r]].separation_row(0)[c]);
    let tangent = DMatrix::from_fn(m, nq, |r, c| cands[active[r]].separation_row(1)[c]);
    let a = impedance_matrix(plant)
        .try_inverse()
        .ok_or_else(|| Error::ContactResolution {
            step: 0,
            reason: "singular impedance matrix".into(),
        })?;
    let free = transition(plant, q, u, &[]);
    let dq_free = DVector::from_iterator(nq, free.to_vec().iter().zip(q.to_vec()).map(|(a, b)| a - b));
    let nan = &normal * &a * normal.transpose();
    let nat = &normal * &a * tangent.transpose();
    let tan = &tangent * &a * normal.transpose();
    let tat = &tangent * &a * tangent.transpose();
    let n_free = &normal * &dq_free;
    let t_free = &tangent * &dq_free;
    let mu = plant.object.mu;
    let size = 4 * m;
    let mut lcp = DMatrix::zeros(size, size);
    let mut q_vec = DVector::zeros(size);
    for i in 0..m {
        for j in 0..m {
            lcp[(i, j)] = nan[(i, j)];
            lcp[(i, m + j)] = nat[(i, j)];
            lcp[(i, 2 * m + j)] = -nat[(i, j)];
            lcp[(m + i, j)] = tan[(i, j)];
            lcp[(m + i, m + j)] = tat[(i, j)];
            lcp[(m + i, 2 * m + j)] = -tat[(i, j)];
            lcp[(2 * m + i, j)] = -tan[(i, j)];
            lcp[(2 * m + i, m + j)] = -tat[(i, j)];
            lcp[(2 * m + i, 2 * m + j)] = tat[(i, j)];
        }
        lcp[(m + i, 3 * m + i)] = 1.0;
        lcp[(2 * m + i, 3 * m + i)] = 1.0;
        lcp[(3 * m + i, i)] = mu;
        lcp[(3 * m + i, m + i)] = -1.0;
        lcp[(3 * m + i, 2 * m + i)] = -1.0;
        q_vec[i] = cands[active[i]].prox.dp + n_free[i] + GRAZING_SLACK;
        q_vec[m + i] = t_free[i];
        q_vec[2 * m + i] = -t_free[i];
    }
    let z = lemke(&lcp, &q_vec, options.max_pivots).ok_or_else(|| Error::ContactResolution {
        step: 0,
        reason: format!("complementarity solve failed with {m} active contacts"),
    })?;
    let forces_raw: Vec<[f64; 2]> = (0..m).map(|i| [z[i], z[m + i] - z[2 * m + i]]).collect();
    let contacts: Vec<(&Candidate<f64>, [f64; 2])> =
        active.iter().zip(&forces_raw).map(|(&k, f)| (&cands[k], *f)).collect();
    let state = transition(plant, q, u, &contacts);
    let mut forces = Vec::with_capacity(m);
    for (i, &k) in active.iter().enumerate() {
        let v = contact_velocity(&cands[k], q, &state);
        let f = forces_raw[i];
        let violation = coulomb_residuals(f, v, mu).violation();
        if !(violation <= options.tolerance) {
            return Err(Error::ContactResolution {
                step: 0,
                reason: format!("patch {k}: Coulomb residual {violation:.3e} after complementarity solve"),
            });
        }
        forces.push(ContactForce { patch: k, f, v });
    }
    Ok(SimStep { state, forces })
}

/// Contact made or broken between two steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub step: usize,
    pub patch: usize,
    pub made: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// States including the initial one.
    pub states: Vec<PlantState>,
    /// Resolved forces per step.
    pub forces: Vec<Vec<ContactForce>>,
    pub events: Vec<ContactEvent>,
    /// Set when contact resolution failed; the trace ends at the last
    /// resolved state.
    pub failure: Option<String>,
}

impl Trace {
    pub fn last_state(&self) -> &PlantState {
        self.states.last().expect("trace holds the initial state")
    }
}

/// Executes `inputs` from `q_init` on `plant` with friction scaled by
/// `options.mu_scale`.
pub fn rollout(plant: &Plant, q_init: &PlantState, inputs: &[Vec<f64>], options: &SimOptions) -> Result<Trace> {
    for (i, u) in inputs.iter().enumerate() {
        if u.len() != plant.n_joints() {
            return Err(Error::Structure(format!("input {i} has {} entries", u.len())));
        }
        if u.iter().zip(&plant.robot.u_max).any(|(v, m)| !(v.abs() <= m + 1e-9)) {
            return Err(Error::Structure(format!("input {i} exceeds the joint step limit")));
        }
    }
    let scaled;
    let plant = if options.mu_scale == 1.0 {
        plant
    } else {
        scaled = Plant::new(plant.robot.clone(), plant.object.with_friction_scale(options.mu_scale)?);
        &scaled
    };
    let mut trace = Trace {
        states: vec![q_init.clone()],
        ..Trace::default()
    };
    let mut previous: Vec<usize> = Vec::new();
    for (i, u) in inputs.iter().enumerate() {
        let q = trace.last_state().clone();
        match step(plant, &q, u, options) {
            Ok(s) => {
                let now: Vec<usize> = s.forces.iter().map(|f| f.patch).collect();
                for &p in now.iter().filter(|p| !previous.contains(p)) {
                    trace.events.push(ContactEvent { step: i, patch: p, made: true });
                }
                for &p in previous.iter().filter(|p| !now.contains(p)) {
                    trace.events.push(ContactEvent { step: i, patch: p, made: false });
                }
                previous = now;
                trace.states.push(s.state);
                trace.forces.push(s.forces);
            }
            Err(e) => {
                trace.failure = Some(format!("step {i}: {e}"));
                break;
            }
        }
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplanSettings {
    /// Object-pose deviation from the plan (planner metric) that triggers
    /// a replan.
    pub eps_max: f64,
    pub budget: usize,
    /// Start-state penetration (m) accepted when replanning. Executed
    /// states satisfy only the linearized gap, so after a large joint step
    /// their true penetration can reach about a centimeter.
    pub start_penetration: f64,
}

impl Default for ReplanSettings {
    fn default() -> Self {
        Self {
            eps_max: 0.03,
            budget: 5,
            start_penetration: 0.02,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub success: bool,
    pub replans: usize,
    /// Executed states including the initial one.
    pub states: Vec<PlantState>,
    /// Largest deviation observed under each plan.
    pub deviations: Vec<f64>,
    pub failure: Option<String>,
}

/// Executes `initial` on the plant with perturbed friction and replans from
/// the simulated state (with the nominal model) whenever the object strays
/// more than `eps_max` from the plan or the plan ends short of the goal.
pub fn deviation_replan(
    ctx: &PlanContext,
    initial: &Trajectory,
    goal: &[f64; 3],
    replan: &ReplanSettings,
    options: &SimOptions,
) -> Result<ExecutionLog> {
    let perturbed = Plant::new(ctx.plant.robot.clone(), ctx.plant.object.with_friction_scale(options.mu_scale)?);
    let unscaled = SimOptions {
        mu_scale: 1.0,
        ..options.clone()
    };
    let tol = ctx.settings.goal_tolerance;
    let mut log = ExecutionLog {
        states: vec![initial.start.clone()],
        ..ExecutionLog::default()
    };
    let mut current = initial.clone();
    loop {
        let mut q = log.states.last().cloned().unwrap_or_default();
        let mut worst: f64 = 0.0;
        let mut deviated = false;
        for planned in &current.steps {
            let s = match step(&perturbed, &q, &planned.u, &unscaled) {
                Ok(s) => s,
                Err(e) => {
                    log.failure = Some(e.to_string());
                    log.deviations.push(worst);
                    return Ok(log);
                }
            };
            q = s.state;
            log.states.push(q.clone());
            let dev = ctx.settings.distance(&q.q_u, &planned.state.q_u);
            worst = worst.max(dev);
            if dev > replan.eps_max {
                deviated = true;
                break;
            }
        }
        log.deviations.push(worst);
        if !deviated && within_tolerance(&q.q_u, goal, tol) {
            log.success = true;
            return Ok(log);
        }
        if log.replans >= replan.budget {
            log.failure = Some("replan budget exhausted".into());
            return Ok(log);
        }
        log.replans += 1;
        let settings = crate::planner::PlannerSettings {
            seed: ctx.settings.seed.wrapping_add(log.replans as u64),
            start_penetration: replan.start_penetration.max(ctx.settings.start_penetration),
            ..ctx.settings.clone()
        };
        let sub = PlanContext {
            settings: &settings,
            ..*ctx
        };
        // Contact load can deflect a joint slightly past its stop; the new
        // plan starts from the measured state projected onto the limits.
        let mut start = q.clone();
        let robot = &ctx.plant.robot;
        for (v, (&lo, &hi)) in start.q_a.iter_mut().zip(robot.q_lb.iter().zip(&robot.q_ub)) {
            *v = v.clamp(lo, hi);
        }
        let result = match plan(&sub, &start, goal) {
            Ok(r) => r,
            Err(e) => {
                log.failure = Some(format!("replan {}: {e}", log.replans));
                return Ok(log);
            }
        };
        match result.path {
            Some(path) => current = path,
            None => {
                log.failure = Some(format!("replan {} found no path", log.replans));
                return Ok(log);
            }
        }
    }
}
