//! Smooth nonlinear programming with box bounds, equalities, inequalities
//! and relaxed complementarity constraints.
//!
//! The solver is a Powell-Hestenes-Rockafellar augmented Lagrangian method.
//! Each subproblem is minimized over the box by a projected BFGS method with
//! an Armijo search along the projection arc. Complementarity constraints
//! `c <= eps` are relaxed inequalities whose `eps` shrinks from
//! `comp_initial` to `comp_final` over the outer iterations.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::ad::{DiffScalar, Real, MAX_SEED};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `c(x) = 0`.
    Equality,
    /// `c(x) >= 0`.
    Inequality,
    /// `c(x) <= eps` with `eps` driven toward `comp_final`.
    Complementarity,
}

/// Objective and constraint values, with gradients when requested.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub objective: f64,
    pub constraints: Vec<f64>,
    /// Gradient of the objective; empty when not requested.
    pub gradient: Vec<f64>,
    /// One gradient per constraint; empty when not requested.
    pub jacobian: Vec<Vec<f64>>,
}

/// A smooth program `min f(x)` over a box, subject to typed constraints.
pub trait NlpProblem {
    fn n(&self) -> usize;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;
    fn kinds(&self) -> Vec<ConstraintKind>;
    /// Objective and constraint values at `x`, in the order of `kinds`.
    fn eval<T: Real>(&self, x: &[T]) -> (T, Vec<T>);

    /// Values and first derivatives. The default seeds every variable as a
    /// [`DiffScalar`] direction, so `n` must not exceed [`MAX_SEED`].
    fn eval_with_gradient(&self, x: &[f64]) -> Evaluation {
        assert!(x.len() <= MAX_SEED, "{} variables exceed the seed capacity", x.len());
        let seeded = DiffScalar::seed(x);
        let (f, c) = self.eval(&seeded);
        let n = x.len();
        let grad = |v: &DiffScalar| (0..n).map(|i| v.partial(i)).collect::<Vec<_>>();
        Evaluation {
            objective: f.value(),
            gradient: grad(&f),
            constraints: c.iter().map(|v| v.value()).collect(),
            jacobian: c.iter().map(grad).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpSettings {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_initial: f64,
    pub rho_max: f64,
    pub comp_initial: f64,
    pub comp_final: f64,
    /// Relative objective change below which a feasible iterate counts as
    /// stalled; two stalled outer iterations end the solve.
    pub tol_stall: f64,
    /// Initial Lagrangian Hessian approximation, as a multiple of identity.
    pub initial_curvature: f64,
}

impl Default for NlpSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_kkt: 1e-5,
            max_outer: 200,
            max_inner: 100,
            rho_initial: 10.0,
            rho_max: 1e9,
            comp_initial: 1e-2,
            comp_final: 1e-6,
            tol_stall: 1e-9,
            initial_curvature: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub outer: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub violation: f64,
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest violation over all constraints at `x`, complementarity
    /// measured against `comp_final`.
    pub violation: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub status: NlpStatus,
    /// One multiplier per constraint (sign convention of [`check_kkt`]).
    pub multipliers: Vec<f64>,
    pub constraints: Vec<f64>,
    pub log: Vec<IterationLog>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// Infinity norm of the projected Lagrangian gradient.
    pub stationarity: f64,
    pub feasibility: f64,
    /// Largest `|multiplier * slack|` over inequality-type constraints.
    pub complementarity: f64,
}

/// Violation of constraint `kind` with value `c`, relaxation `eps`.
fn constraint_violation(kind: ConstraintKind, c: f64, eps: f64) -> f64 {
    match kind {
        ConstraintKind::Equality => c.abs(),
        ConstraintKind::Inequality => (-c).max(0.0),
        ConstraintKind::Complementarity => (c - eps).max(0.0),
    }
}

/// Slack `g >= 0` form of an inequality-type constraint.
fn slack(kind: ConstraintKind, c: f64, eps: f64) -> f64 {
    match kind {
        ConstraintKind::Inequality => c,
        ConstraintKind::Complementarity => eps - c,
        ConstraintKind::Equality => unreachable!(),
    }
}

/// Gradient sign of the slack with respect to the constraint.
fn slack_sign(kind: ConstraintKind) -> f64 {
    if kind == ConstraintKind::Complementarity {
        -1.0
    } else {
        1.0
    }
}

fn check_finite(e: &Evaluation) -> Result<()> {
    if !e.objective.is_finite() || e.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "objective", index: 0 });
    }
    for (i, c) in e.constraints.iter().enumerate() {
        if !c.is_finite() || e.jacobian.get(i).is_some_and(|row| row.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite { what: "constraint", index: i });
        }
    }
    Ok(())
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

struct Augmented<'a, P: NlpProblem> {
    problem: &'a P,
    kinds: &'a [ConstraintKind],
    multipliers: &'a [f64],
    rho: f64,
    eps: f64,
}

impl<P: NlpProblem> Augmented<'_, P> {
    fn value_from(&self, f: f64, c: &[f64]) -> f64 {
        let mut v = f;
        for (i, &ci) in c.iter().enumerate() {
            let kind = self.kinds[i];
            let lam = self.multipliers[i];
            if kind == ConstraintKind::Equality {
                v += lam * ci + 0.5 * self.rho * ci * ci;
            } else {
                let g = slack(kind, ci, self.eps);
                let shifted = (lam / self.rho - g).max(0.0);
                v += 0.5 * self.rho * (shifted * shifted - (lam / self.rho).powi(2));
            }
        }
        v
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let (f, c) = self.problem.eval(x);
        if !f.is_finite() {
            return Err(Error::NonFinite { what: "objective", index: 0 });
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "constraint", index: i });
        }
        Ok(self.value_from(f, &c))
    }

    /// Gradient coefficient of every constraint and whether its penalty is
    /// active (contributes curvature).
    fn weights(&self, c: &[f64]) -> Vec<(f64, bool)> {
        c.iter()
            .enumerate()
            .map(|(i, &ci)| {
                let kind = self.kinds[i];
                let lam = self.multipliers[i];
                if kind == ConstraintKind::Equality {
                    (lam + self.rho * ci, true)
                } else {
                    let t = lam - self.rho * slack(kind, ci, self.eps);
                    (-t.max(0.0) * slack_sign(kind), t > 0.0)
                }
            })
            .collect()
    }

    fn gradient(&self, e: &Evaluation) -> Vec<f64> {
        let mut g = e.gradient.clone();
        for (i, &ci) in e.constraints.iter().enumerate() {
            let kind = self.kinds[i];
            let lam = self.multipliers[i];
            let w = if kind == ConstraintKind::Equality {
                lam + self.rho * ci
            } else {
                let s = slack(kind, ci, self.eps);
                -(lam - self.rho * s).max(0.0) * slack_sign(kind)
            };
            if w != 0.0 {
                for (gj, jj) in g.iter_mut().zip(&e.jacobian[i]) {
                    *gj += w * jj;
                }
            }
        }
        g
    }
}

/// Minimizes the augmented Lagrangian over the box; returns the final
/// evaluation and the inner iteration count.
///
/// The model Hessian is a damped BFGS approximation of the Lagrangian
/// curvature plus the exact Gauss-Newton curvature `rho grad c grad c^T` of
/// every penalized constraint, so large penalties do not degrade the steps.
fn minimize_box<P: NlpProblem>(
    aug: &Augmented<'_, P>,
    x: &mut Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    max_iter: usize,
    curvature: &mut DMatrix<f64>,
) -> Result<(Evaluation, usize)> {
    let n = x.len();
    let mut e = aug.problem.eval_with_gradient(x);
    check_finite(&e)?;
    let mut fx = aug.value_from(e.objective, &e.constraints);
    let mut g = aug.gradient(&e);
    for iter in 0..max_iter {
        if projected_gradient_norm(x, &g, lo, hi) <= tol {
            return Ok((e, iter));
        }
        // Variables held at a bound by the gradient, or pushed against it by
        // the Newton step, are fixed this iteration.
        // Bounds within a small fraction of the box width count as active.
        let near_lo: Vec<bool> = (0..n).map(|i| x[i] <= lo[i] + 1e-9 * (hi[i] - lo[i]).min(1.0)).collect();
        let near_hi: Vec<bool> = (0..n).map(|i| x[i] >= hi[i] - 1e-9 * (hi[i] - lo[i]).min(1.0)).collect();
        let mut free: Vec<usize> = (0..n)
            .filter(|&i| !((near_lo[i] && g[i] > 0.0) || (near_hi[i] && g[i] < 0.0)))
            .collect();
        let weights = aug.weights(&e.constraints);
        let mut d = vec![0.0; n];
        loop {
            d.iter_mut().for_each(|v| *v = 0.0);
            let nf = free.len();
            let mut h = DMatrix::from_fn(nf, nf, |a, b| curvature[(free[a], free[b])]);
            for (i, row) in e.jacobian.iter().enumerate() {
                if weights[i].1 {
                    for a in 0..nf {
                        let ra = row[free[a]];
                        if ra != 0.0 {
                            for b in 0..nf {
                                h[(a, b)] += aug.rho * ra * row[free[b]];
                            }
                        }
                    }
                }
            }
            let rhs = DVector::from_iterator(nf, free.iter().map(|&i| -g[i]));
            if let Some(step) = solve_regularized(h, &rhs) {
                for (a, &i) in free.iter().enumerate() {
                    d[i] = step[a];
                }
            }
            let before = free.len();
            free.retain(|&i| !((near_lo[i] && d[i] < 0.0) || (near_hi[i] && d[i] > 0.0)));
            if free.len() == before {
                break;
            }
        }
        if !(dot(&g, &d) < 0.0) {
            for i in 0..n {
                let blocked = (near_lo[i] && g[i] > 0.0) || (near_hi[i] && g[i] < 0.0);
                d[i] = if blocked { 0.0 } else { -g[i] };
            }
            if !(dot(&g, &d) < 0.0) {
                return Ok((e, iter));
            }
        }
        // Cap the first trial so it stays within the widest box extent.
        let reach = (0..n).map(|i| hi[i] - lo[i]).filter(|w| w.is_finite()).fold(0.0, f64::max);
        let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if reach > 0.0 && longest > reach { reach / longest } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lo, hi);
            let dx: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &dx);
            let ft = aug.value(&trial)?;
            if ft <= fx + 1e-4 * decrease.min(0.0) && decrease < 0.0 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            return Ok((e, iter));
        };
        let e_new = aug.problem.eval_with_gradient(&trial);
        check_finite(&e_new)?;
        // Lagrangian curvature pair with the constraint weights frozen at x.
        let lagrangian = |ev: &Evaluation| {
            let mut l = ev.gradient.clone();
            for (i, row) in ev.jacobian.iter().enumerate() {
                let w = weights[i].0;
                if w != 0.0 {
                    for (lj, rj) in l.iter_mut().zip(row) {
                        *lj += w * rj;
                    }
                }
            }
            l
        };
        let s_vec = DVector::from_iterator(n, trial.iter().zip(x.iter()).map(|(a, b)| a - b));
        let y_vec = DVector::from_vec(lagrangian(&e_new)) - DVector::from_vec(lagrangian(&e));
        damped_bfgs_update(curvature, &s_vec, &y_vec);
        *x = trial;
        fx = ft;
        g = aug.gradient(&e_new);
        e = e_new;
    }
    Ok((e, max_iter))
}

/// Solves `h d = rhs`, adding diagonal regularization until the Cholesky
/// factorization succeeds.
fn solve_regularized(mut h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(ch) = h.clone().cholesky() {
            let d = ch.solve(rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        let next = if shift == 0.0 { 1e-10 * scale } else { shift * 100.0 };
        for i in 0..n {
            h[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

/// Powell-damped BFGS update of a Hessian approximation.
fn damped_bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 0.0) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Total violation of `c` under relaxation `eps`.
fn violation(kinds: &[ConstraintKind], c: &[f64], eps: f64) -> f64 {
    kinds
        .iter()
        .zip(c)
        .map(|(&k, &ci)| constraint_violation(k, ci, eps))
        .fold(0.0, f64::max)
}

/// Solves `problem` from `x0` (projected onto the box).
pub fn solve<P: NlpProblem>(problem: &P, x0: &[f64], settings: &NlpSettings) -> Result<NlpSolution> {
    let n = problem.n();
    assert_eq!(x0.len(), n, "initial guess length");
    let lo = problem.lower();
    let hi = problem.upper();
    for i in 0..n {
        assert!(lo[i] <= hi[i], "bounds of variable {i} are inverted");
    }
    let kinds = problem.kinds();
    let mut x = x0.to_vec();
    project(&mut x, &lo, &hi);
    let mut multipliers = vec![0.0; kinds.len()];
    let mut rho = settings.rho_initial;
    let mut eps = settings.comp_initial.max(settings.comp_final);
    let mut inner_tol = (settings.tol_kkt * 1e3).min(1e-2).max(settings.tol_kkt);
    let mut previous_violation = f64::INFINITY;
    let mut previous_objective = f64::INFINITY;
    let mut stalled = 0;
    let mut iterations = 0;
    let mut log = Vec::new();
    let mut status = NlpStatus::MaxIterations;
    let mut outer = 0;
    let mut curvature = DMatrix::identity(n, n) * settings.initial_curvature;
    let mut last = problem.eval_with_gradient(&x);
    check_finite(&last)?;
    while outer < settings.max_outer {
        outer += 1;
        let aug = Augmented {
            problem,
            kinds: &kinds,
            multipliers: &multipliers,
            rho,
            eps,
        };
        let (e, inner) = minimize_box(&aug, &mut x, &lo, &hi, inner_tol, settings.max_inner, &mut curvature)?;
        iterations += inner;
        let v = violation(&kinds, &e.constraints, eps);
        log.push(IterationLog {
            outer,
            inner_iterations: inner,
            objective: e.objective,
            violation: v,
            rho,
        });
        let worst = (0..kinds.len())
            .max_by(|&a, &b| {
                constraint_violation(kinds[a], e.constraints[a], eps)
                    .total_cmp(&constraint_violation(kinds[b], e.constraints[b], eps))
            })
            .unwrap_or(0);
        debug!(
            "nlp outer {outer}: f = {:.6e}, violation = {v:.3e} (constraint {worst}), rho = {rho:.1e}, inner = {inner}",
            e.objective
        );
        // First-order multiplier update.
        for (i, &ci) in e.constraints.iter().enumerate() {
            let kind = kinds[i];
            multipliers[i] = if kind == ConstraintKind::Equality {
                multipliers[i] + rho * ci
            } else {
                (multipliers[i] - rho * slack(kind, ci, eps)).max(0.0)
            };
            multipliers[i] = multipliers[i].clamp(-1e12, 1e12);
        }
        let final_relaxation = eps <= settings.comp_final;
        let kkt = kkt_at(&e, &x, &lo, &hi, &kinds, &multipliers, eps);
        last = e;
        let f = last.objective;
        if final_relaxation && v <= settings.tol_feas && kkt.stationarity <= settings.tol_kkt {
            status = NlpStatus::Optimal;
            break;
        }
        // A feasible point whose objective no longer moves between outer
        // iterations is accepted: further multiplier updates only polish
        // stationarity at a cost the callers do not need.
        let flat = (f - previous_objective).abs() <= settings.tol_stall * (1.0 + f.abs());
        stalled = if final_relaxation && v <= settings.tol_feas && (flat || inner == 0) {
            stalled + 1
        } else {
            0
        };
        if stalled >= 2 {
            status = NlpStatus::Optimal;
            break;
        }
        previous_objective = f;
        if v > 0.25 * previous_violation && v > settings.tol_feas {
            rho = (rho * 10.0).min(settings.rho_max);
        }
        previous_violation = v;
        if v <= settings.tol_feas.max(eps) {
            eps = (eps * 0.1).max(settings.comp_final);
        }
        inner_tol = (inner_tol * 0.1).max(settings.tol_kkt * 0.1);
    }
    let true_violation = violation(&kinds, &last.constraints, settings.comp_final);
    if status != NlpStatus::Optimal && true_violation > settings.tol_feas.sqrt() {
        status = NlpStatus::Infeasible;
    }
    Ok(NlpSolution {
        objective: last.objective,
        violation: true_violation,
        iterations,
        outer_iterations: outer,
        status,
        multipliers,
        constraints: last.constraints,
        x,
        log,
    })
}

fn kkt_at(
    e: &Evaluation,
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    kinds: &[ConstraintKind],
    multipliers: &[f64],
    eps: f64,
) -> KktResiduals {
    let mut g = e.gradient.clone();
    let mut comp: f64 = 0.0;
    for (i, &ci) in e.constraints.iter().enumerate() {
        let kind = kinds[i];
        let w = if kind == ConstraintKind::Equality {
            multipliers[i]
        } else {
            comp = comp.max((multipliers[i] * slack(kind, ci, eps)).abs());
            -multipliers[i] * slack_sign(kind)
        };
        for (gj, jj) in g.iter_mut().zip(&e.jacobian[i]) {
            *gj += w * jj;
        }
    }
    KktResiduals {
        stationarity: projected_gradient_norm(x, &g, lo, hi),
        feasibility: violation(kinds, &e.constraints, eps),
        complementarity: comp,
    }
}

/// KKT residuals of `problem` at `x` with the given multipliers, using the
/// final complementarity relaxation of `settings`.
pub fn check_kkt<P: NlpProblem>(problem: &P, x: &[f64], multipliers: &[f64], settings: &NlpSettings) -> KktResiduals {
    let e = problem.eval_with_gradient(x);
    kkt_at(
        &e,
        x,
        &problem.lower(),
        &problem.upper(),
        &problem.kinds(),
        multipliers,
        settings.comp_final,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        target: Vec<f64>,
        lower: Vec<f64>,
        kinds: Vec<ConstraintKind>,
    }

    impl NlpProblem for Quadratic {
        fn n(&self) -> usize {
            self.target.len()
        }
        fn lower(&self) -> Vec<f64> {
            self.lower.clone()
        }
        fn upper(&self) -> Vec<f64> {
            vec![f64::INFINITY; self.n()]
        }
        fn kinds(&self) -> Vec<ConstraintKind> {
            self.kinds.clone()
        }
        fn eval<T: Real>(&self, x: &[T]) -> (T, Vec<T>) {
            let mut f = T::zero();
            for (xi, ti) in x.iter().zip(&self.target) {
                f += (*xi - *ti).powi2();
            }
            let c = match self.kinds.len() {
                0 => vec![],
                _ if self.n() == 1 => vec![x[0] - 1.0],
                _ => vec![x[0] + x[1] - 1.0],
            };
            (f, c)
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let p = Quadratic {
            target: vec![3.0],
            lower: vec![f64::NEG_INFINITY],
            kinds: vec![],
        };
        let s = solve(&p, &[0.0], &NlpSettings::default()).unwrap();
        assert_eq!(s.status, NlpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn active_inequality() {
        let p = Quadratic {
            target: vec![0.0],
            lower: vec![f64::NEG_INFINITY],
            kinds: vec![ConstraintKind::Inequality],
        };
        let settings = NlpSettings::default();
        let s = solve(&p, &[5.0], &settings).unwrap();
        assert_eq!(s.status, NlpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-6, "{:?}", s.x);
        let kkt = check_kkt(&p, &s.x, &s.multipliers, &settings);
        assert!(kkt.stationarity < 1e-5 && kkt.feasibility < 1e-6 && kkt.complementarity < 1e-6);
    }

    #[test]
    fn equality_constrained() {
        let p = Quadratic {
            target: vec![0.0, 0.0],
            lower: vec![f64::NEG_INFINITY; 2],
            kinds: vec![ConstraintKind::Equality],
        };
        let s = solve(&p, &[0.0, 0.0], &NlpSettings::default()).unwrap();
        assert_eq!(s.status, NlpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-6 && (s.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bound_constraint() {
        let p = Quadratic {
            target: vec![-2.0],
            lower: vec![0.5],
            kinds: vec![],
        };
        let s = solve(&p, &[3.0], &NlpSettings::default()).unwrap();
        assert_eq!(s.x[0], 0.5);
    }
}
