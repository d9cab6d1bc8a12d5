mod common;

use common::suites::transitions;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmm_core::scenario::scenario_1;
use wmm_core::sim::{lemke, rollout, step, SimOptions};
use wmm_core::{coulomb_residuals, PlantState};

/// Every complementary basis of a small LCP, returning the solutions.
fn enumerate_lcp(m: &DMatrix<f64>, q: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = q.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let basic: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut z = DVector::zeros(n);
        if !basic.is_empty() {
            let sub = DMatrix::from_fn(basic.len(), basic.len(), |r, c| m[(basic[r], basic[c])]);
            let rhs = DVector::from_iterator(basic.len(), basic.iter().map(|&i| -q[i]));
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            for (k, &i) in basic.iter().enumerate() {
                z[i] = sol[k];
            }
        }
        let w = m * &z + q;
        if z.iter().all(|&v| v >= -1e-10) && w.iter().all(|&v| v >= -1e-10) {
            found.push(z);
        }
    }
    found
}

#[test]
fn lemke_matches_basis_enumeration_on_p_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(1..7);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let skew = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // Positive definite symmetric part: a P-matrix with a unique solution.
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.1 + (&skew - skew.transpose());
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let oracle = enumerate_lcp(&m, &q);
        assert_eq!(oracle.len(), 1);
        let z = lemke(&m, &q, 100).expect("P-matrix LCPs are solvable");
        assert!((z - &oracle[0]).amax() < 1e-9);
    }
}

#[test]
fn lemke_reports_infeasible_problems() {
    // w = -z - 1 cannot be non-negative.
    let m = DMatrix::from_element(1, 1, -1.0);
    let q = DVector::from_element(1, -1.0);
    assert!(lemke(&m, &q, 100).is_none());
}

#[test]
fn planner_and_simulator_transitions_agree() {
    let report = transitions(200, 32);
    assert!(report.worst_gap <= 1e-10, "{report:?}");
    assert_eq!(report.inexact_free, 0);
}

#[test]
fn resting_state_stays_put() {
    let sc = scenario_1(0.0).build().unwrap();
    let zero = vec![0.0; sc.plant.n_joints()];
    let trace = rollout(&sc.plant, &sc.q_init, &[zero.clone(), zero], &SimOptions::default()).unwrap();
    assert!(trace.failure.is_none());
    for s in &trace.states {
        assert_eq!(s, &sc.q_init);
    }
}

#[test]
fn resolved_contacts_satisfy_coulomb_conditions() {
    let sc = scenario_1(0.0).build().unwrap();
    let plant = &sc.plant;
    let options = SimOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut with_force = 0;
    for _ in 0..300 {
        // Slide the object along the normal of its nearest patch until it
        // is 0.1 mm away, then command a random joint step.
        let q_a: Vec<f64> = (0..plant.n_joints()).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let cands = plant.contact_candidates(&sc.q_init.q_u, &q_a);
        let nearest = cands.iter().min_by(|a, b| a.prox.dp.total_cmp(&b.prox.dp)).unwrap();
        let shift = nearest.prox.normal * (nearest.prox.dp - 1e-4);
        let q_u = [sc.q_init.q_u[0] - shift.x, sc.q_init.q_u[1] - shift.y, sc.q_init.q_u[2]];
        if plant.contact_candidates(&q_u, &q_a).iter().any(|c| c.prox.dp < 0.0) {
            continue;
        }
        let q = PlantState::new(q_u, q_a);
        let u: Vec<f64> = plant.robot.u_max.iter().map(|m| rng.gen_range(-m..*m)).collect();
        let s = step(plant, &q, &u, &options).unwrap();
        for f in &s.forces {
            assert!(coulomb_residuals(f.f, f.v, plant.object.mu).violation() <= options.tolerance);
            with_force += usize::from(f.f[0] > 0.0);
        }
    }
    assert!(with_force > 0, "no sampled step produced a contact force");
}
