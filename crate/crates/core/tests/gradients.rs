mod common;

use common::central_difference;
use common::suites::cost_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmm_core::scenario::{scenario_1, torso_scenario};
use wmm_core::{Attachment, Vec2};

#[test]
fn composed_cost_gradients_match_finite_differences() {
    let report = cost_gradients(200, 1e-4, 21);
    assert!(report.checked > 100, "{report:?}");
    assert_eq!(report.failures, 0, "{report:?}");
}

#[test]
fn robot_point_jacobian_matches_finite_differences() {
    let sc = scenario_1(0.0).build().unwrap();
    let robot = &sc.plant.robot;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let q: Vec<f64> = (0..robot.n_joints()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let frames = robot.frames(&q);
        for patch in robot.contact_patches() {
            let world = Vec2::new(rng.gen_range(-0.5..1.0), rng.gen_range(-0.8..0.8));
            let local = robot.to_local(&frames, patch.attachment, world);
            let jac = robot.point_jacobian(&frames, patch.attachment, world);
            for (j, col) in jac.iter().enumerate() {
                let moved = |v: f64, axis: usize| {
                    let mut qq = q.clone();
                    qq[j] = v;
                    let p = robot.to_world(&robot.frames(&qq), patch.attachment, local);
                    if axis == 0 { p.x } else { p.y }
                };
                let fd = Vec2::new(central_difference(|v| moved(v, 0), q[j], 1e-6), central_difference(|v| moved(v, 1), q[j], 1e-6));
                assert!((fd - *col).norm() < 1e-8, "patch {:?} joint {j}: {fd:?} vs {col:?}", patch.attachment);
            }
        }
    }
}

#[test]
fn fixed_patches_have_no_joint_jacobian() {
    let sc = torso_scenario().build().unwrap();
    let cands = sc.plant.contact_candidates(&sc.q_init.q_u, &sc.q_init.q_a);
    let fixed: Vec<_> = cands.iter().filter(|c| c.attachment == Attachment::Fixed).collect();
    assert!(!fixed.is_empty());
    for c in fixed {
        assert!(c.j_rob.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }
}

#[test]
fn object_jacobian_matches_finite_differences() {
    let sc = scenario_1(0.0).build().unwrap();
    let plant = &sc.plant;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let q_u = [rng.gen_range(0.3..0.8), rng.gen_range(-0.4..0.4), rng.gen_range(-3.0..3.0)];
        let q_a: Vec<f64> = (0..plant.n_joints()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        for c in plant.contact_candidates(&q_u, &q_a) {
            // The object material point at S' carried along with the object.
            let (co, si) = (q_u[2].cos(), q_u[2].sin());
            let rel = c.prox.sp - Vec2::new(q_u[0], q_u[1]);
            let local = Vec2::new(co * rel.x + si * rel.y, -si * rel.x + co * rel.y);
            for i in 0..3 {
                let moved = |v: f64| {
                    let mut p = q_u;
                    p[i] = v;
                    let w = Vec2::new(p[0], p[1]) + local.rotate(p[2].cos(), p[2].sin());
                    [w.x, w.y]
                };
                let vel = Vec2::new(
                    central_difference(|v| moved(v)[0], q_u[i], 1e-6),
                    central_difference(|v| moved(v)[1], q_u[i], 1e-6),
                );
                assert!((vel.dot(c.prox.normal) - c.j_obj[0][i]).abs() < 1e-8);
                assert!((vel.dot(c.prox.tangent) - c.j_obj[1][i]).abs() < 1e-8);
            }
        }
    }
}
