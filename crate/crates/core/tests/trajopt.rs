use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wmm_core::costs::distance_objective;
use wmm_core::planner::{plan, PlanContext};
use wmm_core::scenario::scenario_2;
use wmm_core::sim::{rollout, SimOptions};
use wmm_core::trajopt::{replay_error, within_tolerance, Phase, TrajOpt};
use wmm_core::coulomb_residuals;

#[test]
fn placement_is_force_free_and_reaches_contact() {
    let sc = scenario_2(0.0).build().unwrap();
    let opt = TrajOpt::new(&sc.plant, &sc.costs, &sc.phase);
    let placed = opt.placement_phase(&sc.q_init, &sc.goal, None);
    assert!(placed.in_contact);
    assert!(!placed.steps.is_empty());
    let mut q = sc.q_init.clone();
    for s in &placed.steps {
        assert_eq!(s.phase, Phase::Placement);
        // Realized placement steps may graze the object, but only within
        // the realization tolerance.
        let moved = s.state.q_u.iter().zip(&sc.q_init.q_u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved <= 1e-5);
        assert!(s.u.iter().zip(&sc.plant.robot.u_max).all(|(u, m)| u.abs() <= m + 1e-9));
        for (i, qa) in s.state.q_a.iter().enumerate() {
            assert!((qa - (q.q_a[i] + s.u[i])).abs() <= 1e-5);
        }
        q = s.state.clone();
    }
    let cands = sc.plant.contact_candidates(&q.q_u, &q.q_a);
    assert!(!opt.active_set(&cands).is_empty());
}

#[test]
fn extend_reduces_the_goal_error_and_replays_to_rounding() {
    let sc = scenario_2(0.0).build().unwrap();
    let opt = TrajOpt::new(&sc.plant, &sc.costs, &sc.phase);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seg = opt.extend(&sc.q_init, &sc.goal, 0, &mut rng);
    assert!(seg.success);
    assert!(seg.terminal_error < seg.initial_error);
    let end = seg.last_state();
    assert!((distance_objective(&end.q_u, &sc.goal, &sc.costs.w_d) - seg.terminal_error).abs() < 1e-12);
    assert!(seg.steps.iter().any(|s| s.phase == Phase::Manipulation));
    // Stored states come from the simulator's factorized solve, the replay
    // from the plant's own step.
    assert!(replay_error(&sc.plant, &seg) <= 1e-12);
    for s in seg.steps.iter().filter(|s| s.phase == Phase::Manipulation) {
        for f in &s.forces {
            assert!(coulomb_residuals(f.f, f.v, sc.plant.object.mu).violation() <= 1e-5);
        }
    }
}

#[test]
fn short_plan_is_verified_and_deterministic() {
    let sc = scenario_2(0.0).build().unwrap();
    let settings = sc.planner_with_seed(0);
    let ctx = PlanContext {
        plant: &sc.plant,
        cost: &sc.costs,
        phase: &sc.phase,
        settings: &settings,
    };
    let first = plan(&ctx, &sc.q_init, &sc.goal).unwrap();
    let path = first.path.as_ref().expect("scenario 2 at 0 deg is solved with seed 0");
    let trace = rollout(&sc.plant, &path.start, &path.inputs(), &SimOptions::default()).unwrap();
    assert!(trace.failure.is_none());
    assert!(within_tolerance(&trace.last_state().q_u, &sc.goal, settings.goal_tolerance));
    assert_eq!(trace.states, path.states());
    let second = plan(&ctx, &sc.q_init, &sc.goal).unwrap();
    assert_eq!(first.path, second.path);
    assert_eq!(first.tree, second.tree);
    assert_eq!(first.samples, second.samples);
}

#[test]
fn zero_timeout_reports_a_timeout() {
    let sc = scenario_2(0.0).build().unwrap();
    let settings = wmm_core::planner::PlannerSettings {
        timeout: 0.0,
        ..sc.planner_with_seed(0)
    };
    let ctx = PlanContext {
        plant: &sc.plant,
        cost: &sc.costs,
        phase: &sc.phase,
        settings: &settings,
    };
    let r = plan(&ctx, &sc.q_init, &sc.goal).unwrap();
    assert!(!r.success && r.stats.timed_out && r.path.is_none());
}

#[test]
fn infeasible_start_is_rejected() {
    let sc = scenario_2(0.0).build().unwrap();
    let settings = sc.planner_with_seed(0);
    let ctx = PlanContext {
        plant: &sc.plant,
        cost: &sc.costs,
        phase: &sc.phase,
        settings: &settings,
    };
    let mut q = sc.q_init.clone();
    // Put the object on top of the first arm's base link.
    q.q_u = [0.1, -0.25, 0.0];
    assert!(plan(&ctx, &q, &sc.goal).is_err());
    let outside = [5.0, 0.0, 0.0];
    assert!(plan(&ctx, &sc.q_init, &outside).is_err());
}
