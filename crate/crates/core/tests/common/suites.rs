//! Randomized checks shared by the module tests (small counts) and the
//! acceptance suite (full counts).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmm_core::costs::{contact_objective, distance_objective, reference_force, CostDesign, CostParams};
use wmm_core::proximity::REGULARIZATION;
use wmm_core::scenario::scenario_1;
use wmm_core::sim::transition;
use wmm_core::{
    point_segment_proximity, polygon_segment_proximity, segment_segment_proximity, Candidate, ConvexPolygonStruct,
    DiffScalar, Plant, PlantState, Real, SegmentStruct, Vec2,
};

use super::{near_kink, numeric_gradient, polygon_distance_oracle, random_convex_polygon, relative_error, segment_distance_oracle};

/// Configurations closer than this to a clamp or atan2 kink are excluded
/// from gradient checks.
pub const KINK_MARGIN: f64 = 1e-4;

const FD_STEP: f64 = 1e-6;

fn point<R: Rng>(rng: &mut R) -> Vec2 {
    Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub failures: usize,
    pub worst_segment: f64,
    pub worst_polygon: f64,
}

/// Closed-form rounded distances against the brute-force oracles.
pub fn proximity_oracle(segments: usize, polygons: usize, tolerance: f64, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for _ in 0..segments {
        let (a, b, c, d) = (point(&mut rng), point(&mut rng), point(&mut rng), point(&mut rng));
        let (r1, r2) = (rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05));
        let got = segment_segment_proximity(&SegmentStruct::new(a, b, r1), &SegmentStruct::new(c, d, r2)).dp;
        let err = (got - (segment_distance_oracle(a, b, c, d) - r1 - r2)).abs();
        report.worst_segment = report.worst_segment.max(err);
        report.failures += usize::from(!(err <= tolerance));
    }
    for _ in 0..polygons {
        let n = rng.gen_range(3..9);
        let center = point(&mut rng) * 0.5;
        let radius = rng.gen_range(0.1..0.6);
        let verts = random_convex_polygon(&mut rng, n, center, radius);
        let (a, b) = (point(&mut rng), point(&mut rng));
        let (r1, r2) = (rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05));
        let poly = ConvexPolygonStruct::new(verts.clone(), r2).expect("oracle polygons are convex");
        let got = polygon_segment_proximity(&SegmentStruct::new(a, b, r1), &poly).dp;
        let err = (got - (polygon_distance_oracle(a, b, &verts) - r1 - r2)).abs();
        report.worst_polygon = report.worst_polygon.max(err);
        report.failures += usize::from(!(err <= tolerance));
    }
    report
}

#[derive(Debug, Default)]
pub struct GradientReport {
    pub checked: usize,
    pub excluded: usize,
    pub failures: usize,
    pub worst: f64,
}

impl GradientReport {
    fn record(&mut self, err: f64, tolerance: f64) {
        self.checked += 1;
        self.worst = self.worst.max(err);
        self.failures += usize::from(!(err <= tolerance));
    }
}

fn vec2<T: Real>(x: &[T], i: usize) -> Vec2<T> {
    Vec2::new(x[2 * i], x[2 * i + 1])
}

/// Rounded distance of segment `x[0..4]` to segment `x[4..8]`, or to the
/// point `x[4..6]` when `x` has six entries.
fn pair_distance<T: Real>(x: &[T], r1: f64, r2: f64) -> T {
    let seg = SegmentStruct::new(vec2(x, 0), vec2(x, 1), r1);
    if x.len() == 6 {
        point_segment_proximity(&seg, vec2(x, 2), r2).dp
    } else {
        segment_segment_proximity(&seg, &SegmentStruct::new(vec2(x, 2), vec2(x, 3), r2)).dp
    }
}

/// Unclamped projection parameters and the skeleton distance, whose kinks
/// (0 and 1 for the parameters, 0 for the distance) bound the smooth
/// region of the closed form. The distance is screened by value: it is
/// Lipschitz in the configuration but its regularized slope vanishes at a
/// crossing, so the first-order estimate of [`near_kink`] misses it.
fn pair_kinks(x: &[DiffScalar]) -> (Vec<DiffScalar>, DiffScalar) {
    let (a, b, c) = (vec2(x, 0), vec2(x, 1), vec2(x, 2));
    let ab = b - a;
    let ac = c - a;
    if x.len() == 6 {
        let h = ab.dot(ac) / (ab.norm_sq() + REGULARIZATION);
        let p = a + ab.scale(h.clamp_to(0.0, 1.0));
        return (vec![h], (c - p).norm());
    }
    let d = vec2(x, 3);
    let cd = d - c;
    let ab_n = ab.dot(cd.perp());
    let ac_n = ac.dot(cd.perp());
    let h0 = ab_n * ac_n / (ab_n * ab_n + REGULARIZATION);
    let s = cd.dot(ab.scale(h0.clamp_to(0.0, 1.0)) - ac) / (cd.norm_sq() + REGULARIZATION);
    let h = ab.dot(cd.scale(s.clamp_to(0.0, 1.0)) + ac) / (ab.norm_sq() + REGULARIZATION);
    let hp = a + ab.scale(h.clamp_to(0.0, 1.0));
    let sp = c + cd.scale(s.clamp_to(0.0, 1.0));
    (vec![h0, s, h], (sp - hp).norm())
}

/// AD against finite-difference gradients of the rounded distance over
/// segment-segment (even trials) and point-segment (odd trials) pairs.
pub fn proximity_gradients(trials: usize, tolerance: f64, seed: u64) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport::default();
    for i in 0..trials {
        let n = if i % 2 == 0 { 8 } else { 6 };
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (r1, r2) = (rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05));
        let seeded = DiffScalar::seed(&x);
        let (params, dist) = pair_kinks(&seeded);
        let near = params
            .iter()
            .any(|p| near_kink(p, 0.0, KINK_MARGIN) || near_kink(p, 1.0, KINK_MARGIN))
            || dist.value() <= KINK_MARGIN;
        if near {
            report.excluded += 1;
            continue;
        }
        let ad = pair_distance(&seeded, r1, r2).partials().to_vec();
        let fd = numeric_gradient(|y| pair_distance(y, r1, r2), &x, FD_STEP);
        report.record(relative_error(&ad, &fd, 1e-12), tolerance);
    }
    report
}

/// Contact objective of the configured design plus the goal-distance term.
fn composed_cost<T: Real>(plant: &Plant, q: &[T], goal: &[f64; 3], params: &CostParams) -> T {
    let q_u = [q[0], q[1], q[2]];
    let cands = plant.contact_candidates(&q_u, &q[3..]);
    contact_objective(&cands, None, &q_u, goal, params) + distance_objective(&q_u, goal, &params.w_d)
}

/// Whether any candidate sits near a kink of its proximity projection, its
/// normal, the reference-force saturation or the reference-force angle.
fn cost_near_kink(plant: &Plant, q: &[DiffScalar], cands: &[Candidate<DiffScalar>], goal: &[f64; 3], params: &CostParams) -> bool {
    let q_u = [q[0], q[1], q[2]];
    let frames = plant.robot.frames(&q[3..]);
    let center = Vec2::new(q[0], q[1]);
    cands.iter().any(|c| {
        let seg = plant.robot.patch_world(&frames, &plant.robot.contact_patches()[c.patch]);
        let ab = seg.b - seg.a;
        let h = ab.dot(center - seg.a) / (ab.norm_sq() + REGULARIZATION);
        if near_kink(&h, 0.0, KINK_MARGIN) || near_kink(&h, 1.0, KINK_MARGIN) || c.prox.d.value() <= KINK_MARGIN {
            return true;
        }
        if params.design == CostDesign::Baseline {
            return false;
        }
        let f = reference_force(c, &q_u, goal);
        let ratio = f[0] / params.f_lim;
        let magnitude = (f[0] * f[0] + f[1] * f[1]).sqrt();
        near_kink(&ratio, 0.0, KINK_MARGIN)
            || near_kink(&ratio, 1.0, KINK_MARGIN)
            || near_kink(&magnitude, 0.0, KINK_MARGIN)
            || (f[0].value() < 0.0 && near_kink(&f[1], 0.0, KINK_MARGIN))
    })
}

/// AD against finite-difference gradients of the composed contact and
/// distance cost over the full state, alternating the two cost designs.
pub fn cost_gradients(trials: usize, tolerance: f64, seed: u64) -> GradientReport {
    let sc = scenario_1(0.0).build().expect("built-in scenario");
    let plant = &sc.plant;
    let limit = plant.robot.q_ub[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport::default();
    for i in 0..trials {
        let params = CostParams {
            design: if i % 2 == 0 { CostDesign::Manipulability } else { CostDesign::Baseline },
            ..sc.costs.clone()
        };
        let mut x = vec![rng.gen_range(0.3..0.8), rng.gen_range(-0.4..0.4), rng.gen_range(-1.5..1.5)];
        x.extend((0..plant.n_joints()).map(|_| rng.gen_range(-0.5 * limit..0.5 * limit)));
        let seeded = DiffScalar::seed(&x);
        let q_u = [seeded[0], seeded[1], seeded[2]];
        let cands = plant.contact_candidates(&q_u, &seeded[3..]);
        if cost_near_kink(plant, &seeded, &cands, &sc.goal, &params) {
            report.excluded += 1;
            continue;
        }
        let ad = composed_cost(plant, &seeded, &sc.goal, &params).partials().to_vec();
        let fd = numeric_gradient(|y| composed_cost(plant, y, &sc.goal, &params), &x, FD_STEP);
        report.record(relative_error(&ad, &fd, 1e-8), tolerance);
    }
    report
}

#[derive(Debug, Default)]
pub struct TransitionReport {
    /// Largest planner/simulator state difference.
    pub worst_gap: f64,
    /// Triples whose force-free robot update differs from `q_a + u` in any
    /// bit.
    pub inexact_free: usize,
}

/// Random `(state, u, forces)` triples through the planner-side transition
/// (plain and differentiable) and the simulator's factorized solve.
pub fn transitions(trials: usize, seed: u64) -> TransitionReport {
    let sc = scenario_1(0.0).build().expect("built-in scenario");
    let plant = &sc.plant;
    let limit = plant.robot.q_ub[0];
    let mu = plant.object.mu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TransitionReport::default();
    for _ in 0..trials {
        let q = PlantState::new(
            [rng.gen_range(0.3..0.8), rng.gen_range(-0.4..0.4), rng.gen_range(-3.0..3.0)],
            (0..plant.n_joints()).map(|_| rng.gen_range(-limit..limit)).collect(),
        );
        let u: Vec<f64> = plant.robot.u_max.iter().map(|m| rng.gen_range(-m..*m)).collect();
        let cands = plant.contact_candidates(&q.q_u, &q.q_a);
        let mut contacts: Vec<(&Candidate<f64>, [f64; 2])> = Vec::new();
        for c in &cands {
            if rng.gen_bool(0.5) {
                let f_n = rng.gen_range(0.0..2.0);
                contacts.push((c, [f_n, rng.gen_range(-mu * f_n..=mu * f_n)]));
            }
        }
        let planner = plant.quasi_dynamic_step(&q, &u, &contacts);
        let simulator = transition(plant, &q, &u, &contacts);
        let seeded = DiffScalar::seed(&u);
        let lifted: Vec<(&Candidate<f64>, [DiffScalar; 2])> = contacts
            .iter()
            .map(|(c, f)| (*c, f.map(DiffScalar::constant)))
            .collect();
        let q_u = q.q_u.map(DiffScalar::constant);
        let q_a: Vec<DiffScalar> = q.q_a.iter().map(|&v| DiffScalar::constant(v)).collect();
        let (ad_u, ad_a) = plant.apply_forces(&q_u, &q_a, &seeded, &lifted);
        let differentiable: Vec<f64> = ad_u.iter().chain(&ad_a).map(|v| v.value()).collect();
        for ((a, b), c) in planner.to_vec().iter().zip(simulator.to_vec()).zip(differentiable) {
            report.worst_gap = report.worst_gap.max((a - b).abs()).max((a - c).abs());
        }
        let free_planner = plant.quasi_dynamic_step(&q, &u, &[]);
        let free_sim = transition(plant, &q, &u, &[]);
        let exact = (0..u.len()).all(|i| {
            let expected = q.q_a[i] + u[i];
            free_planner.q_a[i].to_bits() == expected.to_bits() && free_sim.q_a[i].to_bits() == expected.to_bits()
        }) && free_sim.q_u == q.q_u
            && free_planner.q_u == q.q_u;
        report.inexact_free += usize::from(!exact);
    }
    report
}
