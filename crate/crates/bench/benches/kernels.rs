use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmm_core::scenario::scenario_2;
use wmm_core::sim::{step, SimOptions};
use wmm_core::trajopt::TrajOpt;
use wmm_core::{
    polygon_segment_proximity, segment_segment_proximity, ConvexPolygonStruct, DiffScalar, SegmentStruct, Vec2,
};

fn proximity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut point = || Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let pairs: Vec<_> = (0..256)
        .map(|_| (SegmentStruct::new(point(), point(), 0.01), SegmentStruct::new(point(), point(), 0.02)))
        .collect();
    c.bench_function("segment_segment_proximity", |b| {
        b.iter(|| {
            for (s1, s2) in &pairs {
                black_box(segment_segment_proximity(s1, s2).dp);
            }
        })
    });
    let square = ConvexPolygonStruct::new(
        vec![Vec2::new(-0.1, -0.1), Vec2::new(0.1, -0.1), Vec2::new(0.1, 0.1), Vec2::new(-0.1, 0.1)],
        0.01,
    )
    .unwrap();
    c.bench_function("polygon_segment_proximity", |b| {
        b.iter(|| {
            for (s1, _) in &pairs {
                black_box(polygon_segment_proximity(s1, &square).dp);
            }
        })
    });
    let seeded = DiffScalar::seed(&[0.1, 0.2, 0.5, -0.3, -0.4, 0.6, 0.7, 0.1]);
    let v = |i: usize| Vec2::new(seeded[2 * i], seeded[2 * i + 1]);
    let (s1, s2) = (SegmentStruct::new(v(0), v(1), 0.01), SegmentStruct::new(v(2), v(3), 0.02));
    c.bench_function("segment_segment_proximity_gradient", |b| {
        b.iter(|| black_box(segment_segment_proximity(black_box(&s1), black_box(&s2)).dp))
    });
}

fn optimization(c: &mut Criterion) {
    let sc = scenario_2(0.0).build().unwrap();
    let opt = TrajOpt::new(&sc.plant, &sc.costs, &sc.phase);
    let mut group = c.benchmark_group("trajopt");
    group.sample_size(10);
    group.bench_function("placement_phase", |b| {
        b.iter(|| black_box(opt.placement_phase(&sc.q_init, &sc.goal, None).objective))
    });
    let placed = opt.placement_phase(&sc.q_init, &sc.goal, None);
    let q = placed.steps.last().map_or(&sc.q_init, |s| &s.state).clone();
    group.bench_function("manipulation_step", |b| {
        b.iter(|| black_box(opt.manipulation_step(&q, &sc.goal, None).is_some()))
    });
    group.finish();

    let u = vec![0.05; sc.plant.n_joints()];
    c.bench_function("simulator_step", |b| {
        b.iter(|| black_box(step(&sc.plant, &q, &u, &SimOptions::default()).is_ok()))
    });
}

criterion_group!(benches, proximity, optimization);
criterion_main!(benches);
