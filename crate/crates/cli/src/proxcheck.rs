//! Closed-form proximity against an endpoint/edge brute-force oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmm_core::{polygon_segment_proximity, segment_segment_proximity, ConvexPolygonStruct, SegmentStruct, Vec2};

use crate::Failure;

const TOLERANCE: f64 = 1e-4;

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab.scale(t) - p).norm()
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Skeleton distance of two segments: zero when they cross, otherwise the
/// smallest of the four endpoint-to-segment distances.
fn oracle_segments(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    if segments_cross(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

fn inside(p: Vec2, poly: &[Vec2]) -> bool {
    (0..poly.len()).all(|i| cross(poly[(i + 1) % poly.len()] - poly[i], p - poly[i]) >= 0.0)
}

/// Skeleton distance of a segment to a solid convex polygon.
fn oracle_polygon(a: Vec2, b: Vec2, poly: &[Vec2]) -> f64 {
    if inside(a, poly) || inside(b, poly) {
        return 0.0;
    }
    (0..poly.len())
        .map(|i| oracle_segments(a, b, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

fn point(rng: &mut ChaCha8Rng) -> Vec2 {
    Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random convex polygon: sorted angles on a jittered circle.
fn polygon(rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let n = rng.gen_range(3..8);
    let center = point(rng).scale(0.5);
    let radius = rng.gen_range(0.1..0.6);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    if angles.len() < 3 {
        angles = vec![0.0, 2.1, 4.2];
    }
    angles
        .iter()
        .map(|t| center + Vec2::new(t.cos(), t.sin()).scale(radius))
        .collect()
}

pub fn run(trials: usize, seed: u64) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_seg: f64 = 0.0;
    let mut failed = 0;
    for _ in 0..trials {
        let (a, b, c, d) = (point(&mut rng), point(&mut rng), point(&mut rng), point(&mut rng));
        let (r1, r2) = (rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05));
        let got = segment_segment_proximity(&SegmentStruct::new(a, b, r1), &SegmentStruct::new(c, d, r2)).dp;
        let err = (got - (oracle_segments(a, b, c, d) - r1 - r2)).abs();
        worst_seg = worst_seg.max(err);
        failed += usize::from(!(err <= TOLERANCE));
    }
    let poly_trials = trials.div_ceil(10);
    let mut worst_poly: f64 = 0.0;
    for _ in 0..poly_trials {
        let verts = polygon(&mut rng);
        let (a, b) = (point(&mut rng), point(&mut rng));
        let (r1, r2) = (rng.gen_range(0.0..0.05), rng.gen_range(0.0..0.05));
        let poly = ConvexPolygonStruct::new(verts.clone(), r2).map_err(|e| Failure::Input(e.to_string()))?;
        let got = polygon_segment_proximity(&SegmentStruct::new(a, b, r1), &poly).dp;
        let err = (got - (oracle_polygon(a, b, &verts) - r1 - r2)).abs();
        worst_poly = worst_poly.max(err);
        failed += usize::from(!(err <= TOLERANCE));
    }
    println!("segment-segment: {trials} trials, worst error {worst_seg:.3e} m");
    println!("segment-polygon: {poly_trials} trials, worst error {worst_poly:.3e} m");
    if failed == 0 {
        println!("all within {TOLERANCE:e} m");
        Ok(())
    } else {
        Err(Failure::Task(format!("{failed} trials exceed {TOLERANCE:e} m")))
    }
}
