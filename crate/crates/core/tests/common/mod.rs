//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use wmm_core::Vec2;

fn seg_point(a: Vec2, b: Vec2, h: f64) -> Vec2 {
    Vec2::new(a.x + h * (b.x - a.x), a.y + h * (b.y - a.y))
}

fn pair_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2, h: f64, s: f64) -> f64 {
    let p = seg_point(a, b, h);
    let q = seg_point(c, d, s);
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// Minimizes a unimodal function on `[lo, hi]` by ternary search.
fn ternary<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Grid minimum of the skeleton distance over `(h, s)` with `n` samples per
/// axis, returning `(d, h, s)`.
pub fn grid_segment_distance(a: Vec2, b: Vec2, c: Vec2, d: Vec2, n: usize) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..n {
        let h = i as f64 / (n - 1) as f64;
        for j in 0..n {
            let s = j as f64 / (n - 1) as f64;
            let dist = pair_distance(a, b, c, d, h, s);
            if dist < best.0 {
                best = (dist, h, s);
            }
        }
    }
    best
}

/// Coarse grid followed by nested ternary refinement around the best cell.
/// The distance is convex in `(h, s)`, so the refinement converges to the
/// global minimum.
pub fn segment_distance_oracle(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    let n = 41;
    let (g, h0, s0) = grid_segment_distance(a, b, c, d, n);
    let cell = 2.0 / (n - 1) as f64;
    let (hl, hh) = ((h0 - cell).max(0.0), (h0 + cell).min(1.0));
    let (sl, sh) = ((s0 - cell).max(0.0), (s0 + cell).min(1.0));
    let inner = |h: f64| ternary(|s| pair_distance(a, b, c, d, h, s), sl, sh).1;
    let local = ternary(inner, hl, hh).1;
    // The global minimum over the full square, also by nested ternary.
    let inner_full = |h: f64| ternary(|s| pair_distance(a, b, c, d, h, s), 0.0, 1.0).1;
    let global = ternary(inner_full, 0.0, 1.0).1;
    g.min(local).min(global)
}

pub fn point_segment_distance_oracle(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    ternary(|h| pair_distance(a, b, c, c, h, 0.0), 0.0, 1.0).1
}

/// Minimum over polygon edges of the segment-edge oracle distance, zero when
/// a segment endpoint lies inside the polygon.
pub fn polygon_distance_oracle(a: Vec2, b: Vec2, poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let inside = |p: Vec2| {
        (0..n).all(|i| {
            let (u, v) = (poly[i], poly[(i + 1) % n]);
            (v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x) > 0.0
        })
    };
    if inside(a) || inside(b) {
        return 0.0;
    }
    (0..n)
        .map(|i| segment_distance_oracle(a, b, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Random convex polygon: sorted angles on a jittered circle.
pub fn random_convex_polygon<R: rand::Rng>(rng: &mut R, n: usize, center: Vec2, radius: f64) -> Vec<Vec2> {
    loop {
        let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let verts: Vec<Vec2> = angles
            .iter()
            .map(|t| Vec2::new(center.x + radius * t.cos(), center.y + radius * t.sin()))
            .collect();
        if wmm_core::ConvexPolygonStruct::new(verts.clone(), 0.0).is_ok() {
            return verts;
        }
    }
}

/// Central finite difference.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Fourth-order central difference (Richardson combination of steps `h` and
/// `2h`).
pub fn richardson_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let d1 = central_difference(&f, x, h);
    let d2 = central_difference(&f, x, 2.0 * h);
    (4.0 * d1 - d2) / 3.0
}

/// Gradient of `f` at `x` by [`richardson_difference`] per coordinate.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            richardson_difference(
                |v| {
                    let mut y = x.to_vec();
                    y[i] = v;
                    f(&y)
                },
                x[i],
                h,
            )
        })
        .collect()
}

/// `max |a - b| / max |b|`, with the denominator floored at `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    diff / scale
}

/// True when the smooth function `g` is within configuration distance
/// `margin` of the level set `g = kink`, to first order.
pub fn near_kink(g: &wmm_core::DiffScalar, kink: f64, margin: f64) -> bool {
    use wmm_core::Real;
    let norm = g.partials().iter().map(|p| p * p).sum::<f64>().sqrt();
    (g.value() - kink).abs() <= margin * norm.max(1e-12)
}

pub mod suites;
