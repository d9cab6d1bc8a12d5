//! Closed-form proximity between rounded planar structures.
//!
//! A robot patch is a rounded segment `AB`; an object structure is a rounded
//! point, segment or convex polygon. Closest points are obtained without
//! iteration or branching on the geometry (apart from parameter clamps), so
//! every quantity is differentiable almost everywhere when evaluated with
//! [`DiffScalar`](crate::ad::DiffScalar).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::ad::{clamp01, Real};
use crate::error::{Error, Result};

/// Regularization added to the denominators of the projection parameters.
///
/// It only has to break the tie for exactly parallel or zero-length
/// segments; larger values bias the closest points of near-parallel pairs.
pub const REGULARIZATION: f64 = 1e-10;

/// Below this skeleton distance the contact normal falls back to a
/// geometric rule instead of `(S - H) / |S - H|`.
pub const NORMAL_FALLBACK_DISTANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec2<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Rotated by +90 degrees.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    pub fn rotate(self, c: T, s: T) -> Self {
        Self::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn value(self) -> Vec2<f64> {
        Vec2::new(self.x.value(), self.y.value())
    }
}

impl Vec2<f64> {
    pub fn lift<T: Real>(self) -> Vec2<T> {
        Vec2::new(T::cst(self.x), T::cst(self.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl<T: Real> Mul<f64> for Vec2<T> {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// A segment `AB` inflated by `radius`. `a == b` is allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentStruct<T = f64> {
    pub a: Vec2<T>,
    pub b: Vec2<T>,
    pub radius: f64,
}

impl<T: Real> SegmentStruct<T> {
    pub fn new(a: Vec2<T>, b: Vec2<T>, radius: f64) -> Self {
        Self { a, b, radius }
    }
}

/// Counter-clockwise convex polygon inflated by `radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygonStruct<T = f64> {
    vertices: Vec<Vec2<T>>,
    pub radius: f64,
}

impl<T: Real> ConvexPolygonStruct<T> {
    /// Checks the vertex count, repeated vertices and convexity (every
    /// consecutive edge pair must turn left).
    pub fn new(vertices: Vec<Vec2<T>>, radius: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Structure(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !(radius >= 0.0) {
            return Err(Error::Structure(format!("negative radius {radius}")));
        }
        let n = vertices.len();
        for i in 0..n {
            let p = vertices[i].value();
            let q = vertices[(i + 1) % n].value();
            let r = vertices[(i + 2) % n].value();
            if (q - p).norm() < 1e-9 {
                return Err(Error::Structure(format!("repeated vertex at index {}", (i + 1) % n)));
            }
            if (q - p).cross(r - q) <= 0.0 {
                return Err(Error::Structure(format!(
                    "vertices are not a counter-clockwise convex polygon (turn at vertex {})",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices, radius })
    }

    pub fn vertices(&self) -> &[Vec2<T>] {
        &self.vertices
    }

    /// Edge `i` runs from vertex `i` to vertex `i + 1` (cyclically).
    pub fn edge(&self, i: usize) -> (Vec2<T>, Vec2<T>) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    /// True when `p` lies strictly inside the skeleton polygon.
    pub fn contains(&self, p: Vec2<f64>) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (a, b) = self.edge(i);
            (b.value() - a.value()).cross(p - a.value()) > 0.0
        })
    }
}

/// Closest points between a robot segment (H side) and an object structure
/// (S side), before and after rounding.
#[derive(Clone, Copy, Debug)]
pub struct ProximityResult<T = f64> {
    /// Parameter of `H` along the robot segment.
    pub h: T,
    /// Parameter of `S` along the object segment (the last reduced chord for
    /// polygons).
    pub s: T,
    /// Polygon edge nearest to `S`, when the object is a polygon.
    pub edge: Option<usize>,
    pub hp: Vec2<T>,
    pub sp: Vec2<T>,
    /// Skeleton closest points.
    pub h_point: Vec2<T>,
    pub s_point: Vec2<T>,
    /// Skeleton distance `|H - S|`.
    pub d: T,
    /// Rounded (surface) distance; negative means penetration.
    pub dp: T,
    /// Unit vector from `H` toward `S`.
    pub normal: Vec2<T>,
    /// `normal` rotated by +90 degrees.
    pub tangent: Vec2<T>,
}

impl<T: Real> ProximityResult<T> {
    pub fn value(&self) -> ProximityResult<f64> {
        ProximityResult {
            h: self.h.value(),
            s: self.s.value(),
            edge: self.edge,
            hp: self.hp.value(),
            sp: self.sp.value(),
            h_point: self.h_point.value(),
            s_point: self.s_point.value(),
            d: self.d.value(),
            dp: self.dp.value(),
            normal: self.normal.value(),
            tangent: self.tangent.value(),
        }
    }

    /// Swap the roles of the two structures.
    pub fn swapped(&self) -> Self {
        Self {
            h: self.s,
            s: self.h,
            edge: None,
            hp: self.sp,
            sp: self.hp,
            h_point: self.s_point,
            s_point: self.h_point,
            d: self.d,
            dp: self.dp,
            normal: -self.normal,
            tangent: -self.tangent,
        }
    }
}

impl fmt::Display for ProximityResult<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "h = {:.9}", self.h)?;
        writeln!(f, "s = {:.9}", self.s)?;
        if let Some(e) = self.edge {
            writeln!(f, "edge = {e}")?;
        }
        writeln!(f, "H = ({:.9}, {:.9})", self.h_point.x, self.h_point.y)?;
        writeln!(f, "S = ({:.9}, {:.9})", self.s_point.x, self.s_point.y)?;
        writeln!(f, "d = {:.9}", self.d)?;
        writeln!(f, "H' = ({:.9}, {:.9})", self.hp.x, self.hp.y)?;
        writeln!(f, "S' = ({:.9}, {:.9})", self.sp.x, self.sp.y)?;
        writeln!(f, "d' = {:.9}", self.dp)?;
        writeln!(f, "n = ({:.9}, {:.9})", self.normal.x, self.normal.y)?;
        write!(f, "t = ({:.9}, {:.9})", self.tangent.x, self.tangent.y)
    }
}

/// Moves `H` and `S` toward each other by the rounding radii.
///
/// Returns `(H', S', d')`. The direction is taken from `normal`, which must
/// be the unit vector from `H` toward `S`.
pub fn round_proximity<T: Real>(
    h: Vec2<T>,
    s: Vec2<T>,
    d: T,
    normal: Vec2<T>,
    r_h: f64,
    r_s: f64,
) -> (Vec2<T>, Vec2<T>, T) {
    let hp = h + normal * r_h;
    let sp = s - normal * r_s;
    (hp, sp, d - r_h - r_s)
}

/// Unit direction from `h` to `s`, or `fallback` when they (nearly) coincide.
fn direction<T: Real>(h: Vec2<T>, s: Vec2<T>, fallback: Vec2<f64>) -> (T, Vec2<T>) {
    let hs = s - h;
    let d = hs.norm();
    if d.value() < NORMAL_FALLBACK_DISTANCE {
        (d, fallback.lift())
    } else {
        (d, hs.scale(T::one() / d))
    }
}

fn finish<T: Real>(
    h: T,
    s: T,
    h_point: Vec2<T>,
    s_point: Vec2<T>,
    fallback: Vec2<f64>,
    r_h: f64,
    r_s: f64,
) -> ProximityResult<T> {
    let (d, normal) = direction(h_point, s_point, fallback);
    let (hp, sp, dp) = round_proximity(h_point, s_point, d, normal, r_h, r_s);
    ProximityResult {
        h,
        s,
        edge: None,
        hp,
        sp,
        h_point,
        s_point,
        d,
        dp,
        normal,
        tangent: normal.perp(),
    }
}

/// Left unit normal of `ab`, or `+y` for a degenerate segment.
fn left_normal(a: Vec2<f64>, b: Vec2<f64>) -> Vec2<f64> {
    let ab = b - a;
    let n = ab.norm();
    if n < 1e-12 {
        Vec2::new(0.0, 1.0)
    } else {
        ab.perp() * (1.0 / n)
    }
}

/// Proximity between the segment `seg` and the point `c` rounded by `r_s`.
pub fn point_segment_proximity<T: Real>(
    seg: &SegmentStruct<T>,
    c: Vec2<T>,
    r_s: f64,
) -> ProximityResult<T> {
    let ab = seg.b - seg.a;
    let ac = c - seg.a;
    let h = clamp01(ab.dot(ac) / (ab.norm_sq() + REGULARIZATION));
    let h_point = seg.a + ab.scale(h);
    // Point through the segment: push along the segment's left normal.
    let fallback = left_normal(seg.a.value(), seg.b.value());
    finish(h, T::zero(), h_point, c, fallback, seg.radius, r_s)
}

/// Skeleton parameters `(h, s)` of the closest points between `AB` and `CD`.
///
/// Three clamped projections: `h0` is where `AB` meets the line through
/// `CD`; `s` projects that point onto `CD`; `h` projects `S` back onto `AB`.
pub fn segment_segment_parameters<T: Real>(
    a: Vec2<T>,
    b: Vec2<T>,
    c: Vec2<T>,
    d: Vec2<T>,
) -> (T, T) {
    let ab = b - a;
    let cd = d - c;
    let ac = c - a;
    let cd_perp = cd.perp();
    let ab_n = ab.dot(cd_perp);
    let ac_n = ac.dot(cd_perp);
    let h0 = clamp01(ab_n * ac_n / (ab_n * ab_n + REGULARIZATION));
    let s = clamp01(cd.dot(ab.scale(h0) - ac) / (cd.norm_sq() + REGULARIZATION));
    let h = clamp01(ab.dot(cd.scale(s) + ac) / (ab.norm_sq() + REGULARIZATION));
    (h, s)
}

/// Proximity between two rounded segments; `seg_h` is the robot side.
pub fn segment_segment_proximity<T: Real>(
    seg_h: &SegmentStruct<T>,
    seg_s: &SegmentStruct<T>,
) -> ProximityResult<T> {
    let (h, s) = segment_segment_parameters(seg_h.a, seg_h.b, seg_s.a, seg_s.b);
    let h_point = seg_h.a + (seg_h.b - seg_h.a).scale(h);
    let s_point = seg_s.a + (seg_s.b - seg_s.a).scale(s);
    let fallback = segment_fallback_normal(seg_h, seg_s);
    finish(h, s, h_point, s_point, fallback, seg_h.radius, seg_s.radius)
}

/// For intersecting skeletons: the normal of `CD` on the side facing away
/// from the robot segment's midpoint, i.e. pointing into the object.
fn segment_fallback_normal<T: Real>(seg_h: &SegmentStruct<T>, seg_s: &SegmentStruct<T>) -> Vec2<f64> {
    let c = seg_s.a.value();
    let d = seg_s.b.value();
    let n = left_normal(c, d);
    let mid = (seg_h.a.value() + seg_h.b.value()) * 0.5;
    if (mid - c).dot(n) > 0.0 {
        -n
    } else {
        n
    }
}

/// Proximity between a rounded segment and a rounded convex polygon.
///
/// The polygon boundary is a closed chain of `N` edges. Each reduction step
/// replaces the chain by the closest points of its edges to `AB`, which lie
/// inside the polygon and still contain the overall closest point, so after
/// `N - 1` steps a single segment-segment problem remains.
pub fn polygon_segment_proximity<T: Real>(
    seg: &SegmentStruct<T>,
    poly: &ConvexPolygonStruct<T>,
) -> ProximityResult<T> {
    let verts = poly.vertices();
    let n = verts.len();

    let inward_normal = |edge: usize| -> Vec2<f64> {
        let (p, q) = poly.edge(edge);
        left_normal(p.value(), q.value())
    };

    // A skeleton endpoint strictly inside the polygon: the structures overlap.
    for end in [seg.a, seg.b] {
        if poly.contains(end.value()) {
            let edge = nearest_edge(poly, end.value());
            let mut res = finish(
                T::zero(),
                T::zero(),
                end,
                end,
                inward_normal(edge),
                seg.radius,
                poly.radius,
            );
            res.d = T::zero();
            res.dp = T::cst(-(seg.radius + poly.radius));
            res.edge = Some(edge);
            return res;
        }
    }

    let mut chain: Vec<Vec2<T>> = verts.iter().copied().chain(std::iter::once(verts[0])).collect();
    for _ in 0..n - 1 {
        chain = chain
            .windows(2)
            .map(|w| {
                let (_, s) = segment_segment_parameters(seg.a, seg.b, w[0], w[1]);
                w[0] + (w[1] - w[0]).scale(s)
            })
            .collect();
    }
    debug_assert_eq!(chain.len(), 2);
    let (h, s) = segment_segment_parameters(seg.a, seg.b, chain[0], chain[1]);
    let h_point = seg.a + (seg.b - seg.a).scale(h);
    let s_point = chain[0] + (chain[1] - chain[0]).scale(s);
    let edge = nearest_edge(poly, s_point.value());
    let mut res = finish(
        h,
        s,
        h_point,
        s_point,
        inward_normal(edge),
        seg.radius,
        poly.radius,
    );
    res.edge = Some(edge);
    res
}

fn nearest_edge<T: Real>(poly: &ConvexPolygonStruct<T>, p: Vec2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for i in 0..poly.vertices().len() {
        let (a, b) = poly.edge(i);
        let seg = SegmentStruct::new(a.value(), b.value(), 0.0);
        let d = point_segment_proximity(&seg, p, 0.0).d;
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}
