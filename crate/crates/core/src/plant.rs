//! Planar robot-plus-object plant.
//!
//! The state is the object pose `q_u = (x, y, theta)` followed by the robot
//! joint angles `q_a`. Contact frames follow one convention throughout: the
//! normal points from the robot point `H'` toward the object point `S'`, a
//! contact force `(f_n, f_t)` is the force the robot applies to the object
//! expressed in that frame, and `f_n >= 0` pushes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::proximity::{
    point_segment_proximity, polygon_segment_proximity, segment_segment_proximity,
    ConvexPolygonStruct, ProximityResult, SegmentStruct, Vec2,
};

/// What a patch is rigidly attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Attachment {
    /// The world (torso, base plate): never moves.
    Fixed,
    Link { chain: usize, link: usize },
}

/// A rounded segment expressed in the frame of its attachment. Link frames
/// have their origin on the link's joint and their x axis along the link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub attachment: Attachment,
    pub a: Vec2,
    pub b: Vec2,
    pub radius: f64,
}

/// A planar serial chain of revolute joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub base: Vec2,
    /// Orientation of the first link at zero joint angle.
    pub base_angle: f64,
    pub links: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    chains: Vec<Chain>,
    joint_offset: Vec<usize>,
    n_joints: usize,
    pub q_lb: Vec<f64>,
    pub q_ub: Vec<f64>,
    pub u_max: Vec<f64>,
    pub k_a: Vec<f64>,
    contact_patches: Vec<Patch>,
    collision_patches: Vec<Patch>,
    collision_pairs: Vec<(usize, usize)>,
}

/// Everything needed to build a [`RobotModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub chains: Vec<Chain>,
    pub q_lb: Vec<f64>,
    pub q_ub: Vec<f64>,
    pub u_max: Vec<f64>,
    pub k_a: Vec<f64>,
    pub contact_patches: Vec<Patch>,
    pub collision_patches: Vec<Patch>,
}

pub const DEFAULT_LINKS: [f64; 3] = [0.30, 0.30, 0.15];
pub const DEFAULT_BASE_Y: f64 = 0.25;
pub const DEFAULT_CONTACT_RADIUS: f64 = 0.03;
pub const DEFAULT_COLLISION_RADIUS: f64 = 0.035;
pub const DEFAULT_JOINT_LIMIT: f64 = 2.6;
pub const DEFAULT_U_MAX: f64 = 0.1;
pub const DEFAULT_K_A: f64 = 100.0;

impl RobotSpec {
    /// Two planar arms with bases at `(0, -0.25)` and `(0, 0.25)`, both
    /// pointing along +x at zero joint angles. Each link carries two
    /// half-link contact patches and one full-link collision patch.
    pub fn dual_arm(links: &[f64]) -> Self {
        let bases = [Vec2::new(0.0, -DEFAULT_BASE_Y), Vec2::new(0.0, DEFAULT_BASE_Y)];
        Self::planar_arms(&bases, &[0.0, 0.0], links, 2, DEFAULT_CONTACT_RADIUS, DEFAULT_COLLISION_RADIUS)
    }

    /// Identical serial arms, one per base, with `patches_per_link` equal
    /// contact patches and one collision patch per link.
    pub fn planar_arms(
        bases: &[Vec2],
        base_angles: &[f64],
        links: &[f64],
        patches_per_link: usize,
        contact_radius: f64,
        collision_radius: f64,
    ) -> Self {
        let chains = bases
            .iter()
            .zip(base_angles)
            .map(|(&base, &base_angle)| Chain {
                base,
                base_angle,
                links: links.to_vec(),
            })
            .collect::<Vec<_>>();
        let n = chains.len() * links.len();
        let mut contact_patches = Vec::new();
        let mut collision_patches = Vec::new();
        for chain in 0..chains.len() {
            for (link, &len) in links.iter().enumerate() {
                let attachment = Attachment::Link { chain, link };
                let step = len / patches_per_link as f64;
                for p in 0..patches_per_link {
                    contact_patches.push(Patch {
                        attachment,
                        a: Vec2::new(p as f64 * step, 0.0),
                        b: Vec2::new((p + 1) as f64 * step, 0.0),
                        radius: contact_radius,
                    });
                }
                collision_patches.push(Patch {
                    attachment,
                    a: Vec2::new(0.0, 0.0),
                    b: Vec2::new(len, 0.0),
                    radius: collision_radius,
                });
            }
        }
        Self {
            chains,
            q_lb: vec![-DEFAULT_JOINT_LIMIT; n],
            q_ub: vec![DEFAULT_JOINT_LIMIT; n],
            u_max: vec![DEFAULT_U_MAX; n],
            k_a: vec![DEFAULT_K_A; n],
            contact_patches,
            collision_patches,
        }
    }

    /// Adds an immobile world patch used both for contact and self-collision.
    pub fn with_fixed_patch(mut self, a: Vec2, b: Vec2, radius: f64) -> Self {
        let patch = Patch {
            attachment: Attachment::Fixed,
            a,
            b,
            radius,
        };
        self.contact_patches.push(patch);
        self.collision_patches.push(patch);
        self
    }
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self::dual_arm(&DEFAULT_LINKS)
    }
}

/// World-frame joint origins and link orientations of every chain.
#[derive(Clone, Debug)]
pub struct Frames<T> {
    /// Per chain: the base followed by the origin of every subsequent joint
    /// and finally the chain tip.
    pub origins: Vec<Vec<Vec2<T>>>,
    /// Per chain and link: `(cos, sin)` of the absolute link angle.
    pub rotations: Vec<Vec<(T, T)>>,
}

impl RobotModel {
    pub fn new(spec: RobotSpec) -> Result<Self> {
        let mut joint_offset = Vec::with_capacity(spec.chains.len());
        let mut n_joints = 0;
        for chain in &spec.chains {
            if chain.links.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::Structure("link lengths must be positive".into()));
            }
            joint_offset.push(n_joints);
            n_joints += chain.links.len();
        }
        for (name, v) in [
            ("q_lb", &spec.q_lb),
            ("q_ub", &spec.q_ub),
            ("u_max", &spec.u_max),
            ("k_a", &spec.k_a),
        ] {
            if v.len() != n_joints {
                return Err(Error::Structure(format!(
                    "{name} has {} entries, robot has {n_joints} joints",
                    v.len()
                )));
            }
        }
        for i in 0..n_joints {
            if !(spec.q_lb[i] < spec.q_ub[i]) {
                return Err(Error::Structure(format!("joint {i}: q_lb must be below q_ub")));
            }
            if !(spec.u_max[i] > 0.0) {
                return Err(Error::Structure(format!("joint {i}: u_max must be positive")));
            }
            if !(spec.k_a[i] > 0.0) {
                return Err(Error::Structure(format!("joint {i}: stiffness must be positive")));
            }
        }
        for p in spec.contact_patches.iter().chain(&spec.collision_patches) {
            if let Attachment::Link { chain, link } = p.attachment {
                if chain >= spec.chains.len() || link >= spec.chains[chain].links.len() {
                    return Err(Error::Structure(format!(
                        "patch references missing link {link} of chain {chain}"
                    )));
                }
            }
            if !(p.radius >= 0.0) {
                return Err(Error::Structure("patch radius must be non-negative".into()));
            }
        }
        let mut collision_pairs = Vec::new();
        let cp = &spec.collision_patches;
        for i in 0..cp.len() {
            for j in i + 1..cp.len() {
                if !adjacent(cp[i].attachment, cp[j].attachment) {
                    collision_pairs.push((i, j));
                }
            }
        }
        Ok(Self {
            chains: spec.chains,
            joint_offset,
            n_joints,
            q_lb: spec.q_lb,
            q_ub: spec.q_ub,
            u_max: spec.u_max,
            k_a: spec.k_a,
            contact_patches: spec.contact_patches,
            collision_patches: spec.collision_patches,
            collision_pairs,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn contact_patches(&self) -> &[Patch] {
        &self.contact_patches
    }

    pub fn collision_patches(&self) -> &[Patch] {
        &self.collision_patches
    }

    /// Unordered collision-patch pairs checked for self-collision.
    pub fn collision_pairs(&self) -> &[(usize, usize)] {
        &self.collision_pairs
    }

    /// Global index of joint `link` of `chain`.
    pub fn joint_index(&self, chain: usize, link: usize) -> usize {
        self.joint_offset[chain] + link
    }

    pub fn frames<T: Real>(&self, q_a: &[T]) -> Frames<T> {
        assert_eq!(q_a.len(), self.n_joints, "joint vector length");
        let mut origins = Vec::with_capacity(self.chains.len());
        let mut rotations = Vec::with_capacity(self.chains.len());
        for (c, chain) in self.chains.iter().enumerate() {
            let mut angle = T::cst(chain.base_angle);
            let mut p = chain.base.lift::<T>();
            let mut o = Vec::with_capacity(chain.links.len() + 1);
            let mut r = Vec::with_capacity(chain.links.len());
            o.push(p);
            for (l, &len) in chain.links.iter().enumerate() {
                angle += q_a[self.joint_offset[c] + l];
                let (cs, sn) = (angle.cos(), angle.sin());
                p = p + Vec2::new(cs * len, sn * len);
                o.push(p);
                r.push((cs, sn));
            }
            origins.push(o);
            rotations.push(r);
        }
        Frames { origins, rotations }
    }

    /// World position of a point given in the frame of `attachment`.
    pub fn to_world<T: Real>(&self, frames: &Frames<T>, attachment: Attachment, local: Vec2) -> Vec2<T> {
        match attachment {
            Attachment::Fixed => local.lift(),
            Attachment::Link { chain, link } => {
                let (c, s) = frames.rotations[chain][link];
                frames.origins[chain][link] + local.lift::<T>().rotate(c, s)
            }
        }
    }

    /// Inverse of [`to_world`](Self::to_world) for plain values.
    pub fn to_local(&self, frames: &Frames<f64>, attachment: Attachment, world: Vec2) -> Vec2 {
        match attachment {
            Attachment::Fixed => world,
            Attachment::Link { chain, link } => {
                let (c, s) = frames.rotations[chain][link];
                (world - frames.origins[chain][link]).rotate(c, -s)
            }
        }
    }

    pub fn patch_world<T: Real>(&self, frames: &Frames<T>, patch: &Patch) -> SegmentStruct<T> {
        SegmentStruct::new(
            self.to_world(frames, patch.attachment, patch.a),
            self.to_world(frames, patch.attachment, patch.b),
            patch.radius,
        )
    }

    /// World-frame contact patches (`B_r`) at `q_a`.
    pub fn forward_kinematics<T: Real>(&self, q_a: &[T]) -> Vec<SegmentStruct<T>> {
        let frames = self.frames(q_a);
        self.contact_patches.iter().map(|p| self.patch_world(&frames, p)).collect()
    }

    /// `d(point)/d(q_a)` for a material point currently at `point` on
    /// `attachment`, one column per joint.
    pub fn point_jacobian<T: Real>(
        &self,
        frames: &Frames<T>,
        attachment: Attachment,
        point: Vec2<T>,
    ) -> Vec<Vec2<T>> {
        let mut cols = vec![Vec2::zero(); self.n_joints];
        if let Attachment::Link { chain, link } = attachment {
            for i in 0..=link {
                cols[self.joint_offset[chain] + i] = (point - frames.origins[chain][i]).perp();
            }
        }
        cols
    }

    /// Rounded distances between every checked collision-patch pair.
    pub fn self_collision_distances<T: Real>(&self, q_a: &[T]) -> Vec<T> {
        let frames = self.frames(q_a);
        self.self_collision_distances_with(&frames)
    }

    pub fn self_collision_distances_with<T: Real>(&self, frames: &Frames<T>) -> Vec<T> {
        let world: Vec<_> = self
            .collision_patches
            .iter()
            .map(|p| self.patch_world(frames, p))
            .collect();
        self.collision_pairs
            .iter()
            .map(|&(i, j)| segment_segment_proximity(&world[i], &world[j]).dp)
            .collect()
    }

    pub fn within_joint_bounds(&self, q_a: &[f64], tol: f64) -> bool {
        q_a.iter()
            .zip(self.q_lb.iter().zip(&self.q_ub))
            .all(|(&q, (&lo, &hi))| q >= lo - tol && q <= hi + tol)
    }
}

/// Patches on the same link, consecutive links of one chain, and the world
/// against any first link are never checked against each other.
fn adjacent(a: Attachment, b: Attachment) -> bool {
    use Attachment::*;
    match (a, b) {
        (Fixed, Fixed) => true,
        (Fixed, Link { link, .. }) | (Link { link, .. }, Fixed) => link == 0,
        (Link { chain: c1, link: l1 }, Link { chain: c2, link: l2 }) => c1 == c2 && l1.abs_diff(l2) <= 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    Circle { radius: f64 },
    Segment { a: Vec2, b: Vec2, radius: f64 },
    Polygon { vertices: Vec<Vec2>, radius: f64 },
}

impl ObjectShape {
    pub fn radius(&self) -> f64 {
        match self {
            Self::Circle { radius } | Self::Segment { radius, .. } | Self::Polygon { radius, .. } => *radius,
        }
    }

    /// Largest distance from the object origin to its surface.
    pub fn bounding_radius(&self) -> f64 {
        let r = self.radius();
        match self {
            Self::Circle { .. } => r,
            Self::Segment { a, b, .. } => a.norm().max(b.norm()) + r,
            Self::Polygon { vertices, .. } => vertices.iter().map(|v| v.norm()).fold(0.0, f64::max) + r,
        }
    }
}

/// Axis-aligned bounds on the object position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Workspace {
    pub fn contains(&self, q_u: &[f64; 3]) -> bool {
        q_u[0] >= self.x[0] && q_u[0] <= self.x[1] && q_u[1] >= self.y[0] && q_u[1] <= self.y[1]
    }
}

#[derive(Clone, Debug)]
pub struct ObjectModel {
    pub shape: ObjectShape,
    pub mu: f64,
    l_u: Matrix3<f64>,
    l_u_inv: Matrix3<f64>,
    pub workspace: Workspace,
}

impl ObjectModel {
    pub fn new(shape: ObjectShape, mu: f64, l_u: Matrix3<f64>, workspace: Workspace) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::Structure(format!("friction coefficient {mu} is negative")));
        }
        if !(shape.radius() >= 0.0) {
            return Err(Error::Structure("object radius must be non-negative".into()));
        }
        if let ObjectShape::Polygon { vertices, radius } = &shape {
            ConvexPolygonStruct::new(vertices.clone(), *radius)?;
        }
        if (l_u - l_u.transpose()).abs().max() > 1e-12 {
            return Err(Error::Structure("limit-surface matrix is not symmetric".into()));
        }
        let chol = l_u
            .cholesky()
            .ok_or_else(|| Error::Structure("limit-surface matrix is not positive definite".into()))?;
        let l_u_inv = chol.inverse();
        if workspace.x[0] >= workspace.x[1] || workspace.y[0] >= workspace.y[1] {
            return Err(Error::Structure("empty workspace".into()));
        }
        Ok(Self {
            shape,
            mu,
            l_u,
            l_u_inv,
            workspace,
        })
    }

    /// `diag(mu W, mu W, mu_r W r_c)` for a support weight `W` and a
    /// characteristic radius `r_c`.
    pub fn diagonal_limit_surface(mu: f64, mu_r: f64, weight: f64, r_c: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(mu * weight, mu * weight, mu_r * weight * r_c))
    }

    pub fn l_u(&self) -> &Matrix3<f64> {
        &self.l_u
    }

    pub fn l_u_inv(&self) -> &Matrix3<f64> {
        &self.l_u_inv
    }

    /// Copy with the contact friction scaled by `k` and the limit surface
    /// scaled along with it.
    pub fn with_friction_scale(&self, k: f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.mu * k, self.l_u * k, self.workspace)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub q_u: [f64; 3],
    pub q_a: Vec<f64>,
}

impl PlantState {
    pub fn new(q_u: [f64; 3], q_a: Vec<f64>) -> Self {
        Self { q_u, q_a }
    }

    /// `q_u` followed by `q_a`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.q_u.iter().chain(&self.q_a).copied().collect()
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self {
            q_u: [q[0], q[1], q[2]],
            q_a: q[3..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q_u.iter().chain(&self.q_a).all(|v| v.is_finite())
    }
}

/// One robot-patch/object pair with its proximity and contact Jacobians.
#[derive(Clone, Debug)]
pub struct Candidate<T = f64> {
    /// Index into the robot's contact patches.
    pub patch: usize,
    pub attachment: Attachment,
    pub prox: ProximityResult<T>,
    /// Rows `n` and `t`: object twist to velocity of the object material
    /// point at `S'`.
    pub j_obj: [[T; 3]; 2],
    /// One entry per joint: `(n, t)` components of the robot material
    /// point velocity at `H'`.
    pub j_rob: Vec<[T; 2]>,
}

impl<T: Real> Candidate<T> {
    /// Rounded distance.
    pub fn dp(&self) -> T {
        self.prox.dp
    }

    /// Row `dir` (0 = normal, 1 = tangent) of the separation Jacobian over
    /// the full state: object part minus robot part.
    pub fn separation_row(&self, dir: usize) -> Vec<T> {
        let mut row = Vec::with_capacity(3 + self.j_rob.len());
        row.extend_from_slice(&self.j_obj[dir]);
        row.extend(self.j_rob.iter().map(|c| -c[dir]));
        row
    }

    pub fn value(&self) -> Candidate<f64> {
        Candidate {
            patch: self.patch,
            attachment: self.attachment,
            prox: self.prox.value(),
            j_obj: self.j_obj.map(|r| r.map(|v| v.value())),
            j_rob: self.j_rob.iter().map(|c| [c[0].value(), c[1].value()]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Plant {
    pub robot: RobotModel,
    pub object: ObjectModel,
}

/// The object's structure placed in the world.
enum WorldShape<T> {
    Point(Vec2<T>, f64),
    Segment(SegmentStruct<T>),
    Polygon(ConvexPolygonStruct<T>),
}

impl Plant {
    pub fn new(robot: RobotModel, object: ObjectModel) -> Self {
        Self { robot, object }
    }

    pub fn n_joints(&self) -> usize {
        self.robot.n_joints()
    }

    /// Dimension of the full state.
    pub fn n_q(&self) -> usize {
        3 + self.robot.n_joints()
    }

    fn world_shape<T: Real>(&self, q_u: &[T; 3]) -> WorldShape<T> {
        let (c, s) = (q_u[2].cos(), q_u[2].sin());
        let origin = Vec2::new(q_u[0], q_u[1]);
        let place = |p: &Vec2| origin + p.lift::<T>().rotate(c, s);
        match &self.object.shape {
            ObjectShape::Circle { radius } => WorldShape::Point(origin, *radius),
            ObjectShape::Segment { a, b, radius } => {
                WorldShape::Segment(SegmentStruct::new(place(a), place(b), *radius))
            }
            ObjectShape::Polygon { vertices, radius } => WorldShape::Polygon(
                ConvexPolygonStruct::new(vertices.iter().map(place).collect(), *radius)
                    .expect("rigid motion keeps a valid polygon valid"),
            ),
        }
    }

    /// World outline of the object skeleton: the center, the two segment
    /// endpoints, or the polygon vertices.
    pub fn object_skeleton(&self, q_u: &[f64; 3]) -> Vec<Vec2> {
        match self.world_shape(q_u) {
            WorldShape::Point(p, _) => vec![p],
            WorldShape::Segment(s) => vec![s.a, s.b],
            WorldShape::Polygon(p) => p.vertices().to_vec(),
        }
    }

    /// One candidate per contact patch, in patch order.
    pub fn contact_candidates<T: Real>(&self, q_u: &[T; 3], q_a: &[T]) -> Vec<Candidate<T>> {
        let frames = self.robot.frames(q_a);
        self.contact_candidates_with(&frames, q_u)
    }

    pub fn contact_candidates_with<T: Real>(&self, frames: &Frames<T>, q_u: &[T; 3]) -> Vec<Candidate<T>> {
        let shape = self.world_shape(q_u);
        let center = Vec2::new(q_u[0], q_u[1]);
        self.robot
            .contact_patches()
            .iter()
            .enumerate()
            .map(|(k, patch)| {
                let seg = self.robot.patch_world(frames, patch);
                let prox = match &shape {
                    WorldShape::Point(p, r) => point_segment_proximity(&seg, *p, *r),
                    WorldShape::Segment(s) => segment_segment_proximity(&seg, s),
                    WorldShape::Polygon(p) => polygon_segment_proximity(&seg, p),
                };
                let (n, t) = (prox.normal, prox.tangent);
                let lever = prox.sp - center;
                let j_obj = [
                    [n.x, n.y, lever.cross(n)],
                    [t.x, t.y, lever.cross(t)],
                ];
                let j_rob = self
                    .robot
                    .point_jacobian(frames, patch.attachment, prox.hp)
                    .into_iter()
                    .map(|col| [col.dot(n), col.dot(t)])
                    .collect();
                Candidate {
                    patch: k,
                    attachment: patch.attachment,
                    prox,
                    j_obj,
                    j_rob,
                }
            })
            .collect()
    }

    /// `q + M^-1 (K u + sum_k J_k^T f_k)` for the given candidates and forces.
    ///
    /// Works for any scalar type so the optimizer can differentiate through
    /// it; with all forces zero the robot part is exactly `q_a + u`.
    pub fn apply_forces<T: Real>(
        &self,
        q_u: &[T; 3],
        q_a: &[T],
        u: &[T],
        contacts: &[(&Candidate<f64>, [T; 2])],
    ) -> ([T; 3], Vec<T>) {
        let na = self.n_joints();
        let mut gen_u = [T::zero(); 3];
        let mut gen_a = vec![T::zero(); na];
        for (cand, f) in contacts {
            for i in 0..3 {
                gen_u[i] += f[0] * cand.j_obj[0][i] + f[1] * cand.j_obj[1][i];
            }
            for (g, col) in gen_a.iter_mut().zip(&cand.j_rob) {
                *g -= f[0] * col[0] + f[1] * col[1];
            }
        }
        let inv = self.object.l_u_inv();
        let mut next_u = *q_u;
        for (i, next) in next_u.iter_mut().enumerate() {
            for (j, g) in gen_u.iter().enumerate() {
                *next += *g * inv[(i, j)];
            }
        }
        let next_a = (0..na)
            .map(|i| q_a[i] + u[i] + gen_a[i] / self.robot.k_a[i])
            .collect();
        (next_u, next_a)
    }

    /// Plain-value transition for a resolved force set.
    pub fn quasi_dynamic_step(
        &self,
        q: &PlantState,
        u: &[f64],
        contacts: &[(&Candidate<f64>, [f64; 2])],
    ) -> PlantState {
        let (q_u, q_a) = self.apply_forces(&q.q_u, &q.q_a, u, contacts);
        PlantState { q_u, q_a }
    }

    /// Joint bounds and workspace, each with tolerance `tol`.
    pub fn is_within_bounds(&self, q: &PlantState, tol: f64) -> bool {
        let w = &self.object.workspace;
        self.robot.within_joint_bounds(&q.q_a, tol)
            && q.q_u[0] >= w.x[0] - tol
            && q.q_u[0] <= w.x[1] + tol
            && q.q_u[1] >= w.y[0] - tol
            && q.q_u[1] <= w.y[1] + tol
    }
}

/// The five quantities of the Coulomb conditions for one contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoulombResiduals {
    /// `mu f_n - |f_t|`, non-negative inside the cone.
    pub cone_slack: f64,
    pub normal_force: f64,
    /// `v_n f_n`, zero when feasible.
    pub normal_complementarity: f64,
    /// `v_t (|f_t| - mu f_n)`, zero when feasible.
    pub slip_complementarity: f64,
    /// `v_t f_t`, non-negative when feasible.
    pub slip_alignment: f64,
}

impl CoulombResiduals {
    /// Largest violation among the five conditions.
    pub fn violation(&self) -> f64 {
        [
            -self.cone_slack,
            -self.normal_force,
            self.normal_complementarity.abs(),
            self.slip_complementarity.abs(),
            -self.slip_alignment,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates the Coulomb conditions for force `(f_n, f_t)` and contact
/// velocity `(v_n, v_t)`.
///
/// `v_n` is the normal gap after the step and `v_t` the slip of the robot
/// point relative to the object point along `t`, so a sliding contact has
/// `f_t` of the same sign as `v_t`.
pub fn coulomb_residuals(f: [f64; 2], v: [f64; 2], mu: f64) -> CoulombResiduals {
    let [f_n, f_t] = f;
    let [v_n, v_t] = v;
    CoulombResiduals {
        cone_slack: mu * f_n - f_t.abs(),
        normal_force: f_n,
        normal_complementarity: v_n * f_n,
        slip_complementarity: v_t * (f_t.abs() - mu * f_n),
        slip_alignment: v_t * f_t,
    }
}

/// Contact velocity `(v_n, v_t)` of a candidate over the step `q -> q_next`.
pub fn contact_velocity(cand: &Candidate<f64>, q: &PlantState, q_next: &PlantState) -> [f64; 2] {
    let dq: Vec<f64> = q_next
        .to_vec()
        .iter()
        .zip(q.to_vec())
        .map(|(a, b)| a - b)
        .collect();
    let proj = |dir: usize| -> f64 {
        cand.separation_row(dir).iter().zip(&dq).map(|(j, d)| j * d).sum()
    };
    [cand.prox.dp + proj(0), -proj(1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_chain(links: &[f64]) -> RobotModel {
        let n = links.len();
        let contact_patches = (0..n)
            .map(|l| Patch {
                attachment: Attachment::Link { chain: 0, link: l },
                a: Vec2::new(0.0, 0.0),
                b: Vec2::new(links[l], 0.0),
                radius: 0.0,
            })
            .collect::<Vec<_>>();
        RobotModel::new(RobotSpec {
            chains: vec![Chain {
                base: Vec2::new(0.0, 0.0),
                base_angle: 0.0,
                links: links.to_vec(),
            }],
            q_lb: vec![-3.0; n],
            q_ub: vec![3.0; n],
            u_max: vec![0.1; n],
            k_a: vec![100.0; n],
            collision_patches: contact_patches.clone(),
            contact_patches,
        })
        .unwrap()
    }

    #[test]
    fn straight_and_quarter_turn_chains() {
        let robot = single_chain(&[1.0, 1.0]);
        let segs = robot.forward_kinematics(&[0.0, 0.0]);
        assert!((segs[1].a - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((segs[1].b - Vec2::new(2.0, 0.0)).norm() < 1e-15);
        let segs = robot.forward_kinematics(&[std::f64::consts::FRAC_PI_2, 0.0]);
        assert!((segs[1].a - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        assert!((segs[1].b - Vec2::new(0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn dual_arm_counts() {
        let robot = RobotModel::new(RobotSpec::default()).unwrap();
        assert_eq!(robot.n_joints(), 6);
        assert_eq!(robot.contact_patches().len(), 12);
        // 6 collision patches, 15 pairs, minus 2 adjacent pairs per arm.
        assert_eq!(robot.collision_pairs().len(), 15 - 4);
    }

    #[test]
    fn rejects_bad_models() {
        let mut spec = RobotSpec::default();
        spec.q_lb[0] = 5.0;
        assert!(RobotModel::new(spec).is_err());
        let mut spec = RobotSpec::default();
        spec.contact_patches[0].attachment = Attachment::Link { chain: 4, link: 0 };
        assert!(RobotModel::new(spec).is_err());
        let ws = Workspace { x: [0.0, 1.0], y: [-1.0, 1.0] };
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(ObjectModel::new(ObjectShape::Circle { radius: 0.1 }, 0.5, bad, ws).is_err());
    }

    #[test]
    fn coulomb_examples() {
        let r = coulomb_residuals([10.0, 4.0], [0.0, 0.0], 0.5);
        assert_eq!(r.cone_slack, 1.0);
        assert_eq!(r.violation(), 0.0);
        let r = coulomb_residuals([10.0, 5.0], [0.0, 0.0], 0.5);
        assert_eq!(r.violation(), 0.0);
        let r = coulomb_residuals([10.0, -5.0], [0.0, 1.0], 0.5);
        assert!(r.slip_alignment < 0.0 && r.violation() > 0.0);
    }
}
