//! Contact cost design: proximity activation, object- and robot-centric
//! manipulability, reference forces and the goal distance.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::ad::{clamp01, Real};
use crate::plant::Candidate;

/// Which contact-seeking objective the optimizer uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostDesign {
    /// Object- and robot-centric manipulability weighted by activation.
    #[default]
    Manipulability,
    /// Sum of squared distances from the object center to every contact
    /// patch.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub beta_d: f64,
    pub beta_p: f64,
    pub beta_r: f64,
    pub beta_j: f64,
    /// Reference-force magnitude at which the object-centric score saturates.
    /// The reference force is a Jacobian-projected pose error, so this is a
    /// length.
    pub f_lim: f64,
    /// Goal-distance weights on `(x, y, theta)`.
    pub w_d: [f64; 3],
    /// Contacts with rounded distance at or below this are active.
    pub delta_act: f64,
    /// Gain of the baseline squared-distance objective.
    pub beta_baseline: f64,
    pub design: CostDesign,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            beta_d: 10.0,
            beta_p: 5.0,
            beta_r: 10.0,
            beta_j: 0.1,
            f_lim: 0.005,
            w_d: [100.0, 100.0, 10.0],
            delta_act: 1e-3,
            beta_baseline: 1.0,
            design: CostDesign::Manipulability,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("beta_d", self.beta_d),
            ("beta_p", self.beta_p),
            ("beta_r", self.beta_r),
            ("beta_j", self.beta_j),
            ("f_lim", self.f_lim),
            ("delta_act", self.delta_act),
            ("beta_baseline", self.beta_baseline),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(crate::Error::Scenario(format!("cost parameter {name} must be positive")));
            }
        }
        if self.w_d.iter().any(|w| !(*w >= 0.0)) {
            return Err(crate::Error::Scenario("w_d must be non-negative".into()));
        }
        Ok(())
    }
}

/// Angle wrapped to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// `a` shifted by a multiple of `2 pi` into `(-pi, pi]`; the shift is a
/// constant so derivatives pass through unchanged.
fn wrap_real<T: Real>(a: T) -> T {
    let v = a.value();
    a + (wrap_angle(v) - v)
}

/// Object pose error toward the goal, angle wrapped.
pub fn pose_error<T: Real>(q_u: &[T; 3], goal: &[f64; 3]) -> [T; 3] {
    [
        -q_u[0] + goal[0],
        -q_u[1] + goal[1],
        wrap_real(-q_u[2] + goal[2]),
    ]
}

/// Normal and tangential components of the force this contact would need
/// to apply to move the object toward its goal.
pub fn reference_force<T: Real>(cand: &Candidate<T>, q_u: &[T; 3], goal: &[f64; 3]) -> [T; 2] {
    let e = pose_error(q_u, goal);
    let row = |r: &[T; 3]| r[0] * e[0] + r[1] * e[1] + r[2] * e[2];
    [row(&cand.j_obj[0]), row(&cand.j_obj[1])]
}

/// `ln(1 + exp(-beta_d dp))`.
pub fn activation_weight<T: Real>(dp: T, beta_d: f64) -> T {
    (dp * -beta_d).softplus()
}

/// `(w_p, phi)` for a reference force.
pub fn object_manipulability<T: Real>(f_ref: [T; 2], f_lim: f64) -> (T, T) {
    let phi = f_ref[1].atan2(f_ref[0]);
    let angle = (phi / PI).powi2();
    let w = (-angle + 1.0) * clamp01(f_ref[0] / f_lim);
    (w, phi)
}

/// `det(J J^T + beta_j I)` where `J` is the 2 x N_a contact-to-joint map.
pub fn robot_manipulability<T: Real>(j_rob: &[[T; 2]], beta_j: f64) -> T {
    let mut g00 = T::cst(beta_j);
    let mut g11 = T::cst(beta_j);
    let mut g01 = T::zero();
    for c in j_rob {
        g00 += c[0] * c[0];
        g11 += c[1] * c[1];
        g01 += c[0] * c[1];
    }
    g00 * g11 - g01 * g01
}

/// Per-candidate cost terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub w_d: f64,
    pub w_p: f64,
    pub w_r: f64,
    pub phi: f64,
    pub f_ref: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub g_p: f64,
    pub g_r: f64,
    pub g_d: f64,
    pub candidates: Vec<CandidateCost>,
}

/// `(G_p, G_r)` summed over the candidates selected by `mask` (all when
/// `None`).
pub fn manipulability_terms<T: Real>(
    cands: &[Candidate<T>],
    mask: Option<&[bool]>,
    q_u: &[T; 3],
    goal: &[f64; 3],
    params: &CostParams,
) -> (T, T) {
    let mut sum_p = T::zero();
    let mut sum_r = T::zero();
    for (k, c) in cands.iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let w_d = activation_weight(c.dp(), params.beta_d);
        let (w_p, _) = object_manipulability(reference_force(c, q_u, goal), params.f_lim);
        let w_r = robot_manipulability(&c.j_rob, params.beta_j);
        sum_p += w_p * w_d;
        sum_r += w_r * w_d;
    }
    (sum_p * -params.beta_p, sum_r * -params.beta_r)
}

/// Sum of squared distances from the object center to the robot-side
/// proximity point of every selected candidate.
pub fn baseline_cost<T: Real>(cands: &[Candidate<T>], mask: Option<&[bool]>, q_u: &[T; 3], params: &CostParams) -> T {
    let mut sum = T::zero();
    for (k, c) in cands.iter().enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let dx = c.prox.hp.x - q_u[0];
        let dy = c.prox.hp.y - q_u[1];
        sum += dx * dx + dy * dy;
    }
    sum * params.beta_baseline
}

/// The contact-seeking objective of the configured design: `G_p + G_r` or
/// the baseline.
pub fn contact_objective<T: Real>(
    cands: &[Candidate<T>],
    mask: Option<&[bool]>,
    q_u: &[T; 3],
    goal: &[f64; 3],
    params: &CostParams,
) -> T {
    match params.design {
        CostDesign::Manipulability => {
            let (g_p, g_r) = manipulability_terms(cands, mask, q_u, goal, params);
            g_p + g_r
        }
        CostDesign::Baseline => baseline_cost(cands, mask, q_u, params),
    }
}

/// `(q_u - goal)^T W_d (q_u - goal)` with the angle error wrapped.
pub fn distance_objective<T: Real>(q_u: &[T; 3], goal: &[f64; 3], w_d: &[f64; 3]) -> T {
    let e = pose_error(q_u, goal);
    e[0] * e[0] * w_d[0] + e[1] * e[1] * w_d[1] + e[2] * e[2] * w_d[2]
}

pub fn breakdown(cands: &[Candidate<f64>], q_u: &[f64; 3], goal: &[f64; 3], params: &CostParams) -> CostBreakdown {
    let (g_p, g_r) = manipulability_terms(cands, None, q_u, goal, params);
    let candidates = cands
        .iter()
        .map(|c| {
            let f_ref = reference_force(c, q_u, goal);
            let (w_p, phi) = object_manipulability(f_ref, params.f_lim);
            CandidateCost {
                w_d: activation_weight(c.dp(), params.beta_d),
                w_p,
                w_r: robot_manipulability(&c.j_rob, params.beta_j),
                phi,
                f_ref,
            }
        })
        .collect();
    CostBreakdown {
        g_p,
        g_r,
        g_d: distance_objective(q_u, goal, &params.w_d),
        candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert!((activation_weight(0.0, 10.0) - 2f64.ln()).abs() < 1e-15);
        assert!((activation_weight(0.1, 10.0) - (-1f64).exp().ln_1p()).abs() < 1e-15);
        let far = activation_weight(1e3, 10.0);
        assert!(far > 0.0 && far < 1e-300 || far == 0.0);
        assert!(activation_weight(-1e3, 10.0).is_finite());
    }

    #[test]
    fn object_manipulability_values() {
        assert_eq!(object_manipulability([1.0, 0.0], 0.5).0, 1.0);
        assert_eq!(object_manipulability([-1.0, 0.3], 0.5).0, 0.0);
        assert!((object_manipulability([1e-9, 1.0], 1e-12).0 - 0.75).abs() < 1e-8);
    }

    #[test]
    fn robot_manipulability_values() {
        assert!((robot_manipulability::<f64>(&[[0.0, 0.0]; 6], 0.1) - 0.01).abs() < 1e-15);
        let rows = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert!((robot_manipulability(&rows, 0.1) - 1.21).abs() < 1e-15);
    }

    #[test]
    fn distance_objective_values() {
        let w = [1.0, 1.0, 1.0];
        assert_eq!(distance_objective(&[0.3, 0.2, 0.1], &[0.3, 0.2, 0.1], &w), 0.0);
        assert_eq!(distance_objective(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &w), 1.0);
        assert!(distance_objective(&[0.0, 0.0, TAU], &[0.0, 0.0, 0.0], &w) < 1e-24);
    }

    #[test]
    fn wrap_convention() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
