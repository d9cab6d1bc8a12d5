//! SVG frames of a trajectory. One user unit is one millimeter and world
//! coordinates are written unchanged (scaled by 1000) inside a group that
//! flips the y axis, so frame geometry can be compared directly with
//! forward kinematics.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use wmm_core::trajopt::{ContactForce, Trajectory};
use wmm_core::{ObjectShape, Plant, PlantState, Vec2};

/// SVG user units per meter.
pub const UNITS_PER_METER: f64 = 1000.0;

/// Arrow length per newton of contact force.
const FORCE_UNITS_PER_NEWTON: f64 = 20.0;

/// Writes `frame_0000.svg`, ... for each state and returns the count. A
/// missing trajectory writes nothing.
pub fn write_frames(plant: &Plant, traj: Option<&Trajectory>, goal: &[f64; 3], out: &Path) -> io::Result<usize> {
    let Some(traj) = traj else {
        return Ok(0);
    };
    let states = traj.states();
    for (k, state) in states.iter().enumerate() {
        // Forces of the step that produced this state.
        let forces = k.checked_sub(1).map_or(&[][..], |i| &traj.steps[i].forces[..]);
        let svg = frame(plant, state, forces, goal);
        fs::write(out.join(format!("frame_{k:04}.svg")), svg)?;
    }
    Ok(states.len())
}

fn scaled(v: f64) -> f64 {
    v * UNITS_PER_METER
}

/// One frame: robot contact patches as capsules, the object and goal
/// outlines, and contact points with force arrows.
pub fn frame(plant: &Plant, state: &PlantState, forces: &[ContactForce], goal: &[f64; 3]) -> String {
    let w = &plant.object.workspace;
    let margin = 0.3;
    let (x0, x1) = (w.x[0].min(-margin) - margin, w.x[1] + margin);
    let (y0, y1) = (w.y[0] - margin, w.y[1] + margin);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}">"#,
        scaled(x0),
        scaled(-y1),
        scaled(x1 - x0),
        scaled(y1 - y0)
    );
    s.push_str("<g transform=\"scale(1,-1)\">\n");
    draw_object(&mut s, plant, goal, "goal", "none", "#888888");
    draw_object(&mut s, plant, &state.q_u, "object", "#f2c57c", "#8a5a00");
    for seg in plant.robot.forward_kinematics(&state.q_a) {
        let _ = writeln!(
            s,
            r##"<line class="patch" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#4a78c2" stroke-opacity="0.8" stroke-width="{}" stroke-linecap="round"/>"##,
            scaled(seg.a.x),
            scaled(seg.a.y),
            scaled(seg.b.x),
            scaled(seg.b.y),
            scaled(2.0 * seg.radius)
        );
    }
    if !forces.is_empty() {
        let cands = plant.contact_candidates(&state.q_u, &state.q_a);
        for cf in forces {
            let Some(c) = cands.iter().find(|c| c.patch == cf.patch) else {
                continue;
            };
            let p = c.prox.sp;
            let dir = c.prox.normal.scale(cf.f[0]) + c.prox.tangent.scale(cf.f[1]);
            let tip = Vec2::new(
                scaled(p.x) + dir.x * FORCE_UNITS_PER_NEWTON,
                scaled(p.y) + dir.y * FORCE_UNITS_PER_NEWTON,
            );
            let _ = writeln!(
                s,
                r##"<circle class="contact" cx="{}" cy="{}" r="6" fill="#c0392b"/>"##,
                scaled(p.x),
                scaled(p.y)
            );
            let _ = writeln!(
                s,
                r##"<line class="force" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#c0392b" stroke-width="4"/>"##,
                scaled(p.x),
                scaled(p.y),
                tip.x,
                tip.y
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn draw_object(s: &mut String, plant: &Plant, q_u: &[f64; 3], class: &str, fill: &str, stroke: &str) {
    let skeleton = plant.object_skeleton(q_u);
    let r = plant.object.shape.radius();
    match &plant.object.shape {
        ObjectShape::Circle { .. } => {
            let _ = writeln!(
                s,
                r#"<circle class="{class}" cx="{}" cy="{}" r="{}" fill="{fill}" stroke="{stroke}" stroke-width="3"/>"#,
                scaled(skeleton[0].x),
                scaled(skeleton[0].y),
                scaled(r)
            );
        }
        ObjectShape::Segment { .. } => {
            let _ = writeln!(
                s,
                r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}" stroke-linecap="round"/>"#,
                scaled(skeleton[0].x),
                scaled(skeleton[0].y),
                scaled(skeleton[1].x),
                scaled(skeleton[1].y),
                scaled(2.0 * r)
            );
        }
        ObjectShape::Polygon { .. } => {
            let points: Vec<String> = skeleton
                .iter()
                .map(|p| format!("{},{}", scaled(p.x), scaled(p.y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polygon class="{class}" points="{}" fill="{fill}" stroke="{stroke}" stroke-width="{}" stroke-linejoin="round"/>"#,
                points.join(" "),
                scaled(2.0 * r).max(3.0)
            );
        }
    }
    // Heading marker from the center along the object x axis.
    let (c, sn) = (q_u[2].cos(), q_u[2].sin());
    let len = plant.object.shape.bounding_radius();
    let _ = writeln!(
        s,
        r#"<line class="{class}-heading" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="3"/>"#,
        scaled(q_u[0]),
        scaled(q_u[1]),
        scaled(q_u[0] + len * c),
        scaled(q_u[1] + len * sn)
    );
}
