//! Top-down SVG drawing of an episode.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::planner::Trajectory;
use crate::sim::{SceneState, DRAWER_HANDLE_CLOSED, FAUCET_PIVOT, MUG_RADIUS, TABLE_DEPTH, TABLE_WIDTH};

/// Pixels per meter.
pub const SCALE: f64 = 500.0;
const DRAWER_WIDTH: f64 = 0.12;
const CABINET_DEPTH: f64 = 0.10;
const START_COLOR: [u8; 3] = [44, 123, 182];
const END_COLOR: [u8; 3] = [215, 25, 28];

fn px(p: [f64; 2]) -> (f64, f64) {
    (p[0] * SCALE, (TABLE_DEPTH - p[1]) * SCALE)
}

fn lerp_color(t: f64) -> String {
    let c: Vec<u8> = START_COLOR
        .iter()
        .zip(END_COLOR)
        .map(|(&a, b)| (a as f64 + (b as f64 - a as f64) * t).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Axis-aligned rectangle spanning `y0..y1` (table frame) centered on `x`.
fn rect(out: &mut String, id: &str, x: f64, y0: f64, y1: f64, style: &str) {
    let (lo, hi) = (y0.min(y1), y0.max(y1));
    let (left, top) = px([x - DRAWER_WIDTH / 2.0, hi]);
    let _ = writeln!(
        out,
        r#"<rect id="{id}" x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
        DRAWER_WIDTH * SCALE,
        (hi - lo) * SCALE
    );
}

fn scene(out: &mut String, s: &SceneState) {
    let x = DRAWER_HANDLE_CLOSED[0];
    let face = DRAWER_HANDLE_CLOSED[1];
    rect(out, "cabinet", x, face, face - s.drawer_axis * CABINET_DEPTH, r##"fill="#d9c7a7" stroke="#6b5a3e""##);
    rect(out, "drawer", x, face, face + s.drawer_axis * s.drawer_ext, r##"fill="#b08d57" stroke="#6b5a3e""##);
    let (hx, hy) = px(s.drawer_handle());
    let _ = writeln!(out, r##"<circle id="drawer-handle" cx="{hx:.2}" cy="{hy:.2}" r="4.00" fill="#333333"/>"##);

    let (fx, fy) = px(FAUCET_PIVOT);
    let (gx, gy) = px(s.faucet_handle());
    let _ = writeln!(out, r##"<circle id="faucet" cx="{fx:.2}" cy="{fy:.2}" r="10.00" fill="#c0c0c0" stroke="#555555"/>"##);
    let _ = writeln!(
        out,
        r##"<line id="faucet-lever" x1="{fx:.2}" y1="{fy:.2}" x2="{gx:.2}" y2="{gy:.2}" stroke="#555555" stroke-width="4"/>"##
    );

    for (id, p, fill) in [("black-mug", s.black_mug, "#222222"), ("white-mug", s.white_mug, "#ffffff")] {
        let (mx, my) = px(p);
        let _ = writeln!(
            out,
            r##"<circle id="{id}" cx="{mx:.2}" cy="{my:.2}" r="{:.2}" fill="{fill}" stroke="#000000"/>"##,
            MUG_RADIUS * SCALE
        );
    }
}

/// SVG text for a trajectory: the scene at its final state, the initial mug
/// positions as dashed outlines and the end-effector path colored from blue
/// (start) to red (end).
pub fn render_svg(traj: &Trajectory) -> String {
    let (w, h) = (TABLE_WIDTH * SCALE, TABLE_DEPTH * SCALE);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    );
    let _ = writeln!(out, r##"<rect id="table" x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#f4efe6"/>"##);
    if let (Some(first), Some(last)) = (traj.states.first(), traj.states.last()) {
        for p in [first.black_mug, first.white_mug] {
            let (mx, my) = px(p);
            let _ = writeln!(
                out,
                r##"<circle cx="{mx:.2}" cy="{my:.2}" r="{:.2}" fill="none" stroke="#888888" stroke-dasharray="4 3"/>"##,
                MUG_RADIUS * SCALE
            );
        }
        scene(&mut out, last);
        let n = traj.states.len() - 1;
        for (i, pair) in traj.states.windows(2).enumerate() {
            let (x1, y1) = px(pair[0].ee);
            let (x2, y2) = px(pair[1].ee);
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let _ = writeln!(
                out,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{}" stroke-width="3"/>"#,
                lerp_color(t)
            );
        }
        let (ex, ey) = px(last.ee);
        let _ = writeln!(out, r##"<circle id="ee" cx="{ex:.2}" cy="{ey:.2}" r="6.00" fill="#2c7bb6" stroke="#000000"/>"##);
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_episode(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, render_svg(traj))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, Action};

    fn attr(svg: &str, id: &str, name: &str) -> f64 {
        let line = svg.lines().find(|l| l.contains(&format!("id=\"{id}\""))).unwrap();
        let key = format!(" {name}=\"");
        let rest = &line[line.find(&key).unwrap() + key.len()..];
        rest[..rest.find('"').unwrap()].parse().unwrap()
    }

    #[test]
    fn empty_trajectory_renders_scene_only() {
        let svg = render_svg(&Trajectory::new(reset(1)));
        assert!(svg.contains("id=\"drawer\""));
        assert!(svg.contains("id=\"white-mug\""));
        assert!(!svg.contains("stroke-width=\"3\""));
        let bare = render_svg(&Trajectory { states: vec![], actions: vec![] });
        assert!(bare.contains("id=\"table\"") && !bare.contains("id=\"drawer\""));
    }

    #[test]
    fn identical_bytes_for_identical_trajectories() {
        let mut t = Trajectory::new(reset(4));
        for i in 0..10 {
            t.push(Action::new(0.01 * (i as f64).sin(), 0.02));
        }
        let dir = tempfile::tempdir().unwrap();
        render_episode(&t, &dir.path().join("a.svg")).unwrap();
        render_episode(&t.clone(), &dir.path().join("b.svg")).unwrap();
        assert_eq!(fs::read(dir.path().join("a.svg")).unwrap(), fs::read(dir.path().join("b.svg")).unwrap());
        assert_eq!(t.states.len() - 1, render_svg(&t).matches("stroke-width=\"3\"").count());
    }

    #[test]
    fn drawer_length_is_proportional_to_extension() {
        let mut s = reset(2);
        for ext in [0.0, 0.04, 0.1, 0.16] {
            s.drawer_ext = ext;
            let h = attr(&render_svg(&Trajectory::new(s)), "drawer", "height");
            assert!((h - ext * SCALE).abs() < 0.01, "{ext} {h}");
        }
    }
}
