//! Deterministic 2D tabletop with a drawer, a faucet dial and two mugs.
//!
//! Coordinates are meters in the table frame: `+x` to the right and `+y`
//! away from the viewer. The end effector moves by clipped delta actions and
//! interacts kinematically: it drags a handle when within
//! [`INTERACT_RADIUS`] of it and pushes mugs out of its way.
//!
//! All functions are pure. Randomness only enters through [`reset`] (seeded)
//! and [`random_action`] (caller-provided rng).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TABLE_WIDTH: f64 = 1.0;
pub const TABLE_DEPTH: f64 = 0.6;
pub const ACTION_LIMIT: f64 = 0.05;
pub const INTERACT_RADIUS: f64 = 0.06;
pub const FAUCET_LEVER: f64 = 0.08;
pub const MUG_RADIUS: f64 = 0.04;
pub const DRAWER_MAX_EXT: f64 = 0.16;
pub const FAUCET_MAX_ANGLE: f64 = PI / 2.0;

/// Handle position of the fully closed drawer.
pub const DRAWER_HANDLE_CLOSED: [f64; 2] = [0.40, 0.45];
/// Pivot of the faucet dial; the handle sits `FAUCET_LEVER` away from it.
pub const FAUCET_PIVOT: [f64; 2] = [0.60, 0.45];
/// Drawer opening direction along `y` for the standard layout (toward the viewer).
pub const DEFAULT_DRAWER_AXIS: f64 = -1.0;

/// Box the end effector is reset into.
pub const EE_INIT_MIN: [f64; 2] = [0.42, 0.27];
pub const EE_INIT_MAX: [f64; 2] = [0.58, 0.35];
/// Box mugs are reset into.
pub const MUG_INIT_MIN: [f64; 2] = [0.34, 0.14];
pub const MUG_INIT_MAX: [f64; 2] = [0.66, 0.32];

pub const STATE_DIM: usize = 9;
pub const ACTION_DIM: usize = 2;

pub type StateVec = [f64; STATE_DIM];

const SEPARATION_SLACK: f64 = 1e-9;
const RESET_RETRIES: usize = 1000;
const BLOCK_BISECTIONS: usize = 40;
const PUSH_SUBSTEP: f64 = 0.01;

pub(crate) fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn scale(a: [f64; 2], k: f64) -> [f64; 2] {
    [a[0] * k, a[1] * k]
}

pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn clamp2(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
}

const TABLE_MIN: [f64; 2] = [0.0, 0.0];
const TABLE_MAX: [f64; 2] = [TABLE_WIDTH, TABLE_DEPTH];
const MUG_MIN: [f64; 2] = [MUG_RADIUS, MUG_RADIUS];
const MUG_MAX: [f64; 2] = [TABLE_WIDTH - MUG_RADIUS, TABLE_DEPTH - MUG_RADIUS];

/// Full configuration of the scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub ee: [f64; 2],
    pub drawer_ext: f64,
    pub faucet_angle: f64,
    pub black_mug: [f64; 2],
    pub white_mug: [f64; 2],
    /// Sign of the drawer opening direction along `y` (`+1` or `-1`).
    pub drawer_axis: f64,
}

impl SceneState {
    pub fn drawer_axis_vec(&self) -> [f64; 2] {
        [0.0, self.drawer_axis]
    }

    pub fn drawer_handle(&self) -> [f64; 2] {
        add(DRAWER_HANDLE_CLOSED, scale(self.drawer_axis_vec(), self.drawer_ext))
    }

    pub fn faucet_handle(&self) -> [f64; 2] {
        faucet_handle_at(self.faucet_angle)
    }

    pub fn to_vector(&self) -> StateVec {
        [
            self.ee[0],
            self.ee[1],
            self.drawer_ext,
            self.faucet_angle,
            self.black_mug[0],
            self.black_mug[1],
            self.white_mug[0],
            self.white_mug[1],
            self.drawer_axis,
        ]
    }

    pub fn from_vector(v: &StateVec) -> Self {
        SceneState {
            ee: [v[0], v[1]],
            drawer_ext: v[2],
            faucet_angle: v[3],
            black_mug: [v[4], v[5]],
            white_mug: [v[6], v[7]],
            drawer_axis: v[8],
        }
    }

    /// Checks every scene invariant.
    pub fn is_valid(&self) -> bool {
        let in_box = |p: [f64; 2], lo: [f64; 2], hi: [f64; 2]| {
            p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
        };
        let finite = self.to_vector().iter().all(|x| x.is_finite());
        let handle = self.drawer_handle();
        let min_sep = 2.0 * MUG_RADIUS - SEPARATION_SLACK;
        finite
            && (self.drawer_axis == 1.0 || self.drawer_axis == -1.0)
            && (0.0..=DRAWER_MAX_EXT).contains(&self.drawer_ext)
            && (-FAUCET_MAX_ANGLE..=FAUCET_MAX_ANGLE).contains(&self.faucet_angle)
            && in_box(self.ee, TABLE_MIN, TABLE_MAX)
            && in_box(self.black_mug, MUG_MIN, MUG_MAX)
            && in_box(self.white_mug, MUG_MIN, MUG_MAX)
            && norm(sub(self.black_mug, self.white_mug)) >= min_sep
            && norm(sub(self.black_mug, handle)) >= min_sep
            && norm(sub(self.white_mug, handle)) >= min_sep
            && norm(sub(self.ee, self.black_mug)) >= MUG_RADIUS - SEPARATION_SLACK
            && norm(sub(self.ee, self.white_mug)) >= MUG_RADIUS - SEPARATION_SLACK
    }
}

pub fn faucet_handle_at(angle: f64) -> [f64; 2] {
    add(FAUCET_PIVOT, [-FAUCET_LEVER * angle.sin(), -FAUCET_LEVER * angle.cos()])
}

/// Unit tangent of the faucet handle path in the direction of increasing angle.
fn faucet_tangent(angle: f64) -> [f64; 2] {
    [-angle.cos(), angle.sin()]
}

/// End-effector delta command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f64; 2],
}

impl Action {
    pub fn new(dx: f64, dy: f64) -> Self {
        Action { delta: [dx, dy] }
    }

    pub fn clipped(self) -> Self {
        Action {
            delta: [
                self.delta[0].clamp(-ACTION_LIMIT, ACTION_LIMIT),
                self.delta[1].clamp(-ACTION_LIMIT, ACTION_LIMIT),
            ],
        }
    }
}

/// Samples an action uniformly from the action box.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action::new(
        rng.random_range(-ACTION_LIMIT..=ACTION_LIMIT),
        rng.random_range(-ACTION_LIMIT..=ACTION_LIMIT),
    )
}

/// Samples a legal initial scene. Identical seeds give bit-identical scenes.
pub fn reset(seed: u64) -> SceneState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawer_ext = rng.random_range(0.02..=0.14);
    let faucet_angle = rng.random_range(-PI / 3.0..=PI / 3.0);
    for _ in 0..RESET_RETRIES {
        let s = SceneState {
            ee: uniform_in(&mut rng, EE_INIT_MIN, EE_INIT_MAX),
            drawer_ext,
            faucet_angle,
            black_mug: uniform_in(&mut rng, MUG_INIT_MIN, MUG_INIT_MAX),
            white_mug: uniform_in(&mut rng, MUG_INIT_MIN, MUG_INIT_MAX),
            drawer_axis: DEFAULT_DRAWER_AXIS,
        };
        if s.is_valid() {
            return s;
        }
    }
    fallback_layout(drawer_ext, faucet_angle)
}

fn fallback_layout(drawer_ext: f64, faucet_angle: f64) -> SceneState {
    SceneState {
        ee: [0.5, 0.28],
        drawer_ext,
        faucet_angle,
        black_mug: [0.40, 0.15],
        white_mug: [0.60, 0.15],
        drawer_axis: DEFAULT_DRAWER_AXIS,
    }
}

fn uniform_in<R: Rng>(rng: &mut R, lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])]
}

#[derive(Clone, Copy, PartialEq)]
enum Articulated {
    Drawer,
    Faucet,
}

/// Applies a displacement command without any legality check.
fn apply(s: &SceneState, delta: [f64; 2]) -> SceneState {
    let mut next = *s;
    next.ee = clamp2(add(s.ee, delta), TABLE_MIN, TABLE_MAX);
    let moved = sub(next.ee, s.ee);

    let d_drawer = norm(sub(s.ee, s.drawer_handle()));
    let d_faucet = norm(sub(s.ee, s.faucet_handle()));
    let grabbed = match (d_drawer <= INTERACT_RADIUS, d_faucet <= INTERACT_RADIUS) {
        (true, true) if d_faucet < d_drawer => Some(Articulated::Faucet),
        (true, _) => Some(Articulated::Drawer),
        (false, true) => Some(Articulated::Faucet),
        (false, false) => None,
    };
    match grabbed {
        Some(Articulated::Drawer) => {
            next.drawer_ext =
                (s.drawer_ext + dot(moved, s.drawer_axis_vec())).clamp(0.0, DRAWER_MAX_EXT);
        }
        Some(Articulated::Faucet) => {
            let tangential = dot(moved, faucet_tangent(s.faucet_angle));
            next.faucet_angle = (s.faucet_angle + tangential / FAUCET_LEVER)
                .clamp(-FAUCET_MAX_ANGLE, FAUCET_MAX_ANGLE);
        }
        None => {}
    }

    // Mugs are pushed along the effector path in short sub-steps so a fast
    // effector never tunnels through a mug.
    let substeps = (norm(moved) / PUSH_SUBSTEP).ceil().max(1.0) as usize;
    for k in 1..=substeps {
        let ee = add(s.ee, scale(moved, k as f64 / substeps as f64));
        push_mugs(&mut next, ee, moved);
        let jammed = norm(sub(ee, next.black_mug)) < MUG_RADIUS - SEPARATION_SLACK
            || norm(sub(ee, next.white_mug)) < MUG_RADIUS - SEPARATION_SLACK;
        if jammed {
            // Leaves an illegal state behind; `step` then backs the action off.
            next.ee = ee;
            break;
        }
    }
    next
}

fn push_mugs(s: &mut SceneState, ee: [f64; 2], motion: [f64; 2]) {
    let pushed_black = push_out(&mut s.black_mug, ee, MUG_RADIUS, motion);
    let pushed_white = push_out(&mut s.white_mug, ee, MUG_RADIUS, motion);
    // A pushed mug shoves the other one along the line between their centers.
    if pushed_black && !pushed_white {
        let pusher = s.black_mug;
        push_out(&mut s.white_mug, pusher, 2.0 * MUG_RADIUS, motion);
    } else if pushed_white && !pushed_black {
        let pusher = s.white_mug;
        push_out(&mut s.black_mug, pusher, 2.0 * MUG_RADIUS, motion);
    }
}

/// Moves `mug` out of a disk of radius `reach` around `pusher`, then clips it
/// to the table. Returns whether the mug moved.
fn push_out(mug: &mut [f64; 2], pusher: [f64; 2], reach: f64, motion: [f64; 2]) -> bool {
    let offset = sub(*mug, pusher);
    let dist = norm(offset);
    if dist >= reach {
        return false;
    }
    let normal = if dist > 1e-12 {
        scale(offset, 1.0 / dist)
    } else if norm(motion) > 1e-12 {
        scale(motion, 1.0 / norm(motion))
    } else {
        [1.0, 0.0]
    };
    *mug = clamp2(add(*mug, scale(normal, reach - dist)), MUG_MIN, MUG_MAX);
    true
}

/// Advances the scene by one clipped action.
///
/// When the straightforward update would violate a scene invariant (a mug
/// jammed against the table edge, the other mug or the drawer handle) the
/// action is scaled back to the largest legal fraction.
pub fn step(s: &SceneState, a: Action) -> SceneState {
    let delta = a.clipped().delta;
    let full = apply(s, delta);
    if full.is_valid() {
        return full;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BLOCK_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if apply(s, scale(delta, mid)).is_valid() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return *s;
    }
    apply(s, scale(delta, lo))
}

/// The six evaluation tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    CloseDrawer,
    OpenDrawer,
    FaucetLeft,
    FaucetRight,
    BlackMugRight,
    WhiteMugDown,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::CloseDrawer,
        TaskId::OpenDrawer,
        TaskId::FaucetLeft,
        TaskId::FaucetRight,
        TaskId::BlackMugRight,
        TaskId::WhiteMugDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::CloseDrawer => "close-drawer",
            TaskId::OpenDrawer => "open-drawer",
            TaskId::FaucetLeft => "faucet-left",
            TaskId::FaucetRight => "faucet-right",
            TaskId::BlackMugRight => "black-mug-right",
            TaskId::WhiteMugDown => "white-mug-down",
        }
    }

    /// Command used for language-conditioned methods.
    pub fn instruction(self) -> &'static str {
        match self {
            TaskId::CloseDrawer => "close drawer",
            TaskId::OpenDrawer => "open drawer",
            TaskId::FaucetLeft => "turn faucet left",
            TaskId::FaucetRight => "turn faucet right",
            TaskId::BlackMugRight => "move black mug right",
            TaskId::WhiteMugDown => "move white mug down",
        }
    }

    pub fn spec(self) -> TaskSpec {
        let threshold = match self {
            TaskId::FaucetLeft | TaskId::FaucetRight => PI / 10.0,
            _ => 0.02,
        };
        TaskSpec { id: self, threshold }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Meters for drawer and mug tasks, radians for faucet tasks.
    pub threshold: f64,
}

impl TaskSpec {
    /// Signed displacement of the task's object in the task direction.
    pub fn progress(&self, s0: &SceneState, s: &SceneState) -> f64 {
        match self.id {
            TaskId::CloseDrawer => s0.drawer_ext - s.drawer_ext,
            TaskId::OpenDrawer => s.drawer_ext - s0.drawer_ext,
            TaskId::FaucetLeft => s.faucet_angle - s0.faucet_angle,
            TaskId::FaucetRight => s0.faucet_angle - s.faucet_angle,
            TaskId::BlackMugRight => s.black_mug[0] - s0.black_mug[0],
            TaskId::WhiteMugDown => s0.white_mug[1] - s.white_mug[1],
        }
    }
}

// Absorbs representation error for displacements that land exactly on the threshold.
const SUCCESS_SLACK: f64 = 1e-12;

/// True iff the task's object moved at least `threshold` in the task direction.
pub fn success(task: &TaskSpec, s0: &SceneState, s: &SceneState) -> bool {
    task.progress(s0, s) >= task.threshold - SUCCESS_SLACK
}

/// Success at any point along a trajectory that starts at `states[0]`.
pub fn success_any(task: &TaskSpec, states: &[SceneState]) -> bool {
    match states.first() {
        Some(s0) => states.iter().any(|s| success(task, s0, s)),
        None => false,
    }
}

/// Squared L2 distance between two state vectors.
pub fn sub_sq(a: &StateVec, b: &StateVec) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clips a (possibly predicted) state vector to the legal coordinate ranges.
pub fn clip_state_vector(v: &mut StateVec) {
    v[0] = v[0].clamp(0.0, TABLE_WIDTH);
    v[1] = v[1].clamp(0.0, TABLE_DEPTH);
    v[2] = v[2].clamp(0.0, DRAWER_MAX_EXT);
    v[3] = v[3].clamp(-FAUCET_MAX_ANGLE, FAUCET_MAX_ANGLE);
    for i in [4, 6] {
        v[i] = v[i].clamp(MUG_MIN[0], MUG_MAX[0]);
        v[i + 1] = v[i + 1].clamp(MUG_MIN[1], MUG_MAX[1]);
    }
}
