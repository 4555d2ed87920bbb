//! One-dimensional walker used as a synthetic diagnostic task: action 0
//! moves one unit left, action 1 one unit right, the episode ends on
//! reaching `GOAL`.

pub const GOAL: f64 = 10.0;

pub(super) fn step(s: &[f64], action: usize) -> (Vec<f64>, bool) {
    let x = s[0] + if action == 1 { 1.0 } else { -1.0 };
    (vec![x], x >= GOAL)
}
