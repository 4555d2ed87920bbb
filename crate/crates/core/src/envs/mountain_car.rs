//! Mountain car. State `[x, x_dot]`; actions 0/1/2 push left/none/right.

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

pub(super) fn step(s: &[f64], action: usize) -> (Vec<f64>, bool) {
    let (x, v) = (s[0], s[1]);
    let mut v = v + (action as f64 - 1.0) * FORCE - GRAVITY * (3.0 * x).cos();
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    let x = (x + v).clamp(MIN_POSITION, MAX_POSITION);
    if x == MIN_POSITION && v < 0.0 {
        v = 0.0;
    }
    (vec![x, v], x >= GOAL_POSITION)
}
