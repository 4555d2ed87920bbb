//! Two-link acrobot with torque on the middle joint, integrated with one
//! RK4 step per 0.2 s action. Observations are
//! `[cos t1, sin t1, cos t2, sin t2, t1_dot, t2_dot]`; the angles are
//! recovered with `atan2` so that a transition depends only on the
//! observation.

use std::f64::consts::PI;

const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const DT: f64 = 0.2;

pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

pub(super) fn observe(angles: [f64; 4]) -> Vec<f64> {
    let [t1, t2, d1, d2] = angles;
    vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
}

pub(super) fn angles(obs: &[f64]) -> [f64; 4] {
    [obs[1].atan2(obs[0]), obs[3].atan2(obs[2]), obs[4], obs[5]]
}

fn derivatives(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2, i1, i2) = (
        LINK_MASS_1,
        LINK_MASS_2,
        LINK_LENGTH_1,
        LINK_COM_1,
        LINK_COM_2,
        LINK_MOI,
        LINK_MOI,
    );
    let [t1, t2, d1, d2] = s;
    let dd1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + i1 + i2;
    let dd2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + i2;
    let phi2 = m2 * lc2 * GRAVITY * (t1 + t2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * d2 * d2 * t2.sin() - 2.0 * m2 * l1 * lc2 * d2 * d1 * t2.sin()
        + (m1 * lc1 + m2 * l1) * GRAVITY * (t1 - PI / 2.0).cos()
        + phi2;
    let acc2 = (torque + dd2 / dd1 * phi1 - m2 * l1 * lc2 * d1 * d1 * t2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - dd2 * dd2 / dd1);
    let acc1 = -(dd2 * acc2 + phi1) / dd1;
    [d1, d2, acc1, acc2]
}

fn rk4(s: [f64; 4], torque: f64, h: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
    let k1 = derivatives(s, torque);
    let k2 = derivatives(add(s, k1, h / 2.0), torque);
    let k3 = derivatives(add(s, k2, h / 2.0), torque);
    let k4 = derivatives(add(s, k3, h), torque);
    let mut out = s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn wrap(x: f64) -> f64 {
    let span = 2.0 * PI;
    let mut x = x;
    while x > PI {
        x -= span;
    }
    while x < -PI {
        x += span;
    }
    x
}

pub(super) fn is_goal(t1: f64, t2: f64) -> bool {
    -t1.cos() - (t1 + t2).cos() > 1.0
}

pub(super) fn step(obs: &[f64], action: usize) -> (Vec<f64>, bool) {
    let s = angles(obs);
    let mut ns = rk4(s, TORQUES[action], DT);
    ns[0] = wrap(ns[0]);
    ns[1] = wrap(ns[1]);
    ns[2] = ns[2].clamp(-MAX_VEL_1, MAX_VEL_1);
    ns[3] = ns[3].clamp(-MAX_VEL_2, MAX_VEL_2);
    let done = is_goal(ns[0], ns[1]);
    (observe(ns), done)
}
