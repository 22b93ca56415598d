//! Fixed one-dimensional profiles: smooth steps, partition-of-unity windows,
//! compactly supported bumps, the time cutoff `eta` and polynomial decay kernels.

use std::f64::consts::PI;

fn expo(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

/// Smooth step, 0 for `t <= -1/2`, 1 for `t >= 1/2`, with `step(t) + step(-t) = 1`.
pub fn step(t: f64) -> f64 {
    let a = expo(t + 0.5);
    let b = expo(0.5 - t);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

/// Even bump supported on `[-1, 1]` with unit integral whose integer translates sum to one.
pub fn window(t: f64) -> f64 {
    step(t + 0.5) - step(t - 0.5)
}

/// Weights of the two windows centred at `k0` and `k0 + 1` at position `t`
/// (in units of the window spacing), with `k0 = floor(t)`. The pair sums to one.
pub fn window_pair(t: f64) -> (i64, f64, f64) {
    let k0 = t.floor();
    let u = t - k0;
    let right = step(u - 0.5);
    (k0 as i64, 1.0 - right, right)
}

/// Compactly supported bump on `(-1, 1)` with `bump(0) = 1`.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Plateau profile: 1 on `[lo_in, hi_in]`, 0 outside `(lo_out, hi_out)`, smooth in between.
pub fn plateau(x: f64, lo_out: f64, lo_in: f64, hi_in: f64, hi_out: f64) -> f64 {
    if x <= lo_out || x >= hi_out {
        0.0
    } else if x < lo_in {
        step((x - lo_out) / (lo_in - lo_out) - 0.5)
    } else if x > hi_in {
        step((hi_out - x) / (hi_out - hi_in) - 0.5)
    } else {
        1.0
    }
}

/// The frequency profile of the lower-bound families: supported in `[1/4, 4]`, equal to 1 on `[1/2, 2]`.
pub fn psi_quarter_four(xi: f64) -> f64 {
    plateau(xi, 0.25, 0.5, 2.0, 4.0)
}

/// Squared Fejer kernel `(sin(t/4) / (t/4))^4`; its Fourier transform is supported on `[-1, 1]`.
pub fn eta(t: f64) -> f64 {
    let u = t / 4.0;
    if u.abs() < 1e-8 {
        1.0
    } else {
        let s = u.sin() / u;
        s * s * s * s
    }
}

pub const ETA_NAME: &str = "squared Fejer kernel (sin(t/4)/(t/4))^4";

/// Normalising constant making `(1 + |y|)^(-n)` integrate to one over the plane (`n > 2`).
pub fn decay_normaliser(n: f64) -> f64 {
    (n - 1.0) * (n - 2.0) / (2.0 * PI)
}

/// `(1 + r)^(-n)`.
pub fn decay(r: f64, n: f64) -> f64 {
    (1.0 + r).powf(-n)
}
