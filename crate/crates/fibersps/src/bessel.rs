//! Thin wrappers over the cylinder-function routines used by the mode
//! solver. The upstream routines reject x <= 0, so the J family gets an
//! explicit series branch for the on-axis limit.

use puruspe::{besselik, besseljy};

/// J_n(x) for n in {0, 1}, valid down to x = 0.
pub(crate) fn jn(n: u32, x: f64) -> f64 {
    debug_assert!(n <= 1);
    if x < 1e-8 {
        return match n {
            0 => 1.0 - 0.25 * x * x,
            _ => 0.5 * x * (1.0 - x * x / 8.0),
        };
    }
    let (j, _, _, _) = besseljy(n as f64, x);
    j
}

/// d/dx J_n(x) for n in {0, 1}, valid down to x = 0.
pub(crate) fn jn_prime(n: u32, x: f64) -> f64 {
    debug_assert!(n <= 1);
    if x < 1e-8 {
        return match n {
            0 => -0.5 * x,
            _ => 0.5 - 3.0 * x * x / 16.0,
        };
    }
    let (_, _, jp, _) = besseljy(n as f64, x);
    jp
}

/// J_1(x)/x, finite at x = 0 (-> 1/2).
pub(crate) fn j1_over_x(x: f64) -> f64 {
    if x < 1e-8 {
        return 0.5 - x * x / 16.0;
    }
    jn(1, x) / x
}

/// K_n(x) for n in {0, 1}; requires x > 0.
pub(crate) fn kn(n: u32, x: f64) -> f64 {
    debug_assert!(n <= 1 && x > 0.0);
    let (_, k, _, _) = besselik(n as f64, x);
    k
}

/// d/dx K_n(x) for n in {0, 1}; requires x > 0.
pub(crate) fn kn_prime(n: u32, x: f64) -> f64 {
    debug_assert!(n <= 1 && x > 0.0);
    let (_, _, _, kp) = besselik(n as f64, x);
    kp
}
