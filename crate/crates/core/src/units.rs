//! Unit helpers. Internally every frequency is an angular frequency in rad/s
//! and every time is in seconds; cyclic MHz only appears at the boundaries.

use std::f64::consts::TAU;

/// Cyclic MHz to rad/s.
pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e6
}

/// Cyclic kHz to rad/s.
pub fn khz(f: f64) -> f64 {
    TAU * f * 1e3
}

/// Cyclic GHz to rad/s.
pub fn ghz(f: f64) -> f64 {
    TAU * f * 1e9
}

/// rad/s to cyclic MHz.
pub fn to_mhz(w: f64) -> f64 {
    w / (TAU * 1e6)
}

pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

pub fn ms(t: f64) -> f64 {
    t * 1e-3
}
