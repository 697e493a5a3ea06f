//! Reproducible noise: Ornstein–Uhlenbeck magnetic trajectories, quasi-static
//! drive deviations and the T₂* calibration of the magnetic noise scale.
//!
//! Every random stream is a `ChaCha8Rng` seeded with the master seed and
//! switched to stream `4·shot + channel`, so a shot's noise depends only on
//! (seed, shot) and never on scheduling.

use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::fid_coherence;
use crate::exec::Execution;
use crate::spectrum::NoiseDirection;

/// Identifier recorded in output sidecars.
pub const RNG_ID: &str = "rand_chacha-0.9/ChaCha8Rng; seed_from_u64(seed); stream = 4*shot + channel; normals: rand_distr-0.5 StandardNormal";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise parameter: {0}")]
    Invalid(String),
    #[error("calibration did not converge after {0} bisection steps")]
    NoConvergence(usize),
    #[error("calibration target not bracketed: envelope {lo:.3} at low σ, {hi:.3} at high σ")]
    NotBracketed { lo: f64, hi: f64 },
}

/// Random stream purposes within one shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Magnetic = 0,
    Drive = 1,
    Aux = 2,
}

pub fn stream_rng(seed: u64, shot: u64, channel: Channel) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot.wrapping_mul(4).wrapping_add(channel as u64));
    rng
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    /// Stationary standard deviation of δB (rad/s).
    pub sigma: f64,
    /// Correlation time (s).
    pub tau_c: f64,
}

impl OUParams {
    pub fn new(sigma: f64, tau_c: f64) -> Result<Self, NoiseError> {
        let p = Self { sigma, tau_c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(NoiseError::Invalid("sigma must be finite and non-negative".into()));
        }
        if !(self.tau_c > 0.0) {
            return Err(NoiseError::Invalid("tau_c must be positive".into()));
        }
        Ok(())
    }
}

/// Exact-discretization OU generator on a uniform grid.
#[derive(Clone, Debug)]
pub struct OuStream {
    a: f64,
    b: f64,
    x: f64,
    rng: ChaCha8Rng,
}

impl OuStream {
    pub fn new(p: OUParams, dt: f64, mut rng: ChaCha8Rng) -> Self {
        let a = (-dt / p.tau_c).exp();
        let b = p.sigma * (-(-2.0 * dt / p.tau_c).exp_m1()).sqrt();
        let x = p.sigma * normal(&mut rng);
        Self { a, b, x, rng }
    }

    pub fn current(&self) -> f64 {
        self.x
    }

    /// Returns the current value and advances one step.
    pub fn advance(&mut self) -> f64 {
        let x = self.x;
        self.x = self.a * x + self.b * normal(&mut self.rng);
        x
    }
}

pub fn ou_sample(p: OUParams, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>, NoiseError> {
    p.validate()?;
    if !(dt > 0.0) || n == 0 {
        return Err(NoiseError::Invalid("need dt > 0 and n >= 1".into()));
    }
    let mut s = OuStream::new(p, dt, stream_rng(seed, 0, Channel::Magnetic));
    Ok((0..n).map(|_| s.advance()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriveNoiseMode {
    Correlated,
    Independent,
    /// δ₂ = ratio·δ₁.
    Imbalanced { ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveNoiseParams {
    pub delta_rms: f64,
    pub mode: DriveNoiseMode,
    /// Draw a fresh Gaussian deviation per shot; when false every shot uses
    /// the deterministic deviation `delta_rms·(w₁, w₂)`.
    pub resample_per_shot: bool,
}

impl DriveNoiseParams {
    pub fn correlated(delta_rms: f64) -> Self {
        Self { delta_rms, mode: DriveNoiseMode::Correlated, resample_per_shot: true }
    }

    pub fn none() -> Self {
        Self::correlated(0.0)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.delta_rms >= 0.0 && self.delta_rms < 1.0) {
            return Err(NoiseError::Invalid("delta_rms must lie in [0, 1)".into()));
        }
        if let DriveNoiseMode::Imbalanced { ratio } = self.mode {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(NoiseError::Invalid("imbalance ratio must be positive".into()));
            }
        }
        Ok(())
    }

    /// Per-tone weights used by the analytic susceptibility model.
    pub fn direction(&self) -> NoiseDirection {
        match self.mode {
            DriveNoiseMode::Correlated | DriveNoiseMode::Independent => NoiseDirection::correlated(),
            DriveNoiseMode::Imbalanced { ratio } => NoiseDirection::imbalanced(ratio),
        }
    }
}

pub fn draw_drive_deviation(p: &DriveNoiseParams, seed: u64, shot: u64) -> (f64, f64) {
    if p.delta_rms == 0.0 {
        return (0.0, 0.0);
    }
    if !p.resample_per_shot {
        let w = p.direction();
        return (p.delta_rms * w.w1, p.delta_rms * w.w2);
    }
    let mut rng = stream_rng(seed, shot, Channel::Drive);
    let x = p.delta_rms * normal(&mut rng);
    match p.mode {
        DriveNoiseMode::Correlated => (x, x),
        DriveNoiseMode::Independent => (x, p.delta_rms * normal(&mut rng)),
        DriveNoiseMode::Imbalanced { ratio } => (x, ratio * x),
    }
}

/// One shot's noise on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseRealization {
    pub delta_b: Vec<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub dt: f64,
    pub seed: u64,
    pub shot: u64,
}

impl NoiseRealization {
    pub fn generate(ou: OUParams, drive: &DriveNoiseParams, dt: f64, n: usize, seed: u64, shot: u64) -> Self {
        let mut s = OuStream::new(ou, dt, stream_rng(seed, shot, Channel::Magnetic));
        let (delta1, delta2) = draw_drive_deviation(drive, seed, shot);
        Self { delta_b: (0..n).map(|_| s.advance()).collect(), delta1, delta2, dt, seed, shot }
    }
}

/// Which bare coherence the T₂* calibration probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FidProbe {
    /// |0⟩↔|−1⟩, phase weight 1 under δB·S_z.
    SingleQuantum,
    /// |−1⟩↔|+1⟩, phase weight 2.
    #[default]
    DoubleQuantum,
}

impl FidProbe {
    pub fn weight(&self) -> f64 {
        match self {
            FidProbe::SingleQuantum => 1.0,
            FidProbe::DoubleQuantum => 2.0,
        }
    }

    /// Bare-basis indices (a, b) of the superposition.
    pub fn levels(&self) -> (usize, usize) {
        match self {
            FidProbe::SingleQuantum => (1, 0),
            FidProbe::DoubleQuantum => (0, 2),
        }
    }
}

/// Quasi-static estimate: a Gaussian phase with weight w decays as
/// exp(−w²σ²t²/2), reaching 1/e at t = √2/(wσ).
pub fn sigma_quasi_static(t2_star: f64, probe: FidProbe) -> f64 {
    SQRT_2 / (probe.weight() * t2_star)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub probe: FidProbe,
    pub trials: usize,
    pub seed: u64,
    /// Integration steps across one T₂*.
    pub steps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { probe: FidProbe::default(), trials: 2000, seed: 0x5eed, steps: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub sigma_quasi_static: f64,
    pub iterations: usize,
    /// Simulated FID envelope at the target time (≈ 1/e).
    pub envelope_at_target: f64,
}

/// σ whose simulated FID envelope equals 1/e at `t2_star`; bisection in log σ
/// with common random numbers across iterations.
pub fn calibrate_sigma(
    t2_star: f64,
    tau_c: f64,
    opts: &CalibrationOptions,
    exec: Execution,
) -> Result<Calibration, NoiseError> {
    if !(t2_star > 0.0 && tau_c > 0.0) {
        return Err(NoiseError::Invalid("t2_star and tau_c must be positive".into()));
    }
    if opts.trials == 0 || opts.steps == 0 {
        return Err(NoiseError::Invalid("trials and steps must be positive".into()));
    }
    let s0 = sigma_quasi_static(t2_star, opts.probe);
    let target = (-1.0f64).exp();
    let dt = t2_star / opts.steps as f64;
    let env = |sigma: f64| -> Result<f64, NoiseError> {
        let ou = OUParams::new(sigma, tau_c)?;
        let c = fid_coherence(ou, opts.probe, dt, &[opts.steps], opts.trials, opts.seed, exec);
        Ok(c[0])
    };
    let (mut lo, mut hi) = (s0 / 4.0, s0 * 4.0);
    let (e_lo, e_hi) = (env(lo)?, env(hi)?);
    if !(e_lo > target && e_hi < target) {
        return Err(NoiseError::NotBracketed { lo: e_lo, hi: e_hi });
    }
    for it in 1..=40 {
        let mid = (lo * hi).sqrt();
        let e = env(mid)?;
        if e > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-4 {
            let sigma = (lo * hi).sqrt();
            return Ok(Calibration { sigma, sigma_quasi_static: s0, iterations: it, envelope_at_target: env(sigma)? });
        }
    }
    Err(NoiseError::NoConvergence(40))
}
