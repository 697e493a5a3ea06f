//! Stochastic Schrödinger integration and the measurement protocols: bare
//! FID and Rabi, the dressed-basis Ramsey sequence and the doubly-dressed
//! survival probe, run as deterministic Monte Carlo ensembles.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::hamiltonian::{h_ii_static, h_pulse, DriveConfig, NoiseSample, B, D, U};
use crate::linalg::{expm_raw, mat_vec, Basis, Hermitian3, LinalgError, Mat3, State3};
use crate::noise::{
    draw_drive_deviation, stream_rng, Channel, DriveNoiseParams, FidProbe, NoiseError, OUParams, OuStream, RNG_ID,
};
use crate::spectrum::{doubly_dressed_spectrum, SpectrumError};

/// Steps per period of the fastest frequency.
pub const STEPS_PER_PERIOD: f64 = 20.0;
/// Longest lab-frame window accepted by protocols.
pub const LAB_FRAME_MAX: f64 = 2e-6;
/// Trials integrated together before their results are folded in index order.
const TRIAL_BLOCK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step {dt:.3e} s exceeds the resolution bound {bound:.3e} s")]
    Resolution { dt: f64, bound: f64 },
    #[error("invalid protocol: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Largest dt allowed for a fastest cyclic frequency `f_max_hz`.
pub fn resolution_bound(f_max_hz: f64) -> f64 {
    1.0 / (STEPS_PER_PERIOD * f_max_hz)
}

/// Fastest cyclic frequency (Hz) of the dressed-frame dynamics: Δ, Ω_D and the
/// eigenvalue gaps of the static part.
pub fn dressed_frame_f_max(cfg: &DriveConfig) -> f64 {
    let e = h_ii_static(cfg, &NoiseSample::ZERO).eig().values;
    let w = cfg.delta.abs().max(cfg.omega_d()).max(e[2] - e[0]);
    w / (2.0 * PI)
}

fn check_step(dt: f64, f_max_hz: f64) -> Result<(), DynamicsError> {
    let bound = resolution_bound(f_max_hz);
    if !(dt > 0.0 && dt.is_finite()) || dt > bound * (1.0 + 1e-9) {
        return Err(DynamicsError::Resolution { dt, bound });
    }
    Ok(())
}

fn step_count(total: f64, dt: f64) -> usize {
    ((total / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Midpoint-exponential integration ψ ← exp(−i h(t+dt/2) dt) ψ. The last step
/// is shortened so the run ends exactly at `total`.
pub fn evolve<F>(h: F, psi0: &State3, dt: f64, total: f64, f_max_hz: f64) -> Result<State3, DynamicsError>
where
    F: Fn(f64) -> Hermitian3,
{
    Ok(evolve_trajectory(h, psi0, dt, total, f_max_hz, usize::MAX)?.pop().map(|(_, s)| s).unwrap_or(*psi0))
}

/// Like [`evolve`], returning (t, ψ) every `record_every` steps plus the final state.
pub fn evolve_trajectory<F>(
    h: F,
    psi0: &State3,
    dt: f64,
    total: f64,
    f_max_hz: f64,
    record_every: usize,
) -> Result<Vec<(f64, State3)>, DynamicsError>
where
    F: Fn(f64) -> Hermitian3,
{
    check_step(dt, f_max_hz)?;
    if !(total >= 0.0) {
        return Err(DynamicsError::Invalid("total duration must be non-negative".into()));
    }
    let basis = psi0.basis();
    let n = step_count(total, dt);
    let mut out = vec![(0.0, *psi0)];
    let mut psi = *psi0.amps();
    let mut t = 0.0;
    for k in 0..n {
        let step = if k + 1 == n { total - t } else { dt };
        let hm = h(t + 0.5 * step);
        if hm.basis() != basis {
            return Err(LinalgError::BasisMismatch { expected: basis, found: hm.basis() }.into());
        }
        psi = mat_vec(&expm_raw(&hm, step), &psi);
        t = if k + 1 == n { total } else { (k + 1) as f64 * dt };
        if (k + 1) % record_every == 0 || k + 1 == n {
            out.push((t, State3::from_raw(psi, basis)));
        }
    }
    Ok(out)
}

/// Strang-split propagator for the dressed frame: static part exp(−iH_s dt/2)
/// around an exact kick exp(−i dt·s·δB(e^{iΔt}|B⟩⟨D̂| + h.c.)), D̂ = (|u⟩−|d⟩)/√2.
#[derive(Clone, Copy, Debug)]
pub struct SplitStepper {
    half: Mat3,
    dt: f64,
    delta: f64,
    sign: f64,
}

impl SplitStepper {
    pub fn new(cfg: &DriveConfig, drive: (f64, f64), dt: f64) -> Self {
        let h = h_ii_static(cfg, &NoiseSample::drive(drive.0, drive.1));
        Self { half: expm_raw(&h, 0.5 * dt), dt, delta: cfg.delta, sign: cfg.resonant_sign() }
    }

    /// Advances ψ from t to t+dt with the magnetic value `delta_b` held over the step.
    #[inline]
    pub fn step(&self, psi: &mut [C64; 3], t: f64, delta_b: f64) {
        *psi = mat_vec(&self.half, psi);
        let (s, c) = (self.sign * delta_b * self.dt).sin_cos();
        let (ps, pc) = (self.delta * (t + 0.5 * self.dt)).sin_cos();
        let ph = C64::new(pc, ps);
        let dc = (psi[U] - psi[D]) * FRAC_1_SQRT_2;
        let bc = psi[B];
        let mis = C64::new(0.0, -s);
        let nb = bc * c + mis * ph * dc;
        let nd = dc * c + mis * ph.conj() * bc;
        let dd = (nd - dc) * FRAC_1_SQRT_2;
        psi[U] += dd;
        psi[D] -= dd;
        psi[B] = nb;
        *psi = mat_vec(&self.half, psi);
    }
}

/// Transition driven in a bare Rabi experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transition {
    /// |0⟩↔|−1⟩ with coupling rabi1.
    Minus,
    /// |0⟩↔|+1⟩ with coupling rabi1.
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Protocol {
    FidBare { probe: FidProbe },
    RabiBare { transition: Transition },
    DressedRamsey,
    SurvivalProbe,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::FidBare { .. } => "fid-bare",
            Protocol::RabiBare { .. } => "rabi-bare",
            Protocol::DressedRamsey => "dressed-ramsey",
            Protocol::SurvivalProbe => "survival",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    #[default]
    Rotating,
    /// Carrier-resolved bare-basis integration (bare Rabi only, ≤ 2 µs).
    Lab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub protocol: Protocol,
    pub taus: Vec<f64>,
    pub frame: Frame,
    /// Integrator step override; defaults to the resolution bound.
    pub dt: Option<f64>,
}

impl ProtocolSpec {
    pub fn new(protocol: Protocol, taus: Vec<f64>) -> Result<Self, DynamicsError> {
        let s = Self { protocol, taus, frame: Frame::Rotating, dt: None };
        s.validate()?;
        Ok(s)
    }

    /// Uniform grid `start, start+step, …` with `n` points.
    pub fn uniform(protocol: Protocol, start: f64, step: f64, n: usize) -> Result<Self, DynamicsError> {
        Self::new(protocol, (0..n).map(|k| start + k as f64 * step).collect())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.taus.is_empty() {
            return Err(DynamicsError::Invalid("empty τ grid".into()));
        }
        if self.taus[0] < 0.0 || self.taus.iter().any(|t| !t.is_finite()) {
            return Err(DynamicsError::Invalid("τ values must be finite and non-negative".into()));
        }
        if self.taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DynamicsError::Invalid("τ grid must be strictly increasing".into()));
        }
        if self.frame == Frame::Lab {
            if !matches!(self.protocol, Protocol::RabiBare { .. }) {
                return Err(DynamicsError::Invalid("lab frame is only available for bare Rabi".into()));
            }
            if self.taus[self.taus.len() - 1] > LAB_FRAME_MAX {
                return Err(DynamicsError::Invalid("lab-frame windows are limited to 2 µs".into()));
            }
        }
        Ok(())
    }

    fn f_max(&self, cfg: &DriveConfig) -> f64 {
        match (self.protocol, self.frame) {
            (_, Frame::Lab) => cfg.omega1.max(cfg.omega2) / (2.0 * PI),
            (Protocol::FidBare { .. }, _) => 0.0,
            (Protocol::RabiBare { .. }, _) => 2.0 * cfg.rabi1 / (2.0 * PI),
            _ => dressed_frame_f_max(cfg),
        }
    }

    /// Integrator step and the step index of every τ. A uniform grid whose
    /// points are multiples of its spacing gets a step dividing that spacing.
    fn grid(&self, cfg: &DriveConfig, sigma: f64) -> Result<(f64, Vec<usize>), DynamicsError> {
        let f = self.f_max(cfg).max(3.0 * sigma / (2.0 * PI));
        let bound = if f > 0.0 { resolution_bound(f) } else { f64::INFINITY };
        let mut dt = match self.dt {
            Some(dt) => {
                check_step(dt, f.max(f64::MIN_POSITIVE))?;
                dt
            }
            None => bound,
        };
        let taus = &self.taus;
        if taus.len() >= 2 {
            // every τ an integer multiple of the smallest spacing: use a step dividing it
            let h = taus.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let aligned = taus.iter().all(|t| (t / h - (t / h).round()).abs() < 1e-6);
            if aligned {
                dt = if dt.is_finite() { h / (h / dt - 1e-9).ceil() } else { h };
            }
        } else if !dt.is_finite() {
            dt = taus[0].max(1e-9);
        }
        if !dt.is_finite() {
            dt = (taus[taus.len() - 1] / 1000.0).max(1e-12);
        }
        let idx = taus.iter().map(|t| (t / dt).round() as usize).collect();
        Ok((dt, idx))
    }
}

/// Noise model shared by all trials of an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub ou: OUParams,
    pub drive: DriveNoiseParams,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { ou: OUParams { sigma: 0.0, tau_c: 1.0 }, drive: DriveNoiseParams::none() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub protocol: String,
    pub taus: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub dt: f64,
    pub rng: String,
}

impl EnsembleResult {
    /// CSV with header `tau_s,mean,stderr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,mean,stderr\n");
        for i in 0..self.taus.len() {
            s.push_str(&format!("{:e},{:e},{:e}\n", self.taus[i], self.mean[i], self.stderr[i]));
        }
        s
    }
}

/// π/2 pulse on the |0⟩↔|−1⟩ tone: in the lambda basis its coupling to the
/// bright/dark pair is rabi1, so the nominal duration is π/(4·rabi1).
pub fn pi_half_duration(cfg: &DriveConfig) -> f64 {
    PI / (4.0 * cfg.rabi1)
}

fn pulse_unitary(cfg: &DriveConfig, delta1: f64, delta_b: f64) -> Mat3 {
    let n = NoiseSample { delta_b, delta1, delta2: 0.0 };
    expm_raw(&h_pulse(cfg, &n), pi_half_duration(cfg))
}

struct ShotContext<'a> {
    cfg: &'a DriveConfig,
    noise: &'a NoiseModel,
    dt: f64,
    idx: &'a [usize],
    seed: u64,
}

impl ShotContext<'_> {
    fn ou(&self, shot: u64) -> OuStream {
        OuStream::new(self.noise.ou, self.dt, stream_rng(self.seed, shot, Channel::Magnetic))
    }

    fn last(&self) -> usize {
        self.idx[self.idx.len() - 1]
    }

    /// Runs a dressed-frame trajectory from ψ(0), calling `obs` at each τ index.
    fn dressed_run<F>(&self, shot: u64, psi0: [C64; 3], mut obs: F) -> Vec<f64>
    where
        F: FnMut(&[C64; 3], f64, f64) -> f64,
    {
        let drive = draw_drive_deviation(&self.noise.drive, self.seed, shot);
        let stepper = SplitStepper::new(self.cfg, drive, self.dt);
        let mut ou = self.ou(shot);
        let mut psi = psi0;
        let mut out = Vec::with_capacity(self.idx.len());
        let mut next = 0;
        for k in 0..=self.last() {
            while next < self.idx.len() && self.idx[next] == k {
                let t = k as f64 * self.dt;
                out.push(obs(&psi, t, ou.current()));
                next += 1;
            }
            if k == self.last() {
                break;
            }
            let x = ou.advance();
            stepper.step(&mut psi, k as f64 * self.dt, x);
        }
        out
    }

    fn survival(&self, shot: u64, vb: [C64; 3], vd: [C64; 3]) -> Vec<f64> {
        let psi0 = [0, 1, 2].map(|i| (vb[i] + vd[i]) * FRAC_1_SQRT_2);
        let delta = self.cfg.delta;
        self.dressed_run(shot, psi0, |psi, t, _| {
            let ob = inner3(&vb, psi) * C64::from_polar(1.0, -delta * t);
            let od = inner3(&vd, psi);
            ((ob + od) * FRAC_1_SQRT_2).norm_sqr()
        })
    }

    fn ramsey(&self, shot: u64) -> Vec<f64> {
        let (d1, _) = draw_drive_deviation(&self.noise.drive, self.seed, shot);
        let to_dressed = *self.cfg.dressed_frame().matrix();
        let to_lambda = *self.cfg.dressed_frame().adjoint().matrix();
        let ou0 = self.ou(shot).current();
        let p1 = pulse_unitary(self.cfg, d1, ou0);
        let zero = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let psi0 = mat_vec(&to_dressed, &mat_vec(&p1, &zero));
        let cfg = self.cfg;
        self.dressed_run(shot, psi0, |psi, t, x| {
            let mut v = *psi;
            v[B] *= C64::from_polar(1.0, -cfg.delta * t);
            let lam = mat_vec(&to_lambda, &v);
            let fin = mat_vec(&pulse_unitary(cfg, d1, x), &lam);
            fin[0].norm_sqr()
        })
    }

    fn rabi(&self, shot: u64, transition: Transition, frame: Frame) -> Vec<f64> {
        let (d1, _) = draw_drive_deviation(&self.noise.drive, self.seed, shot);
        let mut ou = self.ou(shot);
        let j = match transition {
            Transition::Minus => 0,
            Transition::Plus => 2,
        };
        let g = self.cfg.rabi1 * (1.0 + d1);
        let (w1, w2) = (self.cfg.omega1, self.cfg.omega2);
        let w = if j == 0 { w1 } else { w2 };
        let mut psi = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let mut out = Vec::with_capacity(self.idx.len());
        let mut next = 0;
        for k in 0..=self.last() {
            while next < self.idx.len() && self.idx[next] == k {
                out.push(psi[1].norm_sqr());
                next += 1;
            }
            if k == self.last() {
                break;
            }
            let x = ou.advance();
            let h = match frame {
                Frame::Rotating => {
                    Hermitian3::diag([-x, 0.0, x], Basis::Bare).with_coupling(1, j, C64::new(g, 0.0))
                }
                Frame::Lab => {
                    let t = (k as f64 + 0.5) * self.dt;
                    Hermitian3::diag([w1 - x, 0.0, w2 + x], Basis::Bare)
                        .with_coupling(1, j, C64::new(2.0 * g * (w * t).cos(), 0.0))
                }
            };
            psi = mat_vec(&expm_raw(&h, self.dt), &psi);
        }
        out
    }
}

fn inner3(a: &[C64; 3], b: &[C64; 3]) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1] + a[2].conj() * b[2]
}

/// Welford accumulation in trial-index order.
struct Accumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { n: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|m| (m / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Runs `trials` shots in blocks, folding results in index order.
pub fn run_trials<F>(trials: usize, len: usize, exec: Execution, shot: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(u64) -> Vec<f64> + Sync + Send,
{
    let mut acc = Accumulator::new(len);
    let mut start = 0;
    while start < trials {
        let n = TRIAL_BLOCK.min(trials - start);
        let block = map_indexed(n, exec, |i| shot((start + i) as u64));
        for r in &block {
            acc.push(r);
        }
        start += n;
    }
    let se = acc.stderr();
    (acc.mean, se)
}

pub fn run_protocol(
    spec: &ProtocolSpec,
    cfg: &DriveConfig,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<EnsembleResult, DynamicsError> {
    spec.validate()?;
    cfg.validate().map_err(|e| DynamicsError::Invalid(e.to_string()))?;
    noise.ou.validate()?;
    noise.drive.validate()?;
    if trials == 0 {
        return Err(DynamicsError::Invalid("trials must be positive".into()));
    }
    let (dt, idx) = spec.grid(cfg, noise.ou.sigma)?;
    let ctx = ShotContext { cfg, noise, dt, idx: &idx, seed };
    let len = idx.len();
    let (mean, stderr) = match spec.protocol {
        Protocol::FidBare { probe } => {
            let c = fid_signal(noise.ou, probe, dt, &idx, trials, seed, exec);
            (c.0, c.1)
        }
        Protocol::RabiBare { transition } => {
            if spec.frame == Frame::Rotating && cfg.rabi1 == 0.0 {
                return Err(DynamicsError::Invalid("bare Rabi needs rabi1 > 0".into()));
            }
            run_trials(trials, len, exec, |s| ctx.rabi(s, transition, spec.frame))
        }
        Protocol::DressedRamsey => {
            if cfg.rabi1 == 0.0 {
                return Err(DynamicsError::Invalid("Ramsey pulses need rabi1 > 0".into()));
            }
            run_trials(trials, len, exec, |s| ctx.ramsey(s))
        }
        Protocol::SurvivalProbe => {
            let sp = doubly_dressed_spectrum(cfg)?;
            let (vb, vd) = (sp.vectors[B], sp.vectors[D]);
            run_trials(trials, len, exec, |s| ctx.survival(s, vb, vd))
        }
    };
    Ok(EnsembleResult {
        protocol: spec.protocol.name().into(),
        taus: spec.taus.clone(),
        mean,
        stderr,
        trials,
        seed,
        dt,
        rng: RNG_ID.into(),
    })
}

fn fid_phases(ou: OUParams, probe: FidProbe, dt: f64, idx: &[usize], seed: u64, shot: u64) -> Vec<f64> {
    let mut s = OuStream::new(ou, dt, stream_rng(seed, shot, Channel::Magnetic));
    let w = probe.weight();
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(idx.len());
    let mut next = 0;
    let last = idx[idx.len() - 1];
    for k in 0..=last {
        while next < idx.len() && idx[next] == k {
            out.push(phase);
            next += 1;
        }
        if k < last {
            phase += w * s.advance() * dt;
        }
    }
    out
}

/// Bare FID survival (1 + cos φ)/2 of the probe superposition.
fn fid_signal(
    ou: OUParams,
    probe: FidProbe,
    dt: f64,
    idx: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> (Vec<f64>, Vec<f64>) {
    run_trials(trials, idx.len(), exec, |s| {
        fid_phases(ou, probe, dt, idx, seed, s).into_iter().map(|p| 0.5 * (1.0 + p.cos())).collect()
    })
}

/// Ensemble FID coherence |⟨e^{iφ}⟩| at the step indices `idx`.
pub fn fid_coherence(
    ou: OUParams,
    probe: FidProbe,
    dt: f64,
    idx: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Vec<f64> {
    let (c, _) = run_trials(trials, idx.len(), exec, |s| {
        fid_phases(ou, probe, dt, idx, seed, s).into_iter().map(f64::cos).collect()
    });
    let (sn, _) = run_trials(trials, idx.len(), exec, |s| {
        fid_phases(ou, probe, dt, idx, seed, s).into_iter().map(f64::sin).collect()
    });
    c.iter().zip(&sn).map(|(a, b)| a.hypot(*b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{h_i, h_ii_prime};
    use crate::noise::{calibrate_sigma, CalibrationOptions};
    use crate::units::{mhz, us};

    fn improved() -> DriveConfig {
        DriveConfig::from_dressed(mhz(2.0), mhz(2.0), mhz(8.9956), mhz(1.7386))
    }

    #[test]
    fn eigenstate_only_acquires_phase() {
        let e = [mhz(1.0), mhz(-2.0), mhz(0.5)];
        let h = Hermitian3::diag(e, Basis::Dressed);
        let psi = State3::basis_state(1, Basis::Dressed);
        let out = evolve(|_| h, &psi, 1e-9, 3.3e-6, 3.0e6).unwrap();
        let want = C64::from_polar(1.0, -e[1] * 3.3e-6);
        assert!((out.amps()[1] - want).norm() < 1e-9);
    }

    #[test]
    fn resolution_guard() {
        let h = Hermitian3::zero(Basis::Bare);
        let psi = State3::basis_state(0, Basis::Bare);
        assert!(matches!(evolve(|_| h, &psi, 1e-6, 1e-5, 1e6), Err(DynamicsError::Resolution { .. })));
    }

    #[test]
    fn rabi_oscillation_in_resonant_lambda() {
        let cfg = DriveConfig::from_dressed(mhz(2.0), 0.0, mhz(10.0), 0.0);
        let od = cfg.omega_d();
        let f = od / (2.0 * PI);
        let dt = 1.0 / (100.0 * f);
        let psi = State3::basis_state(0, Basis::Lambda);
        for total in [0.1e-6, 0.37e-6, 1.0e-6] {
            let out = evolve(|t| h_i(t, &cfg, &NoiseSample::ZERO), &psi, dt, total, f).unwrap();
            let want = (od * total).sin().powi(2);
            assert!((out.population(2) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn richardson_self_consistency() {
        // random smooth time dependence
        let h = |t: f64| {
            Hermitian3::diag([mhz(1.0) * (mhz(0.3) * t).cos(), mhz(-0.5), mhz(0.7)], Basis::Bare)
                .with_coupling(0, 1, C64::from_polar(mhz(0.8), mhz(0.9) * t))
                .with_coupling(1, 2, C64::new(mhz(0.4) * (mhz(0.2) * t).sin(), 0.0))
        };
        let psi = State3::normalized([C64::new(1.0, 0.0), C64::new(0.3, 0.2), C64::new(0.0, -0.5)], Basis::Bare);
        let total = 2e-6;
        let dt = 4e-9;
        let a = evolve(h, &psi, dt, total, 2e6).unwrap();
        let b = evolve(h, &psi, dt / 2.0, total, 2e6).unwrap();
        let c = evolve(h, &psi, dt / 4.0, total, 2e6).unwrap();
        let d1 = (0..3).map(|i| (a.amps()[i] - b.amps()[i]).norm()).fold(0.0, f64::max);
        let d2 = (0..3).map(|i| (b.amps()[i] - c.amps()[i]).norm()).fold(0.0, f64::max);
        // second order: successive differences shrink by ≈ 4
        assert!((d1 / d2 - 4.0).abs() < 0.5, "{d1} {d2}");
        assert!((c.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn split_stepper_converges_to_reference() {
        let cfg = improved();
        let drive = (0.003, 0.003);
        let total = 4e-6;
        let path = |t: f64| 3e5 * (5e6 * t).sin();
        let sp = doubly_dressed_spectrum(&cfg).unwrap();
        let psi0 = [0, 1, 2].map(|i| (sp.vectors[B][i] + sp.vectors[D][i]) * FRAC_1_SQRT_2);
        let split = |dt: f64| {
            let stepper = SplitStepper::new(&cfg, drive, dt);
            let mut psi = psi0;
            let n = (total / dt).round() as usize;
            for k in 0..n {
                stepper.step(&mut psi, k as f64 * dt, path((k as f64 + 0.5) * dt));
            }
            psi
        };
        let h = |t: f64| h_ii_prime(t, &cfg, &NoiseSample { delta_b: path(t), delta1: drive.0, delta2: drive.1 });
        let reference = evolve(h, &State3::from_raw(psi0, Basis::Dressed), 0.125e-9, total, 1e7).unwrap();
        let err = |psi: [C64; 3]| (0..3).map(|i| (psi[i] - reference.amps()[i]).norm()).fold(0.0, f64::max);
        let (e1, e2) = (err(split(2e-9)), err(split(1e-9)));
        assert!(e1 < 1e-4 && e2 < e1 / 3.0, "{e1} {e2}");
        let norm: f64 = split(2e-9).iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn survival_noiseless_flat_envelope() {
        let cfg = improved();
        let spec = ProtocolSpec::uniform(Protocol::SurvivalProbe, 0.0, 20e-9, 50_000).unwrap();
        let r = run_protocol(&spec, &cfg, &NoiseModel::noiseless(), 1, 1, Execution::Sequential).unwrap();
        assert!((r.mean[0] - 1.0).abs() < 1e-12);
        let sp = doubly_dressed_spectrum(&cfg).unwrap();
        let w = sp.energies_rad_s[B] + cfg.delta - sp.energies_rad_s[D];
        let mut worst: f64 = 0.0;
        for (t, s) in r.taus.iter().zip(&r.mean) {
            worst = worst.max((s - 0.5 * (1.0 + (w * t).cos())).abs());
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn ramsey_back_to_back_pulses() {
        let cfg = DriveConfig::from_dressed(mhz(6.0), mhz(6.0), mhz(19.35), 0.0);
        let spec = ProtocolSpec::new(Protocol::DressedRamsey, vec![0.0]).unwrap();
        let r = run_protocol(&spec, &cfg, &NoiseModel::noiseless(), 1, 1, Execution::Sequential).unwrap();
        assert!(r.mean[0] < 1e-12, "{}", r.mean[0]);
    }

    #[test]
    fn ramsey_without_detuned_drive_has_singly_dressed_beats() {
        let cfg = DriveConfig::from_dressed(mhz(3.0), 0.0, mhz(19.35), 0.0);
        let n = 512;
        let h = 10e-9;
        let spec = ProtocolSpec::uniform(Protocol::DressedRamsey, 0.0, h, n).unwrap();
        let r = run_protocol(&spec, &cfg, &NoiseModel::noiseless(), 1, 1, Execution::Sequential).unwrap();
        // only multiples of Ω_D can appear: the signal is periodic with 2π/Ω_D
        let period = 2.0 * PI / cfg.omega_d();
        let spec2 = ProtocolSpec::new(Protocol::DressedRamsey, vec![0.123e-6, 0.123e-6 + period]).unwrap();
        let r2 = run_protocol(&spec2, &cfg, &NoiseModel::noiseless(), 1, 1, Execution::Sequential).unwrap();
        assert!((r2.mean[0] - r2.mean[1]).abs() < 1e-6, "{:?}", r2.mean);
        assert!(r.mean.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fid_loop_closure() {
        let opts = CalibrationOptions::default();
        let cal = calibrate_sigma(2e-6, 15e-6, &opts, Execution::Parallel).unwrap();
        let ou = OUParams::new(cal.sigma, 15e-6).unwrap();
        let noise = NoiseModel { ou, drive: DriveNoiseParams::none() };
        let spec = ProtocolSpec::uniform(Protocol::FidBare { probe: opts.probe }, 0.0, 0.05e-6, 121).unwrap();
        let r = run_protocol(&spec, &DriveConfig::new(0.0, 0.0, 0.0), &noise, 2000, 99, Execution::Parallel).unwrap();
        let env: Vec<f64> = r.mean.iter().map(|s| 2.0 * s - 1.0).collect();
        let target = (-1.0f64).exp();
        let k = env.iter().position(|&e| e < target).unwrap();
        let t = r.taus[k - 1] + (env[k - 1] - target) / (env[k - 1] - env[k]) * (r.taus[k] - r.taus[k - 1]);
        assert!((t / 2e-6 - 1.0).abs() < 0.05, "T2* = {t}");
    }

    #[test]
    fn static_limit_independent_of_tau_c() {
        let sigma = 3.5e5;
        let a = fid_coherence(OUParams::new(sigma, 1.0).unwrap(), FidProbe::DoubleQuantum, 1e-8, &[200], 4000, 5, Execution::Parallel);
        let b = fid_coherence(OUParams::new(sigma, 100.0).unwrap(), FidProbe::DoubleQuantum, 1e-8, &[200], 4000, 5, Execution::Parallel);
        assert!((a[0] / b[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn rabi_bare_lab_vs_rotating() {
        let cfg = DriveConfig::new(mhz(2.0), 0.0, 0.0);
        let taus: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05e-6).collect();
        let rot = ProtocolSpec::new(Protocol::RabiBare { transition: Transition::Minus }, taus.clone()).unwrap().with_dt(1e-9);
        let lab = rot.clone().with_frame(Frame::Lab).with_dt(1e-12);
        let n = NoiseModel::noiseless();
        let a = run_protocol(&rot, &cfg, &n, 1, 1, Execution::Sequential).unwrap();
        let b = run_protocol(&lab, &cfg, &n, 1, 1, Execution::Sequential).unwrap();
        for i in 0..taus.len() {
            assert!((a.mean[i] - b.mean[i]).abs() < 2e-2);
            assert!((a.mean[i] - (cfg.rabi1 * taus[i]).cos().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn ramsey_beats_match_eigen_gaps() {
        let cfg = DriveConfig::from_dressed(mhz(6.0), mhz(6.0), mhz(19.337), 0.0);
        let spec = ProtocolSpec::uniform(Protocol::DressedRamsey, 0.0, 4e-9, 1 << 14).unwrap();
        let r = run_protocol(&spec, &cfg, &NoiseModel::noiseless(), 1, 1, Execution::Sequential).unwrap();
        let e = doubly_dressed_spectrum(&cfg).unwrap().energies_rad_s;
        let gaps = [e[U] - e[B] - cfg.delta, e[B] + cfg.delta - e[D], e[U] - e[D]];
        let amp = |w: f64| {
            let (mut a, mut b) = (0.0, 0.0);
            for (t, y) in r.taus.iter().zip(&r.mean) {
                a += y * (w * t).cos();
                b += y * (w * t).sin();
            }
            2.0 * a.hypot(b) / r.taus.len() as f64
        };
        let dom = crate::analysis::dominant_frequency(&r.taus, &r.mean).unwrap();
        let nearest = gaps.iter().map(|g| (dom / g - 1.0).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-3, "{nearest}");
        for g in gaps {
            assert!(amp(g) > 0.05, "{}", amp(g));
        }
        assert!(amp(0.5 * (gaps[0] + gaps[1])) < 0.01);
    }

    #[test]
    fn ensemble_bit_identical_across_workers() {
        let cfg = improved();
        let ou = OUParams::new(3.6e5, 15e-6).unwrap();
        let noise = NoiseModel { ou, drive: DriveNoiseParams::correlated(0.005) };
        let spec = ProtocolSpec::uniform(Protocol::SurvivalProbe, 0.0, 0.2e-6, 60).unwrap();
        let run = |exec| run_protocol(&spec, &cfg, &noise, 37, 11, exec).unwrap();
        let seq = run(Execution::Sequential);
        for w in [1, 2, 3] {
            let par = crate::exec::with_workers(Some(w), || run(Execution::Parallel)).unwrap();
            assert_eq!(seq.mean, par.mean);
            assert_eq!(seq.stderr, par.stderr);
        }
        assert_eq!(seq, run(Execution::Parallel));
        let norm_ok = seq.mean.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v));
        assert!(norm_ok);
    }

    #[test]
    fn stderr_scales_with_trials() {
        let ou = OUParams::new(3.6e5, 15e-6).unwrap();
        let noise = NoiseModel { ou, drive: DriveNoiseParams::none() };
        let spec = ProtocolSpec::uniform(Protocol::FidBare { probe: FidProbe::DoubleQuantum }, 1e-6, 1e-6, 3).unwrap();
        let cfg = DriveConfig::new(0.0, 0.0, 0.0);
        let a = run_protocol(&spec, &cfg, &noise, 2000, 3, Execution::Parallel).unwrap();
        let b = run_protocol(&spec, &cfg, &noise, 4000, 3, Execution::Parallel).unwrap();
        for i in 0..3 {
            let ratio = a.stderr[i] / b.stderr[i];
            assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.15, "{ratio}");
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let spec = ProtocolSpec::new(Protocol::SurvivalProbe, vec![0.0]).unwrap();
        assert!(run_protocol(&spec, &improved(), &NoiseModel::noiseless(), 0, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn protocol_spec_validation() {
        assert!(ProtocolSpec::new(Protocol::SurvivalProbe, vec![]).is_err());
        assert!(ProtocolSpec::new(Protocol::SurvivalProbe, vec![1.0, 1.0]).is_err());
        let lab = ProtocolSpec::new(Protocol::SurvivalProbe, vec![0.0, 1e-6]).unwrap().with_frame(Frame::Lab);
        assert!(lab.validate().is_err());
        let long = ProtocolSpec::new(Protocol::RabiBare { transition: Transition::Plus }, vec![0.0, 3e-6])
            .unwrap()
            .with_frame(Frame::Lab);
        assert!(long.validate().is_err());
        let _ = us(1.0);
    }
}
