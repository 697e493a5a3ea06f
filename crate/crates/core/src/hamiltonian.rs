//! Hamiltonian builders for the double-lambda drive in every frame used by
//! the simulator: lab frame, lambda-basis interaction picture, dressed frame
//! and the static doubly-dressed form.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dressed_basis_transform_signed, Basis, Hermitian3, Unitary3};
use crate::spectrum::DoublyDressedSpectrum;
use crate::units::ghz;

/// Dressed-basis indices.
pub const U: usize = 0;
pub const B: usize = 1;
pub const D: usize = 2;

/// RWA ratio above which [`DriveConfig::rwa_warning`] fires.
pub const RWA_WARN_RATIO: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("invalid drive config: {0}")]
    InvalidConfig(String),
    #[error("invalid noise sample: {0}")]
    InvalidNoise(String),
}

/// Which on-resonant tone carries the relative minus sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PiPhaseTone {
    /// −cos(ω₂t) on the |0⟩↔|+1⟩ tone; |0⟩ couples to −|D⟩.
    #[default]
    Omega2,
    /// −cos(ω₁t) on the |0⟩↔|−1⟩ tone; |0⟩ couples to +|D⟩.
    Omega1,
}

/// Drive parameters, all angular frequencies in rad/s.
///
/// `rabi1`/`rabi2` are the per-transition couplings; the dressed couplings are
/// Ω_D = √2·rabi1 and Ω_B = √2·rabi2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub omega1: f64,
    pub omega2: f64,
    pub rabi1: f64,
    pub rabi2: f64,
    pub delta: f64,
    pub delta0: f64,
    pub pi_phase: PiPhaseTone,
}

impl DriveConfig {
    pub const DEFAULT_OMEGA1_GHZ: f64 = 1.868;
    pub const DEFAULT_OMEGA2_GHZ: f64 = 3.872;

    pub fn new(rabi1: f64, rabi2: f64, delta: f64) -> Self {
        Self {
            omega1: ghz(Self::DEFAULT_OMEGA1_GHZ),
            omega2: ghz(Self::DEFAULT_OMEGA2_GHZ),
            rabi1,
            rabi2,
            delta,
            delta0: 0.0,
            pi_phase: PiPhaseTone::default(),
        }
    }

    /// Config from dressed couplings Ω_D, Ω_B.
    pub fn from_dressed(omega_d: f64, omega_b: f64, delta: f64, delta0: f64) -> Self {
        Self { delta0, ..Self::new(omega_d / SQRT_2, omega_b / SQRT_2, delta) }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn with_detunings(self, delta: f64, delta0: f64) -> Self {
        Self { delta, delta0, ..self }
    }

    pub fn omega_d(&self) -> f64 {
        SQRT_2 * self.rabi1
    }

    pub fn omega_b(&self) -> f64 {
        SQRT_2 * self.rabi2
    }

    /// Sign s of the on-resonant coupling s·√2Ω₁(|0⟩⟨D| + h.c.) after the RWA.
    pub fn resonant_sign(&self) -> f64 {
        match self.pi_phase {
            PiPhaseTone::Omega2 => -1.0,
            PiPhaseTone::Omega1 => 1.0,
        }
    }

    /// Sign of the ω₁ (|0⟩↔|−1⟩) on-resonant tone.
    pub fn omega1_tone_sign(&self) -> f64 {
        match self.pi_phase {
            PiPhaseTone::Omega2 => 1.0,
            PiPhaseTone::Omega1 => -1.0,
        }
    }

    /// Lambda → dressed transform matching this config's sign convention,
    /// |u⟩=(|0⟩+s|D⟩)/√2, |d⟩=(|0⟩−s|D⟩)/√2.
    pub fn dressed_frame(&self) -> Unitary3 {
        dressed_basis_transform_signed(self.resonant_sign())
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let fields = [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("rabi1", self.rabi1),
            ("rabi2", self.rabi2),
            ("delta", self.delta),
            ("delta0", self.delta0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(HamiltonianError::InvalidConfig(format!("{name} is not finite")));
            }
        }
        if self.rabi1 < 0.0 || self.rabi2 < 0.0 {
            return Err(HamiltonianError::InvalidConfig("Rabi frequencies must be non-negative".into()));
        }
        if self.omega1 <= 0.0 || self.omega2 <= 0.0 {
            return Err(HamiltonianError::InvalidConfig("transition frequencies must be positive".into()));
        }
        if self.omega1 == self.omega2 {
            return Err(HamiltonianError::InvalidConfig("omega1 and omega2 must differ".into()));
        }
        Ok(())
    }

    pub fn rwa_ratio(&self) -> f64 {
        self.rabi1.max(self.rabi2) / self.omega1.min(self.omega2)
    }

    pub fn rwa_warning(&self) -> Option<String> {
        let r = self.rwa_ratio();
        (r > RWA_WARN_RATIO).then(|| format!("Rabi/carrier ratio {r:.3e} exceeds {RWA_WARN_RATIO:e}; RWA may be inaccurate"))
    }
}

/// Instantaneous noise values.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSample {
    /// Magnetic detuning entering as δB·S_z (rad/s).
    pub delta_b: f64,
    /// Relative deviation of the on-resonant tones.
    pub delta1: f64,
    /// Relative deviation of the detuned tones.
    pub delta2: f64,
}

impl NoiseSample {
    pub const ZERO: NoiseSample = NoiseSample { delta_b: 0.0, delta1: 0.0, delta2: 0.0 };

    pub fn drive(delta1: f64, delta2: f64) -> Self {
        Self { delta_b: 0.0, delta1, delta2 }
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if !(self.delta_b.is_finite() && self.delta1.is_finite() && self.delta2.is_finite()) {
            return Err(HamiltonianError::InvalidNoise("non-finite value".into()));
        }
        if self.delta1.abs() >= 1.0 || self.delta2.abs() >= 1.0 {
            return Err(HamiltonianError::InvalidNoise("relative drive deviation must satisfy |δ| < 1".into()));
        }
        Ok(())
    }
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Lab-frame Hamiltonian in the bare basis (|−1⟩,|0⟩,|+1⟩). Each tone couples
/// only its own transition. With one-photon detuning Δ₀ every tone is shifted
/// down by Δ₀.
pub fn h_lab(t: f64, cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let a1 = 2.0 * cfg.rabi1 * (1.0 + noise.delta1);
    let a2 = 2.0 * cfg.rabi2 * (1.0 + noise.delta2);
    let s1 = cfg.omega1_tone_sign();
    let s2 = -s1;
    let w1 = cfg.omega1 - cfg.delta0;
    let w2 = cfg.omega2 - cfg.delta0;
    let c_m1 = s1 * a1 * (w1 * t).cos() + a2 * ((w1 + cfg.delta) * t).cos();
    let c_p1 = s2 * a1 * (w2 * t).cos() + a2 * ((w2 + cfg.delta) * t).cos();
    Hermitian3::diag([cfg.omega1 - noise.delta_b, 0.0, cfg.omega2 + noise.delta_b], Basis::Bare)
        .with_coupling(1, 0, re(c_m1))
        .with_coupling(1, 2, re(c_p1))
}

/// Rotating-frame Hamiltonian in the lambda basis (|0⟩,|B⟩,|D⟩), frame
/// rotating at the on-resonant tone frequencies.
///
/// Dropped counter-rotating terms oscillate at 2ω₁, 2ω₂ and 2ω₁,₂+Δ.
pub fn h_i(t: f64, cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let g1 = cfg.resonant_sign() * SQRT_2 * cfg.rabi1 * (1.0 + noise.delta1);
    let g2 = SQRT_2 * cfg.rabi2 * (1.0 + noise.delta2);
    Hermitian3::diag([-cfg.delta0, 0.0, 0.0], Basis::Lambda)
        .with_coupling(0, 2, re(g1))
        .with_coupling(0, 1, C64::from_polar(g2, cfg.delta * t))
        .with_coupling(1, 2, re(noise.delta_b))
}

/// Static doubly-dressed Hamiltonian in the dressed basis (|u⟩,|B⟩,|d⟩),
/// without one-photon detuning and magnetic noise.
pub fn h_ii(cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let od = cfg.omega_d() * (1.0 + noise.delta1);
    let g = cfg.omega_b() * (1.0 + noise.delta2) * FRAC_1_SQRT_2;
    Hermitian3::diag([od, -cfg.delta, -od], Basis::Dressed)
        .with_coupling(B, U, re(g))
        .with_coupling(B, D, re(g))
}

/// −Δ₀|0⟩⟨0| in the dressed basis.
pub fn one_photon_term(delta0: f64) -> Hermitian3 {
    let h = -0.5 * delta0;
    Hermitian3::diag([h, 0.0, h], Basis::Dressed).with_coupling(U, D, re(h))
}

/// Time-independent part of [`h_ii_prime`].
pub fn h_ii_static(cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let mut h = h_ii(cfg, noise);
    let p = one_photon_term(cfg.delta0);
    for i in 0..3 {
        for j in i..3 {
            h.add_coupling(i, j, p.get(i, j));
        }
    }
    h
}

/// Operator M with magnetic term (δB/√2)(e^{iΔt} M + h.c.) in the dressed basis:
/// M = s(|B⟩⟨u| − |B⟩⟨d|), the image of δB·S_z.
pub fn magnetic_operator(cfg: &DriveConfig) -> [[C64; 3]; 3] {
    let s = cfg.resonant_sign();
    let mut m = [[C64::new(0.0, 0.0); 3]; 3];
    m[B][U] = re(s);
    m[B][D] = re(-s);
    m
}

/// Dressed-frame Hamiltonian with one-photon detuning and the rotating magnetic term.
pub fn h_ii_prime(t: f64, cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let mut h = h_ii_static(cfg, noise);
    if noise.delta_b != 0.0 {
        let amp = noise.delta_b * FRAC_1_SQRT_2 * cfg.resonant_sign();
        let ph = C64::from_polar(amp, cfg.delta * t);
        h.add_coupling(B, U, ph);
        h.add_coupling(B, D, -ph);
    }
    h
}

/// Static doubly-dressed Hamiltonian (|ũ⟩,|B̃⟩,|d̃⟩) keeping only the slowly
/// rotating magnetic couplings.
pub fn h_iii_doubleprime(spec: &DoublyDressedSpectrum, delta_b: f64) -> Hermitian3 {
    let e = spec.energies();
    let k = delta_b * FRAC_1_SQRT_2;
    Hermitian3::diag([e[0], e[1] + spec.delta, e[2]], Basis::DoublyDressed)
        .with_coupling(1, 0, re(k * spec.alpha))
        .with_coupling(1, 2, re(k * spec.beta))
}

/// Single-tone π/2-pulse Hamiltonian in the lambda basis: only the ω₁
/// on-resonant tone (|0⟩↔|−1⟩) is on, |−1⟩ = (|B⟩−|D⟩)/√2.
pub fn h_pulse(cfg: &DriveConfig, noise: &NoiseSample) -> Hermitian3 {
    let g = cfg.omega1_tone_sign() * cfg.rabi1 * (1.0 + noise.delta1) * FRAC_1_SQRT_2;
    Hermitian3::diag([-cfg.delta0, 0.0, 0.0], Basis::Lambda)
        .with_coupling(0, 1, re(g))
        .with_coupling(0, 2, re(-g))
        .with_coupling(1, 2, re(noise.delta_b))
}
