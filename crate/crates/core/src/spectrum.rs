//! Doubly-dressed spectra and their noise susceptibilities: first-order drive
//! susceptibilities, driving coherence times, second-order magnetic shifts,
//! the fast-rotating amplitude mixing and numerically fitted magnetic gap
//! polynomials.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::{h_ii_static, h_iii_doubleprime, magnetic_operator, DriveConfig, NoiseSample, B, D, U};
use crate::linalg::{fix_phase, inner, mat_vec, Hermitian3};

/// Dressed-frame eigenvalues closer than this fraction of Ω_D count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("eigenstate labeling ambiguous (overlaps u,B,d = {0:?}); perturb the detuning")]
    Labeling([f64; 3]),
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),
    #[error("resonant denominator in mixing estimate for pair ({j},{k}): {den:.3e} rad/s")]
    Resonant { j: usize, k: usize, den: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Relative drive-noise weights per tone group: δ₁ = w₁·δ, δ₂ = w₂·δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDirection {
    pub w1: f64,
    pub w2: f64,
}

impl NoiseDirection {
    pub fn new(w1: f64, w2: f64) -> Self {
        Self { w1, w2 }
    }

    /// Equal relative deviation on both tone groups.
    pub fn correlated() -> Self {
        Self { w1: 1.0, w2: 1.0 }
    }

    /// Detuned tones fluctuate `ratio` times more than the on-resonant ones.
    pub fn imbalanced(ratio: f64) -> Self {
        Self { w1: 1.0, w2: ratio }
    }

    /// Perturbation operator w₁·∂H/∂δ₁ + w₂·∂H/∂δ₂ in the dressed basis.
    pub fn operator(&self, cfg: &DriveConfig) -> Hermitian3 {
        let od = cfg.omega_d() * self.w1;
        let g = cfg.omega_b() * FRAC_1_SQRT_2 * self.w2;
        Hermitian3::diag([od, 0.0, -od], crate::linalg::Basis::Dressed)
            .with_coupling(B, U, C64::new(g, 0.0))
            .with_coupling(B, D, C64::new(g, 0.0))
    }
}

/// Pair of doubly-dressed levels forming the qubit, ordered (k, j).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pair {
    #[default]
    BD,
    BU,
    UD,
}

impl Pair {
    pub fn indices(&self) -> (usize, usize) {
        match self {
            Pair::BD => (B, D),
            Pair::BU => (B, U),
            Pair::UD => (U, D),
        }
    }
}

/// Labeled eigen-decomposition of a dressed-basis matrix: entry k is the
/// eigenpair with the largest overlap with dressed state k.
#[derive(Clone, Copy, Debug)]
pub struct Labeled {
    pub energies: [f64; 3],
    pub vectors: [[C64; 3]; 3],
    pub overlaps: [f64; 3],
}

pub fn label_eigenstates(h: &Hermitian3) -> Result<Labeled, SpectrumError> {
    let e = h.eig();
    let mut energies = [0.0; 3];
    let mut vectors = [[C64::new(0.0, 0.0); 3]; 3];
    let mut overlaps = [0.0; 3];
    for k in 0..3 {
        let (j, score) = (0..3)
            .map(|j| (j, e.vectors[j][k].norm_sqr()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((k, 0.0));
        overlaps[k] = score;
        energies[k] = e.values[j];
        vectors[k] = e.vectors[j];
        fix_phase(&mut vectors[k]);
    }
    if overlaps.iter().any(|&o| o <= 0.5) {
        return Err(SpectrumError::Labeling(overlaps));
    }
    Ok(Labeled { energies, vectors, overlaps })
}

/// Noiseless doubly-dressed spectrum of the static dressed-frame Hamiltonian.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DoublyDressedSpectrum {
    /// E_ũ, E_B̃, E_d̃ (rad/s).
    pub energies_rad_s: [f64; 3],
    /// Eigenvectors in the dressed basis, indexed ũ, B̃, d̃.
    #[serde(skip)]
    pub vectors: [[C64; 3]; 3],
    pub alpha: f64,
    pub beta: f64,
    /// Overlap scores used for labeling.
    pub overlaps: [f64; 3],
    /// Two-photon detuning of the config (rad/s).
    pub delta: f64,
    /// Magnetic operator M in the eigenbasis, M̃[j][k] = ⟨j̃|M|k̃⟩.
    #[serde(skip)]
    pub m_tilde: [[C64; 3]; 3],
}

impl DoublyDressedSpectrum {
    pub fn energies(&self) -> [f64; 3] {
        self.energies_rad_s
    }

    /// Robust-qubit gap E_B̃ − E_d̃.
    pub fn qubit_gap(&self) -> f64 {
        self.energies_rad_s[B] - self.energies_rad_s[D]
    }
}

pub fn doubly_dressed_spectrum(cfg: &DriveConfig) -> Result<DoublyDressedSpectrum, SpectrumError> {
    let h = h_ii_static(cfg, &NoiseSample::ZERO);
    let l = label_eigenstates(&h)?;
    let m = magnetic_operator(cfg);
    let mut m_tilde = [[C64::new(0.0, 0.0); 3]; 3];
    for k in 0..3 {
        let mk = mat_vec(&m, &l.vectors[k]);
        for j in 0..3 {
            m_tilde[j][k] = inner(&l.vectors[j], &mk);
        }
    }
    Ok(DoublyDressedSpectrum {
        energies_rad_s: l.energies,
        vectors: l.vectors,
        alpha: m_tilde[B][U].re,
        beta: m_tilde[B][D].re,
        overlaps: l.overlaps,
        delta: cfg.delta,
        m_tilde,
    })
}

/// First-order eigenvalue derivatives (rad/s per unit δ) along a noise direction, indexed ũ, B̃, d̃.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Susceptibility {
    pub e: [f64; 3],
}

impl Susceptibility {
    pub fn diff(&self, pair: Pair) -> f64 {
        let (k, j) = pair.indices();
        self.e[k] - self.e[j]
    }
}

fn check_nondegenerate(cfg: &DriveConfig, energies: &[f64; 3]) -> Result<(), SpectrumError> {
    let scale = cfg.omega_d().max(cfg.omega_b()).max(cfg.delta.abs());
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if (energies[i] - energies[j]).abs() < DEGENERACY_TOL * scale {
            return Err(SpectrumError::Degenerate(format!("levels {i} and {j} coincide")));
        }
    }
    Ok(())
}

/// Hellmann–Feynman susceptibilities e_k = ⟨k|P|k⟩.
pub fn drive_susceptibility(cfg: &DriveConfig, dir: NoiseDirection) -> Result<Susceptibility, SpectrumError> {
    let s = doubly_dressed_spectrum(cfg)?;
    check_nondegenerate(cfg, &s.energies_rad_s)?;
    let p = dir.operator(cfg);
    let e = [0, 1, 2].map(|k| p.expectation(&s.vectors[k]));
    Ok(Susceptibility { e })
}

/// Second-order drive coefficients κ_k = ½ d²E_k/dδ² along a direction (exact,
/// since the Hamiltonian is linear in δ).
pub fn drive_second_order(cfg: &DriveConfig, dir: NoiseDirection) -> Result<[f64; 3], SpectrumError> {
    let s = doubly_dressed_spectrum(cfg)?;
    check_nondegenerate(cfg, &s.energies_rad_s)?;
    let p = dir.operator(cfg);
    let mut kappa = [0.0; 3];
    for (k, out) in kappa.iter_mut().enumerate() {
        let pk = mat_vec(p.matrix(), &s.vectors[k]);
        for m in 0..3 {
            if m != k {
                *out += inner(&s.vectors[m], &pk).norm_sqr() / (s.energies_rad_s[k] - s.energies_rad_s[m]);
            }
        }
    }
    Ok(kappa)
}

/// T₂^Ω = √2 / (|e_k − e_j|·δ); +∞ when the difference vanishes.
pub fn driving_coherence_time(
    cfg: &DriveConfig,
    dir: NoiseDirection,
    delta_magnitude: f64,
    pair: Pair,
) -> Result<f64, SpectrumError> {
    let diff = drive_susceptibility(cfg, dir)?.diff(pair).abs() * delta_magnitude;
    if diff <= 1e-18 * cfg.omega_d() {
        return Ok(f64::INFINITY);
    }
    Ok(SQRT_2 / diff)
}

/// √2 / (√2/t_limit + |e_k − e_j|·δ).
pub fn combined_coherence_time(
    cfg: &DriveConfig,
    dir: NoiseDirection,
    delta_magnitude: f64,
    t_limit: f64,
    pair: Pair,
) -> Result<f64, SpectrumError> {
    if !(t_limit > 0.0) {
        return Err(SpectrumError::InvalidArgument("t_limit must be positive".into()));
    }
    let diff = drive_susceptibility(cfg, dir)?.diff(pair).abs() * delta_magnitude;
    Ok(SQRT_2 / (SQRT_2 / t_limit + diff))
}

/// Second-order magnetic coefficients per unit δB²: shifts ũ: +a, d̃: −b, B̃: −c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MagneticSecondOrder {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MagneticSecondOrder {
    /// Shifts per unit δB², indexed ũ, B̃, d̃.
    pub fn shifts(&self) -> [f64; 3] {
        [self.a, -self.c, -self.b]
    }

    /// Second-order coefficient of the pair gap E_k − E_j.
    pub fn gap_coefficient(&self, pair: Pair) -> f64 {
        let s = self.shifts();
        let (k, j) = pair.indices();
        s[k] - s[j]
    }
}

pub fn magnetic_second_order(cfg: &DriveConfig) -> Result<MagneticSecondOrder, SpectrumError> {
    let s = doubly_dressed_spectrum(cfg)?;
    magnetic_second_order_of(cfg, &s)
}

pub fn magnetic_second_order_of(
    cfg: &DriveConfig,
    s: &DoublyDressedSpectrum,
) -> Result<MagneticSecondOrder, SpectrumError> {
    let e = s.energies_rad_s;
    let eb = e[B] + s.delta;
    let du = e[U] - eb;
    let dd = e[D] - eb;
    let tol = DEGENERACY_TOL * cfg.omega_d();
    if du.abs() < tol || dd.abs() < tol {
        return Err(SpectrumError::Degenerate("B̃+Δ level crosses ũ or d̃".into()));
    }
    let a2 = 0.5 * s.alpha * s.alpha;
    let b2 = 0.5 * s.beta * s.beta;
    Ok(MagneticSecondOrder { a: a2 / du, b: -b2 / dd, c: a2 / du + b2 / dd })
}

/// Largest first-order admixture caused by the magnetic terms dropped when
/// moving to the static doubly-dressed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mixing {
    /// Amplitude |⟨j̃|ψ⟩| admixed into |k̃⟩.
    pub amplitude: f64,
    /// Population weight (amplitude²).
    pub population: f64,
    pub j: usize,
    pub k: usize,
}

/// Every term e^{iΔt} M̃_jk |j̃⟩⟨k̃| except the two kept B̃-couplings rotates at
/// E_j − E_k + Δ; its first-order amplitude is |δB·M̃_jk/√2 / (E_j − E_k + Δ)|.
pub fn amplitude_mixing(cfg: &DriveConfig, delta_b: f64) -> Result<Mixing, SpectrumError> {
    let s = doubly_dressed_spectrum(cfg)?;
    let e = s.energies_rad_s;
    let mut best = Mixing { amplitude: 0.0, population: 0.0, j: B, k: B };
    for j in 0..3 {
        for k in 0..3 {
            if j == B && k != B {
                continue;
            }
            let m = s.m_tilde[j][k].norm();
            if m < 1e-12 {
                continue;
            }
            let den = e[j] - e[k] + cfg.delta;
            if den.abs() < 1e-3 * cfg.delta.abs() {
                return Err(SpectrumError::Resonant { j, k, den });
            }
            let amp = (delta_b * m * FRAC_1_SQRT_2 / den).abs();
            if amp > best.amplitude {
                best = Mixing { amplitude: amp, population: amp * amp, j, k };
            }
        }
    }
    Ok(best)
}

/// Even-polynomial fit gap(δB) − gap(0) ≈ k2·δB² + k4·δB⁴ of the static
/// doubly-dressed Hamiltonian, from dense diagonalization over |δB| ≤ `range`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapPolynomial {
    pub k2: f64,
    pub k4: f64,
}

pub fn magnetic_gap_polynomial(cfg: &DriveConfig, range: f64, pair: Pair) -> Result<GapPolynomial, SpectrumError> {
    if !(range > 0.0) {
        return Err(SpectrumError::InvalidArgument("fit range must be positive".into()));
    }
    let s = doubly_dressed_spectrum(cfg)?;
    let (k, j) = pair.indices();
    let gap = |x: f64| -> Result<f64, SpectrumError> {
        let l = label_eigenstates(&h_iii_doubleprime(&s, x))?;
        Ok(l.energies[k] - l.energies[j])
    };
    let g0 = gap(0.0)?;
    // Least squares on y = k2 x² + k4 x⁴ using scaled abscissae u = x/range.
    let n = 12;
    let (mut s22, mut s24, mut s44, mut y2, mut y4) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 1..=n {
        let u = i as f64 / n as f64;
        let y = gap(u * range)? - g0;
        let (u2, u4) = (u * u, u.powi(4));
        s22 += u2 * u2;
        s24 += u2 * u4;
        s44 += u4 * u4;
        y2 += y * u2;
        y4 += y * u4;
    }
    let det = s22 * s44 - s24 * s24;
    let c2 = (y2 * s44 - y4 * s24) / det;
    let c4 = (s22 * y4 - s24 * y2) / det;
    Ok(GapPolynomial { k2: c2 / range.powi(2), k4: c4 / range.powi(4) })
}

/// Labeled energies of the static dressed Hamiltonian with drive deviations.
pub fn labeled_energies(cfg: &DriveConfig, noise: &NoiseSample) -> Result<[f64; 3], SpectrumError> {
    Ok(label_eigenstates(&h_ii_static(cfg, noise))?.energies)
}
