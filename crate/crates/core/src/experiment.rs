//! Glue shared by the CLI and the acceptance suite: sampling grids for long
//! coherence measurements and coherence extraction from ensemble signals.

use std::f64::consts::PI;

use crate::analysis::{extract_envelope, fit_damped_sinusoid, AnalysisError, CoherenceEstimate, Envelope, FitOptions};
use crate::dynamics::EnsembleResult;
use crate::hamiltonian::DriveConfig;
use crate::spectrum::{doubly_dressed_spectrum, magnetic_second_order, Pair, SpectrumError};

/// `windows` evenly spaced bursts of `per_window` samples with spacing `h`
/// across [0, span]. Every point is an integer multiple of `h`, so the
/// integrator lands on each exactly.
pub fn windowed_taus(h: f64, windows: usize, per_window: usize, span: f64) -> Vec<f64> {
    let stride = ((span / windows.max(1) as f64) / h).round().max(per_window as f64) as usize;
    let mut out = Vec::with_capacity(windows * per_window);
    for w in 0..windows {
        for k in 0..per_window {
            out.push((w * stride + k) as f64 * h);
        }
    }
    out
}

/// Protected-pair beat frequency (rad/s) in the frame where the survival and
/// Ramsey signals are read out, including the mean second-order magnetic
/// shift k₂σ².
pub fn beat_frequency(cfg: &DriveConfig, sigma: f64, pair: Pair) -> Result<f64, SpectrumError> {
    let sp = doubly_dressed_spectrum(cfg)?;
    let (k, j) = pair.indices();
    let lift = |i: usize| if i == crate::hamiltonian::B { cfg.delta } else { 0.0 };
    let gap = (sp.energies_rad_s[k] + lift(k)) - (sp.energies_rad_s[j] + lift(j));
    let k2 = magnetic_second_order(cfg)?.gap_coefficient(pair);
    Ok((gap + k2 * sigma * sigma).abs())
}

/// Grid resolving the beat with `per_period` samples over `periods` periods in
/// each of `windows` bursts.
pub fn beat_grid(beat: f64, span: f64, windows: usize, periods: usize, per_period: usize) -> Vec<f64> {
    let period = 2.0 * PI / beat;
    windowed_taus(period / per_period as f64, windows, periods * per_period, span)
}

/// Weighted damped-sinusoid fit of the signal after `skip`, seeded at the beat frequency.
pub fn fit_coherence(r: &EnsembleResult, beat: f64, skip: f64) -> Result<CoherenceEstimate, AnalysisError> {
    let keep: Vec<usize> = (0..r.taus.len()).filter(|&i| r.taus[i] >= skip).collect();
    let t: Vec<f64> = keep.iter().map(|&i| r.taus[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| r.mean[i]).collect();
    let se: Vec<f64> = keep.iter().map(|&i| r.stderr[i]).collect();
    let weights = if se.iter().all(|v| *v > 0.0) { Some(se.as_slice()) } else { None };
    fit_damped_sinusoid(&t, &y, weights, &FitOptions { omega_hint: Some(beat), ..Default::default() })
}

/// Baseline-free envelope of the signal after `skip`.
pub fn envelope_after(r: &EnsembleResult, skip: f64) -> Result<Envelope, AnalysisError> {
    let keep: Vec<usize> = (0..r.taus.len()).filter(|&i| r.taus[i] >= skip).collect();
    let t: Vec<f64> = keep.iter().map(|&i| r.taus[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| r.mean[i]).collect();
    extract_envelope(&t, &y, None)
}
