//! Coherence extraction: damped-sinusoid fits, oscillation envelopes and
//! detuning scans with peak characterization.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::spectrum::SpectrumError;

const MIN_FIT_POINTS: usize = 20;
const MIN_EXTREMA: usize = 5;
const MIN_SCAN_POINTS: usize = 10;
const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("found {0} extrema; at least 5 are needed")]
    TooFewExtrema(usize),
    #[error("fit did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fit the stretch exponent p of e^{−(τ/T)^p}; otherwise p is held fixed.
    pub fit_exponent: bool,
    pub exponent: f64,
    /// Starting angular frequency; required for non-uniform grids.
    pub omega_hint: Option<f64>,
    /// Skip the oscillation requirement and fit a bare envelope.
    pub envelope_only: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { fit_exponent: false, exponent: 1.0, omega_hint: None, envelope_only: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamErrors {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub t2: f64,
    pub offset: f64,
    pub exponent: f64,
}

/// A·sin(ωτ+φ)·e^{−(τ/T₂)^p} + c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceEstimate {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    /// +∞ when no decay is resolved (serialized as null).
    pub t2: f64,
    pub offset: f64,
    pub exponent: f64,
    pub errors: ParamErrors,
    pub residual_rms: f64,
    /// ω = 0 branch for signals without a resolvable oscillation.
    pub envelope_only: bool,
    pub iterations: usize,
}

impl CoherenceEstimate {
    pub fn eval(&self, tau: f64) -> f64 {
        model(&self.params(), self.exponent, tau)
    }

    fn params(&self) -> [f64; 6] {
        let r = if self.t2.is_finite() { 1.0 / self.t2 } else { 0.0 };
        [self.amplitude, self.omega, self.phase, r, self.offset, self.exponent]
    }
}

// p = [A, ω, φ, r = 1/T, c, exponent]
fn model(p: &[f64; 6], expo: f64, t: f64) -> f64 {
    let x = p[3] * t;
    let env = if x > 0.0 { (-x.powf(expo)).exp() } else { 1.0 };
    p[0] * (p[1] * t + p[2]).sin() * env + p[4]
}

fn gradient(p: &[f64; 6], t: f64) -> [f64; 6] {
    let (a, w, ph, r, _, expo) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let x = r * t;
    let xp = if x > 0.0 { x.powf(expo) } else { 0.0 };
    let env = (-xp).exp();
    let (s, c) = (w * t + ph).sin_cos();
    let dr = if x > 0.0 { -a * s * env * expo * xp / r } else { -a * s * t * (expo == 1.0) as u8 as f64 };
    let dp = if x > 0.0 { -a * s * env * xp * x.ln() } else { 0.0 };
    [s * env, a * t * c * env, a * c * env, dr, 1.0, dp]
}

/// Solves the symmetric positive system `m·x = b` by Gaussian elimination with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / m[i][i];
    }
    Some(x)
}

fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(m.to_vec(), e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

fn is_uniform(taus: &[f64]) -> bool {
    let h = taus[1] - taus[0];
    taus.windows(2).all(|w| ((w[1] - w[0]) / h - 1.0).abs() < 1e-6)
}

/// Dominant non-DC angular frequency of a uniformly sampled signal, refined by
/// parabolic interpolation of the zero-padded spectrum magnitude.
pub fn dominant_frequency(taus: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if taus.len() < 4 || !is_uniform(taus) {
        return Err(AnalysisError::Invalid("dominant_frequency needs a uniform grid".into()));
    }
    let h = taus[1] - taus[0];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let n = (4 * y.len()).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = y.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|z| z.norm()).collect();
    let k = (2..n / 2 - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(1);
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let den = a - 2.0 * b + c;
    let off = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Ok(2.0 * PI * (k as f64 + off) / (n as f64 * h))
}

/// Weighted Levenberg–Marquardt fit of A·sin(ωτ+φ)·e^{−(τ/T)^p} + c.
/// `stderr`, when given, supplies per-point weights 1/σ².
pub fn fit_damped_sinusoid(
    taus: &[f64],
    y: &[f64],
    stderr: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<CoherenceEstimate, AnalysisError> {
    let n = taus.len();
    if n < MIN_FIT_POINTS || y.len() != n {
        return Err(AnalysisError::TooFewPoints { need: MIN_FIT_POINTS, got: n.min(y.len()) });
    }
    let weights: Vec<f64> = match stderr {
        Some(s) if s.len() == n && s.iter().all(|v| *v > 0.0) => {
            let floor = s.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-300);
            s.iter().map(|v| 1.0 / v.max(floor).powi(2)).collect()
        }
        _ => vec![1.0; n],
    };
    let mean = y.iter().sum::<f64>() / n as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let noise = stderr.map(|s| s.iter().sum::<f64>() / n as f64).unwrap_or(0.0);
    if spread <= 1e-12 * mean.abs().max(1.0) || spread < 2.0 * noise {
        return Ok(flat_estimate(y, mean));
    }
    let span = taus[n - 1] - taus[0];

    let omega0 = if opts.envelope_only {
        0.0
    } else {
        match opts.omega_hint {
            Some(w) => w,
            None => dominant_frequency(taus, y)?,
        }
    };
    if !opts.envelope_only && omega0 * span < 2.0 * 2.0 * PI {
        return Err(AnalysisError::Invalid("fewer than two oscillation periods in the window".into()));
    }
    let r0 = match extract_envelope(taus, y, None) {
        Ok(e) if e.time_constant.is_finite() && e.time_constant > 0.0 => 1.0 / e.time_constant,
        _ => 1.0 / span,
    };
    let expo = opts.exponent;
    let mut p = linear_seed(taus, y, &weights, omega0, r0, expo, opts.envelope_only);
    let free: Vec<usize> = if opts.envelope_only {
        vec![0, 3, 4]
    } else if opts.fit_exponent {
        vec![0, 1, 2, 3, 4, 5]
    } else {
        vec![0, 1, 2, 3, 4]
    };

    let chi2 = |p: &[f64; 6]| -> f64 {
        (0..n).map(|i| weights[i] * (y[i] - model(p, p[5], taus[i])).powi(2)).sum()
    };
    let mut cost = chi2(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let k = free.len();
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jtr = vec![0.0; k];
        for i in 0..n {
            let g = gradient(&p, taus[i]);
            let r = y[i] - model(&p, p[5], taus[i]);
            for a in 0..k {
                jtr[a] += weights[i] * g[free[a]] * r;
                for b in 0..k {
                    jtj[a][b] += weights[i] * g[free[a]] * g[free[b]];
                }
            }
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for a in 0..k {
                m[a][a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve(m, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for a in 0..k {
                trial[free[a]] += step[a];
            }
            trial[3] = trial[3].max(0.0);
            trial[5] = trial[5].clamp(0.2, 5.0);
            let c = chi2(&trial);
            if c <= cost {
                let rel = (0..k)
                    .map(|a| (trial[free[a]] - p[free[a]]).abs() / p[free[a]].abs().max(1e-12 * (1.0 + p[free[a]].abs())))
                    .fold(0.0, f64::max);
                let small_cost_change = cost - c <= 1e-15 * cost.max(1e-300);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < REL_TOL || small_cost_change {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AnalysisError::NoConvergence(MAX_ITER));
    }

    // covariance s²(JᵀWJ)⁻¹
    let mut jtj = vec![vec![0.0; k]; k];
    for i in 0..n {
        let g = gradient(&p, taus[i]);
        for a in 0..k {
            for b in 0..k {
                jtj[a][b] += weights[i] * g[free[a]] * g[free[b]];
            }
        }
    }
    let dof = (n - k).max(1) as f64;
    let s2 = cost / dof;
    let cov = invert(&jtj).unwrap_or_else(|| vec![vec![f64::INFINITY; k]; k]);
    let mut err = [0.0; 6];
    for a in 0..k {
        err[free[a]] = (s2 * cov[a][a]).abs().sqrt();
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    p[2] = p[2].rem_euclid(2.0 * PI);
    let t2 = if p[3] > 0.0 { 1.0 / p[3] } else { f64::INFINITY };
    let t2_err = if p[3] > 0.0 { err[3] / (p[3] * p[3]) } else { f64::INFINITY };
    let rms = ((0..n).map(|i| (y[i] - model(&p, p[5], taus[i])).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(CoherenceEstimate {
        amplitude: p[0],
        omega: p[1],
        phase: p[2],
        t2,
        offset: p[4],
        exponent: p[5],
        errors: ParamErrors { amplitude: err[0], omega: err[1], phase: err[2], t2: t2_err, offset: err[4], exponent: err[5] },
        residual_rms: rms,
        envelope_only: opts.envelope_only,
        iterations,
    })
}

fn flat_estimate(y: &[f64], mean: f64) -> CoherenceEstimate {
    let n = y.len() as f64;
    let rms = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    CoherenceEstimate {
        amplitude: 0.0,
        omega: 0.0,
        phase: 0.0,
        t2: f64::INFINITY,
        offset: mean,
        exponent: 1.0,
        errors: ParamErrors { offset: rms / n.sqrt(), ..Default::default() },
        residual_rms: rms,
        envelope_only: true,
        iterations: 0,
    }
}

/// Given ω and the decay rate, A, φ and c follow from linear least squares.
fn linear_seed(taus: &[f64], y: &[f64], w: &[f64], omega: f64, r: f64, expo: f64, envelope_only: bool) -> [f64; 6] {
    let basis = |t: f64| {
        let env = (-(r * t).powf(expo)).exp();
        if envelope_only {
            [env, 0.0, 1.0]
        } else {
            [(omega * t).sin() * env, (omega * t).cos() * env, 1.0]
        }
    };
    let k = if envelope_only { 2 } else { 3 };
    let idx: Vec<usize> = if envelope_only { vec![0, 2] } else { vec![0, 1, 2] };
    let mut m = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for i in 0..taus.len() {
        let f = basis(taus[i]);
        for a in 0..k {
            b[a] += w[i] * f[idx[a]] * y[i];
            for c in 0..k {
                m[a][c] += w[i] * f[idx[a]] * f[idx[c]];
            }
        }
    }
    let sol = solve(m, b).unwrap_or_else(|| vec![0.0; k]);
    if envelope_only {
        // A·sin(π/2)·env + c
        [sol[0], 0.0, PI / 2.0, r, sol[1], expo]
    } else {
        let (s, c) = (sol[0], sol[1]);
        [s.hypot(c), omega, c.atan2(s), r, sol[2], expo]
    }
}

/// Oscillation envelope and its exponential time constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub taus: Vec<f64>,
    pub upper: Vec<f64>,
    /// +∞ when the decay slope is consistent with zero.
    pub time_constant: f64,
    pub time_constant_err: f64,
}

fn parabolic_extremum(t: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    let d1 = (y[1] - y[0]) / h1;
    let d2 = (y[2] - y[1]) / h2;
    let a = (d2 - d1) / (h1 + h2);
    if a == 0.0 {
        return (t[1], y[1]);
    }
    // y = y1 + b(t−t1) + a(t−t1)²
    let b = d1 + a * h1;
    let dt = (-b / (2.0 * a)).clamp(-h1, h2);
    (t[1] + dt, y[1] + b * dt + a * dt * dt)
}

/// Contiguous runs of a grid; a gap larger than 1.5× the local spacing starts a new run.
fn segments(taus: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..taus.len() {
        let h = taus[i] - taus[i - 1];
        let prev = if i >= 2 { taus[i - 1] - taus[i - 2] } else { h };
        if i - start >= 2 && h > 1.5 * prev {
            out.push((start, i));
            start = i;
        }
    }
    out.push((start, taus.len()));
    out
}

/// Local maxima by three-point parabolic interpolation, then log-linear
/// regression of their heights above the baseline. Without a baseline each
/// maximum is measured against the mean of its neighbouring minima, so the
/// result is half the local peak-to-peak swing. The grid may consist of
/// several uniformly sampled windows.
pub fn extract_envelope(taus: &[f64], y: &[f64], baseline: Option<f64>) -> Result<Envelope, AnalysisError> {
    if taus.len() != y.len() || taus.len() < 3 {
        return Err(AnalysisError::TooFewExtrema(0));
    }
    let mut points = Vec::new();
    for (s, e) in segments(taus) {
        let mut maxima = Vec::new();
        let mut minima = Vec::new();
        for i in s + 1..e.saturating_sub(1) {
            let tt = [taus[i - 1], taus[i], taus[i + 1]];
            let yy = [y[i - 1], y[i], y[i + 1]];
            if y[i] > y[i - 1] && y[i] >= y[i + 1] {
                maxima.push(parabolic_extremum(tt, yy));
            } else if y[i] < y[i - 1] && y[i] <= y[i + 1] {
                minima.push(parabolic_extremum(tt, yy));
            }
        }
        for &(t, v) in &maxima {
            let h = match baseline {
                Some(b) => v - b,
                None => {
                    let before = minima.iter().rev().find(|m| m.0 < t);
                    let after = minima.iter().find(|m| m.0 > t);
                    match (before, after) {
                        (Some(a), Some(b)) => 0.5 * (v - 0.5 * (a.1 + b.1)),
                        (Some(a), None) | (None, Some(a)) => 0.5 * (v - a.1),
                        (None, None) => continue,
                    }
                }
            };
            if h > 0.0 {
                points.push((t, h));
            }
        }
    }
    if points.len() < MIN_EXTREMA {
        return Err(AnalysisError::TooFewExtrema(points.len()));
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    let slope = sxy / sxx;
    let resid: f64 = points.iter().map(|p| (p.1.ln() - ml - slope * (p.0 - mt)).powi(2)).sum();
    let se = (resid / (n - 2.0).max(1.0) / sxx).sqrt();
    let span = points[points.len() - 1].0 - points[0].0;
    // a total log-change below 1e-3 across the window is not a resolved decay
    let (tc, tc_err) = if slope >= -2.0 * se || -slope * span < 1e-3 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (-1.0 / slope, se / (slope * slope))
    };
    Ok(Envelope {
        taus: points.iter().map(|p| p.0).collect(),
        upper: points.iter().map(|p| p.1).collect(),
        time_constant: tc,
        time_constant_err: tc_err,
    })
}

/// Golden-section maximization of a unimodal `f` on [a, b].
pub fn golden_max<F, E>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64), E>
where
    F: Fn(f64) -> Result<f64, E>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

/// T₂ as a function of detuning with its peak and width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanCurve {
    /// Detunings (rad/s).
    pub deltas: Vec<f64>,
    /// Coherence times (s).
    pub t2: Vec<f64>,
    pub t2_err: Vec<f64>,
    pub peak_delta: f64,
    pub peak_t2: f64,
    /// Full width at half maximum (rad/s); `None` when a half-height crossing lies outside the grid.
    pub fwhm: Option<f64>,
    /// The grid maximum sits on an endpoint.
    pub boundary: bool,
}

impl ScanCurve {
    /// CSV with header `delta_mhz,t2_us,t2_err_us`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta_mhz,t2_us,t2_err_us\n");
        for i in 0..self.deltas.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e}\n",
                self.deltas[i] / (2.0 * PI * 1e6),
                self.t2[i] * 1e6,
                self.t2_err[i] * 1e6
            ));
        }
        s
    }
}

/// Evaluates `eval` (Δ → (T₂, error)) over the grid, then refines the peak by
/// golden section between the two grid neighbours of the maximum.
pub fn scan_detunings<F, E>(grid: &[f64], eval: F, exec: Execution) -> Result<ScanCurve, E>
where
    F: Fn(f64) -> Result<(f64, f64), E> + Sync + Send,
    E: From<AnalysisError> + Send,
{
    if grid.len() < MIN_SCAN_POINTS {
        return Err(AnalysisError::TooFewPoints { need: MIN_SCAN_POINTS, got: grid.len() }.into());
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::Invalid("scan grid must be finite and strictly increasing".into()).into());
    }
    let vals = map_indexed(grid.len(), exec, |i| eval(grid[i]));
    let mut t2 = Vec::with_capacity(grid.len());
    let mut err = Vec::with_capacity(grid.len());
    for v in vals {
        let (a, b) = v?;
        t2.push(a);
        err.push(b);
    }
    let imax = (0..t2.len()).max_by(|&a, &b| t2[a].total_cmp(&t2[b])).unwrap_or(0);
    let boundary = imax == 0 || imax + 1 == t2.len();
    let (peak_delta, peak_t2) = if boundary {
        (grid[imax], t2[imax])
    } else {
        let tol = 1e-9 * (grid[imax + 1] - grid[imax - 1]).abs().max(grid[imax].abs() * 1e-3);
        let (x, v) = golden_max(|d| eval(d).map(|r| r.0), grid[imax - 1], grid[imax + 1], tol)?;
        if v >= t2[imax] {
            (x, v)
        } else {
            (grid[imax], t2[imax])
        }
    };
    let half = 0.5 * peak_t2;
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        for i in range {
            let (j, k) = (i, if i > imax { i - 1 } else { i + 1 });
            // j outside, k inside
            if t2[j] <= half && t2[k] > half {
                return Some(grid[j] + (half - t2[j]) / (t2[k] - t2[j]) * (grid[k] - grid[j]));
            }
        }
        None
    };
    let left = cross(&mut (0..imax).rev());
    let right = cross(&mut (imax + 1..t2.len()));
    let fwhm = match (left, right) {
        (Some(l), Some(r)) if peak_t2.is_finite() => Some(r - l),
        _ => None,
    };
    Ok(ScanCurve { deltas: grid.to_vec(), t2, t2_err: err, peak_delta, peak_t2, fwhm, boundary })
}
