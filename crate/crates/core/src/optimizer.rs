//! Clock-condition solvers and the analytic coherence-limit model.
//!
//! Basic scheme: e_B̃ = e_d̃ along the drive-noise direction, solved for Δ.
//! Improved scheme: additionally b = c, solved jointly for (Δ, Δ₀).

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::hamiltonian::DriveConfig;
use crate::spectrum::{
    amplitude_mixing, drive_second_order, drive_susceptibility, magnetic_gap_polynomial, magnetic_second_order,
    NoiseDirection, Pair, SpectrumError,
};

/// Residual tolerance, relative to Ω_D for the susceptibility constraint and
/// to 1/Ω_D for b − c.
pub const CLOCK_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;
const MAX_COND: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("no sign change of the constraint on [{lo:.6e}, {hi:.6e}] rad/s")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("invalid search interval: {0}")]
    InvalidInterval(String),
    #[error("Newton iteration did not converge in {0} iterations")]
    Divergence(usize),
    #[error("Jacobian is singular (condition number {0:.3e})")]
    SingularJacobian(f64),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Basic,
    Improved,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub delta: f64,
    pub delta0: f64,
    pub residuals: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockSolution {
    pub scheme: Scheme,
    /// Δ* (rad/s).
    pub delta: f64,
    /// Δ₀* (rad/s); zero for the basic scheme.
    pub delta0: f64,
    /// Scaled constraint residuals: (e_B̃ − e_d̃)/Ω_D and, for the improved scheme, (b − c)·Ω_D.
    pub residuals: Vec<f64>,
    /// Coherence limit at the solution when a noise model was supplied.
    pub t2_predicted: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

/// First-order drive constraint f(Δ) = e_k − e_j for the configured pair.
fn drive_constraint(cfg: &DriveConfig, dir: NoiseDirection, pair: Pair) -> Result<f64, SpectrumError> {
    Ok(drive_susceptibility(cfg, dir)?.diff(pair))
}

/// Brent's bracketed root finder. Returns the root and the iteration count.
pub fn brent_root<F, E>(f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Result<(f64, usize), E>
where
    F: Fn(f64) -> Result<f64, E>,
    E: From<OptimizerError>,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa == 0.0 {
        return Ok((a, 0));
    }
    if fb == 0.0 {
        return Ok((b, 0));
    }
    if fa.signum() == fb.signum() {
        return Err(OptimizerError::NoSignChange { lo, hi }.into());
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for it in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok((b, it));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Ok((b, max_iter))
}

/// Solves e_B̃(Δ) = e_d̃(Δ) by Brent's method with Δ₀ = 0. The default
/// interval is [1.5·Ω_D, 60·Ω_D].
pub fn optimize_basic(
    cfg: &DriveConfig,
    dir: NoiseDirection,
    interval: Option<(f64, f64)>,
    pair: Pair,
) -> Result<ClockSolution, OptimizerError> {
    let od = cfg.omega_d();
    if !(od > 0.0) {
        return Err(OptimizerError::InvalidInterval("Ω_D must be positive".into()));
    }
    let (lo, hi) = interval.unwrap_or((1.5 * od, 60.0 * od));
    let guard = 1.01 * od;
    if !(lo < hi) || (lo.abs() <= guard || hi.abs() <= guard) || (lo < 0.0) != (hi < 0.0) {
        return Err(OptimizerError::InvalidInterval(format!(
            "interval must exclude |Δ| ≤ 1.01·Ω_D = {guard:.6e} rad/s and be ordered"
        )));
    }
    let base = cfg.with_detunings(0.0, 0.0);
    let f = |d: f64| -> Result<f64, OptimizerError> { Ok(drive_constraint(&base.with_delta(d), dir, pair)?) };
    let (delta, _) = brent_root(f, lo, hi, 1e-14 * hi.abs(), 200)?;
    let r = f(delta)? / od;
    if r.abs() > CLOCK_TOL {
        return Err(OptimizerError::Divergence(200));
    }
    Ok(ClockSolution {
        scheme: Scheme::Basic,
        delta,
        delta0: 0.0,
        residuals: vec![r],
        t2_predicted: None,
        trace: vec![TraceEntry { delta, delta0: 0.0, residuals: [r, 0.0] }],
    })
}

fn improved_residuals(
    base: &DriveConfig,
    x: [f64; 2],
    dir: NoiseDirection,
    pair: Pair,
) -> Result<[f64; 2], SpectrumError> {
    let od = base.omega_d();
    let cfg = base.with_detunings(x[0], x[1]);
    let f1 = drive_constraint(&cfg, dir, pair)? / od;
    let m = magnetic_second_order(&cfg)?;
    Ok([f1, m.gap_coefficient(pair) * od])
}

/// 2D Newton on (f₁, f₂) = ((e_B̃ − e_d̃)/Ω_D, (b − c)·Ω_D) with a central
/// finite-difference Jacobian and backtracking, seeded at the basic solution.
pub fn optimize_improved(cfg: &DriveConfig, dir: NoiseDirection, pair: Pair) -> Result<ClockSolution, OptimizerError> {
    let basic = optimize_basic(cfg, dir, None, pair)?;
    optimize_improved_from(cfg, dir, pair, [basic.delta, 0.0])
}

pub fn optimize_improved_from(
    cfg: &DriveConfig,
    dir: NoiseDirection,
    pair: Pair,
    seed: [f64; 2],
) -> Result<ClockSolution, OptimizerError> {
    let od = cfg.omega_d();
    let h = 1e-4 * od;
    let mut x = seed;
    let mut r = improved_residuals(cfg, x, dir, pair)?;
    let mut trace = vec![TraceEntry { delta: x[0], delta0: x[1], residuals: r }];
    let norm = |r: &[f64; 2]| r[0].hypot(r[1]);
    for _ in 0..MAX_NEWTON {
        if r[0].abs() < CLOCK_TOL && r[1].abs() < CLOCK_TOL {
            return Ok(ClockSolution {
                scheme: Scheme::Improved,
                delta: x[0],
                delta0: x[1],
                residuals: r.to_vec(),
                t2_predicted: None,
                trace,
            });
        }
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (improved_residuals(cfg, xp, dir, pair)?, improved_residuals(cfg, xm, dir, pair)?);
            for i in 0..2 {
                // derivative per unit Ω_D
                jac[i][k] = (rp[i] - rm[i]) / (2.0 * h) * od;
            }
        }
        let cond = condition_2x2(&jac);
        if !(cond < MAX_COND) {
            return Err(OptimizerError::SingularJacobian(cond));
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let step = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det * od,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det * od,
        ];
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let xn = [x[0] + t * step[0], x[1] + t * step[1]];
            if let Ok(rn) = improved_residuals(cfg, xn, dir, pair) {
                if norm(&rn) < norm(&r) * (1.0 - 1e-4 * t) || norm(&rn) < CLOCK_TOL {
                    x = xn;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        trace.push(TraceEntry { delta: x[0], delta0: x[1], residuals: r });
        if !accepted {
            break;
        }
    }
    if r[0].abs() < CLOCK_TOL && r[1].abs() < CLOCK_TOL {
        return Ok(ClockSolution {
            scheme: Scheme::Improved,
            delta: x[0],
            delta0: x[1],
            residuals: r.to_vec(),
            t2_predicted: None,
            trace,
        });
    }
    Err(OptimizerError::Divergence(MAX_NEWTON))
}

fn condition_2x2(m: &[[f64; 2]; 2]) -> f64 {
    // singular values from the eigenvalues of MᵀM
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let tr = a + d;
    let disc = ((a - d).powi(2) + 4.0 * b * b).sqrt();
    let (l1, l2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    if l2 <= 0.0 {
        return f64::INFINITY;
    }
    (l1 / l2).sqrt()
}

/// Noise entering the analytic coherence-limit model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceModel {
    /// OU magnetic rms σ (rad/s).
    pub sigma: f64,
    pub tau_c: f64,
    /// Relative drive-amplitude rms δ.
    pub delta_rms: f64,
    pub direction: NoiseDirection,
    pub pair: Pair,
}

/// Rates (1/s) of the three channels and the resulting limit 1/ΣΓ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceLimit {
    pub t2: f64,
    pub rate_magnetic: f64,
    pub rate_drive: f64,
    pub rate_mixing: f64,
    pub mixing: f64,
}

/// Coherence limit at a clock point.
///
/// * Magnetic: gap(δB) ≈ k₂δB² + k₄δB⁴ under fast OU noise dephases at
///   Γ = ½τ_c(2k₂²σ⁴ + 24k₂k₄σ⁶ + 84k₄²σ⁸). The basic scheme keeps k₂ from
///   second-order theory; the improved scheme fits k₂, k₄ numerically.
/// * Drive: the residual second-order shift |κ_B̃ − κ_d̃|δ², as a rate
///   |κ_B̃ − κ_d̃|δ²/√2.
/// * Mixing (improved only): the unprotected drive-limited time
///   √2/(Ω_D·w₁·δ) stretched by 1/mixing.
pub fn coherence_limit(cfg: &DriveConfig, scheme: Scheme, m: &CoherenceModel) -> Result<CoherenceLimit, SpectrumError> {
    let (k, j) = m.pair.indices();
    let s = m.sigma;
    let (k2, k4) = match scheme {
        Scheme::Basic => (magnetic_second_order(cfg)?.gap_coefficient(m.pair), 0.0),
        Scheme::Improved => {
            let p = magnetic_gap_polynomial(cfg, 4.0 * s.max(1e-9 * cfg.omega_d()), m.pair)?;
            (p.k2, p.k4)
        }
    };
    let rate_magnetic =
        0.5 * m.tau_c * (2.0 * k2 * k2 * s.powi(4) + 24.0 * k2 * k4 * s.powi(6) + 84.0 * k4 * k4 * s.powi(8));
    let kappa = drive_second_order(cfg, m.direction)?;
    let rate_drive = (kappa[k] - kappa[j]).abs() * m.delta_rms.powi(2) / SQRT_2;
    let (rate_mixing, mixing) = match scheme {
        Scheme::Basic => (0.0, 0.0),
        Scheme::Improved => {
            let mix = amplitude_mixing(cfg, s)?.amplitude;
            let unprotected = cfg.omega_d() * m.direction.w1 * m.delta_rms / SQRT_2;
            (mix * unprotected, mix)
        }
    };
    let total = rate_magnetic + rate_drive + rate_mixing;
    let t2 = if total > 0.0 { 1.0 / total } else { f64::INFINITY };
    Ok(CoherenceLimit { t2, rate_magnetic, rate_drive, rate_mixing, mixing })
}

/// Solves the scheme's clock condition and evaluates its coherence limit.
pub fn solve_clock(cfg: &DriveConfig, scheme: Scheme, m: &CoherenceModel) -> Result<(ClockSolution, CoherenceLimit), OptimizerError> {
    let mut sol = match scheme {
        Scheme::Basic => optimize_basic(cfg, m.direction, None, m.pair)?,
        Scheme::Improved => optimize_improved(cfg, m.direction, m.pair)?,
    };
    let lim = coherence_limit(&cfg.with_detunings(sol.delta, sol.delta0), scheme, m)?;
    sol.t2_predicted = Some(lim.t2);
    Ok((sol, lim))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherencePoint {
    /// Ω (rad/s), with Ω_D = Ω_B = Ω.
    pub omega: f64,
    pub delta: f64,
    pub delta0: f64,
    pub limit: CoherenceLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScan {
    pub points: Vec<CoherencePoint>,
    /// Ω values whose clock condition could not be solved, with the reason.
    pub failures: Vec<(f64, String)>,
}

impl CoherenceScan {
    pub fn best(&self) -> Option<&CoherencePoint> {
        self.points.iter().max_by(|a, b| a.limit.t2.total_cmp(&b.limit.t2))
    }

    /// CSV with header `omega_mhz,delta_mhz,delta0_mhz,t2_us`.
    pub fn to_csv(&self) -> String {
        let mhz = |w: f64| w / (2.0 * std::f64::consts::PI * 1e6);
        let mut s = String::from("omega_mhz,delta_mhz,delta0_mhz,t2_us\n");
        for p in &self.points {
            s.push_str(&format!("{:e},{:e},{:e},{:e}\n", mhz(p.omega), mhz(p.delta), mhz(p.delta0), p.limit.t2 * 1e6));
        }
        s
    }
}

/// For each Ω (Ω_D = Ω_B = Ω) solves the clock condition and evaluates the
/// coherence limit. `template` supplies the remaining drive settings.
pub fn max_coherence_scan(
    template: &DriveConfig,
    omegas: &[f64],
    scheme: Scheme,
    m: &CoherenceModel,
    exec: Execution,
) -> CoherenceScan {
    let res = map_indexed(omegas.len(), exec, |i| {
        let w = omegas[i];
        let mut cfg = DriveConfig::from_dressed(w, w, 0.0, 0.0);
        cfg.omega1 = template.omega1;
        cfg.omega2 = template.omega2;
        cfg.pi_phase = template.pi_phase;
        solve_clock(&cfg, scheme, m).map(|(s, l)| CoherencePoint { omega: w, delta: s.delta, delta0: s.delta0, limit: l })
    });
    let mut scan = CoherenceScan { points: Vec::new(), failures: Vec::new() };
    for (i, r) in res.into_iter().enumerate() {
        match r {
            Ok(p) => scan.points.push(p),
            Err(e) => scan.failures.push((omegas[i], e.to_string())),
        }
    }
    scan
}
