//! The four subcommands. Each returns a primary artifact (CSV or JSON text)
//! and a JSON summary that ends up in the sidecar.

use std::f64::consts::PI;

use ddclock::analysis::{dominant_frequency, fit_damped_sinusoid, scan_detunings, FitOptions};
use ddclock::dynamics::{run_protocol, EnsembleResult, NoiseModel, Protocol, ProtocolSpec};
use ddclock::exec::Execution;
use ddclock::experiment::{beat_frequency, beat_grid, envelope_after};
use ddclock::noise::{calibrate_sigma, CalibrationOptions, OUParams, RNG_ID};
use ddclock::optimizer::{
    coherence_limit, max_coherence_scan, optimize_basic, optimize_improved_from, ClockSolution,
    CoherenceModel, Scheme,
};
use ddclock::spectrum::{
    amplitude_mixing, combined_coherence_time, doubly_dressed_spectrum, drive_second_order, drive_susceptibility,
    magnetic_second_order,
};
use serde_json::{json, Value};

use crate::config::{cyc_mhz, rad, RunConfig, ScanKind};
use crate::error::CliError;

const EXEC: Execution = Execution::Parallel;

/// Per-MHz² scale for second-order coefficients: a shift a·δB² (rad/s) with δB
/// in rad/s becomes a·2π·10⁶ MHz per MHz².
const PER_MHZ: f64 = 2.0 * PI * 1e6;

pub struct Output {
    /// File extension of the primary artifact ("csv" or "json").
    pub kind: &'static str,
    pub body: String,
    pub summary: Value,
}

/// Magnetic rms σ (rad/s): the configured value, or the FID calibration
/// against `t2_star_us`. The resolved value is written back to the config.
fn resolve_sigma(cfg: &mut RunConfig) -> Result<f64, CliError> {
    if let Some(k) = cfg.sigma_khz {
        return Ok(rad(k * 1e-3));
    }
    let opts = CalibrationOptions { probe: cfg.fid_probe, ..Default::default() };
    let cal = calibrate_sigma(cfg.t2_star_us * 1e-6, cfg.tau_c(), &opts, EXEC)?;
    cfg.sigma_khz = Some(cyc_mhz(cal.sigma) * 1e3);
    Ok(cal.sigma)
}

fn model(cfg: &RunConfig, sigma: f64) -> CoherenceModel {
    CoherenceModel { sigma, tau_c: cfg.tau_c(), delta_rms: cfg.drive_noise, direction: cfg.direction(), pair: cfg.pair() }
}

fn search_interval(cfg: &RunConfig) -> Result<Option<(f64, f64)>, CliError> {
    match (cfg.search_lo_mhz, cfg.search_hi_mhz) {
        (None, None) => Ok(None),
        (Some(a), Some(b)) => Ok(Some((rad(a), rad(b)))),
        _ => Err(CliError::Config("search_lo_mhz and search_hi_mhz must be given together".into())),
    }
}

fn clock_point(cfg: &RunConfig) -> Result<ClockSolution, CliError> {
    let drive = cfg.drive();
    let basic = optimize_basic(&drive, cfg.direction(), search_interval(cfg)?, cfg.pair())?;
    Ok(match cfg.scheme {
        Scheme::Basic => basic,
        Scheme::Improved => optimize_improved_from(&drive, cfg.direction(), cfg.pair(), [basic.delta, 0.0])?,
    })
}

pub fn spectrum(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let drive = cfg.drive();
    drive.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let pair = cfg.pair();
    let sp = doubly_dressed_spectrum(&drive)?;
    let sus = drive_susceptibility(&drive, cfg.direction())?;
    let kappa = drive_second_order(&drive, cfg.direction())?;
    let m2 = magnetic_second_order(&drive)?;
    let mixing = match cfg.sigma_khz {
        Some(k) => Some(amplitude_mixing(&drive, rad(k * 1e-3))?),
        None => None,
    };
    let e = sp.energies_rad_s.map(cyc_mhz);
    let body = json!({
        "energies_mhz": { "u": e[0], "B": e[1], "d": e[2] },
        "qubit_gap_mhz": cyc_mhz(sp.qubit_gap()),
        "susceptibility_mhz": { "u": cyc_mhz(sus.e[0]), "B": cyc_mhz(sus.e[1]), "d": cyc_mhz(sus.e[2]) },
        "susceptibility_diff_mhz": cyc_mhz(sus.diff(pair)),
        "drive_second_order_mhz": { "u": cyc_mhz(kappa[0]), "B": cyc_mhz(kappa[1]), "d": cyc_mhz(kappa[2]) },
        "magnetic_second_order_per_mhz": {
            "a": m2.a * PER_MHZ,
            "b": m2.b * PER_MHZ,
            "c": m2.c * PER_MHZ,
            "pair_gap": m2.gap_coefficient(pair) * PER_MHZ,
        },
        "alpha": sp.alpha,
        "beta": sp.beta,
        "mixing": mixing.map(|m| json!({ "amplitude": m.amplitude, "population": m.population, "j": m.j, "k": m.k })),
        "rwa_ratio": drive.rwa_ratio(),
    });
    let summary = json!({ "susceptibility_diff_mhz": cyc_mhz(sus.diff(pair)), "qubit_gap_mhz": cyc_mhz(sp.qubit_gap()) });
    Ok(Output { kind: "json", body: serde_json::to_string_pretty(&body).expect("serializable") + "\n", summary })
}

pub fn scan(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let grid = cfg.scan_grid()?;
    match cfg.scan_kind {
        ScanKind::Detuning => scan_detuning(cfg, &grid),
        ScanKind::Drive => scan_drive(cfg, &grid),
    }
}

fn scan_detuning(cfg: &mut RunConfig, grid: &[f64]) -> Result<Output, CliError> {
    let base = cfg.drive();
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let t_limit = match cfg.t_limit_us {
        Some(t) => t * 1e-6,
        None => {
            let sigma = resolve_sigma(cfg)?;
            let clock = clock_point(cfg)?;
            let lim = coherence_limit(&base.with_detunings(clock.delta, clock.delta0), cfg.scheme, &model(cfg, sigma))?;
            cfg.t_limit_us = Some(lim.t2 * 1e6);
            lim.t2
        }
    };
    let (dir, rms, pair) = (cfg.direction(), cfg.drive_noise, cfg.pair());
    let curve = scan_detunings(
        grid,
        |d| -> Result<(f64, f64), CliError> {
            Ok((combined_coherence_time(&base.with_delta(d), dir, rms, t_limit, pair)?, 0.0))
        },
        EXEC,
    )?;
    let summary = json!({
        "peak_delta_mhz": cyc_mhz(curve.peak_delta),
        "peak_t2_us": curve.peak_t2 * 1e6,
        "fwhm_mhz": curve.fwhm.map(cyc_mhz),
        "peak_on_boundary": curve.boundary,
        "t_limit_us": t_limit * 1e6,
    });
    Ok(Output { kind: "csv", body: curve.to_csv(), summary })
}

fn scan_drive(cfg: &mut RunConfig, grid: &[f64]) -> Result<Output, CliError> {
    if !grid.iter().all(|w| *w > 0.0) {
        return Err(CliError::Config("drive scan values must be positive".into()));
    }
    let sigma = resolve_sigma(cfg)?;
    let scan = max_coherence_scan(&cfg.drive(), grid, cfg.scheme, &model(cfg, sigma), EXEC);
    let Some(best) = scan.best() else {
        let why = scan.failures.first().map(|(_, e)| e.clone()).unwrap_or_default();
        return Err(CliError::Solver(format!("no drive strength in the scan has a clock point ({why})")));
    };
    let failures: Vec<Value> =
        scan.failures.iter().map(|(w, e)| json!({ "omega_mhz": cyc_mhz(*w), "error": e })).collect();
    let summary = json!({
        "best_omega_mhz": cyc_mhz(best.omega),
        "best_delta_mhz": cyc_mhz(best.delta),
        "best_delta0_mhz": cyc_mhz(best.delta0),
        "best_t2_us": best.limit.t2 * 1e6,
        "failures": failures,
    });
    Ok(Output { kind: "csv", body: scan.to_csv(), summary })
}

pub fn optimize(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let drive = cfg.drive();
    drive.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let sol = clock_point(cfg)?;
    let sigma = resolve_sigma(cfg)?;
    let lim = coherence_limit(&drive.with_detunings(sol.delta, sol.delta0), cfg.scheme, &model(cfg, sigma))?;
    cfg.delta_mhz = Some(cyc_mhz(sol.delta));
    cfg.delta0_mhz = Some(cyc_mhz(sol.delta0));
    let trace: Vec<Value> = sol
        .trace
        .iter()
        .map(|t| json!({ "delta_mhz": cyc_mhz(t.delta), "delta0_mhz": cyc_mhz(t.delta0), "residuals": t.residuals }))
        .collect();
    let body = json!({
        "scheme": cfg.scheme_name(),
        "delta_mhz": cyc_mhz(sol.delta),
        "delta0_mhz": cyc_mhz(sol.delta0),
        "residuals": sol.residuals,
        "t2_predicted_us": lim.t2 * 1e6,
        "rates_per_s": { "magnetic": lim.rate_magnetic, "drive": lim.rate_drive, "mixing": lim.rate_mixing },
        "mixing_amplitude": lim.mixing,
        "iterations": sol.trace.len(),
        "trace": trace,
    });
    let summary = json!({ "delta_mhz": cyc_mhz(sol.delta), "delta0_mhz": cyc_mhz(sol.delta0), "t2_predicted_us": lim.t2 * 1e6 });
    Ok(Output { kind: "json", body: serde_json::to_string_pretty(&body).expect("serializable") + "\n", summary })
}

/// First time at which the FID coherence 2·S − 1 falls below 1/e, by linear
/// interpolation; `None` if it never does.
fn one_over_e_time(r: &EnsembleResult) -> Option<f64> {
    let target = (-1.0f64).exp();
    let c: Vec<f64> = r.mean.iter().map(|s| 2.0 * s - 1.0).collect();
    (1..c.len()).find(|&i| c[i] < target && c[i - 1] >= target).map(|i| {
        let f = (c[i - 1] - target) / (c[i - 1] - c[i]);
        r.taus[i - 1] + f * (r.taus[i] - r.taus[i - 1])
    })
}

fn tau_grid(cfg: &RunConfig, beat: Option<f64>) -> Result<Vec<f64>, CliError> {
    if let (Some(a), Some(b), Some(n)) = (cfg.tau_start_us, cfg.tau_stop_us, cfg.tau_points) {
        if n < 2 || b <= a {
            return Err(CliError::Config("τ grid needs tau_points ≥ 2 and tau_stop_us > tau_start_us".into()));
        }
        let step = (b - a) / (n - 1) as f64;
        return Ok((0..n).map(|k| (a + step * k as f64) * 1e-6).collect());
    }
    match (cfg.span_us, beat) {
        (Some(span), Some(beat)) => Ok(beat_grid(
            beat,
            span * 1e-6,
            cfg.windows.unwrap_or(60),
            cfg.window_periods.unwrap_or(3),
            cfg.samples_per_period.unwrap_or(24),
        )),
        (Some(_), None) => Err(CliError::Config("span_us grids are only available for dressed protocols".into())),
        _ => Err(CliError::Config("protocol needs tau_start_us/tau_stop_us/tau_points or span_us".into())),
    }
}

pub fn protocol(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let proto = cfg.protocol()?;
    let sigma = resolve_sigma(cfg)?;
    let dressed = matches!(proto, Protocol::DressedRamsey | Protocol::SurvivalProbe);
    if dressed && cfg.delta_mhz.is_none() {
        let clock = clock_point(cfg)?;
        cfg.delta_mhz = Some(cyc_mhz(clock.delta));
        cfg.delta0_mhz = Some(cyc_mhz(clock.delta0));
    }
    let drive = cfg.drive();
    let beat = if dressed { Some(beat_frequency(&drive, sigma, cfg.pair())?) } else { None };
    let mut spec = ProtocolSpec::new(proto, tau_grid(cfg, beat)?)?.with_frame(cfg.frame);
    if let Some(dt) = cfg.dt_ns {
        spec = spec.with_dt(dt * 1e-9);
    }
    let noise = NoiseModel { ou: OUParams::new(sigma, cfg.tau_c())?, drive: cfg.drive_noise() };
    let res = run_protocol(&spec, &drive, &noise, cfg.trials, cfg.seed, EXEC)?;

    let mut summary = json!({ "protocol": res.protocol, "trials": res.trials, "dt_s": res.dt, "points": res.taus.len() });
    let s = summary.as_object_mut().expect("object");
    // a failed analysis leaves the ensemble data intact; report it instead of failing the run
    if let Err(e) = analyse(cfg, proto, beat, &res, s) {
        eprintln!("warning: analysis skipped: {e}");
        s.insert("analysis_error".into(), json!(e.to_string()));
    }
    Ok(Output { kind: "csv", body: res.to_csv(), summary })
}

fn analyse(
    cfg: &RunConfig,
    proto: Protocol,
    beat: Option<f64>,
    res: &EnsembleResult,
    s: &mut serde_json::Map<String, Value>,
) -> Result<(), CliError> {
    match proto {
        Protocol::FidBare { .. } => {
            let t = one_over_e_time(res)
                .ok_or_else(|| CliError::Solver("FID coherence never falls below 1/e on the τ grid".into()))?;
            s.insert("t2_star_us".into(), json!(t * 1e6));
        }
        Protocol::RabiBare { .. } => {
            let w = dominant_frequency(&res.taus, &res.mean)?;
            s.insert("population_frequency_mhz".into(), json!(cyc_mhz(w)));
        }
        Protocol::DressedRamsey | Protocol::SurvivalProbe => {
            let beat = beat.expect("dressed protocols have a beat");
            let default_skip = if proto == Protocol::SurvivalProbe { 20.0 * PI / beat } else { 20e-6 };
            let skip = cfg.fit_skip_us.map(|v| v * 1e-6).unwrap_or(default_skip);
            s.insert("beat_mhz".into(), json!(cyc_mhz(beat)));
            s.insert("fit_skip_us".into(), json!(skip * 1e6));
            if proto == Protocol::SurvivalProbe {
                let env = envelope_after(res, skip)?;
                s.insert("envelope_time_constant_us".into(), json!(env.time_constant * 1e6));
                s.insert("envelope_time_constant_err_us".into(), json!(env.time_constant_err * 1e6));
            }
            let keep: Vec<usize> = (0..res.taus.len()).filter(|&i| res.taus[i] >= skip).collect();
            let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let se = pick(&res.stderr);
            let weights = if se.iter().all(|v| *v > 0.0) { Some(se.as_slice()) } else { None };
            let opts = FitOptions { omega_hint: Some(beat), ..cfg.fit_options() };
            let fit = fit_damped_sinusoid(&pick(&res.taus), &pick(&res.mean), weights, &opts)?;
            s.insert("fit".into(), serde_json::to_value(fit).expect("serializable"));
            s.insert("t2_us".into(), json!(fit.t2 * 1e6));
            s.insert("t2_err_us".into(), json!(fit.errors.t2 * 1e6));
        }
    }
    Ok(())
}

/// Sidecar metadata common to every output.
pub fn meta(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "rng": RNG_ID,
        "seed": cfg.seed,
        "config": cfg,
    })
}
