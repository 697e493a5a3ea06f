//! Flat TOML run configuration. Frequencies are cyclic (MHz unless the key
//! says otherwise); conversion to angular units happens here and nowhere else.

use std::f64::consts::PI;

use ddclock::analysis::FitOptions;
use ddclock::dynamics::{Frame, Protocol, Transition};
use ddclock::hamiltonian::{DriveConfig, PiPhaseTone};
use ddclock::noise::{DriveNoiseMode, DriveNoiseParams, FidProbe};
use ddclock::optimizer::Scheme;
use ddclock::spectrum::{NoiseDirection, Pair};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3", include_str!("../../../presets/fig3.toml")),
    ("fig3-inset", include_str!("../../../presets/fig3-inset.toml")),
    ("fig3-point", include_str!("../../../presets/fig3-point.toml")),
    ("fig4-theory", include_str!("../../../presets/fig4-theory.toml")),
    ("fig5", include_str!("../../../presets/fig5.toml")),
    ("fig5-inset", include_str!("../../../presets/fig5-inset.toml")),
    ("improved-2mhz", include_str!("../../../presets/improved-2mhz.toml")),
    ("fid-bare", include_str!("../../../presets/fid-bare.toml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    /// Coherence time against two-photon detuning.
    #[default]
    Detuning,
    /// Best clock-point coherence against drive strength.
    Drive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    FidBare,
    RabiBare,
    DressedRamsey,
    Survival,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Correlated,
    Independent,
    Imbalanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairName {
    Bd,
    Bu,
    Ud,
}

fn default_scheme() -> Scheme {
    Scheme::Basic
}
fn default_t2_star() -> f64 {
    2.0
}
fn default_tau_c() -> f64 {
    15.0
}
fn default_drive_noise() -> f64 {
    0.005
}
fn default_mode() -> NoiseMode {
    NoiseMode::Correlated
}
fn default_true() -> bool {
    true
}
fn default_pair() -> PairName {
    PairName::Bd
}
fn default_trials() -> usize {
    64
}
fn default_seed() -> u64 {
    1
}

/// Everything a command needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,

    // drive (cyclic MHz); Ω_D = √2·Ω₁, Ω_B = √2·Ω₂
    pub omega_d_mhz: f64,
    pub omega_b_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_minus_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_plus_ghz: Option<f64>,
    #[serde(default)]
    pub pi_phase: PiPhaseTone,
    #[serde(default = "default_pair")]
    pub pair: PairName,

    // noise
    #[serde(default = "default_t2_star")]
    pub t2_star_us: f64,
    #[serde(default = "default_tau_c")]
    pub tau_c_us: f64,
    /// Magnetic rms σ/2π (kHz); calibrated from `t2_star_us` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_khz: Option<f64>,
    #[serde(default)]
    pub fid_probe: FidProbe,
    #[serde(default = "default_drive_noise")]
    pub drive_noise: f64,
    #[serde(default = "default_mode")]
    pub drive_noise_mode: NoiseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_ratio: Option<f64>,
    #[serde(default = "default_true")]
    pub resample_per_shot: bool,

    // scan
    #[serde(default)]
    pub scan_kind: ScanKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_start_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_stop_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_limit_us: Option<f64>,

    // optimize
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_lo_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_hi_mhz: Option<f64>,

    // protocol
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_transition: Option<Transition>,
    #[serde(default)]
    pub frame: Frame,
    /// Uniform τ grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_start_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_stop_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_points: Option<usize>,
    /// Windowed τ grid locked to the protected beat: `windows` bursts over
    /// `span_us`, each `window_periods` periods at `samples_per_period`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_periods: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_period: Option<usize>,
    /// Ignore τ below this when fitting (µs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_skip_us: Option<f64>,
    #[serde(default)]
    pub fit_stretch: bool,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_ns: Option<f64>,
}

pub fn rad(mhz: f64) -> f64 {
    2.0 * PI * 1e6 * mhz
}

pub fn cyc_mhz(rad_s: f64) -> f64 {
    rad_s / (2.0 * PI * 1e6)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("unknown preset '{name}' (available: {})", names.join(", ")))
        })?;
        Self::parse(text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        positive("omega_d_mhz", self.omega_d_mhz)?;
        non_negative("omega_b_mhz", self.omega_b_mhz)?;
        if let Some(d) = self.delta_mhz {
            if !d.is_finite() {
                return Err(CliError::Config("delta_mhz must be finite".into()));
            }
        }
        if let Some(d) = self.delta0_mhz {
            if !d.is_finite() {
                return Err(CliError::Config("delta0_mhz must be finite".into()));
            }
        }
        for (n, v) in [("transition_minus_ghz", self.transition_minus_ghz), ("transition_plus_ghz", self.transition_plus_ghz)] {
            if let Some(v) = v {
                positive(n, v)?;
            }
        }
        positive("t2_star_us", self.t2_star_us)?;
        positive("tau_c_us", self.tau_c_us)?;
        if let Some(s) = self.sigma_khz {
            non_negative("sigma_khz", s)?;
        }
        if !(0.0..1.0).contains(&self.drive_noise) {
            return Err(CliError::Config("drive_noise must lie in [0, 1)".into()));
        }
        match (self.drive_noise_mode, self.imbalance_ratio) {
            (NoiseMode::Imbalanced, None) => {
                return Err(CliError::Config("drive_noise_mode = \"imbalanced\" needs imbalance_ratio".into()))
            }
            (NoiseMode::Imbalanced, Some(r)) => positive("imbalance_ratio", r)?,
            (_, Some(_)) => {
                return Err(CliError::Config("imbalance_ratio is only valid with drive_noise_mode = \"imbalanced\"".into()))
            }
            _ => {}
        }
        if let Some(t) = self.t_limit_us {
            positive("t_limit_us", t)?;
        }
        for (n, v) in [("tau_stop_us", self.tau_stop_us), ("span_us", self.span_us), ("dt_ns", self.dt_ns)] {
            if let Some(v) = v {
                positive(n, v)?;
            }
        }
        for (n, v) in [("tau_start_us", self.tau_start_us), ("fit_skip_us", self.fit_skip_us)] {
            if let Some(v) = v {
                non_negative(n, v)?;
            }
        }
        for (n, v) in [("windows", self.windows), ("window_periods", self.window_periods), ("samples_per_period", self.samples_per_period)] {
            if v == Some(0) {
                return Err(CliError::Config(format!("{n} must be positive")));
            }
        }
        if self.trials == 0 {
            return Err(CliError::Config("trials must be positive".into()));
        }
        Ok(())
    }

    /// Drive configuration; Δ and Δ₀ default to zero when absent.
    pub fn drive(&self) -> DriveConfig {
        let mut cfg = DriveConfig::from_dressed(
            rad(self.omega_d_mhz),
            rad(self.omega_b_mhz),
            rad(self.delta_mhz.unwrap_or(0.0)),
            rad(self.delta0_mhz.unwrap_or(0.0)),
        );
        if let Some(g) = self.transition_minus_ghz {
            cfg.omega1 = rad(g * 1e3);
        }
        if let Some(g) = self.transition_plus_ghz {
            cfg.omega2 = rad(g * 1e3);
        }
        cfg.pi_phase = self.pi_phase;
        cfg
    }

    pub fn pair(&self) -> Pair {
        match self.pair {
            PairName::Bd => Pair::BD,
            PairName::Bu => Pair::BU,
            PairName::Ud => Pair::UD,
        }
    }

    pub fn drive_noise(&self) -> DriveNoiseParams {
        let mode = match self.drive_noise_mode {
            NoiseMode::Correlated => DriveNoiseMode::Correlated,
            NoiseMode::Independent => DriveNoiseMode::Independent,
            NoiseMode::Imbalanced => DriveNoiseMode::Imbalanced { ratio: self.imbalance_ratio.unwrap_or(1.0) },
        };
        DriveNoiseParams { delta_rms: self.drive_noise, mode, resample_per_shot: self.resample_per_shot }
    }

    pub fn direction(&self) -> NoiseDirection {
        self.drive_noise().direction()
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c_us * 1e-6
    }

    pub fn protocol(&self) -> Result<Protocol, CliError> {
        Ok(match self.protocol.ok_or_else(|| CliError::Config("protocol is required".into()))? {
            ProtocolKind::FidBare => Protocol::FidBare { probe: self.fid_probe },
            ProtocolKind::RabiBare => Protocol::RabiBare { transition: self.rabi_transition.unwrap_or(Transition::Minus) },
            ProtocolKind::DressedRamsey => Protocol::DressedRamsey,
            ProtocolKind::Survival => Protocol::SurvivalProbe,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { fit_exponent: self.fit_stretch, ..Default::default() }
    }

    /// Uniform grid from `scan_start_mhz`, `scan_stop_mhz`, `scan_points` (rad/s).
    pub fn scan_grid(&self) -> Result<Vec<f64>, CliError> {
        let (Some(a), Some(b), Some(n)) = (self.scan_start_mhz, self.scan_stop_mhz, self.scan_points) else {
            return Err(CliError::Config("scan needs scan_start_mhz, scan_stop_mhz and scan_points".into()));
        };
        if n == 0 {
            return Err(CliError::Config("scan grid is empty".into()));
        }
        if !(a.is_finite() && b.is_finite()) || (n > 1 && b <= a) {
            return Err(CliError::Config("scan_stop_mhz must exceed scan_start_mhz".into()));
        }
        let step = if n > 1 { (b - a) / (n - 1) as f64 } else { 0.0 };
        Ok((0..n).map(|k| rad(a + step * k as f64)).collect())
    }

    pub fn scheme_name(&self) -> &'static str {
        match self.scheme {
            Scheme::Basic => "basic",
            Scheme::Improved => "improved",
        }
    }
}
