//! Run configuration: one JSON document with a section per command.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use kinemon_core::charge::{DEFAULT_CUTOFF, DEFAULT_NG_SAMPLES};
use kinemon_core::cqed::CavityConfig;
use kinemon_core::fitting::{FitOptions, FluxCalibration};
use kinemon_core::lindblad::DissipationConfig;
use kinemon_core::{CircuitParams, PhaseGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

/// Either an explicit list or evenly spaced points including both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Linspace(Linspace),
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::List(v) => v.clone(),
            Axis::Linspace(l) if l.points == 1 => vec![l.start],
            Axis::Linspace(l) => (0..l.points)
                .map(|i| l.start + (l.stop - l.start) * i as f64 / (l.points - 1) as f64)
                .collect(),
        }
    }

    fn check(&self, name: &str) -> Result<(), CliError> {
        let v = self.values();
        if v.is_empty() {
            return Err(CliError::config(format!("`{name}` is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::config(format!("`{name}` contains a non-finite value")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Flux points in units of π.
    pub phi_e_over_pi: Axis,
    #[serde(default = "default_sweep_levels")]
    pub n_levels: usize,
}

fn default_sweep_levels() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnharmonicityConfig {
    /// Interval searched for α = 0, in units of π.
    #[serde(default = "default_root_interval")]
    pub root_interval_over_pi: [f64; 2],
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
}

fn default_root_interval() -> [f64; 2] {
    [0.0, 2.0]
}

fn default_scan_points() -> usize {
    kinemon_core::spectrum::DEFAULT_SCAN_POINTS
}

impl Default for AnharmonicityConfig {
    fn default() -> Self {
        Self {
            root_interval_over_pi: default_root_interval(),
            scan_points: default_scan_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsConfig {
    /// Transmon E_J; defaults to the device's ej1.
    pub ej: Option<f64>,
    /// Transmon E_C; defaults to the device's ec.
    pub ec: Option<f64>,
    pub levels: usize,
    pub n_g_samples: usize,
    pub charge_cutoff: usize,
    /// Offset charges written to the band-energy table.
    pub n_g: Axis,
    /// Offset charges and fluxes for the shunted gauge check.
    pub gauge_n_g: Axis,
    pub gauge_phi_e_over_pi: Axis,
    pub gauge_nodes: usize,
    pub gauge_levels: usize,
    pub gauge_tolerance: f64,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            ej: None,
            ec: None,
            levels: 7,
            n_g_samples: DEFAULT_NG_SAMPLES,
            charge_cutoff: DEFAULT_CUTOFF,
            n_g: Axis::Linspace(Linspace {
                start: 0.0,
                stop: 1.0,
                points: 41,
            }),
            gauge_n_g: Axis::List((0..10).map(|i| i as f64 / 10.0).collect()),
            gauge_phi_e_over_pi: Axis::List(vec![0.0, 0.5, 1.0]),
            gauge_nodes: 801,
            gauge_levels: 6,
            gauge_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoToneConfig {
    /// Ω/2π before the rotating-wave approximation, GHz.
    pub amplitude: f64,
    pub phi_e_over_pi: Axis,
    /// Drive frequencies, GHz.
    pub omega_d: Axis,
    #[serde(default = "yes")]
    pub image: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset CSV, relative to the config file.
    pub dataset: Option<PathBuf>,
    /// Starting circuit; defaults to the device section.
    pub initial: Option<CircuitParams>,
    pub calibration: FluxCalibration,
    #[serde(default)]
    pub options: FitOptions,
    /// Starting resonator parameters; when present, resonator points are fitted too.
    pub cavity: Option<CavityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub device: CircuitParams,
    pub grid: Option<PhaseGrid>,
    pub sweep: Option<SweepConfig>,
    pub anharmonicity: Option<AnharmonicityConfig>,
    pub bands: Option<BandsConfig>,
    pub cavity: Option<CavityConfig>,
    pub dissipation: Option<DissipationConfig>,
    pub twotone: Option<TwoToneConfig>,
    pub fit: Option<FitConfig>,
    /// Output directory, relative to the working directory.
    pub output: Option<PathBuf>,
}

/// Applies `key.path=value` overrides. Values are parsed as JSON when
/// possible and taken as strings otherwise.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{item}`")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if part.is_empty() {
                return Err(CliError::usage(format!("empty path segment in `{key}`")));
            }
            let map = match node {
                Value::Object(map) => map,
                _ => return Err(CliError::usage(format!("`{key}`: `{part}` is not inside an object"))),
            };
            if i + 1 == parts.len() {
                map.insert(part.to_string(), value.clone());
                break;
            }
            node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Reads, overrides and parses a config file.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut doc, overrides)?;
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn grid(&self) -> PhaseGrid {
        self.grid.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.device.validate().map_err(CliError::invalid)?;
        self.grid().validate().map_err(CliError::invalid)?;
        if let Some(s) = &self.sweep {
            s.phi_e_over_pi.check("sweep.phi_e_over_pi")?;
            if s.n_levels < 3 {
                return Err(CliError::config("sweep.n_levels must be at least 3"));
            }
        }
        if let Some(a) = &self.anharmonicity {
            let [lo, hi] = a.root_interval_over_pi;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::config("anharmonicity.root_interval_over_pi must be increasing"));
            }
        }
        if let Some(b) = &self.bands {
            b.n_g.check("bands.n_g")?;
            b.gauge_n_g.check("bands.gauge_n_g")?;
            b.gauge_phi_e_over_pi.check("bands.gauge_phi_e_over_pi")?;
            if b.levels == 0 || b.n_g_samples < 2 || b.gauge_levels == 0 {
                return Err(CliError::config("bands: levels, gauge_levels >= 1 and n_g_samples >= 2 required"));
            }
            let (ej, ec) = self.transmon(b);
            kinemon_core::charge::ChargeBasisConfig {
                ej,
                ec,
                n_g: 0.0,
                charge_cutoff: b.charge_cutoff,
            }
            .validate().map_err(CliError::invalid)?;
        }
        if let Some(c) = &self.cavity {
            c.validate().map_err(CliError::invalid)?;
        }
        if let Some(d) = &self.dissipation {
            d.validate().map_err(CliError::invalid)?;
        }
        if let Some(t) = &self.twotone {
            t.phi_e_over_pi.check("twotone.phi_e_over_pi")?;
            t.omega_d.check("twotone.omega_d")?;
            if !(t.amplitude >= 0.0 && t.amplitude.is_finite()) {
                return Err(CliError::config("twotone.amplitude must be finite and >= 0"));
            }
        }
        if let Some(f) = &self.fit {
            f.calibration.validate().map_err(CliError::invalid)?;
            if let Some(p) = &f.initial {
                p.validate().map_err(CliError::invalid)?;
            }
            if let Some(c) = &f.cavity {
                c.validate().map_err(CliError::invalid)?;
            }
            if let Some(g) = &f.options.grid {
                g.validate().map_err(CliError::invalid)?;
            }
        }
        Ok(())
    }

    pub fn transmon(&self, b: &BandsConfig) -> (f64, f64) {
        (b.ej.unwrap_or(self.device.ej1), b.ec.unwrap_or(self.device.ec))
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section.as_ref().ok_or_else(|| CliError::config(format!("config has no `{name}` section")))
    }
}

pub fn over_pi(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * PI).collect()
}
