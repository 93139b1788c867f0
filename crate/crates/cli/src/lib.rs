//! `kinemon-lab` commands. Each command reads a [`config::RunConfig`],
//! computes, and writes its tables into the output directory.

pub mod config;

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kinemon_core::charge::{band, band_energies, gauge_variation, Band};
use kinemon_core::cqed::resonator_trace;
use kinemon_core::export::{
    band_energies_csv, band_widths_csv, fit_result_json, fit_summary, flux_sweep_csv, heatmap_svg, read_dataset,
    resonator_trace_csv, two_tone_csv, MapObservable,
};
use kinemon_core::fitting::{fit_cavity, fit_qubit_spectrum, LineTag};
use kinemon_core::lindblad::two_tone_map;
use kinemon_core::spectrum::{find_equidistance_points, flux_sweep};
use kinemon_core::{KinemonError, PhaseGrid};
use serde::Serialize;

use config::{over_pi, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Config,
    Computation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    /// A model-level validation failure found while reading input.
    pub fn invalid(e: KinemonError) -> Self {
        Self::config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage | ErrorKind::Config => 1,
            ErrorKind::Computation => 2,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "kind": self.kind,
            "message": self.message,
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<KinemonError> for CliError {
    fn from(e: KinemonError) -> Self {
        Self {
            kind: ErrorKind::Computation,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kinemon-lab", version, about = "Spectra, band structure, cavity traces, two-tone maps and fits for kinemon circuits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override a config value, e.g. `--set device.ec=0.95` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print errors to stderr as a JSON object.
    #[arg(long)]
    pub error_json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transition frequencies over a flux sweep.
    Spectrum(Common),
    /// Anharmonicity over a flux sweep and its zeros.
    Anharmonicity(Common),
    /// Transmon band widths and the shunted gauge check.
    Bands(Common),
    /// Dressed resonator frequency over a flux sweep.
    Cavity(Common),
    /// Steady-state two-tone map.
    Twotone(Common),
    /// Fit circuit parameters to a spectral dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (overrides `fit.dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Spectrum(c)
            | Command::Anharmonicity(c)
            | Command::Bands(c)
            | Command::Cavity(c)
            | Command::Twotone(c) => c,
            Command::Fit { common, .. } => common,
        }
    }
}

/// Files written by a command, relative paths included.
pub type Written = Vec<PathBuf>;

pub fn run(command: &Command) -> Result<Written, CliError> {
    let common = command.common();
    let cfg = config::load(&common.config, &common.set)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let work = || match command {
        Command::Spectrum(_) => cmd_spectrum(&cfg, &out),
        Command::Anharmonicity(_) => cmd_anharmonicity(&cfg, &out),
        Command::Bands(_) => cmd_bands(&cfg, &out),
        Command::Cavity(_) => cmd_cavity(&cfg, &out),
        Command::Twotone(_) => cmd_twotone(&cfg, &out),
        Command::Fit { dataset, .. } => {
            let path = match (dataset, cfg.fit.as_ref().and_then(|f| f.dataset.clone())) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => common.config.parent().unwrap_or(Path::new(".")).join(p),
                (None, None) => return Err(CliError::usage("no dataset: pass --dataset or set fit.dataset")),
            };
            cmd_fit(&cfg, &path, &out)
        }
    };
    match common.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn write(out: &Path, name: &str, contents: &str, written: &mut Written) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

pub fn cmd_spectrum(cfg: &RunConfig, out: &Path) -> Result<Written, CliError> {
    let sweep = RunConfig::require(&cfg.sweep, "sweep")?;
    let tables = flux_sweep(&cfg.device, &over_pi(&sweep.phi_e_over_pi.values()), sweep.n_levels, &cfg.grid())?;
    let mut written = Vec::new();
    write(out, "spectrum.csv", &flux_sweep_csv(&tables), &mut written)?;
    Ok(written)
}

pub fn cmd_anharmonicity(cfg: &RunConfig, out: &Path) -> Result<Written, CliError> {
    let sweep = RunConfig::require(&cfg.sweep, "sweep")?;
    let settings = cfg.anharmonicity.clone().unwrap_or_default();
    let grid = cfg.grid();
    let tables = flux_sweep(&cfg.device, &over_pi(&sweep.phi_e_over_pi.values()), 3, &grid)?;
    let mut csv = String::from("phi_e_over_pi,alpha_GHz\n");
    for t in &tables {
        csv.push_str(&format!("{},{}\n", t.phi_e / PI, t.anharmonicity()));
    }
    let [lo, hi] = settings.root_interval_over_pi;
    let roots = find_equidistance_points(&cfg.device, (lo * PI, hi * PI), &grid, settings.scan_points)?;
    let mut root_csv = String::from("phi_e_over_pi\n");
    for r in roots.roots() {
        root_csv.push_str(&format!("{}\n", r / PI));
    }
    let mut written = Vec::new();
    write(out, "anharmonicity.csv", &csv, &mut written)?;
    write(out, "equidistance.csv", &root_csv, &mut written)?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandsReport {
    pub transmon_ej: f64,
    pub transmon_ec: f64,
    pub widths_increasing: bool,
    pub gauge_max_variation: f64,
    pub gauge_tolerance: f64,
    pub gauge_pass: bool,
}

pub fn cmd_bands(cfg: &RunConfig, out: &Path) -> Result<Written, CliError> {
    let b = cfg.bands.clone().unwrap_or_default();
    let (ej, ec) = cfg.transmon(&b);
    let energies = band_energies(ej, ec, &b.n_g.values(), b.levels, b.charge_cutoff)?;
    let bands: Vec<Band> = (0..b.levels)
        .map(|m| band(ej, ec, m, b.n_g_samples, b.charge_cutoff))
        .collect::<Result<_, _>>()?;
    let widths_increasing = bands.windows(2).all(|w| w[1].width() > w[0].width());

    let grid = PhaseGrid::compact(&cfg.device, b.gauge_nodes, b.gauge_levels);
    let mut gauge = String::from("phi_e_over_pi,level,max_variation_GHz\n");
    let mut worst = 0.0_f64;
    for phi in b.gauge_phi_e_over_pi.values() {
        let v = gauge_variation(&cfg.device, phi * PI, &b.gauge_n_g.values(), &grid, b.gauge_levels)?;
        for (m, x) in v.iter().enumerate() {
            gauge.push_str(&format!("{phi},{m},{x}\n"));
            worst = worst.max(*x);
        }
    }
    let report = BandsReport {
        transmon_ej: ej,
        transmon_ec: ec,
        widths_increasing,
        gauge_max_variation: worst,
        gauge_tolerance: b.gauge_tolerance,
        gauge_pass: worst < b.gauge_tolerance,
    };
    let mut written = Vec::new();
    write(out, "band_energies.csv", &band_energies_csv(&energies), &mut written)?;
    write(out, "band_widths.csv", &band_widths_csv(&bands), &mut written)?;
    write(out, "gauge_invariance.csv", &gauge, &mut written)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::config(e.to_string()))?;
    write(out, "bands_report.json", &(json + "\n"), &mut written)?;
    Ok(written)
}

pub fn cmd_cavity(cfg: &RunConfig, out: &Path) -> Result<Written, CliError> {
    let sweep = RunConfig::require(&cfg.sweep, "sweep")?;
    let cavity = RunConfig::require(&cfg.cavity, "cavity")?;
    let trace = resonator_trace(&cfg.device, cavity, &over_pi(&sweep.phi_e_over_pi.values()), &cfg.grid())?;
    let mut written = Vec::new();
    write(out, "resonator.csv", &resonator_trace_csv(&trace), &mut written)?;
    Ok(written)
}

pub fn cmd_twotone(cfg: &RunConfig, out: &Path) -> Result<Written, CliError> {
    let t = RunConfig::require(&cfg.twotone, "twotone")?;
    let cavity = RunConfig::require(&cfg.cavity, "cavity")?;
    let dissipation = RunConfig::require(&cfg.dissipation, "dissipation")?;
    let map = two_tone_map(
        &cfg.device,
        cavity,
        dissipation,
        t.amplitude,
        &over_pi(&t.phi_e_over_pi.values()),
        &t.omega_d.values(),
        &cfg.grid(),
    )?;
    let mut written = Vec::new();
    write(out, "twotone.csv", &two_tone_csv(&map), &mut written)?;
    if t.image {
        write(out, "twotone_depopulation.svg", &heatmap_svg(&map, MapObservable::GroundDepopulation), &mut written)?;
        write(out, "twotone_cavity.svg", &heatmap_svg(&map, MapObservable::CavityAmplitude), &mut written)?;
    }
    let failures = map.failures();
    if failures > 0 {
        eprintln!("warning: {failures} of {} cells failed; written as NaN", map.cells.len());
    }
    Ok(written)
}

pub fn cmd_fit(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<Written, CliError> {
    let fit = RunConfig::require(&cfg.fit, "fit")?;
    let file = fs::File::open(dataset).map_err(|e| CliError::config(format!("cannot open {}: {e}", dataset.display())))?;
    let data = read_dataset(file).map_err(|e| CliError::config(format!("{}: {e}", dataset.display())))?;
    let initial = fit.initial.unwrap_or(cfg.device);
    let mut result = fit_qubit_spectrum(&data, &initial, &fit.calibration, &fit.options)?;
    if let Some(start) = &fit.cavity {
        if data.count(LineTag::Resonator) > 0 {
            let grid = PhaseGrid::compact(&result.params, kinemon_core::grid::FIT_NODES, start.n_kinemon_levels);
            result.cavity = Some(fit_cavity(&data, &result.params, &result.calibration, start, &grid, &fit.options)?);
        }
    }
    let mut written = Vec::new();
    write(out, "fit_result.json", &fit_result_json(&result)?, &mut written)?;
    write(out, "fit_summary.txt", &fit_summary(&result)?, &mut written)?;
    Ok(written)
}
