//! Parameter extraction from digitised spectral lines.
//!
//! Points are mapped to flux with a linear [`FluxCalibration`], matched to
//! the nearest model transition by [`assign_lines`], and fitted by a
//! multi-start Nelder–Mead search in coordinates normalised by the initial
//! guess. Assignment and fitting alternate until the line tags stop changing.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqed::{kinemon_basis, resonator_line_from_basis, CavityConfig, KinemonBasis};
use crate::error::{KinemonError, Result};
use crate::grid::{PhaseGrid, FIT_NODES};
use crate::params::CircuitParams;
use crate::spectrum::{levels, TransitionTable};

pub const DEFAULT_GATE: f64 = 0.3;
pub const ENERGY_BOUNDS: (f64, f64) = (0.05, 50.0);
pub const KAPPA_BOUNDS: (f64, f64) = (0.05, 0.95);
pub const MIN_QUBIT_POINTS: usize = 6;
/// Relative distance to a bound below which a fitted value counts as
/// sitting on it.
const BOUND_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineTag {
    #[serde(rename = "01")]
    F01,
    #[serde(rename = "02/2")]
    F02Half,
    #[serde(rename = "12")]
    F12,
    #[serde(rename = "resonator")]
    Resonator,
    #[serde(rename = "outlier")]
    Outlier,
}

impl LineTag {
    pub const QUBIT: [LineTag; 3] = [LineTag::F01, LineTag::F02Half, LineTag::F12];

    pub fn as_str(&self) -> &'static str {
        match self {
            LineTag::F01 => "01",
            LineTag::F02Half => "02/2",
            LineTag::F12 => "12",
            LineTag::Resonator => "resonator",
            LineTag::Outlier => "outlier",
        }
    }

    pub fn is_qubit(&self) -> bool {
        Self::QUBIT.contains(self)
    }

    /// Model frequency of a qubit line.
    pub fn model(&self, table: &TransitionTable) -> Option<f64> {
        match self {
            LineTag::F01 => Some(table.f01),
            LineTag::F02Half => Some(table.f02_half),
            LineTag::F12 => Some(table.f12),
            _ => None,
        }
    }
}

impl fmt::Display for LineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LineTag {
    type Err = KinemonError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "01" => Ok(LineTag::F01),
            "02/2" => Ok(LineTag::F02Half),
            "12" => Ok(LineTag::F12),
            "resonator" => Ok(LineTag::Resonator),
            "outlier" => Ok(LineTag::Outlier),
            other => Err(KinemonError::InvalidDataset(format!("unknown line tag '{other}'"))),
        }
    }
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    /// Raw bias value, e.g. coil current in mA.
    pub bias: f64,
    /// Line frequency, GHz.
    pub frequency: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    /// Tag supplied with the data; kept through assignment.
    #[serde(default)]
    pub tag: Option<LineTag>,
    /// Tag chosen by [`assign_lines`].
    #[serde(default)]
    pub assigned: Option<LineTag>,
    /// Distance to the assigned model line, GHz.
    #[serde(default)]
    pub distance: Option<f64>,
}

impl SpectralPoint {
    pub fn new(bias: f64, frequency: f64) -> Self {
        Self {
            bias,
            frequency,
            weight: 1.0,
            tag: None,
            assigned: None,
            distance: None,
        }
    }

    pub fn tagged(bias: f64, frequency: f64, tag: LineTag) -> Self {
        Self {
            tag: Some(tag),
            ..Self::new(bias, frequency)
        }
    }

    /// Supplied tag if any, otherwise the assigned one.
    pub fn line(&self) -> Option<LineTag> {
        self.tag.or(self.assigned)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralDataset {
    pub points: Vec<SpectralPoint>,
}

impl SpectralDataset {
    pub fn new(points: Vec<SpectralPoint>) -> Self {
        Self { points }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(KinemonError::InvalidDataset("no points".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.bias.is_finite() {
                return Err(KinemonError::InvalidDataset(format!("point {i}: bias is not finite")));
            }
            if !(p.frequency.is_finite() && p.frequency > 0.0) {
                return Err(KinemonError::InvalidDataset(format!(
                    "point {i}: frequency {} must be finite and positive",
                    p.frequency
                )));
            }
            if !(p.weight.is_finite() && p.weight >= 0.0) {
                return Err(KinemonError::InvalidDataset(format!("point {i}: weight must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn count(&self, tag: LineTag) -> usize {
        self.points.iter().filter(|p| p.line() == Some(tag)).count()
    }

    /// Copy with every supplied tag removed.
    pub fn untagged(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| SpectralPoint {
                tag: None,
                assigned: None,
                distance: None,
                ..p.clone()
            })
            .collect();
        Self { points }
    }

    fn lines(&self) -> Vec<Option<LineTag>> {
        self.points.iter().map(SpectralPoint::line).collect()
    }
}

/// Linear bias-to-flux map, φ_e = 2π (bias - offset) / period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxCalibration {
    /// Bias change per flux quantum.
    pub period: f64,
    /// Bias at φ_e = 0.
    pub offset: f64,
}

impl FluxCalibration {
    pub fn identity() -> Self {
        Self {
            period: 2.0 * PI,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period != 0.0) {
            return Err(KinemonError::param("period", "must be finite and non-zero"));
        }
        if !self.offset.is_finite() {
            return Err(KinemonError::param("offset", "must be finite"));
        }
        Ok(())
    }

    pub fn phi_e(&self, bias: f64) -> f64 {
        2.0 * PI * (bias - self.offset) / self.period
    }

    pub fn bias(&self, phi_e: f64) -> f64 {
        self.offset + phi_e * self.period / (2.0 * PI)
    }
}

fn table_at(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid) -> Result<TransitionTable> {
    TransitionTable::from_energies(phi_e, &levels(params, phi_e, grid, 3)?)
}

/// Tags every point without a supplied tag with the nearest model line
/// among f01, f02/2, f12 and (when `omega_r` is given) the resonator.
/// Points farther than `gate` GHz from all lines become outliers. Supplied
/// tags are kept; their distance to the tagged line is recorded.
pub fn assign_lines(
    dataset: &SpectralDataset,
    params: &CircuitParams,
    calibration: &FluxCalibration,
    grid: &PhaseGrid,
    gate: f64,
    omega_r: Option<f64>,
) -> Result<SpectralDataset> {
    dataset.validate()?;
    calibration.validate()?;
    let points = dataset
        .points
        .par_iter()
        .map(|p| {
            let table = table_at(params, calibration.phi_e(p.bias), grid)?;
            let line_of = |tag: LineTag| match tag {
                LineTag::Resonator => omega_r,
                other => other.model(&table),
            };
            let mut out = p.clone();
            if let Some(tag) = p.tag {
                out.assigned = Some(tag);
                out.distance = line_of(tag).map(|f| (p.frequency - f).abs());
                return Ok(out);
            }
            let mut best = (LineTag::Outlier, f64::INFINITY);
            for tag in LineTag::QUBIT.into_iter().chain(omega_r.map(|_| LineTag::Resonator)) {
                let d = (p.frequency - line_of(tag).expect("candidate line")).abs();
                if d < best.1 {
                    best = (tag, d);
                }
            }
            out.assigned = Some(if best.1 > gate { LineTag::Outlier } else { best.0 });
            out.distance = Some(best.1);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralDataset { points })
}

/// Synthetic dataset: the requested model lines at each bias, unit weight,
/// tagged with the line that generated them.
pub fn synthesize_lines(
    params: &CircuitParams,
    calibration: &FluxCalibration,
    biases: &[f64],
    lines: &[LineTag],
    grid: &PhaseGrid,
) -> Result<SpectralDataset> {
    let mut points = Vec::with_capacity(biases.len() * lines.len());
    for &b in biases {
        let table = table_at(params, calibration.phi_e(b), grid)?;
        for tag in lines {
            let f = tag
                .model(&table)
                .ok_or_else(|| KinemonError::param("lines", "only qubit lines can be synthesised"))?;
            points.push(SpectralPoint::tagged(b, f, *tag));
        }
    }
    Ok(SpectralDataset { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub max_evaluations: usize,
    /// Initial simplex edge in normalised coordinates.
    pub initial_step: f64,
    /// Simplex diameter (max-norm) at convergence.
    pub xtol: f64,
    /// Objective spread at convergence: `ftol_abs + ftol_rel * |f_best|`.
    pub ftol_abs: f64,
    pub ftol_rel: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 2000,
            initial_step: 0.05,
            xtol: 1e-8,
            ftol_abs: 1e-12,
            ftol_rel: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Simplex diameter at termination.
    pub final_step_norm: f64,
    /// Best objective after every iteration.
    pub history: Vec<f64>,
}

fn simplex_run(f: &(dyn Fn(&[f64]) -> f64 + Sync), x0: &[f64], step: f64, budget: usize, opts: &SimplexOptions) -> SimplexOutcome {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut evaluations = n + 1;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut diameter;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        history.push(vals[0]);
        diameter = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = vals[n] - vals[0];
        if diameter <= opts.xtol && spread <= opts.ftol_abs + opts.ftol_rel * vals[0].abs() {
            converged = true;
            break;
        }
        if evaluations >= budget {
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evaluations += 1;
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evaluations += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < vals[n] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc, fc < vals[n])
        };
        evaluations += 1;
        if accept {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = (0..n).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
            vals[i] = eval(&shrunk);
            pts[i] = shrunk;
        }
        evaluations += n;
    }
    SimplexOutcome {
        x: pts[0].clone(),
        value: vals[0],
        evaluations,
        iterations,
        converged,
        final_step_norm: diameter,
        history,
    }
}

/// Nelder–Mead minimisation with one restart from the best vertex. The
/// best value recorded per iteration never increases.
pub fn nelder_mead(f: &(dyn Fn(&[f64]) -> f64 + Sync), x0: &[f64], opts: &SimplexOptions) -> SimplexOutcome {
    let first = simplex_run(f, x0, opts.initial_step, opts.max_evaluations, opts);
    let left = opts.max_evaluations.saturating_sub(first.evaluations);
    if !first.converged || left <= x0.len() + 1 {
        return first;
    }
    let second = simplex_run(f, &first.x, 0.1 * opts.initial_step, left, opts);
    let mut history = first.history;
    history.extend(second.history.iter().map(|&v| v.min(first.value)));
    let better = second.value < first.value;
    SimplexOutcome {
        x: if better { second.x } else { first.x },
        value: if better { second.value } else { first.value },
        evaluations: first.evaluations + second.evaluations,
        iterations: first.iterations + second.iterations,
        converged: second.converged,
        final_step_norm: second.final_step_norm,
        history,
    }
}

/// Runs `nelder_mead` from every start concurrently and returns the best
/// outcome (lowest objective, ties by start index) with its index.
pub fn multistart(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    starts: &[Vec<f64>],
    opts: &SimplexOptions,
) -> (usize, SimplexOutcome, usize) {
    let outcomes: Vec<SimplexOutcome> = starts.par_iter().map(|x0| nelder_mead(f, x0, opts)).collect();
    let total = outcomes.iter().map(|o| o.evaluations).sum();
    let best = (0..outcomes.len())
        .min_by(|&a, &b| outcomes[a].value.total_cmp(&outcomes[b].value).then(a.cmp(&b)))
        .expect("at least one start");
    (best, outcomes[best].clone(), total)
}

/// Free parameters of a qubit fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// ej1, ec, el; ej2 = 0 and κ = 1 pinned.
    SingleLoop,
    /// One E_J shared by both junctions, ec, el, κ.
    SymmetricDoubleLoop,
    /// ej1, ej2, ec, el, κ.
    DoubleLoop,
}

impl FitModel {
    pub fn for_params(params: &CircuitParams, release_symmetric: bool) -> Self {
        if params.is_single_loop() {
            FitModel::SingleLoop
        } else if release_symmetric {
            FitModel::DoubleLoop
        } else {
            FitModel::SymmetricDoubleLoop
        }
    }

    fn names(&self) -> &'static [&'static str] {
        match self {
            FitModel::SingleLoop => &["ej1", "ec", "el", "period", "offset"],
            FitModel::SymmetricDoubleLoop => &["ej", "ec", "el", "kappa", "period", "offset"],
            FitModel::DoubleLoop => &["ej1", "ej2", "ec", "el", "kappa", "period", "offset"],
        }
    }

    fn pack(&self, p: &CircuitParams, c: &FluxCalibration) -> Vec<f64> {
        match self {
            FitModel::SingleLoop => vec![p.ej1, p.ec, p.el, c.period, c.offset],
            FitModel::SymmetricDoubleLoop => vec![0.5 * (p.ej1 + p.ej2), p.ec, p.el, p.kappa, c.period, c.offset],
            FitModel::DoubleLoop => vec![p.ej1, p.ej2, p.ec, p.el, p.kappa, c.period, c.offset],
        }
    }

    fn unpack(&self, v: &[f64]) -> (CircuitParams, FluxCalibration) {
        let n = v.len();
        let calibration = FluxCalibration {
            period: v[n - 2],
            offset: v[n - 1],
        };
        let params = match self {
            FitModel::SingleLoop => CircuitParams::single_loop(v[0], v[1], v[2]),
            FitModel::SymmetricDoubleLoop => CircuitParams::double_loop(v[0], v[1], v[2], v[3]),
            FitModel::DoubleLoop => CircuitParams {
                ej1: v[0],
                ej2: v[1],
                ec: v[2],
                el: v[3],
                kappa: v[4],
            },
        };
        (params, calibration)
    }

    /// (lower, upper) for each bounded coordinate; calibration is unbounded.
    fn bounds(&self) -> Vec<Option<(f64, f64)>> {
        self.names()
            .iter()
            .map(|&name| match name {
                "kappa" => Some(KAPPA_BOUNDS),
                "period" | "offset" => None,
                _ => Some(ENERGY_BOUNDS),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub n_starts: usize,
    /// Relative spread of the circuit parameters across starts; the
    /// calibration is perturbed by a tenth of it.
    pub perturbation: f64,
    pub seed: u64,
    /// Assignment gate, GHz.
    pub gate: f64,
    pub max_rounds: usize,
    pub release_symmetric: bool,
    /// Phase grid used throughout the fit; the compact 51-node grid of the
    /// initial guess when absent.
    pub grid: Option<PhaseGrid>,
    pub simplex: SimplexOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            perturbation: 0.2,
            seed: 0,
            gate: DEFAULT_GATE,
            max_rounds: 10,
            release_symmetric: false,
            grid: None,
            simplex: SimplexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub bias: f64,
    pub phi_e: f64,
    pub frequency: f64,
    pub line: LineTag,
    pub model: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub model: FitModel,
    pub evaluations: usize,
    pub iterations: usize,
    pub rounds: usize,
    pub assignment_fixed_point: bool,
    pub best_start: usize,
    pub objective: f64,
    pub final_step_norm: f64,
    pub outliers: usize,
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityFit {
    pub omega_r: f64,
    pub g: f64,
    pub rms_residual: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: CircuitParams,
    pub calibration: FluxCalibration,
    pub cavity: Option<CavityFit>,
    pub grid: PhaseGrid,
    pub rms_residual: f64,
    pub residuals: Vec<PointResidual>,
    pub diagnostics: FitDiagnostics,
}

/// Qubit-line points in a form cheap to evaluate: unique flux biases and,
/// per point, its bias index, line and weight.
struct QubitData {
    biases: Vec<f64>,
    points: Vec<(usize, LineTag, f64, f64)>,
}

impl QubitData {
    fn new(dataset: &SpectralDataset) -> Self {
        let mut index: BTreeMap<u64, usize> = BTreeMap::new();
        let mut biases = Vec::new();
        let mut points = Vec::new();
        for p in &dataset.points {
            let Some(tag) = p.line().filter(LineTag::is_qubit) else {
                continue;
            };
            let key = p.bias.to_bits();
            let i = *index.entry(key).or_insert_with(|| {
                biases.push(p.bias);
                biases.len() - 1
            });
            points.push((i, tag, p.frequency, p.weight));
        }
        Self { biases, points }
    }

    fn objective(&self, params: &CircuitParams, cal: &FluxCalibration, grid: &PhaseGrid) -> f64 {
        let mut tables = Vec::with_capacity(self.biases.len());
        for &b in &self.biases {
            match table_at(params, cal.phi_e(b), grid) {
                Ok(t) => tables.push(t),
                Err(_) => return f64::INFINITY,
            }
        }
        self.points
            .iter()
            .map(|&(i, tag, f, w)| {
                let r = f - tag.model(&tables[i]).expect("qubit line");
                w * r * r
            })
            .sum()
    }
}

fn in_bounds(v: &[f64], bounds: &[Option<(f64, f64)>]) -> bool {
    v.iter().zip(bounds).all(|(&x, b)| match b {
        Some((lo, hi)) => x >= *lo && x <= *hi,
        None => x.is_finite(),
    })
}

fn start_points(
    base: &[f64],
    scale: &[f64],
    bounds: &[Option<(f64, f64)>],
    opts: &FitOptions,
) -> Vec<Vec<f64>> {
    let n = base.len();
    let period = base[n - 2];
    (0..opts.n_starts.max(1))
        .map(|s| {
            if s == 0 {
                return vec![0.0; n];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(s as u64));
            let mut p = base.to_vec();
            let d = opts.perturbation;
            for i in 0..n - 2 {
                p[i] *= 1.0 + rng.random_range(-d..=d);
                if let Some((lo, hi)) = bounds[i] {
                    let pad = 0.01 * (hi - lo).min(1.0);
                    p[i] = p[i].clamp(lo + pad, hi - pad);
                }
            }
            p[n - 2] *= 1.0 + rng.random_range(-0.1 * d..=0.1 * d);
            p[n - 1] += period * rng.random_range(-0.1 * d..=0.1 * d);
            (0..n).map(|i| (p[i] - base[i]) / scale[i]).collect()
        })
        .collect()
}

struct RoundOutcome {
    params: CircuitParams,
    calibration: FluxCalibration,
    outcome: SimplexOutcome,
    best_start: usize,
    evaluations: usize,
}

fn fit_round(
    data: &QubitData,
    params: &CircuitParams,
    calibration: &FluxCalibration,
    model: FitModel,
    grid: &PhaseGrid,
    opts: &FitOptions,
) -> Result<RoundOutcome> {
    let base = model.pack(params, calibration);
    let n = base.len();
    let period = base[n - 2];
    let scale: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { period.abs() } else { base[i].abs().max(1e-3) })
        .collect();
    let bounds = model.bounds();
    let decode = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| base[i] + x[i] * scale[i]).collect() };
    let objective = |x: &[f64]| -> f64 {
        let v = decode(x);
        if !in_bounds(&v, &bounds) || v[n - 2].abs() < 1e-9 * period.abs() {
            return f64::INFINITY;
        }
        let (p, c) = model.unpack(&v);
        data.objective(&p, &c, grid)
    };
    let starts = start_points(&base, &scale, &bounds, opts);
    let (best_start, outcome, evaluations) = multistart(&objective, &starts, &opts.simplex);
    if !outcome.converged || !outcome.value.is_finite() {
        return Err(KinemonError::FitNonConvergence {
            evaluations,
            best: outcome.value,
        });
    }
    let v = decode(&outcome.x);
    for ((&x, b), &name) in v.iter().zip(&bounds).zip(model.names()) {
        if let Some((lo, hi)) = b {
            if (x - lo).abs() <= BOUND_MARGIN * lo.abs().max(1.0) || (hi - x).abs() <= BOUND_MARGIN * hi.abs().max(1.0) {
                return Err(KinemonError::FitDegenerate { parameter: name, value: x });
            }
        }
    }
    let (params, calibration) = model.unpack(&v);
    Ok(RoundOutcome {
        params,
        calibration,
        outcome,
        best_start,
        evaluations,
    })
}

/// Least-squares fit of circuit parameters and flux calibration to the qubit
/// lines of `dataset`, alternating with [`assign_lines`] until the tags reach
/// a fixed point or `max_rounds` is hit.
pub fn fit_qubit_spectrum(
    dataset: &SpectralDataset,
    initial: &CircuitParams,
    calibration: &FluxCalibration,
    options: &FitOptions,
) -> Result<FitResult> {
    dataset.validate()?;
    initial.validate()?;
    calibration.validate()?;
    let model = FitModel::for_params(initial, options.release_symmetric);
    let grid = options.grid.unwrap_or_else(|| PhaseGrid::compact(initial, FIT_NODES, 3));
    grid.validate()?;

    let mut params = *initial;
    let mut cal = *calibration;
    let mut tagged = assign_lines(dataset, &params, &cal, &grid, options.gate, None)?;
    let mut evaluations = 0;
    let mut last = None;
    let mut fixed_point = false;
    let mut rounds = 0;
    while rounds < options.max_rounds.max(1) {
        rounds += 1;
        let data = QubitData::new(&tagged);
        if data.points.len() < MIN_QUBIT_POINTS {
            return Err(KinemonError::InvalidDataset(format!(
                "{} qubit-line points after assignment, need at least {MIN_QUBIT_POINTS}",
                data.points.len()
            )));
        }
        let round = fit_round(&data, &params, &cal, model, &grid, options)?;
        evaluations += round.evaluations;
        params = round.params;
        cal = round.calibration;
        let retagged = assign_lines(dataset, &params, &cal, &grid, options.gate, None)?;
        let stable = retagged.lines() == tagged.lines();
        tagged = retagged;
        last = Some(round);
        if stable {
            fixed_point = true;
            break;
        }
    }
    let round = last.expect("at least one round");

    let mut residuals = Vec::with_capacity(tagged.points.len());
    let (mut sum, mut wsum) = (0.0, 0.0);
    for p in &tagged.points {
        let line = p.line().unwrap_or(LineTag::Outlier);
        let phi_e = cal.phi_e(p.bias);
        let model_f = if line.is_qubit() {
            line.model(&table_at(&params, phi_e, &grid)?)
        } else {
            None
        };
        let residual = model_f.map(|m| p.frequency - m);
        if let Some(r) = residual {
            sum += p.weight * r * r;
            wsum += p.weight;
        }
        residuals.push(PointResidual {
            bias: p.bias,
            phi_e,
            frequency: p.frequency,
            line,
            model: model_f,
            residual,
        });
    }
    let rms_residual = if wsum > 0.0 { (sum / wsum).sqrt() } else { 0.0 };
    Ok(FitResult {
        params,
        calibration: cal,
        cavity: None,
        grid,
        rms_residual,
        residuals,
        diagnostics: FitDiagnostics {
            model,
            evaluations,
            iterations: round.outcome.iterations,
            rounds,
            assignment_fixed_point: fixed_point,
            best_start: round.best_start,
            objective: round.outcome.value,
            final_step_norm: round.outcome.final_step_norm,
            outliers: tagged.count(LineTag::Outlier),
            history: round.outcome.history,
        },
    })
}

/// Fits (ω_r, g) to the points tagged `resonator` with the circuit and
/// calibration held fixed. `cavity` supplies the initial values and the
/// truncation.
pub fn fit_cavity(
    dataset: &SpectralDataset,
    params: &CircuitParams,
    calibration: &FluxCalibration,
    cavity: &CavityConfig,
    grid: &PhaseGrid,
    options: &FitOptions,
) -> Result<CavityFit> {
    dataset.validate()?;
    cavity.validate()?;
    calibration.validate()?;
    let points: Vec<&SpectralPoint> = dataset
        .points
        .iter()
        .filter(|p| p.line() == Some(LineTag::Resonator))
        .collect();
    if points.len() < 2 {
        return Err(KinemonError::InvalidDataset("fewer than 2 resonator points".into()));
    }
    let bases: Vec<KinemonBasis> = points
        .par_iter()
        .map(|p| kinemon_basis(params, calibration.phi_e(p.bias), grid, cavity.n_kinemon_levels))
        .collect::<Result<_>>()?;
    let (w0, g0) = (cavity.omega_r, cavity.g);
    let g_scale = g0.max(0.01);
    let decode = |x: &[f64]| (w0 * (1.0 + x[0]), (g0 + x[1] * g_scale).abs());
    let objective = |x: &[f64]| -> f64 {
        let (omega_r, g) = decode(x);
        let trial = CavityConfig { omega_r, g, ..*cavity };
        let mut sum = 0.0;
        for (p, basis) in points.iter().zip(&bases) {
            match resonator_line_from_basis(basis, &trial) {
                Ok(f) => sum += p.weight * (p.frequency - f).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        sum
    };
    let d = options.perturbation;
    let starts: Vec<Vec<f64>> = (0..options.n_starts.max(1))
        .map(|s| {
            if s == 0 {
                return vec![0.0, 0.0];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(s as u64));
            vec![rng.random_range(-0.01 * d..=0.01 * d), g0 / g_scale * rng.random_range(-d..=d)]
        })
        .collect();
    let simplex = SimplexOptions {
        initial_step: 0.01,
        ..options.simplex
    };
    let (_, outcome, evaluations) = multistart(&objective, &starts, &simplex);
    if !outcome.converged || !outcome.value.is_finite() {
        return Err(KinemonError::FitNonConvergence {
            evaluations,
            best: outcome.value,
        });
    }
    let (omega_r, g) = decode(&outcome.x);
    let wsum: f64 = points.iter().map(|p| p.weight).sum();
    Ok(CavityFit {
        omega_r,
        g,
        rms_residual: (outcome.value / wsum.max(f64::MIN_POSITIVE)).sqrt(),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqed::dressed_resonator_frequency;
    use crate::devices::kinemon;
    use rand_distr::{Distribution, Normal};

    fn truth_a() -> (CircuitParams, FluxCalibration) {
        (
            kinemon("I").unwrap().params,
            FluxCalibration {
                period: 1.2,
                offset: 0.05,
            },
        )
    }

    fn biases(cal: &FluxCalibration, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| cal.bias(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a / b - 1.0).abs()
    }

    fn group_a_data(noise: f64) -> (SpectralDataset, PhaseGrid) {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let mut data = synthesize_lines(&p, &cal, &biases(&cal, -0.9 * PI, 0.9 * PI, 40), &[LineTag::F01, LineTag::F02Half], &grid).unwrap();
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let normal = Normal::new(0.0, noise).unwrap();
            for pt in &mut data.points {
                pt.frequency += normal.sample(&mut rng);
            }
        }
        (data, grid)
    }

    fn rough_guess() -> (CircuitParams, FluxCalibration) {
        let (p, cal) = truth_a();
        (
            CircuitParams::single_loop(p.ej1 * 1.08, p.ec * 0.93, p.el * 1.05),
            FluxCalibration {
                period: cal.period * 1.01,
                offset: cal.offset + 0.01,
            },
        )
    }

    #[test]
    fn tag_round_trip_through_strings() {
        for t in [LineTag::F01, LineTag::F02Half, LineTag::F12, LineTag::Resonator, LineTag::Outlier] {
            assert_eq!(t.as_str().parse::<LineTag>().unwrap(), t);
        }
        assert!("03".parse::<LineTag>().is_err());
    }

    #[test]
    fn calibration_maps_both_ways() {
        let cal = FluxCalibration {
            period: 2.5,
            offset: -0.3,
        };
        assert!((cal.phi_e(cal.bias(1.234)) - 1.234).abs() < 1e-14);
        assert!((cal.phi_e(2.2) - PI * 2.0).abs() < 1e-14);
        assert!(FluxCalibration { period: 0.0, offset: 0.0 }.validate().is_err());
    }

    #[test]
    fn simplex_minimises_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            max_evaluations: 5000,
            initial_step: 0.5,
            ftol_abs: 1e-20,
            ..SimplexOptions::default()
        };
        let out = nelder_mead(&f, &[-1.2, 1.0], &opts);
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn simplex_reports_exhausted_budget() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            max_evaluations: 30,
            ..SimplexOptions::default()
        };
        let out = nelder_mead(&f, &[-1.2, 1.0], &opts);
        assert!(!out.converged);
        assert!(out.evaluations <= 30 + 3);
    }

    #[test]
    fn f01_only_data_is_all_tagged_01() {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let data = synthesize_lines(&p, &cal, &biases(&cal, -PI, PI, 15), &[LineTag::F01], &grid).unwrap();
        let tagged = assign_lines(&data, &p, &cal, &grid, DEFAULT_GATE, None).unwrap();
        assert_eq!(tagged.count(LineTag::F01), 15);
        assert_eq!(tagged.count(LineTag::Outlier), 0);
    }

    #[test]
    fn mixed_lines_recover_ground_truth() {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let bs = biases(&cal, -PI, PI, 25);
        let data = synthesize_lines(&p, &cal, &bs, &[LineTag::F01, LineTag::F02Half], &grid).unwrap();
        let tagged = assign_lines(&data.untagged(), &p, &cal, &grid, DEFAULT_GATE, None).unwrap();
        let mut checked = 0;
        for (pt, truth) in tagged.points.iter().zip(&data.points) {
            let t = table_at(&p, cal.phi_e(pt.bias), &grid).unwrap();
            if (t.f01 - t.f02_half).abs() > 1e-3 {
                assert_eq!(pt.assigned, truth.tag);
                checked += 1;
            }
        }
        assert!(checked >= 40, "{checked}");
    }

    #[test]
    fn far_point_is_outlier_and_supplied_tags_survive() {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let t = table_at(&p, 0.0, &grid).unwrap();
        let lines = [t.f01, t.f02_half, t.f12];
        let far = lines.iter().cloned().fold(f64::MIN, f64::max) + 1.0;
        let data = SpectralDataset::new(vec![
            SpectralPoint::new(cal.offset, far),
            SpectralPoint::tagged(cal.offset, 7.18, LineTag::Resonator),
        ]);
        let tagged = assign_lines(&data, &p, &cal, &grid, DEFAULT_GATE, None).unwrap();
        assert_eq!(tagged.points[0].assigned, Some(LineTag::Outlier));
        assert!(tagged.points[0].distance.unwrap() >= 1.0 - 1e-12);
        assert_eq!(tagged.points[1].line(), Some(LineTag::Resonator));
    }

    #[test]
    fn noiseless_round_trip() {
        let (data, grid) = group_a_data(0.0);
        let (guess, cal0) = rough_guess();
        let opts = FitOptions {
            grid: Some(grid),
            ..FitOptions::default()
        };
        let fit = fit_qubit_spectrum(&data, &guess, &cal0, &opts).unwrap();
        let (p, cal) = truth_a();
        assert!(rel(fit.params.ej1, p.ej1) < 1e-3);
        assert!(rel(fit.params.ec, p.ec) < 1e-3);
        assert!(rel(fit.params.el, p.el) < 1e-3);
        assert!(rel(fit.calibration.period, cal.period) < 1e-3);
        assert!(fit.rms_residual < 1e-5, "rms {}", fit.rms_residual);
        assert!(fit.diagnostics.assignment_fixed_point);
        assert!(fit.diagnostics.history.windows(2).all(|w| w[1] <= w[0]));
        let again = assign_lines(&data, &fit.params, &fit.calibration, &grid, DEFAULT_GATE, None).unwrap();
        let lines: Vec<LineTag> = again.points.iter().map(|p| p.line().unwrap()).collect();
        let fitted: Vec<LineTag> = fit.residuals.iter().map(|r| r.line).collect();
        assert_eq!(lines, fitted);
    }

    #[test]
    fn noisy_round_trip() {
        let (data, grid) = group_a_data(1e-3);
        let (guess, cal0) = rough_guess();
        let opts = FitOptions {
            grid: Some(grid),
            ..FitOptions::default()
        };
        let fit = fit_qubit_spectrum(&data, &guess, &cal0, &opts).unwrap();
        let (p, _) = truth_a();
        assert!(rel(fit.params.ej1, p.ej1) < 1e-2);
        assert!(rel(fit.params.ec, p.ec) < 1e-2);
        assert!(rel(fit.params.el, p.el) < 1e-2);
        assert!(fit.rms_residual < 2e-3);
    }

    #[test]
    fn bias_units_do_not_matter() {
        let (data, grid) = group_a_data(0.0);
        let (guess, cal0) = rough_guess();
        let opts = FitOptions {
            grid: Some(grid),
            n_starts: 2,
            ..FitOptions::default()
        };
        let milli = fit_qubit_spectrum(&data, &guess, &cal0, &opts).unwrap();
        let mut amps = data.clone();
        for p in &mut amps.points {
            p.bias *= 1e-3;
        }
        let cal_a = FluxCalibration {
            period: cal0.period * 1e-3,
            offset: cal0.offset * 1e-3,
        };
        let base = fit_qubit_spectrum(&amps, &guess, &cal_a, &opts).unwrap();
        assert!(rel(base.params.ej1, milli.params.ej1) < 1e-4);
        assert!(rel(base.params.ec, milli.params.ec) < 1e-4);
        assert!(rel(base.params.el, milli.params.el) < 1e-4);
        for (a, b) in base.residuals.iter().zip(&milli.residuals) {
            assert!((a.phi_e - b.phi_e).abs() < 1e-4);
        }
    }

    #[test]
    fn untagged_assignment_reaches_fixed_point() {
        let (data, grid) = group_a_data(0.0);
        let (p, cal) = truth_a();
        let guess = CircuitParams::single_loop(p.ej1 * 1.002, p.ec * 0.998, p.el * 1.001);
        let opts = FitOptions {
            grid: Some(grid),
            n_starts: 2,
            ..FitOptions::default()
        };
        let fit = fit_qubit_spectrum(&data.untagged(), &guess, &cal, &opts).unwrap();
        assert!(fit.diagnostics.assignment_fixed_point);
        let again = assign_lines(&data.untagged(), &fit.params, &fit.calibration, &grid, DEFAULT_GATE, None).unwrap();
        let lines: Vec<LineTag> = again.points.iter().map(|p| p.line().unwrap()).collect();
        let fitted: Vec<LineTag> = fit.residuals.iter().map(|r| r.line).collect();
        assert_eq!(lines, fitted);
        assert!(rel(fit.params.ej1, p.ej1) < 1e-3, "{:?}", fit.params);
    }

    #[test]
    fn double_loop_asymmetry_recovered() {
        let p = kinemon("VII").unwrap().params;
        let cal = FluxCalibration {
            period: 0.8,
            offset: -0.1,
        };
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let data = synthesize_lines(&p, &cal, &biases(&cal, 0.0, 6.0 * PI, 40), &[LineTag::F01, LineTag::F02Half], &grid).unwrap();
        let guess = CircuitParams::double_loop(p.ej1 * 1.05, p.ec * 0.95, p.el * 1.04, 0.3);
        let cal0 = FluxCalibration {
            period: 0.808,
            offset: -0.09,
        };
        let opts = FitOptions {
            grid: Some(grid),
            ..FitOptions::default()
        };
        let fit = fit_qubit_spectrum(&data, &guess, &cal0, &opts).unwrap();
        assert_eq!(fit.diagnostics.model, FitModel::SymmetricDoubleLoop);
        assert!((fit.params.kappa - p.kappa).abs() < 0.01, "{}", fit.params.kappa);
    }

    #[test]
    fn too_few_points_rejected() {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 3);
        let data = synthesize_lines(&p, &cal, &biases(&cal, 0.0, 1.0, 5), &[LineTag::F01], &grid).unwrap();
        assert!(matches!(
            fit_qubit_spectrum(&data, &p, &cal, &FitOptions::default()),
            Err(KinemonError::InvalidDataset(_))
        ));
    }

    #[test]
    fn cavity_round_trip_and_flat_trace() {
        let (p, cal) = truth_a();
        let grid = PhaseGrid::compact(&p, FIT_NODES, 6);
        let truth = CavityConfig::new(7.1851, 0.064, 5);
        let bs = biases(&cal, 0.0, 2.0 * PI, 24);
        let trace = |cav: &CavityConfig| {
            SpectralDataset::new(
                bs.iter()
                    .map(|&b| SpectralPoint::tagged(b, dressed_resonator_frequency(&p, cav, cal.phi_e(b), &grid).unwrap(), LineTag::Resonator))
                    .collect(),
            )
        };
        let start = CavityConfig::new(7.18, 0.05, 5);
        let fit = fit_cavity(&trace(&truth), &p, &cal, &start, &grid, &FitOptions::default()).unwrap();
        assert!((fit.omega_r - 7.1851).abs() < 1e-4, "{}", fit.omega_r);
        assert!((fit.g - 0.064).abs() < 1e-3, "{}", fit.g);

        let flat = CavityConfig { g: 0.0, ..truth };
        let fit = fit_cavity(&trace(&flat), &p, &cal, &start, &grid, &FitOptions::default()).unwrap();
        assert!(fit.g < 5e-4, "{}", fit.g);
    }
}
