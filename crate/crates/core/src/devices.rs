//! Reference devices: fitted energies and measured lines for kinemons I–VIII.
//!
//! Devices I–VI use one junction in a single loop. VII and VIII carry two
//! junctions; the tabulated E_J is taken as the energy of each junction.

use crate::params::CircuitParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceRecord {
    pub name: &'static str,
    pub params: CircuitParams,
    /// ω01/2π at the top sweet spot, GHz.
    pub f01_top: f64,
    /// Readout resonator ω_r/2π, GHz.
    pub omega_r: f64,
    /// Coupling g/2π, GHz.
    pub g: f64,
    /// Anharmonicity at φ_e = 0, GHz.
    pub alpha_top: f64,
    /// Anharmonicity at φ_e = π, GHz (not reported for two-junction devices).
    pub alpha_bottom: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
const fn single(
    name: &'static str,
    ej: f64,
    ec: f64,
    el: f64,
    f01_top: f64,
    omega_r: f64,
    g_mhz: f64,
    alpha_top_mhz: f64,
    alpha_bottom_mhz: f64,
) -> DeviceRecord {
    DeviceRecord {
        name,
        params: CircuitParams {
            ej1: ej,
            ej2: 0.0,
            ec,
            el,
            kappa: 1.0,
        },
        f01_top,
        omega_r,
        g: g_mhz * 1e-3,
        alpha_top: alpha_top_mhz * 1e-3,
        alpha_bottom: Some(alpha_bottom_mhz * 1e-3),
    }
}

#[allow(clippy::too_many_arguments)]
const fn double(
    name: &'static str,
    ej: f64,
    ec: f64,
    el: f64,
    kappa: f64,
    f01_top: f64,
    omega_r: f64,
    g_mhz: f64,
    alpha_top_mhz: f64,
) -> DeviceRecord {
    DeviceRecord {
        name,
        params: CircuitParams {
            ej1: ej,
            ej2: ej,
            ec,
            el,
            kappa,
        },
        f01_top,
        omega_r,
        g: g_mhz * 1e-3,
        alpha_top: alpha_top_mhz * 1e-3,
        alpha_bottom: None,
    }
}

pub const KINEMONS: [DeviceRecord; 8] = [
    single("I", 5.38, 0.90, 8.59, 4.947, 7.185, 64.0, -86.0, 219.0),
    single("II", 6.00, 1.10, 8.75, 5.596, 7.284, 44.0, -118.0, 301.0),
    single("III", 4.00, 1.50, 7.40, 5.719, 7.341, 34.0, -131.0, 257.0),
    single("IV", 2.92, 1.95, 8.40, 6.508, 7.433, 35.0, -116.0, 182.0),
    single("V", 2.44, 1.80, 9.07, 6.359, 7.495, 34.0, -87.0, 124.0),
    single("VI", 5.90, 0.70, 14.65, 5.312, 7.608, 90.0, -49.0, 96.0),
    double("VII", 8.61, 0.47, 8.11, 0.35, 4.769, 7.688, 83.0, -84.0),
    double("VIII", 14.00, 0.32, 12.2, 0.37, 5.008, 7.779, 68.0, -80.0),
];

pub fn kinemon(name: &str) -> Option<&'static DeviceRecord> {
    KINEMONS.iter().find(|d| d.name.eq_ignore_ascii_case(name))
}
