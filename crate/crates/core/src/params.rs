//! Apparatus parameters, unit conversions and derived quantities.
//!
//! Everything is stored in SI units internally. Angular frequencies are in
//! rad/s; the config file uses ordinary frequencies in MHz to match the usual
//! `omega / 2pi` notation of cavity QED.

use std::fmt;

use serde::Deserialize;
use thiserror::Error;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Watts per picowatt.
pub const PICOWATT: f64 = 1e-12;
/// Watts per femtowatt.
pub const FEMTOWATT: f64 = 1e-15;
const MHZ: f64 = 1e6;

/// The default configuration file shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("config parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid parameter `{key}`: {reason}")]
    Invariant { key: &'static str, reason: String },
    #[error("probe power must be non-negative, got {0} W")]
    NegativePower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub planck_hbar: f64,
    pub boltzmann: f64,
    pub light_speed: f64,
    pub atom_mass: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            planck_hbar: 1.054_571_817e-34,
            boltzmann: 1.380_649e-23,
            light_speed: 299_792_458.0,
            atom_mass: 1.4100e-25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    pub field_decay_kappa: f64,
    pub length: f64,
    pub finesse: f64,
    pub probe_wavelength: f64,
    pub dipole_wavelength: f64,
    pub mode_waist: f64,
}

impl CavityParams {
    pub fn probe_wavenumber(&self) -> f64 {
        TWO_PI / self.probe_wavelength
    }

    pub fn dipole_wavenumber(&self) -> f64 {
        TWO_PI / self.dipole_wavelength
    }

    /// Wavelength separation of neighbouring longitudinal modes, `lambda^2 / 2l`.
    pub fn mode_spacing_wavelength(&self) -> f64 {
        self.probe_wavelength * self.probe_wavelength / (2.0 * self.length)
    }
}

/// Waist for which the axial/radial trap-frequency ratio of a `cos^2 x gaussian`
/// standing-wave trap is exactly 100.
pub fn default_mode_waist(dipole_wavelength: f64) -> f64 {
    100.0 * 2f64.sqrt() / (TWO_PI / dipole_wavelength)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomParams {
    pub coupling_g0: f64,
    pub dipole_decay_gamma: f64,
    pub atom_detuning_free: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapParams {
    pub guide_depth: f64,
    pub trap_depth: f64,
    pub stark_ratio_chi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    pub quantum_efficiency: f64,
    /// Empty-cavity resonant output power (W) at `calibration_input_power`.
    pub empty_resonant_output: f64,
    pub calibration_input_power: f64,
    /// Empty-cavity resonant photon number per pW of input.
    pub photon_number_per_pw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionPattern {
    Isotropic,
    /// Dipole pattern of a pi transition with the dipole along the cavity axis.
    Dipole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub dt: f64,
    pub noise_resample_interval: f64,
    pub noise_rms: f64,
    pub radial_escape_waists: f64,
    pub emission: EmissionPattern,
    pub capture_ramp: f64,
    pub axial_temperature: f64,
    pub position_spread: f64,
    pub radial_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentParams {
    pub constants: PhysicalConstants,
    pub cavity: CavityParams,
    pub atom: AtomParams,
    pub trap: TrapParams,
    pub detection: DetectionParams,
    pub simulation: SimulationParams,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        load_params(DEFAULT_CONFIG).expect("shipped default config is valid")
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        fn positive(key: &'static str, v: f64) -> Result<(), ParamsError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ParamsError::Invariant { key, reason: format!("must be positive and finite, got {v}") })
            }
        }
        let c = &self.constants;
        positive("planck_hbar", c.planck_hbar)?;
        positive("boltzmann", c.boltzmann)?;
        positive("light_speed", c.light_speed)?;
        positive("mass_kg", c.atom_mass)?;

        let cav = &self.cavity;
        positive("kappa_mhz", cav.field_decay_kappa)?;
        positive("length_um", cav.length)?;
        positive("finesse", cav.finesse)?;
        positive("probe_wavelength_nm", cav.probe_wavelength)?;
        positive("dipole_wavelength_nm", cav.dipole_wavelength)?;
        positive("mode_waist_um", cav.mode_waist)?;
        if cav.probe_wavelength == cav.dipole_wavelength {
            return Err(ParamsError::Invariant {
                key: "dipole_wavelength_nm",
                reason: "probe and dipole wavelengths must differ".into(),
            });
        }
        if cav.mode_waist >= 0.5 * cav.length {
            return Err(ParamsError::Invariant {
                key: "mode_waist_um",
                reason: format!("waist {} m is not small compared to the cavity length {} m", cav.mode_waist, cav.length),
            });
        }

        let a = &self.atom;
        positive("gamma_mhz", a.dipole_decay_gamma)?;
        if !a.atom_detuning_free.is_finite() {
            return Err(ParamsError::Invariant { key: "detuning_mhz", reason: "must be finite".into() });
        }
        let g2 = a.coupling_g0 * a.coupling_g0;
        if !(g2 > cav.field_decay_kappa * a.dipole_decay_gamma) {
            return Err(ParamsError::Invariant {
                key: "g0_mhz",
                reason: format!(
                    "strong coupling violated: g0^2 = {g2:.4e} <= kappa*gamma = {:.4e} (rad/s)^2",
                    cav.field_decay_kappa * a.dipole_decay_gamma
                ),
            });
        }

        let t = &self.trap;
        positive("guide_depth_uk", t.guide_depth)?;
        positive("trap_depth_uk", t.trap_depth)?;
        if t.guide_depth >= t.trap_depth {
            return Err(ParamsError::Invariant {
                key: "guide_depth_uk",
                reason: "guide depth must be shallower than the trap depth".into(),
            });
        }
        if !(t.stark_ratio_chi >= 0.0 && t.stark_ratio_chi.is_finite()) {
            return Err(ParamsError::Invariant { key: "stark_ratio_chi", reason: "must be >= 0".into() });
        }

        let d = &self.detection;
        if !(d.quantum_efficiency > 0.0 && d.quantum_efficiency <= 1.0) {
            return Err(ParamsError::Invariant { key: "quantum_efficiency", reason: "must lie in (0, 1]".into() });
        }
        positive("empty_resonant_output_fw", d.empty_resonant_output)?;
        positive("calibration_input_pw", d.calibration_input_power)?;
        positive("photon_number_per_pw", d.photon_number_per_pw)?;

        let s = &self.simulation;
        positive("dt_ns", s.dt)?;
        positive("noise_resample_us", s.noise_resample_interval)?;
        positive("radial_escape_waists", s.radial_escape_waists)?;
        if !(0.0..=0.5).contains(&s.noise_rms) {
            return Err(ParamsError::Invariant { key: "noise_rms", reason: "must lie in [0, 0.5]".into() });
        }
        for (key, v) in [
            ("capture_ramp_us", s.capture_ramp),
            ("axial_temperature_uk", s.axial_temperature),
            ("position_spread_nm", s.position_spread),
            ("radial_spread_um", s.radial_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ParamsError::Invariant { key, reason: format!("must be >= 0, got {v}") });
            }
        }
        Ok(())
    }

    /// Empty-cavity resonant intracavity photon number for an incident probe power (W).
    pub fn photon_number_from_power(&self, probe_power: f64) -> Result<f64, ParamsError> {
        if probe_power < 0.0 || probe_power.is_nan() {
            return Err(ParamsError::NegativePower(probe_power));
        }
        Ok(self.detection.photon_number_per_pw * probe_power / PICOWATT)
    }

    /// Drive amplitude eta (sqrt(photons)/s) for the given input power.
    pub fn drive_eta(&self, probe_power: f64) -> Result<f64, ParamsError> {
        Ok(self.cavity.field_decay_kappa * self.photon_number_from_power(probe_power)?.sqrt())
    }

    /// Output power per intracavity photon, fixed by the empty-cavity calibration datum.
    pub fn output_per_photon(&self) -> f64 {
        let d = &self.detection;
        let n_ref = d.photon_number_per_pw * d.calibration_input_power / PICOWATT;
        d.empty_resonant_output / n_ref
    }

    pub fn kelvin(&self, energy: f64) -> f64 {
        energy / self.constants.boltzmann
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub axial_trap_freq: f64,
    pub radial_trap_freq: f64,
    pub recoil_velocity: f64,
    pub capture_velocity: f64,
    /// Drive amplitude per square root of input power, eta = this * sqrt(P).
    pub drive_eta_per_sqrt_watt: f64,
    pub mode_spacing_wavelength: f64,
    pub guide_axial_trap_freq: f64,
}

impl DerivedParams {
    pub fn drive_eta(&self, probe_power: f64) -> f64 {
        self.drive_eta_per_sqrt_watt * probe_power.max(0.0).sqrt()
    }
}

fn axial_frequency(p: &ExperimentParams, depth: f64) -> f64 {
    p.cavity.dipole_wavenumber() * (2.0 * depth / p.constants.atom_mass).sqrt()
}

pub fn derive(p: &ExperimentParams) -> DerivedParams {
    let m = p.constants.atom_mass;
    let u0 = p.trap.trap_depth;
    let n_per_watt = p.detection.photon_number_per_pw / PICOWATT;
    DerivedParams {
        axial_trap_freq: axial_frequency(p, u0),
        radial_trap_freq: (2.0 / p.cavity.mode_waist) * (u0 / m).sqrt(),
        recoil_velocity: p.constants.planck_hbar * p.cavity.probe_wavenumber() / m,
        capture_velocity: (p.cavity.probe_wavelength / 4.0) * 2.0 * p.cavity.field_decay_kappa,
        drive_eta_per_sqrt_watt: p.cavity.field_decay_kappa * n_per_watt.sqrt(),
        mode_spacing_wavelength: p.cavity.mode_spacing_wavelength(),
        guide_axial_trap_freq: axial_frequency(p, p.trap.guide_depth),
    }
}

impl fmt::Display for DerivedParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "axial_trap_freq_mhz = {:.6}", self.axial_trap_freq / TWO_PI / MHZ)?;
        writeln!(f, "radial_trap_freq_khz = {:.6}", self.radial_trap_freq / TWO_PI / 1e3)?;
        writeln!(f, "axial_radial_ratio = {:.6}", self.axial_trap_freq / self.radial_trap_freq)?;
        writeln!(f, "guide_axial_trap_freq_mhz = {:.6}", self.guide_axial_trap_freq / TWO_PI / MHZ)?;
        writeln!(f, "recoil_velocity_mm_s = {:.6}", self.recoil_velocity * 1e3)?;
        writeln!(f, "capture_velocity_m_s = {:.6}", self.capture_velocity)?;
        writeln!(f, "drive_eta_per_sqrt_pw = {:.6e}", self.drive_eta_per_sqrt_watt * PICOWATT.sqrt())?;
        writeln!(f, "mode_spacing_nm = {:.6}", self.mode_spacing_wavelength * 1e9)
    }
}

// --- config file ---------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cavity: RawCavity,
    atom: RawAtom,
    trap: RawTrap,
    #[serde(default)]
    detection: RawDetection,
    #[serde(default)]
    simulation: RawSimulation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCavity {
    kappa_mhz: f64,
    length_um: f64,
    finesse: f64,
    probe_wavelength_nm: f64,
    dipole_wavelength_nm: f64,
    mode_waist_um: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtom {
    g0_mhz: f64,
    gamma_mhz: f64,
    detuning_mhz: f64,
    mass_kg: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrap {
    guide_depth_uk: f64,
    trap_depth_uk: f64,
    stark_ratio_chi: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    quantum_efficiency: Option<f64>,
    empty_resonant_output_fw: Option<f64>,
    calibration_input_pw: Option<f64>,
    photon_number_per_pw: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    dt_ns: Option<f64>,
    noise_resample_us: Option<f64>,
    noise_rms: Option<f64>,
    radial_escape_waists: Option<f64>,
    emission: Option<EmissionPattern>,
    capture_ramp_us: Option<f64>,
    axial_temperature_uk: Option<f64>,
    position_spread_nm: Option<f64>,
    radial_spread_um: Option<f64>,
}

pub const DEFAULT_STARK_RATIO: f64 = 2.0;

/// Parses a TOML config, applying defaults for optional keys, and validates it.
pub fn load_params(config_text: &str) -> Result<ExperimentParams, ParamsError> {
    let raw: RawConfig = toml::from_str(config_text).map_err(|e| ParamsError::Parse {
        line: e.span().map(|s| config_text[..s.start.min(config_text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;

    let constants = PhysicalConstants {
        atom_mass: raw.atom.mass_kg.unwrap_or(PhysicalConstants::default().atom_mass),
        ..PhysicalConstants::default()
    };
    let dipole_wavelength = raw.cavity.dipole_wavelength_nm * 1e-9;
    let cavity = CavityParams {
        field_decay_kappa: TWO_PI * raw.cavity.kappa_mhz * MHZ,
        length: raw.cavity.length_um * 1e-6,
        finesse: raw.cavity.finesse,
        probe_wavelength: raw.cavity.probe_wavelength_nm * 1e-9,
        dipole_wavelength,
        mode_waist: raw
            .cavity
            .mode_waist_um
            .map(|w| w * 1e-6)
            .unwrap_or_else(|| default_mode_waist(dipole_wavelength)),
    };
    let atom = AtomParams {
        coupling_g0: TWO_PI * raw.atom.g0_mhz * MHZ,
        dipole_decay_gamma: TWO_PI * raw.atom.gamma_mhz * MHZ,
        atom_detuning_free: TWO_PI * raw.atom.detuning_mhz * MHZ,
    };
    let kb = constants.boltzmann;
    let trap = TrapParams {
        guide_depth: kb * raw.trap.guide_depth_uk * 1e-6,
        trap_depth: kb * raw.trap.trap_depth_uk * 1e-6,
        stark_ratio_chi: raw.trap.stark_ratio_chi.unwrap_or(DEFAULT_STARK_RATIO),
    };
    let rd = raw.detection;
    let detection = DetectionParams {
        quantum_efficiency: rd.quantum_efficiency.unwrap_or(0.32),
        empty_resonant_output: rd.empty_resonant_output_fw.unwrap_or(300.0) * FEMTOWATT,
        calibration_input_power: rd.calibration_input_pw.unwrap_or(2.25) * PICOWATT,
        photon_number_per_pw: rd.photon_number_per_pw.unwrap_or(0.005 / 0.37),
    };
    let rs = raw.simulation;
    let simulation = SimulationParams {
        dt: rs.dt_ns.unwrap_or(10.0) * 1e-9,
        noise_resample_interval: rs.noise_resample_us.unwrap_or(0.2) * 1e-6,
        noise_rms: rs.noise_rms.unwrap_or(0.0),
        radial_escape_waists: rs.radial_escape_waists.unwrap_or(3.0),
        emission: rs.emission.unwrap_or(EmissionPattern::Isotropic),
        capture_ramp: rs.capture_ramp_us.unwrap_or(0.0) * 1e-6,
        axial_temperature: rs.axial_temperature_uk.unwrap_or(150.0) * 1e-6,
        position_spread: rs.position_spread_nm.unwrap_or(54.0) * 1e-9,
        radial_spread: rs.radial_spread_um.unwrap_or(4.0) * 1e-6,
    };
    let params = ExperimentParams { constants, cavity, atom, trap, detection, simulation };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_config_has_paper_rates() {
        let p = ExperimentParams::default();
        assert_relative_eq!(p.atom.coupling_g0 / TWO_PI, 16e6, max_relative = 1e-12);
        assert_relative_eq!(p.cavity.field_decay_kappa / TWO_PI, 1.4e6, max_relative = 1e-12);
        assert_relative_eq!(p.atom.dipole_decay_gamma / TWO_PI, 3e6, max_relative = 1e-12);
    }

    #[test]
    fn omitted_chi_defaults_to_two() {
        let text = DEFAULT_CONFIG.replace("stark_ratio_chi = 2.0", "");
        let p = load_params(&text).unwrap();
        assert_eq!(p.trap.stark_ratio_chi, 2.0);
    }

    #[test]
    fn zero_coupling_rejected() {
        let text = DEFAULT_CONFIG.replace("g0_mhz = 16.0", "g0_mhz = 0.0");
        let err = load_params(&text).unwrap_err();
        assert!(err.to_string().contains("strong coupling violated"), "{err}");
    }

    #[test]
    fn missing_key_reports_key_and_line() {
        let text = DEFAULT_CONFIG.replace("finesse = 4.4e5\n", "");
        match load_params(&text).unwrap_err() {
            ParamsError::Parse { line, message } => {
                assert!(message.contains("finesse"), "{message}");
                assert!(line.is_some());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = DEFAULT_CONFIG.replace("finesse = 4.4e5", "finesse = 4.4e5\nfinnese = 1.0");
        let err = load_params(&text).unwrap_err();
        match err {
            ParamsError::Parse { line: Some(l), message } => {
                assert!(message.contains("finnese"));
                assert_eq!(text.lines().nth(l - 1).unwrap().trim(), "finnese = 1.0");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn photon_number_matches_calibration_pairs() {
        let p = ExperimentParams::default();
        assert_relative_eq!(p.photon_number_from_power(0.37 * PICOWATT).unwrap(), 0.005, max_relative = 1e-12);
        // 0.11 pW -> 0.0015 (printed to two digits)
        assert_relative_eq!(p.photon_number_from_power(0.11 * PICOWATT).unwrap(), 0.0015, max_relative = 0.01);
        assert_eq!(p.photon_number_from_power(0.0).unwrap(), 0.0);
        assert!(p.photon_number_from_power(-1e-12).is_err());
    }

    #[test]
    fn derived_values() {
        let p = ExperimentParams::default();
        let d = derive(&p);
        // k_d sqrt(2 U0 / m) with U0 = kB * 1.5 mK
        let kd = TWO_PI / 785.3e-9;
        let expected = kd * (2.0 * 1.380649e-23 * 1.5e-3 / 1.41e-25f64).sqrt();
        assert_relative_eq!(d.axial_trap_freq, expected, max_relative = 1e-12);
        assert!((d.axial_trap_freq / TWO_PI / 1e6 - 0.69).abs() < 0.01);
        assert!((d.capture_velocity - 3.4).abs() < 0.05);
        assert!((d.recoil_velocity * 1e3 - 6.0).abs() < 0.1);
        assert_relative_eq!(d.axial_trap_freq / d.radial_trap_freq, 100.0, max_relative = 1e-9);
        assert!((d.mode_spacing_wavelength * 1e9 - 2.5).abs() < 0.15 * 2.5);
        assert_relative_eq!(
            (d.drive_eta(0.37 * PICOWATT) / p.cavity.field_decay_kappa).powi(2),
            0.005,
            max_relative = 1e-12
        );
    }

    #[test]
    fn output_calibration_anchor() {
        let p = ExperimentParams::default();
        let n = p.photon_number_from_power(2.25 * PICOWATT).unwrap();
        assert_relative_eq!(p.output_per_photon() * n, 300.0 * FEMTOWATT, max_relative = 1e-14);
    }
}
