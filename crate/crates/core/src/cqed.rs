//! Quasi-static cavity QED of a single atom at a fixed position.
//!
//! Fields rotate at the probe frequency. With `dc = w_probe - w_cavity` and
//! `da(r) = w_probe - w_atom(r)` the low-saturation equations of motion are
//!
//! ```text
//! d alpha/dt = -(kappa - i dc) alpha - i g(r) sigma + eta
//! d sigma/dt = -(gamma - i da(r)) sigma - i g(r) alpha
//! ```
//!
//! The dipole trap Stark-shifts the atomic resonance upward by
//! `chi |U(r)| / hbar`, so `da` is smallest at the dipole antinodes.

use num_complex::Complex64;

use crate::params::{ExperimentParams, ParamsError, TWO_PI};

/// Atom position. `z` runs along the cavity axis with 0 at the cavity centre,
/// where probe and dipole antinodes coincide.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    /// On-axis-plane position at radial distance `rho` along x.
    pub fn axial_radial(z: f64, rho: f64) -> Self {
        Position { x: rho, y: 0.0, z }
    }

    pub fn rho_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn rho(&self) -> f64 {
        self.rho_squared().sqrt()
    }
}

/// Cavity field and atomic dipole amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldAtomState {
    pub alpha: Complex64,
    pub sigma: Complex64,
}

/// Above this excitation the low-saturation linearisation is no longer trusted.
pub const LOW_SATURATION_LIMIT: f64 = 0.05;

impl FieldAtomState {
    pub const VACUUM: FieldAtomState =
        FieldAtomState { alpha: Complex64::new(0.0, 0.0), sigma: Complex64::new(0.0, 0.0) };

    pub fn photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn excitation(&self) -> f64 {
        self.sigma.norm_sqr()
    }

    pub fn is_low_saturation(&self) -> bool {
        self.excitation() <= LOW_SATURATION_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSettings {
    /// Incident probe power (W).
    pub probe_power: f64,
    /// Probe minus cavity frequency (rad/s).
    pub cavity_detuning: f64,
    /// Instantaneous dipole trap depth (J).
    pub trap_depth_now: f64,
}

impl DriveSettings {
    pub fn new(probe_power: f64, cavity_detuning: f64, trap_depth_now: f64) -> Self {
        DriveSettings { probe_power, cavity_detuning, trap_depth_now }
    }
}

/// Mode functions at one position, with their gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ModeSample {
    /// g(r) / g0
    pub probe: f64,
    /// grad (g / g0)
    pub probe_grad: [f64; 3],
    /// cos^2(k_d z) exp(-2 rho^2 / w0^2)
    pub dipole: f64,
    /// grad of `dipole`
    pub dipole_grad: [f64; 3],
}

/// Precomputed constants of the atom-cavity system. Cheap to copy; shared
/// read-only by trajectory workers.
#[derive(Debug, Clone, Copy)]
pub struct CavityModel {
    pub params: ExperimentParams,
    pub kp: f64,
    pub kd: f64,
    pub inv_waist_sq: f64,
    pub g0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub atom_detuning_free: f64,
    /// chi / hbar
    pub stark_per_joule: f64,
    pub hbar: f64,
    pub mass: f64,
    output_per_photon: f64,
    eta_per_sqrt_watt: f64,
}

impl CavityModel {
    pub fn new(params: &ExperimentParams) -> Self {
        let hbar = params.constants.planck_hbar;
        let w0 = params.cavity.mode_waist;
        CavityModel {
            params: *params,
            kp: params.cavity.probe_wavenumber(),
            kd: params.cavity.dipole_wavenumber(),
            inv_waist_sq: 1.0 / (w0 * w0),
            g0: params.atom.coupling_g0,
            kappa: params.cavity.field_decay_kappa,
            gamma: params.atom.dipole_decay_gamma,
            atom_detuning_free: params.atom.atom_detuning_free,
            stark_per_joule: params.trap.stark_ratio_chi / hbar,
            hbar,
            mass: params.constants.atom_mass,
            output_per_photon: params.output_per_photon(),
            eta_per_sqrt_watt: crate::params::derive(params).drive_eta_per_sqrt_watt,
        }
    }

    pub(crate) fn mode_sample(&self, pos: &Position) -> ModeSample {
        let rho2 = pos.rho_squared();
        let gauss = (-rho2 * self.inv_waist_sq).exp();
        let (sp, cp) = (self.kp * pos.z).sin_cos();
        let (sd, cd) = (self.kd * pos.z).sin_cos();
        let probe = cp * gauss;
        let gauss2 = gauss * gauss;
        let dipole = cd * cd * gauss2;
        let pr = -2.0 * self.inv_waist_sq * probe;
        let dr = -4.0 * self.inv_waist_sq * dipole;
        ModeSample {
            probe,
            probe_grad: [pr * pos.x, pr * pos.y, -self.kp * sp * gauss],
            dipole,
            dipole_grad: [dr * pos.x, dr * pos.y, -2.0 * self.kd * sd * cd * gauss2],
        }
    }

    /// Position-dependent coupling g(r) = g0 cos(k_p z) exp(-rho^2/w0^2), rad/s.
    pub fn coupling(&self, pos: &Position) -> f64 {
        self.g0 * (self.kp * pos.z).cos() * (-pos.rho_squared() * self.inv_waist_sq).exp()
    }

    /// Dipole potential U(r) = -depth cos^2(k_d z) exp(-2 rho^2/w0^2), J.
    pub fn trap_potential(&self, pos: &Position, depth_now: f64) -> f64 {
        let c = (self.kd * pos.z).cos();
        -depth_now * c * c * (-2.0 * pos.rho_squared() * self.inv_waist_sq).exp()
    }

    /// Probe-atom detuning including the trap Stark shift, rad/s.
    pub fn stark_detuning(&self, pos: &Position, depth_now: f64) -> f64 {
        self.atom_detuning_free - self.stark_per_joule * self.trap_potential(pos, depth_now).abs()
    }

    pub fn drive_eta(&self, probe_power: f64) -> f64 {
        self.eta_per_sqrt_watt * probe_power.max(0.0).sqrt()
    }

    /// Closed-form steady state of the linear field/dipole system for
    /// coupling `g`, atom detuning `da` and drive amplitude `eta`.
    pub fn steady_state_with(&self, g: f64, da: f64, dc: f64, eta: f64) -> FieldAtomState {
        let atom_den = Complex64::new(self.gamma, -da);
        let inv_atom = atom_den.conj() / atom_den.norm_sqr();
        let cav_den = Complex64::new(self.kappa, -dc) + g * g * inv_atom;
        let alpha = eta * cav_den.conj() / cav_den.norm_sqr();
        let sigma = Complex64::new(0.0, -g) * alpha * inv_atom;
        FieldAtomState { alpha, sigma }
    }

    pub fn steady_state(&self, pos: &Position, drive: &DriveSettings) -> FieldAtomState {
        self.steady_state_with(
            self.coupling(pos),
            self.stark_detuning(pos, drive.trap_depth_now),
            drive.cavity_detuning,
            self.drive_eta(drive.probe_power),
        )
    }

    /// Detected-side output power (W) for a field state.
    pub fn transmitted_power(&self, state: &FieldAtomState) -> f64 {
        self.output_per_photon * state.photon_number()
    }

    pub fn output_per_photon(&self) -> f64 {
        self.output_per_photon
    }

    pub fn excitation(&self, pos: &Position, drive: &DriveSettings) -> f64 {
        self.steady_state(pos, drive).excitation()
    }

    /// Empty-cavity photon number `|eta|^2 / (kappa^2 + dc^2)`.
    pub fn empty_photon_number(&self, drive: &DriveSettings) -> f64 {
        let eta = self.drive_eta(drive.probe_power);
        eta * eta / (self.kappa * self.kappa + drive.cavity_detuning * drive.cavity_detuning)
    }

    /// Antinode-to-empty photon-number ratio at the given trap depth and Delta_c = 0.
    pub fn transmission_dip(&self, depth: f64) -> f64 {
        let drive = DriveSettings::new(crate::params::PICOWATT, 0.0, depth);
        self.steady_state(&Position::ORIGIN, &drive).photon_number() / self.empty_photon_number(&drive)
    }
}

/// Convenience wrappers with the operation names used throughout the docs.
pub fn coupling(params: &ExperimentParams, pos: &Position) -> f64 {
    CavityModel::new(params).coupling(pos)
}

pub fn trap_potential(params: &ExperimentParams, pos: &Position, depth_now: f64) -> f64 {
    CavityModel::new(params).trap_potential(pos, depth_now)
}

pub fn stark_detuning(params: &ExperimentParams, pos: &Position, depth_now: f64) -> f64 {
    CavityModel::new(params).stark_detuning(pos, depth_now)
}

pub fn steady_state(params: &ExperimentParams, pos: &Position, drive: &DriveSettings) -> FieldAtomState {
    CavityModel::new(params).steady_state(pos, drive)
}

pub fn transmitted_power(params: &ExperimentParams, state: &FieldAtomState) -> f64 {
    params.output_per_photon() * state.photon_number()
}

pub fn excitation(params: &ExperimentParams, pos: &Position, drive: &DriveSettings) -> Result<f64, ParamsError> {
    params.photon_number_from_power(drive.probe_power)?;
    Ok(CavityModel::new(params).excitation(pos, drive))
}

/// Frequency in rad/s for an ordinary frequency in MHz.
pub fn mhz(f: f64) -> f64 {
    TWO_PI * f * 1e6
}
