//! Forces on the atom and the retarded evolution of the cavity field.
//!
//! The light force comes from the coupling gradient weighted by the in-phase
//! part of `alpha* sigma`; the Stark force from the excited-state share of the
//! trap potential. Cooling appears only when the field lags the atom, which
//! [`FieldPropagator`] captures by integrating the 2x2 linear system exactly
//! over each step.

use nalgebra::Vector3;
use num_complex::Complex64;
use thiserror::Error;

use crate::cqed::{CavityModel, DriveSettings, FieldAtomState, ModeSample, Position};

pub type ForceVector = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum MechanicsError {
    #[error("time step {dt:e} s exceeds the limit {max:e} s")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("probe velocity {v} m/s exceeds the linear-response limit {max} m/s")]
    VelocityTooLarge { v: f64, max: f64 },
    #[error("friction average did not converge: consecutive periods gave {first:e} and {second:e} 1/s")]
    NonConvergence { first: f64, second: f64 },
}

/// Whether the field follows the atom with its physical delay or instantly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldMode {
    #[default]
    Dynamic,
    QuasiStatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Axial,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrictionMethod {
    Drag,
    Relaxation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionEstimate {
    pub beta_over_m: f64,
    pub axis: Axis,
    pub velocity_used: f64,
    pub method: FrictionMethod,
    /// Velocity-dependent force component along the motion (N).
    pub friction_force: f64,
}

/// Force split into the conservative trap part and everything the light does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceParts {
    pub trap: ForceVector,
    pub light: ForceVector,
}

impl ForceParts {
    pub fn total(&self) -> ForceVector {
        self.trap + self.light
    }
}

impl CavityModel {
    pub(crate) fn force_parts_from(&self, mode: &ModeSample, field: &FieldAtomState, depth_now: f64) -> ForceParts {
        let grad_d = Vector3::from(mode.dipole_grad);
        let grad_g = Vector3::from(mode.probe_grad);
        let trap = depth_now * grad_d;
        let exc = field.excitation();
        let in_phase = (field.alpha.conj() * field.sigma).re;
        // -hbar |sigma|^2 grad(delta_S) with delta_S = chi |U| / hbar
        let stark = -self.stark_per_joule * self.hbar * exc * depth_now * grad_d;
        let coupling = -2.0 * self.hbar * self.g0 * in_phase * grad_g;
        ForceParts { trap, light: stark + coupling }
    }

    pub fn force_parts(&self, pos: &Position, field: &FieldAtomState, drive: &DriveSettings) -> ForceParts {
        self.force_parts_from(&self.mode_sample(pos), field, drive.trap_depth_now)
    }

    /// Total force on the atom (N).
    pub fn total_force(&self, pos: &Position, field: &FieldAtomState, drive: &DriveSettings) -> ForceVector {
        self.force_parts(pos, field, drive).total()
    }

    /// Gradient of the trap potential, analytic.
    pub fn trap_gradient(&self, pos: &Position, depth_now: f64) -> ForceVector {
        -depth_now * Vector3::from(self.mode_sample(pos).dipole_grad)
    }

    /// Photon scattering rate `2 gamma |sigma|^2` (1/s).
    pub fn spontaneous_rate(&self, state: &FieldAtomState) -> f64 {
        2.0 * self.gamma * state.excitation()
    }

    /// Largest step accepted by [`CavityModel::field_step`].
    pub fn max_field_step(&self) -> f64 {
        0.1 / self.kappa
    }

    pub fn field_step(
        &self,
        field: &FieldAtomState,
        pos: &Position,
        drive: &DriveSettings,
        dt: f64,
    ) -> Result<FieldAtomState, MechanicsError> {
        let max = self.max_field_step();
        if !(dt > 0.0 && dt <= max * (1.0 + 1e-12)) {
            return Err(MechanicsError::StepTooLarge { dt, max });
        }
        let prop = FieldPropagator::new(
            self,
            self.coupling(pos),
            self.stark_detuning(pos, drive.trap_depth_now),
            drive.cavity_detuning,
            self.drive_eta(drive.probe_power),
            dt,
        );
        Ok(prop.apply(field))
    }
}

/// Exact propagator of the linear field/dipole system with coefficients
/// frozen over one step: `x(t + dt) = x_ss + exp(M dt) (x(t) - x_ss)`.
#[derive(Debug, Clone, Copy)]
pub struct FieldPropagator {
    e11: Complex64,
    e12: Complex64,
    e21: Complex64,
    e22: Complex64,
    steady: FieldAtomState,
}

impl FieldPropagator {
    pub fn new(model: &CavityModel, g: f64, da: f64, dc: f64, eta: f64, dt: f64) -> Self {
        let a = Complex64::new(-model.kappa, dc);
        let d = Complex64::new(-model.gamma, da);
        let c = Complex64::new(0.0, -g);
        let s = 0.5 * (a + d);
        let h = 0.5 * (a - d);
        let q = (h * h + c * c).sqrt();
        let qt = q * dt;
        // es * cosh(q dt) and es * sinh(q dt) / q with es = exp(s dt)
        let (ch, sh) = if qt.norm() < 1e-4 {
            let es = (s * dt).exp();
            let qt2 = qt * qt;
            (es * (1.0 + qt2 * 0.5), es * dt * (1.0 + qt2 / 6.0))
        } else {
            let up = ((s + q) * dt).exp();
            let down = ((s - q) * dt).exp();
            (0.5 * (up + down), 0.5 * (up - down) / q)
        };
        FieldPropagator {
            e11: ch + sh * h,
            e12: sh * c,
            e21: sh * c,
            e22: ch - sh * h,
            steady: model.steady_state_with(g, da, dc, eta),
        }
    }

    pub fn apply(&self, field: &FieldAtomState) -> FieldAtomState {
        let da = field.alpha - self.steady.alpha;
        let ds = field.sigma - self.steady.sigma;
        FieldAtomState {
            alpha: self.steady.alpha + self.e11 * da + self.e12 * ds,
            sigma: self.steady.sigma + self.e21 * da + self.e22 * ds,
        }
    }

    pub fn steady_state(&self) -> FieldAtomState {
        self.steady
    }
}

const DRAG_SETTLE_KAPPA_TIMES: f64 = 40.0;
const DRAG_STEPS_PER_KAPPA_TIME: f64 = 200.0;

fn axis_of(v: &Vector3<f64>) -> Axis {
    if v.z.abs() >= v.x.hypot(v.y) {
        Axis::Axial
    } else {
        Axis::Radial
    }
}

fn check_velocity(model: &CavityModel, v: &Vector3<f64>) -> Result<f64, MechanicsError> {
    let speed = v.norm();
    let max = 0.1 * crate::params::derive(&model.params).capture_velocity;
    if speed > max {
        return Err(MechanicsError::VelocityTooLarge { v: speed, max });
    }
    Ok(speed)
}

/// Moves the atom uniformly from `start` for `duration`, calling `visit` with
/// (position, dynamic field) after every step.
fn drag_along(
    model: &CavityModel,
    start: Position,
    v: &Vector3<f64>,
    drive: &DriveSettings,
    duration: f64,
    dt: f64,
    mode: FieldMode,
    mut visit: impl FnMut(&Position, &FieldAtomState),
) {
    let eta = model.drive_eta(drive.probe_power);
    let mut field = model.steady_state(&start, drive);
    let steps = (duration / dt).round() as usize;
    let at = |k: f64| Position::new(start.x + v.x * k * dt, start.y + v.y * k * dt, start.z + v.z * k * dt);
    for k in 0..steps {
        let next = at((k + 1) as f64);
        field = match mode {
            FieldMode::Dynamic => {
                let mid = at(k as f64 + 0.5);
                FieldPropagator::new(
                    model,
                    model.coupling(&mid),
                    model.stark_detuning(&mid, drive.trap_depth_now),
                    drive.cavity_detuning,
                    eta,
                    dt,
                )
                .apply(&field)
            }
            FieldMode::QuasiStatic => model.steady_state(&next, drive),
        };
        visit(&next, &field);
    }
}

/// Local friction coefficient at `pos` for an atom moving with velocity `v`:
/// the atom is dragged uniformly through `pos` after the field has settled,
/// and the velocity-dependent part of the force is compared with the
/// instantaneous steady-state force at the same point.
pub fn drag_probe(
    model: &CavityModel,
    pos: &Position,
    v: &Vector3<f64>,
    drive: &DriveSettings,
    mode: FieldMode,
) -> Result<FrictionEstimate, MechanicsError> {
    let speed = check_velocity(model, v)?;
    if speed == 0.0 {
        return Ok(FrictionEstimate {
            beta_over_m: 0.0,
            axis: Axis::Axial,
            velocity_used: 0.0,
            method: FrictionMethod::Drag,
            friction_force: 0.0,
        });
    }
    let dt = 1.0 / (model.kappa * DRAG_STEPS_PER_KAPPA_TIME);
    let steps = (DRAG_SETTLE_KAPPA_TIMES * DRAG_STEPS_PER_KAPPA_TIME).round();
    let duration = steps * dt;
    let start = Position::new(pos.x - v.x * duration, pos.y - v.y * duration, pos.z - v.z * duration);
    let mut last = FieldAtomState::VACUUM;
    drag_along(model, start, v, drive, duration, dt, mode, |_, f| last = *f);
    let dir = v / speed;
    let moving = model.total_force(pos, &last, drive);
    let resting = model.total_force(pos, &model.steady_state(pos, drive), drive);
    let friction_force = (moving - resting).dot(&dir);
    Ok(FrictionEstimate {
        beta_over_m: -friction_force / speed / model.mass,
        axis: axis_of(v),
        velocity_used: speed,
        method: FrictionMethod::Drag,
        friction_force,
    })
}

/// Friction averaged over one spatial period of the probe standing wave
/// (axial motion) or over one waist (radial motion). Two consecutive periods
/// are integrated and must agree.
pub fn drag_probe_period(
    model: &CavityModel,
    start: &Position,
    v: &Vector3<f64>,
    drive: &DriveSettings,
    mode: FieldMode,
) -> Result<FrictionEstimate, MechanicsError> {
    let speed = check_velocity(model, v)?;
    if speed == 0.0 {
        return drag_probe(model, start, v, drive, mode);
    }
    let axis = axis_of(v);
    let period = match axis {
        Axis::Axial => model.params.cavity.probe_wavelength / 2.0,
        Axis::Radial => model.params.cavity.mode_waist,
    };
    let dt_field = 1.0 / (model.kappa * DRAG_STEPS_PER_KAPPA_TIME);
    let steps_per_period = ((period / speed) / dt_field).ceil().max(400.0);
    let dt = period / speed / steps_per_period;
    let settle = DRAG_SETTLE_KAPPA_TIMES / model.kappa;
    let settle_steps = (settle / dt).ceil();
    let total = (settle_steps + 2.0 * steps_per_period) * dt;
    let dir = v / speed;
    let (mut k, mut sums) = (0usize, [0.0f64; 2]);
    drag_along(model, *start, v, drive, total, dt, mode, |p, f| {
        k += 1;
        let kf = k as f64 - settle_steps;
        if kf > 0.0 {
            let idx = if kf <= steps_per_period { 0 } else { 1 };
            let moving = model.total_force(p, f, drive);
            let resting = model.total_force(p, &model.steady_state(p, drive), drive);
            sums[idx] += (moving - resting).dot(&dir);
        }
    });
    let to_beta = |s: f64| -(s / steps_per_period) / speed / model.mass;
    let (first, second) = (to_beta(sums[0]), to_beta(sums[1]));
    let scale = first.abs().max(second.abs());
    if (first - second).abs() > 1e-3 * scale + 1e-6 {
        return Err(MechanicsError::NonConvergence { first, second });
    }
    Ok(FrictionEstimate {
        beta_over_m: 0.5 * (first + second),
        axis,
        velocity_used: speed,
        method: FrictionMethod::Drag,
        friction_force: -0.5 * (first + second) * speed * model.mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqed::mhz;
    use crate::params::{ExperimentParams, PICOWATT};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> CavityModel {
        CavityModel::new(&ExperimentParams::default())
    }

    fn guide_drive(m: &CavityModel) -> DriveSettings {
        DriveSettings::new(2.25 * PICOWATT, 0.0, m.params.trap.guide_depth)
    }

    #[test]
    fn no_trap_force_at_antinode() {
        let m = model();
        let drive = DriveSettings::new(2.25 * PICOWATT, 0.0, m.params.trap.trap_depth);
        let field = m.steady_state(&Position::ORIGIN, &drive);
        let parts = m.force_parts(&Position::ORIGIN, &field, &drive);
        assert_eq!(parts.trap.norm(), 0.0);
    }

    #[test]
    fn no_light_force_at_node_without_dipole() {
        let m = model();
        let lp = m.params.cavity.probe_wavelength;
        let drive = guide_drive(&m);
        let pos = Position::axial_radial(lp / 4.0, 0.0);
        let field = FieldAtomState { alpha: Complex64::new(0.1, 0.0), sigma: Complex64::new(0.0, 0.0) };
        assert_eq!(m.force_parts(&pos, &field, &drive).light.norm(), 0.0);
    }

    #[test]
    fn trap_gradient_matches_central_differences() {
        let m = model();
        let depth = m.params.trap.trap_depth;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pos = Position::new(
                rng.random_range(-20e-6..20e-6),
                rng.random_range(-20e-6..20e-6),
                rng.random_range(-1e-6..1e-6),
            );
            let analytic = m.trap_gradient(&pos, depth);
            let h = [1e-10, 1e-10, 1e-12];
            let shifted = |axis: usize, s: f64| {
                let mut p = pos;
                match axis {
                    0 => p.x += s,
                    1 => p.y += s,
                    _ => p.z += s,
                }
                m.trap_potential(&p, depth)
            };
            for axis in 0..3 {
                let fd = (shifted(axis, h[axis]) - shifted(axis, -h[axis])) / (2.0 * h[axis]);
                let scale = analytic.norm().max(1e-30);
                assert!((analytic[axis] - fd).abs() <= 1e-6 * scale, "axis {axis}: {} vs {fd}", analytic[axis]);
            }
        }
    }

    #[test]
    fn coupling_gradient_matches_central_differences() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let pos = Position::new(rng.random_range(-20e-6..20e-6), 0.0, rng.random_range(-1e-6..1e-6));
            let grad = Vector3::from(m.mode_sample(&pos).probe_grad) * m.g0;
            let h = 1e-12;
            let fdz = (m.coupling(&Position { z: pos.z + h, ..pos }) - m.coupling(&Position { z: pos.z - h, ..pos })) / (2.0 * h);
            let hx = 1e-10;
            let fdx = (m.coupling(&Position { x: pos.x + hx, ..pos }) - m.coupling(&Position { x: pos.x - hx, ..pos })) / (2.0 * hx);
            let scale = grad.norm();
            assert!((grad.z - fdz).abs() <= 1e-6 * scale);
            assert!((grad.x - fdx).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn steady_state_is_fixed_point_of_field_step() {
        let m = model();
        let drive = DriveSettings::new(2.25 * PICOWATT, mhz(3.0), m.params.trap.trap_depth);
        let pos = Position::new(1e-6, -2e-6, 50e-9);
        let ss = m.steady_state(&pos, &drive);
        let mut f = ss;
        for _ in 0..1000 {
            f = m.field_step(&f, &pos, &drive, 5e-9).unwrap();
        }
        assert!((f.alpha - ss.alpha).norm() <= 1e-10 * ss.alpha.norm());
        assert!((f.sigma - ss.sigma).norm() <= 1e-10 * ss.sigma.norm());
    }

    #[test]
    fn empty_cavity_ringup_matches_closed_form() {
        let m = model();
        let dc = mhz(0.7);
        let drive = DriveSettings::new(2.25 * PICOWATT, dc, 0.0);
        let lp = m.params.cavity.probe_wavelength;
        let node = Position::axial_radial(lp / 4.0, 1e-3);
        let n_ss = m.empty_photon_number(&drive);
        let lambda = Complex64::new(m.kappa, -dc);
        let dt = 0.05 / m.kappa;
        let mut f = FieldAtomState::VACUUM;
        for k in 1..=400 {
            f = m.field_step(&f, &node, &drive, dt).unwrap();
            let t = k as f64 * dt;
            let expected = n_ss * (1.0 - (-lambda * t).exp()).norm_sqr();
            assert!((f.photon_number() - expected).abs() <= 1e-8 * n_ss, "{k}");
        }
    }

    #[test]
    fn oversized_step_rejected() {
        let m = model();
        let drive = guide_drive(&m);
        let err = m.field_step(&FieldAtomState::VACUUM, &Position::ORIGIN, &drive, 1.0 / m.kappa).unwrap_err();
        assert!(matches!(err, MechanicsError::StepTooLarge { .. }));
    }

    #[test]
    fn hop_to_antinode_relaxes_monotonically() {
        let m = model();
        let lp = m.params.cavity.probe_wavelength;
        let drive = guide_drive(&m);
        let node = Position::axial_radial(lp / 4.0, 0.0);
        let mut f = m.steady_state(&node, &drive);
        let target = m.steady_state(&Position::ORIGIN, &drive).photon_number();
        let dt = 0.01 / m.kappa;
        // Envelope sampled once per Rabi-like period must shrink.
        let mut deviations = Vec::new();
        for _ in 0..2000 {
            f = m.field_step(&f, &Position::ORIGIN, &drive, dt).unwrap();
            deviations.push((f.photon_number() - target).abs());
        }
        let window = 50;
        let maxima: Vec<f64> = deviations.chunks(window).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect();
        // Past the first few normal-mode beats the envelope shrinks monotonically.
        for w in maxima[5..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{maxima:?}");
        }
        // Slower normal-mode amplitude decay rate.
        let da = m.stark_detuning(&Position::ORIGIN, drive.trap_depth_now);
        let h = Complex64::new(m.gamma - m.kappa, -da) * 0.5;
        let q = (h * h - m.g0 * m.g0).sqrt();
        let slow = 0.5 * (m.kappa + m.gamma) - q.re.abs();
        let wt = window as f64 * dt;
        let rate = |a: usize, b: usize| (maxima[a] / maxima[b]).ln() / ((b - a) as f64 * wt);
        // While |alpha - alpha_ss| >> |alpha_ss| the photon number relaxes at twice
        // the amplitude rate; later the cross term with alpha_ss dominates.
        assert!((rate(0, 3) / (2.0 * slow) - 1.0).abs() < 0.3, "early {:e} vs {:e}", rate(0, 3), 2.0 * slow);
        assert!((rate(10, 30) / slow - 1.0).abs() < 0.2, "late {:e} vs {:e}", rate(10, 30), slow);
    }

    #[test]
    fn friction_sign_follows_atom_detuning() {
        let mut p = ExperimentParams::default();
        let m = CavityModel::new(&p);
        let drive = guide_drive(&m);
        let pos = Position::axial_radial(m.params.cavity.probe_wavelength / 8.0, 0.0);
        let v = Vector3::new(0.0, 0.0, 0.02);
        let blue = drag_probe(&m, &pos, &v, &drive, FieldMode::Dynamic).unwrap();
        assert!(blue.beta_over_m > 0.0, "{blue:?}");
        assert_eq!(blue.axis, Axis::Axial);
        p.atom.atom_detuning_free = -p.atom.atom_detuning_free;
        let m_red = CavityModel::new(&p);
        let red = drag_probe(&m_red, &pos, &v, &drive, FieldMode::Dynamic).unwrap();
        assert!(red.beta_over_m < 0.0, "{red:?}");
    }

    #[test]
    fn zero_velocity_gives_zero_friction() {
        let m = model();
        let est = drag_probe(&m, &Position::ORIGIN, &Vector3::zeros(), &guide_drive(&m), FieldMode::Dynamic).unwrap();
        assert_eq!(est.friction_force, 0.0);
    }

    #[test]
    fn fast_probe_rejected() {
        let m = model();
        let v = Vector3::new(0.0, 0.0, 1.0);
        assert!(matches!(
            drag_probe(&m, &Position::ORIGIN, &v, &guide_drive(&m), FieldMode::Dynamic),
            Err(MechanicsError::VelocityTooLarge { .. })
        ));
    }

    #[test]
    fn friction_is_linear_in_velocity() {
        let m = model();
        let drive = guide_drive(&m);
        let pos = Position::axial_radial(0.3 * m.params.cavity.probe_wavelength / 4.0, 0.0);
        let betas: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&v| drag_probe(&m, &pos, &Vector3::new(0.0, 0.0, v), &drive, FieldMode::Dynamic).unwrap().beta_over_m)
            .collect();
        for b in &betas {
            assert_relative_eq!(*b, betas[1], max_relative = 0.1);
        }
    }

    #[test]
    fn quasi_static_field_has_no_friction() {
        let m = model();
        let drive = guide_drive(&m);
        let pos = Position::axial_radial(0.6 * m.params.cavity.probe_wavelength / 4.0, 0.0);
        let v = Vector3::new(0.0, 0.0, 0.02);
        let dynamic = drag_probe(&m, &pos, &v, &drive, FieldMode::Dynamic).unwrap();
        let quasi = drag_probe(&m, &pos, &v, &drive, FieldMode::QuasiStatic).unwrap();
        assert!(quasi.beta_over_m.abs() < 0.1 * dynamic.beta_over_m.abs());
    }

    #[test]
    fn period_average_converges() {
        let m = model();
        let drive = guide_drive(&m);
        let est = drag_probe_period(&m, &Position::ORIGIN, &Vector3::new(0.0, 0.0, 0.02), &drive, FieldMode::Dynamic)
            .unwrap();
        assert!(est.beta_over_m > 0.0);
    }

    #[test]
    fn scattering_rate_examples() {
        let m = model();
        let s = FieldAtomState { alpha: Complex64::new(0.0, 0.0), sigma: Complex64::new(0.025f64.sqrt(), 0.0) };
        assert_relative_eq!(m.spontaneous_rate(&s), 2.0 * mhz(3.0) * 0.025, max_relative = 1e-12);
        assert!((m.spontaneous_rate(&s) - 9.4e5).abs() < 0.05e5);
        let lp = m.params.cavity.probe_wavelength;
        let drive = guide_drive(&m);
        let node = m.steady_state(&Position::axial_radial(lp / 4.0, 0.0), &drive);
        assert!(m.spontaneous_rate(&node) < 1e-20);
    }
}
