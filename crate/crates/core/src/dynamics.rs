//! Stochastic trajectories of a point-like atom in the intracavity trap.
//!
//! Motion is integrated with velocity Verlet. The field is carried along with
//! the exact frozen-coefficient propagator, evaluated at the mid-step
//! position. Spontaneous emission is a Poisson process with the instantaneous
//! rate `2 gamma |sigma|^2`; each event kicks the atom by one probe recoil
//! along the cavity axis (absorption from the standing wave, random sign)
//! plus one recoil in the emission direction. Trap-depth noise is
//! piecewise-constant Gaussian, redrawn every resample interval.

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::cqed::{CavityModel, DriveSettings, FieldAtomState, ModeSample, Position};
use crate::mechanics::{FieldMode, FieldPropagator, ForceParts};
use crate::params::{derive, EmissionPattern, ExperimentParams, TWO_PI};
use crate::schedule::{ProbeSchedule, ScheduleError};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("time step {dt:e} s does not resolve the {what} (limit {max:e} s)")]
    StepTooLarge { dt: f64, max: f64, what: &'static str },
    #[error("noise amplitude {0} outside [0, 0.5]")]
    NoiseAmplitude(f64),
    #[error("noise resample interval {interval:e} s is too long for the axial parametric resonance")]
    NoiseTooSlow { interval: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("ensemble size must be at least 1")]
    EmptyEnsemble,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    pub position: Position,
    pub velocity: Vector3<f64>,
    pub time: f64,
}

impl AtomState {
    pub fn at_rest(position: Position) -> Self {
        AtomState { position, velocity: Vector3::zeros(), time: 0.0 }
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocity.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Escape {
    Axial,
    Radial,
    Censored,
}

impl Escape {
    pub fn as_str(&self) -> &'static str {
        match self {
            Escape::Axial => "axial",
            Escape::Radial => "radial",
            Escape::Censored => "censored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub position: Position,
    pub velocity: Vector3<f64>,
    pub photon_number: f64,
    pub output_power: f64,
    /// Index of the active segment counted from the start of the run.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub survival_time: f64,
    pub escape: Escape,
    pub trace: Option<Vec<TraceSample>>,
}

// --- seeds ---------------------------------------------------------------

/// Seed of member `index` of a family rooted at `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

const STREAM_INIT: u64 = 0;
const STREAM_KICKS: u64 = 1;
const STREAM_NOISE: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// --- noise ---------------------------------------------------------------

/// Relative trap-depth noise: piecewise-constant, i.i.d. Gaussian per interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProcess {
    pub relative_rms: f64,
    pub resample_interval: f64,
    pub seed: u64,
}

impl NoiseProcess {
    pub fn new(relative_rms: f64, resample_interval: f64, seed: u64) -> Result<Self, DynamicsError> {
        if !(0.0..=0.5).contains(&relative_rms) {
            return Err(DynamicsError::NoiseAmplitude(relative_rms));
        }
        Ok(NoiseProcess { relative_rms, resample_interval, seed })
    }

    pub fn from_params(params: &ExperimentParams, seed: u64) -> Result<Self, DynamicsError> {
        Self::new(params.simulation.noise_rms, params.simulation.noise_resample_interval, seed)
    }

    pub fn quiet() -> Self {
        NoiseProcess { relative_rms: 0.0, resample_interval: 0.2e-6, seed: 0 }
    }

    pub fn with_rms(&self, relative_rms: f64) -> Self {
        NoiseProcess { relative_rms, ..*self }
    }

    /// Checks that the noise spectrum is still flat at twice the axial trap frequency.
    pub fn check_resolves(&self, axial_trap_freq: f64) -> Result<(), DynamicsError> {
        if self.resample_interval * 2.0 * axial_trap_freq / TWO_PI >= 0.5 {
            return Err(DynamicsError::NoiseTooSlow { interval: self.resample_interval });
        }
        Ok(())
    }

    /// Noise process for trajectory `seed`; independent across trajectories.
    pub fn for_trajectory(&self, seed: u64) -> NoiseTrack {
        NoiseTrack::new(NoiseProcess { seed: derive_seed(self.seed ^ seed, STREAM_NOISE), ..*self })
    }

    /// One-sided spectral density of the relative noise at frequency `f` (1/Hz).
    pub fn spectral_density(&self, f: f64) -> f64 {
        let x = std::f64::consts::PI * f * self.resample_interval;
        let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
        2.0 * self.relative_rms * self.relative_rms * self.resample_interval * sinc * sinc
    }

    /// Parametric energy growth rate of a harmonic trap at angular frequency `omega`.
    pub fn parametric_heating_rate(&self, omega: f64) -> f64 {
        let nu = omega / TWO_PI;
        std::f64::consts::PI.powi(2) * nu * nu * self.spectral_density(2.0 * nu)
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller with a fixed two-word budget so that interval k always reads
    // the same words of the stream.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
}

/// Relative depth fluctuation epsilon(t) of a noise process (random access).
pub fn parametric_noise_sample(noise: &NoiseProcess, t: f64) -> f64 {
    if noise.relative_rms == 0.0 {
        return 0.0;
    }
    let k = (t.max(0.0) / noise.resample_interval).floor() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_word_pos(4 * k as u128);
    noise.relative_rms * unit_gaussian(&mut rng)
}

/// Sequential reader of a noise process; same values as
/// [`parametric_noise_sample`] without reseeking for forward access.
#[derive(Debug, Clone)]
pub struct NoiseTrack {
    process: NoiseProcess,
    rng: ChaCha8Rng,
    index: u64,
    value: f64,
}

impl NoiseTrack {
    pub fn new(process: NoiseProcess) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(process.seed);
        let value = process.relative_rms * unit_gaussian(&mut rng);
        NoiseTrack { process, rng, index: 0, value }
    }

    pub fn process(&self) -> &NoiseProcess {
        &self.process
    }

    pub fn sample(&mut self, t: f64) -> f64 {
        if self.process.relative_rms == 0.0 {
            return 0.0;
        }
        let k = (t.max(0.0) / self.process.resample_interval).floor() as u64;
        if k != self.index {
            if k != self.index + 1 {
                self.rng.set_word_pos(4 * k as u128);
            }
            self.value = self.process.relative_rms * unit_gaussian(&mut self.rng);
            self.index = k;
        }
        self.value
    }
}

// --- integrator ----------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub model: CavityModel,
    pub dt: f64,
    pub field_mode: FieldMode,
    pub emission: EmissionPattern,
    /// Spontaneous-emission kicks on/off.
    pub recoil: bool,
    recoil_velocity: f64,
    escape_half_length: f64,
    escape_rho_sq: f64,
    inv_mass: f64,
}

impl Integrator {
    pub fn new(params: &ExperimentParams) -> Result<Self, DynamicsError> {
        Self::with_dt(params, params.simulation.dt)
    }

    pub fn with_dt(params: &ExperimentParams, dt: f64) -> Result<Self, DynamicsError> {
        let model = CavityModel::new(params);
        let d = derive(params);
        let cavity_max = 0.1 / model.kappa;
        if !(dt > 0.0) || dt > cavity_max * (1.0 + 1e-9) {
            return Err(DynamicsError::StepTooLarge { dt, max: cavity_max, what: "cavity decay" });
        }
        let trap_max = 0.01 * TWO_PI / d.axial_trap_freq;
        if dt > trap_max * (1.0 + 1e-9) {
            return Err(DynamicsError::StepTooLarge { dt, max: trap_max, what: "axial trap period" });
        }
        let radius = params.simulation.radial_escape_waists * params.cavity.mode_waist;
        Ok(Integrator {
            model,
            dt,
            field_mode: FieldMode::Dynamic,
            emission: params.simulation.emission,
            recoil: true,
            recoil_velocity: d.recoil_velocity,
            escape_half_length: 0.5 * params.cavity.length,
            escape_rho_sq: radius * radius,
            inv_mass: 1.0 / params.constants.atom_mass,
        })
    }

    pub fn params(&self) -> &ExperimentParams {
        &self.model.params
    }

    pub fn detect_escape(&self, atom: &AtomState) -> Option<Escape> {
        if atom.position.z.abs() >= self.escape_half_length {
            Some(Escape::Axial)
        } else if atom.position.rho_squared() >= self.escape_rho_sq {
            Some(Escape::Radial)
        } else {
            None
        }
    }

    /// Kinetic plus trap potential energy at depth `depth`.
    pub fn mechanical_energy(&self, atom: &AtomState, depth: f64) -> f64 {
        atom.kinetic_energy(self.model.mass) + self.model.trap_potential(&atom.position, depth)
    }

    /// Starts a trajectory at `atom` with the given field.
    pub fn start(&self, atom: AtomState, field: FieldAtomState, drive: &DriveSettings) -> TrajectoryState {
        let mode = self.model.mode_sample(&atom.position);
        let force = self.model.force_parts_from(&mode, &field, drive.trap_depth_now);
        TrajectoryState {
            atom,
            field,
            force,
            mode,
            force_depth: drive.trap_depth_now,
            light_work: 0.0,
            hazard: 0.0,
            threshold: f64::INFINITY,
            events: 0,
        }
    }

    /// One velocity-Verlet step of length `self.dt`. `eta` must be the drive
    /// amplitude of `drive`.
    pub fn advance<R: Rng + ?Sized>(&self, st: &mut TrajectoryState, drive: &DriveSettings, eta: f64, rng: &mut R) {
        let dt = self.dt;
        let depth = drive.trap_depth_now;
        let m = &self.model;
        let vacuum = eta == 0.0 && st.field == FieldAtomState::VACUUM;
        if st.force_depth != depth {
            st.force = m.force_parts_from(&st.mode, &st.field, depth);
            st.force_depth = depth;
        }
        let half = 0.5 * dt * self.inv_mass;
        let old_light = st.force.light;
        st.atom.velocity += st.force.total() * half;
        let old = st.atom.position;
        let v = st.atom.velocity;
        let new = Position::new(old.x + v.x * dt, old.y + v.y * dt, old.z + v.z * dt);
        st.atom.position = new;

        let mode = m.mode_sample(&new);
        if !vacuum {
            // coefficients at the step midpoint, from the mean of the end values
            let probe = match self.field_mode {
                FieldMode::Dynamic => 0.5 * (st.mode.probe + mode.probe),
                FieldMode::QuasiStatic => mode.probe,
            };
            let dipole = match self.field_mode {
                FieldMode::Dynamic => 0.5 * (st.mode.dipole + mode.dipole),
                FieldMode::QuasiStatic => mode.dipole,
            };
            let g = m.g0 * probe;
            let da = m.atom_detuning_free - m.stark_per_joule * depth * dipole;
            st.field = match self.field_mode {
                FieldMode::Dynamic => FieldPropagator::new(m, g, da, drive.cavity_detuning, eta, dt).apply(&st.field),
                FieldMode::QuasiStatic => m.steady_state_with(g, da, drive.cavity_detuning, eta),
            };
            if eta == 0.0 && st.field.alpha.norm_sqr() + st.field.sigma.norm_sqr() < 1e-40 {
                st.field = FieldAtomState::VACUUM;
            }
        }
        st.force = m.force_parts_from(&mode, &st.field, depth);
        st.mode = mode;
        st.atom.velocity += st.force.total() * half;
        st.light_work += 0.5 * (old_light + st.force.light).dot(&Vector3::new(new.x - old.x, new.y - old.y, new.z - old.z));

        if !vacuum && self.recoil {
            st.hazard += m.spontaneous_rate(&st.field) * dt;
            if st.threshold.is_infinite() {
                st.threshold = Exp1.sample(rng);
            }
            while st.hazard >= st.threshold {
                st.hazard -= st.threshold;
                st.threshold = Exp1.sample(rng);
                self.kick(st, rng);
            }
        }
        st.atom.time += dt;
    }

    fn kick<R: Rng + ?Sized>(&self, st: &mut TrajectoryState, rng: &mut R) {
        let absorb = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let emit = match self.emission {
            EmissionPattern::Isotropic => isotropic_direction(rng),
            EmissionPattern::Dipole => dipole_direction(rng),
        };
        st.atom.velocity += self.recoil_velocity * (Vector3::new(0.0, 0.0, absorb) + emit);
        st.events += 1;
    }
}

/// Everything a trajectory carries from step to step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub atom: AtomState,
    pub field: FieldAtomState,
    pub force: ForceParts,
    force_depth: f64,
    /// mode functions at the current position
    mode: ModeSample,
    /// Work done by the light (non-trap) forces so far (J).
    pub light_work: f64,
    hazard: f64,
    threshold: f64,
    /// Number of spontaneous-emission events so far.
    pub events: u64,
}

pub fn isotropic_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let cos_t: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TWO_PI);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// Emission pattern `sin^2` about a dipole along x (transverse to the cavity axis).
pub fn dipole_direction<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let u = isotropic_direction(rng);
        if rng.random::<f64>() <= 1.0 - u.x * u.x {
            return u;
        }
    }
}

/// Single step with an explicit noise process, following the operation
/// signature used in the documentation: draws the depth from `noise` at the
/// current time.
pub fn step<R: Rng + ?Sized>(
    integrator: &Integrator,
    atom: &AtomState,
    field: &FieldAtomState,
    drive: &DriveSettings,
    noise: &mut NoiseTrack,
    rng: &mut R,
) -> (AtomState, FieldAtomState) {
    let eps = noise.sample(atom.time + 0.5 * integrator.dt);
    let drive = DriveSettings { trap_depth_now: (drive.trap_depth_now * (1.0 + eps)).max(0.0), ..*drive };
    let mut st = integrator.start(*atom, *field, &drive);
    integrator.advance(&mut st, &drive, integrator.model.drive_eta(drive.probe_power), rng);
    (st.atom, st.field)
}

// --- initial conditions --------------------------------------------------

/// Atom state at the moment of capture: position Gaussian around the central
/// antinode, axial velocity thermal, radial kinetic energy equal to the guide
/// depth at the sampled radius (the atom fell into the guide from rest).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSampler {
    pub axial_temperature: f64,
    pub position_spread: f64,
    pub radial_spread: f64,
    pub guide_depth: f64,
    mass: f64,
    boltzmann: f64,
    mode_waist: f64,
    dipole_wavenumber: f64,
}

impl InitSampler {
    pub fn from_params(p: &ExperimentParams) -> Self {
        InitSampler {
            axial_temperature: p.simulation.axial_temperature,
            position_spread: p.simulation.position_spread,
            radial_spread: p.simulation.radial_spread,
            guide_depth: p.trap.guide_depth,
            mass: p.constants.atom_mass,
            boltzmann: p.constants.boltzmann,
            mode_waist: p.cavity.mode_waist,
            dipole_wavenumber: p.cavity.dipole_wavenumber(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AtomState {
        let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let z = self.position_spread * n(rng);
        let x = self.radial_spread * n(rng);
        let y = self.radial_spread * n(rng);
        let pos = Position::new(x, y, z);
        let vz = (self.boltzmann * self.axial_temperature / self.mass).sqrt() * n(rng);
        let c = (self.dipole_wavenumber * z).cos();
        let radial_ke = self.guide_depth * c * c * (-2.0 * pos.rho_squared() / (self.mode_waist * self.mode_waist)).exp();
        let speed = (2.0 * radial_ke / self.mass).sqrt();
        let phi: f64 = rng.random_range(0.0..TWO_PI);
        AtomState { position: pos, velocity: Vector3::new(speed * phi.cos(), speed * phi.sin(), vz), time: 0.0 }
    }
}

// --- trajectories ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceOptions {
    /// Sampling period of the trace (s). Rounded to whole steps.
    pub period: f64,
    /// Keep samples in the outcome (otherwise only the observer sees them).
    pub keep: bool,
}

/// Runs one trajectory from `init` until escape or `horizon`. The observer,
/// when given, sees every trace sample as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn simulate_observed(
    integrator: &Integrator,
    init: AtomState,
    schedule: &ProbeSchedule,
    noise: &NoiseProcess,
    seed: u64,
    horizon: f64,
    trace: Option<TraceOptions>,
    mut observer: Option<&mut dyn FnMut(&TraceSample)>,
) -> Result<TrajectoryOutcome, DynamicsError> {
    schedule.covers(horizon)?;
    let dt = integrator.dt;
    let m = &integrator.model;
    let total_steps = (horizon / dt).round() as u64;
    let mut rng = stream_rng(seed, STREAM_KICKS);
    let mut track = noise.for_trajectory(seed);
    let sample_every = trace.map(|t| ((t.period / dt).round() as u64).max(1));
    let mut samples = trace.filter(|t| t.keep).map(|_| Vec::new());

    let first = schedule.segments()[0];
    let depth0 = first.trap_depth * (1.0 + track.sample(0.5 * dt)).max(0.0);
    let drive0 = DriveSettings::new(first.probe_power, first.cavity_detuning, depth0);
    let field0 = if first.probe_power > 0.0 {
        m.steady_state(&init.position, &drive0)
    } else {
        FieldAtomState::VACUUM
    };
    let mut st = integrator.start(AtomState { time: 0.0, ..init }, field0, &drive0);

    let mut n: u64 = 0;
    let mut seg_end: u64 = 0;
    let mut elapsed = 0.0;
    let mut record = |st: &TrajectoryState, seg: usize, samples: &mut Option<Vec<TraceSample>>| {
        let s = TraceSample {
            time: st.atom.time,
            position: st.atom.position,
            velocity: st.atom.velocity,
            photon_number: st.field.photon_number(),
            output_power: m.transmitted_power(&st.field),
            segment: seg,
        };
        if let Some(obs) = observer.as_mut() {
            obs(&s);
        }
        if let Some(v) = samples.as_mut() {
            v.push(s);
        }
    };
    if sample_every.is_some() {
        record(&st, 0, &mut samples);
    }
    for (seg_index, seg) in schedule.iter().enumerate() {
        if n >= total_steps {
            break;
        }
        elapsed += seg.duration;
        seg_end = ((elapsed / dt).round() as u64).min(total_steps).max(seg_end);
        let eta = m.drive_eta(seg.probe_power);
        let mut drive = DriveSettings::new(seg.probe_power, seg.cavity_detuning, seg.trap_depth);
        while n < seg_end {
            let eps = track.sample((n as f64 + 0.5) * dt);
            drive.trap_depth_now = (seg.trap_depth * (1.0 + eps)).max(0.0);
            integrator.advance(&mut st, &drive, eta, &mut rng);
            n += 1;
            st.atom.time = n as f64 * dt;
            if let Some(every) = sample_every {
                if n % every == 0 {
                    record(&st, seg_index, &mut samples);
                }
            }
            if let Some(escape) = integrator.detect_escape(&st.atom) {
                return Ok(TrajectoryOutcome { survival_time: st.atom.time, escape, trace: samples });
            }
        }
    }
    Ok(TrajectoryOutcome { survival_time: total_steps as f64 * dt, escape: Escape::Censored, trace: samples })
}

pub fn simulate_trajectory(
    integrator: &Integrator,
    init: AtomState,
    schedule: &ProbeSchedule,
    noise: &NoiseProcess,
    seed: u64,
    horizon: f64,
    trace: Option<TraceOptions>,
) -> Result<TrajectoryOutcome, DynamicsError> {
    simulate_observed(integrator, init, schedule, noise, seed, horizon, trace, None)
}

/// Maps `f(index, seed)` over an ensemble in parallel; results come back in
/// index order and do not depend on scheduling.
pub fn ensemble_map<T, F>(n: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(|i| f(i, derive_seed(base_seed, i as u64))).collect()
}

/// Initial state of ensemble member with trajectory seed `seed`.
pub fn sample_initial(sampler: &InitSampler, seed: u64) -> AtomState {
    sampler.sample(&mut stream_rng(seed, STREAM_INIT))
}

#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    n: usize,
    sampler: &InitSampler,
    schedule: &ProbeSchedule,
    integrator: &Integrator,
    noise: &NoiseProcess,
    base_seed: u64,
    horizon: f64,
) -> Result<Vec<TrajectoryOutcome>, DynamicsError> {
    if n == 0 {
        return Err(DynamicsError::EmptyEnsemble);
    }
    schedule.covers(horizon)?;
    ensemble_map(n, base_seed, |_, seed| {
        simulate_trajectory(integrator, sample_initial(sampler, seed), schedule, noise, seed, horizon, None)
    })
    .into_iter()
    .collect()
}

// --- harmonic surrogate ----------------------------------------------------

/// Energy growth rate (1/s) of an ensemble of 1D harmonic oscillators at
/// angular frequency `omega` whose spring constant carries the relative
/// noise `noise`. Oscillator `i` sees noise realisation `i`, so two calls with
/// different `omega` share identical noise.
pub fn harmonic_heating_rate(omega: f64, noise: &NoiseProcess, duration: f64, n_oscillators: usize, seed: u64) -> f64 {
    let period = TWO_PI / omega;
    let sub = (noise.resample_interval / (period / 100.0)).ceil().max(1.0);
    let dt = noise.resample_interval / sub;
    let steps = (duration / dt).round() as u64;
    let n_samples = 50u64;
    let every = (steps / n_samples).max(1);
    let series: Vec<Vec<f64>> = ensemble_map(n_oscillators, seed, |i, s| {
        let mut rng = stream_rng(s, STREAM_INIT);
        let phase: f64 = rng.random_range(0.0..TWO_PI);
        let (mut x, mut v) = (phase.cos() / omega, phase.sin());
        let mut track = NoiseTrack::new(NoiseProcess { seed: derive_seed(seed, i as u64), ..*noise });
        let w2 = omega * omega;
        let mut out = Vec::with_capacity(n_samples as usize + 1);
        out.push(0.5 * v * v + 0.5 * w2 * x * x);
        for k in 0..steps {
            let eps = track.sample((k as f64 + 0.5) * dt);
            let a = -w2 * (1.0 + eps);
            v += 0.5 * dt * a * x;
            x += dt * v;
            v += 0.5 * dt * a * x;
            if (k + 1) % every == 0 {
                out.push(0.5 * v * v + 0.5 * w2 * x * x);
            }
        }
        out
    });
    let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..len {
        let t = j as f64 * every as f64 * dt;
        let mean = series.iter().map(|s| s[j]).sum::<f64>() / series.len() as f64;
        let y = mean.ln();
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    let nf = len as f64;
    (nf * sxy - sx * sy) / (nf * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PICOWATT;
    use crate::schedule::Segment;

    fn params() -> ExperimentParams {
        ExperimentParams::default()
    }

    fn dark(p: &ExperimentParams, horizon: f64) -> ProbeSchedule {
        ProbeSchedule::constant(horizon, 0.0, 0.0, p.trap.trap_depth).unwrap()
    }

    #[test]
    fn rejects_coarse_steps() {
        let p = params();
        assert!(matches!(Integrator::with_dt(&p, 20e-9), Err(DynamicsError::StepTooLarge { .. })));
        assert!(Integrator::with_dt(&p, 2e-9).is_ok());
    }

    #[test]
    fn atom_at_rest_stays_at_rest() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let out = simulate_trajectory(
            &integ,
            AtomState::at_rest(Position::ORIGIN),
            &dark(&p, 1e-4),
            &NoiseProcess::quiet(),
            1,
            1e-4,
            Some(TraceOptions { period: 1e-5, keep: true }),
        )
        .unwrap();
        assert_eq!(out.escape, Escape::Censored);
        for s in out.trace.unwrap() {
            assert!(s.velocity.norm() <= 1e-12);
            assert!(s.position.z.abs() <= 1e-12);
        }
    }

    #[test]
    fn small_oscillation_has_axial_frequency() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let d = derive(&p);
        let period = TWO_PI / d.axial_trap_freq;
        let horizon = 100.0 * period;
        let mut zs = Vec::new();
        let mut obs = |s: &TraceSample| zs.push((s.time, s.position.z));
        simulate_observed(
            &integ,
            AtomState::at_rest(Position::new(0.0, 0.0, 2e-9)),
            &dark(&p, horizon),
            &NoiseProcess::quiet(),
            1,
            horizon,
            Some(TraceOptions { period: integ.dt, keep: false }),
            Some(&mut obs),
        )
        .unwrap();
        // downward zero crossings, linearly interpolated
        let crossings: Vec<f64> = zs
            .windows(2)
            .filter(|w| w[0].1 > 0.0 && w[1].1 <= 0.0)
            .map(|w| w[0].0 + (w[1].0 - w[0].0) * w[0].1 / (w[0].1 - w[1].1))
            .collect();
        let measured = (crossings.len() - 1) as f64 / (crossings.last().unwrap() - crossings[0]);
        let expected = d.axial_trap_freq / TWO_PI;
        assert!((measured / expected - 1.0).abs() < 0.01, "{measured} vs {expected}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let sched = ProbeSchedule::constant(2e-4, 2.0 * PICOWATT, 0.0, p.trap.trap_depth).unwrap();
        let noise = NoiseProcess::new(0.01, 0.2e-6, 4).unwrap();
        let init = sample_initial(&InitSampler::from_params(&p), 99);
        let a = simulate_trajectory(&integ, init, &sched, &noise, 5, 2e-4, Some(TraceOptions { period: 1e-6, keep: true })).unwrap();
        let b = simulate_trajectory(&integ, init, &sched, &noise, 5, 2e-4, Some(TraceOptions { period: 1e-6, keep: true })).unwrap();
        assert_eq!(a, b);

        let mut rng_a = ChaCha8Rng::seed_from_u64(3);
        let mut rng_b = ChaCha8Rng::seed_from_u64(3);
        let drive = DriveSettings::new(2.0 * PICOWATT, 0.0, p.trap.trap_depth);
        let field = integ.model.steady_state(&init.position, &drive);
        let (mut ta, mut tb) = (noise.for_trajectory(1), noise.for_trajectory(1));
        let sa = step(&integ, &init, &field, &drive, &mut ta, &mut rng_a);
        let sb = step(&integ, &init, &field, &drive, &mut tb, &mut rng_b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn escape_classification() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let w0 = p.cavity.mode_waist;
        let at = |x: f64, z: f64| AtomState::at_rest(Position::new(x, 0.0, z));
        assert_eq!(integ.detect_escape(&at(0.0, 60e-6)), Some(Escape::Axial));
        assert_eq!(integ.detect_escape(&at(3.0 * w0, 0.0)), Some(Escape::Radial));
        assert_eq!(integ.detect_escape(&at(0.0, 0.0)), None);
        assert_eq!(integ.detect_escape(&at(3.0 * w0, 60e-6)), Some(Escape::Axial));
    }

    #[test]
    fn noise_track_matches_random_access() {
        let noise = NoiseProcess::new(0.02, 0.2e-6, 77).unwrap();
        let mut track = NoiseTrack::new(noise);
        for k in [0u64, 1, 2, 3, 10, 11, 500, 501] {
            let t = (k as f64 + 0.5) * 0.2e-6;
            assert_eq!(track.sample(t), parametric_noise_sample(&noise, t));
        }
        assert_eq!(parametric_noise_sample(&noise.with_rms(0.0), 1e-3), 0.0);
    }

    #[test]
    fn noise_sample_mean_is_zero() {
        let noise = NoiseProcess::new(0.05, 1.0, 8).unwrap();
        let mut track = NoiseTrack::new(noise);
        let n = 1_000_000;
        let mean = (0..n).map(|k| track.sample(k as f64 + 0.5)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * 0.05 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn dark_trap_without_noise_keeps_atom() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let init = AtomState { velocity: Vector3::new(0.1, 0.05, 0.3), ..AtomState::at_rest(Position::new(1e-6, 0.0, 20e-9)) };
        assert!(integ.mechanical_energy(&init, p.trap.trap_depth) < 0.0);
        let out = simulate_trajectory(&integ, init, &dark(&p, 2e-3), &NoiseProcess::quiet(), 3, 2e-3, None).unwrap();
        assert_eq!(out.escape, Escape::Censored);
        assert_eq!(out.survival_time, 2e-3);
    }

    #[test]
    fn kick_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 20000;
        let mut mean = Vector3::zeros();
        for _ in 0..n {
            let u = isotropic_direction(&mut rng);
            assert!((u.norm() - 1.0).abs() < 1e-12);
            mean += u;
        }
        mean /= n as f64;
        // each component has variance 1/3
        let sigma = (1.0f64 / 3.0 / n as f64).sqrt();
        assert!(mean.z.abs() < 3.0 * sigma);
        let d = dipole_direction(&mut rng);
        assert!((d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recoil_kicks_are_bounded() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let vr = derive(&p).recoil_velocity;
        let lp = p.cavity.probe_wavelength;
        let pos = Position::axial_radial(lp / 2.0, 0.0);
        let drive = DriveSettings::new(50.0 * PICOWATT, 0.0, 0.0);
        let field = integ.model.steady_state(&pos, &drive);
        assert!(field.is_low_saturation());
        let mut st = integ.start(AtomState::at_rest(pos), field, &drive);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eta = integ.model.drive_eta(drive.probe_power);
        let mut kicks = Vec::new();
        // the atom is put back at rest on the antinode every step
        for _ in 0..200_000 {
            st.atom = AtomState::at_rest(pos);
            let before = st.events;
            integ.advance(&mut st, &drive, eta, &mut rng);
            if st.events > before {
                kicks.push(st.atom.velocity);
            }
        }
        assert!(kicks.len() > 20, "{}", kicks.len());
        // the conservative change within one step is ~1e-9 of a recoil here
        for k in &kicks {
            for c in k.iter() {
                assert!(c.abs() <= 2.0 * vr * (1.0 + 1e-3));
            }
        }
        let n = kicks.len() as f64;
        let mean_z = kicks.iter().map(|k| k.z).sum::<f64>() / n;
        let var_z = kicks.iter().map(|k| (k.z - mean_z).powi(2)).sum::<f64>() / n;
        assert!(mean_z.abs() <= 3.0 * (var_z / n).sqrt());
    }

    #[test]
    fn ensemble_is_order_independent() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let noise = NoiseProcess::new(0.05, 0.2e-6, 9).unwrap();
        let sched = dark(&p, 3e-4);
        let sampler = InitSampler::from_params(&p);
        let all = run_ensemble(4, &sampler, &sched, &integ, &noise, 13, 3e-4).unwrap();
        let one = run_ensemble(1, &sampler, &sched, &integ, &noise, 13, 3e-4).unwrap();
        assert_eq!(all[0], one[0]);
        let seed2 = derive_seed(13, 2);
        let direct = simulate_trajectory(&integ, sample_initial(&sampler, seed2), &sched, &noise, seed2, 3e-4, None).unwrap();
        assert_eq!(all[2], direct);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let again = pool.install(|| run_ensemble(4, &sampler, &sched, &integ, &noise, 13, 3e-4).unwrap());
        assert_eq!(all, again);
    }

    #[test]
    fn segment_boundaries_carry_the_field() {
        let p = params();
        let integ = Integrator::new(&p).unwrap();
        let sched = ProbeSchedule::new(vec![
            Segment::new(5e-6, 2.0 * PICOWATT, 0.0, 0.0),
            Segment::dark(5e-6, 0.0),
        ])
        .unwrap();
        let out = simulate_trajectory(
            &integ,
            AtomState::at_rest(Position::axial_radial(p.cavity.probe_wavelength / 4.0, 0.0)),
            &sched,
            &NoiseProcess::quiet(),
            1,
            1e-5,
            Some(TraceOptions { period: 1e-8, keep: true }),
        )
        .unwrap();
        let trace = out.trace.unwrap();
        let at = |t: f64| trace.iter().find(|s| s.time >= t - 1e-12).unwrap().photon_number;
        // untrapped atom at rest on a probe node: the light switched off at 5 us
        // decays as exp(-2 kappa t), not instantly
        let n_on = at(4.99e-6);
        let n_after = at(5.02e-6);
        assert!(n_after > 0.5 * n_on && n_after < n_on, "{n_on} {n_after}");
        assert!(at(9.9e-6) < 1e-6 * n_on);
    }

    #[test]
    fn harmonic_heating_matches_theory() {
        let noise = NoiseProcess::new(0.3, 0.2e-6, 5).unwrap();
        let omega = TWO_PI * 100e3;
        let expected = noise.parametric_heating_rate(omega);
        let rate = harmonic_heating_rate(omega, &noise, 2.0 / expected, 100, 1);
        assert!((rate / expected - 1.0).abs() < 0.2, "{rate} vs {expected}");
    }
}
