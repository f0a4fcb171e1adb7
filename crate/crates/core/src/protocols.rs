//! Experiment scripts: noise calibration, capture trigger, storage time versus
//! probe power, heat/cool cycles, duty-cycle cooling, detuning scan and the
//! photon-counting detector.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::analysis::{
    escape_fractions, fit_exponential, fit_lifetime, fit_lifetime_times, survival_from_times, AnalysisError,
    EscapeFractions, FitResult, LifetimeEstimate, SurvivalCurve,
};
use crate::cqed::{DriveSettings, Position};
use crate::dynamics::{
    ensemble_map, sample_initial, simulate_observed, DynamicsError, Escape, InitSampler, Integrator, NoiseProcess,
    TraceOptions, TraceSample, TrajectoryOutcome,
};
use crate::params::{ExperimentParams, ParamsError, PICOWATT, TWO_PI};
use crate::schedule::{ProbeSchedule, ScheduleError, Segment};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("target lifetime {target:e} s not bracketed: lifetime {at_max:e} s at the largest noise {eps_max}")]
    NonBracketing { target: f64, eps_max: f64, at_max: f64 },
    #[error("lifetime grew with noise: {longer:e} s at eps {eps_high} vs {shorter:e} s at eps {eps_low}")]
    NonMonotone { eps_low: f64, shorter: f64, eps_high: f64, longer: f64 },
    #[error("calibration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Parameters, integrator, capture sampler and trap noise of one simulated
/// apparatus.
#[derive(Debug, Clone)]
pub struct Setup {
    pub params: ExperimentParams,
    pub integrator: Integrator,
    pub sampler: InitSampler,
    pub noise: NoiseProcess,
}

impl Setup {
    pub fn new(params: &ExperimentParams) -> Result<Self, ProtocolError> {
        params.validate()?;
        let integrator = Integrator::new(params)?;
        let noise = NoiseProcess::from_params(params, 0)?;
        noise.check_resolves(crate::params::derive(params).axial_trap_freq)?;
        Ok(Setup { params: *params, integrator, sampler: InitSampler::from_params(params), noise })
    }

    pub fn with_noise(&self, relative_rms: f64) -> Result<Self, ProtocolError> {
        let mut params = self.params;
        params.simulation.noise_rms = relative_rms;
        let mut s = Setup::new(&params)?;
        s.integrator.field_mode = self.integrator.field_mode;
        s.integrator.recoil = self.integrator.recoil;
        Ok(s)
    }

    pub fn with_params(&self, params: &ExperimentParams) -> Result<Self, ProtocolError> {
        let mut s = Setup::new(params)?;
        s.integrator.field_mode = self.integrator.field_mode;
        s.integrator.recoil = self.integrator.recoil;
        Ok(s)
    }

    /// Guide-to-full depth ramp right after capture, probe as given. Empty
    /// when the configured ramp is instantaneous.
    pub fn capture_prefix(&self, probe_power: f64, cavity_detuning: f64) -> Vec<Segment> {
        let ramp = self.params.simulation.capture_ramp;
        if ramp <= 0.0 {
            return Vec::new();
        }
        let steps = 10;
        let (lo, hi) = (self.params.trap.guide_depth, self.params.trap.trap_depth);
        (0..steps)
            .map(|k| {
                let depth = lo + (hi - lo) * (k as f64 + 0.5) / steps as f64;
                Segment::new(ramp / steps as f64, probe_power, cavity_detuning, depth)
            })
            .collect()
    }

    /// Constant probe at full depth after the capture ramp.
    pub fn constant_schedule(&self, probe_power: f64, cavity_detuning: f64, horizon: f64) -> Result<ProbeSchedule, ProtocolError> {
        let mut segs = self.capture_prefix(probe_power, cavity_detuning);
        segs.push(Segment::new(horizon, probe_power, cavity_detuning, self.params.trap.trap_depth));
        Ok(ProbeSchedule::new(segs)?)
    }

    /// Runs `n` captured atoms under `schedule`, indexed deterministically by
    /// `seed`.
    pub fn run(&self, schedule: &ProbeSchedule, n: usize, seed: u64, horizon: f64) -> Result<Vec<TrajectoryOutcome>, ProtocolError> {
        if n == 0 {
            return Err(ProtocolError::Invalid("ensemble size must be at least 1".into()));
        }
        schedule.covers(horizon)?;
        let out: Result<Vec<_>, _> = ensemble_map(n, seed, |_, s| {
            simulate_observed(&self.integrator, sample_initial(&self.sampler, s), schedule, &self.noise, s, horizon, None, None)
        })
        .into_iter()
        .collect();
        Ok(out?)
    }

    pub fn empty_output(&self, probe_power: f64, cavity_detuning: f64) -> f64 {
        let m = &self.integrator.model;
        let drive = DriveSettings::new(probe_power, cavity_detuning, 0.0);
        m.transmitted_power(&m.steady_state_with(0.0, 0.0, cavity_detuning, m.drive_eta(drive.probe_power)))
    }
}

// --- dark-trap calibration ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub n: usize,
    pub seed: u64,
    /// Simulated time per trajectory; a few target lifetimes.
    pub horizon: f64,
    /// Accepted relative mismatch of the fitted lifetime.
    pub tolerance: f64,
    pub eps_max: f64,
    pub max_iterations: usize,
}

impl CalibrationOptions {
    pub fn for_target(target: f64, n: usize, seed: u64) -> Self {
        CalibrationOptions { n, seed, horizon: 5.0 * target, tolerance: 0.05, eps_max: 0.5, max_iterations: 14 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStep {
    pub relative_rms: f64,
    pub lifetime: LifetimeEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub noise: NoiseProcess,
    pub target: f64,
    pub lifetime: LifetimeEstimate,
    pub outcomes: Vec<TrajectoryOutcome>,
    pub history: Vec<CalibrationStep>,
}

/// Dark-trap lifetime at noise amplitude `eps`.
pub fn dark_lifetime(setup: &Setup, eps: f64, n: usize, seed: u64, horizon: f64) -> Result<(LifetimeEstimate, Vec<TrajectoryOutcome>), ProtocolError> {
    let s = setup.with_noise(eps)?;
    let schedule = s.constant_schedule(0.0, 0.0, horizon)?;
    let outcomes = s.run(&schedule, n, seed, horizon)?;
    Ok((fit_lifetime(&outcomes, horizon, seed)?, outcomes))
}

fn check_monotone(history: &[CalibrationStep]) -> Result<(), ProtocolError> {
    for a in history {
        for b in history {
            if a.relative_rms < b.relative_rms {
                // b is noisier; it may not outlive a beyond both intervals
                let (la, lb) = (a.lifetime.lifetime, b.lifetime.lifetime);
                if lb > la && b.lifetime.ci68.0 > a.lifetime.ci68.1 {
                    return Err(ProtocolError::NonMonotone {
                        eps_low: a.relative_rms,
                        shorter: la,
                        eps_high: b.relative_rms,
                        longer: lb,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Finds the trap-noise amplitude whose dark-trap lifetime matches `target`.
/// The search keeps a bracket in log(eps) and steps with the local power law
/// of lifetime versus noise, falling back to bisection. All evaluations share
/// the same trajectory seeds.
pub fn calibrate_noise(setup: &Setup, target: f64, opts: &CalibrationOptions) -> Result<Calibration, ProtocolError> {
    if !(target > 0.0) {
        return Err(ProtocolError::Invalid(format!("target lifetime must be positive, got {target}")));
    }
    let mut history: Vec<CalibrationStep> = Vec::new();
    let eval = |eps: f64, history: &mut Vec<CalibrationStep>| -> Result<(f64, Vec<TrajectoryOutcome>), ProtocolError> {
        let (est, outcomes) = dark_lifetime(setup, eps, opts.n, opts.seed, opts.horizon)?;
        let l = est.lifetime;
        history.push(CalibrationStep { relative_rms: eps, lifetime: est });
        history.sort_by(|a, b| a.relative_rms.total_cmp(&b.relative_rms));
        check_monotone(history)?;
        Ok((l, outcomes))
    };

    let (at_max, _) = eval(opts.eps_max, &mut history)?;
    if at_max > target * (1.0 + opts.tolerance) {
        return Err(ProtocolError::NonBracketing { target, eps_max: opts.eps_max, at_max });
    }
    // (eps, lifetime) with lifetime above / below the target
    let mut above: Option<(f64, f64)> = None;
    let mut below = (opts.eps_max, at_max);
    // parametric heating scales as eps^2, so lifetime ~ 1/eps^2
    let mut eps = opts.eps_max * (at_max / target).sqrt();
    for _ in 0..opts.max_iterations {
        let (l, outcomes) = eval(eps, &mut history)?;
        if (l / target - 1.0).abs() <= opts.tolerance {
            let step = history.iter().find(|h| h.relative_rms == eps).unwrap().clone();
            let noise = setup.with_noise(eps)?.noise;
            return Ok(Calibration { noise, target, lifetime: step.lifetime, outcomes, history });
        }
        if l > target {
            above = Some((eps, l));
        } else {
            below = (eps, l);
        }
        let (lo, hi) = (above.map(|a| a.0).unwrap_or(0.0), below.0);
        let proposal = match above {
            Some((ea, la)) if la.is_finite() => {
                let slope = (below.1.ln() - la.ln()) / (below.0.ln() - ea.ln());
                if slope < 0.0 {
                    (ea.ln() + (target.ln() - la.ln()) / slope).exp()
                } else {
                    (ea * below.0).sqrt()
                }
            }
            _ => eps * (l.min(1e3 * target) / target).sqrt(),
        };
        eps = if proposal > lo && proposal < hi && proposal.is_finite() {
            proposal
        } else if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * hi
        };
    }
    Err(ProtocolError::NoConvergence(opts.max_iterations))
}

// --- capture ---------------------------------------------------------------------------

/// Relative capture threshold on the cavity transmission.
pub const CAPTURE_THRESHOLD: f64 = 0.09;

/// `trace[k]` is the mean relative transmission over `[k dt, (k+1) dt)`.
/// Returns the first time at which the transmission has stayed below
/// `threshold` for a full `window`.
pub fn capture_trigger(trace: &[f64], dt: f64, threshold: f64, window: f64) -> Option<f64> {
    let need = ((window / dt).round() as usize).max(1);
    let mut run = 0;
    for (k, &x) in trace.iter().enumerate() {
        if x < threshold {
            run += 1;
            if run == need {
                return Some((k + 1) as f64 * dt);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitSummary {
    pub transits: usize,
    /// Transits whose quasi-static transmission stays below half the
    /// threshold for two windows.
    pub well_coupled: usize,
    pub triggered_well_coupled: usize,
    pub triggered_total: usize,
}

impl TransitSummary {
    pub fn trigger_efficiency(&self) -> f64 {
        self.triggered_well_coupled as f64 / self.well_coupled.max(1) as f64
    }
}

/// Atoms falling through the guide trap across the mode, probed on cavity
/// resonance at `probe_power`; the capture trigger runs on the simulated
/// transmission.
pub fn transit_capture(setup: &Setup, probe_power: f64, window: f64, n: usize, seed: u64) -> Result<TransitSummary, ProtocolError> {
    let p = &setup.params;
    let w0 = p.cavity.mode_waist;
    let guide = p.trap.guide_depth;
    let horizon = 300e-6;
    let bin = 1e-6;
    let schedule = ProbeSchedule::new(vec![Segment::new(horizon, probe_power, 0.0, guide)])?;
    let empty = setup.empty_output(probe_power, 0.0);
    let m = &setup.integrator.model;
    let results = ensemble_map(n, seed, |_, s| -> Result<(bool, bool), DynamicsError> {
        let mut init = sample_initial(&setup.sampler, s);
        // start two waists out, heading for the axis with the guide-depth speed
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        let b = rng.random_range(-0.5..0.5) * w0;
        init.position = Position::new(-2.0 * w0, b, init.position.z);
        let speed = (2.0 * guide / p.constants.atom_mass).sqrt();
        init.velocity.x = speed;
        init.velocity.y = 0.0;
        let steps_per_bin = (bin / setup.integrator.dt).round() as usize;
        let mut dyn_bins: Vec<f64> = Vec::new();
        let mut qs_bins: Vec<f64> = Vec::new();
        let (mut acc, mut acc_qs, mut k) = (0.0, 0.0, 0usize);
        let mut obs = |t: &TraceSample| {
            if t.time == 0.0 {
                return;
            }
            let drive = DriveSettings::new(probe_power, 0.0, guide);
            acc += t.output_power / empty;
            acc_qs += m.transmitted_power(&m.steady_state(&t.position, &drive)) / empty;
            k += 1;
            if k == steps_per_bin {
                dyn_bins.push(acc / k as f64);
                qs_bins.push(acc_qs / k as f64);
                acc = 0.0;
                acc_qs = 0.0;
                k = 0;
            }
        };
        let trace = TraceOptions { period: setup.integrator.dt, keep: false };
        simulate_observed(&setup.integrator, init, &schedule, &setup.noise, s, horizon, Some(trace), Some(&mut obs))?;
        let well = capture_trigger(&qs_bins, bin, 0.5 * CAPTURE_THRESHOLD, 2.0 * window).is_some();
        let fired = capture_trigger(&dyn_bins, bin, CAPTURE_THRESHOLD, window).is_some();
        Ok((well, fired))
    });
    let mut summary = TransitSummary { transits: n, well_coupled: 0, triggered_well_coupled: 0, triggered_total: 0 };
    for r in results {
        let (well, fired) = r?;
        summary.well_coupled += well as usize;
        summary.triggered_well_coupled += (well && fired) as usize;
        summary.triggered_total += fired as usize;
    }
    Ok(summary)
}


// --- storage time ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct StoragePoint {
    pub probe_power: f64,
    pub lifetime: LifetimeEstimate,
    pub escapes: EscapeFractions,
    pub outcomes: Vec<TrajectoryOutcome>,
}

/// Lifetime of captured atoms under a constant probe on cavity resonance, one
/// ensemble per power. Every power uses the same trajectory seeds.
pub fn storage_vs_power(setup: &Setup, powers: &[f64], n: usize, seed: u64, horizon: f64) -> Result<Vec<StoragePoint>, ProtocolError> {
    powers.iter().map(|&p| storage_point(setup, p, 0.0, n, seed, horizon)).collect()
}

pub fn storage_point(setup: &Setup, probe_power: f64, cavity_detuning: f64, n: usize, seed: u64, horizon: f64) -> Result<StoragePoint, ProtocolError> {
    let schedule = setup.constant_schedule(probe_power, cavity_detuning, horizon)?;
    let outcomes = setup.run(&schedule, n, seed, horizon)?;
    Ok(StoragePoint {
        probe_power,
        lifetime: fit_lifetime(&outcomes, horizon, seed)?,
        escapes: escape_fractions(&outcomes),
        outcomes,
    })
}

// --- heat / cool cycles -------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatCoolOptions {
    pub atoms: usize,
    pub cycles_per_atom: usize,
    pub heat_duration: f64,
    pub heat_detuning: f64,
    pub cool_duration: f64,
    pub cool_detuning: f64,
    pub probe_power: f64,
    /// Bin width of the averaged trace.
    pub bin: f64,
}

impl Default for HeatCoolOptions {
    fn default() -> Self {
        HeatCoolOptions {
            atoms: 50,
            cycles_per_atom: 10,
            heat_duration: 100e-6,
            heat_detuning: TWO_PI * 9e6,
            cool_duration: 500e-6,
            cool_detuning: 0.0,
            probe_power: 2.25 * PICOWATT,
            bin: 2e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatCoolResult {
    /// Bin start times measured from the beginning of each cooling interval.
    pub times: Vec<f64>,
    /// Mean output power per bin (W), over cooling intervals completed with
    /// the atom present.
    pub mean_output: Vec<f64>,
    pub cycles_used: usize,
    /// Exponential-plus-offset fit of `mean_output` against `times`.
    pub fit: FitResult,
    /// mean_output at the start over mean_output 100 us later.
    pub drop_factor: f64,
}

impl HeatCoolResult {
    pub fn relaxation_time(&self) -> f64 {
        1.0 / self.fit.rate
    }

    /// Fitted relaxation rate, reported as beta/m (1/s).
    pub fn beta_over_m(&self) -> f64 {
        self.fit.rate
    }
}

pub fn heat_cool_cycle(setup: &Setup, opts: &HeatCoolOptions, seed: u64) -> Result<HeatCoolResult, ProtocolError> {
    let depth = setup.params.trap.trap_depth;
    let heat = Segment::new(opts.heat_duration, opts.probe_power, opts.heat_detuning, depth);
    let cool = Segment::new(opts.cool_duration, opts.probe_power, opts.cool_detuning, depth);
    let prefix = setup.capture_prefix(opts.probe_power, opts.cool_detuning);
    let t0: f64 = prefix.iter().map(|s| s.duration).sum();
    let cycle = opts.heat_duration + opts.cool_duration;
    let horizon = t0 + cycle * opts.cycles_per_atom as f64;
    let schedule = ProbeSchedule::with_prefix(prefix, &[heat, cool], horizon)?;
    let bins = (opts.cool_duration / opts.bin).round() as usize;
    let dt = setup.integrator.dt;
    if opts.bin < dt {
        return Err(ProtocolError::Invalid("trace bin shorter than the time step".into()));
    }

    let per_atom = ensemble_map(opts.atoms, seed, |_, s| -> Result<(Vec<Vec<(f64, usize)>>, f64), DynamicsError> {
        // per cycle: (sum of output power, sample count) per bin
        let mut cycles = vec![vec![(0.0, 0usize); bins]; opts.cycles_per_atom];
        let mut obs = |t: &TraceSample| {
            let rel = t.time - t0;
            if rel <= 0.0 {
                return;
            }
            let c = (rel / cycle).floor() as usize;
            let tau = rel - c as f64 * cycle - opts.heat_duration;
            if c < cycles.len() && tau > 0.0 {
                // sample at the end of a step of length dt covers (t - dt, t]
                let b = ((tau - 0.5 * dt) / opts.bin).floor() as usize;
                if b < bins {
                    cycles[c][b].0 += t.output_power;
                    cycles[c][b].1 += 1;
                }
            }
        };
        let trace = TraceOptions { period: dt, keep: false };
        let init = sample_initial(&setup.sampler, s);
        let out = simulate_observed(&setup.integrator, init, &schedule, &setup.noise, s, horizon, Some(trace), Some(&mut obs))?;
        let survived = if out.escape == Escape::Censored { f64::INFINITY } else { out.survival_time };
        Ok((cycles, survived))
    });

    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    let mut used = 0;
    for r in per_atom {
        let (cycles, survived) = r?;
        for (c, bins_c) in cycles.iter().enumerate() {
            let end = t0 + (c + 1) as f64 * cycle;
            if end > survived {
                break;
            }
            used += 1;
            for (b, &(s, k)) in bins_c.iter().enumerate() {
                sum[b] += s;
                count[b] += k;
            }
        }
    }
    if used == 0 {
        return Err(ProtocolError::Invalid("no cooling interval completed with the atom present".into()));
    }
    let times: Vec<f64> = (0..bins).map(|b| b as f64 * opts.bin).collect();
    let mean_output: Vec<f64> = sum.iter().zip(&count).map(|(s, &k)| s / k.max(1) as f64).collect();
    let fit = fit_exponential(&times, &mean_output, true)?;
    let b100 = ((100e-6 / opts.bin).round() as usize).min(bins - 1);
    let drop_factor = mean_output[0] / mean_output[b100];
    Ok(HeatCoolResult { times, mean_output, cycles_used: used, fit, drop_factor })
}

// --- duty-cycle cooling ------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycleOptions {
    pub dark_duration: f64,
    pub cool_duration: f64,
    pub cool_power: f64,
    pub cool_detuning: f64,
}

impl Default for DutyCycleOptions {
    fn default() -> Self {
        DutyCycleOptions { dark_duration: 2e-3, cool_duration: 100e-6, cool_power: 1.5 * PICOWATT, cool_detuning: 0.0 }
    }
}

impl DutyCycleOptions {
    pub fn duty_cycle(&self) -> f64 {
        self.cool_duration / (self.dark_duration + self.cool_duration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycleResult {
    /// Survival against accumulated dark time.
    pub curve: SurvivalCurve,
    pub lifetime: LifetimeEstimate,
    pub duty_cycle: f64,
    pub dark_horizon: f64,
    pub escapes: EscapeFractions,
}

/// Dark storage interrupted by short cooling pulses. Lifetimes count only the
/// time spent in the dark.
pub fn duty_cycle(setup: &Setup, opts: &DutyCycleOptions, n: usize, seed: u64, horizon: f64) -> Result<DutyCycleResult, ProtocolError> {
    let depth = setup.params.trap.trap_depth;
    let mut cycle = vec![Segment::dark(opts.dark_duration, depth)];
    if opts.cool_power > 0.0 {
        cycle.push(Segment::new(opts.cool_duration, opts.cool_power, opts.cool_detuning, depth));
    } else {
        cycle.push(Segment::dark(opts.cool_duration, depth));
    }
    let schedule = ProbeSchedule::with_prefix(setup.capture_prefix(0.0, 0.0), &cycle, horizon)?;
    let outcomes = setup.run(&schedule, n, seed, horizon)?;
    let dark_time = |t: f64| {
        if opts.cool_power > 0.0 {
            schedule.dark_time_before(t)
        } else {
            // the pulses are dark too but are still left out of the count
            let c = opts.dark_duration + opts.cool_duration;
            let full = (t / c).floor();
            full * opts.dark_duration + (t - full * c).min(opts.dark_duration)
        }
    };
    let items: Vec<(f64, bool)> = outcomes.iter().map(|o| (dark_time(o.survival_time), o.escape == Escape::Censored)).collect();
    let dark_horizon = dark_time(horizon);
    let curve = survival_from_times(items.iter().cloned())?;
    Ok(DutyCycleResult {
        lifetime: fit_lifetime_times(&items, dark_horizon, seed)?,
        curve,
        duty_cycle: opts.duty_cycle(),
        dark_horizon,
        escapes: escape_fractions(&outcomes),
    })
}

// --- detuning scan ----------------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DetuningPoint {
    /// Probe minus unshifted atomic resonance (rad/s).
    pub atom_detuning: f64,
    pub point: StoragePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetuningScan {
    pub dark: StoragePoint,
    pub points: Vec<DetuningPoint>,
}

/// Storage with the probe on cavity resonance at several atom-probe detunings
/// (set through the atom-cavity detuning), plus the dark reference.
pub fn detuning_scan(setup: &Setup, atom_detunings: &[f64], probe_power: f64, n: usize, seed: u64, horizon: f64) -> Result<DetuningScan, ProtocolError> {
    let dark = storage_point(setup, 0.0, 0.0, n, seed, horizon)?;
    let points = atom_detunings
        .iter()
        .map(|&da| {
            let mut params = setup.params;
            params.atom.atom_detuning_free = da;
            let s = setup.with_params(&params)?;
            Ok(DetuningPoint { atom_detuning: da, point: storage_point(&s, probe_power, 0.0, n, seed, horizon)? })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    Ok(DetuningScan { dark, points })
}

// --- detector --------------------------------------------------------------------------------------

/// Energy of one probe photon (J).
pub fn photon_energy(params: &ExperimentParams) -> f64 {
    TWO_PI * params.constants.planck_hbar * params.constants.light_speed / params.cavity.probe_wavelength
}

/// Mean detector click rate (1/s) for output power `p_out` (W).
pub fn click_rate(params: &ExperimentParams, p_out: f64) -> f64 {
    params.detection.quantum_efficiency * p_out / photon_energy(params)
}

/// Poisson photon counts per `bin` for a sampled output-power trace.
pub fn click_stream<R: Rng + ?Sized>(params: &ExperimentParams, p_out: &[f64], bin: f64, rng: &mut R) -> Result<Vec<u64>, ProtocolError> {
    if !(bin > 0.0) {
        return Err(ProtocolError::Invalid(format!("bin must be positive, got {bin}")));
    }
    Ok(p_out
        .iter()
        .map(|&p| {
            let mean = click_rate(params, p.max(0.0)) * bin;
            if mean > 0.0 {
                Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
            } else {
                0
            }
        })
        .collect())
}

// --- model checks ------------------------------------------------------------------------------------

/// Relative drift of kinetic plus trap energy over `duration` for an atom
/// captured from `seed`, probe off and noise off.
pub fn conservative_drift(setup: &Setup, duration: f64, seed: u64) -> Result<f64, ProtocolError> {
    let quiet = setup.with_noise(0.0)?;
    let integ = &quiet.integrator;
    let depth = quiet.params.trap.trap_depth;
    let schedule = ProbeSchedule::constant(duration, 0.0, 0.0, depth)?;
    let init = sample_initial(&quiet.sampler, seed);
    let e0 = integ.mechanical_energy(&init, depth);
    let mut last = init;
    let mut obs = |t: &TraceSample| {
        last = crate::dynamics::AtomState { position: t.position, velocity: t.velocity, time: t.time };
    };
    let trace = TraceOptions { period: duration, keep: false };
    let out = simulate_observed(integ, init, &schedule, &quiet.noise, seed, duration, Some(trace), Some(&mut obs))?;
    if out.escape != Escape::Censored {
        return Err(ProtocolError::Invalid("atom escaped from the conservative trap".into()));
    }
    let e1 = integ.mechanical_energy(&last, depth);
    Ok(((e1 - e0) / e0).abs())
}

/// Lifetimes of the same ensemble at the configured step and at half of it.
pub fn dt_halving(setup: &Setup, schedule: &ProbeSchedule, n: usize, seed: u64, horizon: f64) -> Result<(LifetimeEstimate, LifetimeEstimate), ProtocolError> {
    let full = fit_lifetime(&setup.run(schedule, n, seed, horizon)?, horizon, seed)?;
    let mut params = setup.params;
    params.simulation.dt *= 0.5;
    let mut half = setup.with_params(&params)?;
    half.noise = setup.noise;
    let halved = fit_lifetime(&half.run(schedule, n, seed, horizon)?, horizon, seed)?;
    Ok((full, halved))
}

/// Lifetimes at several radial escape radii (in waists), same seeds.
pub fn escape_radius_sensitivity(setup: &Setup, schedule: &ProbeSchedule, radii: &[f64], n: usize, seed: u64, horizon: f64) -> Result<Vec<(f64, LifetimeEstimate)>, ProtocolError> {
    radii
        .iter()
        .map(|&r| {
            let mut params = setup.params;
            params.simulation.radial_escape_waists = r;
            let mut s = setup.with_params(&params)?;
            s.noise = setup.noise;
            Ok((r, fit_lifetime(&s.run(schedule, n, seed, horizon)?, horizon, seed)?))
        })
        .collect()
}
