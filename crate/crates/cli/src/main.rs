//! `cavcool` command-line driver.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cavcool::analysis::{free_space_rates, EscapeFractions, LifetimeEstimate, SurvivalCurve};
use cavcool::dynamics::{sample_initial, simulate_trajectory, TraceOptions};
use cavcool::mechanics::{drag_probe, FieldMode, ForceVector};
use cavcool::oracle::steady_state_me;
use cavcool::params::{DEFAULT_CONFIG, FEMTOWATT, PICOWATT, TWO_PI};
use cavcool::protocols::{
    calibrate_noise, detuning_scan, duty_cycle, heat_cool_cycle, storage_vs_power, CalibrationOptions,
    DutyCycleOptions, HeatCoolOptions, Setup,
};
use cavcool::{derive, load_params, CavityModel, DriveSettings, ExperimentParams, Position};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use output::{num, Output, RunManifest};

#[derive(Parser)]
#[command(name = "cavcool", version, about = "Cavity cooling of a single trapped atom: simulations and experiment scripts")]
struct Cli {
    /// TOML configuration (defaults to the built-in paper parameters)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; every random number derives from it
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (does not change results)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Relative rms trap-depth noise (overrides the config)
    #[arg(long)]
    noise_rms: Option<f64>,
    /// Calibrate the noise to this dark-trap lifetime (ms) first
    #[arg(long)]
    dark_ms: Option<f64>,
    /// Trajectories per calibration step
    #[arg(long, default_value_t = 200)]
    calib_n: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state transmission and excitation on a (z, rho, dc) grid
    Scan {
        #[arg(long, default_value_t = 41)]
        z_points: usize,
        #[arg(long, default_value_t = 5)]
        rho_points: usize,
        #[arg(long, default_value_t = 5)]
        dc_points: usize,
        /// Largest |probe - cavity| detuning (MHz)
        #[arg(long, default_value_t = 10.0)]
        dc_max_mhz: f64,
        #[arg(long, default_value_t = 2.25)]
        power_pw: f64,
        /// Trap depth during the scan: guide or full
        #[arg(long, default_value = "guide")]
        depth: String,
    },
    /// Local friction coefficient along the axis for several velocities
    FrictionScan {
        #[arg(long, default_value_t = 21)]
        z_points: usize,
        /// Axial velocities (m/s)
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.04")]
        velocities: Vec<f64>,
        #[arg(long, default_value_t = 2.25)]
        power_pw: f64,
        #[arg(long, default_value_t = 0.0)]
        dc_mhz: f64,
        #[arg(long, default_value = "guide")]
        depth: String,
        /// Use the instantaneous (quasi-static) field instead of the dynamic one
        #[arg(long)]
        quasi_static: bool,
    },
    /// Calibrate the trap-depth noise to a dark-trap lifetime
    Calibrate {
        #[arg(long, default_value_t = 18.0)]
        target_ms: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Storage time versus probe power
    Storage {
        /// Probe powers (pW)
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        powers: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100.0)]
        horizon_ms: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Alternating heating and cooling intervals; averaged transmission
    Heatcool {
        /// Total number of cycles
        #[arg(long, default_value_t = 500)]
        cycles: usize,
        /// Atoms the cycles are spread over
        #[arg(long, default_value_t = 50)]
        atoms: usize,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Dark storage with short cooling pulses
    Dutycycle {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 200.0)]
        horizon_ms: f64,
        #[arg(long, default_value_t = 1.5)]
        cool_power_pw: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Storage time for probe detunings from blue to red of the atom
    DetuningScan {
        /// Probe minus atom detunings (MHz)
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "35,-35")]
        detunings_mhz: Vec<f64>,
        #[arg(long, default_value_t = 0.37)]
        power_pw: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100.0)]
        horizon_ms: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Free-space Doppler and Sisyphus cooling rates for comparison
    CompareFreespace {
        #[arg(long, default_value_t = 0.025)]
        excitation: f64,
        /// Cavity cooling rate to compare against (kHz)
        #[arg(long)]
        cavity_khz: Option<f64>,
    },
    /// Compare the closed-form steady state with the master-equation oracle
    Validate {
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        n_empty: f64,
        #[arg(long, default_value_t = 5)]
        fock_cutoff: usize,
    },
    /// One trajectory with a full trace
    Trajectory {
        #[arg(long, default_value_t = 0.37)]
        power_pw: f64,
        #[arg(long, default_value_t = 0.0)]
        dc_mhz: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon_ms: f64,
        /// Trace sampling period (us)
        #[arg(long, default_value_t = 1.0)]
        trace_us: f64,
        /// Ensemble index whose initial state and seed are used
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Print derived quantities
    PrintDerived,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Scan { .. } => "scan",
            Command::FrictionScan { .. } => "friction-scan",
            Command::Calibrate { .. } => "calibrate",
            Command::Storage { .. } => "storage",
            Command::Heatcool { .. } => "heatcool",
            Command::Dutycycle { .. } => "dutycycle",
            Command::DetuningScan { .. } => "detuning-scan",
            Command::CompareFreespace { .. } => "compare-freespace",
            Command::Validate { .. } => "validate",
            Command::Trajectory { .. } => "trajectory",
            Command::PrintDerived => "print-derived",
        }
    }
}

#[derive(Serialize)]
struct Escapes {
    axial: f64,
    radial: f64,
    censored: f64,
}

impl From<&EscapeFractions> for Escapes {
    fn from(e: &EscapeFractions) -> Self {
        Escapes { axial: e.axial.value, radial: e.radial.value, censored: e.censored.value }
    }
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct Summary {
    protocol: String,
    config_hash: String,
    seed: u64,
    lifetime_ms: Option<f64>,
    ci68: Option<[f64; 2]>,
    beta_over_m_kHz: Option<f64>,
    escape_fractions: Option<Escapes>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    points: Vec<serde_json::Value>,
    details: serde_json::Value,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn lifetime_ms(l: &LifetimeEstimate) -> (Option<f64>, Option<[f64; 2]>) {
    (finite(l.lifetime * 1e3), Some([l.ci68.0 * 1e3, l.ci68.1 * 1e3]))
}

fn point_json(label: serde_json::Value, l: &LifetimeEstimate, e: &EscapeFractions) -> serde_json::Value {
    let (lt, ci) = lifetime_ms(l);
    json!({
        "condition": label,
        "lifetime_ms": lt,
        "ci68": ci,
        "ks_distance": l.ks_distance,
        "escape_fractions": Escapes::from(e),
    })
}

fn survival_rows(curve: &SurvivalCurve) -> Vec<Vec<String>> {
    curve.times.iter().zip(&curve.surviving_fraction).map(|(t, f)| vec![num(t * 1e3), num(*f)]).collect()
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

struct Context {
    params: ExperimentParams,
    config_text: String,
    seed: u64,
}

impl Context {
    fn summary(&self, protocol: &str) -> Summary {
        Summary {
            protocol: protocol.into(),
            config_hash: output::config_hash(&self.config_text),
            seed: self.seed,
            lifetime_ms: None,
            ci68: None,
            beta_over_m_kHz: None,
            escape_fractions: None,
            points: Vec::new(),
            details: json!({}),
        }
    }

    /// Setup with the requested trap noise; calibrates first when asked to.
    fn setup(&self, noise: &NoiseArgs, out: &mut Output) -> Result<(Setup, serde_json::Value), Failure> {
        let base = Setup::new(&self.params)?;
        if let Some(target_ms) = noise.dark_ms {
            let target = target_ms * 1e-3;
            let cal = calibrate_noise(&base, target, &CalibrationOptions::for_target(target, noise.calib_n, self.seed))?;
            write_calibration(out, &cal.history)?;
            let rms = cal.noise.relative_rms;
            return Ok((base.with_noise(rms)?, json!({ "noise_rms": rms, "calibrated_to_ms": target_ms })));
        }
        let rms = noise.noise_rms.unwrap_or(self.params.simulation.noise_rms);
        Ok((base.with_noise(rms)?, json!({ "noise_rms": rms })))
    }
}

fn write_calibration(out: &mut Output, history: &[cavcool::protocols::CalibrationStep]) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            vec![
                num(h.relative_rms),
                num(h.lifetime.lifetime * 1e3),
                num(h.lifetime.ci68.0 * 1e3),
                num(h.lifetime.ci68.1 * 1e3),
            ]
        })
        .collect();
    out.csv("calibration.csv", &["noise_rms", "lifetime_ms", "ci68_lo_ms", "ci68_hi_ms"], &rows)
}

fn depth_of(p: &ExperimentParams, which: &str) -> Result<f64, Failure> {
    match which {
        "guide" => Ok(p.trap.guide_depth),
        "full" => Ok(p.trap.trap_depth),
        other => Err(Failure::Usage(format!("--depth must be guide or full, got {other}"))),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config_text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let params = load_params(&config_text).map_err(|e| Failure::Usage(format!("config: {e}")))?;
    let ctx = Context { params, config_text, seed: cli.seed };
    let name = cli.command.name();

    if let Command::PrintDerived = cli.command {
        print!("{}", derive(&params));
        return Ok(());
    }

    let mut out = Output::create(&cli.out, RunManifest::new(name, &ctx.config_text, cli.seed))?;
    let mut summary = ctx.summary(name);
    let model = CavityModel::new(&params);
    let p = &params;

    match &cli.command {
        Command::Scan { z_points, rho_points, dc_points, dc_max_mhz, power_pw, depth } => {
            let depth = depth_of(p, depth)?;
            let mut rows = Vec::new();
            for &z in &grid(0.0, p.cavity.probe_wavelength / 2.0, *z_points) {
                for &rho in &grid(0.0, p.cavity.mode_waist, *rho_points) {
                    for &dc in &grid(-dc_max_mhz, *dc_max_mhz, *dc_points) {
                        let drive = DriveSettings::new(power_pw * PICOWATT, TWO_PI * dc * 1e6, depth);
                        let s = model.steady_state(&Position::axial_radial(z, rho), &drive);
                        rows.push(vec![
                            num(z * 1e6),
                            num(rho * 1e6),
                            num(dc),
                            num(s.photon_number()),
                            num(s.excitation()),
                            num(model.transmitted_power(&s) / FEMTOWATT),
                        ]);
                    }
                }
            }
            out.csv("scan.csv", &["z_um", "rho_um", "dc_mhz", "photon_number", "excitation", "p_out_fw"], &rows)?;
            println!("scan: {} points", rows.len());
        }
        Command::FrictionScan { z_points, velocities, power_pw, dc_mhz, depth, quasi_static } => {
            let depth = depth_of(p, depth)?;
            let drive = DriveSettings::new(power_pw * PICOWATT, TWO_PI * dc_mhz * 1e6, depth);
            let mode = if *quasi_static { FieldMode::QuasiStatic } else { FieldMode::Dynamic };
            let zs = grid(0.0, p.cavity.probe_wavelength / 4.0, *z_points);
            let cells: Vec<(f64, f64)> = zs.iter().flat_map(|&z| velocities.iter().map(move |&v| (z, v))).collect();
            let results: Vec<Result<f64, String>> = {
                use rayon::prelude::*;
                cells
                    .par_iter()
                    .map(|&(z, v)| {
                        drag_probe(&model, &Position::axial_radial(z, 0.0), &ForceVector::new(0.0, 0.0, v), &drive, mode)
                            .map(|f| f.beta_over_m)
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            };
            let mut rows = Vec::new();
            for ((z, v), r) in cells.iter().zip(results) {
                rows.push(vec![num(z * 1e9), num(*v), num(r.map_err(Failure::Runtime)? / 1e3)]);
            }
            out.csv("friction.csv", &["z_nm", "v_m_s", "beta_over_m_khz"], &rows)?;
            println!("friction-scan: {} points", rows.len());
        }
        Command::Calibrate { target_ms, n } => {
            let target = target_ms * 1e-3;
            let setup = Setup::new(p)?;
            let cal = calibrate_noise(&setup, target, &CalibrationOptions::for_target(target, *n, cli.seed))?;
            write_calibration(&mut out, &cal.history)?;
            let curve = cavcool::analysis::survival_from_outcomes(&cal.outcomes)?;
            out.csv("survival.csv", &["t_ms", "surviving_fraction"], &survival_rows(&curve))?;
            let (lt, ci) = lifetime_ms(&cal.lifetime);
            summary.lifetime_ms = lt;
            summary.ci68 = ci;
            summary.escape_fractions = Some((&cavcool::analysis::escape_fractions(&cal.outcomes)).into());
            summary.details = json!({
                "noise_rms": cal.noise.relative_rms,
                "target_ms": target_ms,
                "ks_distance": cal.lifetime.ks_distance,
                "steps": cal.history.len(),
            });
            println!("calibrate: noise_rms = {} lifetime = {:.3} ms", cal.noise.relative_rms, cal.lifetime.lifetime * 1e3);
        }
        Command::Storage { powers, n, horizon_ms, noise } => {
            let (setup, noise_info) = ctx.setup(noise, &mut out)?;
            let horizon = horizon_ms * 1e-3;
            let watts: Vec<f64> = powers.iter().map(|x| x * PICOWATT).collect();
            let pts = storage_vs_power(&setup, &watts, *n, cli.seed, horizon)?;
            let mut rows = Vec::new();
            for (pw, sp) in powers.iter().zip(&pts) {
                let curve = cavcool::analysis::survival_from_outcomes(&sp.outcomes)?;
                out.csv(&format!("survival_{pw}pW.csv"), &["t_ms", "surviving_fraction"], &survival_rows(&curve))?;
                let e = &sp.escapes;
                rows.push(vec![
                    num(*pw),
                    num(sp.lifetime.lifetime * 1e3),
                    num(sp.lifetime.ci68.0 * 1e3),
                    num(sp.lifetime.ci68.1 * 1e3),
                    num(e.axial.value),
                    num(e.radial.value),
                    num(e.censored.value),
                ]);
                summary.points.push(point_json(json!({ "probe_power_pw": pw }), &sp.lifetime, e));
                println!("storage: {pw} pW -> {:.3} ms", sp.lifetime.lifetime * 1e3);
            }
            out.csv(
                "storage.csv",
                &["probe_power_pw", "lifetime_ms", "ci68_lo_ms", "ci68_hi_ms", "axial", "radial", "censored"],
                &rows,
            )?;
            summary.details = noise_info;
        }
        Command::Heatcool { cycles, atoms, noise } => {
            let (setup, noise_info) = ctx.setup(noise, &mut out)?;
            let atoms = (*atoms).max(1);
            let opts = HeatCoolOptions { atoms, cycles_per_atom: cycles.div_ceil(atoms).max(1), ..HeatCoolOptions::default() };
            let r = heat_cool_cycle(&setup, &opts, cli.seed)?;
            let rows: Vec<Vec<String>> = r
                .times
                .iter()
                .zip(&r.mean_output)
                .map(|(t, y)| vec![num(t * 1e6), num(y / FEMTOWATT), num(r.fit.eval(*t) / FEMTOWATT)])
                .collect();
            out.csv("heatcool.csv", &["t_us", "p_out_fw", "fit_fw"], &rows)?;
            summary.beta_over_m_kHz = Some(r.beta_over_m() / 1e3);
            summary.details = json!({
                "noise": noise_info,
                "relaxation_us": r.relaxation_time() * 1e6,
                "relaxation_ci68_us": [1e6 / r.fit.ci68_rate.1, 1e6 / r.fit.ci68_rate.0],
                "drop_factor_100us": r.drop_factor,
                "cycles_used": r.cycles_used,
            });
            println!(
                "heatcool: relaxation {:.1} us (beta/m = {:.1} kHz), drop x{:.2} over 100 us, {} cycles",
                r.relaxation_time() * 1e6,
                r.beta_over_m() / 1e3,
                r.drop_factor,
                r.cycles_used
            );
        }
        Command::Dutycycle { n, horizon_ms, cool_power_pw, noise } => {
            let (setup, noise_info) = ctx.setup(noise, &mut out)?;
            let opts = DutyCycleOptions { cool_power: cool_power_pw * PICOWATT, ..DutyCycleOptions::default() };
            let r = duty_cycle(&setup, &opts, *n, cli.seed, horizon_ms * 1e-3)?;
            out.csv("survival_dark_time.csv", &["t_ms", "surviving_fraction"], &survival_rows(&r.curve))?;
            let (lt, ci) = lifetime_ms(&r.lifetime);
            summary.lifetime_ms = lt;
            summary.ci68 = ci;
            summary.escape_fractions = Some((&r.escapes).into());
            summary.details = json!({ "noise": noise_info, "duty_cycle": r.duty_cycle, "dark_horizon_ms": r.dark_horizon * 1e3 });
            println!("dutycycle: lifetime {:.3} ms (dark time), duty {:.4}", r.lifetime.lifetime * 1e3, r.duty_cycle);
        }
        Command::DetuningScan { detunings_mhz, power_pw, n, horizon_ms, noise } => {
            let (setup, noise_info) = ctx.setup(noise, &mut out)?;
            let das: Vec<f64> = detunings_mhz.iter().map(|d| TWO_PI * d * 1e6).collect();
            let scan = detuning_scan(&setup, &das, power_pw * PICOWATT, *n, cli.seed, horizon_ms * 1e-3)?;
            let row = |label: String, l: &LifetimeEstimate| vec![label, num(l.lifetime * 1e3), num(l.ci68.0 * 1e3), num(l.ci68.1 * 1e3)];
            let mut rows = vec![row("dark".into(), &scan.dark.lifetime)];
            summary.points.push(point_json(json!("dark"), &scan.dark.lifetime, &scan.dark.escapes));
            for (d, pt) in detunings_mhz.iter().zip(&scan.points) {
                rows.push(row(num(*d), &pt.point.lifetime));
                summary.points.push(point_json(json!({ "atom_detuning_mhz": d }), &pt.point.lifetime, &pt.point.escapes));
                println!("detuning-scan: {d} MHz -> {:.3} ms", pt.point.lifetime.lifetime * 1e3);
            }
            println!("detuning-scan: dark -> {:.3} ms", scan.dark.lifetime.lifetime * 1e3);
            out.csv("detuning_scan.csv", &["atom_detuning_mhz", "lifetime_ms", "ci68_lo_ms", "ci68_hi_ms"], &rows)?;
            summary.details = json!({ "noise": noise_info, "probe_power_pw": power_pw });
        }
        Command::CompareFreespace { excitation, cavity_khz } => {
            let r = free_space_rates(p, *excitation)?;
            let rows: Vec<Vec<String>> = grid(0.0, 0.1, 41)
                .into_iter()
                .skip(1)
                .map(|x| {
                    let f = free_space_rates(p, x).expect("grid inside (0, 0.1]");
                    vec![num(x), num(f.doppler / 1e3), num(f.sisyphus / 1e3)]
                })
                .collect();
            out.csv("freespace.csv", &["excitation", "doppler_khz", "sisyphus_khz"], &rows)?;
            summary.beta_over_m_kHz = *cavity_khz;
            summary.details = json!({
                "excitation": excitation,
                "doppler_kHz": r.doppler / 1e3,
                "sisyphus_kHz": r.sisyphus / 1e3,
                "cavity_over_sisyphus": cavity_khz.map(|c| c * 1e3 / r.sisyphus),
            });
            println!("compare-freespace: doppler {:.3} kHz, sisyphus {:.3} kHz", r.doppler / 1e3, r.sisyphus / 1e3);
            if let Some(c) = cavity_khz {
                println!("compare-freespace: cavity/sisyphus = {:.2}", c * 1e3 / r.sisyphus);
            }
        }
        Command::Validate { points, n_empty, fock_cutoff } => {
            let power = n_empty / p.detection.photon_number_per_pw * PICOWATT;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let lp = p.cavity.probe_wavelength;
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for _ in 0..*points {
                let pos = Position::axial_radial(rng.random_range(-lp..lp), rng.random_range(0.0..p.cavity.mode_waist));
                let depth = rng.random_range(0.0..=1.0) * p.trap.trap_depth;
                let drive = DriveSettings::new(power, 0.0, depth);
                let sc = model.steady_state(&pos, &drive);
                let me = steady_state_me(&model, &pos, &drive, *fock_cutoff)?;
                let da = (me.alpha - sc.alpha).norm() / sc.alpha.norm();
                let ds = if sc.sigma.norm() > 0.0 { (me.sigma - sc.sigma).norm() / sc.sigma.norm() } else { 0.0 };
                worst = worst.max(da).max(ds);
                rows.push(vec![num(pos.z * 1e6), num(pos.rho() * 1e6), num(da), num(ds)]);
            }
            out.csv("validate.csv", &["z_um", "rho_um", "rel_dev_alpha", "rel_dev_sigma"], &rows)?;
            summary.details = json!({ "max_relative_deviation": worst, "points": points, "n_empty": n_empty });
            out.json("summary.json", &summary)?;
            out.finish()?;
            println!("validate: max relative deviation {worst:.3e}");
            if worst > 0.01 {
                return Err(Failure::Validation(format!("deviation {worst:.3e} exceeds 1%")));
            }
            return Ok(());
        }
        Command::Trajectory { power_pw, dc_mhz, horizon_ms, trace_us, index, noise } => {
            let (setup, noise_info) = ctx.setup(noise, &mut out)?;
            let horizon = horizon_ms * 1e-3;
            let schedule = setup.constant_schedule(power_pw * PICOWATT, TWO_PI * dc_mhz * 1e6, horizon)?;
            let seed = cavcool::dynamics::derive_seed(cli.seed, *index);
            let init = sample_initial(&setup.sampler, seed);
            let trace = TraceOptions { period: trace_us * 1e-6, keep: true };
            let o = simulate_trajectory(&setup.integrator, init, &schedule, &setup.noise, seed, horizon, Some(trace))?;
            let rows: Vec<Vec<String>> = o
                .trace
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|s| {
                    vec![
                        num(s.time * 1e6),
                        num(s.position.x * 1e6),
                        num(s.position.y * 1e6),
                        num(s.position.z * 1e6),
                        num(s.velocity.x),
                        num(s.velocity.y),
                        num(s.velocity.z),
                        num(s.photon_number),
                        num(s.output_power / FEMTOWATT),
                    ]
                })
                .collect();
            out.csv("trajectory.csv", &["t_us", "x_um", "y_um", "z_um", "vx", "vy", "vz", "n_photon", "P_out_fW"], &rows)?;
            summary.details = json!({
                "noise": noise_info,
                "survival_ms": o.survival_time * 1e3,
                "escape": o.escape.as_str(),
            });
            println!("trajectory: {} after {:.3} ms", o.escape.as_str(), o.survival_time * 1e3);
        }
        Command::PrintDerived => unreachable!(),
    }
    out.json("summary.json", &summary)?;
    out.finish()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
