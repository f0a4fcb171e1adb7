//! Survival statistics, exponential fits and the free-space reference rates.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{Escape, TrajectoryOutcome};
use crate::params::ExperimentParams;

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const DEFAULT_FIT_SEED: u64 = 0x0f17;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("t and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite or negative sample at index {0}")]
    BadSample(usize),
    #[error("no outcomes")]
    Empty,
    #[error("excitation {0} outside (0, 0.1]")]
    Excitation(f64),
}

/// y = amplitude * exp(-rate t) + offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub rate: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub ci68_rate: (f64, f64),
    pub ci95_rate: (f64, f64),
    /// sqrt(sum of squared residuals / n)
    pub residual_norm: f64,
    /// Set when the data carried no decay information (constant y).
    pub degenerate: bool,
}

impl FitResult {
    pub fn time_constant(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp() + self.offset
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    rate: f64,
    amplitude: f64,
    offset: f64,
    sse: f64,
}

/// Best amplitude (and offset) for a fixed rate: the linear half of the problem.
fn linear_part(t: &[f64], y: &[f64], rate: f64, with_offset: bool) -> Point {
    let n = t.len() as f64;
    let (mut see, mut se, mut sey, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-rate * ti).exp();
        see += e * e;
        se += e;
        sey += e * yi;
        sy += yi;
    }
    let (amplitude, offset) = if with_offset {
        let det = see * n - se * se;
        if det.abs() <= 1e-14 * see * n {
            (0.0, sy / n)
        } else {
            ((sey * n - se * sy) / det, (see * sy - se * sey) / det)
        }
    } else if see > 0.0 {
        (sey / see, 0.0)
    } else {
        (0.0, 0.0)
    };
    let sse = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = yi - amplitude * (-rate * ti).exp() - offset;
            r * r
        })
        .sum();
    Point { rate, amplitude, offset, sse }
}

fn sse_of(t: &[f64], y: &[f64], a: f64, r: f64, c: f64) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let d = yi - a * (-r * ti).exp() - c;
            d * d
        })
        .sum()
}

/// Least-squares fit without confidence intervals.
fn fit_core(t: &[f64], y: &[f64], with_offset: bool) -> Point {
    let t_min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (t_max - t_min).max(f64::MIN_POSITIVE);

    // coarse scan in log(rate), then golden section on the bracketing cell
    let (lo, hi) = ((1e-4 / span).ln(), (1e4 / span).ln());
    let cells = 160;
    let grid: Vec<f64> = (0..=cells).map(|i| lo + (hi - lo) * i as f64 / cells as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&u| linear_part(t, y, u.exp(), with_offset).sse).collect();
    let best = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(cells)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |u: f64| linear_part(t, y, u.exp(), with_offset).sse;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mut p = linear_part(t, y, (0.5 * (a + b)).exp(), with_offset);

    // Gauss-Newton polish on all parameters; the golden section alone cannot
    // place the minimum of a quadratic better than sqrt(machine epsilon).
    for _ in 0..30 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-p.rate * ti).exp();
            let r = yi - p.amplitude * e - p.offset;
            let j = Vector3::new(e, -p.amplitude * ti * e, if with_offset { 1.0 } else { 0.0 });
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if !with_offset {
            jtj[(2, 2)] = 1.0;
        }
        let Some(step) = jtj.lu().solve(&jtr) else { break };
        let (na, nr, nc) = (p.amplitude + step[0], p.rate + step[1], p.offset + step[2]);
        if !(nr.is_finite() && na.is_finite() && nc.is_finite()) {
            break;
        }
        let sse = sse_of(t, y, na, nr, nc);
        if sse > p.sse {
            break;
        }
        let small = step[1].abs() <= 1e-15 * p.rate.abs().max(f64::MIN_POSITIVE);
        p = Point { rate: nr, amplitude: na, offset: nc, sse };
        if small {
            break;
        }
    }
    p
}

fn check_xy(t: &[f64], y: &[f64]) -> Result<(), AnalysisError> {
    if t.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(t.len(), y.len()));
    }
    if t.len() < 4 {
        return Err(AnalysisError::TooFewPoints(t.len()));
    }
    for (i, (&ti, &yi)) in t.iter().zip(y).enumerate() {
        if !ti.is_finite() || !yi.is_finite() || yi < 0.0 {
            return Err(AnalysisError::BadSample(i));
        }
    }
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

/// (68%, 95%) percentile intervals of `draws`, widened to contain `center`.
fn intervals(mut draws: Vec<f64>, center: f64) -> ((f64, f64), (f64, f64)) {
    draws.retain(|r| r.is_finite());
    if draws.is_empty() {
        return ((center, center), (center, center));
    }
    draws.sort_by(f64::total_cmp);
    let w = |lo: f64, hi: f64| (percentile(&draws, lo).min(center), percentile(&draws, hi).max(center));
    (w(0.16, 0.84), w(0.025, 0.975))
}

/// Least-squares exponential fit with residual-bootstrap confidence intervals.
pub fn fit_exponential(t: &[f64], y: &[f64], with_offset: bool) -> Result<FitResult, AnalysisError> {
    fit_exponential_seeded(t, y, with_offset, DEFAULT_FIT_SEED)
}

pub fn fit_exponential_seeded(t: &[f64], y: &[f64], with_offset: bool, seed: u64) -> Result<FitResult, AnalysisError> {
    check_xy(t, y)?;
    let y_max = y.iter().cloned().fold(0.0, f64::max);
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = t.len();
    if y_max - y_min <= 1e-12 * y_max.max(f64::MIN_POSITIVE) {
        let mean = y.iter().sum::<f64>() / n as f64;
        let (amplitude, offset) = if with_offset { (0.0, mean) } else { (mean, 0.0) };
        return Ok(FitResult {
            rate: 0.0,
            amplitude,
            offset,
            ci68_rate: (0.0, 0.0),
            ci95_rate: (0.0, 0.0),
            residual_norm: 0.0,
            degenerate: true,
        });
    }
    let p = fit_core(t, y, with_offset);
    let model: Vec<f64> = t.iter().map(|&ti| p.amplitude * (-p.rate * ti).exp() + p.offset).collect();
    // residuals shrink by the fitted degrees of freedom; undo that before resampling
    let params = if with_offset { 3.0 } else { 2.0 };
    let inflate = (n as f64 / (n as f64 - params).max(1.0)).sqrt();
    let resid: Vec<f64> = y.iter().zip(&model).map(|(yi, mi)| inflate * (yi - mi)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut yb = vec![0.0; n];
    let draws: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for (k, v) in yb.iter_mut().enumerate() {
                *v = model[k] + resid[rng.random_range(0..n)];
            }
            fit_core(t, &yb, with_offset).rate
        })
        .collect();
    let (ci68_rate, ci95_rate) = intervals(draws, p.rate);
    Ok(FitResult {
        rate: p.rate,
        amplitude: p.amplitude,
        offset: p.offset,
        ci68_rate,
        ci95_rate,
        residual_norm: (p.sse / n as f64).sqrt(),
        degenerate: false,
    })
}

// --- survival ----------------------------------------------------------------

/// Empirical fraction of trajectories still trapped. Step function:
/// `surviving_fraction[k]` holds on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub surviving_fraction: Vec<f64>,
    pub n_total: usize,
}

impl SurvivalCurve {
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 { 1.0 } else { self.surviving_fraction[k - 1] }
    }

    /// The curve sampled on `points + 1` uniform times spanning `[0, horizon]`.
    pub fn sampled(&self, horizon: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..=points).map(|k| horizon * k as f64 / points as f64).collect();
        let y = t.iter().map(|&x| self.at(x)).collect();
        (t, y)
    }

    /// Largest gap between the curve and `fit`, checked on both sides of
    /// every step.
    pub fn ks_distance(&self, fit: &FitResult) -> f64 {
        let mut d: f64 = 0.0;
        let mut prev = 1.0;
        for (&t, &s) in self.times.iter().zip(&self.surviving_fraction) {
            let m = fit.eval(t);
            d = d.max((prev - m).abs()).max((s - m).abs());
            prev = s;
        }
        d
    }
}

/// Survival curve of an ensemble; censored outcomes count as surviving until
/// their censoring time.
pub fn survival_from_outcomes(outcomes: &[TrajectoryOutcome]) -> Result<SurvivalCurve, AnalysisError> {
    survival_from_times(outcomes.iter().map(|o| (o.survival_time, o.escape == Escape::Censored)))
}

/// Same as [`survival_from_outcomes`] from `(time, censored)` pairs.
pub fn survival_from_times<I: IntoIterator<Item = (f64, bool)>>(items: I) -> Result<SurvivalCurve, AnalysisError> {
    let mut v: Vec<(f64, bool)> = items.into_iter().collect();
    if v.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = v.len();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut times = vec![0.0];
    let mut fractions = vec![1.0];
    let mut alive = n;
    let mut i = 0;
    while i < n {
        let t = v[i].0;
        let mut lost = 0;
        let mut censored_here = false;
        while i < n && v[i].0 == t {
            if v[i].1 {
                censored_here = true;
            } else {
                lost += 1;
            }
            i += 1;
        }
        alive -= lost;
        if lost > 0 || (censored_here && i == n) {
            let f = alive as f64 / n as f64;
            if t == 0.0 {
                fractions[0] = f;
            } else {
                times.push(t);
                fractions.push(f);
            }
        }
    }
    Ok(SurvivalCurve { times, surviving_fraction: fractions, n_total: n })
}

/// Lifetime of an ensemble from an exponential fit to its survival curve,
/// with a confidence interval from resampling whole trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeEstimate {
    /// Fitted 1/rate (s); infinite when nothing escaped.
    pub lifetime: f64,
    pub ci68: (f64, f64),
    pub fit: FitResult,
    pub ks_distance: f64,
    pub n: usize,
    pub censored: usize,
}

pub const SURVIVAL_FIT_POINTS: usize = 60;

fn lifetime_rate(items: &[(f64, bool)], horizon: f64) -> Result<(SurvivalCurve, FitResult), AnalysisError> {
    let curve = survival_from_times(items.iter().cloned())?;
    let (t, y) = curve.sampled(horizon, SURVIVAL_FIT_POINTS);
    if y.iter().all(|&s| s == y[0]) {
        let fit = FitResult {
            rate: 0.0,
            amplitude: y[0],
            offset: 0.0,
            ci68_rate: (0.0, 0.0),
            ci95_rate: (0.0, 0.0),
            residual_norm: 0.0,
            degenerate: true,
        };
        return Ok((curve, fit));
    }
    let p = fit_core(&t, &y, false);
    let fit = FitResult {
        rate: p.rate,
        amplitude: p.amplitude,
        offset: 0.0,
        ci68_rate: (p.rate, p.rate),
        ci95_rate: (p.rate, p.rate),
        residual_norm: (p.sse / t.len() as f64).sqrt(),
        degenerate: false,
    };
    Ok((curve, fit))
}

pub fn fit_lifetime(outcomes: &[TrajectoryOutcome], horizon: f64, seed: u64) -> Result<LifetimeEstimate, AnalysisError> {
    let items: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.survival_time, o.escape == Escape::Censored)).collect();
    fit_lifetime_times(&items, horizon, seed)
}

/// [`fit_lifetime`] from `(time, censored)` pairs.
pub fn fit_lifetime_times(items: &[(f64, bool)], horizon: f64, seed: u64) -> Result<LifetimeEstimate, AnalysisError> {
    let (curve, mut fit) = lifetime_rate(items, horizon)?;
    let n = items.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = Vec::with_capacity(n);
    let draws: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            sample.clear();
            sample.extend((0..n).map(|_| items[rng.random_range(0..n)]));
            lifetime_rate(&sample, horizon).map(|(_, f)| f.rate).unwrap_or(0.0)
        })
        .collect();
    let (ci68, ci95) = intervals(draws, fit.rate);
    fit.ci68_rate = ci68;
    fit.ci95_rate = ci95;
    let inv = |r: f64| if r > 0.0 { 1.0 / r } else { f64::INFINITY };
    Ok(LifetimeEstimate {
        lifetime: inv(fit.rate),
        ci68: (inv(ci68.1), inv(ci68.0)),
        ks_distance: curve.ks_distance(&fit),
        fit,
        n,
        censored: items.iter().filter(|x| x.1).count(),
    })
}

// --- escape channels -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fraction {
    pub value: f64,
    /// Wilson score interval at one standard deviation.
    pub ci68: (f64, f64),
}

impl Fraction {
    pub fn of(k: usize, n: usize) -> Self {
        if n == 0 {
            return Fraction { value: 0.0, ci68: (0.0, 1.0) };
        }
        let (k, n) = (k as f64, n as f64);
        let p = k / n;
        let z2 = 1.0;
        let den = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / den;
        let half = (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
        Fraction { value: p, ci68: ((center - half).max(0.0), (center + half).min(1.0)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeFractions {
    pub axial: Fraction,
    pub radial: Fraction,
    pub censored: Fraction,
    pub n: usize,
    pub n_axial: usize,
    pub n_radial: usize,
}

impl EscapeFractions {
    pub fn total(&self) -> f64 {
        (self.axial.value + self.radial.value) + self.censored.value
    }

    /// Axial share among trajectories that escaped at all.
    pub fn axial_among_escapes(&self) -> Fraction {
        Fraction::of(self.n_axial, self.n_axial + self.n_radial)
    }

    pub fn radial_among_escapes(&self) -> Fraction {
        Fraction::of(self.n_radial, self.n_axial + self.n_radial)
    }
}

pub fn escape_fractions(outcomes: &[TrajectoryOutcome]) -> EscapeFractions {
    escape_fractions_of(outcomes.iter().map(|o| o.escape))
}

pub fn escape_fractions_of<I: IntoIterator<Item = Escape>>(escapes: I) -> EscapeFractions {
    let (mut a, mut r, mut c) = (0, 0, 0);
    for e in escapes {
        match e {
            Escape::Axial => a += 1,
            Escape::Radial => r += 1,
            Escape::Censored => c += 1,
        }
    }
    let n = a + r + c;
    let mut out = EscapeFractions {
        axial: Fraction::of(a, n),
        radial: Fraction::of(r, n),
        censored: Fraction::of(c, n),
        n,
        n_axial: a,
        n_radial: r,
    };
    // sets the censored share so that total() is exactly 1
    if n > 0 {
        out.censored.value = 1.0 - (out.axial.value + out.radial.value);
    }
    out
}

// --- free-space reference ------------------------------------------------------------

/// Doppler cooling rate at the given excitation relative to the textbook
/// two-level value (ħk²/m)·4ρ at δ = -Γ/2, s = 4ρ. Sets β_D/m = 1.5 kHz at 2.5%.
pub const DOPPLER_ANCHOR: f64 = 0.3092;
/// Blue-detuned standing-wave (Sisyphus) cooling relative to the same
/// Doppler form. Sets β_S/m = 4 kHz at 2.5%.
pub const SISYPHUS_ANCHOR: f64 = DOPPLER_ANCHOR * 8.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSpaceRates {
    /// β_D/m (1/s)
    pub doppler: f64,
    /// β_S/m (1/s)
    pub sisyphus: f64,
}

/// Free-space laser-cooling rates for an atom held at the given excitation.
pub fn free_space_rates(params: &ExperimentParams, excitation: f64) -> Result<FreeSpaceRates, AnalysisError> {
    if !(excitation > 0.0 && excitation <= 0.1) {
        return Err(AnalysisError::Excitation(excitation));
    }
    let k = params.cavity.probe_wavenumber();
    let recoil_rate = params.constants.planck_hbar * k * k / params.constants.atom_mass;
    let textbook = 4.0 * recoil_rate * excitation;
    Ok(FreeSpaceRates { doppler: DOPPLER_ANCHOR * textbook, sisyphus: SISYPHUS_ANCHOR * textbook })
}
