//! Piecewise-constant experiment programs.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule has no segments")]
    Empty,
    #[error("segment {0} has non-positive duration")]
    NonPositiveDuration(usize),
    #[error("segment {0} has negative probe power or trap depth")]
    Negative(usize),
    #[error("schedule covers {covered} s but the horizon is {horizon} s")]
    TooShort { covered: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    /// Incident probe power (W).
    pub probe_power: f64,
    /// Probe minus cavity frequency (rad/s).
    pub cavity_detuning: f64,
    /// Nominal dipole depth before noise (J).
    pub trap_depth: f64,
}

impl Segment {
    pub fn new(duration: f64, probe_power: f64, cavity_detuning: f64, trap_depth: f64) -> Self {
        Segment { duration, probe_power, cavity_detuning, trap_depth }
    }

    pub fn dark(duration: f64, trap_depth: f64) -> Self {
        Segment::new(duration, 0.0, 0.0, trap_depth)
    }
}

/// An ordered list of segments. A cyclic schedule repeats forever and
/// therefore covers any horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSchedule {
    segments: Vec<Segment>,
    cyclic: bool,
}

impl ProbeSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ScheduleError> {
        Self::build(segments, false)
    }

    pub fn cyclic(segments: Vec<Segment>) -> Result<Self, ScheduleError> {
        Self::build(segments, true)
    }

    /// A single segment long enough for `horizon`.
    pub fn constant(horizon: f64, probe_power: f64, cavity_detuning: f64, trap_depth: f64) -> Result<Self, ScheduleError> {
        Self::new(vec![Segment::new(horizon, probe_power, cavity_detuning, trap_depth)])
    }

    /// Prepends `prefix` (run once) to a repeating `cycle`, expanded so that
    /// the result covers `horizon`.
    pub fn with_prefix(prefix: Vec<Segment>, cycle: &[Segment], horizon: f64) -> Result<Self, ScheduleError> {
        let cycle_len: f64 = cycle.iter().map(|s| s.duration).sum();
        if cycle.is_empty() || cycle_len <= 0.0 {
            return Err(ScheduleError::Empty);
        }
        let pre: f64 = prefix.iter().map(|s| s.duration).sum();
        let reps = ((horizon - pre).max(0.0) / cycle_len).ceil() as usize;
        let mut segments = prefix;
        for _ in 0..reps.max(1) {
            segments.extend_from_slice(cycle);
        }
        Self::new(segments)
    }

    fn build(segments: Vec<Segment>, cyclic: bool) -> Result<Self, ScheduleError> {
        if segments.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration > 0.0) {
                return Err(ScheduleError::NonPositiveDuration(i));
            }
            if s.probe_power < 0.0 || s.trap_depth < 0.0 {
                return Err(ScheduleError::Negative(i));
            }
        }
        Ok(ProbeSchedule { segments, cyclic })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    /// Total duration of one pass through the segments.
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn covers(&self, horizon: f64) -> Result<(), ScheduleError> {
        let covered = self.duration();
        if !self.cyclic && covered < horizon * (1.0 - 1e-12) {
            return Err(ScheduleError::TooShort { covered, horizon });
        }
        Ok(())
    }

    /// Segments in execution order, repeating when cyclic.
    pub fn iter(&self) -> impl Iterator<Item = &Segment> + '_ {
        let passes = if self.cyclic { usize::MAX } else { 1 };
        std::iter::repeat(&self.segments).take(passes).flatten()
    }

    /// The segment active at time `t` (end-exclusive).
    pub fn at(&self, t: f64) -> Option<&Segment> {
        let total = self.duration();
        let mut t = if self.cyclic { t.rem_euclid(total) } else { t };
        if t < 0.0 {
            return None;
        }
        for s in &self.segments {
            if t < s.duration {
                return Some(s);
            }
            t -= s.duration;
        }
        None
    }

    /// Total time spent in dark segments (zero probe power) during `[0, t)`.
    pub fn dark_time_before(&self, t: f64) -> f64 {
        let mut elapsed = 0.0;
        let mut dark = 0.0;
        for s in self.iter() {
            if elapsed >= t {
                break;
            }
            let span = s.duration.min(t - elapsed);
            if s.probe_power == 0.0 {
                dark += span;
            }
            elapsed += s.duration;
        }
        dark
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_segments() {
        assert_eq!(ProbeSchedule::new(vec![]), Err(ScheduleError::Empty));
        assert_eq!(
            ProbeSchedule::new(vec![Segment::dark(0.0, 1.0)]),
            Err(ScheduleError::NonPositiveDuration(0))
        );
        assert_eq!(
            ProbeSchedule::new(vec![Segment::new(1.0, -1.0, 0.0, 1.0)]),
            Err(ScheduleError::Negative(0))
        );
    }

    #[test]
    fn lookup_and_cycling() {
        let s = ProbeSchedule::cyclic(vec![Segment::dark(2e-3, 1.0), Segment::new(1e-4, 1e-12, 0.0, 1.0)]).unwrap();
        assert_eq!(s.at(1e-3).unwrap().probe_power, 0.0);
        assert_eq!(s.at(2.05e-3).unwrap().probe_power, 1e-12);
        assert_eq!(s.at(2.1e-3 + 1e-3).unwrap().probe_power, 0.0);
        assert!(s.covers(10.0).is_ok());
        assert!((s.dark_time_before(4.3e-3) - 4.1e-3).abs() < 1e-15);
    }

    #[test]
    fn coverage() {
        let s = ProbeSchedule::constant(0.1, 0.0, 0.0, 1.0).unwrap();
        assert!(s.covers(0.1).is_ok());
        assert!(s.covers(0.2).is_err());
        let p = ProbeSchedule::with_prefix(vec![Segment::dark(1e-3, 1.0)], &[Segment::dark(2e-3, 1.0)], 0.01).unwrap();
        assert!(p.covers(0.01).is_ok());
    }
}
