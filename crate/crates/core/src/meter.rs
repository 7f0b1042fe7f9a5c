//! Wall-time and energy measurement with pluggable energy sources.
//!
//! Three sources are supported: a synthetic clock that replays scripted
//! (seconds, joules) deltas, a constant-power model, and a cumulative
//! microjoule counter file such as the ones exposed by RAPL. Scripted sources
//! keep a cursor, so consecutive measurements on the same source continue the
//! script where the previous one stopped.

use std::cell::Cell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const DEFAULT_REPETITIONS: usize = 30;
/// Grams CO2-eq per kWh used when no intensity is configured.
pub const DEFAULT_CARBON_INTENSITY: f64 = 475.0;
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SyntheticClock,
    PowerModel,
    CounterFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub wall_time_s: f64,
    pub energy_j: f64,
    pub energy_kwh: f64,
    pub carbon_g: f64,
    pub carbon_intensity_g_per_kwh: f64,
    pub runs: usize,
    pub source: SourceKind,
}

impl ResourceRecord {
    /// Recomputes carbon for another intensity.
    pub fn with_intensity(mut self, g_per_kwh: f64) -> Result<Self> {
        self.carbon_g = carbon_estimate(self.energy_kwh, g_per_kwh)?;
        self.carbon_intensity_g_per_kwh = g_per_kwh;
        Ok(self)
    }
}

/// One scripted repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub seconds: f64,
    pub joules: f64,
}

/// Where wall time comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    Wall,
    /// Per-repetition durations in seconds, replayed cyclically.
    Scripted { seconds: Vec<f64>, cursor: usize },
}

impl Timer {
    pub fn scripted(seconds: Vec<f64>) -> Result<Self> {
        if seconds.is_empty() || seconds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(LabError::domain("scripted durations must be non-empty, finite and >= 0"));
        }
        Ok(Timer::Scripted { seconds, cursor: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnergySource {
    SyntheticClock {
        deltas: Vec<Delta>,
        cursor: usize,
    },
    PowerModel {
        watts: f64,
        timer: Timer,
    },
    CounterFile {
        path: PathBuf,
        wrap_max_uj: u64,
        timer: Timer,
    },
}

impl EnergySource {
    pub fn synthetic(deltas: Vec<Delta>) -> Result<Self> {
        let bad = |v: f64| !(v.is_finite() && v >= 0.0);
        if deltas.is_empty() || deltas.iter().any(|d| bad(d.seconds) || bad(d.joules)) {
            return Err(LabError::domain("synthetic deltas must be non-empty, finite and >= 0"));
        }
        Ok(EnergySource::SyntheticClock { deltas, cursor: 0 })
    }

    pub fn power(watts: f64, timer: Timer) -> Result<Self> {
        if !(watts > 0.0 && watts.is_finite()) {
            return Err(LabError::domain(format!("power {watts} W must be positive")));
        }
        Ok(EnergySource::PowerModel { watts, timer })
    }

    pub fn counter(path: impl Into<PathBuf>, wrap_max_uj: u64, timer: Timer) -> Result<Self> {
        if wrap_max_uj == 0 {
            return Err(LabError::domain("counter wrap maximum must be positive"));
        }
        Ok(EnergySource::CounterFile {
            path: path.into(),
            wrap_max_uj,
            timer,
        })
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            EnergySource::SyntheticClock { .. } => SourceKind::SyntheticClock,
            EnergySource::PowerModel { .. } => SourceKind::PowerModel,
            EnergySource::CounterFile { .. } => SourceKind::CounterFile,
        }
    }
}

/// Parses `synthetic`, `synthetic:<seconds>,<joules>`, `power:<watts>` and
/// `counter:<path>,<wrap_max_uj>`. Plain `synthetic` scripts one second and
/// one hundred joules per repetition.
impl FromStr for EnergySource {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| LabError::Config(format!("bad energy source '{s}': {what}"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad("expected a number"));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "synthetic" if arg.is_empty() => EnergySource::synthetic(vec![Delta {
                seconds: 1.0,
                joules: 100.0,
            }]),
            "synthetic" => {
                let (sec, j) = arg.split_once(',').ok_or_else(|| bad("expected <seconds>,<joules>"))?;
                EnergySource::synthetic(vec![Delta {
                    seconds: num(sec)?,
                    joules: num(j)?,
                }])
            }
            "power" => EnergySource::power(num(arg)?, Timer::Wall),
            "counter" => {
                let (path, wrap) = arg.rsplit_once(',').ok_or_else(|| bad("expected <path>,<wrap>"))?;
                let wrap = wrap.trim().parse::<u64>().map_err(|_| bad("wrap must be an integer"))?;
                EnergySource::counter(path, wrap, Timer::Wall)
            }
            _ => Err(bad("unknown kind")),
        }
    }
}

impl fmt::Display for EnergySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergySource::SyntheticClock { deltas, .. } => write!(f, "synthetic({} deltas)", deltas.len()),
            EnergySource::PowerModel { watts, .. } => write!(f, "power:{watts}"),
            EnergySource::CounterFile { path, wrap_max_uj, .. } => {
                write!(f, "counter:{},{wrap_max_uj}", path.display())
            }
        }
    }
}

/// Microjoules consumed between two readings of a counter that wraps at `wrap_max`.
pub fn counter_delta(previous: u64, current: u64, wrap_max: u64) -> Result<u64> {
    if previous >= wrap_max || current >= wrap_max {
        return Err(LabError::domain(format!(
            "counter readings {previous}, {current} must be below the wrap maximum {wrap_max}"
        )));
    }
    Ok(if current >= previous {
        current - previous
    } else {
        current + (wrap_max - previous)
    })
}

pub fn carbon_estimate(energy_kwh: f64, g_per_kwh: f64) -> Result<f64> {
    if !(energy_kwh >= 0.0 && g_per_kwh >= 0.0) {
        return Err(LabError::domain(format!(
            "energy {energy_kwh} kWh and intensity {g_per_kwh} g/kWh must be >= 0"
        )));
    }
    Ok(energy_kwh * g_per_kwh)
}

fn read_counter(path: &Path, wrap_max: u64) -> Result<u64> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Source(format!("{}: {e}", path.display())))?;
    let value = text
        .trim()
        .parse::<u64>()
        .map_err(|_| LabError::Source(format!("{}: not a decimal integer: {:?}", path.display(), text.trim())))?;
    if value >= wrap_max {
        return Err(LabError::Source(format!(
            "{}: reading {value} is not below the wrap maximum {wrap_max}",
            path.display()
        )));
    }
    Ok(value)
}

static MEASUREMENT: Mutex<()> = Mutex::new(());

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
}

struct ActiveGuard;

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| a.set(false));
    }
}

/// Runs `work` `repetitions` times and accumulates time and energy over all
/// of them. Measurements are serialized process-wide; starting one from
/// inside another on the same thread is a state error.
pub fn measure<F>(source: &mut EnergySource, mut work: F, repetitions: usize) -> Result<ResourceRecord>
where
    F: FnMut() -> Result<()>,
{
    if repetitions == 0 {
        return Err(LabError::domain("repetitions must be at least 1"));
    }
    if ACTIVE.with(|a| a.replace(true)) {
        return Err(LabError::State("a measurement is already active".into()));
    }
    let _active = ActiveGuard;
    let _lock = MEASUREMENT.lock().unwrap_or_else(|p| p.into_inner());

    let mut seconds = 0.0;
    let mut joules = 0.0;
    for _ in 0..repetitions {
        let (ds, dj) = run_once(source, &mut work)?;
        seconds += ds;
        joules += dj;
    }
    let energy_kwh = joules / JOULES_PER_KWH;
    Ok(ResourceRecord {
        wall_time_s: seconds,
        energy_j: joules,
        energy_kwh,
        carbon_g: carbon_estimate(energy_kwh, DEFAULT_CARBON_INTENSITY)?,
        carbon_intensity_g_per_kwh: DEFAULT_CARBON_INTENSITY,
        runs: repetitions,
        source: source.kind(),
    })
}

fn timed<F: FnMut() -> Result<()>>(timer: &mut Timer, work: &mut F) -> Result<f64> {
    match timer {
        Timer::Wall => {
            let start = Instant::now();
            work()?;
            Ok(start.elapsed().as_secs_f64())
        }
        Timer::Scripted { seconds, cursor } => {
            work()?;
            let s = seconds[*cursor % seconds.len()];
            *cursor += 1;
            Ok(s)
        }
    }
}

fn run_once<F: FnMut() -> Result<()>>(source: &mut EnergySource, work: &mut F) -> Result<(f64, f64)> {
    match source {
        EnergySource::SyntheticClock { deltas, cursor } => {
            work()?;
            let d = deltas[*cursor % deltas.len()];
            *cursor += 1;
            Ok((d.seconds, d.joules))
        }
        EnergySource::PowerModel { watts, timer } => {
            let s = timed(timer, work)?;
            Ok((s, *watts * s))
        }
        EnergySource::CounterFile {
            path,
            wrap_max_uj,
            timer,
        } => {
            let before = read_counter(path, *wrap_max_uj)?;
            let s = timed(timer, work)?;
            let after = read_counter(path, *wrap_max_uj)?;
            let uj = counter_delta(before, after, *wrap_max_uj)?;
            Ok((s, uj as f64 * 1e-6))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noop() -> Result<()> {
        Ok(())
    }

    #[test]
    fn power_model_arithmetic() {
        let mut src = EnergySource::power(100.0, Timer::scripted(vec![10.0]).unwrap()).unwrap();
        let r = measure(&mut src, noop, 1).unwrap();
        assert_eq!(r.energy_j, 1000.0);
        assert!((r.energy_kwh - 2.7778e-4).abs() < 1e-8);
        assert_eq!(r.wall_time_s, 10.0);
        assert_eq!(r.source, SourceKind::PowerModel);
    }

    #[test]
    fn synthetic_deltas_accumulate() {
        let deltas = vec![
            Delta {
                seconds: 1.0,
                joules: 3.0,
            },
            Delta {
                seconds: 2.0,
                joules: 4.0,
            },
        ];
        let mut src = EnergySource::synthetic(deltas).unwrap();
        let r = measure(&mut src, noop, 2).unwrap();
        assert_eq!(r.energy_j, 7.0);
        assert_eq!(r.wall_time_s, 3.0);
    }

    #[test]
    fn zero_source_thirty_runs() {
        let mut src = EnergySource::synthetic(vec![Delta {
            seconds: 0.0,
            joules: 0.0,
        }])
        .unwrap();
        let mut calls = 0;
        let r = measure(
            &mut src,
            || {
                calls += 1;
                Ok(())
            },
            DEFAULT_REPETITIONS,
        )
        .unwrap();
        assert_eq!((r.energy_kwh, r.runs, calls), (0.0, 30, 30));
    }

    #[test]
    fn nested_measurement_is_rejected() {
        let mut outer = EnergySource::from_str("synthetic").unwrap();
        let mut inner = outer.clone();
        let mut nested = None;
        measure(
            &mut outer,
            || {
                nested = Some(measure(&mut inner, noop, 1));
                Ok(())
            },
            1,
        )
        .unwrap();
        assert!(matches!(nested, Some(Err(LabError::State(_)))));
        // The guard is released afterwards.
        measure(&mut inner, noop, 1).unwrap();
    }

    #[test]
    fn counter_cases() {
        assert_eq!(counter_delta(5, 12, 1000).unwrap(), 7);
        assert_eq!(counter_delta(990, 10, 1000).unwrap(), 20);
        assert_eq!(counter_delta(7, 7, 1000).unwrap(), 0);
        assert!(matches!(counter_delta(1000, 1, 1000), Err(LabError::Domain(_))));
        assert!(counter_delta(1, 1000, 1000).is_err());
    }

    #[test]
    fn counter_file_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("energy_uj");
        fs::write(&path, "999000\n").unwrap();
        let mut src = EnergySource::counter(&path, 1_000_000, Timer::scripted(vec![2.0]).unwrap()).unwrap();
        let p = path.clone();
        let r = measure(&mut src, || Ok(fs::write(&p, "4000\n")?), 1).unwrap();
        assert!((r.energy_j - 0.005).abs() < 1e-15);

        fs::write(&path, "abc").unwrap();
        assert!(matches!(measure(&mut src, noop, 1), Err(LabError::Source(_))));
        let mut missing = EnergySource::counter(dir.path().join("nope"), 10, Timer::Wall).unwrap();
        assert!(matches!(measure(&mut missing, noop, 1), Err(LabError::Source(_))));
    }

    #[test]
    fn carbon() {
        assert_eq!(carbon_estimate(0.01, 475.0).unwrap(), 4.75);
        assert_eq!(carbon_estimate(0.0, 123.0).unwrap(), 0.0);
        assert!((carbon_estimate(0.02335, 475.0).unwrap() - 11.09).abs() < 0.005);
        assert!(carbon_estimate(-1.0, 475.0).is_err());
        assert!(carbon_estimate(1.0, -475.0).is_err());
    }

    #[test]
    fn parse_sources() {
        assert_eq!(EnergySource::from_str("power:50").unwrap().kind(), SourceKind::PowerModel);
        let c = EnergySource::from_str("counter:/sys/x/energy_uj,262143328850").unwrap();
        assert_eq!(c.kind(), SourceKind::CounterFile);
        assert!(EnergySource::from_str("power:0").is_err());
        assert!(EnergySource::from_str("counter:/x,0").is_err());
        assert!(EnergySource::from_str("lamp").is_err());
        let s = EnergySource::from_str("synthetic:2,50").unwrap();
        assert_eq!(
            s,
            EnergySource::SyntheticClock {
                deltas: vec![Delta {
                    seconds: 2.0,
                    joules: 50.0
                }],
                cursor: 0
            }
        );
        assert!(EnergySource::synthetic(vec![]).is_err());
        assert!(EnergySource::power(-1.0, Timer::Wall).is_err());
    }

    #[test]
    fn zero_repetitions() {
        let mut s = EnergySource::from_str("synthetic").unwrap();
        assert!(measure(&mut s, noop, 0).is_err());
    }
}
