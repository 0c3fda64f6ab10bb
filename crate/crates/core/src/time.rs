//! Simulation time: step advancement, action timestamps and hourly activation.
//!
//! A run advances in discrete steps of `minutes_per_step` simulated minutes.
//! Timestamps handed to the store come from [`SimClock::stamp`], which works in
//! one of two modes:
//!
//! * [`TimeMode::Step`]: every action in a step carries the step's wall time and
//!   is ordered by a per-step sequence number.
//! * [`TimeMode::Linear`]: the n-th action in a step is placed `n * scale_factor`
//!   seconds after the step's wall time, so earlier actions get earlier
//!   timestamps. This matters for hot-score ranking of posts created in the
//!   same step.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the Unix epoch, in simulated time.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub f64);

impl SimTime {
    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn minutes_since(self, earlier: SimTime) -> f64 {
        (self.0 - earlier.0) / 60.0
    }

    pub fn plus_seconds(self, s: f64) -> SimTime {
        SimTime(self.0 + s)
    }
}

impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    #[default]
    Step,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub minutes_per_step: f64,
    pub mode: TimeMode,
    /// Simulated seconds between successive stamps in linear mode.
    pub scale_factor: f64,
    /// Wall time of step 0, seconds since the Unix epoch.
    pub epoch: f64,
}

/// 2024-08-04 00:00:00 UTC.
pub const DEFAULT_EPOCH: f64 = 1_722_729_600.0;

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            minutes_per_step: 3.0,
            mode: TimeMode::Step,
            scale_factor: 1.0,
            epoch: DEFAULT_EPOCH,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TimeError {
    #[error("minutes_per_step must be positive, got {0}")]
    BadStepLength(f64),
    #[error("linear mode needs scale_factor > 0, got {0}")]
    BadScaleFactor(f64),
    #[error("activity profile needs 24 entries, got {0}")]
    ProfileLength(usize),
    #[error("activity probability {value} at hour {hour} is outside [0, 1]")]
    ProfileRange { hour: usize, value: f64 },
    #[error("hour {0} is outside 0..24")]
    BadHour(usize),
    #[error("activity file {path}: {reason}")]
    ProfileFile { path: String, reason: String },
}

/// A timestamp plus its position inside the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamp {
    pub time: SimTime,
    pub seq: u64,
}

/// Step counter and timestamp source for one run.
///
/// Only the scheduler advances the clock (`&mut self`); stamping takes `&self`
/// and may be called from any task.
#[derive(Debug)]
pub struct SimClock {
    config: ClockConfig,
    step: u64,
    intra: AtomicU64,
    // Linear mode only: base time of the current step. Equal to the nominal
    // wall time unless the previous step's stamps ran past it.
    base: f64,
}

impl SimClock {
    pub fn new(config: ClockConfig) -> Result<Self, TimeError> {
        if !(config.minutes_per_step > 0.0) {
            return Err(TimeError::BadStepLength(config.minutes_per_step));
        }
        if config.mode == TimeMode::Linear && !(config.scale_factor > 0.0) {
            return Err(TimeError::BadScaleFactor(config.scale_factor));
        }
        let base = config.epoch;
        Ok(SimClock {
            config,
            step: 0,
            intra: AtomicU64::new(0),
            base,
        })
    }

    pub fn config(&self) -> &ClockConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Nominal wall time of the current step.
    pub fn wall_time(&self) -> SimTime {
        self.wall_time_at(self.step)
    }

    pub fn wall_time_at(&self, step: u64) -> SimTime {
        SimTime(self.config.epoch + step as f64 * self.config.minutes_per_step * 60.0)
    }

    pub fn intra_step_counter(&self) -> u64 {
        self.intra.load(Ordering::SeqCst)
    }

    pub fn advance_step(&mut self) {
        let used = *self.intra.get_mut();
        let last_stamp_next = self.base + used as f64 * self.config.scale_factor;
        self.step += 1;
        *self.intra.get_mut() = 0;
        let nominal = self.wall_time().0;
        self.base = match self.config.mode {
            TimeMode::Step => nominal,
            // Keep stamps monotone when a busy step spills past the next one.
            TimeMode::Linear => nominal.max(last_stamp_next),
        };
    }

    /// Timestamp for the next action in this step.
    pub fn stamp(&self) -> Stamp {
        let seq = self.intra.fetch_add(1, Ordering::SeqCst);
        let time = match self.config.mode {
            TimeMode::Step => self.wall_time(),
            TimeMode::Linear => SimTime(self.base + seq as f64 * self.config.scale_factor),
        };
        Stamp { time, seq }
    }

    /// Hour of day (UTC) of the current step's wall time.
    pub fn hour_of(&self) -> usize {
        hour_of_time(self.wall_time())
    }
}

pub fn hour_of_time(t: SimTime) -> usize {
    let minutes = (t.0 / 60.0).floor() as i64;
    (minutes.div_euclid(60)).rem_euclid(24) as usize
}

/// Probability of being active in each hour of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActivityProfile {
    hourly: [f64; 24],
}

impl ActivityProfile {
    pub fn new(hourly: Vec<f64>) -> Result<Self, TimeError> {
        if hourly.len() != 24 {
            return Err(TimeError::ProfileLength(hourly.len()));
        }
        for (hour, &value) in hourly.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(TimeError::ProfileRange { hour, value });
            }
        }
        let mut arr = [0.0; 24];
        arr.copy_from_slice(&hourly);
        Ok(ActivityProfile { hourly: arr })
    }

    pub fn constant(p: f64) -> Result<Self, TimeError> {
        Self::new(vec![p; 24])
    }

    pub fn hourly(&self) -> &[f64; 24] {
        &self.hourly
    }

    pub fn at(&self, hour: usize) -> Result<f64, TimeError> {
        self.hourly
            .get(hour)
            .copied()
            .ok_or(TimeError::BadHour(hour))
    }
}

impl TryFrom<Vec<f64>> for ActivityProfile {
    type Error = TimeError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ActivityProfile::new(v)
    }
}

impl From<ActivityProfile> for Vec<f64> {
    fn from(p: ActivityProfile) -> Self {
        p.hourly.to_vec()
    }
}

/// Bernoulli draw with the profile's probability for `hour`.
pub fn activation_draw<R: Rng + ?Sized>(
    profile: &ActivityProfile,
    hour: usize,
    rng: &mut R,
) -> Result<bool, TimeError> {
    let p = profile.at(hour)?;
    Ok(rng.random::<f64>() < p)
}

/// Per-hour maximum of the counts over all users.
pub fn group_max(freqs: &[[u64; 24]]) -> [u64; 24] {
    let mut max = [0u64; 24];
    for row in freqs {
        for (m, &f) in max.iter_mut().zip(row) {
            *m = (*m).max(f);
        }
    }
    max
}

/// `P[j] = f[j] / group_max[j]`, or 0 for hours nobody was active in.
pub fn activity_profile_from_history(counts: &[u64; 24], group_max: &[u64; 24]) -> ActivityProfile {
    let mut hourly = [0.0; 24];
    for j in 0..24 {
        if group_max[j] > 0 {
            hourly[j] = (counts[j] as f64 / group_max[j] as f64).min(1.0);
        }
    }
    ActivityProfile { hourly }
}

/// Profiles for a whole group from its hourly count matrix.
pub fn profiles_from_history(freqs: &[[u64; 24]]) -> Vec<ActivityProfile> {
    let max = group_max(freqs);
    freqs
        .iter()
        .map(|row| activity_profile_from_history(row, &max))
        .collect()
}

/// Loads `agent_id` plus 24 probability columns from a `.csv` or `.jsonl` file.
///
/// CSV rows are `agent_id,h0,...,h23` with a header line. JSONL rows are
/// `{"agent_id": 3, "hourly": [..24 values..]}`.
pub fn load_activity_profiles(path: &Path) -> Result<Vec<(u64, ActivityProfile)>, TimeError> {
    let err = |reason: String| TimeError::ProfileFile {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut out = Vec::new();
    if is_jsonl {
        #[derive(Deserialize)]
        struct Row {
            agent_id: u64,
            hourly: ActivityProfile,
        }
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let row: Row =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            out.push((row.agent_id, row.hourly));
        }
    } else {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let row = i + 2;
            if rec.len() != 25 {
                return Err(err(format!(
                    "row {row}: expected 25 columns, got {}",
                    rec.len()
                )));
            }
            let agent_id: u64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("row {row}: bad agent_id")))?;
            let hourly = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| err(format!("row {row}: bad probability")))?;
            out.push((agent_id, ActivityProfile::new(hourly)?));
        }
    }
    Ok(out)
}
