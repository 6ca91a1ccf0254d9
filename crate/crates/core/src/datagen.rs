//! Deterministic synthetic quarter-hour departure demand.
//!
//! Each slice draws from its own PCG-64 stream keyed by the seed and the
//! slice's absolute index (Unix seconds / 900), so any date range generates
//! the same values it would as part of a longer run.
//!
//! Per slice `t` with calendar `(hour, dow)`:
//!
//! ```text
//! base(t)  = base_rate · hour_profile[hour] · dow_profile[dow]
//! surge(t) = Σ added_rate of events covering t
//! demand   = round(base + surge)                 deterministic
//!          = Poisson(base) + Poisson(surge)      poisson
//! swim     = max(0, signal + round(N(0, σ)))
//! ```
//!
//! The swim signal equals demand, except with `swim_lead` where the surge
//! component is taken from slice `t + SWIM_LEAD` instead of `t`.

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Poisson};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{derive_calendar, DateRange, QuarterHourRecord, SLICE};

/// Quarters by which surges show up in the swim channel ahead of demand.
pub const SWIM_LEAD: i64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Deterministic,
    Poisson,
}

/// A burst of extra demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeEvent {
    pub date: NaiveDate,
    pub start_hour: u32,
    pub duration_quarters: u32,
    pub added_rate: f64,
}

impl SurgeEvent {
    fn start(&self) -> DateTime<Utc> {
        self.date.and_time(NaiveTime::from_hms_opt(self.start_hour, 0, 0).unwrap_or_default()).and_utc()
    }

    fn covers(&self, ts: &DateTime<Utc>) -> bool {
        let start = self.start();
        *ts >= start && *ts < start + SLICE * self.duration_quarters as i32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub range: DateRange,
    pub base_rate: f64,
    /// 24 multipliers by UTC hour.
    pub hour_profile: Vec<f64>,
    /// 7 multipliers, Monday first.
    pub dow_profile: Vec<f64>,
    #[serde(default)]
    pub surges: Vec<SurgeEvent>,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub swim_noise_std: f64,
    #[serde(default)]
    pub swim_lead: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticConfig {
    /// Flat profiles, no surges, no noise.
    pub fn flat(range: DateRange, base_rate: f64) -> Self {
        Self {
            range,
            base_rate,
            hour_profile: vec![1.0; 24],
            dow_profile: vec![1.0; 7],
            surges: Vec::new(),
            noise: NoiseMode::Deterministic,
            swim_noise_std: 0.0,
            swim_lead: false,
            seed: 0,
        }
    }

    /// The shipped default: 2019-01-01..2020-01-31, a busy-airport daily
    /// shape, weekday/weekend variation, Poisson counts and roughly four
    /// seeded general-aviation surges a week that the swim channel sees
    /// early.
    pub fn surge_bearing(seed: u64) -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        let range = DateRange { start: d(2019, 1, 1), end: d(2020, 1, 31) };
        let hour_profile = vec![
            0.25, 0.15, 0.1, 0.1, 0.2, 0.6, 1.2, 1.6, 1.7, 1.5, 1.3, 1.2, //
            1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.5, 1.2, 1.0, 0.8, 0.6, 0.4,
        ];
        let dow_profile = vec![1.0, 0.95, 0.95, 1.0, 1.15, 1.1, 0.9];

        let mut rng = Pcg64::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        let mut surges = Vec::new();
        let mut day = range.start;
        while day <= range.end {
            if rng.random_bool(4.0 / 7.0) {
                surges.push(SurgeEvent {
                    date: day,
                    start_hour: rng.random_range(7..=20),
                    duration_quarters: rng.random_range(6..=10),
                    added_rate: rng.random_range(10..=16) as f64,
                });
            }
            day = day.succ_opt().expect("date in range");
        }
        Self {
            range,
            base_rate: 4.0,
            hour_profile,
            dow_profile,
            surges,
            noise: NoiseMode::Poisson,
            swim_noise_std: 0.5,
            swim_lead: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        DateRange::new(self.range.start, self.range.end)?;
        if !(self.base_rate >= 0.0) || !self.base_rate.is_finite() {
            return Err(Error::contract("base_rate must be a finite value ≥ 0"));
        }
        if self.hour_profile.len() != 24 || self.dow_profile.len() != 7 {
            return Err(Error::contract("hour_profile needs 24 entries and dow_profile 7"));
        }
        if self.hour_profile.iter().chain(&self.dow_profile).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::contract("profile multipliers must be positive"));
        }
        if !(self.swim_noise_std >= 0.0) || !self.swim_noise_std.is_finite() {
            return Err(Error::contract("swim_noise_std must be ≥ 0"));
        }
        for s in &self.surges {
            if s.duration_quarters == 0 || s.start_hour > 23 || !(s.added_rate >= 0.0) {
                return Err(Error::contract(format!(
                    "surge on {} needs duration ≥ 1, start hour 0–23 and rate ≥ 0",
                    s.date
                )));
            }
        }
        Ok(())
    }

    fn base(&self, ts: &DateTime<Utc>) -> Result<f64> {
        let c = derive_calendar(ts)?;
        Ok(self.base_rate * self.hour_profile[c.hour as usize] * self.dow_profile[c.day_of_week as usize - 1])
    }

    fn surge(&self, ts: &DateTime<Utc>) -> f64 {
        self.surges.iter().filter(|s| s.covers(ts)).map(|s| s.added_rate).sum()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream of one slice.
fn slice_rng(seed: u64, ts: &DateTime<Utc>) -> Pcg64 {
    let index = ts.timestamp().div_euclid(900) as u64;
    let state = ((splitmix64(seed) as u128) << 64) | splitmix64(seed ^ 0xa076_1d64_78bd_642f) as u128;
    Pcg64::new(state, index as u128)
}

fn poisson(rng: &mut Pcg64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive finite rate").sample(rng)
}

struct SliceDraw {
    base: f64,
    surge: f64,
    noise: f64,
}

impl SyntheticConfig {
    fn draw(&self, ts: &DateTime<Utc>) -> Result<SliceDraw> {
        let base = self.base(ts)?;
        let surge = self.surge(ts);
        let mut rng = slice_rng(self.seed, ts);
        let (b, s) = match self.noise {
            NoiseMode::Deterministic => (base, surge),
            NoiseMode::Poisson => {
                let b = poisson(&mut rng, base);
                (b, poisson(&mut rng, surge))
            }
        };
        let noise = if self.swim_noise_std > 0.0 {
            Normal::new(0.0, self.swim_noise_std).expect("valid std").sample(&mut rng)
        } else {
            0.0
        };
        Ok(SliceDraw { base: b, surge: s, noise })
    }
}

/// Generates every slice of `cfg.range`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<QuarterHourRecord>> {
    cfg.validate()?;
    let start = cfg.range.start.and_time(NaiveTime::MIN).and_utc();
    let end = cfg.range.end.and_time(NaiveTime::MIN).and_utc() + Duration::days(1);
    let lead = SLICE * SWIM_LEAD as i32;

    let mut out = Vec::new();
    let mut ts = start;
    while ts < end {
        let now = cfg.draw(&ts)?;
        let demand = (now.base + now.surge).round_ties_even();
        let signal = if cfg.swim_lead {
            let ahead = cfg.draw(&(ts + lead))?;
            (now.base + ahead.surge).round_ties_even()
        } else {
            demand
        };
        let swim = (signal + now.noise.round_ties_even()).max(0.0);
        out.push(QuarterHourRecord::new(ts, demand, Some(swim))?);
        ts += SLICE;
    }
    Ok(out)
}
