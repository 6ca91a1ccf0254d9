use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

use super::record::{derive_calendar, Calendar, QuarterHourRecord, SLICE};

/// A future slice whose calendar is known at forecast time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnownStep {
    pub slice_start_utc: DateTime<Utc>,
    pub calendar: Calendar,
}

/// One supervised instance: `p` past slices and `τ_max` future slices.
///
/// `origin` is the start of the first target slice; the past ends at the
/// slice just before it.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedWindow {
    pub origin: DateTime<Utc>,
    /// Demand of the `p` slices before `origin`, oldest first.
    pub past_y: Vec<f64>,
    /// Observed inputs of the same slices; empty vectors when the surface
    /// feed is absent.
    pub past_x: Vec<Vec<f64>>,
    /// Calendar of the `τ_max` target slices.
    pub future_f: Vec<KnownStep>,
    /// Demand of the target slices.
    pub targets: Vec<f64>,
}

impl SupervisedWindow {
    pub fn n_lag(&self) -> usize {
        self.past_y.len()
    }

    pub fn n_look_ahead(&self) -> usize {
        self.targets.len()
    }

    /// Observed swim count `k` slices into the past window, if present.
    pub fn swim_at(&self, k: usize) -> Option<f64> {
        self.past_x.get(k).and_then(|x| x.first().copied())
    }
}

fn observed(r: &QuarterHourRecord) -> Vec<f64> {
    r.swim_observed_departures.into_iter().collect()
}

fn window_at(records: &[QuarterHourRecord], start: usize, p: usize, tau: usize) -> SupervisedWindow {
    let past = &records[start..start + p];
    let future = &records[start + p..start + p + tau];
    SupervisedWindow {
        origin: future[0].slice_start_utc,
        past_y: past.iter().map(|r| r.dep_demand).collect(),
        past_x: past.iter().map(observed).collect(),
        future_f: future
            .iter()
            .map(|r| KnownStep { slice_start_utc: r.slice_start_utc, calendar: r.calendar })
            .collect(),
        targets: future.iter().map(|r| r.dep_demand).collect(),
    }
}

/// Every stride-1 window over a gap-free series:
/// `records.len() - p - τ_max + 1` of them.
pub fn make_windows(records: &[QuarterHourRecord], p: usize, tau_max: usize) -> Result<Vec<SupervisedWindow>> {
    if p == 0 || tau_max == 0 {
        return Err(Error::contract("n_lag and n_look_ahead must be ≥ 1"));
    }
    let need = p + tau_max;
    if records.len() < need {
        return Err(Error::contract(format!(
            "series of length {} is too short; windows need at least n_lag + n_look_ahead = {need} records",
            records.len()
        )));
    }
    Ok((0..=records.len() - need).map(|s| window_at(records, s, p, tau_max)).collect())
}

/// Windows whose origin satisfies `keep`, built over the whole series so the
/// history may reach back before the kept range.
pub fn windows_where(
    records: &[QuarterHourRecord],
    p: usize,
    tau_max: usize,
    keep: impl Fn(&DateTime<Utc>, &DateTime<Utc>) -> bool,
) -> Result<Vec<SupervisedWindow>> {
    if p == 0 || tau_max == 0 {
        return Err(Error::contract("n_lag and n_look_ahead must be ≥ 1"));
    }
    let need = p + tau_max;
    if records.len() < need {
        return Ok(Vec::new());
    }
    Ok((0..=records.len() - need)
        .filter(|&s| keep(&records[s + p].slice_start_utc, &records[s + need - 1].slice_start_utc))
        .map(|s| window_at(records, s, p, tau_max))
        .collect())
}

/// The unlabeled window that starts right after the last record: the past
/// is the final `p` records and the future calendar is derived from the
/// following `τ_max` slice timestamps. `targets` is empty.
pub fn latest_window(records: &[QuarterHourRecord], p: usize, tau_max: usize) -> Result<SupervisedWindow> {
    if p == 0 || tau_max == 0 {
        return Err(Error::contract("n_lag and n_look_ahead must be ≥ 1"));
    }
    if records.len() < p {
        return Err(Error::contract(format!("forecasting needs {p} past records, got {}", records.len())));
    }
    let past = &records[records.len() - p..];
    let last = past[p - 1].slice_start_utc;
    let future_f = (1..=tau_max)
        .map(|k| {
            let ts = last + SLICE * k as i32;
            Ok(KnownStep { slice_start_utc: ts, calendar: derive_calendar(&ts)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SupervisedWindow {
        origin: future_f[0].slice_start_utc,
        past_y: past.iter().map(|r| r.dep_demand).collect(),
        past_x: past.iter().map(observed).collect(),
        future_f,
        targets: Vec::new(),
    })
}
