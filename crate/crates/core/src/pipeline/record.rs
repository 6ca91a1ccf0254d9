use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spacing between consecutive records.
pub const SLICE: Duration = Duration::minutes(15);

pub const SLICES_PER_HOUR: usize = 4;
pub const SLICES_PER_DAY: usize = 96;

/// Calendar features derived from a slice start. These are the future-known
/// inputs of the models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Calendar {
    /// 0–23
    pub hour: u8,
    /// 1–4
    pub qtr: u8,
    /// 1 = Monday … 7 = Sunday
    pub day_of_week: u8,
    /// 1–12
    pub month: u8,
}

/// Categorical features with their cardinalities, in embedding order.
pub const CALENDAR_FEATURES: [(&str, usize); 4] = [("hour", 24), ("qtr", 4), ("day_of_week", 7), ("month", 12)];

impl Calendar {
    /// Zero-based category ids in [`CALENDAR_FEATURES`] order.
    pub fn category_ids(&self) -> [usize; 4] {
        [self.hour as usize, self.qtr as usize - 1, self.day_of_week as usize - 1, self.month as usize - 1]
    }
}

pub fn is_slice_boundary(ts: &DateTime<Utc>) -> bool {
    ts.minute().is_multiple_of(15) && ts.second() == 0 && ts.nanosecond() == 0
}

/// Hour, quarter-hour, ISO day of week and month of a slice start.
pub fn derive_calendar(ts: &DateTime<Utc>) -> Result<Calendar> {
    if !is_slice_boundary(ts) {
        return Err(Error::contract(format!("{} is not on a 15-minute boundary", format_ts(ts))));
    }
    Ok(Calendar {
        hour: ts.hour() as u8,
        qtr: (ts.minute() / 15 + 1) as u8,
        day_of_week: ts.weekday().number_from_monday() as u8,
        month: ts.month() as u8,
    })
}

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim()).ok().map(|d| d.with_timezone(&Utc))
}

/// One 15-minute airport slice.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarterHourRecord {
    pub slice_start_utc: DateTime<Utc>,
    pub calendar: Calendar,
    /// Departure demand, the forecast target.
    pub dep_demand: f64,
    /// Departures observed on the surface feed, when available.
    pub swim_observed_departures: Option<f64>,
}

impl QuarterHourRecord {
    pub fn new(ts: DateTime<Utc>, dep_demand: f64, swim: Option<f64>) -> Result<Self> {
        Ok(Self { slice_start_utc: ts, calendar: derive_calendar(&ts)?, dep_demand, swim_observed_departures: swim })
    }
}

pub const CSV_HEADER: [&str; 7] =
    ["slice_start_utc", "hour", "qtr", "day_of_week", "month", "dep_demand", "swim_observed_departures"];

struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.fract() == 0.0 && self.0.abs() < 1e15 {
            write!(f, "{}", self.0 as i64)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Writes records in the pipeline CSV schema.
pub fn write_records<W: Write>(out: W, records: &[QuarterHourRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::contract(format!("csv write: {e}"));
    w.write_record(CSV_HEADER).map_err(map)?;
    for r in records {
        let c = r.calendar;
        w.write_record([
            format_ts(&r.slice_start_utc),
            c.hour.to_string(),
            c.qtr.to_string(),
            c.day_of_week.to_string(),
            c.month.to_string(),
            Num(r.dep_demand).to_string(),
            r.swim_observed_departures.map(|s| Num(s).to_string()).unwrap_or_default(),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| Error::contract(format!("csv write: {e}")))?;
    Ok(())
}

/// Parses the pipeline CSV. The header must name `slice_start_utc` and
/// `dep_demand`; the calendar and swim columns are optional. Calendar cells
/// that are present are checked against the timestamp, empty ones are
/// derived. Output is sorted by timestamp; duplicate timestamps are an error.
pub fn parse_records<R: Read>(source: R) -> Result<Vec<QuarterHourRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let mut cols = [None; 7];
    for (i, name) in header.iter().enumerate() {
        let slot = CSV_HEADER
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("unknown column `{name}`") })?;
        if cols[slot].replace(i).is_some() {
            return Err(Error::Parse { line: 1, message: format!("repeated column `{name}`") });
        }
    }
    let (Some(ts_col), Some(demand_col)) = (cols[0], cols[5]) else {
        return Err(Error::Parse { line: 1, message: "header must include slice_start_utc and dep_demand".into() });
    };

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        let field = |c: Option<usize>| c.and_then(|c| row.get(c)).filter(|s| !s.is_empty());

        let raw_ts = field(Some(ts_col)).ok_or_else(|| bad("missing slice_start_utc".into()))?;
        let ts = parse_ts(raw_ts).ok_or_else(|| bad(format!("bad timestamp `{raw_ts}`")))?;
        let calendar = derive_calendar(&ts).map_err(|e| bad(e.to_string()))?;

        let stated = [(1, calendar.hour), (2, calendar.qtr), (3, calendar.day_of_week), (4, calendar.month)];
        for (slot, expected) in stated {
            if let Some(raw) = field(cols[slot]) {
                let v: u8 = raw.parse().map_err(|_| bad(format!("bad {} `{raw}`", CSV_HEADER[slot])))?;
                if v != expected {
                    return Err(bad(format!("{} is {v} but {} implies {expected}", CSV_HEADER[slot], raw_ts)));
                }
            }
        }

        let num = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            match field(c) {
                None => Ok(None),
                Some(raw) => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(bad(format!("bad {name} `{raw}`"))),
                },
            }
        };
        let dep_demand = num(Some(demand_col), "dep_demand")?.ok_or_else(|| bad("missing dep_demand".into()))?;
        let swim = num(cols[6], "swim_observed_departures")?;
        out.push(QuarterHourRecord { slice_start_utc: ts, calendar, dep_demand, swim_observed_departures: swim });
    }

    out.sort_by_key(|r| r.slice_start_utc);
    if let Some(w) = out.windows(2).find(|w| w[0].slice_start_utc == w[1].slice_start_utc) {
        return Err(Error::DuplicateTimestamp(format_ts(&w[0].slice_start_utc)));
    }
    Ok(out)
}
