use chrono::{DateTime, NaiveDate, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::record::QuarterHourRecord;
use super::window::{windows_where, SupervisedWindow};

/// Inclusive range of UTC calendar dates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::contract(format!("date range {start}..{end} ends before it starts")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        let d = ts.date_naive();
        self.start <= d && d <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub test: DateRange,
}

impl SplitSpec {
    /// Calendar year 2019 for training, January 2020 for testing.
    pub fn year_2019_jan_2020() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            train: DateRange { start: d(2019, 1, 1), end: d(2019, 12, 31) },
            test: DateRange { start: d(2020, 1, 1), end: d(2020, 1, 31) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        DateRange::new(self.train.start, self.train.end)?;
        DateRange::new(self.test.start, self.test.end)?;
        if self.train.end >= self.test.start {
            return Err(Error::contract(format!(
                "train range {}..{} must end before test range {}..{} starts",
                self.train.start, self.train.end, self.test.start, self.test.end
            )));
        }
        Ok(())
    }
}

/// Partitions records by date. Records outside both ranges are dropped.
pub fn split_train_test(
    records: &[QuarterHourRecord],
    spec: &SplitSpec,
) -> Result<(Vec<QuarterHourRecord>, Vec<QuarterHourRecord>)> {
    spec.validate()?;
    let train: Vec<_> = records.iter().filter(|r| spec.train.contains(&r.slice_start_utc)).cloned().collect();
    let test: Vec<_> = records.iter().filter(|r| spec.test.contains(&r.slice_start_utc)).cloned().collect();
    if train.is_empty() {
        warn!("train range {}..{} holds no records", spec.train.start, spec.train.end);
    }
    if test.is_empty() {
        warn!("test range {}..{} holds no records", spec.test.start, spec.test.end);
    }
    Ok((train, test))
}

/// Evaluation windows: every origin and target lies in the test range, and
/// history may reach back into the preceding records.
pub fn test_windows(
    records: &[QuarterHourRecord],
    spec: &SplitSpec,
    p: usize,
    tau_max: usize,
) -> Result<Vec<SupervisedWindow>> {
    spec.validate()?;
    windows_where(records, p, tau_max, |first, last| spec.test.contains(first) && spec.test.contains(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::record::{format_ts, parse_ts, SLICE};

    fn series(start: &str, n: usize) -> Vec<QuarterHourRecord> {
        let t0 = parse_ts(start).unwrap();
        (0..n).map(|i| QuarterHourRecord::new(t0 + SLICE * i as i32, 1.0, None).unwrap()).collect()
    }

    #[test]
    fn default_year_and_january_ranges() {
        let recs = series("2019-12-31T00:00:00Z", 96 * 3);
        let spec = SplitSpec::year_2019_jan_2020();
        let (train, test) = split_train_test(&recs, &spec).unwrap();
        assert_eq!(format_ts(&train.last().unwrap().slice_start_utc), "2019-12-31T23:45:00Z");
        assert_eq!(format_ts(&test[0].slice_start_utc), "2020-01-01T00:00:00Z");

        let w = test_windows(&recs, &spec, 10, 8).unwrap();
        assert_eq!(format_ts(&w[0].origin), "2020-01-01T00:00:00Z");
        assert_eq!(w.len(), 96 * 2 - 8 + 1);
    }

    #[test]
    fn everything_in_train_gives_empty_test() {
        let recs = series("2019-03-01T00:00:00Z", 50);
        let (train, test) = split_train_test(&recs, &SplitSpec::year_2019_jan_2020()).unwrap();
        assert_eq!(train.len(), 50);
        assert!(test.is_empty());
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let mut spec = SplitSpec::year_2019_jan_2020();
        spec.test.start = NaiveDate::from_ymd_opt(2019, 12, 1).unwrap();
        assert!(split_train_test(&[], &spec).is_err());
    }
}
