use crate::error::{Error, Result};

use super::record::{format_ts, QuarterHourRecord, SLICE};

/// Rejects negative counts and fills every missing 15-minute slice with a
/// zero-demand record without a swim value. Input must be sorted.
pub fn clean_series(records: &[QuarterHourRecord]) -> Result<Vec<QuarterHourRecord>> {
    let mut out: Vec<QuarterHourRecord> = Vec::with_capacity(records.len());
    for r in records {
        if r.dep_demand < 0.0 || r.swim_observed_departures.is_some_and(|s| s < 0.0) {
            return Err(Error::Data { timestamp: format_ts(&r.slice_start_utc), message: "negative count".into() });
        }
        if let Some(prev) = out.last() {
            if r.slice_start_utc <= prev.slice_start_utc {
                return Err(Error::contract(format!(
                    "records not strictly increasing at {}",
                    format_ts(&r.slice_start_utc)
                )));
            }
            let mut t = prev.slice_start_utc + SLICE;
            while t < r.slice_start_utc {
                out.push(QuarterHourRecord::new(t, 0.0, None)?);
                t += SLICE;
            }
        }
        out.push(r.clone());
    }
    Ok(out)
}
