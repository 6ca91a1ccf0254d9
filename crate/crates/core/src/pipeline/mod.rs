//! Feature processing: parse → clean/gap-fill → calendar derivation →
//! scaling → windowing, plus the date-based train/test split.

mod clean;
mod record;
mod scaler;
mod split;
mod window;

pub use clean::clean_series;
pub use record::{
    derive_calendar, format_ts, is_slice_boundary, parse_records, parse_ts, write_records, Calendar, QuarterHourRecord,
    CALENDAR_FEATURES, CSV_HEADER, SLICE, SLICES_PER_DAY, SLICES_PER_HOUR,
};
pub use scaler::{apply_scaler, fit_scaler, Scaler};
pub use split::{split_train_test, test_windows, DateRange, SplitSpec};
pub use window::{latest_window, make_windows, windows_where, KnownStep, SupervisedWindow};

use std::io::Read;

use crate::error::Result;

/// Parses and gap-fills a CSV source.
pub fn load_series<R: Read>(source: R) -> Result<Vec<QuarterHourRecord>> {
    clean_series(&parse_records(source)?)
}
