use chrono::{DateTime, Utc};
use flightcast_core::pipeline::{
    derive_calendar, load_series, make_windows, parse_records, parse_ts, split_train_test, test_windows, write_records,
    Calendar, QuarterHourRecord, SplitSpec, SLICE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Days since 1970-01-01 to (year, month, day), proleptic Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

fn calendar_oracle(secs: i64) -> Calendar {
    let days = secs.div_euclid(86_400);
    let in_day = secs.rem_euclid(86_400);
    Calendar {
        hour: (in_day / 3600) as u8,
        qtr: ((in_day % 3600) / 900 + 1) as u8,
        // 1970-01-01 was a Thursday; Monday = 1
        day_of_week: ((days + 3).rem_euclid(7) + 1) as u8,
        month: civil_from_days(days).1 as u8,
    }
}

#[test]
fn calendar_matches_arithmetic_oracle() {
    let mut rng = Pcg64::seed_from_u64(1);
    let lo = parse_ts("2000-01-01T00:00:00Z").unwrap().timestamp() / 900;
    let hi = parse_ts("2040-12-31T23:45:00Z").unwrap().timestamp() / 900;
    for _ in 0..1000 {
        let secs = rng.random_range(lo..=hi) * 900;
        let ts = DateTime::<Utc>::from_timestamp(secs, 0).unwrap();
        assert_eq!(derive_calendar(&ts).unwrap(), calendar_oracle(secs), "{ts}");
    }
}

#[test]
fn calendar_rejects_off_boundary_timestamps() {
    assert!(derive_calendar(&parse_ts("2019-05-01T10:07:00Z").unwrap()).is_err());
}

fn series(len: usize, seed: u64) -> Vec<QuarterHourRecord> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let t0 = parse_ts("2019-06-30T20:00:00Z").unwrap();
    (0..len)
        .map(|i| {
            let swim = rng.random_bool(0.8).then(|| rng.random_range(0..30) as f64);
            QuarterHourRecord::new(t0 + SLICE * i as i32, rng.random_range(0..30) as f64, swim).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn windows_match_brute_force(len in 0usize..=200, p in 1usize..=20, tau in 1usize..=20, seed in any::<u64>()) {
        let recs = series(len, seed);
        let got = make_windows(&recs, p, tau);
        if len < p + tau {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let got = got.unwrap();
        prop_assert_eq!(got.len(), len - p - tau + 1);
        let mut expected = 0;
        for o in p..=len - tau {
            let w = &got[expected];
            expected += 1;
            prop_assert_eq!(w.origin, recs[o].slice_start_utc);
            for k in 0..p {
                let r = &recs[o - p + k];
                prop_assert_eq!(w.past_y[k], r.dep_demand);
                prop_assert_eq!(w.swim_at(k), r.swim_observed_departures);
            }
            for h in 0..tau {
                let r = &recs[o + h];
                prop_assert_eq!(w.targets[h], r.dep_demand);
                prop_assert_eq!(w.future_f[h].slice_start_utc, r.slice_start_utc);
                prop_assert_eq!(w.future_f[h].calendar, r.calendar);
            }
        }
        prop_assert_eq!(expected, got.len());
    }
}

#[test]
fn csv_round_trip() {
    let recs = series(300, 5);
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).unwrap();
    assert_eq!(parse_records(buf.as_slice()).unwrap(), recs);
}

#[test]
fn gaps_are_zero_filled_on_load() {
    let text = "slice_start_utc,dep_demand\n2019-01-01T00:00:00Z,4\n2019-01-01T00:45:00Z,6\n";
    let recs = load_series(text.as_bytes()).unwrap();
    let demand: Vec<f64> = recs.iter().map(|r| r.dep_demand).collect();
    assert_eq!(demand, vec![4.0, 0.0, 0.0, 6.0]);
}

#[test]
fn split_and_test_windows_respect_ranges() {
    let t0 = parse_ts("2019-12-30T00:00:00Z").unwrap();
    let recs: Vec<_> = (0..96 * 4).map(|i| QuarterHourRecord::new(t0 + SLICE * i, 1.0, None).unwrap()).collect();
    let spec = SplitSpec::year_2019_jan_2020();
    let (train, test) = split_train_test(&recs, &spec).unwrap();
    assert_eq!(train.len() + test.len(), recs.len());
    let ws = test_windows(&recs, &spec, 10, 8).unwrap();
    // first origin is the first test slice and history reaches into train
    assert_eq!(ws[0].origin, parse_ts("2020-01-01T00:00:00Z").unwrap());
    assert_eq!(ws.len(), 2 * 96 - 8 + 1);
    assert!(ws.iter().all(|w| spec.test.contains(&w.future_f[7].slice_start_utc)));
}
