use chrono::NaiveDate;
use flightcast_core::datagen::{generate, NoiseMode, SurgeEvent, SyntheticConfig};
use flightcast_core::pipeline::DateRange;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

fn range(days: u64) -> DateRange {
    let start = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
    DateRange { start, end: start + chrono::Days::new(days - 1) }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[test]
fn poisson_counts_have_the_configured_mean() {
    let mut cfg = SyntheticConfig::flat(range(60), 5.0);
    cfg.noise = NoiseMode::Poisson;
    let demand: Vec<f64> = generate(&cfg).unwrap().iter().map(|r| r.dep_demand).collect();
    let (m, v) = mean_var(&demand);
    // 5760 draws: standard error of the mean ≈ 0.03
    assert!((m - 5.0).abs() < 0.15, "mean {m}");
    assert!((v - 5.0).abs() < 0.6, "variance {v}");
    assert!(demand.iter().all(|d| d.fract() == 0.0 && *d >= 0.0));
}

fn cross_correlation(x: &[f64], y: &[f64], lag: i64) -> f64 {
    // corr(x_t, y_{t+lag})
    let pairs: Vec<(f64, f64)> = (0..x.len() as i64)
        .filter_map(|t| {
            let u = t + lag;
            (u >= 0 && (u as usize) < y.len()).then(|| (x[t as usize], y[u as usize]))
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / a.len() as f64;
    cov / (va * vb).sqrt()
}

#[test]
fn swim_leads_demand_by_four_slices() {
    let mut cfg = SyntheticConfig::flat(range(90), 2.0);
    cfg.noise = NoiseMode::Poisson;
    cfg.swim_lead = true;
    cfg.swim_noise_std = 0.5;
    let mut rng = Pcg64::seed_from_u64(3);
    let mut day = cfg.range.start;
    while day <= cfg.range.end {
        for _ in 0..3 {
            cfg.surges.push(SurgeEvent {
                date: day,
                start_hour: rng.random_range(0..22),
                duration_quarters: rng.random_range(4..=8),
                added_rate: 10.0,
            });
        }
        day = day.succ_opt().unwrap();
    }
    let recs = generate(&cfg).unwrap();
    let swim: Vec<f64> = recs.iter().map(|r| r.swim_observed_departures.unwrap()).collect();
    let demand: Vec<f64> = recs.iter().map(|r| r.dep_demand).collect();
    let corr: Vec<(i64, f64)> = (-8..=8).map(|lag| (lag, cross_correlation(&swim, &demand, lag))).collect();
    let peak = corr.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(peak.0, 4, "{corr:?}");
}

#[test]
fn deterministic_mode_rounds_the_rate() {
    let mut cfg = SyntheticConfig::flat(range(1), 2.4);
    cfg.hour_profile[12] = 2.0;
    let recs = generate(&cfg).unwrap();
    assert_eq!(recs[0].dep_demand, 2.0);
    assert_eq!(recs[12 * 4].dep_demand, 5.0);
}

#[test]
fn default_config_is_surge_bearing_and_reproducible() {
    let cfg = SyntheticConfig::surge_bearing(2019);
    let a = generate(&cfg).unwrap();
    assert_eq!(a.len(), 396 * 96);
    assert!(cfg.surges.len() > 150);
    assert_eq!(a, generate(&cfg).unwrap());
    let json = serde_json::to_string(&cfg).unwrap();
    let back: SyntheticConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
}
