use approx::assert_abs_diff_eq;
use flightcast_core::datagen::{generate, SyntheticConfig};
use flightcast_core::eval::{
    aggregate, comparison_table, compute_metrics, mse_comparison, ComparisonInput, Level, MetricsReport,
    RollingForecasts, ScoredOrigin,
};
use flightcast_core::pipeline::{parse_ts, DateRange, SLICE};
use flightcast_core::Error;

fn metrics(a: &[f64], p: &[f64]) -> MetricsReport {
    compute_metrics(a, p).unwrap()
}

#[test]
fn worked_metric_examples() {
    let m = metrics(&[3.0, 1.0, 4.0], &[3.0, 1.0, 4.0]);
    assert_eq!((m.mse, m.mae, m.explained_variance), (0.0, 0.0, 1.0));

    let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
    assert_abs_diff_eq!(m.mse, 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.mae, 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(m.explained_variance, 0.0, epsilon = 1e-12);

    let m = metrics(&[0.0, 2.0], &[0.0, 1.0]);
    assert_abs_diff_eq!(m.mse, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(m.mae, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(m.explained_variance, 0.75, epsilon = 1e-12);
}

#[test]
fn metric_contract_errors() {
    assert!(matches!(compute_metrics(&[], &[]), Err(Error::Contract(_))));
    assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    // constant actuals: 1 only when residuals vanish
    assert_eq!(metrics(&[2.0, 2.0], &[2.0, 2.0]).explained_variance, 1.0);
    assert_eq!(metrics(&[2.0, 2.0], &[1.0, 2.0]).explained_variance, 0.0);
}

#[test]
fn reference_comparison_percentages() {
    let rows = [
        ("ASPM", "Linear_Regression", 7.63, 10, 124),
        ("ASPM", "Autoregressive", 8.91, 96, 124),
        ("ASPM", "Seq2Seq", 6.53, 10, 124),
        ("ASPM", "Seq2Seq_Attention", 6.27, 10, 124),
        ("ASPM+SWIM", "Seq2Seq_Attention", 5.49, 10, 8),
    ];
    let inputs: Vec<ComparisonInput> = rows
        .iter()
        .map(|(d, m, mse, p, tau)| ComparisonInput {
            data_label: d.to_string(),
            model_label: m.to_string(),
            metrics: MetricsReport { mse: *mse, mae: 0.0, explained_variance: 0.0, n: 1 },
            n_lag: *p,
            n_look_ahead: *tau,
        })
        .collect();
    let table = comparison_table(&inputs, false).unwrap();
    let pct: Vec<i64> = table.rows.iter().map(|r| r.mse_comparison_pct).collect();
    assert_eq!(pct, vec![-39, -62, -19, -14, 0]);
    assert_eq!(table.reference, 4);
    assert!(table.render().contains("-62%"));

    let sorted = comparison_table(&inputs, true).unwrap();
    let mses: Vec<f64> = sorted.rows.iter().map(|r| r.metrics.mse).collect();
    assert_eq!(mses, vec![8.91, 7.63, 6.53, 6.27, 5.49]);

    assert_eq!(mse_comparison(5.49, 5.49).unwrap(), 0);
    assert!(mse_comparison(1.0, 0.0).is_err());
}

#[test]
fn ties_pick_the_first_row() {
    let row = |label: &str, mse| ComparisonInput {
        data_label: "ASPM".into(),
        model_label: label.into(),
        metrics: MetricsReport { mse, mae: 0.0, explained_variance: 0.0, n: 1 },
        n_lag: 1,
        n_look_ahead: 1,
    };
    let t = comparison_table(&[row("a", 3.0), row("b", 2.0), row("c", 2.0)], false).unwrap();
    assert_eq!(t.reference, 1);
    let single = comparison_table(&[row("a", 3.0)], false).unwrap();
    assert_eq!(single.rows[0].mse_comparison_pct, 0);
}

#[test]
fn aggregation_is_exactly_additive_on_generated_data() {
    let mut cfg = SyntheticConfig::surge_bearing(11);
    cfg.range = DateRange::new(cfg.range.start, cfg.range.start + chrono::Days::new(20)).unwrap();
    let recs = generate(&cfg).unwrap();
    // start mid-hour so both edges hold partial buckets
    let series: Vec<_> =
        recs[2..recs.len() - 3].iter().map(|r| (r.slice_start_utc, r.dep_demand * 0.37 + 0.01)).collect();

    let hourly = aggregate(&series, Level::Hourly).unwrap();
    for (ts, v) in &hourly {
        let i = series.iter().position(|(t, _)| t == ts).unwrap();
        let manual = series[i..i + 4].iter().fold(0.0, |acc, (_, x)| acc + x);
        assert_eq!(v.to_bits(), manual.to_bits());
    }
    // 21 days of hours minus the partial first and last hour
    assert_eq!(hourly.len(), 21 * 24 - 2);

    let daily = aggregate(&series, Level::Daily).unwrap();
    assert_eq!(daily.len(), 19);
    for (ts, v) in &daily {
        let i = series.iter().position(|(t, _)| t == ts).unwrap();
        let manual = series[i..i + 96].iter().fold(0.0, |acc, (_, x)| acc + x);
        assert_eq!(v.to_bits(), manual.to_bits());
    }
}

#[test]
fn rolling_scores_pool_every_horizon() {
    let t0 = parse_ts("2020-01-01T00:00:00Z").unwrap();
    let origins: Vec<ScoredOrigin> = (0..8)
        .map(|o| {
            let times: Vec<_> = (0..2).map(|h| t0 + SLICE * (o + h)).collect();
            let actual: Vec<f64> = (0..2).map(|h| (o + h) as f64).collect();
            let predicted = actual.iter().map(|a| a + 1.0).collect();
            ScoredOrigin { origin: times[0], times, actual, predicted }
        })
        .collect();
    let f = RollingForecasts { origins };
    assert_eq!(f.n_pairs(), 16);
    let q = f.score(Level::Quarter).unwrap().unwrap();
    assert_eq!((q.n, q.mse, q.mae), (16, 1.0, 1.0));
    // each horizon covers 8 consecutive slices starting on the hour (h=0)
    // or a quarter past (h=1): 2 full hours and 1 full hour
    let h = f.score(Level::Hourly).unwrap().unwrap();
    assert_eq!((h.n, h.mse), (3, 16.0));
    assert!(f.score(Level::Daily).unwrap().is_none());

    let mut csv = Vec::new();
    f.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 17);
}
