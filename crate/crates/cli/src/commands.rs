use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use flightcast_core::baselines::{fit_ar, LinearFeatures, LinearModel};
use flightcast_core::datagen::{generate, SyntheticConfig};
use flightcast_core::eval::{
    comparison_table, ComparisonInput, ComparisonTable, EvaluationReport, RollingForecasts, ScoredOrigin,
};
use flightcast_core::models::{
    load_model, save_model, train, AnyModel, ModelKind, ModelScalers, Seq2SeqModel, TrainingConfig, TrainingHistory,
};
use flightcast_core::pipeline::{
    format_ts, latest_window, load_series, make_windows, split_train_test, test_windows, write_records,
    QuarterHourRecord, SplitSpec, SupervisedWindow,
};
use log::info;

use crate::config::{DataMode, RunConfig};

/// Windows forecast per batch during evaluation.
const EVAL_BATCH: usize = 512;

/// Anything that maps windows to multi-horizon forecasts.
pub trait Forecaster {
    fn n_lag(&self) -> usize;
    fn n_look_ahead(&self) -> usize;
    fn forecast_many(&self, windows: &[&SupervisedWindow]) -> flightcast_core::Result<Vec<Vec<f64>>>;
}

impl Forecaster for AnyModel {
    fn n_lag(&self) -> usize {
        AnyModel::n_lag(self)
    }

    fn n_look_ahead(&self) -> usize {
        AnyModel::n_look_ahead(self)
    }

    fn forecast_many(&self, windows: &[&SupervisedWindow]) -> flightcast_core::Result<Vec<Vec<f64>>> {
        AnyModel::forecast_many(self, windows)
    }
}

pub fn read_series(path: &Path) -> Result<Vec<QuarterHourRecord>> {
    let f = File::open(path).with_context(|| format!("opening data file {}", path.display()))?;
    load_series(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn has_swim(records: &[QuarterHourRecord]) -> bool {
    records.iter().any(|r| r.swim_observed_departures.is_some())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Generates a synthetic dataset and writes it as CSV. Returns the record
/// count.
pub fn cmd_datagen(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<usize> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .with_context(|| format!("parsing synthetic config {}", path.display()))?
        }
        None => SyntheticConfig::surge_bearing(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let records = generate(&cfg)?;
    let mut w = create(out)?;
    write_records(&mut w, &records)?;
    w.flush()?;
    Ok(records.len())
}

/// A fitted model and, for neural kinds, its loss curve.
pub struct Trained {
    pub model: AnyModel,
    pub history: Option<TrainingHistory>,
}

/// Fits the configured kind on the training range of `records`.
pub fn train_model(cfg: &RunConfig, records: &[QuarterHourRecord]) -> Result<Trained> {
    cfg.validate()?;
    if cfg.mode == DataMode::AspmSwim && !has_swim(records) {
        bail!("mode aspm+swim needs swim_observed_departures in the data");
    }
    let (train_recs, _) = split_train_test(records, &cfg.split)?;
    if train_recs.is_empty() {
        bail!("train range {}..{} holds no records", cfg.split.train.start, cfg.split.train.end);
    }
    let windows = |p: usize| -> Result<Vec<SupervisedWindow>> {
        let all = make_windows(&train_recs, p, cfg.n_look_ahead)?;
        Ok(all.into_iter().step_by(cfg.train_stride).collect())
    };

    match cfg.kind {
        ModelKind::Ar => {
            if cfg.training.epochs != TrainingConfig::default().epochs {
                info!("ar is fitted in closed form; epochs are ignored");
            }
            let series: Vec<f64> = train_recs.iter().map(|r| r.dep_demand).collect();
            let model = fit_ar(&series, cfg.ar_order)?;
            info!("fitted AR({}) on {} slices", cfg.ar_order, series.len());
            Ok(Trained { model: AnyModel::Ar { model, n_look_ahead: cfg.n_look_ahead }, history: None })
        }
        ModelKind::Lr => {
            let spec = LinearFeatures {
                n_lag: cfg.n_lag,
                n_look_ahead: cfg.n_look_ahead,
                swim: cfg.uses_swim(),
                calendar: cfg.lr_calendar,
            };
            let ws = windows(cfg.n_lag)?;
            let model = LinearModel::fit_windows(spec, &ws)?;
            info!("fitted linear regression on {} windows ({} features)", ws.len(), spec.width());
            Ok(Trained { model: AnyModel::Linear(model), history: None })
        }
        ModelKind::Seq2Seq | ModelKind::Seq2SeqAttention => {
            let mc = cfg.model_config();
            let scalers = ModelScalers::fit(&train_recs, &mc)?;
            let mut model = Seq2SeqModel::new(mc, scalers, cfg.training.seed)?;
            let ws = windows(cfg.n_lag)?;
            info!("training {} on {} windows", cfg.kind, ws.len());
            let history = train(&mut model, &ws, &cfg.training, |epoch, loss| {
                info!("epoch {:>3}  loss {loss:.6}", epoch + 1);
            })?;
            Ok(Trained { model: AnyModel::Seq2Seq(model), history: Some(history) })
        }
    }
}

pub fn write_loss_csv(path: &Path, history: &TrainingHistory) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.epoch_losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains, then writes the model file and (for neural kinds) the loss CSV.
pub fn cmd_train(cfg: &RunConfig, data: &Path, model_out: &Path, loss_out: Option<&Path>) -> Result<Trained> {
    cfg.validate()?;
    let records = read_series(data)?;
    let trained = train_model(cfg, &records)?;
    if let Some(parent) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(&trained.model, model_out)?;
    if let Some(history) = &trained.history {
        let path = loss_out.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(model_out, "loss.csv"));
        write_loss_csv(&path, history)?;
    }
    Ok(trained)
}

/// `model.bin` → `model.<suffix>`
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Rolling-origin forecasts over the test range at 15-minute stride.
pub fn rolling_forecasts<F: Forecaster + ?Sized>(
    model: &F,
    records: &[QuarterHourRecord],
    split: &SplitSpec,
) -> Result<RollingForecasts> {
    let tau = model.n_look_ahead();
    let windows = test_windows(records, split, model.n_lag(), tau)?;
    if windows.is_empty() {
        bail!("test range {}..{} holds no complete forecast windows", split.test.start, split.test.end);
    }
    let mut origins = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_BATCH) {
        let refs: Vec<&SupervisedWindow> = chunk.iter().collect();
        let preds = model.forecast_many(&refs)?;
        if preds.len() != chunk.len() {
            bail!("forecaster returned {} forecasts for {} windows", preds.len(), chunk.len());
        }
        for (w, p) in chunk.iter().zip(preds) {
            if p.len() != tau {
                bail!("forecaster returned {} horizons, expected {tau}", p.len());
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(flightcast_core::Error::Numeric(format!(
                    "non-finite forecast at origin {}",
                    format_ts(&w.origin)
                ))
                .into());
            }
            origins.push(ScoredOrigin {
                origin: w.origin,
                times: w.future_f.iter().map(|s| s.slice_start_utc).collect(),
                actual: w.targets.clone(),
                predicted: p,
            });
        }
    }
    Ok(RollingForecasts { origins })
}

/// Scores a forecaster on the test range.
pub fn evaluate<F: Forecaster + ?Sized>(
    model: &F,
    records: &[QuarterHourRecord],
    split: &SplitSpec,
    data_label: &str,
    model_label: &str,
) -> Result<(EvaluationReport, RollingForecasts)> {
    let forecasts = rolling_forecasts(model, records, split)?;
    let report =
        EvaluationReport::from_forecasts(data_label, model_label, model.n_lag(), model.n_look_ahead(), &forecasts)?;
    Ok((report, forecasts))
}

pub fn model_label(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Lr => "Linear_Regression",
        ModelKind::Ar => "Autoregressive",
        ModelKind::Seq2Seq => "Seq2Seq",
        ModelKind::Seq2SeqAttention => "Seq2Seq_Attention",
    }
}

/// Loads a model file, scores it and writes the report JSON and the
/// forecast-vs-actual CSV.
pub fn cmd_evaluate(
    split: &SplitSpec,
    model_path: &Path,
    data: &Path,
    report_out: &Path,
    forecasts_out: &Path,
) -> Result<EvaluationReport> {
    split.validate()?;
    let model = load_model(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let records = read_series(data)?;
    if model.uses_swim() && !has_swim(&records) {
        bail!("model was trained in aspm+swim mode but the data has no swim_observed_departures");
    }
    let data_label = if model.uses_swim() { DataMode::AspmSwim } else { DataMode::Aspm }.label();
    let (report, forecasts) = evaluate(&model, &records, split, data_label, model_label(model.kind()))?;

    let mut w = create(report_out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(forecasts_out)?;
    forecasts.write_csv(&mut w)?;
    w.flush()?;
    Ok(report)
}

/// Forecasts the `τ_max` slices following the end of the data.
pub fn cmd_forecast(model_path: &Path, data: &Path, out: &mut dyn Write) -> Result<Vec<f64>> {
    let model = load_model(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let records = read_series(data)?;
    if model.uses_swim() && !has_swim(&records) {
        bail!("model needs swim_observed_departures but the data has none");
    }
    let w = latest_window(&records, model.n_lag(), model.n_look_ahead())?;
    let pred = model.forecast(&w)?;
    writeln!(out, "timestamp,predicted")?;
    for (step, p) in w.future_f.iter().zip(&pred) {
        writeln!(out, "{},{p}", format_ts(&step.slice_start_utc))?;
    }
    Ok(pred)
}

/// Builds the comparison table from evaluation report files, in input
/// order. Returns the table; `out` receives it as JSON when given.
pub fn cmd_compare(reports: &[PathBuf], sort_by_mse_desc: bool, out: Option<&Path>) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(anyhow!("compare needs at least one report"));
    }
    let inputs = reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading report {}", p.display()))?;
            let r: EvaluationReport =
                serde_json::from_str(&text).with_context(|| format!("parsing report {}", p.display()))?;
            Ok(ComparisonInput {
                data_label: r.data_label,
                model_label: r.model_label,
                metrics: r.metrics.quarter,
                n_lag: r.n_lag,
                n_look_ahead: r.n_look_ahead,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_table(&inputs, sort_by_mse_desc)?;
    if let Some(path) = out {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &table)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(table)
}
