use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    accumulate_grads, AttentionParams, AttentionVars, DenseParams, DenseVars, EmbeddingTable, LstmParams, LstmVars,
    Parameters,
};
use crate::pipeline::{QuarterHourRecord, Scaler, SupervisedWindow, CALENDAR_FEATURES};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

use super::config::ModelConfig;

/// Normalisation fitted on the training range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScalers {
    pub demand: Scaler,
    pub swim: Option<Scaler>,
}

impl ModelScalers {
    /// Fits demand (and swim, when the config uses it) on training records.
    /// Missing swim values count as 0.
    pub fn fit(train: &[QuarterHourRecord], config: &ModelConfig) -> Result<Self> {
        let demand: Vec<f64> = train.iter().map(|r| r.dep_demand).collect();
        let swim = if config.uses_swim() {
            let v: Vec<f64> = train.iter().map(|r| r.swim_observed_departures.unwrap_or(0.0)).collect();
            Some(Scaler::fit(&v)?)
        } else {
            None
        };
        Ok(Self { demand: Scaler::fit(&demand)?, swim })
    }

    pub fn identity() -> Self {
        Self { demand: Scaler::identity(), swim: None }
    }
}

/// LSTM encoder–decoder with optional Luong attention.
///
/// The encoder reads `p` steps of `[demand, observed inputs…]` (normalised).
/// The decoder starts from the encoder's final state; step `τ` consumes
/// `[previous output; calendar embeddings of slice τ]` and the output head
/// maps the decoder state (or the attentional state `h̃`) to normalised
/// demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel<T> {
    pub config: ModelConfig,
    pub encoder: LstmParams<T>,
    pub decoder: LstmParams<T>,
    pub embeddings: Vec<EmbeddingTable<T>>,
    pub attention: Option<AttentionParams<T>>,
    pub output_head: DenseParams<T>,
    pub scalers: ModelScalers,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub leaves: Vec<Var>,
    encoder: LstmVars,
    decoder: LstmVars,
    embeddings: Vec<Var>,
    attention: Option<AttentionVars>,
    head: DenseVars,
}

/// Encoder output for a batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// One `[batch × hidden]` state per past step.
    pub states: Vec<Var>,
    pub h: Var,
    pub c: Var,
}

/// Encoder output for one window as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedWindow<T> {
    /// `[p × hidden]`
    pub states: Tensor<T>,
    pub final_h: Tensor<T>,
    pub final_c: Tensor<T>,
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Seeded uniform initialisation.
    pub fn new(config: ModelConfig, scalers: ModelScalers, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Pcg64::seed_from_u64(seed);
        let h = config.hidden_dim;
        let encoder = LstmParams::init(config.encoder_input_dim(), h, &mut rng);
        let decoder = LstmParams::init(config.decoder_input_dim(), h, &mut rng);
        let embeddings = CALENDAR_FEATURES
            .iter()
            .zip(&config.embedding_dims)
            .map(|((name, card), dim)| EmbeddingTable::init(name, *card, *dim, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let attention = config.use_attention.then(|| AttentionParams::init(config.attention_kind, h, &mut rng));
        let output_head = DenseParams::init(h, 1, &mut rng);
        let model = Self { config, encoder, decoder, embeddings, attention, output_head, scalers };
        model.check_swim_scaler()?;
        Ok(model)
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeros(config: ModelConfig, scalers: ModelScalers) -> Result<Self> {
        let mut m = Self::new(config, scalers, 0)?;
        for (_, p) in m.parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(m)
    }

    fn check_swim_scaler(&self) -> Result<()> {
        if self.config.uses_swim() && self.scalers.swim.is_none() {
            return Err(Error::contract("swim input configured without a swim scaler"));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundModel> {
        let leaves = self.leaves(tape);
        self.bind_leaves(tape, leaves)
    }

    /// Builds handles from leaves recorded in `parameters()` order.
    pub fn bind_leaves(&self, tape: &mut Tape<T>, leaves: Vec<Var>) -> Result<BoundModel> {
        let n_enc = self.encoder.parameters().len();
        let n_dec = self.decoder.parameters().len();
        let n_emb = self.embeddings.len();
        let n_att = self.attention.as_ref().map_or(0, |a| a.parameters().len());
        let expected = n_enc + n_dec + n_emb + n_att + 2;
        if leaves.len() != expected {
            return Err(Error::contract(format!("expected {expected} leaves, got {}", leaves.len())));
        }
        let mut rest = leaves.as_slice();
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let enc = take(n_enc);
        let dec = take(n_dec);
        let emb = take(n_emb);
        let att = take(n_att);
        let head = take(2);
        Ok(BoundModel {
            encoder: self.encoder.bind_leaves(tape, enc)?,
            decoder: self.decoder.bind_leaves(tape, dec)?,
            embeddings: emb,
            attention: match &self.attention {
                Some(a) => Some(a.bind_leaves(tape, att)?),
                None => None,
            },
            head: self.output_head.bind_leaves(tape, head)?,
            leaves,
        })
    }

    fn check_window(&self, w: &SupervisedWindow) -> Result<()> {
        if w.n_lag() != self.config.n_lag || w.future_f.len() != self.config.n_look_ahead {
            return Err(Error::contract(format!(
                "window has n_lag {} / {} future steps, model expects {} / {}",
                w.n_lag(),
                w.future_f.len(),
                self.config.n_lag,
                self.config.n_look_ahead
            )));
        }
        Ok(())
    }

    /// `[batch × encoder_input]` constant for past step `k`.
    fn encoder_input(&self, batch: &[&SupervisedWindow], k: usize) -> Tensor<T> {
        let width = self.config.encoder_input_dim();
        let mut data = Vec::with_capacity(batch.len() * width);
        for w in batch {
            data.push(T::of(self.scalers.demand.apply(w.past_y[k])));
            if let Some(s) = self.scalers.swim.filter(|_| self.config.uses_swim()) {
                data.push(T::of(s.apply(w.swim_at(k).unwrap_or(0.0))));
            }
        }
        Tensor::new(vec![batch.len(), width], data).expect("width matches")
    }

    /// Runs the encoder from a zero state.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &BoundModel, batch: &[&SupervisedWindow]) -> Result<Encoded> {
        for w in batch {
            self.check_window(w)?;
        }
        let hd = self.config.hidden_dim;
        let mut h = tape.constant(Tensor::zeros(&[batch.len(), hd]));
        let mut c = tape.constant(Tensor::zeros(&[batch.len(), hd]));
        let mut states = Vec::with_capacity(self.config.n_lag);
        for k in 0..self.config.n_lag {
            let x = tape.constant(self.encoder_input(batch, k));
            (h, c) = self.encoder.step(tape, &bound.encoder, x, h, c)?;
            states.push(h);
        }
        Ok(Encoded { states, h, c })
    }

    /// Encodes a single past sequence (`p` vectors of encoder inputs, already
    /// normalised) into plain tensors.
    pub fn encode_sequence(&self, past: &[Vec<f64>]) -> Result<EncodedWindow<T>> {
        if past.len() != self.config.n_lag {
            return Err(Error::contract(format!("encoder expects {} steps, got {}", self.config.n_lag, past.len())));
        }
        let width = self.config.encoder_input_dim();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let hd = self.config.hidden_dim;
        let mut h = tape.constant(Tensor::zeros(&[1, hd]));
        let mut c = tape.constant(Tensor::zeros(&[1, hd]));
        let mut rows = Vec::with_capacity(past.len());
        for step in past {
            if step.len() != width {
                return Err(Error::Dimension { op: "encode", left: vec![width], right: vec![step.len()] });
            }
            let x = tape.constant(Tensor::new(vec![1, width], step.iter().map(|v| T::of(*v)).collect())?);
            (h, c) = self.encoder.step(&mut tape, &bound.encoder, x, h, c)?;
            rows.push(tape.value(h).data().to_vec());
        }
        Ok(EncodedWindow {
            states: Tensor::from_rows(&rows)?,
            final_h: tape.value(h).clone(),
            final_c: tape.value(c).clone(),
        })
    }

    /// Encoder states of one window.
    pub fn encode_window(&self, w: &SupervisedWindow) -> Result<EncodedWindow<T>> {
        self.check_window(w)?;
        let past = (0..self.config.n_lag)
            .map(|k| self.encoder_input(&[w], k).data().iter().map(|v| v.as_f64()).collect())
            .collect::<Vec<Vec<f64>>>();
        self.encode_sequence(&past)
    }

    /// Decoder outputs on the normalised scale, one `[batch × 1]` node per
    /// future step. `teacher[τ]` (for `τ ≥ 1`) feeds the true previous target
    /// instead of the model's own output.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &[&SupervisedWindow],
        encoded: &Encoded,
        teacher: Option<&[bool]>,
    ) -> Result<Vec<Var>> {
        let n = batch.len();
        let demand = self.scalers.demand;
        let last: Vec<T> = batch.iter().map(|w| T::of(demand.apply(*w.past_y.last().expect("n_lag ≥ 1")))).collect();
        let mut prev = tape.constant(Tensor::new(vec![n, 1], last)?);
        let (mut h, mut c) = (encoded.h, encoded.c);
        let mut outputs = Vec::with_capacity(self.config.n_look_ahead);

        for step in 0..self.config.n_look_ahead {
            if step > 0 && teacher.is_some_and(|t| t.get(step).copied().unwrap_or(false)) {
                let truth: Vec<T> = batch.iter().map(|w| T::of(demand.apply(w.targets[step - 1]))).collect();
                prev = tape.constant(Tensor::new(vec![n, 1], truth)?);
            }
            let mut parts = vec![prev];
            for (f, (table, var)) in self.embeddings.iter().zip(&bound.embeddings).enumerate() {
                let ids: Vec<usize> = batch.iter().map(|w| w.future_f[step].calendar.category_ids()[f]).collect();
                parts.push(table.lookup(tape, *var, &ids)?);
            }
            let x = tape.concat(&parts, 1)?;
            (h, c) = self.decoder.step(tape, &bound.decoder, x, h, c)?;
            let top = match (&self.attention, &bound.attention) {
                (Some(a), Some(vars)) => a.attend(tape, vars, h, &encoded.states)?.h_tilde,
                _ => h,
            };
            let y = self.output_head.forward(tape, &bound.head, top)?;
            outputs.push(y);
            prev = y;
        }
        Ok(outputs)
    }

    /// Normalised predictions as one `[batch × τ_max]` node.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &[&SupervisedWindow],
        teacher: Option<&[bool]>,
    ) -> Result<Var> {
        let enc = self.encode(tape, bound, batch)?;
        let outs = self.decode(tape, bound, batch, &enc, teacher)?;
        tape.concat(&outs, 1)
    }

    /// Mean squared error on the normalised scale.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &[&SupervisedWindow],
        teacher: Option<&[bool]>,
    ) -> Result<Var> {
        for w in batch {
            if w.targets.len() != self.config.n_look_ahead {
                return Err(Error::contract("window targets do not match n_look_ahead"));
            }
        }
        let pred = self.forward(tape, bound, batch, teacher)?;
        let demand = self.scalers.demand;
        let targets: Vec<T> =
            batch.iter().flat_map(|w| w.targets.iter().map(move |y| T::of(demand.apply(*y)))).collect();
        let target = tape.constant(Tensor::new(vec![batch.len(), self.config.n_look_ahead], targets)?);
        tape.mse(pred, target)
    }

    /// Adds the gradients of a backward pass into the parameter tensors.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &BoundModel) -> Result<()> {
        accumulate_grads(self, grads, &bound.leaves)
    }

    /// Denormalised, non-negative demand forecasts for a batch of windows.
    pub fn forecast_batch(&self, windows: &[&SupervisedWindow]) -> Result<Vec<Vec<f64>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let pred = self.forward(&mut tape, &bound, windows, None)?;
        let v = tape.value(pred);
        let demand = self.scalers.demand;
        let tau = self.config.n_look_ahead;
        let out = (0..windows.len())
            .map(|i| v.row(i)[..tau].iter().map(|z| demand.invert(z.as_f64()).max(0.0)).collect::<Vec<f64>>())
            .collect::<Vec<_>>();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite forecast"));
        }
        Ok(out)
    }

    /// Forecast for one window: `τ_max` denormalised, non-negative values.
    pub fn forecast(&self, window: &SupervisedWindow) -> Result<Vec<f64>> {
        Ok(self.forecast_batch(&[window])?.remove(0))
    }
}

impl<T: Scalar> Parameters<T> for Seq2SeqModel<T> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        fn prefixed<'a, T>(prefix: &str, v: Vec<(String, &'a Tensor<T>)>) -> Vec<(String, &'a Tensor<T>)> {
            v.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
        }
        let mut out = Vec::new();
        out.extend(prefixed("encoder", self.encoder.parameters()));
        out.extend(prefixed("decoder", self.decoder.parameters()));
        for e in &self.embeddings {
            out.extend(e.parameters());
        }
        if let Some(a) = &self.attention {
            out.extend(prefixed("attention", a.parameters()));
        }
        out.extend(prefixed("head", self.output_head.parameters()));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        fn prefixed<'a, T>(prefix: &str, v: Vec<(String, &'a mut Tensor<T>)>) -> Vec<(String, &'a mut Tensor<T>)> {
            v.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
        }
        let mut out = Vec::new();
        out.extend(prefixed("encoder", self.encoder.parameters_mut()));
        out.extend(prefixed("decoder", self.decoder.parameters_mut()));
        for e in self.embeddings.iter_mut() {
            out.extend(e.parameters_mut());
        }
        if let Some(a) = self.attention.as_mut() {
            out.extend(prefixed("attention", a.parameters_mut()));
        }
        out.extend(prefixed("head", self.output_head.parameters_mut()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{make_windows, parse_ts, SLICE};

    fn series(n: usize) -> Vec<QuarterHourRecord> {
        let t0 = parse_ts("2019-01-07T00:00:00Z").unwrap();
        (0..n)
            .map(|i| {
                let d = (i % 9) as f64;
                QuarterHourRecord::new(t0 + SLICE * i as i32, d, Some(d + 1.0)).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_model_predicts_training_mean() {
        let recs = series(40);
        let cfg = ModelConfig::new(4, 3, 5, true).with_swim();
        let scalers = ModelScalers::fit(&recs, &cfg).unwrap();
        let m = Seq2SeqModel::<f64>::zeros(cfg, scalers).unwrap();
        let w = &make_windows(&recs, 4, 3).unwrap()[5];
        let enc = m.encode_window(w).unwrap();
        assert_eq!(enc.states.shape(), &[4, 5]);
        assert!(enc.states.data().iter().all(|v| *v == 0.0));
        let f = m.forecast(w).unwrap();
        assert_eq!(f.len(), 3);
        for v in f {
            assert!((v - scalers.demand.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn window_mismatch_is_contract_error() {
        let recs = series(40);
        let cfg = ModelConfig::new(4, 3, 5, false);
        let m = Seq2SeqModel::<f64>::new(cfg, ModelScalers::fit(&recs, &ModelConfig::new(4, 3, 5, false)).unwrap(), 1)
            .unwrap();
        let w = &make_windows(&recs, 5, 3).unwrap()[0];
        assert!(matches!(m.forecast(w), Err(Error::Contract(_))));
        assert!(m.encode_sequence(&vec![vec![0.0]; 3]).is_err());
    }

    #[test]
    fn swim_config_needs_swim_scaler() {
        let cfg = ModelConfig::new(2, 2, 3, false).with_swim();
        assert!(Seq2SeqModel::<f64>::new(cfg, ModelScalers::identity(), 0).is_err());
    }

    #[test]
    fn encoder_matches_unrolled_cell() {
        let cfg = ModelConfig::new(3, 2, 4, false).with_swim();
        let scalers = ModelScalers { demand: Scaler::identity(), swim: Some(Scaler::identity()) };
        let m = Seq2SeqModel::<f64>::new(cfg, scalers, 9).unwrap();
        let past = vec![vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.5, 2.0]];
        let enc = m.encode_sequence(&past).unwrap();

        let mut tape = Tape::new();
        let vars = m.encoder.bind(&mut tape).unwrap();
        let mut h = tape.constant(Tensor::zeros(&[1, 4]));
        let mut c = tape.constant(Tensor::zeros(&[1, 4]));
        for (k, x) in past.iter().enumerate() {
            let xv = tape.constant(Tensor::new(vec![1, 2], x.clone()).unwrap());
            (h, c) = m.encoder.step(&mut tape, &vars, xv, h, c).unwrap();
            assert_eq!(tape.value(h).data(), enc.states.row(k));
        }
        assert_eq!(tape.value(c), &enc.final_c);
    }

    #[test]
    fn forecasts_are_deterministic() {
        let recs = series(60);
        let cfg = ModelConfig::new(5, 4, 6, true);
        let scalers = ModelScalers::fit(&recs, &cfg).unwrap();
        let a = Seq2SeqModel::<f64>::new(cfg.clone(), scalers, 3).unwrap();
        let b = Seq2SeqModel::<f64>::new(cfg, scalers, 3).unwrap();
        let ws = make_windows(&recs, 5, 4).unwrap();
        for w in &ws {
            let fa = a.forecast(w).unwrap();
            let fb = b.forecast(w).unwrap();
            assert_eq!(
                fa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                fb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert!(fa.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        let refs: Vec<&SupervisedWindow> = ws.iter().collect();
        let batched = a.forecast_batch(&refs).unwrap();
        for (w, row) in ws.iter().zip(&batched) {
            assert_eq!(&a.forecast(w).unwrap(), row);
        }
    }
}
