//! Adam optimisation, the epoch loop with early stopping, and random search.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::binary_metrics;
use crate::model::{
    aggregate_node_predictions, loss_and_grads, predict, walle_loss, AggregationConfig, Architecture, DecoderKind,
    EncoderKind, LossConfig, Mode, PreparedPair, WalleModel,
};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        AdamState { m: zeros(), v: zeros(), t: 0 }
    }
}

pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and state counts differ".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient {k} shape {:?} != {:?}", g.shape(), p.shape())));
        }
        let (m, v) = (&mut state.m[k].data, &mut state.v[k].data);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    LinkMcc,
    NodeMcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Complexes whose gradients are averaged per optimiser step.
    pub accumulate: usize,
    pub loss: LossConfig,
    pub aggregation: AggregationConfig,
    pub decoder: DecoderKind,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub proj_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            early_stop_patience: 20,
            accumulate: 1,
            loss: LossConfig::default(),
            aggregation: AggregationConfig::default(),
            decoder: DecoderKind::InnerProduct,
            encoder: EncoderKind::Gcn,
            layers: 2,
            proj_dim: 128,
            hidden_dim: 128,
            out_dim: 64,
            dropout: 0.1,
            selection_metric: SelectionMetric::LinkMcc,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value `{v}` for {key}"),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.accumulate == 0 {
            return Err(Error::Config("accumulate must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.aggregation.node_threshold >= 0.0) {
            return Err(Error::Config("node_threshold must be non-negative".into()));
        }
        self.loss.validate()
    }

    pub fn architecture(&self, dim_ab: usize, dim_ag: usize) -> Architecture {
        Architecture {
            dim_ab,
            dim_ag,
            proj_dim: self.proj_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            layers: self.layers,
            encoder: self.encoder,
            decoder: self.decoder,
            dropout: self.dropout,
        }
    }

    /// Flat `key = value` lines; `#` starts a comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n,
                message: "expected key = value".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "learning_rate" => c.learning_rate = parse_value(k, v, n)?,
                "epochs" => c.epochs = parse_value(k, v, n)?,
                "seed" => c.seed = parse_value(k, v, n)?,
                "early_stop_patience" => c.early_stop_patience = parse_value(k, v, n)?,
                "accumulate" => c.accumulate = parse_value(k, v, n)?,
                "w_pos" => c.loss.w_pos = parse_value(k, v, n)?,
                "w_neg" => c.loss.w_neg = parse_value(k, v, n)?,
                "lambda" => c.loss.lambda = parse_value(k, v, n)?,
                "c" => c.loss.c = parse_value(k, v, n)?,
                "node_threshold" => c.aggregation.node_threshold = parse_value(k, v, n)?,
                "layers" => c.layers = parse_value(k, v, n)?,
                "proj_dim" => c.proj_dim = parse_value(k, v, n)?,
                "hidden_dim" => c.hidden_dim = parse_value(k, v, n)?,
                "out_dim" => c.out_dim = parse_value(k, v, n)?,
                "dropout" => c.dropout = parse_value(k, v, n)?,
                "decoder" => {
                    c.decoder = match v {
                        "inner_product" => DecoderKind::InnerProduct,
                        "fc" => DecoderKind::Fc,
                        _ => return Err(Error::Parse { line: n, message: format!("unknown decoder `{v}`") }),
                    }
                }
                "encoder" => {
                    c.encoder = match v {
                        "gcn" => EncoderKind::Gcn,
                        "linear" => EncoderKind::Linear,
                        _ => return Err(Error::Parse { line: n, message: format!("unknown encoder `{v}`") }),
                    }
                }
                "selection_metric" => {
                    c.selection_metric = match v {
                        "link_mcc" => SelectionMetric::LinkMcc,
                        "node_mcc" => SelectionMetric::NodeMcc,
                        _ => return Err(Error::Parse { line: n, message: format!("unknown metric `{v}`") }),
                    }
                }
                _ => return Err(Error::Parse { line: n, message: format!("unknown key `{k}`") }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let decoder = match self.decoder {
            DecoderKind::InnerProduct => "inner_product",
            DecoderKind::Fc => "fc",
        };
        let encoder = match self.encoder {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Linear => "linear",
        };
        let metric = match self.selection_metric {
            SelectionMetric::LinkMcc => "link_mcc",
            SelectionMetric::NodeMcc => "node_mcc",
        };
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "early_stop_patience = {}", self.early_stop_patience);
        let _ = writeln!(s, "accumulate = {}", self.accumulate);
        let _ = writeln!(s, "w_pos = {}", self.loss.w_pos);
        let _ = writeln!(s, "w_neg = {}", self.loss.w_neg);
        let _ = writeln!(s, "lambda = {}", self.loss.lambda);
        let _ = writeln!(s, "c = {}", self.loss.c);
        let _ = writeln!(s, "node_threshold = {}", self.aggregation.node_threshold);
        let _ = writeln!(s, "decoder = {decoder}");
        let _ = writeln!(s, "encoder = {encoder}");
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "proj_dim = {}", self.proj_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "out_dim = {}", self.out_dim);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "selection_metric = {metric}");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Best validation metric seen up to and including this epoch.
    pub best_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,val_mcc` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_mcc\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_metric);
        }
        s
    }

    pub fn best_epoch(&self) -> Option<usize> {
        let best = self.epochs.last()?.best_metric;
        self.epochs.iter().find(|r| r.val_metric == best).map(|r| r.epoch)
    }
}

pub struct FitResult {
    /// Snapshot with the best validation metric.
    pub model: WalleModel,
    pub history: TrainHistory,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub link_mcc: f64,
    pub node_mcc: f64,
}

/// Mean loss and mean per-complex MCCs in evaluation mode.
pub fn validate(model: &WalleModel, pairs: &[PreparedPair], cfg: &TrainConfig) -> Result<Validation> {
    if pairs.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let per: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let pred = predict(model, p)?;
            let loss = walle_loss(&pred.probs.data, &p.labels, &cfg.loss);
            let y: Vec<bool> = p.labels.iter().map(|&v| v == 1.0).collect();
            let yhat: Vec<bool> = pred.probs.data.iter().map(|&q| q > 0.5).collect();
            let link = binary_metrics(&y, &yhat)?.mcc;
            let (_, nodes) = aggregate_node_predictions(&pred.probs, &cfg.aggregation);
            let node = binary_metrics(&p.node_labels, &nodes)?.mcc;
            Ok((loss, link, node))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let (mut loss, mut link, mut node) = (0.0, 0.0, 0.0);
    for (a, b, c) in per {
        loss += a;
        link += b;
        node += c;
    }
    Ok(Validation {
        loss: loss / n,
        link_mcc: link / n,
        node_mcc: node / n,
    })
}

fn check_dims(arch: &Architecture, sets: &[&[PreparedPair]]) -> Result<()> {
    for p in sets.iter().flat_map(|s| s.iter()) {
        if p.x_ab.cols != arch.dim_ab || p.x_ag.cols != arch.dim_ag {
            return Err(Error::Shape(format!(
                "{}: feature widths ({}, {}) but model expects ({}, {})",
                p.id, p.x_ab.cols, p.x_ag.cols, arch.dim_ab, arch.dim_ag
            )));
        }
    }
    Ok(())
}

/// Trains from `model`, keeping the best snapshot by the selection metric.
pub fn fit(mut model: WalleModel, train: &[PreparedPair], val: &[PreparedPair], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    check_dims(&model.arch, &[train, val])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, WalleModel)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.accumulate) {
            let batch: Vec<&PreparedPair> = chunk.iter().map(|&k| &train[k]).collect();
            let lg = loss_and_grads(&model, &batch, &cfg.loss, Mode::Train, &mut rng)?;
            if !lg.loss.is_finite() || lg.grads.iter().any(|g| !g.is_finite()) {
                let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, complex {}",
                    ids.join(",")
                )));
            }
            adam_step(&mut model.params, &lg.grads, &mut state, cfg.learning_rate)?;
            epoch_loss += lg.loss * batch.len() as f64;
        }
        let v = validate(&model, val, cfg)?;
        let metric = match cfg.selection_metric {
            SelectionMetric::LinkMcc => v.link_mcc,
            SelectionMetric::NodeMcc => v.node_mcc,
        };
        let improved = best.as_ref().is_none_or(|(b, _)| metric > *b);
        if improved {
            best = Some((metric, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: v.loss,
            val_metric: metric,
            best_metric: best.as_ref().map(|b| b.0).unwrap_or(metric),
        });
        log::debug!("epoch {epoch}: train {:.5} val {:.5} mcc {:.4}", epoch_loss / train.len() as f64, v.loss, metric);
        if since_best > cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok(FitResult {
        model,
        history,
        stopped_early,
    })
}

/// Random-search distributions for the tuned hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    pub w_pos: (f64, f64),
    /// Bounds of a log-uniform draw.
    pub lambda: (f64, f64),
    /// Mean and standard deviation of the node threshold; negatives clamp to 0.
    pub threshold: (f64, f64),
    pub decoders: Vec<DecoderKind>,
    pub layers: Vec<usize>,
}

impl Default for HyperSpace {
    fn default() -> Self {
        HyperSpace {
            w_pos: (50.0, 150.0),
            lambda: (1e-7, 1e-4),
            threshold: (3.0, 1.0),
            decoders: vec![DecoderKind::InnerProduct, DecoderKind::Fc],
            layers: vec![2, 3],
        }
    }
}

/// Draws `budget` configurations on top of `base`.
pub fn sample_configs(base: &TrainConfig, space: &HyperSpace, budget: usize, seed: u64) -> Result<Vec<TrainConfig>> {
    if budget == 0 {
        return Err(Error::Config("sweep budget must be at least 1".into()));
    }
    if space.decoders.is_empty() || space.layers.is_empty() {
        return Err(Error::Config("empty categorical choice in search space".into()));
    }
    let normal = Normal::new(space.threshold.0, space.threshold.1)
        .map_err(|e| Error::Config(format!("threshold distribution: {e}")))?;
    let (llo, lhi) = (space.lambda.0.ln(), space.lambda.1.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(budget);
    for k in 0..budget {
        let mut c = base.clone();
        c.loss.w_pos = rng.gen_range(space.w_pos.0..=space.w_pos.1);
        c.loss.lambda = rng.gen_range(llo..=lhi).exp();
        c.aggregation.node_threshold = normal.sample(&mut rng).max(0.0);
        c.decoder = *space.decoders.choose(&mut rng).expect("non-empty");
        c.layers = *space.layers.choose(&mut rng).expect("non-empty");
        c.seed = base.seed.wrapping_add(k as u64);
        out.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub config: TrainConfig,
    pub best_metric: f64,
    pub epochs_run: usize,
}

/// Trains every sampled configuration and ranks by best validation metric.
pub fn sweep(
    base: &TrainConfig,
    space: &HyperSpace,
    budget: usize,
    seed: u64,
    train: &[PreparedPair],
    val: &[PreparedPair],
) -> Result<Vec<SweepEntry>> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let (dim_ab, dim_ag) = (first.x_ab.cols, first.x_ag.cols);
    let mut ranked = Vec::with_capacity(budget);
    for cfg in sample_configs(base, space, budget, seed)? {
        let model = WalleModel::new(cfg.architecture(dim_ab, dim_ag), cfg.seed)?;
        let fit = fit(model, train, val, &cfg)?;
        let last = fit.history.epochs.last().expect("at least one epoch");
        ranked.push(SweepEntry {
            best_metric: last.best_metric,
            epochs_run: fit.history.epochs.len(),
            config: cfg,
        });
    }
    ranked.sort_by(|a, b| b.best_metric.total_cmp(&a.best_metric));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_vec(1, 2, vec![0.3, -1.0]).unwrap()];
        let g = vec![Tensor::zeros(1, 2)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p[0].data, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap()];
        let g = vec![Tensor::from_vec(1, 2, vec![3.0, -0.02]).unwrap()];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        assert!((p[0].data[0] + 0.01).abs() < 1e-9);
        assert!((p[0].data[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        for _ in 0..200 {
            let g = vec![Tensor::scalar(2.0 * p[0].item())];
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        }
        assert!(p[0].item().abs() < 1e-3, "w = {}", p[0].item());
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::default();
        c.loss.lambda = 3.5e-6;
        c.decoder = DecoderKind::Fc;
        c.selection_metric = SelectionMetric::NodeMcc;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::parse("epochs = 0").is_err());
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("epochs").is_err());
        assert_eq!(TrainConfig::parse("# nothing\n\nseed = 9 # trailing\n").unwrap().seed, 9);
    }

    #[test]
    fn sampled_configs_respect_space() {
        let base = TrainConfig::default();
        let cfgs = sample_configs(&base, &HyperSpace::default(), 300, 1).unwrap();
        assert_eq!(cfgs.len(), 300);
        for c in &cfgs {
            assert!((50.0..=150.0).contains(&c.loss.w_pos));
            assert!(c.loss.lambda >= 1e-7 * (1.0 - 1e-12) && c.loss.lambda <= 1e-4 * (1.0 + 1e-12));
            assert!(c.aggregation.node_threshold >= 0.0);
            assert!([2, 3].contains(&c.layers));
        }
        assert!(cfgs.iter().any(|c| c.decoder == DecoderKind::Fc));
        assert!(cfgs.iter().any(|c| c.decoder == DecoderKind::InnerProduct));
        assert!(sample_configs(&base, &HyperSpace::default(), 0, 1).is_err());
    }
}
