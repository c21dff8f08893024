//! Two-branch graph link predictor: per-branch projection, stacked GCN layers,
//! and an inner-product or single-linear-layer pair decoder.
//!
//! The antibody and antigen branches have separate parameters. The `Linear`
//! encoder variant replaces each graph convolution by a per-node dense layer
//! (equivalently, a GCN layer with identity adjacency).

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ContactMap;
use crate::graph::GraphPair;
use crate::tensor::{sigmoid, weighted_bce_with_count, Gradients, LossWeights, PairMask, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    InnerProduct,
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Gcn,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim_ab: usize,
    pub dim_ag: usize,
    pub proj_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// Graph (or linear) layers per branch after the projection.
    pub layers: usize,
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    pub dropout: f64,
}

impl Architecture {
    /// 128-wide projection, layers 128 → 128 → 64, inner-product decoder.
    pub fn walle(dim_ab: usize, dim_ag: usize) -> Self {
        Architecture {
            dim_ab,
            dim_ag,
            proj_dim: 128,
            hidden_dim: 128,
            out_dim: 64,
            layers: 2,
            encoder: EncoderKind::Gcn,
            decoder: DecoderKind::InnerProduct,
            dropout: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one graph layer required".into()));
        }
        if [self.dim_ab, self.dim_ag, self.proj_dim, self.hidden_dim, self.out_dim].contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(name, rows, cols)` in canonical parameter order.
    pub fn parameter_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        for (branch, input) in [("ab", self.dim_ab), ("ag", self.dim_ag)] {
            shapes.push((format!("{branch}.proj.weight"), input, self.proj_dim));
            shapes.push((format!("{branch}.proj.bias"), 1, self.proj_dim));
            let mut width = self.proj_dim;
            for l in 0..self.layers {
                let out = if l + 1 == self.layers { self.out_dim } else { self.hidden_dim };
                shapes.push((format!("{branch}.layer{}.weight", l + 1), width, out));
                shapes.push((format!("{branch}.layer{}.bias", l + 1), 1, out));
                width = out;
            }
        }
        shapes.push(("decoder.weight".into(), 2 * self.out_dim, 1));
        shapes.push(("decoder.bias".into(), 1, 1));
        shapes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_pos: f64,
    pub w_neg: f64,
    pub lambda: f64,
    pub c: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_pos: 100.0,
            w_neg: 1.0,
            lambda: 1e-5,
            c: 43.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_pos > 0.0) || !(self.w_neg >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("invalid loss configuration {self:?}")));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            w_pos: self.w_pos,
            w_neg: self.w_neg,
            lambda: self.lambda,
            c: self.c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// A node is called an epitope when its summed edge probability exceeds this.
    pub node_threshold: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { node_threshold: 3.39 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalleModel {
    pub arch: Architecture,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl WalleModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, rows, cols) in arch.parameter_shapes() {
            let mut t = Tensor::zeros(rows, cols);
            if name.ends_with("weight") {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                for v in &mut t.data {
                    *v = rng.gen_range(-limit..limit);
                }
            }
            names.push(name);
            params.push(t);
        }
        Ok(WalleModel { arch, names, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (names, params) = arch
            .parameter_shapes()
            .into_iter()
            .map(|(n, r, c)| (n, Tensor::zeros(r, c)))
            .unzip();
        Ok(WalleModel { arch, names, params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|k| &self.params[k])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |k| &mut self.params[k])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
pub fn normalize_adjacency(adj: &ContactMap, n: usize) -> Result<Tensor> {
    let mut a = Tensor::identity(n);
    for &(i, j) in &adj.entries {
        if i >= n || j >= n {
            return Err(Error::Shape(format!("edge ({i}, {j}) outside {n} nodes")));
        }
        if i != j {
            a.set(i, j, 1.0);
        }
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    Ok(a)
}

/// `norm_adj · x · weight + bias`.
pub fn gcn_forward(x: &Tensor, norm_adj: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if norm_adj.rows != norm_adj.cols || norm_adj.cols != x.rows {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {} nodes",
            norm_adj.shape(),
            x.rows
        )));
    }
    if bias.shape() != (1, weight.cols) {
        return Err(Error::Shape(format!("bias {:?} for weight {:?}", bias.shape(), weight.shape())));
    }
    let mut out = norm_adj.matmul(&x.matmul(weight)?)?;
    for i in 0..out.rows {
        for j in 0..out.cols {
            out.data[i * out.cols + j] += bias.data[j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Model-ready tensors for one graph pair.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub id: String,
    pub x_ab: Tensor,
    pub x_ag: Tensor,
    pub adj_ab: Tensor,
    pub adj_ag: Tensor,
    /// Dense row-major `m × n` labels.
    pub labels: Vec<f64>,
    pub node_labels: Vec<bool>,
}

impl PreparedPair {
    pub fn from_pair(pair: &GraphPair) -> Result<Self> {
        let feats = |g: &crate::graph::NodeGraph, which: &str| -> Result<Tensor> {
            let f = g
                .features
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("{}: {which} graph has no node features", pair.id)))?;
            Tensor::from_vec(f.rows, f.dim, f.values.iter().map(|&v| v as f64).collect())
        };
        Ok(PreparedPair {
            id: pair.id.clone(),
            x_ab: feats(&pair.ab, "antibody")?,
            x_ag: feats(&pair.ag, "antigen")?,
            adj_ab: normalize_adjacency(&pair.ab.adjacency, pair.m())?,
            adj_ag: normalize_adjacency(&pair.ag.adjacency, pair.n())?,
            labels: pair.dense_labels(),
            node_labels: pair.node_labels.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.x_ab.rows
    }

    pub fn n(&self) -> usize {
        self.x_ag.rows
    }
}

/// A forward pass recorded on a tape, with handles to every parameter.
pub struct Recorded {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub logits: Var,
}

fn branch(
    tape: &mut Tape,
    model: &WalleModel,
    params: &[Var],
    prefix: &str,
    x: &Tensor,
    adj: &Tensor,
) -> Result<Var> {
    let p = |name: String| -> Result<Var> {
        model
            .names
            .iter()
            .position(|n| *n == name)
            .map(|k| params[k])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    };
    let x = tape.leaf(x.clone());
    let h = tape.matmul(x, p(format!("{prefix}.proj.weight"))?)?;
    let mut h = tape.add_row_bias(h, p(format!("{prefix}.proj.bias"))?)?;
    let adj = match model.arch.encoder {
        EncoderKind::Gcn => Some(tape.leaf(adj.clone())),
        EncoderKind::Linear => None,
    };
    for l in 1..=model.arch.layers {
        let xw = tape.matmul(h, p(format!("{prefix}.layer{l}.weight"))?)?;
        let agg = match adj {
            Some(a) => tape.matmul(a, xw)?,
            None => xw,
        };
        h = tape.add_row_bias(agg, p(format!("{prefix}.layer{l}.bias"))?)?;
        if l < model.arch.layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

fn check_dims(model: &WalleModel, pair: &PreparedPair) -> Result<()> {
    if pair.x_ab.cols != model.arch.dim_ab || pair.x_ag.cols != model.arch.dim_ag {
        return Err(Error::Shape(format!(
            "{}: feature widths ({}, {}) but model expects ({}, {})",
            pair.id, pair.x_ab.cols, pair.x_ag.cols, model.arch.dim_ab, model.arch.dim_ag
        )));
    }
    Ok(())
}

/// Records the forward pass. `rng` drives decoder dropout in train mode.
pub fn record_forward(model: &WalleModel, pair: &PreparedPair, mode: Mode, rng: &mut impl Rng) -> Result<Recorded> {
    check_dims(model, pair)?;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let z_ab = branch(&mut tape, model, &params, "ab", &pair.x_ab, &pair.adj_ab)?;
    let z_ag = branch(&mut tape, model, &params, "ag", &pair.x_ag, &pair.adj_ag)?;
    let logits = match model.arch.decoder {
        DecoderKind::InnerProduct => tape.matmul_nt(z_ab, z_ag)?,
        DecoderKind::Fc => {
            let n_params = params.len();
            let (w, b) = (params[n_params - 2], params[n_params - 1]);
            let mask = match mode {
                Mode::Train if model.arch.dropout > 0.0 => {
                    let d = model.arch.out_dim;
                    let keep = (0..pair.m() * pair.n() * 2 * d)
                        .map(|_| rng.gen::<f64>() >= model.arch.dropout)
                        .collect();
                    Some(PairMask {
                        keep,
                        scale: 1.0 / (1.0 - model.arch.dropout),
                    })
                }
                _ => None,
            };
            tape.pair_linear(z_ab, z_ag, w, b, mask)?
        }
    };
    Ok(Recorded { tape, params, logits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub probs: Tensor,
}

pub fn model_forward(model: &WalleModel, pair: &PreparedPair, mode: Mode, rng: &mut impl Rng) -> Result<Prediction> {
    let rec = record_forward(model, pair, mode, rng)?;
    let logits = rec.tape.value(rec.logits).clone();
    let probs = Tensor {
        rows: logits.rows,
        cols: logits.cols,
        data: logits.data.iter().map(|&x| sigmoid(x)).collect(),
    };
    Ok(Prediction { logits, probs })
}

/// Deterministic evaluation-mode prediction.
pub fn predict(model: &WalleModel, pair: &PreparedPair) -> Result<Prediction> {
    // eval mode draws no random numbers
    model_forward(model, pair, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
}

/// Forward pass of the two-linear-layer variant: same parameters, graph ignored.
pub fn walle_l_forward(model: &WalleModel, pair: &PreparedPair, mode: Mode, rng: &mut impl Rng) -> Result<Prediction> {
    let mut linear = model.clone();
    linear.arch.encoder = EncoderKind::Linear;
    model_forward(&linear, pair, mode, rng)
}

/// Link loss of one complex on probabilities (no tape).
pub fn walle_loss(probs: &[f64], labels: &[f64], cfg: &LossConfig) -> f64 {
    weighted_bce_with_count(probs, labels, &cfg.weights()).0
}

pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// Mean per-complex loss over `pairs` and its gradient for every parameter.
pub fn loss_and_grads(
    model: &WalleModel,
    pairs: &[&PreparedPair],
    cfg: &LossConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<LossAndGrads> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no pairs for the loss".into()));
    }
    let mut total = 0.0;
    let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
    let scale = 1.0 / pairs.len() as f64;
    for pair in pairs {
        let mut rec = record_forward(model, pair, mode, rng)?;
        let loss = rec.tape.link_loss(rec.logits, &pair.labels, &cfg.weights())?;
        let value = rec.tape.value(loss).item();
        let g: Gradients = rec.tape.backward(loss);
        for (acc, &v) in grads.iter_mut().zip(&rec.params) {
            if let Some(t) = g.get(v) {
                for (a, b) in acc.data.iter_mut().zip(&t.data) {
                    *a += scale * b;
                }
            }
        }
        total += value * scale;
    }
    Ok(LossAndGrads { loss: total, grads })
}

/// Per-node score (summed edge probability) and epitope call.
pub fn aggregate_node_predictions(probs: &Tensor, cfg: &AggregationConfig) -> (Vec<f64>, Vec<bool>) {
    let scores: Vec<f64> = (0..probs.cols)
        .map(|j| (0..probs.rows).map(|i| probs.get(i, j)).sum())
        .collect();
    let labels = scores.iter().map(|&s| s > cfg.node_threshold).collect();
    (scores, labels)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"WLC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub seed: u64,
    pub loss: LossConfig,
    pub aggregation: AggregationConfig,
    /// Free-form training settings recorded for provenance.
    #[serde(default)]
    pub training: serde_json::Value,
}

/// `"WLC1" | header_len: u32 LE | JSON header | blocks`, each block being
/// `name_len: u16 | name | rows: u32 | cols: u32 | rows*cols f64 LE`.
pub fn encode_checkpoint(model: &WalleModel, header: &CheckpointHeader) -> Result<Vec<u8>> {
    if header.architecture != model.arch {
        return Err(Error::Config("checkpoint header architecture differs from the model".into()));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in model.names.iter().zip(&model.params) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(out)
}

fn read<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(WalleModel, CheckpointHeader)> {
    let mut at = 0;
    if read(bytes, &mut at, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic, expected WLC1".into()));
    }
    let len = u32::from_le_bytes(read(bytes, &mut at, 4)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(read(bytes, &mut at, len)?)?;
    let mut model = WalleModel::zeros(header.architecture)?;
    for (name, t) in model.names.iter().zip(model.params.iter_mut()) {
        let nl = u16::from_le_bytes(read(bytes, &mut at, 2)?.try_into().unwrap()) as usize;
        let got = std::str::from_utf8(read(bytes, &mut at, nl)?)
            .map_err(|_| Error::Format("parameter name not UTF-8".into()))?;
        if got != name {
            return Err(Error::Format(format!("expected parameter {name}, found {got}")));
        }
        let rows = u32::from_le_bytes(read(bytes, &mut at, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(read(bytes, &mut at, 4)?.try_into().unwrap()) as usize;
        if (rows, cols) != t.shape() {
            return Err(Error::Format(format!(
                "{name}: stored shape {rows}x{cols}, architecture says {:?}",
                t.shape()
            )));
        }
        for v in t.data.iter_mut() {
            *v = f64::from_le_bytes(read(bytes, &mut at, 8)?.try_into().unwrap());
        }
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after the last parameter block".into()));
    }
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &WalleModel, header: &CheckpointHeader) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, header)?).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(WalleModel, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}
