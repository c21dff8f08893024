//! Dense 2-D tensors and a small tape-based reverse-mode autodiff.
//!
//! Only the operations the link predictor needs are provided. Nodes are
//! appended in evaluation order, so a reverse sweep over the tape is a valid
//! topological order for backpropagation.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor {
        let mut t = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "matmul_tn {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Tensor::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_pos: f64,
    pub w_neg: f64,
    pub lambda: f64,
    pub c: f64,
}

pub const PROB_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted BCE over all edges plus `λ·|Σŷ − c|`, and its derivative in ŷ.
pub fn weighted_bce_with_count(probs: &[f64], labels: &[f64], w: &LossWeights) -> (f64, Vec<f64>) {
    let n = probs.len() as f64;
    let mut bce = 0.0;
    let mut total = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (k, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        bce += w.w_pos * y * clamped.ln() + w.w_neg * (1.0 - y) * (1.0 - clamped).ln();
        if clamped == p {
            grad[k] = -(w.w_pos * y / p - w.w_neg * (1.0 - y) / (1.0 - p)) / n;
        }
        total += p;
    }
    let gap = total - w.c;
    let reg_grad = if gap > 0.0 {
        w.lambda
    } else if gap < 0.0 {
        -w.lambda
    } else {
        0.0
    };
    for g in &mut grad {
        *g += reg_grad;
    }
    (-bce / n + w.lambda * gap.abs(), grad)
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Mean(Vec<Var>),
    /// `out[i][j] = w·concat(a_i, b_j) + bias`, with an optional per-pair dropout mask.
    PairLinear {
        a: Var,
        b: Var,
        w: Var,
        bias: Var,
        mask: Option<PairMask>,
    },
    /// Sigmoid of the logits followed by the weighted link loss.
    LinkLoss {
        logits: Var,
        dloss_dprob: Vec<f64>,
        probs: Vec<f64>,
    },
}

/// Keep flags for each (pair, feature) of the concatenated decoder input.
#[derive(Debug, Clone)]
pub struct PairMask {
    pub keep: Vec<bool>,
    pub scale: f64,
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for i in 0..out.rows {
            for (o, b) in out.data[i * out.cols..(i + 1) * out.cols].iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(out, Op::Scale(x, s))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("mean of nothing".into()));
        }
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.shape() != (1, 1) {
                return Err(Error::Shape("mean expects scalars".into()));
            }
            total += v.item();
        }
        Ok(self.push(Tensor::scalar(total / xs.len() as f64), Op::Mean(xs.to_vec())))
    }

    pub fn pair_linear(&mut self, a: Var, b: Var, w: Var, bias: Var, mask: Option<PairMask>) -> Result<Var> {
        let (av, bv, wv) = (self.value(a), self.value(b), self.value(w));
        let d = av.cols;
        if bv.cols != d || wv.shape() != (2 * d, 1) || self.value(bias).shape() != (1, 1) {
            return Err(Error::Shape("pair_linear operand shapes".into()));
        }
        let (m, n) = (av.rows, bv.rows);
        if let Some(mk) = &mask {
            if mk.keep.len() != m * n * 2 * d {
                return Err(Error::Shape("dropout mask size".into()));
            }
        }
        let bias_v = self.value(bias).item();
        let (w1, w2) = wv.data.split_at(d);
        let mut out = Tensor::zeros(m, n);
        match &mask {
            None => {
                let sa: Vec<f64> = (0..m).map(|i| dot(av.row(i), w1)).collect();
                let sb: Vec<f64> = (0..n).map(|j| dot(bv.row(j), w2)).collect();
                for i in 0..m {
                    for j in 0..n {
                        out.data[i * n + j] = sa[i] + sb[j] + bias_v;
                    }
                }
            }
            Some(mk) => {
                for i in 0..m {
                    for j in 0..n {
                        let base = (i * n + j) * 2 * d;
                        let keep = &mk.keep[base..base + 2 * d];
                        let mut s = 0.0;
                        for k in 0..d {
                            if keep[k] {
                                s += av.data[i * d + k] * w1[k];
                            }
                            if keep[d + k] {
                                s += bv.data[j * d + k] * w2[k];
                            }
                        }
                        out.data[i * n + j] = s * mk.scale + bias_v;
                    }
                }
            }
        }
        Ok(self.push(out, Op::PairLinear { a, b, w, bias, mask }))
    }

    pub fn link_loss(&mut self, logits: Var, labels: &[f64], weights: &LossWeights) -> Result<Var> {
        let lv = self.value(logits);
        if lv.data.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} logits",
                labels.len(),
                lv.data.len()
            )));
        }
        let probs: Vec<f64> = lv.data.iter().map(|&x| sigmoid(x)).collect();
        let (loss, dloss_dprob) = weighted_bce_with_count(&probs, labels, weights);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::LinkLoss {
                logits,
                dloss_dprob,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar output; returns one gradient per node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul_nt(bv).expect("shape"));
                    accumulate(&mut grads, *b, av.matmul_tn(&g).expect("shape"));
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul(bv).expect("shape"));
                    accumulate(&mut grads, *b, g.matmul_tn(av).expect("shape"));
                }
                Op::AddRowBias(x, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    for (o, &v) in gx.data.iter_mut().zip(&xv.data) {
                        if v <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale(x, s) => {
                    let mut gx = g.clone();
                    gx.scale(*s);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean(xs) => {
                    let share = g.item() / xs.len() as f64;
                    for &x in xs {
                        accumulate(&mut grads, x, Tensor::scalar(share));
                    }
                }
                Op::PairLinear { a, b, w, bias, mask } => {
                    let (av, bv, wv) = (self.value(*a), self.value(*b), self.value(*w));
                    let d = av.cols;
                    let (m, n) = (av.rows, bv.rows);
                    let (w1, w2) = wv.data.split_at(d);
                    let mut ga = Tensor::zeros(m, d);
                    let mut gbm = Tensor::zeros(n, d);
                    let mut gw = Tensor::zeros(2 * d, 1);
                    let gbias: f64 = g.data.iter().sum();
                    match mask {
                        None => {
                            let row_sums: Vec<f64> = (0..m).map(|i| g.row(i).iter().sum()).collect();
                            let col_sums: Vec<f64> = (0..n).map(|j| (0..m).map(|i| g.get(i, j)).sum()).collect();
                            for i in 0..m {
                                for k in 0..d {
                                    ga.data[i * d + k] = row_sums[i] * w1[k];
                                    gw.data[k] += row_sums[i] * av.data[i * d + k];
                                }
                            }
                            for j in 0..n {
                                for k in 0..d {
                                    gbm.data[j * d + k] = col_sums[j] * w2[k];
                                    gw.data[d + k] += col_sums[j] * bv.data[j * d + k];
                                }
                            }
                        }
                        Some(mk) => {
                            for i in 0..m {
                                for j in 0..n {
                                    let gij = g.get(i, j) * mk.scale;
                                    if gij == 0.0 {
                                        continue;
                                    }
                                    let base = (i * n + j) * 2 * d;
                                    for k in 0..d {
                                        if mk.keep[base + k] {
                                            ga.data[i * d + k] += gij * w1[k];
                                            gw.data[k] += gij * av.data[i * d + k];
                                        }
                                        if mk.keep[base + d + k] {
                                            gbm.data[j * d + k] += gij * w2[k];
                                            gw.data[d + k] += gij * bv.data[j * d + k];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gbm);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *bias, Tensor::scalar(gbias));
                }
                Op::LinkLoss {
                    logits,
                    dloss_dprob,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let s = g.item();
                    let data = dloss_dprob
                        .iter()
                        .zip(probs)
                        .map(|(d, p)| s * d * p * (1.0 - p))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor { rows: lv.rows, cols: lv.cols, data });
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; nodes the output does not depend on have none.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data, vec![58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.matmul_nt(&b.transpose()).unwrap(), ab);
        assert_eq!(a.transpose().matmul_tn(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let w = LossWeights { w_pos: 1.0, w_neg: 1.0, lambda: 0.0, c: 43.0 };
        let (l, _) = weighted_bce_with_count(&[0.5; 12], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0], &w);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let w = LossWeights { w_pos: 100.0, w_neg: 1.0, lambda: 1e-5, c: 43.0 };
        let probs = vec![0.5; 86];
        let labels = vec![0.0; 86];
        let (l, _) = weighted_bce_with_count(&probs, &labels, &w);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn scale_doubles_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(1, 2, vec![1.0, -2.0]).unwrap());
        let w = t.leaf(Tensor::from_vec(2, 1, vec![0.5, 0.25]).unwrap());
        let y = t.matmul(x, w).unwrap();
        let y2 = t.scale(y, 2.0);
        let g1 = t.backward(y);
        let g2 = t.backward(y2);
        let a = g1.get(w).unwrap();
        let b = g2.get(w).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert_eq!(2.0 * p, *q);
        }
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let unused = t.leaf(Tensor::scalar(3.0));
        let y = t.scale(x, 4.0);
        let g = t.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 4.0);
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
