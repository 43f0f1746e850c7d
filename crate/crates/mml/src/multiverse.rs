//! The multiverse classifier: a bank of parallel linear heads over the coding
//! vector, the per-head task loss, the pairwise orthogonality loss that keeps
//! the heads from collapsing into copies, and inference by logit averaging
//! over the active heads.

use serde::{Deserialize, Serialize};

use crate::encoder::CodingVector;
use crate::error::{MmlError, Result};
use crate::numerics::{softmax, Matrix, Rng};

/// What the heads are trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
}

impl TaskKind {
    /// Width of each head's output: class count, or 1 for regression.
    pub fn output_width(&self) -> usize {
        match self {
            TaskKind::Classification { classes } => *classes,
            TaskKind::Regression => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TaskKind::Classification { classes } = self {
            if *classes < 2 {
                return Err(MmlError::InvalidConfig(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(())
    }
}

/// Supervision for one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Score(f64),
}

/// `m` parallel linear heads of shape d x c plus the binary activity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadBank {
    pub m: usize,
    pub c: usize,
    pub d: usize,
    /// `weights[j]` is head j's d x c matrix; column k scores class k.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Activity mask; eliminated heads carry `false`.
    pub beta: Vec<bool>,
}

impl HeadBank {
    pub fn active_count(&self) -> usize {
        self.beta.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
            .collect()
    }

    /// Parameters of head `j` flattened: weight (row-major) then bias.
    pub fn head_param_count(&self) -> usize {
        self.d * self.c + self.c
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.m * self.head_param_count());
        for j in 0..self.m {
            flat.extend_from_slice(&self.weights[j].data);
            flat.extend_from_slice(&self.biases[j]);
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.m * self.head_param_count() {
            return Err(MmlError::Shape(format!(
                "flat length {} vs {} head parameters",
                flat.len(),
                self.m * self.head_param_count()
            )));
        }
        let mut off = 0;
        for j in 0..self.m {
            let wn = self.weights[j].data.len();
            self.weights[j].data.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            self.biases[j].copy_from_slice(&flat[off..off + self.c]);
            off += self.c;
        }
        Ok(())
    }
}

/// Mean per-head task loss over a minibatch; masked heads carry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLosses {
    pub per_head: Vec<f64>,
}

/// Zero-mean random init with scale 1/sqrt(d), zero biases, all heads active.
pub fn init_head_bank(d: usize, c: usize, m: usize, rng: &mut Rng) -> Result<HeadBank> {
    if d < 1 || c < 1 || m < 1 {
        return Err(MmlError::InvalidConfig(format!(
            "head bank dimensions must be at least 1 (d={d}, c={c}, m={m})"
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        let mut w = Matrix::zeros(d, c);
        for v in &mut w.data {
            *v = rng.normal(0.0, scale);
        }
        weights.push(w);
    }
    Ok(HeadBank {
        m,
        c,
        d,
        weights,
        biases: vec![vec![0.0; c]; m],
        beta: vec![true; m],
    })
}

/// Logits of every head (inactive ones included; the mask applies downstream).
/// Row j is `d_i^T F_j + b_j`.
pub fn forward_heads(bank: &HeadBank, coding: &CodingVector) -> Result<Vec<Vec<f64>>> {
    if coding.len() != bank.d {
        return Err(MmlError::Shape(format!(
            "coding vector length {} vs bank d={}",
            coding.len(),
            bank.d
        )));
    }
    let mut logits = Vec::with_capacity(bank.m);
    for j in 0..bank.m {
        let mut row = bank.weights[j].vec_mul(coding.as_slice())?;
        for (r, b) in row.iter_mut().zip(&bank.biases[j]) {
            *r += b;
        }
        logits.push(row);
    }
    Ok(logits)
}

fn per_head_loss(logits: &[f64], label: &Label, kind: &TaskKind, c: usize) -> Result<f64> {
    match (kind, label) {
        (TaskKind::Classification { classes }, Label::Class(y)) => {
            if *y >= *classes {
                return Err(MmlError::InvalidLabel(format!(
                    "class {y} out of range [0, {classes})"
                )));
            }
            let probs = softmax(logits)?;
            Ok(-probs[*y].ln())
        }
        (TaskKind::Regression, Label::Score(y)) => {
            if !y.is_finite() {
                return Err(MmlError::InvalidLabel("non-finite regression target".into()));
            }
            debug_assert_eq!(c, 1);
            let diff = y - logits[0];
            Ok(diff * diff)
        }
        _ => Err(MmlError::InvalidLabel(
            "label does not match the task kind".into(),
        )),
    }
}

/// Single-example task loss: per-head negative log likelihood (classification,
/// `-log softmax[y]`) or squared error (regression); inactive heads contribute
/// exactly zero. Returns the active-head sum and the per-head vector.
pub fn task_loss(
    bank: &HeadBank,
    logits_per_head: &[Vec<f64>],
    label: &Label,
    kind: &TaskKind,
) -> Result<(f64, HeadLosses)> {
    if logits_per_head.len() != bank.m {
        return Err(MmlError::Shape(format!(
            "{} logit rows vs m={}",
            logits_per_head.len(),
            bank.m
        )));
    }
    let mut per_head = vec![0.0; bank.m];
    let mut total = 0.0;
    for j in 0..bank.m {
        if !bank.beta[j] {
            continue;
        }
        let loss = per_head_loss(&logits_per_head[j], label, kind, bank.c)?;
        per_head[j] = loss;
        total += loss;
    }
    Ok((total, HeadLosses { per_head }))
}

/// Multiverse (orthogonality) loss: for every class column, the absolute dot
/// product between every pair of distinct active heads. Biases are excluded.
pub fn multiverse_loss(bank: &HeadBank) -> f64 {
    let active = bank.active_indices();
    let mut total = 0.0;
    for k in 0..bank.c {
        for (a, &r) in active.iter().enumerate() {
            for &s in &active[a + 1..] {
                total += column_dot(bank, r, s, k).abs();
            }
        }
    }
    total
}

fn column_dot(bank: &HeadBank, r: usize, s: usize, k: usize) -> f64 {
    let (wr, ws) = (&bank.weights[r], &bank.weights[s]);
    let mut dot = 0.0;
    for row in 0..bank.d {
        dot += wr.get(row, k) * ws.get(row, k);
    }
    dot
}

/// One m x m table per class: entry (r, s) is `|f_r^(k) . f_s^(k)|` for r != s,
/// with the diagonal fixed at 0. Diagnostic only.
pub fn orthogonality_tables(bank: &HeadBank) -> Vec<Matrix> {
    let mut tables = Vec::with_capacity(bank.c);
    for k in 0..bank.c {
        let mut t = Matrix::zeros(bank.m, bank.m);
        for r in 0..bank.m {
            for s in (r + 1)..bank.m {
                let v = column_dot(bank, r, s, k).abs();
                t.set(r, s, v);
                t.set(s, r, v);
            }
        }
        tables.push(t);
    }
    tables
}

/// Gradients produced by [`total_loss`].
#[derive(Debug, Clone)]
pub struct BankGradients {
    /// Per head, d x c; zero for inactive heads.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Per example, gradient of the total loss w.r.t. the coding vector.
    pub codings: Vec<Vec<f64>>,
}

/// Value and gradients of the combined objective on one minibatch.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub task: f64,
    pub multiverse: f64,
    /// Mean per-head task loss over the batch.
    pub head_losses: HeadLosses,
    pub grads: BankGradients,
}

/// Task loss (batch mean, summed over active heads) plus `lambda` times the
/// multiverse loss, with hand-derived gradients for head weights, biases, and
/// each coding vector. The absolute-value subgradient at an exact zero dot
/// product is taken as 0.
pub fn total_loss(
    bank: &HeadBank,
    codings: &[CodingVector],
    labels: &[Label],
    kind: &TaskKind,
    lambda: f64,
) -> Result<TotalLoss> {
    if codings.is_empty() {
        return Err(MmlError::InvalidInput("empty batch".into()));
    }
    if codings.len() != labels.len() {
        return Err(MmlError::Shape(format!(
            "{} codings vs {} labels",
            codings.len(),
            labels.len()
        )));
    }
    if lambda < 0.0 {
        return Err(MmlError::InvalidInput(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let n = codings.len() as f64;
    let inv_n = 1.0 / n;

    let mut weight_grads: Vec<Matrix> = (0..bank.m).map(|_| Matrix::zeros(bank.d, bank.c)).collect();
    let mut bias_grads: Vec<Vec<f64>> = vec![vec![0.0; bank.c]; bank.m];
    let mut coding_grads: Vec<Vec<f64>> = Vec::with_capacity(codings.len());
    let mut per_head_mean = vec![0.0; bank.m];

    for (coding, label) in codings.iter().zip(labels) {
        let logits = forward_heads(bank, coding)?;
        let mut d_coding = vec![0.0; bank.d];
        for j in 0..bank.m {
            if !bank.beta[j] {
                continue;
            }
            per_head_mean[j] += per_head_loss(&logits[j], label, kind, bank.c)? * inv_n;

            // d(loss)/d(logits), already scaled by the batch mean factor.
            let dlogits: Vec<f64> = match (kind, label) {
                (TaskKind::Classification { .. }, Label::Class(y)) => {
                    let mut dl = softmax(&logits[j])?;
                    dl[*y] -= 1.0;
                    for v in &mut dl {
                        *v *= inv_n;
                    }
                    dl
                }
                (TaskKind::Regression, Label::Score(y)) => {
                    vec![2.0 * (logits[j][0] - y) * inv_n]
                }
                _ => unreachable!("label/kind mismatch caught by per_head_loss"),
            };

            let wg = &mut weight_grads[j];
            for (row, &x) in coding.as_slice().iter().enumerate() {
                for (k, &dl) in dlogits.iter().enumerate() {
                    wg.data[row * bank.c + k] += x * dl;
                }
            }
            for (bg, &dl) in bias_grads[j].iter_mut().zip(&dlogits) {
                *bg += dl;
            }
            let w = &bank.weights[j];
            for (row, dc) in d_coding.iter_mut().enumerate() {
                for (k, &dl) in dlogits.iter().enumerate() {
                    *dc += w.data[row * bank.c + k] * dl;
                }
            }
        }
        coding_grads.push(d_coding);
    }

    let task: f64 = per_head_mean
        .iter()
        .zip(&bank.beta)
        .filter(|(_, &b)| b)
        .map(|(l, _)| *l)
        .sum();

    let active = bank.active_indices();
    let mut mv = 0.0;
    if active.len() >= 2 {
        for k in 0..bank.c {
            for (a, &r) in active.iter().enumerate() {
                for &s in &active[a + 1..] {
                    let dot = column_dot(bank, r, s, k);
                    mv += dot.abs();
                    if lambda > 0.0 && dot != 0.0 {
                        let g = lambda * dot.signum();
                        for row in 0..bank.d {
                            weight_grads[r].data[row * bank.c + k] +=
                                g * bank.weights[s].get(row, k);
                            weight_grads[s].data[row * bank.c + k] +=
                                g * bank.weights[r].get(row, k);
                        }
                    }
                }
            }
        }
    }

    Ok(TotalLoss {
        total: task + lambda * mv,
        task,
        multiverse: mv,
        head_losses: HeadLosses {
            per_head: per_head_mean,
        },
        grads: BankGradients {
            weights: weight_grads,
            biases: bias_grads,
            codings: coding_grads,
        },
    })
}

/// A model output for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Classification { probs: Vec<f64>, argmax: usize },
    Regression(f64),
}

impl Prediction {
    pub fn predicted_class(&self) -> Option<usize> {
        match self {
            Prediction::Classification { argmax, .. } => Some(*argmax),
            Prediction::Regression(_) => None,
        }
    }
}

/// Average the active heads' logits; softmax for classification, the raw
/// average for regression.
pub fn aggregate_inference(
    bank: &HeadBank,
    coding: &CodingVector,
    kind: &TaskKind,
) -> Result<Prediction> {
    let active = bank.active_indices();
    if active.is_empty() {
        return Err(MmlError::NoActiveHeads);
    }
    let logits = forward_heads(bank, coding)?;
    let mut mean = vec![0.0; bank.c];
    for &j in &active {
        for (m, l) in mean.iter_mut().zip(&logits[j]) {
            *m += l;
        }
    }
    let inv = 1.0 / active.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    match kind {
        TaskKind::Classification { .. } => {
            let probs = softmax(&mean)?;
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            Ok(Prediction::Classification { probs, argmax })
        }
        TaskKind::Regression => Ok(Prediction::Regression(mean[0])),
    }
}

/// One CSV rendering per class table, `m` header-less rows of `m` columns.
pub fn orthogonality_tables_csv(bank: &HeadBank) -> Vec<String> {
    orthogonality_tables(bank)
        .iter()
        .map(|t| {
            let mut out = String::new();
            for r in 0..t.rows {
                let row: Vec<String> = (0..t.cols).map(|s| format!("{}", t.get(r, s))).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        })
        .collect()
}
