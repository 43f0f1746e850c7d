//! Text encoding: a sentence pair is hashed into a sparse feature vector and
//! pushed through a small feed-forward network to produce the coding vector
//! the head bank classifies. The trainer only sees the [`Encoder`] trait, so
//! any backbone with flattenable parameters can stand in.

use serde::{Deserialize, Serialize};

use crate::error::{MmlError, Result};
use crate::numerics::{fnv1a64, Matrix, Rng};

/// A tokenized sentence pair; the second sentence may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

impl SentencePair {
    pub fn new(first: Vec<String>, second: Vec<String>) -> Self {
        SentencePair { first, second }
    }

    /// Tokenize raw text: lowercase, split on whitespace and punctuation
    /// boundaries (each punctuation character becomes its own token).
    pub fn from_texts(first: &str, second: &str) -> Self {
        SentencePair {
            first: tokenize(first),
            second: tokenize(second),
        }
    }

    /// Render back to text, one sentence per string. Tokens never contain
    /// whitespace, so `from_texts(render()) == self`.
    pub fn render(&self) -> (String, String) {
        (self.first.join(" "), self.second.join(" "))
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Sparse real vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

const SALT_FIRST: u8 = 0x01;
const SALT_SECOND: u8 = 0x02;
const SALT_CROSS: u8 = 0x03;

fn hash_feature(salt: u8, parts: &[&str], dim: usize) -> usize {
    let mut buf = Vec::with_capacity(1 + parts.iter().map(|p| p.len() + 1).sum::<usize>());
    buf.push(salt);
    for p in parts {
        buf.extend_from_slice(p.as_bytes());
        buf.push(0x1f); // unit separator keeps token boundaries unambiguous
    }
    (fnv1a64(&buf) % dim as u64) as usize
}

/// Hashed bag of unigrams and bigrams, salted per sentence, plus cross-pair
/// unigram interactions under a third salt. L2-normalized when nonzero.
pub fn featurize(pair: &SentencePair, feature_dim: usize) -> SparseVector {
    assert!(feature_dim >= 1, "feature_dim must be at least 1");
    let mut counts: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut bump = |idx: usize| *counts.entry(idx).or_insert(0.0) += 1.0;

    for (salt, tokens) in [(SALT_FIRST, &pair.first), (SALT_SECOND, &pair.second)] {
        for tok in tokens {
            bump(hash_feature(salt, &[tok], feature_dim));
        }
        for pair in tokens.windows(2) {
            bump(hash_feature(salt, &[&pair[0], &pair[1]], feature_dim));
        }
    }
    for a in &pair.first {
        for b in &pair.second {
            bump(hash_feature(SALT_CROSS, &[a, b], feature_dim));
        }
    }

    let mut entries: Vec<(usize, f64)> = counts.into_iter().collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    SparseVector {
        dim: feature_dim,
        entries,
    }
}

/// The d-dimensional encoder output for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingVector(pub Vec<f64>);

impl CodingVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Backbone contract the trainer depends on: forward to a coding vector,
/// exact reverse-mode gradients, and a flat parameter view for the optimizer.
pub trait Encoder {
    type Cache;

    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn encode(&self, pair: &SentencePair) -> Result<(CodingVector, Self::Cache)>;
    /// Accumulate parameter gradients into `grad_acc` (layout of `params_flat`).
    fn encode_backward(
        &self,
        cache: &Self::Cache,
        grad_wrt_coding: &[f64],
        grad_acc: &mut [f64],
    ) -> Result<()>;
    fn params_flat(&self) -> Vec<f64>;
    fn set_params_flat(&mut self, flat: &[f64]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `input_dim x output_dim`, row-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Reference desk-scale encoder: hashed features, tanh hidden layers, affine
/// output. Stands in for the out-of-scope pretrained backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardEncoder {
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub layers: Vec<DenseLayer>,
}

/// Activations cached by `encode` for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    input: SparseVector,
    /// Post-tanh output of each hidden layer, in order.
    hidden: Vec<Vec<f64>>,
}

impl FeedForwardEncoder {
    /// Random init: weights i.i.d. normal with scale 1/sqrt(fan_in), zero biases.
    pub fn init(
        feature_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if feature_dim < 1 || output_dim < 1 || hidden_dims.iter().any(|&h| h < 1) {
            return Err(MmlError::InvalidConfig(
                "encoder dimensions must all be at least 1".into(),
            ));
        }
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(feature_dim);
        dims.extend_from_slice(hidden_dims);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut weight = Matrix::zeros(fan_in, fan_out);
            for v in &mut weight.data {
                *v = rng.normal(0.0, scale);
            }
            layers.push(DenseLayer {
                weight,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(FeedForwardEncoder {
            feature_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            layers,
        })
    }

    fn check_consistent(&self) -> Result<()> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.feature_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        if self.layers.len() != dims.len() - 1 {
            return Err(MmlError::Shape(format!(
                "encoder has {} layers, dims imply {}",
                self.layers.len(),
                dims.len() - 1
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.rows != dims[i]
                || layer.weight.cols != dims[i + 1]
                || layer.bias.len() != dims[i + 1]
            {
                return Err(MmlError::Shape(format!(
                    "encoder layer {i}: weight {}x{} bias {} vs expected {}x{}",
                    layer.weight.rows,
                    layer.weight.cols,
                    layer.bias.len(),
                    dims[i],
                    dims[i + 1]
                )));
            }
        }
        Ok(())
    }
}

impl Encoder for FeedForwardEncoder {
    type Cache = EncodeCache;

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    fn encode(&self, pair: &SentencePair) -> Result<(CodingVector, EncodeCache)> {
        self.check_consistent()?;
        let input = featurize(pair, self.feature_dim);

        // First layer consumes the sparse input.
        let first = &self.layers[0];
        let mut act = first.bias.clone();
        for &(idx, val) in &input.entries {
            let row = &first.weight.data[idx * first.weight.cols..(idx + 1) * first.weight.cols];
            for (a, w) in act.iter_mut().zip(row) {
                *a += val * w;
            }
        }

        let n_hidden = self.layers.len() - 1;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        for layer_idx in 0..self.layers.len() {
            if layer_idx < n_hidden {
                for v in &mut act {
                    *v = v.tanh();
                }
                hidden.push(act.clone());
            }
            if layer_idx + 1 < self.layers.len() {
                let next = &self.layers[layer_idx + 1];
                let mut out = next.bias.clone();
                for (i, &x) in act.iter().enumerate() {
                    let row = &next.weight.data[i * next.weight.cols..(i + 1) * next.weight.cols];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += x * w;
                    }
                }
                act = out;
            }
        }
        Ok((CodingVector(act), EncodeCache { input, hidden }))
    }

    fn encode_backward(
        &self,
        cache: &EncodeCache,
        grad_wrt_coding: &[f64],
        grad_acc: &mut [f64],
    ) -> Result<()> {
        self.check_consistent()?;
        if grad_wrt_coding.len() != self.output_dim {
            return Err(MmlError::Shape(format!(
                "upstream gradient length {} vs output dim {}",
                grad_wrt_coding.len(),
                self.output_dim
            )));
        }
        if grad_acc.len() != self.param_count() {
            return Err(MmlError::Shape(format!(
                "gradient buffer length {} vs {} parameters",
                grad_acc.len(),
                self.param_count()
            )));
        }
        if cache.input.dim != self.feature_dim || cache.hidden.len() + 1 != self.layers.len() {
            return Err(MmlError::Shape(
                "cache does not match encoder architecture".into(),
            ));
        }

        // Byte offset of each layer inside the flat parameter vector.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weight.data.len() + layer.bias.len();
        }

        let mut delta: Vec<f64> = grad_wrt_coding.to_vec();
        for layer_idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[layer_idx];
            let cols = layer.weight.cols;
            let base = offsets[layer_idx];
            let (w_grad, b_grad) = {
                let seg = &mut grad_acc[base..base + layer.weight.data.len() + layer.bias.len()];
                seg.split_at_mut(layer.weight.data.len())
            };

            if layer_idx == 0 {
                for &(idx, val) in &cache.input.entries {
                    let row = &mut w_grad[idx * cols..(idx + 1) * cols];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += val * d;
                    }
                }
                for (g, d) in b_grad.iter_mut().zip(&delta) {
                    *g += d;
                }
            } else {
                let input = &cache.hidden[layer_idx - 1];
                for (i, &x) in input.iter().enumerate() {
                    let row = &mut w_grad[i * cols..(i + 1) * cols];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += x * d;
                    }
                }
                for (g, d) in b_grad.iter_mut().zip(&delta) {
                    *g += d;
                }
                // Propagate through the weights, then the tanh of the layer below.
                let mut prev = vec![0.0; layer.weight.rows];
                for (i, p) in prev.iter_mut().enumerate() {
                    let row = &layer.weight.data[i * cols..(i + 1) * cols];
                    *p = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
                for (p, y) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - y * y;
                }
                delta = prev;
            }
        }
        Ok(())
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weight.data);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(MmlError::Shape(format!(
                "flat parameter length {} vs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let wn = layer.weight.data.len();
            layer.weight.data.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            layer.bias.copy_from_slice(&flat[off..off + layer.bias.len()]);
            off += layer.bias.len();
        }
        Ok(())
    }
}
