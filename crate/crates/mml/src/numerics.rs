//! Dense matrices, a deterministic RNG, softmax, and a from-scratch Adam
//! optimizer. Everything runs in f64 so gradient checks stay tight.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MmlError, Result};

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MmlError::Shape(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(MmlError::InvalidInput("non-finite matrix entry".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `x^T * self` for a dense row vector `x` of length `rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(MmlError::Shape(format!(
                "vec_mul: vector length {} vs {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xv * w;
            }
        }
        Ok(out)
    }

    /// `self * y` for a dense column vector `y` of length `cols`.
    pub fn mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.cols {
            return Err(MmlError::Shape(format!(
                "mul_vec: vector length {} vs {} cols",
                y.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(y).map(|(w, yv)| w * yv).sum();
        }
        Ok(out)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(MmlError::InvalidInput("softmax of empty vector".into()));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(MmlError::InvalidInput("non-finite logit".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the conventional defaults beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(n_params: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam step over all parameters.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], alpha: f64) -> Result<()> {
        self.update_masked(params, grads, alpha, None)
    }

    /// One Adam step; entries where `mask` is false are left untouched,
    /// moments included, so masked parameters stay bitwise frozen.
    pub fn update_masked(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        alpha: f64,
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(MmlError::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(m) = mask {
            if m.len() != params.len() {
                return Err(MmlError::Shape(format!(
                    "adam: mask length {} vs {} params",
                    m.len(),
                    params.len()
                )));
            }
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(MmlError::InvalidInput("non-finite gradient".into()));
        }
        if alpha <= 0.0 {
            return Err(MmlError::InvalidInput(format!(
                "learning rate must be positive, got {alpha}"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if let Some(m) = mask {
                if !m[i] {
                    continue;
                }
            }
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= alpha * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Deterministic splittable RNG. Identical seed, identical stream;
/// `derive` gives an independent stream that depends only on the root
/// seed and the label, never on how much of this stream was consumed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `label`.
    pub fn derive(&self, label: &str) -> Self {
        let mut h = fnv1a64(label.as_bytes());
        h ^= self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Rng::seeded(h)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("std must be finite and non-negative")
            .sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }
}

/// FNV-1a 64-bit hash. Stable across platforms and releases, unlike
/// `DefaultHasher`, so hashed features and derived seeds stay reproducible.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[3.7, 3.7, 3.7]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_closed_form() {
        // e^1, e^2, e^3 evaluated directly.
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (a, b) in p.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = vec![1.5, -2.0, 0.25];
        let before = params.clone();
        let mut st = AdamState::new(3);
        st.update(&mut params, &[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_single_step_matches_hand_evaluation() {
        // g=1, beta1=0.9, beta2=0.999, eps=1e-8, alpha=0.1:
        //   m=0.1, v=0.001, m_hat=1, v_hat=1  =>  theta -= 0.1 * 1/(1+1e-8)
        let mut params = vec![0.0];
        let mut st = AdamState::new(1);
        st.update(&mut params, &[1.0], 0.1).unwrap();
        let expect = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0] - expect).abs() < 1e-15, "{}", params[0]);
    }

    #[test]
    fn adam_two_steps_unroll_recurrence() {
        let g = 0.7;
        let mut params = vec![0.3];
        let mut st = AdamState::new(1);
        st.update(&mut params, &[g], 0.05).unwrap();
        st.update(&mut params, &[g], 0.05).unwrap();
        assert_eq!(st.step_count, 2);
        // Recurrence applied twice by hand.
        let (b1, b2) = (0.9, 0.999);
        let m2 = b1 * ((1.0 - b1) * g) + (1.0 - b1) * g;
        let v2 = b2 * ((1.0 - b2) * g * g) + (1.0 - b2) * g * g;
        assert!((st.first_moment[0] - m2).abs() < 1e-15);
        assert!((st.second_moment[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_length_mismatch() {
        let mut params = vec![0.0; 2];
        let mut st = AdamState::new(2);
        assert!(matches!(
            st.update(&mut params, &[1.0], 0.1),
            Err(MmlError::Shape(_))
        ));
    }

    #[test]
    fn adam_masked_entries_stay_bitwise_frozen() {
        let mut params = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        let mask = [true, false];
        for _ in 0..5 {
            st.update_masked(&mut params, &[0.3, 0.3], 0.1, Some(&mask))
                .unwrap();
        }
        assert_eq!(params[1].to_bits(), 2.0f64.to_bits());
        assert_eq!(st.first_moment[1], 0.0);
        assert!(params[0] != 1.0);
    }

    #[test]
    fn rng_same_seed_same_stream() {
        let mut a = Rng::seeded(7);
        let mut b = Rng::seeded(7);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rng_derive_is_consumption_independent() {
        let mut a = Rng::seeded(7);
        let b = Rng::seeded(7);
        a.next_f64();
        a.next_f64();
        let mut da = a.derive("x");
        let mut db = b.derive("x");
        assert_eq!(da.next_u64(), db.next_u64());
        let mut other = b.derive("y");
        assert_ne!(da.next_u64(), other.next_u64());
    }

    #[test]
    fn matrix_rejects_bad_shapes() {
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        let m = Matrix::zeros(2, 3);
        assert!(m.vec_mul(&[1.0]).is_err());
        assert!(m.mul_vec(&[1.0, 2.0]).is_err());
    }
}
