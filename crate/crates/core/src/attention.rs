//! Single-head, unbatched attention baselines.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// `N × d` token features, row-major with `d` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch<T> {
    tokens: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SeqBatch<T> {
    pub fn new(tokens: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if tokens.checked_mul(dim) != Some(data.len()) {
            return Err(Error::InvalidArgument(format!(
                "sequence data has {} values, expected {tokens} × {dim}",
                data.len()
            )));
        }
        Ok(Self { tokens, dim, data })
    }

    pub fn random<R: Rng + ?Sized>(tokens: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..tokens * dim)
            .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
            .collect();
        Self { tokens, dim, data }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_qkv<T: Scalar>(q: &SeqBatch<T>, k: &SeqBatch<T>, v: &SeqBatch<T>) -> Result<()> {
    if q.dim != k.dim || k.tokens != v.tokens || q.tokens != k.tokens {
        return Err(Error::InvalidArgument(format!(
            "attention shapes disagree: Q {}×{}, K {}×{}, V {}×{}",
            q.tokens, q.dim, k.tokens, k.dim, v.tokens, v.dim
        )));
    }
    Ok(())
}

/// Bytes of the `N × N` score matrix [`softmax_attention`] materializes.
pub fn softmax_score_bytes<T: Scalar>(tokens: usize) -> Option<usize> {
    tokens
        .checked_mul(tokens)?
        .checked_mul(T::DTYPE.size_of())
}

/// `softmax(QKᵀ / √d) V` with the full score matrix materialized.
/// Each row subtracts its maximum before exponentiating.
pub fn softmax_attention<T: Scalar>(
    q: &SeqBatch<T>,
    k: &SeqBatch<T>,
    v: &SeqBatch<T>,
) -> Result<SeqBatch<T>> {
    check_qkv(q, k, v)?;
    let n = q.tokens;
    let dv = v.dim;
    let scale = T::one() / T::lit(q.dim as f64).sqrt();
    let mut scores = vec![T::zero(); n * n];
    if n == 0 {
        return SeqBatch::new(0, dv, Vec::new());
    }
    scores.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let qi = q.row(i);
        let mut mx = T::neg_infinity();
        for (j, s) in row.iter_mut().enumerate() {
            let dot = qi
                .iter()
                .zip(k.row(j))
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            *s = dot * scale;
            mx = mx.max(*s);
        }
        let mut z = T::zero();
        for s in row.iter_mut() {
            *s = (*s - mx).exp();
            z = z + *s;
        }
        for s in row.iter_mut() {
            *s = *s / z;
        }
    });
    let mut out = vec![T::zero(); n * dv];
    out.par_chunks_mut(dv.max(1))
        .zip(scores.par_chunks(n))
        .for_each(|(o, p)| {
            for (j, &pj) in p.iter().enumerate() {
                for (oc, &vc) in o.iter_mut().zip(v.row(j)) {
                    *oc = *oc + pj * vc;
                }
            }
        });
    SeqBatch::new(n, dv, out)
}

/// Non-normalized causal linear attention `y_i = Q_i Σ_{j≤i} K_jᵀ V_j`,
/// computed with a running `d × d_v` state.
pub fn linear_attention_causal<T: Scalar>(
    q: &SeqBatch<T>,
    k: &SeqBatch<T>,
    v: &SeqBatch<T>,
) -> Result<SeqBatch<T>> {
    check_qkv(q, k, v)?;
    let (d, dv) = (q.dim, v.dim);
    let mut state = vec![T::zero(); d * dv];
    let mut out = Vec::with_capacity(q.tokens * dv);
    for i in 0..q.tokens {
        let (ki, vi) = (k.row(i), v.row(i));
        for a in 0..d {
            for b in 0..dv {
                state[a * dv + b] = state[a * dv + b] + ki[a] * vi[b];
            }
        }
        let qi = q.row(i);
        for b in 0..dv {
            let mut acc = T::zero();
            for a in 0..d {
                acc = acc + qi[a] * state[a * dv + b];
            }
            out.push(acc);
        }
    }
    SeqBatch::new(q.tokens, dv, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize, d: usize, v: &[f64]) -> SeqBatch<f64> {
        SeqBatch::new(n, d, v.to_vec()).unwrap()
    }

    #[test]
    fn single_token_softmax_returns_v() {
        let q = seq(1, 2, &[0.3, -1.0]);
        let k = seq(1, 2, &[2.0, 5.0]);
        let v = seq(1, 2, &[7.0, -3.0]);
        assert_eq!(softmax_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = seq(3, 1, &[1.0, -4.0, 0.0]);
        let k = seq(3, 1, &[0.5, 0.5, 0.5]);
        let v = seq(3, 1, &[1.0, 2.0, 6.0]);
        let out = softmax_attention(&q, &k, &v).unwrap();
        for &o in out.data() {
            assert!((o - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_hand_evaluation() {
        // 3 tokens, d = 2, scores scaled by 1/√2.
        let q = seq(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let k = seq(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 0.0]);
        let v = seq(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let out = softmax_attention(&q, &k, &v).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (q.row(i)[0] * k.row(j)[0] + q.row(i)[1] * k.row(j)[1]) * s)
                .collect();
            let e: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| e[j] / z * v.row(j)[c]).sum();
                assert!((out.row(i)[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let q = seq(2, 1, &[1000.0, -1000.0]);
        let k = seq(2, 1, &[1000.0, 999.0]);
        let v = seq(2, 1, &[1.0, 2.0]);
        let out = softmax_attention(&q, &k, &v).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unit_features_give_prefix_sums() {
        let ones = seq(4, 1, &[1.0; 4]);
        let v = seq(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let out = linear_attention_causal(&ones, &ones, &v).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0, 6.0, 10.0]);
    }

    #[test]
    fn linear_attention_single_token() {
        let q = seq(1, 2, &[1.0, 2.0]);
        let k = seq(1, 2, &[3.0, -1.0]);
        let v = seq(1, 2, &[0.5, 4.0]);
        let out = linear_attention_causal(&q, &k, &v).unwrap();
        // Q (Kᵀ V): q·k = 1, times v.
        assert_eq!(out.data(), &[0.5, 4.0]);
    }

    #[test]
    fn causal_linear_matches_masked_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1usize, 5, 17, 64] {
            let (q, k, v) = (
                SeqBatch::<f64>::random(n, 3, &mut rng),
                SeqBatch::<f64>::random(n, 3, &mut rng),
                SeqBatch::<f64>::random(n, 3, &mut rng),
            );
            let fast = linear_attention_causal(&q, &k, &v).unwrap();
            for i in 0..n {
                for c in 0..3 {
                    let mut want = 0.0;
                    for j in 0..=i {
                        let a: f64 = (0..3).map(|t| q.row(i)[t] * k.row(j)[t]).sum();
                        want += a * v.row(j)[c];
                    }
                    assert!((fast.row(i)[c] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = seq(2, 2, &[0.0; 4]);
        let b = seq(3, 2, &[0.0; 6]);
        assert!(softmax_attention(&a, &b, &b).is_err());
        assert!(linear_attention_causal(&a, &a, &b).is_err());
        assert!(SeqBatch::new(2, 2, vec![0.0f64; 3]).is_err());
    }
}
