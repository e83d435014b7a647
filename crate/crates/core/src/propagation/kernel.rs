//! Line-scan kernels on a single `(batch, channel)` plane in the canonical
//! orientation: lines are rows, the scan runs top to bottom, and each target
//! pixel `(r, j)` reads `(r-1, j-1)`, `(r-1, j)`, `(r-1, j+1)` through the
//! gates `g1`, `g2`, `g3`. Every other direction is a reorientation of this.

#![allow(clippy::needless_range_loop)]

use std::ops::Range;

use super::FirstLine;
use crate::tensor::Scalar;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(x)`, finite for every finite `x`.
#[inline]
fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

/// Which of the three previous-line neighbors exist for position `j` of a
/// line of length `n`.
#[inline]
pub fn present(j: usize, n: usize) -> [bool; 3] {
    [j > 0, true, j + 1 < n]
}

/// Sigmoid-then-renormalize over the present neighbors. Absent slots get
/// weight zero. Returns `(weights, sigmoids)`.
#[inline]
pub fn normalize3<T: Scalar>(g: [T; 3], present: [bool; 3]) -> ([T; 3], [T; 3]) {
    let mut s = [T::zero(); 3];
    let mut sum = T::zero();
    for k in 0..3 {
        if present[k] {
            s[k] = sigmoid(g[k]);
            sum = sum + s[k];
        }
    }
    let mut w = [T::zero(); 3];
    if sum.is_normal() {
        for k in 0..3 {
            if present[k] {
                w[k] = s[k] / sum;
            }
        }
    } else {
        // All present sigmoids underflowed; renormalize in log space.
        let mut l = [T::neg_infinity(); 3];
        let mut lmax = T::neg_infinity();
        for k in 0..3 {
            if present[k] {
                l[k] = log_sigmoid(g[k]);
                lmax = lmax.max(l[k]);
            }
        }
        let mut z = T::zero();
        for k in 0..3 {
            if present[k] {
                w[k] = (l[k] - lmax).exp();
                z = z + w[k];
            }
        }
        for k in 0..3 {
            if present[k] {
                w[k] = w[k] / z;
            }
        }
    }
    (w, s)
}

/// Full-plane inputs for one `(batch, channel)` pair.
pub struct PlaneInputs<'a, T> {
    pub x: &'a [T],
    pub lam: &'a [T],
    pub g1: &'a [T],
    pub g2: &'a [T],
    pub g3: &'a [T],
}

impl<T: Scalar> PlaneInputs<'_, T> {
    #[inline]
    fn weights(&self, idx: usize, j: usize, n: usize) -> ([T; 3], [T; 3]) {
        normalize3([self.g1[idx], self.g2[idx], self.g3[idx]], present(j, n))
    }

    #[inline]
    fn inject(&self, idx: usize, first_line: FirstLine, first: bool) -> T {
        if first && first_line == FirstLine::Identity {
            self.x[idx]
        } else {
            self.lam[idx] * self.x[idx]
        }
    }
}

/// Hidden states for rows `rows` of one plane. `h` holds exactly those rows.
pub fn forward_rows<T: Scalar>(
    inp: &PlaneInputs<'_, T>,
    h: &mut [T],
    rows: Range<usize>,
    n: usize,
    first_line: FirstLine,
) {
    if rows.is_empty() || n == 0 {
        return;
    }
    debug_assert_eq!(h.len(), rows.len() * n);
    let r0 = rows.start;
    for j in 0..n {
        h[j] = inp.inject(r0 * n + j, first_line, true);
    }
    for r in rows.start + 1..rows.end {
        let local = r - r0;
        let (done, rest) = h.split_at_mut(local * n);
        let prev = &done[(local - 1) * n..];
        let cur = &mut rest[..n];
        let base = r * n;
        for j in 0..n {
            let idx = base + j;
            let (w, _) = inp.weights(idx, j, n);
            let mut acc = T::zero();
            if j > 0 {
                acc = w[0] * prev[j - 1];
            }
            acc = acc + w[1] * prev[j];
            if j + 1 < n {
                acc = acc + w[2] * prev[j + 1];
            }
            cur[j] = inp.inject(idx, first_line, false) + acc;
        }
    }
}

/// Gradients for one group of rows, each buffer covering exactly those rows.
pub struct RowGrads<T> {
    pub dx: Vec<T>,
    pub dlam: Vec<T>,
    pub du: Vec<T>,
    pub dg1: Vec<T>,
    pub dg2: Vec<T>,
    pub dg3: Vec<T>,
}

/// Reverse-order accumulation over rows `rows` of one plane.
///
/// `h`, `u` and `dy` are full-plane slices; `h` must be the forward result.
pub fn backward_rows<T: Scalar>(
    inp: &PlaneInputs<'_, T>,
    u: &[T],
    h: &[T],
    dy: &[T],
    rows: Range<usize>,
    n: usize,
    first_line: FirstLine,
) -> RowGrads<T> {
    let len = rows.len() * n;
    let mut g = RowGrads {
        dx: vec![T::zero(); len],
        dlam: vec![T::zero(); len],
        du: vec![T::zero(); len],
        dg1: vec![T::zero(); len],
        dg2: vec![T::zero(); len],
        dg3: vec![T::zero(); len],
    };
    if len == 0 {
        return g;
    }
    let r0 = rows.start;
    let mut dh_next = vec![T::zero(); n];
    let mut dh_cur = vec![T::zero(); n];
    let mut w_next = vec![[T::zero(); 3]; n];
    let mut w_cur = vec![[T::zero(); 3]; n];

    for r in rows.clone().rev() {
        let base = r * n;
        let lbase = (r - r0) * n;
        let has_next = r + 1 < rows.end;
        for j in 0..n {
            let idx = base + j;
            let mut d = u[idx] * dy[idx];
            if has_next {
                // Targets j+1, j, j-1 of the next line read this pixel
                // through their left, aligned and right weights.
                if j + 1 < n {
                    d = d + w_next[j + 1][0] * dh_next[j + 1];
                }
                d = d + w_next[j][1] * dh_next[j];
                if j > 0 {
                    d = d + w_next[j - 1][2] * dh_next[j - 1];
                }
            }
            dh_cur[j] = d;

            let li = lbase + j;
            g.du[li] = dy[idx] * h[idx];
            if r == r0 {
                match first_line {
                    FirstLine::Learned => {
                        g.dx[li] = inp.lam[idx] * d;
                        g.dlam[li] = inp.x[idx] * d;
                    }
                    FirstLine::Identity => g.dx[li] = d,
                }
                continue;
            }
            g.dx[li] = inp.lam[idx] * d;
            g.dlam[li] = inp.x[idx] * d;

            let pres = present(j, n);
            let (w, _) = inp.weights(idx, j, n);
            w_cur[j] = w;
            let prev = base - n;
            let mut dw = [T::zero(); 3];
            for k in 0..3 {
                if pres[k] {
                    dw[k] = d * h[prev + j + k - 1];
                }
            }
            let mean = w[0] * dw[0] + w[1] * dw[1] + w[2] * dw[2];
            let gates = [inp.g1[idx], inp.g2[idx], inp.g3[idx]];
            let mut dg = [T::zero(); 3];
            for k in 0..3 {
                if pres[k] {
                    // d w_k / d g_m = w_m (1 - σ_m) (δ_km - w_k)
                    dg[k] = w[k] * sigmoid(-gates[k]) * (dw[k] - mean);
                }
            }
            g.dg1[li] = dg[0];
            g.dg2[li] = dg[1];
            g.dg3[li] = dg[2];
        }
        std::mem::swap(&mut dh_next, &mut dh_cur);
        std::mem::swap(&mut w_next, &mut w_cur);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn normalize3_falls_back_to_log_space() {
        let (w, _) = normalize3([-900.0f64, -901.0, -902.0], [true; 3]);
        let s: f64 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
        // Ratios follow exp(-1) steps.
        assert!((w[1] / w[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn single_position_line_keeps_only_the_aligned_neighbor() {
        let (w, _) = normalize3([3.0f64, -2.0, 1.0], present(0, 1));
        assert_eq!(w, [0.0, 1.0, 0.0]);
    }
}
