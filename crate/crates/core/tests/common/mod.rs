#![allow(dead_code)]

use gspn::{Dims, GateField, Tensor4};
use rand::Rng;

pub const FD_EPS: f64 = 1e-6;

/// Central differences of `f` at `p`, one coordinate at a time.
pub fn central_diff(p: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + FD_EPS;
            let hi = f(&q);
            q[i] = p[i] - FD_EPS;
            let lo = f(&q);
            q[i] = p[i];
            (hi - lo) / (2.0 * FD_EPS)
        })
        .collect()
}

/// Central differences of the projection `⟨f(p), dir⟩`, differencing the
/// outputs elementwise before projecting.
pub fn central_diff_proj(p: &[f64], dir: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + FD_EPS;
            let hi = f(&q);
            q[i] = p[i] - FD_EPS;
            let lo = f(&q);
            q[i] = p[i];
            hi.iter()
                .zip(&lo)
                .zip(dir)
                .map(|((a, b), d)| (a - b) * d)
                .sum::<f64>()
                / (2.0 * FD_EPS)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired components.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_dims<R: Rng>(rng: &mut R, max: (usize, usize, usize, usize)) -> Dims {
    Dims::new(
        rng.gen_range(1..=max.0),
        rng.gen_range(1..=max.1),
        rng.gen_range(1..=max.2),
        rng.gen_range(1..=max.3),
    )
}

pub fn flatten(gf: &GateField<f64>, x: &Tensor4<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for t in [x, &gf.lam, &gf.g1, &gf.g2, &gf.g3, &gf.u] {
        v.extend_from_slice(t.data());
    }
    v
}

pub fn unflatten(dims: Dims, p: &[f64]) -> (GateField<f64>, Tensor4<f64>) {
    let n = dims.len();
    let t = |k: usize| Tensor4::from_vec(dims, p[k * n..(k + 1) * n].to_vec()).unwrap();
    let x = t(0);
    let gf = GateField::new(t(2), t(3), t(4), t(1), t(5)).unwrap();
    (gf, x)
}
