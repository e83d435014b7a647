//! Normalized 3-way gated line-scan recurrence.
//!
//! For each scan line `i` within a group,
//!
//! ```text
//! h_0 = λ_0 ⊙ x_0
//! h_i = w_i h_{i-1} + λ_i ⊙ x_i
//! y   = u ⊙ h
//! ```
//!
//! where `w_i` is tridiagonal: target position `p` reads positions `p-1`,
//! `p`, `p+1` of the previous line with weights `σ(g_k) / Σ σ(g_k')`, the
//! sum running over the neighbors that exist. The first line of every group
//! has no predecessor, so groups never exchange information.
//!
//! All four directions run the same top-to-bottom kernel on a reoriented
//! copy of the inputs; see [`Direction`].

pub mod kernel;

use std::borrow::Cow;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};
use kernel::PlaneInputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::TopToBottom | Direction::BottomToTop)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Direction::LeftToRight => "ltr",
            Direction::RightToLeft => "rtl",
            Direction::TopToBottom => "ttb",
            Direction::BottomToTop => "btt",
        }
    }

    /// Number of scan lines (steps) for a tensor of these dims.
    pub fn scan_len(self, dims: Dims) -> usize {
        if self.is_vertical() {
            dims.height
        } else {
            dims.width
        }
    }

    /// Length of each scan line.
    pub fn line_len(self, dims: Dims) -> usize {
        if self.is_vertical() {
            dims.width
        } else {
            dims.height
        }
    }

    /// Reorient so that this direction becomes a top-to-bottom scan.
    ///
    /// Horizontal scans go through `transpose_hw`; right-to-left is
    /// left-to-right on `flip_w` input, bottom-to-top is top-to-bottom on
    /// `flip_h` input.
    pub fn orient<T: Scalar>(self, t: &Tensor4<T>) -> Cow<'_, Tensor4<T>> {
        match self {
            Direction::TopToBottom => Cow::Borrowed(t),
            Direction::BottomToTop => Cow::Owned(t.flip_h()),
            Direction::LeftToRight => Cow::Owned(t.transpose_hw()),
            Direction::RightToLeft => Cow::Owned(t.flip_w().transpose_hw()),
        }
    }

    /// Inverse of [`Direction::orient`].
    pub fn restore<T: Scalar>(self, t: Tensor4<T>) -> Tensor4<T> {
        match self {
            Direction::TopToBottom => t,
            Direction::BottomToTop => t.flip_h(),
            Direction::LeftToRight => t.transpose_hw(),
            Direction::RightToLeft => t.transpose_hw().flip_w(),
        }
    }
}

/// How the first line of each group is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FirstLine {
    /// `h_0 = λ_0 ⊙ x_0`, the same as every other line.
    #[default]
    Learned,
    /// `h_0 = x_0`; `λ_0` is ignored and receives no gradient.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    pub direction: Direction,
    /// Number of contiguous groups along the scan axis; 1 is a global scan.
    pub groups: usize,
    pub first_line: FirstLine,
}

impl ScanConfig {
    pub fn global(direction: Direction) -> Self {
        Self {
            direction,
            groups: 1,
            first_line: FirstLine::Learned,
        }
    }

    pub fn local(direction: Direction, groups: usize) -> Self {
        Self {
            direction,
            groups,
            first_line: FirstLine::Learned,
        }
    }

    pub fn with_first_line(mut self, first_line: FirstLine) -> Self {
        self.first_line = first_line;
        self
    }

    /// Line ranges of each group along this config's scan axis.
    pub fn group_ranges(&self, dims: Dims) -> Result<Vec<Range<usize>>> {
        group_ranges(self.direction.scan_len(dims), self.groups)
    }
}

/// Split `len` scan lines into `groups` contiguous runs of `len / groups`
/// lines, the last run absorbing the remainder.
pub fn group_ranges(len: usize, groups: usize) -> Result<Vec<Range<usize>>> {
    if groups == 0 || (len > 0 && groups > len) {
        return Err(Error::InvalidGroups { groups, len });
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let base = len / groups;
    Ok((0..groups)
        .map(|k| {
            let start = k * base;
            let end = if k + 1 == groups { len } else { start + base };
            start..end
        })
        .collect())
}

/// Per-pixel gate pre-activations plus the input and output scales.
///
/// `g1` weights the lower-index neighbor on the previous line, `g2` the
/// aligned one, `g3` the higher-index one. For horizontal scans the line
/// index is the row, so `g1` is the up-diagonal neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct GateField<T> {
    pub g1: Tensor4<T>,
    pub g2: Tensor4<T>,
    pub g3: Tensor4<T>,
    pub lam: Tensor4<T>,
    pub u: Tensor4<T>,
}

impl<T: Scalar> GateField<T> {
    pub fn new(
        g1: Tensor4<T>,
        g2: Tensor4<T>,
        g3: Tensor4<T>,
        lam: Tensor4<T>,
        u: Tensor4<T>,
    ) -> Result<Self> {
        let gf = Self { g1, g2, g3, lam, u };
        gf.check(gf.g1.dims())?;
        Ok(gf)
    }

    /// Constant gates with unit `λ` and `u`.
    pub fn uniform(dims: Dims, gate: T) -> Self {
        let g = Tensor4::alloc(dims, gate).expect("dims");
        let one = Tensor4::alloc(dims, T::one()).expect("dims");
        Self {
            g1: g.clone(),
            g2: g.clone(),
            g3: g,
            lam: one.clone(),
            u: one,
        }
    }

    /// Gates uniform in `[-gate_spread, gate_spread)`, `λ` and `u` uniform
    /// in `[0.5, 1.5)`.
    pub fn random<R: Rng + ?Sized>(dims: Dims, gate_spread: f64, rng: &mut R) -> Self {
        Self {
            g1: Tensor4::random_uniform(dims, -gate_spread, gate_spread, rng),
            g2: Tensor4::random_uniform(dims, -gate_spread, gate_spread, rng),
            g3: Tensor4::random_uniform(dims, -gate_spread, gate_spread, rng),
            lam: Tensor4::random_uniform(dims, 0.5, 1.5, rng),
            u: Tensor4::random_uniform(dims, 0.5, 1.5, rng),
        }
    }

    pub fn dims(&self) -> Dims {
        self.g1.dims()
    }

    pub fn check(&self, dims: Dims) -> Result<()> {
        check_dims("g1", dims, self.g1.dims())?;
        check_dims("g2", dims, self.g2.dims())?;
        check_dims("g3", dims, self.g3.dims())?;
        check_dims("lam", dims, self.lam.dims())?;
        check_dims("u", dims, self.u.dims())
    }

    pub fn map_tensors(&self, f: impl Fn(&Tensor4<T>) -> Tensor4<T>) -> Self {
        Self {
            g1: f(&self.g1),
            g2: f(&self.g2),
            g3: f(&self.g3),
            lam: f(&self.lam),
            u: f(&self.u),
        }
    }
}

struct Oriented<'a, T: Scalar> {
    g1: Cow<'a, Tensor4<T>>,
    g2: Cow<'a, Tensor4<T>>,
    g3: Cow<'a, Tensor4<T>>,
    lam: Cow<'a, Tensor4<T>>,
    u: Cow<'a, Tensor4<T>>,
}

impl<'a, T: Scalar> Oriented<'a, T> {
    fn new(gates: &'a GateField<T>, dir: Direction) -> Self {
        Self {
            g1: dir.orient(&gates.g1),
            g2: dir.orient(&gates.g2),
            g3: dir.orient(&gates.g3),
            lam: dir.orient(&gates.lam),
            u: dir.orient(&gates.u),
        }
    }

    fn plane<'s>(&'s self, x: &'s Tensor4<T>, p: usize) -> PlaneInputs<'s, T> {
        let n = x.dims().plane_len();
        let r = p * n..(p + 1) * n;
        PlaneInputs {
            x: &x.data()[r.clone()],
            lam: &self.lam.data()[r.clone()],
            g1: &self.g1.data()[r.clone()],
            g2: &self.g2.data()[r.clone()],
            g3: &self.g3.data()[r],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGates<T> {
    pub w1: Tensor4<T>,
    pub w2: Tensor4<T>,
    pub w3: Tensor4<T>,
}

/// Row-normalized propagation weights per target pixel.
///
/// Weights of absent neighbors (line ends, and every neighbor of a group's
/// first line) are zero. Present weights are positive and sum to one.
pub fn normalize_gates<T: Scalar>(
    g1: &Tensor4<T>,
    g2: &Tensor4<T>,
    g3: &Tensor4<T>,
    cfg: &ScanConfig,
) -> Result<NormalizedGates<T>> {
    let dims = g1.dims();
    check_dims("g2", dims, g2.dims())?;
    check_dims("g3", dims, g3.dims())?;
    let ranges = cfg.group_ranges(dims)?;
    let dir = cfg.direction;
    let (o1, o2, o3) = (dir.orient(g1), dir.orient(g2), dir.orient(g3));
    let cd = o1.dims();
    let n = cd.width;
    let mut w = [
        Tensor4::zeros(cd),
        Tensor4::zeros(cd),
        Tensor4::zeros(cd),
    ];
    let starts: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    for p in 0..cd.planes() {
        let off = p * cd.plane_len();
        for r in 0..cd.height {
            if starts.contains(&r) {
                continue;
            }
            for j in 0..n {
                let idx = off + r * n + j;
                let g = [o1.data()[idx], o2.data()[idx], o3.data()[idx]];
                let (wk, _) = kernel::normalize3(g, kernel::present(j, n));
                for k in 0..3 {
                    w[k].data_mut()[idx] = wk[k];
                }
            }
        }
    }
    let [w1, w2, w3] = w;
    Ok(NormalizedGates {
        w1: dir.restore(w1),
        w2: dir.restore(w2),
        w3: dir.restore(w3),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput<T> {
    pub h: Tensor4<T>,
    pub y: Tensor4<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGradients<T> {
    pub dx: Tensor4<T>,
    pub dlam: Tensor4<T>,
    pub dg1: Tensor4<T>,
    pub dg2: Tensor4<T>,
    pub dg3: Tensor4<T>,
    pub du: Tensor4<T>,
}

pub fn scan_forward<T: Scalar>(
    x: &Tensor4<T>,
    gates: &GateField<T>,
    cfg: &ScanConfig,
) -> Result<ScanOutput<T>> {
    let dims = x.dims();
    gates.check(dims)?;
    let ranges = cfg.group_ranges(dims)?;
    let dir = cfg.direction;
    let xs = dir.orient(x);
    let og = Oriented::new(gates, dir);
    let cd = xs.dims();
    let n = cd.width;
    let plane = cd.plane_len();

    let mut h = Tensor4::zeros(cd);
    if plane > 0 {
        h.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(p, hp)| {
                let inp = og.plane(&xs, p);
                let mut rest = hp;
                let mut parts = Vec::with_capacity(ranges.len());
                for r in &ranges {
                    let (head, tail) = rest.split_at_mut(r.len() * n);
                    parts.push((r.clone(), head));
                    rest = tail;
                }
                parts.into_par_iter().for_each(|(r, hs)| {
                    kernel::forward_rows(&inp, hs, r, n, cfg.first_line);
                });
            });
    }
    let y = og.u.mul(&h);
    Ok(ScanOutput {
        h: dir.restore(h),
        y: dir.restore(y),
    })
}

/// Exact gradients given `dL/dy = dy` and the saved forward hidden state.
pub fn scan_backward<T: Scalar>(
    x: &Tensor4<T>,
    gates: &GateField<T>,
    cfg: &ScanConfig,
    h: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> Result<ScanGradients<T>> {
    let dims = x.dims();
    gates.check(dims)?;
    check_dims("h", dims, h.dims())?;
    check_dims("dy", dims, dy.dims())?;
    let ranges = cfg.group_ranges(dims)?;
    let dir = cfg.direction;
    let xs = dir.orient(x);
    let og = Oriented::new(gates, dir);
    let hs = dir.orient(h);
    let dys = dir.orient(dy);
    let cd = xs.dims();
    let n = cd.width;
    let plane = cd.plane_len();

    let per_plane: Vec<Vec<kernel::RowGrads<T>>> = (0..cd.planes())
        .into_par_iter()
        .map(|p| {
            let inp = og.plane(&xs, p);
            let pr = p * plane..(p + 1) * plane;
            let (u, hp, dyp) = (&og.u.data()[pr.clone()], &hs.data()[pr.clone()], &dys.data()[pr]);
            ranges
                .par_iter()
                .map(|r| kernel::backward_rows(&inp, u, hp, dyp, r.clone(), n, cfg.first_line))
                .collect()
        })
        .collect();

    let mut out: [Vec<T>; 6] = Default::default();
    for v in out.iter_mut() {
        v.reserve(cd.len());
    }
    for g in per_plane.iter().flatten() {
        out[0].extend_from_slice(&g.dx);
        out[1].extend_from_slice(&g.dlam);
        out[2].extend_from_slice(&g.dg1);
        out[3].extend_from_slice(&g.dg2);
        out[4].extend_from_slice(&g.dg3);
        out[5].extend_from_slice(&g.du);
    }
    let [dx, dlam, dg1, dg2, dg3, du] =
        out.map(|v| dir.restore(Tensor4::from_vec(cd, v).expect("gradient length")));
    Ok(ScanGradients {
        dx,
        dlam,
        dg1,
        dg2,
        dg3,
        du,
    })
}

/// One scan per direction, in [`Direction::ALL`] order.
pub fn scan_all_directions<T: Scalar>(
    x: &Tensor4<T>,
    gates: &[GateField<T>; 4],
    groups: usize,
) -> Result<[ScanOutput<T>; 4]> {
    let outs: Vec<ScanOutput<T>> = Direction::ALL
        .par_iter()
        .zip(gates.par_iter())
        .map(|(&d, g)| scan_forward(x, g, &ScanConfig::local(d, groups)))
        .collect::<Result<_>>()?;
    Ok(outs.try_into().unwrap_or_else(|_| unreachable!()))
}

#[cfg(test)]
mod tests;
