//! Dense ground truth for the line scan.
//!
//! Everything here is written directly from the matrix form of the
//! recurrence, in original pixel coordinates, and shares no code with the
//! scan kernels: gate normalization, group splitting and neighbor geometry
//! are all recomputed. The affinity of one channel is the `N × N` matrix `G`
//! with `vec(h) = G · vec(x)`, whose block `(i, j)` (scan lines `i`, `j`) is
//!
//! ```text
//! G_ij = w_i w_{i-1} … w_{j+1} diag(λ_j)   for j < i in the same group
//! G_ii = diag(λ_i)
//! G_ij = 0                                 otherwise
//! ```
//!
//! Matrices are stored in canonical pixel order (`row * W + col`) so that
//! affinities of different directions can be added.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use thiserror::Error;

use crate::error::{Error, Result};
use crate::propagation::{Direction, FirstLine, GateField, ScanConfig};
use crate::tensor::{Dims, Tensor4};

/// Largest grid (in pixels) the oracle will materialize.
pub const MAX_PIXELS: usize = 4096;
/// Row-sum tolerance for stochasticity checks.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Largest line for which the true largest singular value is computed.
pub const MAX_SVD_LINE: usize = 64;

const POWER_MAX_ITERS: usize = 1000;
const POWER_REL_TOL: f64 = 1e-12;

/// One scan step's tridiagonal operator. Row `p` reads positions `p-1`,
/// `p`, `p+1` of the previous line through `sub[p]`, `main[p]`, `sup[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalLine {
    sub: Vec<f64>,
    main: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalLine {
    /// Build from per-target weights; entries outside the matrix are
    /// dropped.
    pub fn new(mut sub: Vec<f64>, main: Vec<f64>, mut sup: Vec<f64>) -> Self {
        let n = main.len();
        assert!(sub.len() == n && sup.len() == n, "diagonal lengths differ");
        if n > 0 {
            sub[0] = 0.0;
            sup[n - 1] = 0.0;
        }
        Self { sub, main, sup }
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn main(&self) -> &[f64] {
        &self.main
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    pub fn identity(n: usize) -> Self {
        Self::new(vec![0.0; n], vec![1.0; n], vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c == r {
            self.main[r]
        } else if c + 1 == r {
            self.sub[r]
        } else if c == r + 1 {
            self.sup[r]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut m = vec![0.0; n * n];
        for r in 0..n {
            for c in r.saturating_sub(1)..(r + 2).min(n) {
                m[r * n + c] = self.get(r, c);
            }
        }
        m
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.sub[r] + self.main[r] + self.sup[r]
    }

    /// `self · m` for a row-major `n × k` matrix `m`.
    pub fn mul_dense(&self, m: &[f64], k: usize) -> Vec<f64> {
        let n = self.len();
        assert_eq!(m.len(), n * k);
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            for c in r.saturating_sub(1)..(r + 2).min(n) {
                let a = self.get(r, c);
                if a == 0.0 {
                    continue;
                }
                for q in 0..k {
                    out[r * k + q] += a * m[c * k + q];
                }
            }
        }
        out
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Normalize one line's gate pre-activations: each present neighbor gets
/// `σ(g_k) / Σ_present σ(g_k')`.
pub fn normalized_line(g1: &[f64], g2: &[f64], g3: &[f64]) -> TridiagonalLine {
    let n = g2.len();
    let mut sub = vec![0.0; n];
    let mut main = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for p in 0..n {
        let a = if p > 0 { logistic(g1[p]) } else { 0.0 };
        let b = logistic(g2[p]);
        let c = if p + 1 < n { logistic(g3[p]) } else { 0.0 };
        let s = a + b + c;
        sub[p] = a / s;
        main[p] = b / s;
        sup[p] = c / s;
    }
    TridiagonalLine::new(sub, main, sup)
}

/// Tridiagonal operator from already-normalized weights of one line.
pub fn build_line_matrix(w1: &[f64], w2: &[f64], w3: &[f64]) -> TridiagonalLine {
    TridiagonalLine::new(w1.to_vec(), w2.to_vec(), w3.to_vec())
}

/// Scan geometry of one direction on an `H × W` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineGeometry {
    pub direction: Direction,
    pub height: usize,
    pub width: usize,
}

impl LineGeometry {
    pub fn new(direction: Direction, height: usize, width: usize) -> Self {
        Self {
            direction,
            height,
            width,
        }
    }

    pub fn n_lines(&self) -> usize {
        match self.direction {
            Direction::TopToBottom | Direction::BottomToTop => self.height,
            Direction::LeftToRight | Direction::RightToLeft => self.width,
        }
    }

    pub fn line_len(&self) -> usize {
        match self.direction {
            Direction::TopToBottom | Direction::BottomToTop => self.width,
            Direction::LeftToRight | Direction::RightToLeft => self.height,
        }
    }

    /// `(row, col)` of position `pos` on scan line `line`.
    pub fn pixel(&self, line: usize, pos: usize) -> (usize, usize) {
        match self.direction {
            Direction::TopToBottom => (line, pos),
            Direction::BottomToTop => (self.height - 1 - line, pos),
            Direction::LeftToRight => (pos, line),
            Direction::RightToLeft => (pos, self.width - 1 - line),
        }
    }

    pub fn pixel_index(&self, line: usize, pos: usize) -> usize {
        let (r, c) = self.pixel(line, pos);
        r * self.width + c
    }

    /// Values of one `(b, c)` plane along scan line `line`.
    pub fn line_values(&self, t: &Tensor4<f64>, b: usize, c: usize, line: usize) -> Vec<f64> {
        (0..self.line_len())
            .map(|p| {
                let (r, col) = self.pixel(line, p);
                t.get(b, c, r, col)
            })
            .collect()
    }
}

/// Dense `N × N` affinity in canonical pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAffinity {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DenseAffinity {
    fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.height * self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `G · x` for a plane in canonical order.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n());
        (0..self.n())
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn zero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0.0).count()
    }

    /// Affinity of query pixel `(r, c)` to every pixel, as an `H × W` map.
    pub fn query_map(&self, r: usize, c: usize) -> Vec<f64> {
        self.row(r * self.width + c).to_vec()
    }

    /// Block `(i, j)` between scan lines, as a row-major `n × n` matrix.
    pub fn block(&self, geom: &LineGeometry, i: usize, j: usize) -> Vec<f64> {
        let n = geom.line_len();
        let mut out = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                out[p * n + q] = self.get(geom.pixel_index(i, p), geom.pixel_index(j, q));
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &DenseAffinity, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}

fn guard(height: usize, width: usize) -> Result<()> {
    let pixels = height * width;
    if pixels > MAX_PIXELS {
        return Err(Error::ScaleGuard {
            pixels,
            limit: MAX_PIXELS,
        });
    }
    Ok(())
}

fn group_starts(n_lines: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || (n_lines > 0 && groups > n_lines) {
        return Err(Error::InvalidGroups {
            groups,
            len: n_lines,
        });
    }
    let size = n_lines / groups.max(1);
    Ok((0..groups).map(|k| k * size).collect())
}

/// Assemble `G` from explicit per-line operators.
///
/// `lines[i]` is the operator taking line `i-1` to line `i`; it is ignored
/// for the first line of each group. Passing identity operators gives the
/// pure causal accumulation `h_i = Σ_{j≤i} λ_j x_j`.
pub fn expand_from_lines(
    geom: &LineGeometry,
    groups: usize,
    first_line: FirstLine,
    lines: &[TridiagonalLine],
    lam_lines: &[Vec<f64>],
) -> Result<DenseAffinity> {
    guard(geom.height, geom.width)?;
    let n_lines = geom.n_lines();
    let n = geom.line_len();
    if lines.len() != n_lines || lam_lines.len() != n_lines {
        return Err(Error::InvalidArgument(format!(
            "expected {n_lines} line operators and λ lines, got {} and {}",
            lines.len(),
            lam_lines.len()
        )));
    }
    let mut starts = group_starts(n_lines, groups)?;
    starts.push(n_lines);
    let mut g = DenseAffinity::zeros(geom.height, geom.width);
    let total = g.n();
    for k in 0..starts.len().saturating_sub(1) {
        let (s, e) = (starts[k], starts[k + 1]);
        for j in s..e {
            let mut m = vec![0.0; n * n];
            for p in 0..n {
                m[p * n + p] = if j == s && first_line == FirstLine::Identity {
                    1.0
                } else {
                    lam_lines[j][p]
                };
            }
            for i in j..e {
                if i > j {
                    m = lines[i].mul_dense(&m, n);
                }
                for p in 0..n {
                    let row = geom.pixel_index(i, p);
                    for q in 0..n {
                        g.data[row * total + geom.pixel_index(j, q)] = m[p * n + q];
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Dense affinity of one `(b, c)` plane for one scan configuration.
pub fn expand_dense_g(
    gates: &GateField<f64>,
    cfg: &ScanConfig,
    b: usize,
    c: usize,
) -> Result<DenseAffinity> {
    let d = gates.dims();
    guard(d.height, d.width)?;
    let geom = LineGeometry::new(cfg.direction, d.height, d.width);
    let lines: Vec<TridiagonalLine> = (0..geom.n_lines())
        .map(|i| {
            normalized_line(
                &geom.line_values(&gates.g1, b, c, i),
                &geom.line_values(&gates.g2, b, c, i),
                &geom.line_values(&gates.g3, b, c, i),
            )
        })
        .collect();
    let lam: Vec<Vec<f64>> = (0..geom.n_lines())
        .map(|i| geom.line_values(&gates.lam, b, c, i))
        .collect();
    expand_from_lines(&geom, cfg.groups, cfg.first_line, &lines, &lam)
}

/// `Σ_d merge[d] · G_d` over the four global scans, in
/// [`Direction::ALL`] order.
pub fn merged_affinity(
    gates: &[GateField<f64>; 4],
    merge: [f64; 4],
    b: usize,
    c: usize,
) -> Result<DenseAffinity> {
    let d = gates[0].dims();
    guard(d.height, d.width)?;
    let mut acc = DenseAffinity::zeros(d.height, d.width);
    for (k, dir) in Direction::ALL.into_iter().enumerate() {
        if merge[k] == 0.0 {
            continue;
        }
        let g = expand_dense_g(&gates[k], &ScanConfig::global(dir), b, c)?;
        acc.add_scaled(&g, merge[k]);
    }
    Ok(acc)
}

/// Dense reference output `h = G · x` for every plane of `x`.
pub fn dense_scan(x: &Tensor4<f64>, gates: &GateField<f64>, cfg: &ScanConfig) -> Result<Tensor4<f64>> {
    let d = x.dims();
    let mut out = Vec::with_capacity(d.len());
    for b in 0..d.batch {
        for c in 0..d.channels {
            let g = expand_dense_g(gates, cfg, b, c)?;
            out.extend(g.matvec(x.plane(b, c)));
        }
    }
    Ok(Tensor4::from_vec(d, out)?)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StochasticityViolation {
    #[error("line {step} is not row-stochastic: row {row} sum deviates by {deviation:e}, min entry {min_entry:e}")]
    Line {
        step: usize,
        row: usize,
        deviation: f64,
        min_entry: f64,
    },
    #[error("product after step {step} is not row-stochastic: row {row} sum deviates by {deviation:e}, min entry {min_entry:e}")]
    Product {
        step: usize,
        row: usize,
        deviation: f64,
        min_entry: f64,
    },
    #[error("line {step} has length {len}, expected {expected}")]
    Length {
        step: usize,
        len: usize,
        expected: usize,
    },
}

impl StochasticityViolation {
    pub fn step(&self) -> usize {
        match *self {
            StochasticityViolation::Line { step, .. }
            | StochasticityViolation::Product { step, .. }
            | StochasticityViolation::Length { step, .. } => step,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductReport {
    pub steps: usize,
    /// Largest `|row sum - 1|` over every intermediate product.
    pub max_deviation: f64,
    pub min_entry: f64,
    /// Exact zeros in the final product.
    pub final_zero_entries: usize,
    /// Final product `w_k ⋯ w_1`, row-major.
    pub product: Vec<f64>,
}

fn worst_row(m: &[f64], n: usize) -> (usize, f64, f64) {
    let mut worst = (0, 0.0f64, f64::INFINITY);
    for r in 0..n {
        let row = &m[r * n..(r + 1) * n];
        let dev = (row.iter().sum::<f64>() - 1.0).abs();
        let mn = row.iter().copied().fold(f64::INFINITY, f64::min);
        if dev > worst.1 || (dev.is_nan() && !worst.1.is_nan()) {
            worst.0 = r;
            worst.1 = dev;
        }
        worst.2 = worst.2.min(mn);
    }
    worst
}

/// Multiply `lines` in scan order (`w_k ⋯ w_2 w_1`) and check that each
/// line and every intermediate product is row-stochastic.
pub fn check_row_stochastic_product(
    lines: &[TridiagonalLine],
) -> std::result::Result<ProductReport, StochasticityViolation> {
    let n = lines.first().map_or(0, TridiagonalLine::len);
    let mut product: Vec<f64> = Vec::new();
    let mut max_deviation = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for (step, line) in lines.iter().enumerate() {
        if line.len() != n {
            return Err(StochasticityViolation::Length {
                step,
                len: line.len(),
                expected: n,
            });
        }
        let dense = line.to_dense();
        let (row, deviation, mn) = worst_row(&dense, n);
        if !(deviation <= ROW_SUM_TOL) || mn < 0.0 {
            return Err(StochasticityViolation::Line {
                step,
                row,
                deviation,
                min_entry: mn,
            });
        }
        product = if step == 0 {
            dense
        } else {
            line.mul_dense(&product, n)
        };
        let (row, deviation, mn) = worst_row(&product, n);
        if !(deviation <= ROW_SUM_TOL) || mn < 0.0 {
            return Err(StochasticityViolation::Product {
                step,
                row,
                deviation,
                min_entry: mn,
            });
        }
        max_deviation = max_deviation.max(deviation);
        min_entry = min_entry.min(mn);
    }
    Ok(ProductReport {
        steps: lines.len(),
        max_deviation,
        min_entry,
        final_zero_entries: product.iter().filter(|&&v| v == 0.0).count(),
        product,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    /// Gershgorin row bound `max_r Σ_c |w_rc|`, which is also `‖w‖_∞`.
    pub gershgorin_bound: f64,
    /// Collatz–Wielandt upper bound on the spectral radius; `None` when the
    /// line has negative entries.
    pub spectral_radius: Option<f64>,
    /// Largest singular value by power iteration on `wᵀw`; `None` above
    /// [`MAX_SVD_LINE`].
    pub sigma_max: Option<f64>,
}

pub fn check_spectral_stability(line: &TridiagonalLine) -> SpectralReport {
    let n = line.len();
    let gershgorin_bound = (0..n)
        .map(|r| line.sub[r].abs() + line.main[r].abs() + line.sup[r].abs())
        .fold(0.0, f64::max);
    let nonneg = (0..n).all(|r| line.sub[r] >= 0.0 && line.main[r] >= 0.0 && line.sup[r] >= 0.0);
    let spectral_radius = nonneg.then(|| collatz_wielandt_upper(line));
    let sigma_max = (n <= MAX_SVD_LINE).then(|| largest_singular_value(line));
    SpectralReport {
        gershgorin_bound,
        spectral_radius,
        sigma_max,
    }
}

fn apply(line: &TridiagonalLine, v: &[f64]) -> Vec<f64> {
    line.mul_dense(v, 1)
}

fn apply_transpose(line: &TridiagonalLine, v: &[f64]) -> Vec<f64> {
    let n = line.len();
    let mut out = vec![0.0; n];
    for r in 0..n {
        for c in r.saturating_sub(1)..(r + 2).min(n) {
            out[c] += line.get(r, c) * v[r];
        }
    }
    out
}

fn collatz_wielandt_upper(line: &TridiagonalLine) -> f64 {
    let n = line.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0; n];
    let mut best = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let wv = apply(line, &v);
        let bound = wv
            .iter()
            .zip(&v)
            .map(|(a, b)| if *b > 0.0 { a / b } else if *a > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max);
        let prev = best;
        best = best.min(bound);
        let norm = wv.iter().copied().fold(0.0, f64::max);
        if norm == 0.0 {
            return 0.0;
        }
        v = wv.into_iter().map(|a| a / norm).collect();
        if (prev - best).abs() <= POWER_REL_TOL * best {
            break;
        }
    }
    best
}

fn largest_singular_value(line: &TridiagonalLine) -> f64 {
    let n = line.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        let wtw = apply_transpose(line, &apply(line, &v));
        let norm = wtw.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= POWER_REL_TOL * norm;
        lambda = norm;
        v = wtw.into_iter().map(|a| a / norm).collect();
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

/// Normalized operators for every line of one `(b, c)` plane.
pub fn plane_lines(gates: &GateField<f64>, dir: Direction, b: usize, c: usize) -> Vec<TridiagonalLine> {
    let d: Dims = gates.dims();
    let geom = LineGeometry::new(dir, d.height, d.width);
    (0..geom.n_lines())
        .map(|i| {
            normalized_line(
                &geom.line_values(&gates.g1, b, c, i),
                &geom.line_values(&gates.g2, b, c, i),
                &geom.line_values(&gates.g3, b, c, i),
            )
        })
        .collect()
}
