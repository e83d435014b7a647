//! Invariant families run by `gspn verify`.
//!
//! Every family draws its cases from its own ChaCha8 stream derived from the
//! suite seed, so families can be run alone or reordered without changing
//! their cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;

use gspn::attention::{linear_attention_causal, SeqBatch};
use gspn::block::{block_backward, block_forward, block_forward_cached, GspnBlockParams};
use gspn::oracle::{
    self, check_row_stochastic_product, check_spectral_stability, expand_from_lines, merged_affinity,
    plane_lines, LineGeometry, TridiagonalLine,
};
use gspn::{
    normalize_gates, scan_backward, scan_forward, AnyTensor, Dims, Direction, FirstLine, GateField,
    ScanConfig, Tensor4, TensorError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A failing case, written out by `verify` as a reproducer.
#[derive(Debug, Clone)]
pub struct Reproducer {
    pub description: String,
    pub tensors: Vec<(String, Tensor4<f64>)>,
}

impl Reproducer {
    fn new(description: String) -> Self {
        Self {
            description,
            tensors: Vec::new(),
        }
    }

    fn with_case(mut self, x: &Tensor4<f64>, gates: &GateField<f64>) -> Self {
        self.tensors.push(("x".into(), x.clone()));
        self.with_gates(gates)
    }

    fn with_gates(mut self, gates: &GateField<f64>) -> Self {
        for (name, t) in [
            ("g1", &gates.g1),
            ("g2", &gates.g2),
            ("g3", &gates.g3),
            ("lam", &gates.lam),
            ("u", &gates.u),
        ] {
            self.tensors.push((name.into(), t.clone()));
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub family: &'static str,
    pub cases: usize,
    pub passed: bool,
    pub summary: String,
    pub failure: Option<Reproducer>,
}

impl Outcome {
    fn new(family: &'static str) -> Self {
        Self {
            family,
            cases: 0,
            passed: true,
            summary: String::new(),
            failure: None,
        }
    }

    /// Records the first failure only; later ones just keep the flag down.
    fn fail(&mut self, repro: impl FnOnce() -> Reproducer) {
        if self.passed {
            self.failure = Some(repro());
        }
        self.passed = false;
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_instance<R: Rng>(rng: &mut R, dims: Dims, spread: f64) -> (GateField<f64>, Tensor4<f64>) {
    let gates = GateField::random(dims, spread, rng);
    let x = Tensor4::random_uniform(dims, -1.0, 1.0, rng);
    (gates, x)
}

/// Scan output against the dense affinity product, cycling through the four
/// directions and `g ∈ {1, 2}`. With `sides`, grids are square with those
/// sides; otherwise sides are drawn from 1..=8.
pub fn oracle_equivalence(seed: u64, instances: usize, sides: Option<&[usize]>, tol: f64) -> Outcome {
    let mut out = Outcome::new("oracle-equivalence");
    let mut rng = rng_for(seed, 1);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let dims = match sides {
            Some(s) => {
                let side = s[k % s.len()];
                let big = side * side > 256;
                Dims::new(1, if big { 1 } else { rng.gen_range(1..=2) }, side, side)
            }
            None => Dims::new(
                rng.gen_range(1..=2),
                rng.gen_range(1..=4),
                rng.gen_range(1..=8),
                rng.gen_range(1..=8),
            ),
        };
        let dir = Direction::ALL[k % 4];
        let mut groups = 1 + (k / 4) % 2;
        if groups > dir.scan_len(dims) {
            groups = 1;
        }
        let cfg = ScanConfig::local(dir, groups);
        let (gates, x) = random_instance(&mut rng, dims, 3.0);
        let res = scan_forward(&x, &gates, &cfg).and_then(|o| Ok((o.h, oracle::dense_scan(&x, &gates, &cfg)?)));
        out.cases += 1;
        match res {
            Ok((h, dense)) => {
                let err = h.max_abs_diff(&dense);
                worst = worst.max(err);
                if !(err <= tol) {
                    out.fail(|| {
                        Reproducer::new(format!(
                            "oracle mismatch {err:e} > {tol:e}; dims {dims}, {dir:?}, groups {groups}"
                        ))
                        .with_case(&x, &gates)
                    });
                }
            }
            Err(e) => out.fail(|| Reproducer::new(format!("dims {dims}, {dir:?}: {e}")).with_case(&x, &gates)),
        }
    }
    out.summary = match sides {
        Some(s) => format!("max |h - G·x| = {worst:.2e} (tol {tol:.0e}) on sides {s:?}"),
        None => format!("max |h - G·x| = {worst:.2e} (tol {tol:.0e})"),
    };
    out
}

/// `count` gate chains: lines of random length ≤ 64 and width ≤ 16, each
/// normalized from random pre-sigmoid gates.
pub fn random_chains(seed: u64, count: usize) -> Vec<(GateField<f64>, Vec<TridiagonalLine>)> {
    let mut rng = rng_for(seed, 2);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=64);
            let width = rng.gen_range(1..=16);
            let spread = [0.5, 3.0, 12.0][rng.gen_range(0..3)];
            let gates = GateField::random(Dims::new(1, 1, len, width), spread, &mut rng);
            let lines = plane_lines(&gates, Direction::TopToBottom, 0, 0);
            (gates, lines)
        })
        .collect()
}

/// Test hook for the negative control: bumps one present weight so the row
/// no longer sums to one.
fn corrupt_line(line: &TridiagonalLine) -> TridiagonalLine {
    let mut sub = line.sub().to_vec();
    let mut main = line.main().to_vec();
    let r = line.len() / 2;
    if r > 0 {
        sub[r] *= 1.5;
    } else {
        main[r] *= 1.5;
    }
    TridiagonalLine::new(sub, main, line.sup().to_vec())
}

/// Normalized weights are non-negative with unit row sums, on gate fields
/// and on explicit products of whole chains.
pub fn row_stochastic(seed: u64, fields: usize, chains: usize, tol: f64, corrupt: bool) -> Outcome {
    let mut out = Outcome::new("row-stochastic");
    let mut rng = rng_for(seed, 3);
    let mut worst = 0.0f64;
    for k in 0..fields {
        let dims = Dims::new(1, rng.gen_range(1..=3), rng.gen_range(1..=9), rng.gen_range(1..=9));
        let dir = Direction::ALL[k % 4];
        let spread = [0.5, 4.0, 40.0][k % 3];
        let gates = GateField::<f64>::random(dims, spread, &mut rng);
        let mut groups = 1 + k % 2;
        if groups > dir.scan_len(dims) {
            groups = 1;
        }
        let cfg = ScanConfig::local(dir, groups);
        out.cases += 1;
        let mut w = match normalize_gates(&gates.g1, &gates.g2, &gates.g3, &cfg) {
            Ok(w) => w,
            Err(e) => {
                out.fail(|| Reproducer::new(format!("normalize_gates failed: {e}")).with_gates(&gates));
                continue;
            }
        };
        if corrupt {
            let d = w.w2.data_mut();
            let last = d.len() - 1;
            d[last] *= 1.5;
        }
        let starts: Vec<usize> = cfg.group_ranges(dims).unwrap().iter().map(|r| r.start).collect();
        let geom = LineGeometry::new(dir, dims.height, dims.width);
        for c in 0..dims.channels {
            for line in 0..geom.n_lines() {
                if starts.contains(&line) {
                    continue;
                }
                for pos in 0..geom.line_len() {
                    let (r, col) = geom.pixel(line, pos);
                    let ws = [w.w1.get(0, c, r, col), w.w2.get(0, c, r, col), w.w3.get(0, c, r, col)];
                    let present = [pos > 0, true, pos + 1 < geom.line_len()];
                    let mut sum = 0.0;
                    let mut ok = true;
                    for i in 0..3 {
                        if present[i] {
                            ok &= (0.0..=1.0).contains(&ws[i]);
                            sum += ws[i];
                        } else {
                            ok &= ws[i] == 0.0;
                        }
                    }
                    let dev = (sum - 1.0).abs();
                    worst = worst.max(dev);
                    if !ok || !(dev <= tol) {
                        out.fail(|| {
                            Reproducer::new(format!(
                                "weights {ws:?} at line {line} position {pos} (channel {c}) of a {dir:?} scan with {groups} groups: row sum off by {dev:e}"
                            ))
                            .with_gates(&gates)
                        });
                    }
                }
            }
        }
    }
    for (gates, lines) in random_chains(seed, chains) {
        out.cases += 1;
        let lines = if corrupt {
            let mut l = lines;
            let mid = l.len() / 2;
            l[mid] = corrupt_line(&l[mid]);
            l
        } else {
            lines
        };
        match check_row_stochastic_product(&lines) {
            Ok(rep) => worst = worst.max(rep.max_deviation),
            Err(v) => out.fail(|| Reproducer::new(format!("chain of {} lines: {v}", lines.len())).with_gates(&gates)),
        }
    }
    out.summary = format!("max |row sum - 1| = {worst:.2e} (tol {tol:.0e})");
    out
}

/// Per-line stability numbers over the chains of [`random_chains`].
#[derive(Debug, Clone)]
pub struct SpectralOutcome {
    pub outcome: Outcome,
    pub max_gershgorin_dev: f64,
    pub max_spectral_radius: f64,
    pub max_sigma: f64,
}

/// Gershgorin bound equal to one and spectral radius at most one for every
/// line. With `sigma_tol`, the largest singular value must also stay within
/// `1 + sigma_tol`.
pub fn spectral(seed: u64, chains: usize, tol: f64, sigma_tol: Option<f64>) -> SpectralOutcome {
    let mut out = Outcome::new("spectral");
    let (mut gdev, mut rho_max, mut sigma_max) = (0.0f64, 0.0f64, 0.0f64);
    for (gates, lines) in random_chains(seed, chains) {
        for (step, line) in lines.iter().enumerate() {
            out.cases += 1;
            let rep = check_spectral_stability(line);
            let dev = (rep.gershgorin_bound - 1.0).abs();
            let rho = rep.spectral_radius.unwrap_or(f64::INFINITY);
            let sigma = rep.sigma_max.unwrap_or(0.0);
            gdev = gdev.max(dev);
            rho_max = rho_max.max(rho);
            sigma_max = sigma_max.max(sigma);
            let sigma_bad = sigma_tol.is_some_and(|t| !(sigma <= 1.0 + t));
            if !(dev <= tol) || !(rho <= 1.0 + tol) || sigma_bad {
                out.fail(|| {
                    Reproducer::new(format!(
                        "line {step} of width {}: Gershgorin {}, spectral radius {rho}, sigma_max {sigma}",
                        line.len(),
                        rep.gershgorin_bound
                    ))
                    .with_gates(&gates)
                });
            }
        }
    }
    out.summary = format!(
        "max |Gershgorin - 1| = {gdev:.2e}, max spectral radius = {rho_max:.12}, max sigma_max = {sigma_max:.6}"
    );
    SpectralOutcome {
        outcome: out,
        max_gershgorin_dev: gdev,
        max_spectral_radius: rho_max,
        max_sigma: sigma_max,
    }
}

/// Central differences of `⟨f(p), dir⟩`, differencing outputs elementwise
/// before projecting.
pub fn central_diff_proj(p: &[f64], dir: &[f64], eps: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + eps;
            let hi = f(&q);
            q[i] = p[i] - eps;
            let lo = f(&q);
            q[i] = p[i];
            hi.iter()
                .zip(&lo)
                .zip(dir)
                .map(|((a, b), d)| (a - b) * d)
                .sum::<f64>()
                / (2.0 * eps)
        })
        .collect()
}

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂)`.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = n(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = n(&mut a.iter().copied()).max(n(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// All six scan gradients against central differences of `⟨y, dy⟩`;
/// errors are norm-wise per gradient tensor.
pub fn scan_gradients(seed: u64, instances: usize, eps: f64, tol: f64) -> Outcome {
    let mut out = Outcome::new("scan-gradients");
    let mut rng = rng_for(seed, 4);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let dims = if k == 0 {
            Dims::new(2, 3, 6, 7)
        } else {
            Dims::new(
                rng.gen_range(1..=2),
                rng.gen_range(1..=3),
                rng.gen_range(1..=6),
                rng.gen_range(1..=7),
            )
        };
        let dir = Direction::ALL[k % 4];
        let groups = if k % 3 == 0 && dir.scan_len(dims) >= 2 { 2 } else { 1 };
        let first = if k % 5 == 4 { FirstLine::Identity } else { FirstLine::Learned };
        let cfg = ScanConfig::local(dir, groups).with_first_line(first);
        let (gates, x) = random_instance(&mut rng, dims, 3.0);
        let dy = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        out.cases += 1;

        let fwd = scan_forward(&x, &gates, &cfg).expect("matching dims");
        let g = scan_backward(&x, &gates, &cfg, &fwd.h, &dy).expect("matching dims");
        let order = [&g.dx, &g.dlam, &g.dg1, &g.dg2, &g.dg3, &g.du];
        let analytic: Vec<f64> = order.iter().flat_map(|t| t.data().iter().copied()).collect();
        let mut point = Vec::with_capacity(6 * dims.len());
        for t in [&x, &gates.lam, &gates.g1, &gates.g2, &gates.g3, &gates.u] {
            point.extend_from_slice(t.data());
        }
        let n = dims.len();
        let numeric = central_diff_proj(&point, dy.data(), eps, |p| {
            let t = |i: usize| Tensor4::from_vec(dims, p[i * n..(i + 1) * n].to_vec()).unwrap();
            let gf = GateField {
                g1: t(2),
                g2: t(3),
                g3: t(4),
                lam: t(1),
                u: t(5),
            };
            scan_forward(&t(0), &gf, &cfg).unwrap().y.into_vec()
        });
        let err = (0..6)
            .map(|i| norm_rel_err(&analytic[i * n..(i + 1) * n], &numeric[i * n..(i + 1) * n]))
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if !(err <= tol) {
            out.fail(|| {
                let mut r = Reproducer::new(format!(
                    "relative error {err:e} > {tol:e}; dims {dims}, {dir:?}, groups {groups}, {first:?}"
                ))
                .with_case(&x, &gates);
                r.tensors.push(("dy".into(), dy.clone()));
                r
            });
        }
    }
    out.summary = format!("max relative error {worst:.2e} (eps {eps:.0e}, tol {tol:.0e})");
    out
}

/// Block input and every projection weight and bias against central
/// differences of `⟨out, dout⟩` on `1×4×6×6` with `C_r = 2`; errors are
/// norm-wise per tensor.
pub fn block_gradients(seed: u64, instances: usize, eps: f64, tol: f64) -> Outcome {
    let mut out = Outcome::new("block-gradients");
    let mut rng = rng_for(seed, 5);
    let dims = Dims::new(1, 4, 6, 6);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut params = GspnBlockParams::init_with_reduced(4, 2, &mut rng);
        for p in params.projections_mut() {
            for b in &mut p.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let dout = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let groups = 1 + k % 2;
        out.cases += 1;
        let (_, cache) = block_forward_cached(&x, &params, groups).expect("matching dims");
        let g = block_backward(&params, &cache, &dout).expect("matching dims");
        let mut point = x.data().to_vec();
        point.extend(params.to_flat());
        let mut analytic = g.dx.data().to_vec();
        analytic.extend(g.dparams.to_flat());
        let n = x.len();
        let numeric = central_diff_proj(&point, dout.data(), eps, |p| {
            let xx = Tensor4::from_vec(dims, p[..n].to_vec()).unwrap();
            let mut pp = params.clone();
            pp.set_flat(&p[n..]);
            block_forward(&xx, &pp, groups).unwrap().into_vec()
        });
        let mut lens = vec![("dx".to_string(), n)];
        for (name, p) in gspn::block::PARAM_NAMES.iter().zip(params.projections()) {
            lens.push((format!("{name}.weight"), p.weight.len()));
            lens.push((format!("{name}.bias"), p.bias.len()));
        }
        let mut at = 0;
        for (name, len) in lens {
            let err = norm_rel_err(&analytic[at..at + len], &numeric[at..at + len]);
            at += len;
            worst = worst.max(err);
            if !(err <= tol) {
                out.fail(|| {
                    let mut r = Reproducer::new(format!(
                        "{name}: relative error {err:e} > {tol:e}, groups {groups}, instance {k}"
                    ));
                    r.tensors.push(("x".into(), x.clone()));
                    r.tensors.push(("dout".into(), dout.clone()));
                    r
                });
            }
        }
    }
    out.summary = format!("max relative error {worst:.2e} (eps {eps:.0e}, tol {tol:.0e})");
    out
}

/// Identity line operators injected into the dense expansion reproduce
/// causal linear attention with `u ↔ Q`, `λ ↔ K`, `x ↔ V` per column.
pub fn linear_attention_reduction(seed: u64, max_tokens: usize, tol: f64) -> Outcome {
    let mut out = Outcome::new("linear-attention");
    let mut rng = rng_for(seed, 6);
    let mut worst = 0.0f64;
    let mut lengths: Vec<usize> = vec![1, 2, 3, 8, 17, 32];
    lengths.push(max_tokens);
    lengths.retain(|&n| n <= max_tokens);
    for n in lengths {
        let width = 2;
        let dims = Dims::new(1, 1, n, width);
        let lam = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let u = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
        let geom = LineGeometry::new(Direction::TopToBottom, n, width);
        let lines = vec![TridiagonalLine::identity(width); n];
        let lam_lines: Vec<Vec<f64>> = (0..n).map(|i| geom.line_values(&lam, 0, 0, i)).collect();
        out.cases += 1;
        let g = match expand_from_lines(&geom, 1, FirstLine::Learned, &lines, &lam_lines) {
            Ok(g) => g,
            Err(e) => {
                out.fail(|| Reproducer::new(format!("expansion failed for N = {n}: {e}")));
                continue;
            }
        };
        let h = g.matvec(x.data());
        for col in 0..width {
            let seq = |t: &Tensor4<f64>| SeqBatch::new(n, 1, (0..n).map(|r| t.get(0, 0, r, col)).collect()).unwrap();
            let la = linear_attention_causal(&seq(&u), &seq(&lam), &seq(&x)).unwrap();
            for r in 0..n {
                let err = (u.get(0, 0, r, col) * h[r * width + col] - la.data()[r]).abs();
                worst = worst.max(err);
                if !(err <= tol) {
                    out.fail(|| {
                        let mut rep = Reproducer::new(format!("N = {n}, column {col}, token {r}: error {err:e}"));
                        rep.tensors.extend([("x".into(), x.clone()), ("lam".into(), lam.clone()), ("u".into(), u.clone())]);
                        rep
                    });
                }
            }
        }
    }
    out.summary = format!("max error {worst:.2e} for N ≤ {max_tokens} (tol {tol:.0e})");
    out
}

/// Merged four-direction affinity has no structural zeros.
pub fn density(seed: u64, sides: &[usize], trials: usize) -> Outcome {
    let mut out = Outcome::new("density");
    let mut rng = rng_for(seed, 7);
    let mut total_zeros = 0;
    for &side in sides {
        for t in 0..trials {
            let dims = Dims::new(1, 1, side, side);
            let gates: [GateField<f64>; 4] = std::array::from_fn(|_| GateField::random(dims, 3.0, &mut rng));
            let merge: [f64; 4] = if t == 0 {
                [0.25; 4]
            } else {
                std::array::from_fn(|_| rng.gen_range(0.01..1.0))
            };
            out.cases += 1;
            match merged_affinity(&gates, merge, 0, 0) {
                Ok(g) => {
                    let z = g.zero_count();
                    total_zeros += z;
                    if z != 0 {
                        out.fail(|| {
                            let mut r = Reproducer::new(format!(
                                "{side}×{side} grid, merge {merge:?}: {z} zero entries"
                            ));
                            for (k, gf) in gates.iter().enumerate() {
                                for (name, t) in [("g1", &gf.g1), ("g2", &gf.g2), ("g3", &gf.g3), ("lam", &gf.lam)] {
                                    r.tensors.push((format!("{}_{name}", Direction::ALL[k].short_name()), t.clone()));
                                }
                            }
                            r
                        });
                    }
                }
                Err(e) => out.fail(|| Reproducer::new(format!("{side}×{side}: {e}"))),
            }
        }
    }
    out.summary = format!("{total_zeros} zero entries over sides {sides:?}");
    out
}

fn scan_line_of(dir: Direction, dims: Dims, h: usize, w: usize) -> usize {
    match dir {
        Direction::TopToBottom => h,
        Direction::BottomToTop => dims.height - 1 - h,
        Direction::LeftToRight => w,
        Direction::RightToLeft => dims.width - 1 - w,
    }
}

/// With `g = 2`, perturbing every input of one group leaves the other
/// group's `h` and `y` bit-identical.
pub fn group_isolation(seed: u64, instances: usize) -> Outcome {
    let mut out = Outcome::new("group-isolation");
    let mut rng = rng_for(seed, 8);
    let mut compared = 0usize;
    for k in 0..instances {
        let dir = Direction::ALL[k % 4];
        let mut dims = Dims::new(rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=9), rng.gen_range(2..=9));
        if dir.scan_len(dims) < 2 {
            dims = Dims::new(dims.batch, dims.channels, 2, 2);
        }
        let cfg = ScanConfig::local(dir, 2);
        let (gates, x) = random_instance(&mut rng, dims, 3.0);
        let ranges = cfg.group_ranges(dims).expect("two lines at least");
        let perturbed = k % 2;
        let mut xp = x.clone();
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for h in 0..dims.height {
                    for w in 0..dims.width {
                        if ranges[perturbed].contains(&scan_line_of(dir, dims, h, w)) {
                            xp.set(b, c, h, w, rng.gen_range(-10.0..10.0));
                        }
                    }
                }
            }
        }
        out.cases += 1;
        let a = scan_forward(&x, &gates, &cfg).expect("dims");
        let p = scan_forward(&xp, &gates, &cfg).expect("dims");
        let mut bad = None;
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for h in 0..dims.height {
                    for w in 0..dims.width {
                        if ranges[perturbed].contains(&scan_line_of(dir, dims, h, w)) {
                            continue;
                        }
                        compared += 1;
                        let same = a.h.get(b, c, h, w).to_bits() == p.h.get(b, c, h, w).to_bits()
                            && a.y.get(b, c, h, w).to_bits() == p.y.get(b, c, h, w).to_bits();
                        if !same && bad.is_none() {
                            bad = Some((b, c, h, w));
                        }
                    }
                }
            }
        }
        if let Some(at) = bad {
            out.fail(|| {
                let mut r = Reproducer::new(format!("{dir:?}, dims {dims}: output at {at:?} changed"))
                    .with_case(&x, &gates);
                r.tensors.push(("x_perturbed".into(), xp.clone()));
                r
            });
        }
    }
    out.summary = format!("{compared} outputs outside the perturbed group compared bitwise");
    out
}

/// Reversal and transpose identities between directions, exactly.
pub fn direction_metamorphism(seed: u64, instances: usize) -> Outcome {
    let mut out = Outcome::new("direction-metamorphism");
    let mut rng = rng_for(seed, 9);
    for _ in 0..instances {
        let dims = Dims::new(1, rng.gen_range(1..=3), rng.gen_range(1..=9), rng.gen_range(1..=9));
        let (gates, x) = random_instance(&mut rng, dims, 3.0);
        let run = |x: &Tensor4<f64>, g: &GateField<f64>, d| scan_forward(x, g, &ScanConfig::global(d)).unwrap();
        let checks = [
            (
                "right-to-left = flip_w ∘ left-to-right ∘ flip_w",
                run(&x, &gates, Direction::RightToLeft).y,
                run(&x.flip_w(), &gates.map_tensors(Tensor4::flip_w), Direction::LeftToRight).y.flip_w(),
            ),
            (
                "top-to-bottom = transpose ∘ left-to-right ∘ transpose",
                run(&x, &gates, Direction::TopToBottom).y,
                run(&x.transpose_hw(), &gates.map_tensors(Tensor4::transpose_hw), Direction::LeftToRight)
                    .y
                    .transpose_hw(),
            ),
            (
                "bottom-to-top = flip_h ∘ top-to-bottom ∘ flip_h",
                run(&x, &gates, Direction::BottomToTop).y,
                run(&x.flip_h(), &gates.map_tensors(Tensor4::flip_h), Direction::TopToBottom).y.flip_h(),
            ),
        ];
        for (name, a, b) in checks {
            out.cases += 1;
            if a != b {
                out.fail(|| Reproducer::new(format!("{name} broken on dims {dims}")).with_case(&x, &gates));
            }
        }
    }
    out.summary = "all identities exact".into();
    out
}

/// Every line of a global top-to-bottom scan obeys
/// `‖h_i‖∞ ≤ Σ_{j≤i} ‖λ_j x_j‖∞`.
pub fn boundedness(seed: u64, instances: usize) -> Outcome {
    let mut out = Outcome::new("boundedness");
    let mut rng = rng_for(seed, 10);
    let mut tightest = f64::INFINITY;
    for _ in 0..instances {
        let dims = Dims::new(1, rng.gen_range(1..=3), rng.gen_range(1..=24), rng.gen_range(1..=16));
        let (gates, x) = random_instance(&mut rng, dims, 6.0);
        let h = scan_forward(&x, &gates, &ScanConfig::global(Direction::TopToBottom)).unwrap().h;
        let inj = x.mul(&gates.lam);
        out.cases += 1;
        for c in 0..dims.channels {
            let mut budget = 0.0;
            for i in 0..dims.height {
                let row_max = |t: &Tensor4<f64>| (0..dims.width).map(|w| t.get(0, c, i, w).abs()).fold(0.0, f64::max);
                budget += row_max(&inj);
                let hm = row_max(&h);
                tightest = tightest.min(budget - hm);
                if hm > budget * (1.0 + 1e-12) {
                    out.fail(|| {
                        Reproducer::new(format!("line {i}, channel {c}: ‖h‖∞ = {hm} exceeds {budget}"))
                            .with_case(&x, &gates)
                    });
                }
            }
        }
    }
    out.summary = format!("smallest slack {tightest:.2e}");
    out
}

/// GSPN-T round trips are bit-exact and malformed files are rejected with
/// distinct errors.
pub fn serialization(seed: u64) -> Outcome {
    let mut out = Outcome::new("serialization");
    let mut rng = rng_for(seed, 11);
    let dims = Dims::new(2, 3, 4, 5);
    let t64 = Tensor4::<f64>::random_uniform(dims, -1e3, 1e3, &mut rng);
    let t32 = Tensor4::<f32>::random_uniform(dims, -1e3, 1e3, &mut rng);
    let b64 = t64.to_bytes().expect("small tensor");
    let b32 = t32.to_bytes().expect("small tensor");
    let mut check = |name: &str, ok: bool| {
        out.cases += 1;
        if !ok {
            out.fail(|| Reproducer::new(name.to_string()));
        }
    };
    check("f64 round trip", Tensor4::<f64>::load(&b64[..]).map(|t| t.to_bytes().ok() == Some(b64.clone())).unwrap_or(false));
    check("f32 round trip", Tensor4::<f32>::load(&b32[..]).map(|t| t.to_bytes().ok() == Some(b32.clone())).unwrap_or(false));
    let mut bad = b64.clone();
    bad[0] = b'X';
    check("bad magic", matches!(AnyTensor::load(&bad[..]), Err(TensorError::BadMagic(_))));
    let mut bad = b64.clone();
    bad[4] = 9;
    check("unknown version", matches!(AnyTensor::load(&bad[..]), Err(TensorError::UnknownVersion(9))));
    check(
        "truncated payload",
        matches!(AnyTensor::load(&b64[..b64.len() - 3]), Err(TensorError::TruncatedPayload { .. })),
    );
    let summary = format!("{} byte f64 and {} byte f32 files", b64.len(), b32.len());
    out.summary = summary;
    out
}

/// Knobs of the default `verify` run.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub sides: Option<Vec<usize>>,
    pub corrupt_normalization: bool,
}

pub const ORACLE_TOL: f64 = 1e-10;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const FD_EPS: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;

pub fn run_suite(cfg: &SuiteConfig) -> Vec<Outcome> {
    let s = cfg.seed;
    vec![
        oracle_equivalence(s, 256, cfg.sides.as_deref(), ORACLE_TOL),
        row_stochastic(s, 60, 100, ROW_SUM_TOL, cfg.corrupt_normalization),
        spectral(s, 100, ROW_SUM_TOL, None).outcome,
        boundedness(s, 40),
        scan_gradients(s, 20, FD_EPS, FD_TOL),
        block_gradients(s, 20, FD_EPS, FD_TOL),
        linear_attention_reduction(s, 64, ORACLE_TOL),
        density(s, &[4, 8], 3),
        group_isolation(s, 40),
        direction_metamorphism(s, 20),
        serialization(s),
    ]
}

/// Fixed-width pass/fail table.
pub fn render_table(outcomes: &[Outcome]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>6}  {:<6} detail", "family", "cases", "result");
    for o in outcomes {
        let _ = writeln!(
            s,
            "{:<24} {:>6}  {:<6} {}",
            o.family,
            o.cases,
            if o.passed { "PASS" } else { "FAIL" },
            o.summary
        );
    }
    s
}
