//! The full propagation module: a shared 1×1 reduction, three 1×1
//! projections producing `u`, `λ` and the gate pre-activations, one scan per
//! direction, and a learnable 1×1 merge over the concatenated directional
//! outputs.
//!
//! ```text
//! z        = reduce(x)                     C   → C_r
//! u, λ     = proj_u(z), proj_lam(z)        C_r → C
//! gates    = proj_w(z)                     C_r → 4 · 3 · C
//! y_d      = u ⊙ scan_d(x; λ, gates_d)
//! out      = merge(concat(y_ltr, y_rtl, y_ttb, y_btt))   4C → C
//! ```
//!
//! There is no positional term anywhere: spatial structure comes only from
//! the scans.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::propagation::{scan_backward, scan_forward, Direction, GateField, ScanConfig, ScanOutput};
use crate::tensor::{DType, Dims, Tensor4};

/// `u` multiplies each directional hidden state before the merge.
pub const MODULATE_BEFORE_MERGE: bool = true;

/// Reduced width of the shared projection: `C / 4`, at least one.
pub fn reduced_channels(channels: usize) -> usize {
    (channels / 4).max(1)
}

/// Pointwise (1×1) channel-mixing projection: `y[o] = b[o] + Σ_i W[o, i] x[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±1/√in_dim`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn w(&self, o: usize, i: usize) -> f64 {
        self.weight[o * self.in_dim + i]
    }

    pub fn forward(&self, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        let d = x.dims();
        if d.channels != self.in_dim {
            return Err(Error::Shape {
                what: "projection input",
                expected: d.with_channels(self.in_dim),
                actual: d,
            });
        }
        let plane = d.plane_len();
        let od = d.with_channels(self.out_dim);
        let mut out = Tensor4::zeros(od);
        for b in 0..d.batch {
            for o in 0..self.out_dim {
                let dst = out.plane_mut(b, o);
                dst.fill(self.bias[o]);
                for i in 0..self.in_dim {
                    let w = self.w(o, i);
                    let src = &x.data()[(b * d.channels + i) * plane..][..plane];
                    for (y, &v) in dst.iter_mut().zip(src) {
                        *y += w * v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parameter gradients and input gradient for upstream `dy`.
    pub fn backward(&self, x: &Tensor4<f64>, dy: &Tensor4<f64>) -> (Projection, Tensor4<f64>) {
        let d = x.dims();
        let plane = d.plane_len();
        let mut grad = Projection::zeros(self.in_dim, self.out_dim);
        let mut dx = Tensor4::zeros(d);
        for b in 0..d.batch {
            for o in 0..self.out_dim {
                let g = dy.plane(b, o);
                grad.bias[o] += g.iter().sum::<f64>();
                for i in 0..self.in_dim {
                    let xi = x.plane(b, i);
                    grad.weight[o * self.in_dim + i] +=
                        g.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
                    let w = self.w(o, i);
                    let dst = &mut dx.data_mut()[(b * d.channels + i) * plane..][..plane];
                    for (t, &gv) in dst.iter_mut().zip(g) {
                        *t += w * gv;
                    }
                }
            }
        }
        (grad, dx)
    }

    fn axpy(&mut self, alpha: f64, other: &Projection) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += alpha * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += alpha * b;
        }
    }

    pub fn weight_tensor(&self) -> Tensor4<f64> {
        Tensor4::from_vec(Dims::new(1, 1, self.out_dim, self.in_dim), self.weight.clone())
            .expect("weight dims")
    }

    pub fn bias_tensor(&self) -> Tensor4<f64> {
        Tensor4::from_vec(Dims::new(1, 1, 1, self.out_dim), self.bias.clone()).expect("bias dims")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GspnBlockParams {
    pub channels: usize,
    pub reduced: usize,
    pub reduce: Projection,
    pub proj_u: Projection,
    pub proj_lam: Projection,
    /// Output channel `d·3C + k·C + c` is gate `k` of direction `d` for
    /// channel `c`, directions in [`Direction::ALL`] order.
    pub proj_w: Projection,
    /// Input channel `d·C + c` is `y_d` of channel `c`.
    pub merge: Projection,
}

pub const PARAM_NAMES: [&str; 5] = ["reduce", "proj_u", "proj_lam", "proj_w", "merge"];

impl GspnBlockParams {
    pub fn zeros(channels: usize) -> Self {
        Self::zeros_with_reduced(channels, reduced_channels(channels))
    }

    pub fn zeros_with_reduced(channels: usize, r: usize) -> Self {
        Self {
            channels,
            reduced: r,
            reduce: Projection::zeros(channels, r),
            proj_u: Projection::zeros(r, channels),
            proj_lam: Projection::zeros(r, channels),
            proj_w: Projection::zeros(r, 12 * channels),
            merge: Projection::zeros(4 * channels, channels),
        }
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::init_with_reduced(channels, reduced_channels(channels), rng)
    }

    /// As [`GspnBlockParams::init`] with an explicit reduced width.
    pub fn init_with_reduced<R: Rng + ?Sized>(channels: usize, r: usize, rng: &mut R) -> Self {
        Self {
            channels,
            reduced: r,
            reduce: Projection::init(channels, r, rng),
            proj_u: Projection::init(r, channels, rng),
            proj_lam: Projection::init(r, channels, rng),
            proj_w: Projection::init(r, 12 * channels, rng),
            merge: Projection::init(4 * channels, channels, rng),
        }
    }

    pub fn projections(&self) -> [&Projection; 5] {
        [
            &self.reduce,
            &self.proj_u,
            &self.proj_lam,
            &self.proj_w,
            &self.merge,
        ]
    }

    pub fn projections_mut(&mut self) -> [&mut Projection; 5] {
        [
            &mut self.reduce,
            &mut self.proj_u,
            &mut self.proj_lam,
            &mut self.proj_w,
            &mut self.merge,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.projections()
            .iter()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// All parameters, projection by projection, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for p in self.projections() {
            v.extend_from_slice(&p.weight);
            v.extend_from_slice(&p.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        for p in self.projections_mut() {
            let n = p.weight.len();
            p.weight.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = p.bias.len();
            p.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &GspnBlockParams) {
        for (a, b) in self.projections_mut().into_iter().zip(other.projections()) {
            a.axpy(alpha, b);
        }
    }

    /// Merge weight of direction `d` onto output channel `c` from input
    /// channel `c`.
    pub fn merge_weight(&self, d: usize, c: usize) -> f64 {
        self.merge.w(c, d * self.channels + c)
    }

    /// Write one GSPN-T file per weight and bias plus `manifest.txt`, whose
    /// lines read `name B,C,H,W dtype`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (name, p) in PARAM_NAMES.iter().zip(self.projections()) {
            for (suffix, t) in [("weight", p.weight_tensor()), ("bias", p.bias_tensor())] {
                let full = format!("{name}.{suffix}");
                let d = t.dims();
                writeln!(
                    manifest,
                    "{full} {},{},{},{} {}",
                    d.batch,
                    d.channels,
                    d.height,
                    d.width,
                    DType::F64
                )
                .expect("string write");
                let f = fs::File::create(dir.join(format!("{full}.gspn")))?;
                t.save(BufWriter::new(f))?;
            }
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut entries = std::collections::HashMap::new();
        for (lineno, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Checkpoint(format!(
                    "manifest line {}: expected `name dims dtype`",
                    lineno + 1
                )));
            }
            let dims: Vec<usize> = fields[1]
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Checkpoint(format!("manifest line {}: {e}", lineno + 1)))?;
            if dims.len() != 4 {
                return Err(Error::Checkpoint(format!(
                    "manifest line {}: dims need four fields",
                    lineno + 1
                )));
            }
            if fields[2] != DType::F64.to_string() {
                return Err(Error::Checkpoint(format!(
                    "manifest line {}: unsupported dtype {}",
                    lineno + 1,
                    fields[2]
                )));
            }
            let t: Tensor4<f64> = Tensor4::load(fs::File::open(dir.join(format!("{}.gspn", fields[0])))?)?;
            let want = Dims::new(dims[0], dims[1], dims[2], dims[3]);
            if t.dims() != want {
                return Err(Error::Checkpoint(format!(
                    "{} holds dims {}, manifest says {want}",
                    fields[0],
                    t.dims()
                )));
            }
            entries.insert(fields[0].to_string(), t);
        }
        let mut take = |name: &str| {
            entries
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let mut projs = Vec::with_capacity(5);
        for name in PARAM_NAMES {
            let w = take(&format!("{name}.weight"))?;
            let b = take(&format!("{name}.bias"))?;
            let (out_dim, in_dim) = (w.dims().height, w.dims().width);
            if b.len() != out_dim {
                return Err(Error::Checkpoint(format!(
                    "{name}: bias length {} for {out_dim} outputs",
                    b.len()
                )));
            }
            projs.push(Projection {
                in_dim,
                out_dim,
                weight: w.into_vec(),
                bias: b.into_vec(),
            });
        }
        let merge = projs.pop().unwrap();
        let proj_w = projs.pop().unwrap();
        let proj_lam = projs.pop().unwrap();
        let proj_u = projs.pop().unwrap();
        let reduce = projs.pop().unwrap();
        let channels = reduce.in_dim;
        let reduced = reduce.out_dim;
        let consistent = proj_u.in_dim == reduced
            && proj_u.out_dim == channels
            && proj_lam.in_dim == reduced
            && proj_lam.out_dim == channels
            && proj_w.in_dim == reduced
            && proj_w.out_dim == 12 * channels
            && merge.in_dim == 4 * channels
            && merge.out_dim == channels;
        if !consistent {
            return Err(Error::Checkpoint(
                "projection shapes are inconsistent with each other".into(),
            ));
        }
        Ok(Self {
            channels,
            reduced,
            reduce,
            proj_u,
            proj_lam,
            proj_w,
            merge,
        })
    }
}

/// Forward intermediates kept for [`block_backward`].
#[derive(Debug, Clone)]
pub struct BlockCache {
    pub x: Tensor4<f64>,
    pub z: Tensor4<f64>,
    pub groups: usize,
    /// Per direction; `u` and `λ` are shared copies.
    pub gates: [GateField<f64>; 4],
    pub scans: [ScanOutput<f64>; 4],
    pub y_cat: Tensor4<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockGradients {
    pub dx: Tensor4<f64>,
    pub dparams: GspnBlockParams,
}

/// `u`, `λ` and per-direction gate fields generated from `x`.
pub fn generate_gates(
    x: &Tensor4<f64>,
    params: &GspnBlockParams,
) -> Result<(Tensor4<f64>, [GateField<f64>; 4])> {
    let c = params.channels;
    let z = params.reduce.forward(x)?;
    let u = params.proj_u.forward(&z)?;
    let lam = params.proj_lam.forward(&z)?;
    let graw = params.proj_w.forward(&z)?;
    let gates = std::array::from_fn(|d| {
        let base = d * 3 * c;
        GateField {
            g1: graw.slice_channels(base, c),
            g2: graw.slice_channels(base + c, c),
            g3: graw.slice_channels(base + 2 * c, c),
            lam: lam.clone(),
            u: u.clone(),
        }
    });
    Ok((z, gates))
}

pub fn block_forward_cached(
    x: &Tensor4<f64>,
    params: &GspnBlockParams,
    groups: usize,
) -> Result<(Tensor4<f64>, BlockCache)> {
    let (z, gates) = generate_gates(x, params)?;
    let mut scans = Vec::with_capacity(4);
    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        scans.push(scan_forward(x, &gates[d], &ScanConfig::local(dir, groups))?);
    }
    let scans: [ScanOutput<f64>; 4] = scans.try_into().unwrap_or_else(|_| unreachable!());
    let y_cat = Tensor4::concat_channels(&[&scans[0].y, &scans[1].y, &scans[2].y, &scans[3].y]);
    let out = params.merge.forward(&y_cat)?;
    Ok((
        out,
        BlockCache {
            x: x.clone(),
            z,
            groups,
            gates,
            scans,
            y_cat,
        },
    ))
}

pub fn block_forward(x: &Tensor4<f64>, params: &GspnBlockParams, groups: usize) -> Result<Tensor4<f64>> {
    Ok(block_forward_cached(x, params, groups)?.0)
}

pub fn block_backward(
    params: &GspnBlockParams,
    cache: &BlockCache,
    dout: &Tensor4<f64>,
) -> Result<BlockGradients> {
    let c = params.channels;
    let xd = cache.x.dims();
    crate::error::check_dims("dout", xd, dout.dims())?;
    let mut grads = GspnBlockParams::zeros_with_reduced(c, params.reduced);

    let (dmerge, dy_cat) = params.merge.backward(&cache.y_cat, dout);
    grads.merge = dmerge;

    let mut dx = Tensor4::zeros(xd);
    let mut du = Tensor4::zeros(xd);
    let mut dlam = Tensor4::zeros(xd);
    let mut dgate_parts = Vec::with_capacity(12);
    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        let dy = dy_cat.slice_channels(d * c, c);
        let g = scan_backward(
            &cache.x,
            &cache.gates[d],
            &ScanConfig::local(dir, cache.groups),
            &cache.scans[d].h,
            &dy,
        )?;
        dx.add_assign(&g.dx);
        du.add_assign(&g.du);
        dlam.add_assign(&g.dlam);
        dgate_parts.extend([g.dg1, g.dg2, g.dg3]);
    }
    let refs: Vec<&Tensor4<f64>> = dgate_parts.iter().collect();
    let dgraw = Tensor4::concat_channels(&refs);

    let (gu, dz_u) = params.proj_u.backward(&cache.z, &du);
    let (gl, dz_l) = params.proj_lam.backward(&cache.z, &dlam);
    let (gw, dz_w) = params.proj_w.backward(&cache.z, &dgraw);
    grads.proj_u = gu;
    grads.proj_lam = gl;
    grads.proj_w = gw;
    let mut dz = dz_u;
    dz.add_assign(&dz_l);
    dz.add_assign(&dz_w);
    let (gr, dx_reduce) = params.reduce.backward(&cache.x, &dz);
    grads.reduce = gr;
    dx.add_assign(&dx_reduce);
    Ok(BlockGradients { dx, dparams: grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::random_uniform(Dims::new(2, 4, 5, 6), -1.0, 1.0, &mut rng);
        let out = block_forward(&x, &GspnBlockParams::zeros(4), 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merge_selector_returns_one_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 3;
        let mut p = GspnBlockParams::init(c, &mut rng);
        p.merge = Projection::zeros(4 * c, c);
        let dsel = 2; // top-to-bottom
        for ch in 0..c {
            p.merge.weight[ch * 4 * c + dsel * c + ch] = 1.0;
        }
        let x = Tensor4::random_uniform(Dims::new(1, c, 5, 4), -1.0, 1.0, &mut rng);
        let (out, cache) = block_forward_cached(&x, &p, 1).unwrap();
        assert_eq!(out, cache.scans[dsel].y);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GspnBlockParams::init(4, &mut rng);
        let x = Tensor4::random_uniform(Dims::new(1, 4, 4, 4), -1.0, 1.0, &mut rng);
        let (_, cache) = block_forward_cached(&x, &p, 2).unwrap();
        let g = block_backward(&p, &cache, &Tensor4::zeros(x.dims())).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.dparams.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let p = GspnBlockParams::zeros(4);
        let x = Tensor4::<f64>::zeros(Dims::new(1, 3, 4, 4));
        assert!(matches!(block_forward(&x, &p, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn reduced_width() {
        assert_eq!(reduced_channels(1), 1);
        assert_eq!(reduced_channels(4), 1);
        assert_eq!(reduced_channels(9), 2);
        assert_eq!(reduced_channels(64), 16);
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GspnBlockParams::init(4, &mut rng);
        let mut q = GspnBlockParams::zeros(4);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GspnBlockParams::init(8, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        p.save_checkpoint(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().count(), 10);
        assert!(manifest.contains("proj_w.weight 1,1,96,2 f64"));
        assert_eq!(GspnBlockParams::load_checkpoint(dir.path()).unwrap(), p);

        fs::remove_file(dir.path().join("merge.bias.gspn")).unwrap();
        assert!(GspnBlockParams::load_checkpoint(dir.path()).is_err());
    }
}
