//! Runtime scaling of the four mechanisms on square grids.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use gspn::attention::{linear_attention_causal, softmax_attention, softmax_score_bytes, SeqBatch};
use gspn::{scan_all_directions, Dims, GateField, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WARMUPS: usize = 2;

/// Softmax runs whose score matrix would exceed this many bytes are
/// recorded as skipped.
pub const SOFTMAX_SCORE_BUDGET: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    GspnGlobal,
    GspnLocal,
    Softmax,
    Linear,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::GspnGlobal,
        Mechanism::GspnLocal,
        Mechanism::Softmax,
        Mechanism::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::GspnGlobal => "gspn-global",
            Mechanism::GspnLocal => "gspn-local",
            Mechanism::Softmax => "softmax",
            Mechanism::Linear => "linear",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mechanism `{s}` (expected gspn-global, gspn-local, softmax or linear)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub side: usize,
    pub tokens: usize,
    pub channels: usize,
    /// Scan groups; `None` for the attention baselines.
    pub groups: Option<usize>,
    pub repeats: usize,
    /// `None` when the run was skipped by the memory guard.
    pub median_seconds: Option<f64>,
}

impl BenchRecord {
    pub fn tokens_per_second(&self) -> Option<f64> {
        self.median_seconds.map(|s| self.tokens as f64 / s)
    }
}

pub const CSV_HEADER: &str = "mechanism,side,N,channels,g,repeats,median_seconds";

pub fn write_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        let g = r.groups.map(|g| g.to_string()).unwrap_or_default();
        let t = r
            .median_seconds
            .map(|s| format!("{s:.9}"))
            .unwrap_or_else(|| "skipped".into());
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.mechanism, r.side, r.tokens, r.channels, g, r.repeats, t
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mechanisms: Vec<Mechanism>,
    pub sides: Vec<usize>,
    pub channels: usize,
    pub repeats: usize,
    pub groups: usize,
    pub seed: u64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of `repeats` calls after [`WARMUPS`] discarded ones.
pub fn time_median(repeats: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..WARMUPS {
        f();
    }
    let samples = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(samples)
}

struct GspnInputs {
    x: Tensor4<f32>,
    gates: [GateField<f32>; 4],
}

fn gspn_inputs(side: usize, channels: usize, seed: u64) -> GspnInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(1, channels, side, side);
    let x = Tensor4::random_uniform(dims, -1.0, 1.0, &mut rng);
    let gates = std::array::from_fn(|_| GateField::random(dims, 2.0, &mut rng));
    GspnInputs { x, gates }
}

fn qkv(tokens: usize, dim: usize, seed: u64) -> [SeqBatch<f32>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| SeqBatch::random(tokens, dim, &mut rng))
}

/// Times one mechanism at one side. GSPN runs all four directional scans
/// over `1 × channels × side × side`; the attention baselines run one head
/// over `side²` tokens of width `channels`.
pub fn run_one(m: Mechanism, side: usize, cfg: &BenchConfig) -> BenchRecord {
    let tokens = side * side;
    let groups = match m {
        Mechanism::GspnGlobal => Some(1),
        Mechanism::GspnLocal => Some(cfg.groups),
        _ => None,
    };
    let median_seconds = match m {
        Mechanism::GspnGlobal | Mechanism::GspnLocal => {
            let inp = gspn_inputs(side, cfg.channels, cfg.seed);
            let g = groups.unwrap_or(1);
            Some(time_median(cfg.repeats, || {
                black_box(scan_all_directions(&inp.x, &inp.gates, g).expect("valid groups"));
            }))
        }
        Mechanism::Softmax => {
            let fits = softmax_score_bytes::<f32>(tokens).is_some_and(|b| b <= SOFTMAX_SCORE_BUDGET);
            fits.then(|| {
                let [q, k, v] = qkv(tokens, cfg.channels, cfg.seed);
                time_median(cfg.repeats, || {
                    black_box(softmax_attention(&q, &k, &v).expect("matching shapes"));
                })
            })
        }
        Mechanism::Linear => {
            let [q, k, v] = qkv(tokens, cfg.channels, cfg.seed);
            Some(time_median(cfg.repeats, || {
                black_box(linear_attention_causal(&q, &k, &v).expect("matching shapes"));
            }))
        }
    };
    BenchRecord {
        mechanism: m,
        side,
        tokens,
        channels: cfg.channels,
        groups,
        repeats: cfg.repeats,
        median_seconds,
    }
}

/// Least-squares slope of `ln t` against `ln N` over the timed records;
/// `None` with fewer than two.
pub fn loglog_slope(records: &[BenchRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.median_seconds.map(|t| ((r.tokens as f64).ln(), t.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs every (mechanism, side) pair, reporting progress through `log`.
pub fn run_bench(cfg: &BenchConfig, mut log: impl FnMut(&BenchRecord)) -> Vec<BenchRecord> {
    let mut out = Vec::new();
    for &m in &cfg.mechanisms {
        for &side in &cfg.sides {
            let r = run_one(m, side, cfg);
            log(&r);
            out.push(r);
        }
    }
    out
}

/// Alternates global and local runs at one side so slow drift in machine
/// load hits both equally; returns `(global, local)` medians.
pub fn local_vs_global(side: usize, cfg: &BenchConfig) -> (f64, f64) {
    let inp = gspn_inputs(side, cfg.channels, cfg.seed);
    let run = |g: usize| {
        let t = Instant::now();
        black_box(scan_all_directions(&inp.x, &inp.gates, g).expect("valid groups"));
        t.elapsed().as_secs_f64()
    };
    for _ in 0..WARMUPS {
        run(1);
        run(cfg.groups);
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..cfg.repeats.max(1) {
        if i % 2 == 0 {
            a.push(run(1));
            b.push(run(cfg.groups));
        } else {
            b.push(run(cfg.groups));
            a.push(run(1));
        }
    }
    (median(a), median(b))
}
