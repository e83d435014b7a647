//! Query-row heatmaps of the per-direction and merged affinity matrices.

use std::io::Write;
use std::path::{Path, PathBuf};

use gspn::block::{generate_gates, GspnBlockParams};
use gspn::oracle::{expand_dense_g, merged_affinity, MAX_PIXELS};
use gspn::{Direction, GateField, ScanConfig, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

/// Where the gate fields and merge weights come from.
#[derive(Debug, Clone)]
pub enum GateSource {
    /// Generated from the input by a saved block.
    Params(PathBuf),
    /// Random gates and positive random merge weights.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct Heatmaps {
    pub height: usize,
    pub width: usize,
    /// `ltr`, `rtl`, `ttb`, `btt`, `merged`, each row-major `H × W`.
    pub maps: Vec<(&'static str, Vec<f64>)>,
}

/// Gates and merge weights for plane `(0, channel)` of `x`.
fn gates_for(
    x: &Tensor4<f64>,
    source: &GateSource,
    channel: usize,
) -> Result<([GateField<f64>; 4], [f64; 4]), CliError> {
    let d = x.dims();
    match source {
        GateSource::Params(dir) => {
            let params = GspnBlockParams::load_checkpoint(dir)?;
            if params.channels != d.channels {
                return Err(CliError::Usage(format!(
                    "checkpoint expects {} channels, input has {}",
                    params.channels, d.channels
                )));
            }
            let (_, gates) = generate_gates(x, &params)?;
            Ok((gates, std::array::from_fn(|k| params.merge_weight(k, channel))))
        }
        GateSource::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let gates = std::array::from_fn(|_| GateField::random(d, 2.0, &mut rng));
            Ok((gates, std::array::from_fn(|_| rng.gen_range(0.25..1.0))))
        }
    }
}

/// Affinity rows of pixel `query` in sample 0, channel `channel`. `u` scales
/// a whole query row by one number, so it is left out.
pub fn compute(
    x: &Tensor4<f64>,
    query: (usize, usize),
    source: &GateSource,
    channel: usize,
) -> Result<Heatmaps, CliError> {
    let d = x.dims();
    if d.batch == 0 || d.height == 0 || d.width == 0 {
        return Err(CliError::Usage(format!("input tensor {d} is empty")));
    }
    if d.height * d.width > MAX_PIXELS {
        return Err(CliError::Usage(format!(
            "{}×{} grid exceeds the {MAX_PIXELS}-pixel oracle limit",
            d.height, d.width
        )));
    }
    if query.0 >= d.height || query.1 >= d.width {
        return Err(CliError::Usage(format!(
            "query ({},{}) lies outside the {}×{} grid",
            query.0, query.1, d.height, d.width
        )));
    }
    if channel >= d.channels {
        return Err(CliError::Usage(format!("channel {channel} out of range for {} channels", d.channels)));
    }
    let (gates, merge) = gates_for(x, source, channel)?;
    let mut maps = Vec::with_capacity(5);
    for (k, dir) in Direction::ALL.into_iter().enumerate() {
        let g = expand_dense_g(&gates[k], &ScanConfig::global(dir), 0, channel)?;
        maps.push((dir.short_name(), g.query_map(query.0, query.1)));
    }
    let merged = merged_affinity(&gates, merge, 0, channel)?;
    maps.push(("merged", merged.query_map(query.0, query.1)));
    Ok(Heatmaps {
        height: d.height,
        width: d.width,
        maps,
    })
}

/// `⌈255·|a| / max|a|⌉`: exact zeros stay 0 and every non-zero weight is
/// visible as at least 1.
pub fn intensities(values: &[f64]) -> Vec<u8> {
    let mx = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .iter()
        .map(|v| {
            if mx == 0.0 || *v == 0.0 {
                0
            } else {
                (255.0 * v.abs() / mx).ceil().clamp(1.0, 255.0) as u8
            }
        })
        .collect()
}

/// Binary P5 with maxval 255.
pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)
}

/// Writes `<prefix>_<name>.pgm` for every map and returns the paths.
pub fn write_all(maps: &Heatmaps, prefix: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::with_capacity(maps.maps.len());
    for (name, values) in &maps.maps {
        let mut file_name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        file_name.push(format!("_{name}.pgm"));
        let path = prefix.with_file_name(file_name);
        let f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write_pgm(f, maps.width, maps.height, &intensities(values))?;
        paths.push(path);
    }
    Ok(paths)
}
