//! Dense batch × channel × height × width storage.
//!
//! Layout is row-major with the width index varying fastest:
//! `((b * C + c) * H + h) * W + w`. There are no strided views; every
//! reorientation (`flip_w`, `flip_h`, `transpose_hw`) materializes a new
//! tensor.
//!
//! The on-disk container ("GSPN-T") is a 24-byte header followed by the raw
//! little-endian payload:
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `GSPN`                              |
//! | 4      | version, `0x01`                           |
//! | 5      | dtype, `0x00` = f32, `0x01` = f64         |
//! | 6..8   | reserved, zero                            |
//! | 8..24  | `B`, `C`, `H`, `W` as little-endian `u32` |

use std::fmt;
use std::io::{self, Read, Write};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GSPN";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor dims {0} overflow the index arithmetic")]
    Overflow(Dims),
    #[error("data length {actual} does not match dims {dims} (expected {expected})")]
    LengthMismatch {
        dims: Dims,
        expected: usize,
        actual: usize,
    },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown version {0}")]
    UnknownVersion(u8),
    #[error("unknown dtype tag {0:#04x}")]
    UnknownDType(u8),
    #[error("reserved header bytes must be zero, found {0:02x?}")]
    ReservedNonZero([u8; 2]),
    #[error("truncated header: {0} of {HEADER_LEN} bytes")]
    TruncatedHeader(usize),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dtype mismatch: expected {expected}, file holds {found}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("dimension {0} does not fit in a u32 header field")]
    DimTooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, TensorError> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(TensorError::UnknownDType(other)),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Element types a [`Tensor4`] can hold.
pub trait Scalar: Float + FromPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossless for f64 targets, rounding for f32.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite cast")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Element count, or `None` if it does not fit in `usize`.
    pub fn checked_len(&self) -> Option<usize> {
        self.batch
            .checked_mul(self.channels)?
            .checked_mul(self.height)?
            .checked_mul(self.width)
    }

    pub fn len(&self) -> usize {
        self.checked_len().expect("validated dims")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn planes(&self) -> usize {
        self.batch * self.channels
    }

    pub fn transposed(&self) -> Self {
        Self::new(self.batch, self.channels, self.width, self.height)
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Self::new(self.batch, channels, self.height, self.width)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn alloc(dims: Dims, fill: T) -> Result<Self, TensorError> {
        let len = dims.checked_len().ok_or(TensorError::Overflow(dims))?;
        // Byte size must also be addressable.
        len.checked_mul(T::DTYPE.size_of())
            .filter(|&b| b <= isize::MAX as usize)
            .ok_or(TensorError::Overflow(dims))?;
        Ok(Self {
            dims,
            data: vec![fill; len],
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::alloc(dims, T::zero()).expect("zeros: dims overflow")
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = dims.checked_len().ok_or(TensorError::Overflow(dims))?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for h in 0..dims.height {
                    for w in 0..dims.width {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Self { dims, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(dims: Dims, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..dims.len())
            .map(|_| T::lit(rng.gen_range(lo..hi)))
            .collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(b < self.dims.batch && c < self.dims.channels);
        debug_assert!(h < self.dims.height && w < self.dims.width);
        ((b * self.dims.channels + c) * self.dims.height + h) * self.dims.width + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(b, c, h, w);
        self.data[i] = v;
    }

    /// The `H × W` slab for one `(batch, channel)` pair.
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let n = self.dims.plane_len();
        let start = (b * self.dims.channels + c) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let n = self.dims.plane_len();
        let start = (b * self.dims.channels + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape tensors.
    ///
    /// Panics on a shape mismatch.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.dims, other.dims, "zip_map shape mismatch");
        Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |s, &v| s + v)
    }

    /// Reverse the width axis.
    pub fn flip_w(&self) -> Self {
        let w = self.dims.width;
        let mut data = Vec::with_capacity(self.data.len());
        if w > 0 {
            for row in self.data.chunks_exact(w) {
                data.extend(row.iter().rev());
            }
        }
        Self {
            dims: self.dims,
            data,
        }
    }

    /// Reverse the height axis.
    pub fn flip_h(&self) -> Self {
        let (h, w) = (self.dims.height, self.dims.width);
        let mut data = Vec::with_capacity(self.data.len());
        if h > 0 && w > 0 {
            for plane in self.data.chunks_exact(h * w) {
                for row in plane.chunks_exact(w).rev() {
                    data.extend_from_slice(row);
                }
            }
        }
        Self {
            dims: self.dims,
            data,
        }
    }

    /// Swap the height and width axes; output dims are `(B, C, W, H)`.
    pub fn transpose_hw(&self) -> Self {
        const TILE: usize = 32;
        let (h, w) = (self.dims.height, self.dims.width);
        let mut data = vec![T::zero(); self.data.len()];
        if h > 0 && w > 0 {
            for (src, dst) in self
                .data
                .chunks_exact(h * w)
                .zip(data.chunks_exact_mut(h * w))
            {
                for r0 in (0..h).step_by(TILE) {
                    for c0 in (0..w).step_by(TILE) {
                        for r in r0..(r0 + TILE).min(h) {
                            for c in c0..(c0 + TILE).min(w) {
                                dst[c * h + r] = src[r * w + c];
                            }
                        }
                    }
                }
            }
        }
        Self {
            dims: self.dims.transposed(),
            data,
        }
    }

    /// Concatenate same-shaped tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let d = parts[0].dims;
        for p in parts {
            assert_eq!(
                (p.dims.batch, p.dims.height, p.dims.width),
                (d.batch, d.height, d.width),
                "concat_channels shape mismatch"
            );
        }
        let channels = parts.iter().map(|p| p.dims.channels).sum();
        let dims = d.with_channels(channels);
        let mut data = Vec::with_capacity(dims.len());
        let plane = d.plane_len();
        for b in 0..d.batch {
            for p in parts {
                let n = p.dims.channels * plane;
                data.extend_from_slice(&p.data[b * n..(b + 1) * n]);
            }
        }
        Self { dims, data }
    }

    /// Channels `[start, start + count)` as a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.dims.channels, "channel slice out of range");
        let dims = self.dims.with_channels(count);
        let plane = self.dims.plane_len();
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..self.dims.batch {
            let base = (b * self.dims.channels + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Self { dims, data }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * T::DTYPE.size_of());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&[0, 0]);
        for d in self.dims.as_array() {
            let d32 = u32::try_from(d).map_err(|_| TensorError::DimTooLarge(d))?;
            out.extend_from_slice(&d32.to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), TensorError> {
        sink.write_all(&self.to_bytes()?)?;
        sink.flush()?;
        Ok(())
    }

    /// Read a tensor of this element type; a file holding the other dtype is
    /// rejected with [`TensorError::DTypeMismatch`].
    pub fn load<R: Read>(source: R) -> Result<Self, TensorError> {
        match AnyTensor::load(source)? {
            AnyTensor::F32(t) => t.into_dtype(),
            AnyTensor::F64(t) => t.into_dtype(),
        }
    }

    fn into_dtype<U: Scalar>(self) -> Result<Tensor4<U>, TensorError> {
        if T::DTYPE != U::DTYPE {
            return Err(TensorError::DTypeMismatch {
                expected: U::DTYPE,
                found: T::DTYPE,
            });
        }
        // Same dtype, so the cast is the identity.
        Ok(self.cast())
    }
}

/// A tensor of either element type, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor4<f32>),
    F64(Tensor4<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> Dims {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Tensor4<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, TensorError> {
        let mut header = [0u8; HEADER_LEN];
        let got = read_fully(&mut source, &mut header)?;
        if got < 4 || header[0..4] != MAGIC {
            let mut m = [0u8; 4];
            m[..got.min(4)].copy_from_slice(&header[..got.min(4)]);
            if got >= 4 {
                return Err(TensorError::BadMagic(m));
            }
            return Err(TensorError::TruncatedHeader(got));
        }
        if got < HEADER_LEN {
            return Err(TensorError::TruncatedHeader(got));
        }
        if header[4] != VERSION {
            return Err(TensorError::UnknownVersion(header[4]));
        }
        let dtype = DType::from_tag(header[5])?;
        if header[6..8] != [0, 0] {
            return Err(TensorError::ReservedNonZero([header[6], header[7]]));
        }
        let mut d = [0usize; 4];
        for (i, slot) in d.iter_mut().enumerate() {
            let off = 8 + 4 * i;
            *slot = u32::from_le_bytes(header[off..off + 4].try_into().unwrap()) as usize;
        }
        let dims = Dims::new(d[0], d[1], d[2], d[3]);
        let expected = dims
            .checked_len()
            .and_then(|n| n.checked_mul(dtype.size_of()))
            .ok_or(TensorError::Overflow(dims))?;

        let mut payload = Vec::new();
        source.read_to_end(&mut payload)?;
        if payload.len() < expected {
            return Err(TensorError::TruncatedPayload {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(TensorError::TrailingBytes(payload.len() - expected));
        }
        Ok(match dtype {
            DType::F32 => AnyTensor::F32(decode(dims, &payload)),
            DType::F64 => AnyTensor::F64(decode(dims, &payload)),
        })
    }
}

fn decode<T: Scalar>(dims: Dims, payload: &[u8]) -> Tensor4<T> {
    let data = payload
        .chunks_exact(T::DTYPE.size_of())
        .map(T::read_le)
        .collect();
    Tensor4 { dims, data }
}

fn read_fully<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
