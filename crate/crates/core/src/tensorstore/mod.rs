//! Compressed tensor containers.
//!
//! Both containers split every element into an exponent, which is ANS-coded
//! as a whole tensor, and a signed mantissa stored as packed bits. The
//! lossless container keeps all 7 mantissa bits (one byte per element). The
//! lossy one first normalises each block of `B` contiguous elements by a
//! coefficient taken from the block's largest-magnitude element, then rounds
//! mantissas to `k ∈ {0, 1, 3}` bits.

mod format;

pub use format::{read_bft, read_nzt, write_bft, write_nzt, NZT_MAGIC, NZT_VERSION};

use crate::ans::{self, AnsStream, FrequencyTable, TABLE_BYTES};
use crate::bitfloat::{self, check_precision, merge_unchecked, round_value, Bf16, MANT_BITS};
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_BLOCK_SIZE: usize = 512;
pub const LOSSLESS_PRECISION: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    shape: Vec<u64>,
}

impl TensorMeta {
    pub fn new(shape: Vec<u64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("rank {} not supported", shape.len())));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= usize::MAX as u64 / 2)
            .ok_or_else(|| Error::Shape(format!("element count of {shape:?} overflows")))?;
        Ok(Self { shape })
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product::<u64>() as usize
    }
}

/// A dense BF16 tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bf16Tensor {
    meta: TensorMeta,
    data: Vec<Bf16>,
}

impl Bf16Tensor {
    pub fn new(shape: Vec<u64>, data: Vec<Bf16>) -> Result<Self> {
        let meta = TensorMeta::new(shape)?;
        if meta.element_count() != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                meta.shape,
                meta.element_count(),
                data.len()
            )));
        }
        Ok(Self { meta, data })
    }

    pub fn from_vec(data: Vec<Bf16>) -> Result<Self> {
        Self::new(vec![data.len() as u64], data)
    }

    pub fn meta(&self) -> &TensorMeta {
        &self.meta
    }

    pub fn shape(&self) -> &[u64] {
        &self.meta.shape
    }

    pub fn data(&self) -> &[Bf16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Bf16> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Byte accounting of a serialised container. Components sum to the file size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub exponent_bytes: usize,
    pub mantissa_bytes: usize,
    pub scale_bytes: usize,
    pub table_bytes: usize,
    pub header_bytes: usize,
}

impl Footprint {
    pub fn total(&self) -> usize {
        self.exponent_bytes + self.mantissa_bytes + self.scale_bytes + self.table_bytes + self.header_bytes
    }
}

fn header_bytes(ndim: usize) -> usize {
    // magic, version, precision, block size, ndim, shape,
    // scales_len, exp_len, signmant_len, crc
    4 + 1 + 1 + 4 + 1 + 8 * ndim + 4 + 8 + 8 + 4
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LosslessBlob {
    pub meta: TensorMeta,
    pub exp_stream: AnsStream,
    /// `sign << 7 | mantissa`, one byte per element.
    pub signmant: Vec<u8>,
}

impl LosslessBlob {
    pub fn table(&self) -> &FrequencyTable {
        &self.exp_stream.table
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            exponent_bytes: self.exp_stream.encoded_len(),
            mantissa_bytes: self.signmant.len(),
            scale_bytes: 0,
            table_bytes: TABLE_BYTES,
            header_bytes: header_bytes(self.meta.shape.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossyBlob {
    pub meta: TensorMeta,
    pub precision: u8,
    pub block_size: usize,
    /// Raw 7-bit mantissa of each block's largest element; the block
    /// coefficient is `1 + scale / 128`.
    pub scales: Vec<u8>,
    pub exp_stream: AnsStream,
    /// Packed `(k + 1)`-bit signed mantissas.
    pub signmant: Vec<u8>,
}

impl LossyBlob {
    pub fn table(&self) -> &FrequencyTable {
        &self.exp_stream.table
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            exponent_bytes: self.exp_stream.encoded_len(),
            mantissa_bytes: self.signmant.len(),
            scale_bytes: self.scales.len(),
            table_bytes: TABLE_BYTES,
            header_bytes: header_bytes(self.meta.shape.len()),
        }
    }
}

/// Either container, as stored in an NZT file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Blob {
    Lossless(LosslessBlob),
    Lossy(LossyBlob),
}

impl Blob {
    pub fn meta(&self) -> &TensorMeta {
        match self {
            Blob::Lossless(b) => &b.meta,
            Blob::Lossy(b) => &b.meta,
        }
    }

    pub fn precision(&self) -> u8 {
        match self {
            Blob::Lossless(_) => LOSSLESS_PRECISION,
            Blob::Lossy(b) => b.precision,
        }
    }

    pub fn footprint(&self) -> Footprint {
        match self {
            Blob::Lossless(b) => b.footprint(),
            Blob::Lossy(b) => b.footprint(),
        }
    }

    pub fn decompress(&self) -> Result<Bf16Tensor> {
        match self {
            Blob::Lossless(b) => decompress_lossless(b),
            Blob::Lossy(b) => decompress_lossy(b),
        }
    }
}

pub fn footprint(blob: &Blob) -> Footprint {
    blob.footprint()
}

/// Precision 7 takes the lossless path; 0, 1 and 3 the lossy one.
pub fn compress(tensor: &Bf16Tensor, precision: u8, block_size: usize) -> Result<Blob> {
    check_precision(precision)?;
    if precision == LOSSLESS_PRECISION {
        compress_lossless(tensor).map(Blob::Lossless)
    } else {
        compress_lossy(tensor, precision, block_size).map(Blob::Lossy)
    }
}

const GROUP: usize = 1 << 16;

pub fn compress_lossless(tensor: &Bf16Tensor) -> Result<LosslessBlob> {
    let values = tensor.data();
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let parts = par::map_chunks(values, GROUP, |_, c| {
        let exps: Vec<u8> = c.iter().map(|v| v.exponent()).collect();
        let sm: Vec<u8> = c.iter().map(|v| (v.sign() << 7) | v.mantissa()).collect();
        (exps, sm)
    });
    let mut exps = Vec::with_capacity(values.len());
    let mut signmant = Vec::with_capacity(values.len());
    for (e, s) in parts {
        exps.extend_from_slice(&e);
        signmant.extend_from_slice(&s);
    }
    let table = ans::table_for(&exps)?;
    let exp_stream = ans::encode(&exps, &table)?;
    Ok(LosslessBlob {
        meta: tensor.meta().clone(),
        exp_stream,
        signmant,
    })
}

pub fn decompress_lossless(blob: &LosslessBlob) -> Result<Bf16Tensor> {
    let n = blob.meta.element_count();
    check_lengths(n, blob.exp_stream.symbol_count(), blob.signmant.len(), n)?;
    let exps = ans::decode(&blob.exp_stream)?;
    let mut data = vec![Bf16::ZERO; n];
    par::for_each_chunk_mut(&mut data, GROUP, |g, out| {
        let base = g * GROUP;
        for (i, o) in out.iter_mut().enumerate() {
            let sm = blob.signmant[base + i];
            *o = merge_unchecked(sm >> 7, exps[base + i], sm & 0x7F);
        }
    });
    Bf16Tensor::new(blob.meta.shape.clone(), data)
}

fn check_lengths(n: usize, symbols: u64, signmant: usize, expected_signmant: usize) -> Result<()> {
    if symbols != n as u64 {
        return Err(Error::Malformed(format!(
            "exponent stream holds {symbols} symbols, tensor has {n} elements"
        )));
    }
    if signmant != expected_signmant {
        return Err(Error::Malformed(format!(
            "sign/mantissa payload is {signmant} bytes, expected {expected_signmant}"
        )));
    }
    Ok(())
}

/// Index of the largest-magnitude element; ties go to the lowest index.
fn block_max(block: &[Bf16]) -> usize {
    let mut best = 0;
    for (i, v) in block.iter().enumerate() {
        if v.abs_bits() > block[best].abs_bits() {
            best = i;
        }
    }
    best
}

#[inline]
fn coefficient(scale: u8) -> f64 {
    1.0 + scale as f64 / 128.0
}

/// Divides by the block coefficient (correctly rounded) and rounds the
/// mantissa to `k` bits. Returns `(exponent, packed code)`.
#[inline]
fn encode_element(x: Bf16, scale: u8, k: u8) -> (u8, u8) {
    let y = if scale == 0 {
        x
    } else {
        Bf16::from_f64(x.to_f64() / coefficient(scale))
    };
    let r = round_value(y, k);
    let code = (r.sign() << k) | (r.mantissa() >> (MANT_BITS - k as u32));
    (r.exponent(), code)
}

#[inline]
fn decode_element(exp: u8, code: u8, scale: u8, k: u8) -> Bf16 {
    let mant = (code & ((1u16 << k) - 1) as u8) << (MANT_BITS - k as u32);
    let r = merge_unchecked(code >> k, exp, mant);
    if scale == 0 {
        r
    } else {
        Bf16::from_f64(r.to_f64() * coefficient(scale))
    }
}

pub fn compress_lossy(tensor: &Bf16Tensor, k: u8, block_size: usize) -> Result<LossyBlob> {
    check_precision(k)?;
    if k == LOSSLESS_PRECISION {
        return Err(Error::Precision(k));
    }
    if block_size == 0 || block_size > u32::MAX as usize {
        return Err(Error::BlockSize(block_size));
    }
    let values = tensor.data();
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    // whole blocks per parallel group
    let group = block_size * (GROUP / block_size).max(1);
    let parts = par::map_chunks(values, group, |_, chunk| {
        let mut scales = Vec::with_capacity(chunk.len().div_ceil(block_size));
        let mut exps = Vec::with_capacity(chunk.len());
        let mut codes = Vec::with_capacity(chunk.len());
        for block in chunk.chunks(block_size) {
            let scale = block[block_max(block)].mantissa();
            scales.push(scale);
            for &x in block {
                let (e, c) = encode_element(x, scale, k);
                exps.push(e);
                codes.push(c);
            }
        }
        (scales, exps, codes)
    });
    let mut scales = Vec::with_capacity(values.len().div_ceil(block_size));
    let mut exps = Vec::with_capacity(values.len());
    let mut codes = Vec::with_capacity(values.len());
    for (s, e, c) in parts {
        scales.extend_from_slice(&s);
        exps.extend_from_slice(&e);
        codes.extend_from_slice(&c);
    }
    let signmant = bitfloat::pack_codes(codes.into_iter(), values.len(), k);
    let table = ans::table_for(&exps)?;
    let exp_stream = ans::encode(&exps, &table)?;
    Ok(LossyBlob {
        meta: tensor.meta().clone(),
        precision: k,
        block_size,
        scales,
        exp_stream,
        signmant,
    })
}

pub fn decompress_lossy(blob: &LossyBlob) -> Result<Bf16Tensor> {
    let k = blob.precision;
    check_precision(k)?;
    if k == LOSSLESS_PRECISION {
        return Err(Error::Precision(k));
    }
    let b = blob.block_size;
    if b == 0 {
        return Err(Error::BlockSize(0));
    }
    let n = blob.meta.element_count();
    if blob.scales.len() != n.div_ceil(b) {
        return Err(Error::Malformed(format!(
            "{} block scales for {} blocks",
            blob.scales.len(),
            n.div_ceil(b)
        )));
    }
    if let Some(s) = blob.scales.iter().find(|&&s| s > 0x7F) {
        return Err(Error::Malformed(format!("block scale {s:#x} wider than 7 bits")));
    }
    check_lengths(
        n,
        blob.exp_stream.symbol_count(),
        blob.signmant.len(),
        bitfloat::packed_len(n, k),
    )?;
    let exps = ans::decode(&blob.exp_stream)?;
    let mut data = vec![Bf16::ZERO; n];
    par::for_each_chunk_mut(&mut data, GROUP, |g, out| {
        let base = g * GROUP;
        for (j, o) in out.iter_mut().enumerate() {
            let i = base + j;
            let code = bitfloat::unpack_code(&blob.signmant, i, k);
            *o = decode_element(exps[i], code, blob.scales[i / b], k);
        }
    });
    Bf16Tensor::new(blob.meta.shape.clone(), data)
}
