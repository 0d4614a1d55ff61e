//! On-disk formats.
//!
//! NZT (compressed), little-endian:
//!
//! ```text
//! "NZT1" | u8 version=1 | u8 precision (7 = lossless) | u32 block_size (0 if lossless)
//! u8 ndim | u64 x ndim shape
//! 512-byte frequency table
//! u32 scales_len    | scale bytes
//! u64 exp_stream_len| ANS stream bytes
//! u64 signmant_len  | packed sign/mantissa bytes
//! u32 CRC32 of every byte between the magic and the checksum
//! ```
//!
//! BFT (raw): `"BFT1" | u8 ndim | u64 x ndim shape | element_count x u16 LE`.

use std::io::{Read, Write};

use super::{Bf16Tensor, Blob, LosslessBlob, LossyBlob, TensorMeta, LOSSLESS_PRECISION};
use crate::ans::{AnsStream, FrequencyTable, TABLE_BYTES};
use crate::bitfloat::{check_precision, Bf16};
use crate::error::{Error, Result};

pub const NZT_MAGIC: [u8; 4] = *b"NZT1";
pub const NZT_VERSION: u8 = 1;
const BFT_MAGIC: [u8; 4] = *b"BFT1";

pub fn write_nzt<W: Write>(blob: &Blob, mut sink: W) -> Result<()> {
    let (meta, k, block_size, scales, stream, signmant) = match blob {
        Blob::Lossless(b) => (&b.meta, LOSSLESS_PRECISION, 0u32, &[][..], &b.exp_stream, &b.signmant),
        Blob::Lossy(b) => (
            &b.meta,
            b.precision,
            b.block_size as u32,
            &b.scales[..],
            &b.exp_stream,
            &b.signmant,
        ),
    };
    let mut buf = Vec::with_capacity(blob.footprint().total());
    buf.extend_from_slice(&NZT_MAGIC);
    buf.push(NZT_VERSION);
    buf.push(k);
    buf.extend_from_slice(&block_size.to_le_bytes());
    buf.push(meta.shape().len() as u8);
    for &d in meta.shape() {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&stream.table.to_bytes());
    buf.extend_from_slice(&(scales.len() as u32).to_le_bytes());
    buf.extend_from_slice(scales);
    let exp_bytes = stream.to_bytes();
    buf.extend_from_slice(&(exp_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&exp_bytes);
    buf.extend_from_slice(&(signmant.len() as u64).to_le_bytes());
    buf.extend_from_slice(signmant);
    let crc = crc32fast::hash(&buf[4..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    sink.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len_prefixed(&mut self, len: u64, what: &'static str) -> Result<&'a [u8]> {
        let len = usize::try_from(len).map_err(|_| Error::Truncated(what))?;
        self.take(len, what)
    }
}

pub fn read_nzt<R: Read>(mut source: R) -> Result<Blob> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .ok_or(Error::Truncated("magic"))?
        .try_into()
        .unwrap();
    if magic != NZT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated("checksum"));
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut c = Cursor { bytes: body, pos: 0 };
    let version = c.u8("version")?;
    if version != NZT_VERSION {
        return Err(Error::Version(version));
    }
    let k = c.u8("precision")?;
    check_precision(k)?;
    let block_size = c.u32("block size")? as usize;
    let ndim = c.u8("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(c.u64("shape")?);
    }
    let meta = TensorMeta::new(shape)?;
    let table = FrequencyTable::from_bytes(c.take(TABLE_BYTES, "frequency table")?)?;
    let scales_len = c.u32("scales length")? as u64;
    let scales = c.len_prefixed(scales_len, "scales")?.to_vec();
    let exp_len = c.u64("exponent stream length")?;
    let exp_stream = AnsStream::from_bytes(c.len_prefixed(exp_len, "exponent stream")?, table)?;
    let sm_len = c.u64("sign/mantissa length")?;
    let signmant = c.len_prefixed(sm_len, "sign/mantissa payload")?.to_vec();
    if c.pos != body.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - c.pos)));
    }

    if k == LOSSLESS_PRECISION {
        if block_size != 0 || !scales.is_empty() {
            return Err(Error::Malformed("lossless container carries block scales".into()));
        }
        Ok(Blob::Lossless(LosslessBlob {
            meta,
            exp_stream,
            signmant,
        }))
    } else {
        if block_size == 0 {
            return Err(Error::BlockSize(0));
        }
        Ok(Blob::Lossy(LossyBlob {
            meta,
            precision: k,
            block_size,
            scales,
            exp_stream,
            signmant,
        }))
    }
}

pub fn write_bft<W: Write>(tensor: &Bf16Tensor, mut sink: W) -> Result<()> {
    let mut buf = Vec::with_capacity(5 + 8 * tensor.shape().len() + 2 * tensor.len());
    buf.extend_from_slice(&BFT_MAGIC);
    buf.push(tensor.shape().len() as u8);
    for &d in tensor.shape() {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_bft<R: Read>(mut source: R) -> Result<Bf16Tensor> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != BFT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let ndim = c.u8("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(c.u64("shape")?);
    }
    let meta = TensorMeta::new(shape)?;
    let n = meta.element_count();
    let raw = c.take(n.checked_mul(2).ok_or(Error::Truncated("data"))?, "data")?;
    if c.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let data = raw
        .chunks_exact(2)
        .map(|p| Bf16(u16::from_le_bytes([p[0], p[1]])))
        .collect();
    Bf16Tensor::new(meta.shape().to_vec(), data)
}
