//! Byte-alphabet range ANS.
//!
//! 32-bit state, 12-bit quantised frequencies, byte-wise renormalisation.
//! Input is cut into chunks of [`CHUNK_SYMBOLS`] symbols that are coded
//! independently (and in parallel with the `parallel` feature); the byte
//! stream is the same for any thread count.
//!
//! Stream layout, little-endian:
//!
//! ```text
//! u32 chunk_count
//! per chunk:
//!     u32 symbol_count
//!     u32 payload_len
//!     payload = u32 initial_state | renormalisation bytes | u32 final_state_sentinel
//! ```
//!
//! The frequency table is serialised separately as 256 little-endian `u16`.

use crate::error::{Error, Result};
use crate::par;

pub const PROB_BITS: u32 = 12;
pub const PROB_SCALE: u32 = 1 << PROB_BITS;
pub const CHUNK_SYMBOLS: usize = 1 << 16;
pub const TABLE_BYTES: usize = 512;

/// Lower bound of the normalised state interval `[L, 256 L)`.
const STATE_LOW: u32 = 1 << 23;

/// Quantised symbol statistics: 256 frequencies summing to 4096.
#[derive(Clone)]
pub struct FrequencyTable {
    freqs: [u16; 256],
    cum: [u32; 257],
}

impl PartialEq for FrequencyTable {
    fn eq(&self, other: &Self) -> bool {
        self.freqs == other.freqs
    }
}

impl Eq for FrequencyTable {}

impl std::fmt::Debug for FrequencyTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let present: Vec<_> = (0..256)
            .filter(|&s| self.freqs[s] > 0)
            .map(|s| (s, self.freqs[s]))
            .collect();
        f.debug_struct("FrequencyTable").field("present", &present).finish()
    }
}

impl FrequencyTable {
    /// Builds a table from already-quantised frequencies.
    pub fn from_freqs(freqs: [u16; 256]) -> Result<Self> {
        let sum: u32 = freqs.iter().map(|&f| f as u32).sum();
        if sum != PROB_SCALE {
            return Err(Error::Table(format!("frequencies sum to {sum}, expected {PROB_SCALE}")));
        }
        let mut cum = [0u32; 257];
        for s in 0..256 {
            cum[s + 1] = cum[s] + freqs[s] as u32;
        }
        Ok(Self { freqs, cum })
    }

    pub fn freqs(&self) -> &[u16; 256] {
        &self.freqs
    }

    pub fn freq(&self, symbol: u8) -> u32 {
        self.freqs[symbol as usize] as u32
    }

    /// Exclusive prefix sum up to `symbol`.
    pub fn cum(&self, symbol: u8) -> u32 {
        self.cum[symbol as usize]
    }

    pub fn is_present(&self, symbol: u8) -> bool {
        self.freqs[symbol as usize] > 0
    }

    pub fn to_bytes(&self) -> [u8; TABLE_BYTES] {
        let mut out = [0u8; TABLE_BYTES];
        for (s, f) in self.freqs.iter().enumerate() {
            out[2 * s..2 * s + 2].copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != TABLE_BYTES {
            return Err(Error::Table(format!(
                "expected {TABLE_BYTES} bytes, got {}",
                bytes.len()
            )));
        }
        let mut freqs = [0u16; 256];
        for (s, f) in freqs.iter_mut().enumerate() {
            *f = u16::from_le_bytes([bytes[2 * s], bytes[2 * s + 1]]);
        }
        Self::from_freqs(freqs)
    }

    fn slot_lookup(&self) -> Vec<u8> {
        let mut lookup = vec![0u8; PROB_SCALE as usize];
        for s in 0..256 {
            lookup[self.cum[s] as usize..self.cum[s + 1] as usize].fill(s as u8);
        }
        lookup
    }
}

pub fn serialize_table(table: &FrequencyTable) -> [u8; TABLE_BYTES] {
    table.to_bytes()
}

pub fn deserialize_table(bytes: &[u8]) -> Result<FrequencyTable> {
    FrequencyTable::from_bytes(bytes)
}

/// Byte histogram.
pub fn count_symbols(symbols: &[u8]) -> [u64; 256] {
    let partial = par::map_chunks(symbols, CHUNK_SYMBOLS, |_, c| {
        let mut h = [0u64; 256];
        for &s in c {
            h[s as usize] += 1;
        }
        h
    });
    let mut counts = [0u64; 256];
    for h in partial {
        for (a, b) in counts.iter_mut().zip(h) {
            *a += b;
        }
    }
    counts
}

/// Quantises raw counts to a 4096-total table.
///
/// Largest-remainder rounding with a floor of 1 for every occurring symbol.
/// Remainder ties go to the lower symbol index. If the floor pushes the
/// total above 4096, frequencies are taken back one at a time from the
/// symbol whose decrement costs the fewest extra bits.
pub fn build_table(counts: &[u64; 256]) -> Result<FrequencyTable> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::Table("all counts are zero".into()));
    }
    let scale = PROB_SCALE as u128;
    let mut freqs = [0u32; 256];
    let mut rems = [0u128; 256];
    let mut bumped = [false; 256];
    for s in 0..256 {
        let c = counts[s] as u128;
        if c == 0 {
            continue;
        }
        let num = c * scale;
        freqs[s] = (num / total) as u32;
        rems[s] = num % total;
        if freqs[s] == 0 {
            freqs[s] = 1;
            bumped[s] = true;
        }
    }
    let sum: u32 = freqs.iter().sum();
    if sum < PROB_SCALE {
        let mut order: Vec<usize> = (0..256)
            .filter(|&s| counts[s] > 0 && !bumped[s])
            .collect();
        order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
        let mut deficit = PROB_SCALE - sum;
        for &s in order.iter().cycle() {
            if deficit == 0 {
                break;
            }
            freqs[s] += 1;
            deficit -= 1;
        }
    } else {
        let mut excess = sum - PROB_SCALE;
        while excess > 0 {
            let mut best: Option<(f64, usize)> = None;
            for s in 0..256 {
                if freqs[s] > 1 {
                    let f = freqs[s] as f64;
                    let cost = counts[s] as f64 * (f / (f - 1.0)).log2();
                    if best.is_none_or(|(c, _)| cost < c) {
                        best = Some((cost, s));
                    }
                }
            }
            let (_, s) = best.expect("4096 slots cannot all be pinned at 1");
            freqs[s] -= 1;
            excess -= 1;
        }
    }
    let mut out = [0u16; 256];
    for (o, f) in out.iter_mut().zip(freqs) {
        *o = f as u16;
    }
    FrequencyTable::from_freqs(out)
}

/// Convenience: histogram + [`build_table`].
pub fn table_for(symbols: &[u8]) -> Result<FrequencyTable> {
    build_table(&count_symbols(symbols))
}

/// One independently decodable chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnsChunk {
    pub symbol_count: u32,
    pub payload: Vec<u8>,
}

/// A chunked rANS stream together with the table it was coded under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnsStream {
    pub chunks: Vec<AnsChunk>,
    pub table: FrequencyTable,
}

impl AnsStream {
    pub fn symbol_count(&self) -> u64 {
        self.chunks.iter().map(|c| c.symbol_count as u64).sum()
    }

    /// Serialised length in bytes (excluding the table).
    pub fn encoded_len(&self) -> usize {
        4 + self.chunks.iter().map(|c| 8 + c.payload.len()).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&(self.chunks.len() as u32).to_le_bytes());
        for c in &self.chunks {
            out.extend_from_slice(&c.symbol_count.to_le_bytes());
            out.extend_from_slice(&(c.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&c.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], table: FrequencyTable) -> Result<Self> {
        let mut pos = 0usize;
        let take_u32 = |pos: &mut usize| -> Result<u32> {
            let b = bytes
                .get(*pos..*pos + 4)
                .ok_or(Error::Truncated("ANS stream header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().unwrap()))
        };
        let n = take_u32(&mut pos)? as usize;
        // each chunk needs at least 16 bytes; reject absurd counts early
        if n > bytes.len() / 16 + 1 {
            return Err(Error::Stream(format!("chunk count {n} exceeds stream size")));
        }
        let mut chunks = Vec::with_capacity(n);
        for i in 0..n {
            let symbol_count = take_u32(&mut pos)?;
            let len = take_u32(&mut pos)? as usize;
            let last = i + 1 == n;
            if symbol_count == 0
                || symbol_count as usize > CHUNK_SYMBOLS
                || (!last && symbol_count as usize != CHUNK_SYMBOLS)
            {
                return Err(Error::Stream(format!("chunk {i} has bad symbol count {symbol_count}")));
            }
            let payload = bytes
                .get(pos..pos + len)
                .ok_or(Error::Truncated("ANS chunk payload"))?
                .to_vec();
            pos += len;
            chunks.push(AnsChunk { symbol_count, payload });
        }
        if pos != bytes.len() {
            return Err(Error::Stream(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { chunks, table })
    }

    /// Decodes one chunk in isolation.
    pub fn decode_chunk(&self, index: usize) -> Result<Vec<u8>> {
        let chunk = self
            .chunks
            .get(index)
            .ok_or_else(|| Error::Stream(format!("no chunk {index}")))?;
        let lookup = self.table.slot_lookup();
        decode_chunk(chunk, &self.table, &lookup)
    }
}

/// Encodes `symbols` under `table`. Every symbol must have nonzero frequency.
pub fn encode(symbols: &[u8], table: &FrequencyTable) -> Result<AnsStream> {
    if let Some(&s) = symbols.iter().find(|&&s| !table.is_present(s)) {
        return Err(Error::ZeroFrequency(s));
    }
    let chunks = par::map_chunks(symbols, CHUNK_SYMBOLS, |_, c| AnsChunk {
        symbol_count: c.len() as u32,
        payload: encode_chunk(c, table),
    });
    Ok(AnsStream {
        chunks,
        table: table.clone(),
    })
}

pub fn decode(stream: &AnsStream) -> Result<Vec<u8>> {
    let lookup = stream.table.slot_lookup();
    let parts = par::map_indexed(stream.chunks.len(), |i| {
        decode_chunk(&stream.chunks[i], &stream.table, &lookup)
    });
    let mut out = Vec::with_capacity(stream.symbol_count() as usize);
    for p in parts {
        out.extend_from_slice(&p?);
    }
    Ok(out)
}

fn encode_chunk(symbols: &[u8], table: &FrequencyTable) -> Vec<u8> {
    // bytes are emitted back to front, reversed at the end
    let mut rev = Vec::with_capacity(symbols.len() / 2 + 16);
    let mut x = STATE_LOW;
    for &s in symbols.iter().rev() {
        let freq = table.freq(s);
        let start = table.cum(s);
        let x_max = ((STATE_LOW >> PROB_BITS) << 8) * freq;
        while x >= x_max {
            rev.push(x as u8);
            x >>= 8;
        }
        x = ((x / freq) << PROB_BITS) + (x % freq) + start;
    }
    rev.extend_from_slice(&x.to_be_bytes());
    rev.reverse();
    rev.extend_from_slice(&STATE_LOW.to_le_bytes());
    rev
}

fn decode_chunk(chunk: &AnsChunk, table: &FrequencyTable, lookup: &[u8]) -> Result<Vec<u8>> {
    let p = &chunk.payload;
    if p.len() < 8 {
        return Err(Error::Truncated("ANS chunk shorter than its state words"));
    }
    let end = p.len() - 4;
    let sentinel = u32::from_le_bytes(p[end..].try_into().unwrap());
    let mut x = u32::from_le_bytes(p[..4].try_into().unwrap());
    let mut pos = 4;
    let mask = PROB_SCALE - 1;
    let mut out = Vec::with_capacity(chunk.symbol_count as usize);
    for _ in 0..chunk.symbol_count {
        let slot = x & mask;
        let s = lookup[slot as usize];
        x = table.freq(s) * (x >> PROB_BITS) + slot - table.cum(s);
        while x < STATE_LOW {
            if pos >= end {
                return Err(Error::Truncated("ANS chunk payload exhausted"));
            }
            x = (x << 8) | p[pos] as u32;
            pos += 1;
        }
        out.push(s);
    }
    if pos != end || x != sentinel {
        return Err(Error::Stream(format!(
            "final state {x:#x} (expected {sentinel:#x}), {} unread bytes",
            end - pos
        )));
    }
    Ok(out)
}
