//! BF16 bit layout: 1 sign bit, 8 exponent bits (bias 127), 7 mantissa bits.

use std::fmt;

use crate::error::{Error, Result};

pub const SIGN_MASK: u16 = 0x8000;
pub const EXP_MASK: u16 = 0x7F80;
pub const MANT_MASK: u16 = 0x007F;
pub const MANT_BITS: u32 = 7;

/// A raw BF16 bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Bf16(pub u16);

impl Bf16 {
    pub const ZERO: Bf16 = Bf16(0x0000);
    pub const NEG_ZERO: Bf16 = Bf16(0x8000);
    pub const ONE: Bf16 = Bf16(0x3F80);
    pub const INFINITY: Bf16 = Bf16(0x7F80);
    pub const NEG_INFINITY: Bf16 = Bf16(0xFF80);
    pub const NAN: Bf16 = Bf16(0x7FC0);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Round-to-nearest-even from `f32`. NaN stays NaN (quieted).
    #[inline]
    pub fn from_f32(x: f32) -> Self {
        let bits = x.to_bits();
        if x.is_nan() {
            return Bf16(((bits >> 16) as u16) | 0x0040);
        }
        let round = 0x7FFF + ((bits >> 16) & 1);
        Bf16((bits.wrapping_add(round) >> 16) as u16)
    }

    /// Correctly rounded (nearest, ties to even) conversion from `f64`,
    /// including the subnormal range and overflow to infinity.
    pub fn from_f64(x: f64) -> Self {
        let bits = x.to_bits();
        let sign = ((bits >> 48) as u16) & SIGN_MASK;
        if x.is_nan() {
            return Bf16(sign | 0x7FC0);
        }
        if x.is_infinite() {
            return Bf16(sign | EXP_MASK);
        }
        let biased = ((bits >> 52) & 0x7FF) as i32;
        if biased == 0 {
            // f64 zeros and subnormals are far below the BF16 range.
            return Bf16(sign);
        }
        let exp = biased - 1023;
        let sig = (1u64 << 52) | (bits & ((1u64 << 52) - 1));
        let magnitude = if exp >= -126 {
            // normal: keep the leading one plus 7 fraction bits
            let kept = round_shift_rne(sig, 45);
            // `kept` is in [128, 256]; 256 carries into the exponent naturally
            (((exp + 127) as u64) << 7) + (kept - 128)
        } else {
            // subnormal: value = m * 2^-133
            let shift = (-(exp + 81)) as u32;
            round_shift_rne(sig, shift)
        };
        if magnitude >= EXP_MASK as u64 {
            Bf16(sign | EXP_MASK)
        } else {
            Bf16(sign | magnitude as u16)
        }
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    #[inline]
    pub fn sign(self) -> u8 {
        (self.0 >> 15) as u8
    }

    #[inline]
    pub fn exponent(self) -> u8 {
        ((self.0 & EXP_MASK) >> 7) as u8
    }

    #[inline]
    pub fn mantissa(self) -> u8 {
        (self.0 & MANT_MASK) as u8
    }

    /// Magnitude bits; orders non-NaN values by absolute value.
    #[inline]
    pub fn abs_bits(self) -> u16 {
        self.0 & !SIGN_MASK
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MANT_MASK != 0
    }

    /// True for nonzero finite values with a nonzero exponent field.
    #[inline]
    pub fn is_normal(self) -> bool {
        let e = self.exponent();
        e != 0 && e != 0xFF
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<Bf16> for f32 {
    fn from(x: Bf16) -> f32 {
        x.to_f32()
    }
}

/// `sig / 2^shift` rounded to nearest, ties to even.
fn round_shift_rne(sig: u64, shift: u32) -> u64 {
    if shift == 0 {
        return sig;
    }
    if shift > 64 {
        return 0;
    }
    let wide = sig as u128;
    let q = (wide >> shift) as u64;
    let rem = wide & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// The (sign, exponent, mantissa) fields of one BF16 value.
///
/// For normal numbers the value is `(-1)^sign * 2^(exponent - 127) * (1 + mantissa / 128)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ComponentTriple {
    pub sign: u8,
    pub exponent: u8,
    pub mantissa: u8,
}

#[inline]
pub fn split(x: Bf16) -> ComponentTriple {
    ComponentTriple {
        sign: x.sign(),
        exponent: x.exponent(),
        mantissa: x.mantissa(),
    }
}

pub fn merge(t: ComponentTriple) -> Result<Bf16> {
    if t.sign > 1 {
        return Err(Error::FieldRange {
            field: "sign",
            value: t.sign as u32,
        });
    }
    if t.mantissa > MANT_MASK as u8 {
        return Err(Error::FieldRange {
            field: "mantissa",
            value: t.mantissa as u32,
        });
    }
    Ok(merge_unchecked(t.sign, t.exponent, t.mantissa))
}

/// Field ranges are the caller's problem; out-of-range bits are masked off.
#[inline]
pub(crate) fn merge_unchecked(sign: u8, exponent: u8, mantissa: u8) -> Bf16 {
    Bf16(((sign as u16 & 1) << 15) | ((exponent as u16) << 7) | (mantissa as u16 & MANT_MASK))
}

pub fn check_precision(k: u8) -> Result<()> {
    match k {
        0 | 1 | 3 | 7 => Ok(()),
        _ => Err(Error::Precision(k)),
    }
}

/// Round a 7-bit mantissa to its `k` most significant bits, ties to even.
///
/// Returns the rounded mantissa (still aligned to 7 bits, low `7 - k` bits
/// zero) and whether rounding overflowed the significand. On carry the
/// mantissa is 0 and the caller must bump the exponent.
pub fn round_mantissa(m: u8, k: u8) -> Result<(u8, bool)> {
    check_precision(k)?;
    if m > MANT_MASK as u8 {
        return Err(Error::FieldRange {
            field: "mantissa",
            value: m as u32,
        });
    }
    Ok(round_mantissa_unchecked(m, k))
}

#[inline]
pub(crate) fn round_mantissa_unchecked(m: u8, k: u8) -> (u8, bool) {
    let drop = MANT_BITS - k as u32;
    if drop == 0 {
        return (m, false);
    }
    let q = (m as u32 >> drop) as u8;
    let rem = m & ((1u8 << drop) - 1);
    let half = 1u8 << (drop - 1);
    let q = if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    };
    if q as u32 == 1 << k {
        (0, true)
    } else {
        (q << drop, false)
    }
}

/// Truncate toward zero: keep the top `k` bits.
#[inline]
pub(crate) fn truncate_mantissa(m: u8, k: u8) -> u8 {
    let drop = MANT_BITS - k as u32;
    (m >> drop) << drop
}

/// Round a whole BF16 value's mantissa to `k` bits, carrying into the
/// exponent. If the carry would produce an infinite exponent the mantissa
/// is truncated instead.
pub(crate) fn round_value(x: Bf16, k: u8) -> Bf16 {
    let t = split(x);
    let (m, carry) = round_mantissa_unchecked(t.mantissa, k);
    if !carry {
        merge_unchecked(t.sign, t.exponent, m)
    } else if t.exponent >= 0xFE {
        merge_unchecked(t.sign, t.exponent, truncate_mantissa(t.mantissa, k))
    } else {
        merge_unchecked(t.sign, t.exponent + 1, 0)
    }
}

/// A sign bit followed by the `k` retained mantissa bits (`k + 1` bits total).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignedMantissa {
    pub sign: u8,
    /// The retained bits, right-aligned: `0 ..= 2^k - 1`.
    pub mantissa: u8,
}

impl SignedMantissa {
    pub const fn new(sign: u8, mantissa: u8) -> Self {
        Self { sign, mantissa }
    }

    #[inline]
    fn code(self, k: u8) -> u8 {
        (self.sign << k) | self.mantissa
    }
}

/// Pack `(k + 1)`-bit items MSB-first; a trailing partial byte is zero-padded.
pub fn pack_signed_mantissas(items: &[SignedMantissa], k: u8) -> Result<Vec<u8>> {
    check_precision(k)?;
    let width = k as u32 + 1;
    for (index, it) in items.iter().enumerate() {
        if it.sign > 1 || (it.mantissa as u32) >> k != 0 {
            return Err(Error::PackOverflow { index, width });
        }
    }
    Ok(pack_codes(items.iter().map(|it| it.code(k)), items.len(), k))
}

/// Packs pre-validated codes of `k + 1` bits.
pub(crate) fn pack_codes(codes: impl Iterator<Item = u8>, n: usize, k: u8) -> Vec<u8> {
    let width = k as usize + 1;
    let per_byte = 8 / width;
    let mut out = vec![0u8; packed_len(n, k)];
    for (i, code) in codes.enumerate() {
        let slot = i % per_byte;
        let shift = 8 - width * (slot + 1);
        out[i / per_byte] |= code << shift;
    }
    out
}

pub(crate) fn unpack_code(bytes: &[u8], i: usize, k: u8) -> u8 {
    let width = k as usize + 1;
    let per_byte = 8 / width;
    let shift = 8 - width * (i % per_byte + 1);
    let mask = ((1u16 << width) - 1) as u8;
    (bytes[i / per_byte] >> shift) & mask
}

pub fn unpack_signed_mantissas(bytes: &[u8], k: u8, n: usize) -> Result<Vec<SignedMantissa>> {
    check_precision(k)?;
    let need = packed_len(n, k);
    if bytes.len() < need {
        return Err(Error::Truncated("packed mantissas"));
    }
    let mask = ((1u16 << k) - 1) as u8;
    Ok((0..n)
        .map(|i| {
            let code = unpack_code(bytes, i, k);
            SignedMantissa::new(code >> k, code & mask)
        })
        .collect())
}

/// `ceil(n * (k + 1) / 8)`.
pub fn packed_len(n: usize, k: u8) -> usize {
    (n * (k as usize + 1)).div_ceil(8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: nearest multiple of 2^(7-k), ties to even
    /// multiple, computed in floating point.
    fn rne_oracle(m: u8, k: u8) -> (u8, bool) {
        let step = (1u32 << (7 - k)) as f64;
        let x = m as f64 / step;
        let lo = x.floor();
        let frac = x - lo;
        let q = if frac > 0.5 || (frac == 0.5 && lo as u32 % 2 == 1) {
            lo + 1.0
        } else {
            lo
        };
        let v = (q * step) as u32;
        if v >= 128 {
            (0, true)
        } else {
            (v as u8, false)
        }
    }

    #[test]
    fn split_merge_exhaustive() {
        for bits in 0..=u16::MAX {
            let x = Bf16(bits);
            assert_eq!(merge(split(x)).unwrap(), x);
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            split(Bf16(0x3F80)),
            ComponentTriple { sign: 0, exponent: 127, mantissa: 0 }
        );
        assert_eq!(
            split(Bf16(0x0000)),
            ComponentTriple { sign: 0, exponent: 0, mantissa: 0 }
        );
        let t = split(Bf16(0xC0A0));
        assert_eq!(t, ComponentTriple { sign: 1, exponent: 129, mantissa: 32 });
        // reference conversion: -5.0 is exactly representable in f32/bf16
        assert_eq!((-5.0f32).to_bits() >> 16, 0xC0A0);
    }

    #[test]
    fn merge_examples() {
        let m = |s, e, m| merge(ComponentTriple { sign: s, exponent: e, mantissa: m }).unwrap();
        assert_eq!(m(0, 127, 0), Bf16(0x3F80));
        assert_eq!(m(1, 0, 0), Bf16(0x8000));
        assert_eq!(m(0, 255, 0), Bf16::INFINITY);
        assert_eq!(m(0, 255, 0).to_f32(), f32::INFINITY);
    }

    #[test]
    fn merge_rejects_out_of_range() {
        assert!(merge(ComponentTriple { sign: 2, exponent: 0, mantissa: 0 }).is_err());
        assert!(merge(ComponentTriple { sign: 0, exponent: 0, mantissa: 128 }).is_err());
    }

    #[test]
    fn round_mantissa_examples() {
        assert_eq!(round_mantissa(0b1010110, 3).unwrap(), (0b1010000, false));
        for k in [0, 1, 3] {
            assert_eq!(round_mantissa(0, k).unwrap(), (0, false));
        }
        assert_eq!(round_mantissa(127, 3).unwrap(), (0, true));
        assert!(round_mantissa(5, 2).is_err());
        assert!(round_mantissa(128, 3).is_err());
    }

    #[test]
    fn round_mantissa_matches_oracle() {
        for k in [0u8, 1, 3, 7] {
            for m in 0..128u8 {
                assert_eq!(round_mantissa(m, k).unwrap(), rne_oracle(m, k), "m={m} k={k}");
            }
        }
    }

    #[test]
    fn round_mantissa_error_and_idempotence() {
        for k in [0u8, 1, 3] {
            for m in 0..128u8 {
                let (r, carry) = round_mantissa(m, k).unwrap();
                let sig = 128.0 + m as f64;
                let rsig = if carry { 256.0 } else { 128.0 + r as f64 };
                assert!((sig - rsig).abs() <= (1u32 << (6 - k)) as f64);
                assert!((sig - rsig).abs() / sig <= 0.5f64.powi(k as i32));
                if !carry {
                    assert_eq!(round_mantissa(r, k).unwrap(), (r, false));
                }
            }
        }
    }

    #[test]
    fn round_value_never_makes_infinity() {
        let max = Bf16(0x7F7F);
        let r = round_value(max, 0);
        assert!(r.is_finite());
        assert_eq!(r, Bf16(0x7F00));
        // ordinary carry
        assert_eq!(round_value(Bf16::from_f32(1.9921875), 0), Bf16::from_f32(2.0));
        // subnormal carries into the smallest normal
        assert_eq!(round_value(Bf16(0x007F), 3), Bf16(0x0080));
    }

    #[test]
    fn pack_examples() {
        let signs: Vec<_> = [1, 0, 1, 0, 1, 0, 1, 0]
            .iter()
            .map(|&s| SignedMantissa::new(s, 0))
            .collect();
        assert_eq!(pack_signed_mantissas(&signs, 0).unwrap(), vec![0xAA]);
        let items = [SignedMantissa::new(0, 0b101), SignedMantissa::new(1, 0b001)];
        assert_eq!(pack_signed_mantissas(&items, 3).unwrap(), vec![0x59]);
        assert!(pack_signed_mantissas(&[], 1).unwrap().is_empty());
    }

    #[test]
    fn pack_rejects_wide_items() {
        let err = pack_signed_mantissas(&[SignedMantissa::new(0, 2)], 1).unwrap_err();
        assert!(matches!(err, Error::PackOverflow { index: 0, width: 2 }));
        assert!(pack_signed_mantissas(&[SignedMantissa::new(2, 0)], 3).is_err());
    }

    #[test]
    fn partial_byte_is_zero_padded_low() {
        let items = [SignedMantissa::new(1, 1), SignedMantissa::new(1, 0), SignedMantissa::new(0, 1)];
        // 11 10 01 00
        assert_eq!(pack_signed_mantissas(&items, 1).unwrap(), vec![0b1110_0100]);
    }

    #[test]
    fn from_f64_matches_from_f32_on_f32_inputs() {
        let rng = crate::rng::CounterRng::new(11);
        for i in 0..200_000u64 {
            let bits = rng.u64_at(i) as u32;
            let x = f32::from_bits(bits);
            if x.is_nan() {
                continue;
            }
            assert_eq!(Bf16::from_f64(x as f64), Bf16::from_f32(x), "bits {bits:#x}");
        }
    }

    #[test]
    fn from_f64_edges() {
        assert_eq!(Bf16::from_f64(1.0), Bf16::ONE);
        assert_eq!(Bf16::from_f64(-0.0), Bf16::NEG_ZERO);
        assert_eq!(Bf16::from_f64(1e300), Bf16::INFINITY);
        assert_eq!(Bf16::from_f64(1e-300), Bf16::ZERO);
        // smallest subnormal and half of it (tie -> even = 0)
        let tiny = 2f64.powi(-133);
        assert_eq!(Bf16::from_f64(tiny), Bf16(1));
        assert_eq!(Bf16::from_f64(tiny / 2.0), Bf16(0));
        assert_eq!(Bf16::from_f64(tiny * 1.5), Bf16(2));
        assert!(Bf16::from_f64(f64::NAN).is_nan());
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(k in prop::sample::select(vec![0u8, 1, 3, 7]),
                                 raw in prop::collection::vec((0u8..2, any::<u8>()), 0..300)) {
            let items: Vec<_> = raw
                .iter()
                .map(|&(s, m)| SignedMantissa::new(s, m & (((1u16 << k) - 1) as u8)))
                .collect();
            let packed = pack_signed_mantissas(&items, k).unwrap();
            prop_assert_eq!(packed.len(), packed_len(items.len(), k));
            prop_assert_eq!(unpack_signed_mantissas(&packed, k, items.len()).unwrap(), items);
        }

        #[test]
        fn rounded_value_relative_error(bits in 0x0080u16..0x7F80, k in prop::sample::select(vec![0u8, 1, 3])) {
            let x = Bf16(bits);
            let r = round_value(x, k);
            let rel = ((x.to_f64() - r.to_f64()) / x.to_f64()).abs();
            prop_assert!(rel <= 0.5f64.powi(k as i32));
        }
    }
}
