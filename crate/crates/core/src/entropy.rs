//! Per-component histograms and Shannon entropy of BF16 tensors.

use crate::bitfloat::Bf16;
use crate::error::{Error, Result};
use crate::par;

/// Ratios are capped here instead of reporting infinity.
pub const RATIO_CAP: f64 = 999.0;

/// Shannon entropy in bits: `-Σ p log2 p` over nonzero bins.
pub fn shannon_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single bin gives -1 * log2(1) = -0.0
    Ok(h.max(0.0))
}

/// Expected code length in bits/symbol of `counts` coded with `freqs`
/// (normalised by their own sum). Infinite if a counted symbol has zero frequency.
pub fn cross_entropy(counts: &[u64], freqs: &[u16]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let scale: f64 = freqs.iter().map(|&f| f as f64).sum();
    let n = total as f64;
    Ok(counts
        .iter()
        .zip(freqs)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &f)| c as f64 / n * (scale / f as f64).log2())
        .sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentHistogram {
    pub sign_counts: [u64; 2],
    pub exp_counts: [u64; 256],
    pub mant_counts: [u64; 128],
    pub total: u64,
}

impl Default for ComponentHistogram {
    fn default() -> Self {
        Self {
            sign_counts: [0; 2],
            exp_counts: [0; 256],
            mant_counts: [0; 128],
            total: 0,
        }
    }
}

impl ComponentHistogram {
    pub fn from_values(values: &[Bf16]) -> Self {
        par::map_chunks(values, 1 << 16, |_, chunk| {
            let mut h = Self::default();
            for &v in chunk {
                h.add(v);
            }
            h
        })
        .into_iter()
        .fold(Self::default(), |mut acc, h| {
            acc.merge(&h);
            acc
        })
    }

    #[inline]
    pub fn add(&mut self, v: Bf16) {
        self.sign_counts[v.sign() as usize] += 1;
        self.exp_counts[v.exponent() as usize] += 1;
        self.mant_counts[v.mantissa() as usize] += 1;
        self.total += 1;
    }

    /// Associative and commutative.
    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.sign_counts.iter_mut().zip(&other.sign_counts) {
            *a += b;
        }
        for (a, b) in self.exp_counts.iter_mut().zip(&other.exp_counts) {
            *a += b;
        }
        for (a, b) in self.mant_counts.iter_mut().zip(&other.mant_counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn report(&self) -> Result<EntropyReport> {
        let h_sign = shannon_entropy(&self.sign_counts)?;
        let h_exp = shannon_entropy(&self.exp_counts)?;
        let h_mant = shannon_entropy(&self.mant_counts)?;
        Ok(EntropyReport::new(h_sign, h_exp, h_mant))
    }
}

/// Entropy of each BF16 component and the compression ratios they imply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    pub h_sign: f64,
    pub h_exp: f64,
    pub h_mant: f64,
    /// `16 / (h_sign + h_exp + h_mant)`, capped at [`RATIO_CAP`].
    pub ideal_ratio: f64,
    /// `16 / (1 + h_exp + 7)`: only the exponent is entropy-coded.
    pub exponent_only_ratio: f64,
}

impl EntropyReport {
    pub fn new(h_sign: f64, h_exp: f64, h_mant: f64) -> Self {
        let total = h_sign + h_exp + h_mant;
        let ideal_ratio = if total > 0.0 {
            (16.0 / total).min(RATIO_CAP)
        } else {
            RATIO_CAP
        };
        Self {
            h_sign,
            h_exp,
            h_mant,
            ideal_ratio,
            exponent_only_ratio: 16.0 / (1.0 + h_exp + 7.0),
        }
    }
}

pub fn analyze_tensor(values: &[Bf16]) -> Result<EntropyReport> {
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    ComponentHistogram::from_values(values).report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn entropy_examples() {
        let mut one = vec![0u64; 10];
        one[3] = 17;
        assert_eq!(shannon_entropy(&one).unwrap(), 0.0);
        assert!((shannon_entropy(&[5u64; 256]).unwrap() - 8.0).abs() < 1e-12);
        let closed = -0.75 * 0.75f64.log2() - 0.25 * 0.25f64.log2();
        assert!((shannon_entropy(&[3, 1]).unwrap() - closed).abs() < 1e-12);
        assert!((closed - 0.8113).abs() < 1e-4);
        assert!(matches!(shannon_entropy(&[0, 0]), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn constant_tensor() {
        let r = analyze_tensor(&vec![Bf16::ONE; 1000]).unwrap();
        assert_eq!((r.h_sign, r.h_exp, r.h_mant), (0.0, 0.0, 0.0));
        assert_eq!(r.ideal_ratio, RATIO_CAP);
        assert_eq!(r.exponent_only_ratio, 2.0);
    }

    #[test]
    fn plus_minus_one() {
        let v: Vec<_> = (0..1000)
            .map(|i| if i % 2 == 0 { Bf16::ONE } else { Bf16::from_f32(-1.0) })
            .collect();
        let r = analyze_tensor(&v).unwrap();
        assert_eq!((r.h_sign, r.h_exp, r.h_mant), (1.0, 0.0, 0.0));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(analyze_tensor(&[]), Err(Error::EmptyTensor)));
    }

    #[test]
    fn gaussian_weights_have_low_exponent_entropy() {
        let g = CounterRng::new(0xA11CE).gaussians(1 << 20, 0.02);
        let v: Vec<_> = g.iter().map(|&x| Bf16::from_f64(x)).collect();
        let r = analyze_tensor(&v).unwrap();
        assert!(r.h_exp < 5.0, "{r:?}");
        assert!(r.h_mant > 6.8, "{r:?}");
        assert!(r.exponent_only_ratio <= r.ideal_ratio);
    }

    #[test]
    fn permutation_invariant_and_bounds() {
        let rng = CounterRng::new(5);
        let mut v: Vec<_> = (0..5000u64).map(|i| Bf16(rng.u64_at(i) as u16)).collect();
        let a = analyze_tensor(&v).unwrap();
        v.reverse();
        v.rotate_left(1234);
        let b = analyze_tensor(&v).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.h_sign));
        assert!((0.0..=8.0).contains(&a.h_exp));
        assert!((0.0..=7.0).contains(&a.h_mant));
        assert!(a.ideal_ratio >= a.exponent_only_ratio);
    }

    #[test]
    fn merge_is_order_independent() {
        let rng = CounterRng::new(6);
        let v: Vec<_> = (0..3000u64).map(|i| Bf16(rng.u64_at(i) as u16)).collect();
        let parts: Vec<_> = v.chunks(700).map(ComponentHistogram::from_values).collect();
        let mut fwd = ComponentHistogram::default();
        parts.iter().for_each(|p| fwd.merge(p));
        let mut rev = ComponentHistogram::default();
        parts.iter().rev().for_each(|p| rev.merge(p));
        assert_eq!(fwd, rev);
        assert_eq!(fwd, ComponentHistogram::from_values(&v));
        assert_eq!(fwd.exp_counts.iter().sum::<u64>(), fwd.total);
    }
}
