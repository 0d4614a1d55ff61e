//! Counter-based generator for synthetic tensors and noise.
//!
//! Every draw is a pure function of `(key, counter)`, so any element of a
//! stream can be produced independently and in any order. The mixing
//! function is the SplitMix64 finaliser:
//!
//! ```text
//! z = key + (counter + 1) * 0x9E3779B97F4A7C15      (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Uniforms take the top 53 bits; Gaussians use one Box-Muller cosine branch
//! over counters `2i` and `2i + 1`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed, stateless random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub const fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    /// Independent stream for a labelled purpose (layer index, step, ...).
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            key: finalize(self.key ^ tag.wrapping_mul(GOLDEN).rotate_left(17)),
        }
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        finalize(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw for element `index`.
    pub fn gaussian_at(&self, index: u64) -> f64 {
        let a = self.u64_at(index.wrapping_mul(2));
        let b = self.u64_at(index.wrapping_mul(2).wrapping_add(1));
        // (0, 1] so the log is finite
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gaussians(&self, n: usize, std: f64) -> Vec<f64> {
        (0..n as u64).map(|i| std * self.gaussian_at(i)).collect()
    }
}
