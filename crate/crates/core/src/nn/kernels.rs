//! Dense-layer kernels shared by every training path.
//!
//! Matrices are row-major. Weights are `n_out x n_in`, activations are
//! `batch x features`. All sums accumulate in `f32` in a fixed order, so a
//! given storage type always produces the same bits.

use crate::bitfloat::Bf16;

/// Storage type for weights and activations.
pub trait Element: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    const ZERO: Self;
    fn to_f32(self) -> f32;
    fn from_f32(x: f32) -> Self;
}

impl Element for Bf16 {
    const ZERO: Self = Bf16::ZERO;

    #[inline]
    fn to_f32(self) -> f32 {
        Bf16::to_f32(self)
    }

    #[inline]
    fn from_f32(x: f32) -> Self {
        Bf16::from_f32(x)
    }
}

impl Element for f32 {
    const ZERO: Self = 0.0;

    #[inline]
    fn to_f32(self) -> f32 {
        self
    }

    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    None,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Element>(self, z: T) -> T {
        match self {
            Activation::None => z,
            Activation::Relu => {
                if z.to_f32() > 0.0 {
                    z
                } else {
                    T::ZERO
                }
            }
        }
    }
}

/// `y = act(W x + b)`; the pre-activation is rounded to `T` before `act`.
pub fn linear_forward<T: Element>(
    w: &[T],
    bias: &[T],
    x: &[T],
    batch: usize,
    n_in: usize,
    n_out: usize,
    act: Activation,
) -> Vec<T> {
    debug_assert_eq!(w.len(), n_in * n_out);
    debug_assert_eq!(x.len(), batch * n_in);
    let mut y = Vec::with_capacity(batch * n_out);
    for xb in x.chunks_exact(n_in) {
        for (row, b) in w.chunks_exact(n_in).zip(bias) {
            let mut acc = 0f32;
            for (wij, xj) in row.iter().zip(xb) {
                acc += wij.to_f32() * xj.to_f32();
            }
            acc += b.to_f32();
            y.push(act.apply(T::from_f32(acc)));
        }
    }
    y
}

/// `gw[i][j] = Σ_b delta[b][i] * x[b][j]`, written into `gw`.
pub fn weight_grad<T: Element>(delta: &[f32], x: &[T], batch: usize, n_in: usize, n_out: usize, gw: &mut [f32]) {
    debug_assert_eq!(gw.len(), n_in * n_out);
    gw.fill(0.0);
    for b in 0..batch {
        let xb = &x[b * n_in..(b + 1) * n_in];
        let db = &delta[b * n_out..(b + 1) * n_out];
        for (i, &d) in db.iter().enumerate() {
            let row = &mut gw[i * n_in..(i + 1) * n_in];
            for (g, xj) in row.iter_mut().zip(xb) {
                *g += d * xj.to_f32();
            }
        }
    }
}

/// `gb[i] = Σ_b delta[b][i]`.
pub fn bias_grad(delta: &[f32], batch: usize, n_out: usize) -> Vec<f32> {
    let mut gb = vec![0f32; n_out];
    for db in delta.chunks_exact(n_out).take(batch) {
        for (g, d) in gb.iter_mut().zip(db) {
            *g += d;
        }
    }
    gb
}

/// `dx[b][j] = Σ_i w[i][j] * delta[b][i]`.
pub fn input_grad<T: Element>(w: &[T], delta: &[f32], batch: usize, n_in: usize, n_out: usize) -> Vec<f32> {
    let mut dx = vec![0f32; batch * n_in];
    for b in 0..batch {
        let db = &delta[b * n_out..(b + 1) * n_out];
        let out = &mut dx[b * n_in..(b + 1) * n_in];
        for (i, &d) in db.iter().enumerate() {
            let row = &w[i * n_in..(i + 1) * n_in];
            for (o, wij) in out.iter_mut().zip(row) {
                *o += wij.to_f32() * d;
            }
        }
    }
    dx
}

/// Zeroes gradient entries whose (post-activation) input was clamped.
pub fn activation_grad<T: Element>(act: Activation, dx: &mut [f32], x: &[T]) {
    if act == Activation::Relu {
        for (d, xj) in dx.iter_mut().zip(x) {
            if xj.to_f32() <= 0.0 {
                *d = 0.0;
            }
        }
    }
}

/// `p <- p - lr * g`, rounded back to `T`.
pub fn sgd_update<T: Element>(p: &mut [T], g: &[f32], lr: f32) {
    for (pi, gi) in p.iter_mut().zip(g) {
        *pi = T::from_f32(pi.to_f32() - lr * gi);
    }
}

/// Mean squared error and its gradient w.r.t. the prediction.
pub fn mse<T: Element>(pred: &[T], target: &[T]) -> (f32, Vec<f32>) {
    let n = pred.len() as f32;
    let mut loss = 0f32;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = p.to_f32() - t.to_f32();
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    (loss / n, grad)
}
