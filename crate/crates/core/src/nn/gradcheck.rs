//! Central finite-difference check of the backward kernels.
//!
//! Parameters are promoted to `f32` and perturbed there; the
//! finite-difference losses are evaluated in `f64` so the difference
//! quotient is not swamped by `f32` cancellation. Entries whose `±ε` step
//! flips a ReLU are skipped.

use super::kernels::{self, Activation};
use super::{MlpModel, SyntheticTask};
use crate::bitfloat::Bf16;
use crate::error::{Error, Result};

struct Promoted {
    dims: Vec<(usize, usize)>,
    ws: Vec<Vec<f32>>,
    bs: Vec<Vec<f32>>,
    act: Activation,
}

impl Promoted {
    fn act_after(&self, l: usize) -> Activation {
        if l + 1 == self.dims.len() {
            Activation::None
        } else {
            self.act
        }
    }

    fn forward(&self, x: &[f32], batch: usize) -> Vec<Vec<f32>> {
        let mut acts = vec![x.to_vec()];
        for (l, &(n_in, n_out)) in self.dims.iter().enumerate() {
            let y = kernels::linear_forward(&self.ws[l], &self.bs[l], &acts[l], batch, n_in, n_out, self.act_after(l));
            acts.push(y);
        }
        acts
    }

    fn param(&mut self, l: usize, i: usize, bias: bool) -> &mut f32 {
        if bias {
            &mut self.bs[l][i]
        } else {
            &mut self.ws[l][i]
        }
    }

    /// `f64` loss and the ReLU on/off pattern of every hidden unit.
    fn loss64(&self, x: &[f32], t: &[f32], batch: usize) -> (f64, Vec<bool>) {
        let mut a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut mask = Vec::new();
        for (l, &(n_in, n_out)) in self.dims.iter().enumerate() {
            let relu = self.act_after(l) == Activation::Relu;
            let mut z = vec![0f64; batch * n_out];
            for b in 0..batch {
                let xb = &a[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let row = &self.ws[l][o * n_in..(o + 1) * n_in];
                    let mut s = self.bs[l][o] as f64;
                    for (w, v) in row.iter().zip(xb) {
                        s += *w as f64 * v;
                    }
                    if relu {
                        mask.push(s > 0.0);
                        s = s.max(0.0);
                    }
                    z[b * n_out + o] = s;
                }
            }
            a = z;
        }
        let loss = a.iter().zip(t).map(|(p, &q)| (p - q as f64).powi(2)).sum::<f64>() / a.len() as f64;
        (loss, mask)
    }

    /// Analytic `(dL/dW_l, dL/db_l)` for every layer.
    fn gradients(&self, x: &[f32], t: &[f32], batch: usize) -> Vec<(Vec<f32>, Vec<f32>)> {
        let acts = self.forward(x, batch);
        let (_, mut delta) = kernels::mse(&acts[acts.len() - 1], t);
        let mut out = vec![(vec![], vec![]); self.dims.len()];
        for l in (0..self.dims.len()).rev() {
            let (n_in, n_out) = self.dims[l];
            let mut gw = vec![0f32; n_in * n_out];
            kernels::weight_grad(&delta, &acts[l], batch, n_in, n_out, &mut gw);
            let gb = kernels::bias_grad(&delta, batch, n_out);
            if l > 0 {
                let mut dx = kernels::input_grad(&self.ws[l], &delta, batch, n_in, n_out);
                kernels::activation_grad(self.act, &mut dx, &acts[l]);
                delta = dx;
            }
            out[l] = (gw, gb);
        }
        out
    }
}

/// Max of `|g_analytic - g_fd| / (|g_fd| + 1e-8)` over all weights and
/// biases, with the model promoted to `f32` and central differences of
/// step `epsilon`.
pub fn grad_check_batch(model: &MlpModel, x: &[Bf16], t: &[Bf16], batch: usize, epsilon: f32) -> Result<f32> {
    if x.len() != batch * model.n_in() || t.len() != batch * model.n_out() {
        return Err(Error::Shape("grad-check batch does not match the model".into()));
    }
    let promote = |v: &[Bf16]| v.iter().map(|b| b.to_f32()).collect::<Vec<f32>>();
    let mut p = Promoted {
        dims: model.layers.iter().map(|l| (l.n_in, l.n_out)).collect(),
        ws: model
            .layers
            .iter()
            .map(|l| Ok(promote(&l.weight()?)))
            .collect::<Result<_>>()?,
        bs: model.layers.iter().map(|l| promote(&l.bias)).collect(),
        act: model.activation,
    };
    let x = promote(x);
    let t = promote(t);
    let analytic = p.gradients(&x, &t, batch);
    let (_, base_mask) = p.loss64(&x, &t, batch);

    let mut worst = 0f64;
    for (l, (gw, gb)) in analytic.iter().enumerate() {
        for (bias, n) in [(false, gw.len()), (true, gb.len())] {
            for i in 0..n {
                let orig = *p.param(l, i, bias);
                let (hi, lo) = (orig + epsilon, orig - epsilon);
                *p.param(l, i, bias) = hi;
                let (plus, m1) = p.loss64(&x, &t, batch);
                *p.param(l, i, bias) = lo;
                let (minus, m2) = p.loss64(&x, &t, batch);
                *p.param(l, i, bias) = orig;
                if m1 != base_mask || m2 != base_mask {
                    continue;
                }
                let fd = (plus - minus) / (hi as f64 - lo as f64);
                let g = if bias { gb[i] } else { gw[i] } as f64;
                worst = worst.max((g - fd).abs() / (fd.abs() + 1e-8));
            }
        }
    }
    Ok(worst as f32)
}

/// [`grad_check_batch`] on the task's held-out batch.
pub fn grad_check(model: &MlpModel, task: &SyntheticTask, batch: usize, epsilon: f32) -> Result<f32> {
    let (x, t) = task.held_out(batch);
    grad_check_batch(model, &x, &t, batch, epsilon)
}
