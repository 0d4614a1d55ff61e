//! A small BF16 MLP whose weight matrices can live only in compressed form.
//!
//! Forward decompresses one layer at a time. Backward walks the layers in
//! reverse, decompresses each weight once, computes the weight gradient and
//! the input gradient (from the pre-update weight), applies SGD in place and
//! recompresses. Only one layer's uncompressed weight and one gradient
//! buffer are ever alive.

mod gradcheck;
pub mod kernels;
mod memory;
mod train;

pub use gradcheck::{grad_check, grad_check_batch};
pub use kernels::{Activation, Element};
pub use memory::MemoryMeter;
pub use train::{train, train_model, Mode, SyntheticTask, TrainConfig, TrainTrace};

use crate::bitfloat::Bf16;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensorstore::{compress_lossless, decompress_lossless, Bf16Tensor, LosslessBlob};

/// Where a layer's weight matrix lives between uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightStorage {
    Raw(Vec<Bf16>),
    Compressed(Box<LosslessBlob>),
}

/// Dense layer `x -> W x + b` with `W` of shape `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearLayer {
    pub n_in: usize,
    pub n_out: usize,
    weight: WeightStorage,
    /// Kept raw; it is O(n_out).
    pub bias: Vec<Bf16>,
}

fn compress_matrix(w: &[Bf16], n_out: usize, n_in: usize) -> Result<LosslessBlob> {
    let t = Bf16Tensor::new(vec![n_out as u64, n_in as u64], w.to_vec())?;
    compress_lossless(&t)
}

impl LinearLayer {
    pub fn new(n_in: usize, n_out: usize, weight: Vec<Bf16>, bias: Vec<Bf16>, compressed: bool) -> Result<Self> {
        if weight.len() != n_in * n_out || bias.len() != n_out {
            return Err(Error::Shape(format!(
                "layer {n_out}x{n_in} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        let weight = if compressed {
            WeightStorage::Compressed(Box::new(compress_matrix(&weight, n_out, n_in)?))
        } else {
            WeightStorage::Raw(weight)
        };
        Ok(Self { n_in, n_out, weight, bias })
    }

    pub fn storage(&self) -> &WeightStorage {
        &self.weight
    }

    pub fn is_compressed(&self) -> bool {
        matches!(self.weight, WeightStorage::Compressed(_))
    }

    pub fn raw_weight_bytes(&self) -> usize {
        2 * self.n_in * self.n_out
    }

    /// Bytes the weight occupies at rest.
    pub fn stored_weight_bytes(&self) -> usize {
        match &self.weight {
            WeightStorage::Raw(w) => 2 * w.len(),
            WeightStorage::Compressed(b) => b.footprint().total(),
        }
    }

    /// A decoded copy of the weight matrix.
    pub fn weight(&self) -> Result<Vec<Bf16>> {
        match &self.weight {
            WeightStorage::Raw(w) => Ok(w.clone()),
            WeightStorage::Compressed(b) => Ok(decompress_lossless(b)?.into_data()),
        }
    }

    fn with_weight<R>(&self, meter: &mut MemoryMeter, f: impl FnOnce(&[Bf16]) -> R) -> Result<R> {
        match &self.weight {
            WeightStorage::Raw(w) => Ok(f(w)),
            WeightStorage::Compressed(b) => {
                let bytes = self.raw_weight_bytes();
                let w = decompress_lossless(b)?.into_data();
                meter.acquire_weight(bytes);
                let r = f(&w);
                drop(w);
                meter.release_weight(bytes);
                Ok(r)
            }
        }
    }

    fn update_weight<R>(&mut self, index: usize, meter: &mut MemoryMeter, f: impl FnOnce(&mut [Bf16]) -> R) -> Result<R> {
        match &mut self.weight {
            WeightStorage::Raw(w) => Ok(f(w)),
            WeightStorage::Compressed(b) => {
                let bytes = 2 * self.n_in * self.n_out;
                let mut w = decompress_lossless(b)?.into_data();
                meter.acquire_weight(bytes);
                let r = f(&mut w);
                // the old blob goes before the new one is built
                self.weight = WeightStorage::Raw(Vec::new());
                meter.set_compressed(index, 0);
                let blob = compress_matrix(&w, self.n_out, self.n_in)?;
                meter.set_compressed(index, blob.footprint().total());
                self.weight = WeightStorage::Compressed(Box::new(blob));
                drop(w);
                meter.release_weight(bytes);
                Ok(r)
            }
        }
    }
}

/// Layers applied in order with `activation` between them (not after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpModel {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
}

/// Saved layer inputs `x_0 .. x_{L-1}`; with recomputation only `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape {
    pub inputs: Vec<Vec<Bf16>>,
    pub batch: usize,
    pub recompute: bool,
}

/// Backward-pass options.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateOptions {
    /// Compute the input gradient from the already-updated weight.
    pub alg1_literal: bool,
}

impl MlpModel {
    pub fn new(layers: Vec<LinearLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    w[0].n_out, w[1].n_in
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Gaussian weights with std `1/sqrt(n_in)`, zero biases.
    pub fn random(dims: &[usize], activation: Activation, seed: u64, compressed: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("bad layer dims {dims:?}")));
        }
        let rng = CounterRng::new(seed).substream(0x1A1E);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                let (n_in, n_out) = (d[0], d[1]);
                let std = 1.0 / (n_in as f64).sqrt();
                let w = rng
                    .substream(l as u64)
                    .gaussians(n_in * n_out, std)
                    .into_iter()
                    .map(Bf16::from_f64)
                    .collect();
                LinearLayer::new(n_in, n_out, w, vec![Bf16::ZERO; n_out], compressed)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, activation)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_in * l.n_out + l.n_out).sum()
    }

    /// Same weights, stored raw or compressed.
    pub fn to_storage(&self, compressed: bool) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| LinearLayer::new(l.n_in, l.n_out, l.weight()?, l.bias.clone(), compressed))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, self.activation)
    }

    pub fn largest_raw_weight_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.raw_weight_bytes()).max().unwrap_or(0)
    }

    /// A meter primed with this model's current compressed sizes.
    pub fn meter(&self) -> MemoryMeter {
        let mut m = MemoryMeter::new(self.layers.len());
        m.set_largest_raw(self.largest_raw_weight_bytes());
        for (i, l) in self.layers.iter().enumerate() {
            if l.is_compressed() {
                m.set_compressed(i, l.stored_weight_bytes());
            }
        }
        m
    }

    fn act_after(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::None
        } else {
            self.activation
        }
    }

    fn layer_forward(&self, l: usize, x: &[Bf16], batch: usize, meter: &mut MemoryMeter) -> Result<Vec<Bf16>> {
        let layer = &self.layers[l];
        let act = self.act_after(l);
        layer.with_weight(meter, |w| {
            kernels::linear_forward(w, &layer.bias, x, batch, layer.n_in, layer.n_out, act)
        })
    }

    /// Runs the network and records what backward needs.
    pub fn forward(&self, x0: &[Bf16], batch: usize, meter: &mut MemoryMeter) -> Result<(Vec<Bf16>, ActivationTape)> {
        self.forward_with(x0, batch, false, meter)
    }

    pub fn forward_with(
        &self,
        x0: &[Bf16],
        batch: usize,
        recompute: bool,
        meter: &mut MemoryMeter,
    ) -> Result<(Vec<Bf16>, ActivationTape)> {
        if x0.len() != batch * self.n_in() {
            return Err(Error::Shape(format!(
                "input has {} values, expected {batch} x {}",
                x0.len(),
                self.n_in()
            )));
        }
        let mut inputs = Vec::with_capacity(if recompute { 1 } else { self.layers.len() });
        let mut x = x0.to_vec();
        for l in 0..self.layers.len() {
            let y = self.layer_forward(l, &x, batch, meter)?;
            if l == 0 || !recompute {
                inputs.push(x);
            }
            x = y;
        }
        Ok((x, ActivationTape { inputs, batch, recompute }))
    }

    /// Inference only.
    pub fn predict(&self, x0: &[Bf16], batch: usize) -> Result<Vec<Bf16>> {
        let mut meter = MemoryMeter::default();
        Ok(self.forward_with(x0, batch, true, &mut meter)?.0)
    }

    fn layer_input(&self, tape: &ActivationTape, l: usize, meter: &mut MemoryMeter) -> Result<Vec<Bf16>> {
        if !tape.recompute {
            return Ok(tape.inputs[l].clone());
        }
        let mut x = tape.inputs[0].clone();
        for k in 0..l {
            x = self.layer_forward(k, &x, tape.batch, meter)?;
        }
        Ok(x)
    }

    /// Layer-by-layer backward pass fused with the SGD update.
    ///
    /// `grad_out` is `dL/dx_L` for the batch recorded in `tape`.
    pub fn backward_and_update(
        &mut self,
        tape: &ActivationTape,
        grad_out: &[f32],
        lr: f32,
        opts: UpdateOptions,
        meter: &mut MemoryMeter,
    ) -> Result<()> {
        let expected = if tape.recompute { 1 } else { self.layers.len() };
        if tape.inputs.len() != expected || grad_out.len() != tape.batch * self.n_out() {
            return Err(Error::Shape("activation tape does not match the model".into()));
        }
        let batch = tape.batch;
        let largest = self.layers.iter().map(|l| l.n_in * l.n_out).max().unwrap_or(0);
        let mut gw = vec![0f32; largest];
        meter.acquire_grad(4 * largest);
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let x_prev = self.layer_input(tape, l, meter)?;
            let layer = &mut self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let gw = &mut gw[..n_in * n_out];
            let need_dx = l > 0;
            let dx = layer.update_weight(l, meter, |w| {
                kernels::weight_grad(&delta, &x_prev, batch, n_in, n_out, gw);
                let mut dx = None;
                if need_dx && !opts.alg1_literal {
                    dx = Some(kernels::input_grad(w, &delta, batch, n_in, n_out));
                }
                kernels::sgd_update(w, gw, lr);
                if need_dx && opts.alg1_literal {
                    dx = Some(kernels::input_grad(w, &delta, batch, n_in, n_out));
                }
                dx
            })?;
            let gb = kernels::bias_grad(&delta, batch, n_out);
            kernels::sgd_update(&mut layer.bias, &gb, lr);
            if let Some(mut dx) = dx {
                kernels::activation_grad(self.activation, &mut dx, &x_prev);
                delta = dx;
            }
        }
        meter.release_grad(4 * largest);
        Ok(())
    }

    /// CRC32 of each layer's weight bits followed by its bias bits.
    pub fn checksums(&self) -> Result<Vec<u32>> {
        self.layers
            .iter()
            .map(|l| {
                let mut h = crc32fast::Hasher::new();
                for v in l.weight()?.iter().chain(&l.bias) {
                    h.update(&v.to_bits().to_le_bytes());
                }
                Ok(h.finalize())
            })
            .collect()
    }
}
