use std::fmt::Write as _;
use std::str::FromStr;

use super::{kernels, Activation, MemoryMeter, MlpModel, UpdateOptions};
use crate::bitfloat::Bf16;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Raw BF16 weights.
    Vanilla,
    /// Weights stored as lossless blobs, decompressed per layer.
    NeuZip,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "neuzip" => Ok(Mode::NeuZip),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vanilla => "vanilla",
            Mode::NeuZip => "neuzip",
        })
    }
}

/// Regression onto a hidden random linear map.
///
/// Inputs are standard normal; targets are `T x` with `T` Gaussian of std
/// `1/sqrt(n_in)`. Batch `s` draws from its own substream, so step `s`
/// always sees the same data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub n_in: usize,
    pub n_out: usize,
    rng: CounterRng,
    teacher: Vec<f64>,
}

const HELD_OUT: u64 = u64::MAX;

impl SyntheticTask {
    pub fn new(n_in: usize, n_out: usize, seed: u64) -> Self {
        let rng = CounterRng::new(seed).substream(0x7A5C);
        let teacher = rng.substream(0).gaussians(n_in * n_out, 1.0 / (n_in as f64).sqrt());
        Self {
            n_in,
            n_out,
            rng: rng.substream(1),
            teacher,
        }
    }

    /// `(inputs, targets)`, both row-major `batch x features`.
    pub fn batch(&self, step: u64, batch: usize) -> (Vec<Bf16>, Vec<Bf16>) {
        let x: Vec<Bf16> = self
            .rng
            .substream(step)
            .gaussians(batch * self.n_in, 1.0)
            .into_iter()
            .map(Bf16::from_f64)
            .collect();
        let mut t = Vec::with_capacity(batch * self.n_out);
        for xb in x.chunks_exact(self.n_in) {
            for row in self.teacher.chunks_exact(self.n_in) {
                let v: f64 = row.iter().zip(xb).map(|(a, b)| a * b.to_f64()).sum();
                t.push(Bf16::from_f64(v));
            }
        }
        (x, t)
    }

    /// A fixed batch never used for training.
    pub fn held_out(&self, batch: usize) -> (Vec<Bf16>, Vec<Bf16>) {
        self.batch(HELD_OUT, batch)
    }

    pub fn loss(&self, model: &MlpModel, data: &(Vec<Bf16>, Vec<Bf16>)) -> Result<f32> {
        let batch = data.0.len() / self.n_in;
        let y = model.predict(&data.0, batch)?;
        Ok(kernels::mse(&y, &data.1).0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
    pub mode: Mode,
    /// Layer widths, input first.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub alg1_literal: bool,
    /// Keep only the network input and recompute layer inputs in backward.
    pub recompute: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            lr: 0.05,
            steps: 200,
            batch: 32,
            mode: Mode::NeuZip,
            dims: vec![32, 64, 64, 1],
            activation: Activation::Relu,
            alg1_literal: false,
            recompute: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!("bad layer dims {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn task(&self) -> SyntheticTask {
        SyntheticTask::new(self.dims[0], self.dims[self.dims.len() - 1], self.seed)
    }

    pub fn init_model(&self) -> Result<MlpModel> {
        MlpModel::random(&self.dims, self.activation, self.seed, self.mode == Mode::NeuZip)
    }
}

/// Per-step losses plus final per-layer weight checksums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTrace {
    pub losses: Vec<u32>,
    pub checksums: Vec<u32>,
}

impl TrainTrace {
    pub fn loss(&self, step: usize) -> f32 {
        f32::from_bits(self.losses[step])
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// `step,loss_bits` with the loss as 8 lowercase hex digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss_bits\n");
        for (i, b) in self.losses.iter().enumerate() {
            writeln!(s, "{i},{b:08x}").unwrap();
        }
        s
    }
}

/// Trains and returns the trace, the final model and the memory meter.
pub fn train_model(config: &TrainConfig) -> Result<(TrainTrace, MlpModel, MemoryMeter)> {
    config.validate()?;
    let task = config.task();
    let mut model = config.init_model()?;
    let mut meter = model.meter();
    let opts = UpdateOptions {
        alg1_literal: config.alg1_literal,
    };
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (x, t) = task.batch(step as u64, config.batch);
        let (y, tape) = model.forward_with(&x, config.batch, config.recompute, &mut meter)?;
        let (loss, grad) = kernels::mse(&y, &t);
        losses.push(loss.to_bits());
        model.backward_and_update(&tape, &grad, config.lr, opts, &mut meter)?;
    }
    let checksums = model.checksums()?;
    Ok((TrainTrace { losses, checksums }, model, meter))
}

pub fn train(config: &TrainConfig) -> Result<TrainTrace> {
    Ok(train_model(config)?.0)
}
