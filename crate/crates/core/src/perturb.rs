//! Weight-noise tolerance: uniform noise with magnitude `max(a, r |w|)`.

use std::fmt::Write as _;

use crate::bitfloat::Bf16;
use crate::error::{Error, Result};
use crate::fmt::sig6;
use crate::nn::{kernels, LinearLayer, MlpModel};
use crate::par;
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    /// Absolute magnitude `a`.
    pub abs_mag: f64,
    /// Relative magnitude `r`.
    pub rel_mag: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(abs_mag: f64, rel_mag: f64, seed: u64) -> Result<Self> {
        let s = Self { abs_mag, rel_mag, seed };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("absolute", self.abs_mag), ("relative", self.rel_mag)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} magnitude must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Stream keyed on `(seed, a, r, tag)` so grid cells are schedule-independent.
    fn stream(&self, tag: u64) -> CounterRng {
        CounterRng::new(self.seed)
            .substream(self.abs_mag.to_bits())
            .substream(self.rel_mag.to_bits())
            .substream(tag)
    }
}

/// Replaces each `w` by a uniform draw from `[w - ρ, w + ρ]`,
/// `ρ = max(a, r |w|)`, rounded to BF16.
pub fn perturb_weights(values: &[Bf16], spec: &PerturbSpec) -> Result<Vec<Bf16>> {
    perturb_stream(values, spec, 0)
}

fn perturb_stream(values: &[Bf16], spec: &PerturbSpec, tag: u64) -> Result<Vec<Bf16>> {
    spec.validate()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let rng = spec.stream(tag);
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = v.to_f64();
            let rho = spec.abs_mag.max(spec.rel_mag * w.abs());
            if rho == 0.0 {
                v
            } else {
                let u = rng.uniform_at(i as u64);
                Bf16::from_f64(w + rho * (2.0 * u - 1.0))
            }
        })
        .collect())
}

/// Perturbs every weight matrix (biases untouched); layer `l` uses stream `l`.
pub fn perturb_model(model: &MlpModel, spec: &PerturbSpec) -> Result<MlpModel> {
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let w = perturb_stream(&layer.weight()?, spec, l as u64)?;
            LinearLayer::new(layer.n_in, layer.n_out, w, layer.bias.clone(), false)
        })
        .collect::<Result<Vec<_>>>()?;
    MlpModel::new(layers, model.activation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub a: f64,
    pub r: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub baseline: f64,
    /// Full cross product `a_list x r_list`, a-major.
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn loss_at(&self, a: f64, r: f64) -> Option<f64> {
        self.rows.iter().find(|row| row.a == a && row.r == r).map(|row| row.loss)
    }

    /// `a,r,loss`; the baseline comes first and stands in for any `(0, 0)` cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,r,loss\n");
        writeln!(s, "0,0,{}", sig6(self.baseline)).unwrap();
        for row in self.rows.iter().filter(|row| row.a != 0.0 || row.r != 0.0) {
            writeln!(s, "{},{},{}", sig6(row.a), sig6(row.r), sig6(row.loss)).unwrap();
        }
        s
    }
}

/// Held-out evaluation data: `batch x n_in` inputs and `batch x n_out` targets.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub x: Vec<Bf16>,
    pub t: Vec<Bf16>,
    pub batch: usize,
}

fn eval_loss(model: &MlpModel, data: &EvalData) -> Result<f64> {
    let y = model.predict(&data.x, data.batch)?;
    Ok(kernels::mse(&y, &data.t).0 as f64)
}

/// Loss for each `(a, r)` cell with one seed.
pub fn run_grid(model: &MlpModel, data: &EvalData, a_list: &[f64], r_list: &[f64], seed: u64) -> Result<GridResult> {
    run_grid_seeds(model, data, a_list, r_list, &[seed])
}

/// Loss for each `(a, r)` cell, averaged over `seeds`.
pub fn run_grid_seeds(
    model: &MlpModel,
    data: &EvalData,
    a_list: &[f64],
    r_list: &[f64],
    seeds: &[u64],
) -> Result<GridResult> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let raw = model.to_storage(false)?;
    let baseline = eval_loss(&raw, data)?;
    let cells: Vec<(f64, f64)> = a_list
        .iter()
        .flat_map(|&a| r_list.iter().map(move |&r| (a, r)))
        .collect();
    for &(a, r) in &cells {
        PerturbSpec::new(a, r, 0)?;
    }
    let rows = par::map_indexed(cells.len(), |i| -> Result<GridRow> {
        let (a, r) = cells[i];
        let mut total = 0.0;
        for &seed in seeds {
            let noisy = perturb_model(&raw, &PerturbSpec { abs_mag: a, rel_mag: r, seed })?;
            total += eval_loss(&noisy, data)?;
        }
        Ok(GridRow {
            a,
            r,
            loss: total / seeds.len() as f64,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(GridResult { baseline, rows })
}

/// `2^lo ..= 2^hi`.
pub fn powers_of_two(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
