//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Golden files under `tests/golden` are compared byte for byte; set
//! `NEUZIP_BLESS=1` to (re)write them.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::{Command, ExitCode};

use neuzip::ans::{self, build_table, count_symbols, TABLE_BYTES};
use neuzip::cli::analyze_csv;
use neuzip::entropy::cross_entropy;
use neuzip::nn::{grad_check_batch, train_model, Activation, MlpModel, Mode, TrainConfig};
use neuzip::perturb::{powers_of_two, run_grid_seeds, spearman, EvalData};
use neuzip::rng::CounterRng;
use neuzip::tensorstore::{self, read_nzt, write_bft, write_nzt, Blob, Bf16Tensor};
use neuzip::Bf16;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn blessing() -> bool {
    std::env::var_os("NEUZIP_BLESS").is_some_and(|v| v != "0")
}

/// Compares `actual` with a golden file, writing it when blessing.
fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_dir().join(name);
    if blessing() {
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expect = fs::read(&path).map_err(|e| format!("{}: {e} (run with NEUZIP_BLESS=1)", path.display()))?;
    ensure(expect == actual, || format!("{name} differs from golden copy"))
}

fn gaussian(n: usize, seed: u64) -> Vec<Bf16> {
    CounterRng::new(seed).gaussians(n, 0.02).into_iter().map(Bf16::from_f64).collect()
}

fn tensor(v: Vec<Bf16>) -> Bf16Tensor {
    Bf16Tensor::from_vec(v).unwrap()
}

// 1. Lossless universality.
fn lossless_universality() -> Outcome {
    let all: Vec<Bf16> = (0..=u16::MAX).map(Bf16).collect();
    let mut corpora = vec![("all patterns", all.clone()), ("gaussian", gaussian(1_000_000, 1))];
    let mut mixed = gaussian(1_000_000, 2);
    mixed.extend_from_slice(&all);
    let rng = CounterRng::new(3);
    for i in (1..mixed.len()).rev() {
        mixed.swap(i, (rng.u64_at(i as u64) % (i as u64 + 1)) as usize);
    }
    corpora.push(("shuffled mix", mixed));
    let mut total = 0;
    for (name, data) in corpora {
        let x = tensor(data);
        let blob = tensorstore::compress(&x, 7, 512).map_err(|e| e.to_string())?;
        let mut file = Vec::new();
        write_nzt(&blob, &mut file).unwrap();
        let y = read_nzt(&file[..]).unwrap().decompress().unwrap();
        let mismatches = x.data().iter().zip(y.data()).filter(|(a, b)| a.0 != b.0).count();
        ensure(y.len() == x.len() && mismatches == 0, || format!("{name}: {mismatches} mismatches"))?;
        total += x.len();
    }
    Ok(format!("{total} values, 0 mismatches"))
}

// 2. Entropy-coder near-optimality.
fn ans_near_optimal() -> Outcome {
    let n = 1usize << 20;
    let rng = CounterRng::new(0xA5);
    let uniform: Vec<u8> = (0..n as u64).map(|i| rng.u64_at(i) as u8).collect();
    // P(s) ∝ 1/(s+1) by inverse CDF
    let weights: Vec<f64> = (0..256).map(|s| 1.0 / (s as f64 + 1.0)).collect();
    let z: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(256);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / z;
        cdf.push(acc);
    }
    let zipf: Vec<u8> = (0..n as u64)
        .map(|i| {
            let u = rng.substream(1).uniform_at(i);
            cdf.iter().position(|&c| u < c).unwrap_or(255) as u8
        })
        .collect();
    let constant = vec![0x7Eu8; n];

    let mut report = Vec::new();
    for (name, symbols) in [("uniform", &uniform), ("zipf", &zipf), ("constant", &constant)] {
        let counts = count_symbols(symbols);
        let table = build_table(&counts).unwrap();
        let h_q = cross_entropy(&counts, table.freqs()).unwrap();
        let stream = ans::encode(symbols, &table).unwrap();
        ensure(ans::decode(&stream).unwrap() == *symbols, || format!("{name}: round trip failed"))?;
        let payload = stream.to_bytes().len() + TABLE_BYTES;
        let bound = 1.02 * n as f64 * h_q / 8.0 + 64.0 * stream.chunks.len() as f64 + 512.0;
        ensure(payload as f64 <= bound, || format!("{name}: {payload} > bound {bound:.0}"))?;
        if name == "uniform" {
            let body = stream.to_bytes().len() as f64 / n as f64;
            ensure((1.0..=1.02).contains(&body), || format!("uniform: {body:.4} x n"))?;
        }
        report.push(format!("{name} {payload}/{bound:.0}"));
    }
    Ok(report.join(", "))
}

// 3. Compressibility of Gaussian weights.
fn gaussian_compressibility() -> Outcome {
    let v = gaussian(1 << 20, 0xA11CE);
    // independent histogram straight from the bit pattern
    let mut exp = [0u64; 256];
    let mut mant = [0u64; 128];
    for b in &v {
        exp[((b.0 >> 7) & 0xFF) as usize] += 1;
        mant[(b.0 & 0x7F) as usize] += 1;
    }
    let h = |c: &[u64]| -> f64 {
        let n: u64 = c.iter().sum();
        c.iter()
            .filter(|&&k| k > 0)
            .map(|&k| {
                let p = k as f64 / n as f64;
                -p * p.log2()
            })
            .sum()
    };
    let (h_exp, h_mant) = (h(&exp), h(&mant));
    ensure(h_exp < 5.0, || format!("h_exp {h_exp}"))?;
    ensure(h_mant > 6.8, || format!("h_mant {h_mant}"))?;

    let x = tensor(v.clone());
    let blob = tensorstore::compress(&x, 7, 512).unwrap();
    let mut file = Vec::new();
    write_nzt(&blob, &mut file).unwrap();
    ensure(file.len() == blob.footprint().total(), || "footprint total != file size".into())?;
    let achieved = (2 * x.len()) as f64 / file.len() as f64;
    let predicted = 16.0 / (1.0 + 1.02 * h_exp + 7.0);
    let dev = (achieved - predicted).abs() / predicted;
    ensure(dev <= 0.01, || format!("ratio {achieved:.4} vs predicted {predicted:.4}"))?;

    let csv = analyze_csv(&v, false).unwrap();
    check_golden("gaussian_analyze.csv", csv.as_bytes())?;
    Ok(format!(
        "h_exp {h_exp:.3}, h_mant {h_mant:.3}, ratio {achieved:.4} vs {predicted:.4} ({:.2}%)",
        dev * 100.0
    ))
}

fn block_max_index(block: &[Bf16]) -> usize {
    let mut best = 0;
    for (i, v) in block.iter().enumerate() {
        if (v.0 & 0x7FFF) > (block[best].0 & 0x7FFF) {
            best = i;
        }
    }
    best
}

// 4. Lossy error bound.
fn lossy_error_bound() -> Outcome {
    let v = gaussian(100_000, 4);
    let x = tensor(v.clone());
    let mut worst = BTreeMap::new();
    for k in [0u8, 1, 3] {
        let y = tensorstore::compress(&x, k, 512).unwrap().decompress().unwrap();
        let limit = 2f64.powi(-(k as i32)) + 2f64.powi(-7);
        let mut max_rel = 0f64;
        for (a, b) in v.iter().zip(y.data()) {
            let (a, b) = (a.to_f64(), b.to_f64());
            if a == 0.0 {
                ensure(b == 0.0, || format!("k={k}: zero became {b}"))?;
                continue;
            }
            max_rel = max_rel.max(((b - a) / a).abs());
        }
        ensure(max_rel <= limit, || format!("k={k}: max relative error {max_rel} > {limit}"))?;
        for (bi, block) in v.chunks(512).enumerate() {
            let i = bi * 512 + block_max_index(block);
            ensure(y.data()[i] == v[i], || format!("k={k}: block {bi} max not exact"))?;
        }
        worst.insert(k, max_rel);
    }
    Ok(worst
        .iter()
        .map(|(k, e)| format!("k={k} max rel {e:.4}"))
        .collect::<Vec<_>>()
        .join(", "))
}

// 5. Block-size trade-off.
fn block_size_tradeoff() -> Outcome {
    let v = gaussian(1 << 17, 5);
    let x = tensor(v.clone());
    let mut report = Vec::new();
    for k in [0u8, 1, 3] {
        let mut err = Vec::new();
        let mut scales = Vec::new();
        for b in [512usize, 32] {
            let blob = tensorstore::compress(&x, k, b).unwrap();
            scales.push(blob.footprint().scale_bytes);
            let y = blob.decompress().unwrap();
            let e: f64 = v.iter().zip(y.data()).map(|(a, b)| (a.to_f64() - b.to_f64()).abs()).sum::<f64>() / v.len() as f64;
            err.push(e);
        }
        ensure(err[1] < err[0], || format!("k={k}: error {} (B=32) !< {} (B=512)", err[1], err[0]))?;
        ensure(scales[1] == 16 * scales[0], || format!("k={k}: scales {} vs {}", scales[1], scales[0]))?;
        report.push(format!("k={k} mae {:.3e}->{:.3e}", err[0], err[1]));
    }
    Ok(report.join(", ") + ", scale bytes x16")
}

// 6. Training-dynamics equivalence.
fn training_equivalence() -> Outcome {
    let run = |mode| train_model(&TrainConfig { mode, ..TrainConfig::default() }).unwrap().0;
    let (v, z) = (run(Mode::Vanilla), run(Mode::NeuZip));
    ensure(v.len() == 200, || format!("{} steps", v.len()))?;
    let diff = v.to_csv().lines().zip(z.to_csv().lines()).filter(|(a, b)| a != b).count();
    ensure(diff == 0, || format!("{diff} trace lines differ"))?;
    ensure(v.checksums == z.checksums, || "final weight checksums differ".into())?;
    Ok(format!(
        "200 steps identical, loss {:.4} -> {:.4}",
        v.loss(0),
        v.loss(v.len() - 1)
    ))
}

// 7. Gradient correctness.
fn gradient_correctness() -> Outcome {
    let rng = CounterRng::new(7);
    let mut worst = 0f32;
    for m in 0..40u64 {
        let r = rng.substream(m);
        let depth = 2 + (r.u64_at(0) % 3) as usize;
        let dims: Vec<usize> = (0..depth).map(|i| 1 + (r.u64_at(1 + i as u64) % 8) as usize).collect();
        let act = if m % 4 == 0 { Activation::None } else { Activation::Relu };
        let model = MlpModel::random(&dims, act, m, m % 2 == 1).unwrap();
        let batch = 1 + (r.u64_at(9) % 6) as usize;
        let to_bf = |v: Vec<f64>| v.into_iter().map(Bf16::from_f64).collect::<Vec<_>>();
        let x = to_bf(r.substream(1).gaussians(batch * dims[0], 1.0));
        let t = to_bf(r.substream(2).gaussians(batch * dims[depth - 1], 1.0));
        let dev = grad_check_batch(&model, &x, &t, batch, 1e-3).unwrap();
        ensure(dev < 1e-3, || format!("model {m} dims {dims:?}: deviation {dev}"))?;
        worst = worst.max(dev);
    }
    Ok(format!("40 models, max deviation {worst:.2e}"))
}

// 8. Memory accounting.
fn memory_accounting() -> Outcome {
    let (_, model, meter) = train_model(&TrainConfig::default()).unwrap();
    ensure(meter.events > 0, || "no events recorded".into())?;
    ensure(meter.peak_weight_buffers <= 1, || format!("{} live weight buffers", meter.peak_weight_buffers))?;
    ensure(meter.bound_violations == 0, || format!("{} bound violations", meter.bound_violations))?;
    ensure(
        meter.peak_uncompressed_bytes <= model.largest_raw_weight_bytes(),
        || format!("{} uncompressed bytes resident", meter.peak_uncompressed_bytes),
    )?;
    Ok(format!(
        "peak buffers {}, peak resident {} B (largest raw {} B, compressed now {} B), {} events",
        meter.peak_weight_buffers,
        meter.peak_resident_bytes,
        model.largest_raw_weight_bytes(),
        meter.compressed_total(),
        meter.events
    ))
}

// 9. Perturbation tolerance.
fn perturbation_tolerance() -> Outcome {
    let cfg = TrainConfig {
        mode: Mode::Vanilla,
        ..TrainConfig::default()
    };
    let (_, model, _) = train_model(&cfg).unwrap();
    let (x, t) = cfg.task().held_out(256);
    let data = EvalData { x, t, batch: 256 };
    let rs = powers_of_two(-10, -1);
    let seeds: Vec<u64> = (0..10).collect();
    let g = run_grid_seeds(&model, &data, &[0.0], &rs, &seeds).unwrap();
    let losses: Vec<f64> = rs.iter().map(|&r| g.loss_at(0.0, r).unwrap()).collect();
    let small = (losses[0] - g.baseline).abs() / g.baseline;
    ensure(small <= 0.01, || format!("r=2^-10 moved loss by {:.3}%", small * 100.0))?;
    ensure(losses[9] > g.baseline, || format!("r=2^-1 loss {} <= baseline {}", losses[9], g.baseline))?;
    let rho = spearman(&rs, &losses);
    ensure(rho >= 0.8, || format!("spearman {rho}"))?;
    Ok(format!(
        "baseline {:.4}, r=2^-10 {:+.3}%, r=2^-1 {:.4}, spearman {rho:.3}",
        g.baseline,
        (losses[0] / g.baseline - 1.0) * 100.0,
        losses[9]
    ))
}

// 10. Format stability.
fn format_stability() -> Outcome {
    let cases: Vec<(&str, Bf16Tensor, u8, usize)> = vec![
        ("const16_k7.nzt", Bf16Tensor::new(vec![4, 4], vec![Bf16::ONE; 16]).unwrap(), 7, 512),
        (
            "gauss64_k3_b8.nzt",
            Bf16Tensor::new(vec![8, 8], gaussian(64, 10)).unwrap(),
            3,
            8,
        ),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_neuzip");
    let mut corrupted = 0;
    for (name, x, k, b) in cases {
        let blob = tensorstore::compress(&x, k, b).unwrap();
        let mut bytes = Vec::new();
        write_nzt(&blob, &mut bytes).unwrap();
        check_golden(name, &bytes)?;

        let golden = fs::read(golden_dir().join(name)).map_err(|e| e.to_string())?;
        let parsed: Blob = read_nzt(&golden[..]).map_err(|e| format!("{name}: {e}"))?;
        let mut again = Vec::new();
        write_nzt(&parsed, &mut again).unwrap();
        ensure(again == golden, || format!("{name}: re-serialization differs"))?;
        let y = parsed.decompress().unwrap();
        if k == 7 {
            ensure(y == x, || format!("{name}: lossless decode differs"))?;
        }

        // the CLI must reproduce the golden file from the same BFT input
        let bft = dir.path().join("in.bft");
        let mut raw = Vec::new();
        write_bft(&x, &mut raw).unwrap();
        fs::write(&bft, raw).unwrap();
        let out = dir.path().join("out.nzt");
        let status = Command::new(bin)
            .args(["compress", "-p", &k.to_string(), "--block-size", &b.to_string()])
            .arg(&bft)
            .arg(&out)
            .output()
            .unwrap();
        ensure(status.status.code() == Some(0), || format!("{name}: compress exited {:?}", status.status))?;
        ensure(fs::read(&out).unwrap() == golden, || format!("{name}: CLI output differs"))?;

        let bad = dir.path().join("bad.nzt");
        let back = dir.path().join("back.bft");
        for pos in 4..golden.len() {
            let mut g = golden.clone();
            g[pos] ^= 1 << (pos % 8);
            fs::write(&bad, &g).unwrap();
            let code = Command::new(bin).arg("decompress").arg(&bad).arg(&back).output().unwrap().status.code();
            ensure(code == Some(4), || format!("{name}: flip at byte {pos} exited {code:?}"))?;
            corrupted += 1;
        }
    }
    Ok(format!("2 golden files stable, {corrupted} corruptions all exit 4"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("lossless universality", lossless_universality),
        ("entropy-coder near-optimality", ans_near_optimal),
        ("gaussian compressibility", gaussian_compressibility),
        ("lossy error bound", lossy_error_bound),
        ("block-size trade-off", block_size_tradeoff),
        ("training-dynamics equivalence", training_equivalence),
        ("gradient correctness", gradient_correctness),
        ("memory accounting", memory_accounting),
        ("perturbation tolerance", perturbation_tolerance),
        ("format stability", format_stability),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
