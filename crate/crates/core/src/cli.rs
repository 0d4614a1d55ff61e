//! `neuzip` command-line front end.
//!
//! Exit codes: 0 success, 2 bad arguments or unreadable/malformed input,
//! 3 NaN/Inf on the lossy path, 4 checksum failure, 5 trace divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::entropy::{shannon_entropy, ComponentHistogram};
use crate::error::Error;
use crate::fmt::sig6;
use crate::nn::{train_model, Mode, TrainConfig, TrainTrace};
use crate::perturb::{powers_of_two, run_grid_seeds, EvalData};
use crate::rng::CounterRng;
use crate::tensorstore::{self, read_bft, read_nzt, write_bft, write_nzt, Bf16Tensor, DEFAULT_BLOCK_SIZE};
use crate::{par, Bf16};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_CHECKSUM: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "NEUZIP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "neuzip", version, about = "Entropy-coded BF16 weight compression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-component entropy of a BFT tensor, as CSV.
    Analyze {
        input: PathBuf,
        /// Also dump every histogram bin.
        #[arg(long)]
        hist: bool,
    },
    /// BFT -> NZT.
    Compress {
        input: PathBuf,
        output: PathBuf,
        /// Mantissa bits kept: 0, 1, 3, or 7 for lossless.
        #[arg(short, long, default_value_t = 7, value_parser = parse_precision)]
        precision: u8,
        #[arg(short, long, default_value_t = DEFAULT_BLOCK_SIZE, value_parser = parse_block_size)]
        block_size: usize,
    },
    /// NZT -> BFT.
    Decompress { input: PathBuf, output: PathBuf },
    /// Compression/decompression throughput on Gaussian BF16 matrices.
    Bench {
        /// Comma-separated sizes in bytes (>= 4096).
        #[arg(long, default_value = "1e5,1e6,1e7,1e8", value_parser = parse_sizes)]
        sizes: Sizes,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
        trials: u32,
        #[arg(short, long, default_value_t = 7, value_parser = parse_precision)]
        precision: u8,
        #[arg(short, long, default_value_t = DEFAULT_BLOCK_SIZE, value_parser = parse_block_size)]
        block_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy MLP with raw and/or compressed weights and emit loss traces.
    TrainDemo {
        #[arg(long, value_enum, default_value_t = DemoMode::Both)]
        mode: DemoMode,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Take the input gradient from the already-updated weight.
        #[arg(long)]
        alg1_literal: bool,
        /// Recompute layer inputs in backward instead of saving them.
        #[arg(long)]
        recompute: bool,
        /// Write trace_<mode>.csv and checksums_<mode>.csv here instead of stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Loss of the trained toy MLP under uniform weight noise, as CSV.
    PerturbGrid {
        /// Absolute magnitudes; values or 2^k terms.
        #[arg(long, value_parser = parse_magnitudes)]
        a_list: Option<Magnitudes>,
        /// Relative magnitudes; values or 2^k terms.
        #[arg(long, value_parser = parse_magnitudes)]
        r_list: Option<Magnitudes>,
        /// Number of noise seeds averaged per cell.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Training steps for the model under test.
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 256)]
        eval_batch: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoMode {
    Vanilla,
    Neuzip,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sizes(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct Magnitudes(pub Vec<f64>);

fn parse_precision(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(k @ (0 | 1 | 3 | 7)) => Ok(k),
        _ => Err(format!("unsupported precision {s:?}; expected 0, 1, 3 or 7")),
    }
}

fn parse_block_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(b) if b >= 1 && b <= u32::MAX as usize => Ok(b),
        _ => Err(format!("block size must be a positive 32-bit integer, got {s:?}")),
    }
}

fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let sizes = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            let v = t
                .parse::<u64>()
                .map(|v| v as f64)
                .or_else(|_| t.parse::<f64>())
                .map_err(|_| format!("bad size {t:?}"))?;
            if !(v.is_finite() && v >= 4096.0 && v.fract() == 0.0) {
                return Err(format!("size {t:?} must be an integer >= 4096"));
            }
            Ok(v as usize)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sizes(sizes))
}

fn parse_magnitude(t: &str) -> Result<f64, String> {
    let t = t.trim();
    let v = if let Some(e) = t.strip_prefix("2^") {
        let e: i32 = e.parse().map_err(|_| format!("bad exponent in {t:?}"))?;
        2f64.powi(e)
    } else {
        t.parse::<f64>().map_err(|_| format!("bad magnitude {t:?}"))?
    };
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("magnitude {t:?} must be finite and >= 0"));
    }
    Ok(v)
}

fn parse_magnitudes(s: &str) -> Result<Magnitudes, String> {
    s.split(',').map(parse_magnitude).collect::<Result<_, _>>().map(Magnitudes)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_NON_FINITE,
        Error::Checksum { .. } => EXIT_CHECKSUM,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            par::init_threads(n);
        }
    }
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "neuzip: {e}");
            exit_code(&e)
        }
    }
}

fn open(path: &Path) -> crate::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> crate::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> crate::Result<i32> {
    match cmd {
        Command::Analyze { input, hist } => {
            let t = read_bft(open(&input)?)?;
            out.write_all(analyze_csv(t.data(), hist)?.as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Compress {
            input,
            output,
            precision,
            block_size,
        } => {
            let t = read_bft(open(&input)?)?;
            let blob = tensorstore::compress(&t, precision, block_size)?;
            let mut w = create(&output)?;
            write_nzt(&blob, &mut w)?;
            w.flush()?;
            out.write_all(footprint_csv(&blob, t.len()).as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Decompress { input, output } => {
            let blob = read_nzt(open(&input)?)?;
            let t = blob.decompress()?;
            let mut w = create(&output)?;
            write_bft(&t, &mut w)?;
            w.flush()?;
            Ok(EXIT_OK)
        }
        Command::Bench {
            sizes,
            trials,
            precision,
            block_size,
            seed,
        } => {
            writeln!(out, "direction,size_bytes,gib_per_s")?;
            for size in sizes.0 {
                let (c, d) = bench_one(size, trials, precision, block_size, seed)?;
                writeln!(out, "compress,{size},{}", sig6(c))?;
                writeln!(out, "decompress,{size},{}", sig6(d))?;
                out.flush()?;
            }
            Ok(EXIT_OK)
        }
        Command::TrainDemo {
            mode,
            steps,
            lr,
            seed,
            batch,
            alg1_literal,
            recompute,
            out_dir,
        } => {
            let base = TrainConfig {
                seed,
                lr,
                steps,
                batch,
                alg1_literal,
                recompute,
                ..TrainConfig::default()
            };
            base.validate()?;
            if let Some(dir) = &out_dir {
                fs::create_dir_all(dir)?;
            }
            let modes: &[Mode] = match mode {
                DemoMode::Vanilla => &[Mode::Vanilla],
                DemoMode::Neuzip => &[Mode::NeuZip],
                DemoMode::Both => &[Mode::Vanilla, Mode::NeuZip],
            };
            let mut traces = Vec::new();
            for &m in modes {
                // the literal update order only differs from textbook
                // backprop on the compressed path
                let cfg = TrainConfig {
                    mode: m,
                    alg1_literal: alg1_literal && m == Mode::NeuZip,
                    ..base.clone()
                };
                let (trace, _, meter) = train_model(&cfg)?;
                emit_trace(m, &trace, out_dir.as_deref(), out)?;
                if m == Mode::NeuZip {
                    writeln!(
                        err,
                        "neuzip: peak live weight buffers {}, peak resident weight bytes {}",
                        meter.peak_weight_buffers, meter.peak_resident_bytes
                    )?;
                }
                traces.push(trace);
            }
            if traces.len() == 2 && traces[0] != traces[1] {
                writeln!(err, "neuzip: vanilla and neuzip traces diverge")?;
                return Ok(EXIT_DIVERGED);
            }
            Ok(EXIT_OK)
        }
        Command::PerturbGrid {
            a_list,
            r_list,
            seeds,
            seed,
            steps,
            eval_batch,
        } => {
            if eval_batch == 0 {
                return Err(Error::Config("eval batch must be at least 1".into()));
            }
            let default_axis = || {
                let mut v = vec![0.0];
                v.extend(powers_of_two(-10, -1));
                v
            };
            let a_list = a_list.map(|m| m.0).unwrap_or_else(default_axis);
            let r_list = r_list.map(|m| m.0).unwrap_or_else(default_axis);
            let cfg = TrainConfig {
                seed,
                steps,
                mode: Mode::Vanilla,
                ..TrainConfig::default()
            };
            let (_, model, _) = train_model(&cfg)?;
            let (x, t) = cfg.task().held_out(eval_batch);
            let data = EvalData { x, t, batch: eval_batch };
            let seed_list: Vec<u64> = (0..seeds).map(|i| seed.wrapping_add(i)).collect();
            let grid = run_grid_seeds(&model, &data, &a_list, &r_list, &seed_list)?;
            out.write_all(grid.to_csv().as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

/// The `analyze` report.
pub fn analyze_csv(values: &[Bf16], hist: bool) -> crate::Result<String> {
    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let h = ComponentHistogram::from_values(values);
    let r = h.report()?;
    let mut s = String::from("component,entropy_bits,capacity_bits\n");
    writeln!(s, "sign,{},1", sig6(r.h_sign)).unwrap();
    writeln!(s, "exponent,{},8", sig6(r.h_exp)).unwrap();
    writeln!(s, "mantissa,{},7", sig6(r.h_mant)).unwrap();
    writeln!(s, "ideal_ratio,{},", sig6(r.ideal_ratio)).unwrap();
    writeln!(s, "exponent_only_ratio,{},", sig6(r.exponent_only_ratio)).unwrap();
    if hist {
        s.push_str("\ncomponent,bin,count\n");
        for (name, counts) in [
            ("sign", &h.sign_counts[..]),
            ("exponent", &h.exp_counts[..]),
            ("mantissa", &h.mant_counts[..]),
        ] {
            debug_assert!(shannon_entropy(counts).is_ok());
            for (bin, c) in counts.iter().enumerate() {
                writeln!(s, "{name},{bin},{c}").unwrap();
            }
        }
    }
    Ok(s)
}

fn footprint_csv(blob: &tensorstore::Blob, elements: usize) -> String {
    let f = blob.footprint();
    let raw = 2 * elements;
    let mut s = String::from("item,value\n");
    writeln!(s, "precision,{}", blob.precision()).unwrap();
    writeln!(s, "exponent_bytes,{}", f.exponent_bytes).unwrap();
    writeln!(s, "mantissa_bytes,{}", f.mantissa_bytes).unwrap();
    writeln!(s, "scale_bytes,{}", f.scale_bytes).unwrap();
    writeln!(s, "table_bytes,{}", f.table_bytes).unwrap();
    writeln!(s, "header_bytes,{}", f.header_bytes).unwrap();
    writeln!(s, "total_bytes,{}", f.total()).unwrap();
    writeln!(s, "raw_bytes,{raw}").unwrap();
    writeln!(s, "ratio,{}", sig6(raw as f64 / f.total() as f64)).unwrap();
    s
}

fn emit_trace(mode: Mode, trace: &TrainTrace, dir: Option<&Path>, out: &mut dyn Write) -> crate::Result<()> {
    let mut sums = String::from("layer,crc32\n");
    for (l, c) in trace.checksums.iter().enumerate() {
        writeln!(sums, "{l},{c:08x}").unwrap();
    }
    match dir {
        Some(dir) => {
            fs::write(dir.join(format!("trace_{mode}.csv")), trace.to_csv())?;
            fs::write(dir.join(format!("checksums_{mode}.csv")), &sums)?;
            writeln!(out, "{mode}: {} steps -> {}", trace.len(), dir.display())?;
        }
        None => {
            writeln!(out, "# mode={mode}")?;
            out.write_all(trace.to_csv().as_bytes())?;
            writeln!(out, "# checksums")?;
            out.write_all(sums.as_bytes())?;
        }
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median compress and decompress throughput in GiB/s for one size.
pub fn bench_one(size: usize, trials: u32, precision: u8, block_size: usize, seed: u64) -> crate::Result<(f64, f64)> {
    let n = size / 2;
    let data: Vec<Bf16> = CounterRng::new(seed)
        .gaussians(n, 0.02)
        .into_iter()
        .map(Bf16::from_f64)
        .collect();
    let t = Bf16Tensor::from_vec(data)?;
    let gib = (2 * n) as f64 / (1u64 << 30) as f64;
    let mut comp = Vec::with_capacity(trials as usize);
    let mut decomp = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let start = Instant::now();
        let blob = tensorstore::compress(&t, precision, block_size)?;
        comp.push(gib / start.elapsed().as_secs_f64().max(1e-9));
        let start = Instant::now();
        let back = blob.decompress()?;
        decomp.push(gib / start.elapsed().as_secs_f64().max(1e-9));
        debug_assert_eq!(back.len(), n);
    }
    Ok((median(comp), median(decomp)))
}
