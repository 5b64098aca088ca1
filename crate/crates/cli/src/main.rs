use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use klms_core::config::ExperimentConfig;
use klms_core::drift::{drift_csv, run_drift, DriftConfig};
use klms_core::sim::{run_experiment, write_report};
use klms_core::toy::{run_toy, toy_csv, ToyConfig};
use klms_core::{
    decode_update, encode_update, split_blocks_adaptive, CodecParams, Error, MessageHeader, ProductDistribution,
    StreamKey,
};

/// KLMS federated compression experiments.
#[derive(Parser)]
#[command(name = "klms", version)]
struct Cli {
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment and write metrics.csv and summary.json.
    Train { config: PathBuf },
    /// Run the Gaussian mean-estimation grid; defaults apply without a config.
    Toy { config: Option<PathBuf> },
    /// Compare adaptive and fixed blocks on a drifting Bernoulli sequence.
    Drift { config: Option<PathBuf> },
    /// Check a config file and print OK.
    Validate { config: PathBuf },
    /// Encode and decode 10^6 Bernoulli coordinates and report throughput.
    CodecBench,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config } => train(&config, cli.seed, cli.out),
        Command::Toy { config } => toy(config.as_deref(), cli.seed, cli.out),
        Command::Drift { config } => drift(config.as_deref(), cli.seed, cli.out),
        Command::Validate { config } => validate(&config),
        Command::CodecBench => codec_bench(cli.seed.unwrap_or(0), cli.out),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, value: serde_json::Value) -> Result<T, Error> {
    serde_json::from_value(value).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load_toy(path: &Path) -> Result<ToyConfig, Error> {
    let cfg: ToyConfig = parse_json(path, read_json(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_drift(path: &Path) -> Result<DriftConfig, Error> {
    let cfg: DriftConfig = parse_json(path, read_json(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn train(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = run_experiment(&cfg)?;
    write_report(&out, &report)?;
    let s = &report.summary;
    println!(
        "{} rounds, accuracy {:.4} (train {:.4}), payload {:.4} bpp, total {:.4} bpp -> {}",
        s.rounds,
        s.final_accuracy,
        s.final_train_accuracy,
        s.mean_bpp_payload,
        s.mean_bpp_total,
        out.display()
    );
    Ok(())
}

fn toy(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Error> {
    let mut cfg = match path {
        Some(p) => load_toy(p)?,
        None => ToyConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let rows = run_toy(&cfg)?;
    let csv = toy_csv(&rows)?;
    let out = out.unwrap_or_else(|| PathBuf::from("out"));
    write_file(&out.join("toy.csv"), &csv)?;
    let summary = serde_json::json!({ "config": cfg, "rows": rows });
    write_file(
        &out.join("toy_summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    print!("{csv}");
    Ok(())
}

fn drift(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Error> {
    let mut cfg = match path {
        Some(p) => load_drift(p)?,
        None => DriftConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = run_drift(&cfg)?;
    let out = out.unwrap_or_else(|| PathBuf::from("out"));
    write_file(&out.join("drift.csv"), &drift_csv(&report))?;
    let summary = serde_json::json!({
        "config": cfg,
        "fixed_block_size": report.fixed_block_size,
        "mean_bits_to_bound": report.mean_bits_to_bound,
        "fixed_off_budget_fraction": report.fixed_off_budget_fraction,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out.join("drift_summary.json"), &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(())
}

/// Experiment configs carry `method`, drift configs carry `dim`, anything
/// else is read as a toy config.
fn validate(path: &Path) -> Result<(), Error> {
    let value = read_json(path)?;
    if value.get("method").is_some() {
        ExperimentConfig::load(path)?;
    } else if value.get("dim").is_some() {
        load_drift(path)?;
    } else {
        load_toy(path)?;
    }
    println!("OK");
    Ok(())
}

fn codec_bench(seed: u64, out: Option<PathBuf>) -> Result<(), Error> {
    const D: usize = 1_000_000;
    let params = CodecParams {
        d_kl_target: 3.0,
        ..CodecParams::default()
    };
    let root = StreamKey::new(seed).with("bench", 0);
    let mut s = root.child("dist", 0).stream();
    let p_probs: Vec<f64> = (0..D).map(|_| 0.2 + 0.6 * s.next_uniform()).collect();
    let q_probs: Vec<f64> = p_probs
        .iter()
        .map(|&p| (p + 0.3 * (s.next_uniform() - 0.5)).clamp(0.01, 0.99))
        .collect();
    let q = ProductDistribution::bernoulli(q_probs)?;
    let p = ProductDistribution::bernoulli(p_probs)?;
    let kl = q.kl_per_coordinate(&p)?;
    let partition = split_blocks_adaptive(&kl, &params)?;
    let key = root.child("codec", 0);

    let t0 = Instant::now();
    let enc = encode_update(&q, &p, &partition, &params, &key, MessageHeader::default(), false)?;
    let encode_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let decoded = decode_update(&p, &partition, &params, &key, &enc.update)?;
    let decode_secs = t1.elapsed().as_secs_f64();

    let mismatches = decoded.iter().zip(&enc.samples).filter(|(a, b)| a != b).count();
    let bits: Vec<u8> = decoded.iter().map(|&v| v as u8).collect();
    let checksum: String = Sha256::digest(&bits).iter().map(|b| format!("{b:02x}")).collect();
    let report = serde_json::json!({
        "coordinates": D,
        "blocks": partition.num_blocks(),
        "total_kl_nats": kl.iter().sum::<f64>(),
        "payload_bits": enc.cost.payload_bits,
        "bpp_payload": enc.cost.payload_bpp(),
        "encode_coords_per_sec": D as f64 / encode_secs,
        "decode_coords_per_sec": D as f64 / decode_secs,
        "mismatches": mismatches,
        "checksum": checksum,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = out {
        write_file(&dir.join("codec_bench.json"), &(text + "\n"))?;
    }
    if mismatches != 0 {
        return Err(Error::InvalidParameter(format!("{mismatches} round-trip mismatches")));
    }
    Ok(())
}
