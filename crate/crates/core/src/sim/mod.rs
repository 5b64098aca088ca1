//! Deterministic single-process federated simulator.
//!
//! Every random choice draws from a stream keyed by the experiment seed and
//! its role, for example `("round", t) / ("client", c) / ("codec", 0)`, so
//! results do not depend on how rayon schedules clients.

mod client;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{
    aggregate_block_locations, decode_update, deserialize, should_update_partition, split_blocks_fixed, BlockPartition,
};
use crate::config::{DatasetSpec, ExperimentConfig, Method, Partitioning, Variant};
use crate::data::{load_csv, load_idx, partition_data, synthetic_separable, Dataset};
use crate::distributions::ProductDistribution;
use crate::error::{Error, Result};
use crate::methods::fedpm::FedPmState;
use crate::methods::{bayes_agg, qsgd_klms_global_distribution, sgld_server_step};
use crate::model::DeskModel;
use crate::rng::{shuffle, StreamKey};

use client::{client_step, sgld_params, Broadcast, Payload, Upload};

pub const METRICS_HEADER: [&str; 6] = [
    "round",
    "bpp_payload",
    "bpp_total",
    "accuracy",
    "mean_kl_per_param",
    "partition_updated",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub bpp_payload: f64,
    pub bpp_total: f64,
    pub accuracy: f64,
    pub mean_kl_per_param: f64,
    pub partition_updated: bool,
}

/// Loaded data, model shape and client shards for one configuration.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub model: DeskModel,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<Vec<usize>>,
    root: StreamKey,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let root = StreamKey::new(cfg.seed);
        let (train, test) = match &cfg.dataset {
            DatasetSpec::Synthetic {
                n_train,
                n_test,
                dim,
                margin,
            } => {
                let all = synthetic_separable(n_train + n_test, *dim, *margin, &mut root.child("data", 0).stream())?;
                let idx: Vec<usize> = (0..all.len()).collect();
                (all.subset(&idx[..*n_train]), all.subset(&idx[*n_train..]))
            }
            DatasetSpec::Csv { train, test } => (load_csv(train)?, load_csv(test)?),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            ),
        };
        if train.dim() != test.dim() {
            return Err(Error::config(
                "dataset",
                format!("train has {} features, test has {}", train.dim(), test.dim()),
            ));
        }
        let classes = train.num_classes().max(test.num_classes()).max(2);
        let model = DeskModel::new(cfg.model, train.dim(), classes);
        let split = partition_data(
            train.labels(),
            classes,
            cfg.clients,
            cfg.split.mode,
            cfg.split.c_max,
            &mut root.child("split", 0).stream(),
        )?;
        Ok(Self {
            cfg,
            model,
            train,
            test,
            shards: split.shards,
            root,
        })
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    /// `C` of `N` clients without replacement, in ascending order.
    pub fn participants(&self, round: u32) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.cfg.clients).collect();
        shuffle(
            &mut all,
            &mut self
                .root
                .child("round", u64::from(round))
                .child("participants", 0)
                .stream(),
        );
        all.truncate(self.cfg.participants);
        all.sort_unstable();
        all
    }

    pub fn initial_state(&self) -> Result<ServerState> {
        let w0 = self.model.init(1.0, &mut self.root.child("init", 0).stream());
        let fedpm = if self.cfg.method == Method::Fedpm {
            let w_init = self
                .model
                .init(self.cfg.fedpm.init_gain, &mut self.root.child("init", 1).stream());
            Some(FedPmState::new(w_init, self.cfg.fedpm.prior, self.cfg.fedpm.reset)?)
        } else {
            None
        };
        let partition = match self.cfg.partitioning {
            Partitioning::Fixed { block_size } => Some(split_blocks_fixed(self.num_params(), block_size)?),
            Partitioning::Adaptive => None,
        };
        Ok(ServerState {
            round: 0,
            weights: w0,
            fedpm,
            update_partition: matches!(self.cfg.partitioning, Partitioning::Adaptive),
            partition,
            prev_patterns: Vec::new(),
            totals: BitTotals::default(),
        })
    }

    /// Test accuracy of the current global model. FedPM evaluates one mask
    /// drawn from `theta` with a fixed stream.
    pub fn evaluate(&self, state: &ServerState, data: &Dataset) -> Result<f64> {
        let w = self.effective_weights(state)?;
        self.model.accuracy(&w, data)
    }

    fn effective_weights(&self, state: &ServerState) -> Result<Vec<f64>> {
        match &state.fedpm {
            Some(fp) => {
                let mask = ProductDistribution::bernoulli(fp.theta.clone())?
                    .sample(0..fp.theta.len(), &mut self.root.child("eval", 0).stream())?;
                Ok(fp.masked_weights(&mask))
            }
            None => Ok(state.weights.clone()),
        }
    }

    /// Codec reference distribution the server broadcasts this round.
    fn reference(&self, state: &ServerState) -> Result<Option<ProductDistribution>> {
        if self.cfg.variant != Variant::Klms {
            return Ok(None);
        }
        let d = self.num_params();
        let p = match self.cfg.method {
            Method::Fedpm => {
                let eps = self.cfg.fedpm.eps;
                let theta = &state.fedpm.as_ref().expect("fedpm state").theta;
                ProductDistribution::bernoulli(theta.iter().map(|t| t.clamp(eps, 1.0 - eps)).collect())?
            }
            Method::Qsgd => qsgd_klms_global_distribution(&state.prev_patterns, d)?,
            Method::Signsgd => ProductDistribution::uniform_sign(d)?,
            Method::Sgld => ProductDistribution::gaussian(vec![0.0; d], self.cfg.sgld_noise_std())?,
            Method::None => return Ok(None),
        };
        Ok(Some(p))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BitTotals {
    /// Sum of accounted message sizes (payload + locations + header).
    pub accounted_bits: u64,
    /// Sum of bit lengths of the messages the server actually parsed.
    pub wire_bits: u64,
    pub wire_bytes: u64,
}

/// Everything the server carries between rounds.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub round: u32,
    pub weights: Vec<f64>,
    pub fedpm: Option<FedPmState>,
    pub partition: Option<BlockPartition>,
    /// Whether the next round's clients send fresh block lengths.
    pub update_partition: bool,
    /// Last round's decoded QSGD patterns, the next reference.
    pub prev_patterns: Vec<Vec<f64>>,
    pub totals: BitTotals,
}

fn server_decode(
    exp: &Experiment,
    state: &ServerState,
    reference: Option<&ProductDistribution>,
    client: usize,
    upload: &Upload,
) -> Result<(Vec<f64>, Option<Decoded>)> {
    let (bytes, norm) = match &upload.payload {
        Payload::Raw(v) => return Ok((v.clone(), None)),
        Payload::Klms { bytes, norm } => (bytes, norm),
    };
    let cfg = &exp.cfg;
    let d = exp.num_params();
    let upd = deserialize(bytes, &cfg.codec)?;
    let key = exp
        .root
        .child("round", u64::from(state.round))
        .child("client", client as u64)
        .child("codec", 0);
    let placeholder;
    let partition = match &state.partition {
        Some(p) if upd.block_lengths.is_none() => p,
        _ => {
            placeholder = split_blocks_fixed(d, d)?;
            &placeholder
        }
    };
    let p = reference.expect("reference");
    let samples = decode_update(p, partition, &cfg.codec, &key, &upd)?;
    let own_partition = match &upd.block_lengths {
        Some(l) => Some(BlockPartition::from_lengths(
            &l.iter().map(|&x| x as usize).collect::<Vec<_>>(),
            d,
        )?),
        None => None,
    };
    let info = Decoded {
        avg_block_kl: upd.avg_block_kl,
        partition: own_partition,
        wire_bits: upd.bit_len(&cfg.codec),
        wire_bytes: bytes.len() as u64,
        pattern: norm.map(|_| samples.clone()),
    };
    let values = match norm {
        Some(n) => samples.iter().map(|&s| s * f64::from(*n)).collect(),
        None => samples,
    };
    Ok((values, Some(info)))
}

struct Decoded {
    avg_block_kl: f32,
    partition: Option<BlockPartition>,
    wire_bits: u64,
    wire_bytes: u64,
    pattern: Option<Vec<f64>>,
}

/// Runs one round with the given participants and advances `state`.
pub fn run_round(exp: &Experiment, state: &mut ServerState, participants: &[usize]) -> Result<RoundMetrics> {
    if participants.is_empty() {
        return Err(Error::InvalidParameter("a round needs at least one participant".into()));
    }
    let cfg = &exp.cfg;
    let d = exp.num_params();
    let reference = exp.reference(state)?;
    let klms = cfg.variant == Variant::Klms;
    let send_locations = klms && state.update_partition;
    let empty: [f64; 0] = [];
    let broadcast = Broadcast {
        round: state.round,
        weights: &state.weights,
        theta: state.fedpm.as_ref().map_or(&empty[..], |f| &f.theta),
        w_init: state.fedpm.as_ref().map_or(&empty[..], |f| &f.w_init),
        reference: reference.as_ref(),
        partition: state.partition.as_ref(),
        send_locations,
    };

    let results: Vec<(Upload, Vec<f64>, Option<Decoded>)> = participants
        .par_iter()
        .map(|&c| {
            let upload = client_step(exp, &broadcast, c)?;
            let (values, info) = server_decode(exp, state, reference.as_ref(), c, &upload)?;
            Ok((upload, values, info))
        })
        .collect::<Result<_>>()?;

    let n = participants.len() as f64;
    let payload: u64 = results.iter().map(|r| r.0.payload_bits).sum();
    let total: u64 = results
        .iter()
        .map(|r| r.0.payload_bits + r.0.location_bits + r.0.header_bits)
        .sum();
    let mean_kl = results.iter().map(|r| r.0.kl_sum / d as f64).sum::<f64>() / n;
    for (up, _, info) in &results {
        if let Some(info) = info {
            let norm_bits = if cfg.method == Method::Qsgd { 32 } else { 0 };
            state.totals.accounted_bits += up.payload_bits - norm_bits + up.location_bits + up.header_bits;
            state.totals.wire_bits += info.wire_bits;
            state.totals.wire_bytes += info.wire_bytes;
        }
    }

    // Partition protocol.
    if klms && matches!(cfg.partitioning, Partitioning::Adaptive) {
        if send_locations {
            let parts: Vec<BlockPartition> = results
                .iter()
                .map(|r| r.2.as_ref().and_then(|i| i.partition.clone()).expect("locations"))
                .collect();
            state.partition = Some(aggregate_block_locations(&parts, cfg.codec.max_block_size)?);
            state.update_partition = false;
        } else {
            let avg = results
                .iter()
                .map(|r| f64::from(r.2.as_ref().expect("klms info").avg_block_kl))
                .sum::<f64>()
                / n;
            state.update_partition = should_update_partition(avg, &cfg.codec);
        }
    }

    // Aggregation.
    let decoded: Vec<Vec<f64>> = results.iter().map(|r| r.1.clone()).collect();
    match cfg.method {
        Method::Fedpm => bayes_agg(&decoded, state.fedpm.as_mut().expect("fedpm state"), state.round)?,
        Method::Qsgd | Method::Signsgd | Method::None => {
            let lr = match cfg.method {
                Method::Qsgd => cfg.qsgd.server_lr,
                Method::Signsgd => cfg.signsgd.server_lr,
                _ => cfg.none.server_lr,
            };
            state.weights = mean_step(&state.weights, &decoded, lr);
            if cfg.method == Method::Qsgd && klms {
                state.prev_patterns = results
                    .iter()
                    .map(|r| r.2.as_ref().and_then(|i| i.pattern.clone()).expect("pattern"))
                    .collect();
            }
        }
        Method::Sgld => {
            let params = sgld_params(exp);
            let mut next = sgld_server_step(&state.weights, &decoded, &params)?;
            if !klms {
                let mut s = exp
                    .root
                    .child("round", u64::from(state.round))
                    .child("server-noise", 0)
                    .stream();
                let scale = (2.0 * params.step).sqrt();
                next.iter_mut().for_each(|t| *t += scale * s.next_gaussian());
            }
            state.weights = next;
        }
    }

    let metrics = RoundMetrics {
        round: state.round,
        bpp_payload: payload as f64 / (n * d as f64),
        bpp_total: total as f64 / (n * d as f64),
        accuracy: exp.evaluate(state, &exp.test)?,
        mean_kl_per_param: mean_kl,
        partition_updated: send_locations,
    };
    state.round += 1;
    Ok(metrics)
}

fn mean_step(w: &[f64], updates: &[Vec<f64>], lr: f64) -> Vec<f64> {
    let scale = lr / updates.len() as f64;
    let mut out = w.to_vec();
    for u in updates {
        out.iter_mut().zip(u).for_each(|(o, v)| *o -= scale * v);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: Option<String>,
    pub method: Method,
    pub variant: Variant,
    pub rounds: u32,
    pub num_params: usize,
    pub final_accuracy: f64,
    pub final_train_accuracy: f64,
    /// Mean test accuracy over the last `min(10, rounds)` rounds.
    pub tail_accuracy: f64,
    pub mean_bpp_payload: f64,
    pub mean_bpp_total: f64,
    pub partition_updates: usize,
    pub bits: BitTotals,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub metrics: Vec<RoundMetrics>,
    pub summary: ExperimentSummary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let exp = Experiment::new(cfg.clone())?;
    let mut state = exp.initial_state()?;
    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    for t in 0..cfg.rounds {
        let who = exp.participants(t);
        metrics.push(run_round(&exp, &mut state, &who)?);
    }
    let rounds = metrics.len();
    let mean = |f: fn(&RoundMetrics) -> f64| {
        if rounds == 0 {
            0.0
        } else {
            metrics.iter().map(f).sum::<f64>() / rounds as f64
        }
    };
    let final_accuracy = exp.evaluate(&state, &exp.test)?;
    let tail = &metrics[rounds.saturating_sub(10)..];
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        method: cfg.method,
        variant: cfg.variant,
        rounds: cfg.rounds,
        num_params: exp.num_params(),
        final_accuracy,
        final_train_accuracy: exp.evaluate(&state, &exp.train)?,
        tail_accuracy: if tail.is_empty() {
            final_accuracy
        } else {
            tail.iter().map(|m| m.accuracy).sum::<f64>() / tail.len() as f64
        },
        mean_bpp_payload: mean(|m| m.bpp_payload),
        mean_bpp_total: mean(|m| m.bpp_total),
        partition_updates: metrics.iter().filter(|m| m.partition_updated).count(),
        bits: state.totals,
    };
    Ok(ExperimentReport { metrics, summary })
}

pub fn metrics_csv(metrics: &[RoundMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(METRICS_HEADER).map_err(to_err)?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.bpp_payload.to_string(),
            m.bpp_total.to_string(),
            m.accuracy.to_string(),
            m.mean_kl_per_param.to_string(),
            m.partition_updated.to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `metrics.csv` and `summary.json` into `dir`, creating it.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join("metrics.csv");
    fs::write(&csv_path, metrics_csv(&report.metrics)?).map_err(io(&csv_path))?;
    let json_path = dir.join("summary.json");
    let mut f = fs::File::create(&json_path).map_err(io(&json_path))?;
    let text = serde_json::to_string_pretty(&report.summary).expect("summary serializes");
    writeln!(f, "{text}").map_err(io(&json_path))?;
    Ok(())
}
