//! One client's work in a round: local training, building `q`, and either
//! KLMS encoding or the method's baseline quantizer.

use crate::codec::{encode_update, serialize, split_blocks_adaptive, BlockPartition, MessageHeader};
use crate::config::{Method, Variant};
use crate::distributions::ProductDistribution;
use crate::error::Result;
use crate::methods::fedpm::{epoch_batches, scores_from_probs};
use crate::methods::{
    elias_gamma_bits, fedpm_local_train, qsgd_client_distribution, qsgd_quantize, sgld_client_distributions,
    signsgd_client_distribution, signsgd_sample, SgldParams,
};
use crate::rng::StreamKey;

use super::Experiment;

/// What leaves the client.
pub(crate) enum Payload {
    /// A serialized KLMS message, plus the update norm for one-level QSGD.
    Klms { bytes: Vec<u8>, norm: Option<f32> },
    /// Baseline values as the server will use them.
    Raw(Vec<f64>),
}

pub(crate) struct Upload {
    pub payload: Payload,
    pub payload_bits: u64,
    pub location_bits: u64,
    pub header_bits: u64,
    /// Sum of per-coordinate KL(q || p); zero for baselines.
    pub kl_sum: f64,
}

/// Read-only view of the server state a client receives at round start.
pub(crate) struct Broadcast<'a> {
    pub round: u32,
    pub weights: &'a [f64],
    /// FedPM global probabilities.
    pub theta: &'a [f64],
    pub w_init: &'a [f64],
    /// Codec reference for this round (KLMS only).
    pub reference: Option<&'a ProductDistribution>,
    pub partition: Option<&'a BlockPartition>,
    pub send_locations: bool,
}

fn local_sgd(exp: &Experiment, w0: &[f64], shard: &[usize], key: &StreamKey) -> Result<Vec<f64>> {
    let hyper = exp.cfg.local_hyper();
    let mut stream = key.stream();
    let mut w = w0.to_vec();
    for _ in 0..hyper.epochs {
        for batch in epoch_batches(shard, hyper.batch_size, &mut stream) {
            let (_, g) = exp.model.loss_grad(&w, &exp.train, &batch)?;
            w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= hyper.lr * gi);
        }
    }
    Ok(w)
}

/// Stochastic gradient of the client's share of the potential: the shard
/// negative log-likelihood (rescaled from one minibatch) plus `1/N` of the
/// Gaussian prior.
fn sgld_gradient(exp: &Experiment, theta: &[f64], shard: &[usize], key: &StreamKey) -> Result<Vec<f64>> {
    let hyper = exp.cfg.local_hyper();
    let batches = epoch_batches(shard, hyper.batch_size, &mut key.stream());
    let (_, g) = exp.model.loss_grad(theta, &exp.train, &batches[0])?;
    let scale = shard.len() as f64;
    let prior = exp.cfg.sgld.prior_precision / exp.cfg.clients as f64;
    Ok(g.iter().zip(theta).map(|(gi, t)| scale * gi + prior * t).collect())
}

pub(crate) fn sgld_params(exp: &Experiment) -> SgldParams {
    SgldParams {
        step: exp.cfg.sgld.step,
        server_lr: exp.cfg.sgld_server_lr(),
        noise_std: exp.cfg.sgld_noise_std(),
    }
}

pub(crate) fn client_step(exp: &Experiment, state: &Broadcast<'_>, client: usize) -> Result<Upload> {
    let cfg = &exp.cfg;
    let shard = &exp.shards[client];
    let key = exp
        .root
        .child("round", u64::from(state.round))
        .child("client", client as u64);
    let d = exp.num_params();

    // Local update and the client-only distribution (or baseline payload).
    let mut norm = None;
    let q = match cfg.method {
        Method::Fedpm => {
            let scores = scores_from_probs(state.theta, cfg.fedpm.eps);
            let phi = fedpm_local_train(
                &scores,
                state.w_init,
                &exp.model,
                &exp.train,
                shard,
                &cfg.local_hyper(),
                &mut key.child("local", 0).stream(),
            )?;
            // Saturated probabilities would leave q without support under p's samples.
            let eps = cfg.fedpm.eps;
            ProductDistribution::bernoulli(phi.into_iter().map(|x| x.clamp(eps, 1.0 - eps)).collect())?
        }
        Method::Qsgd | Method::Signsgd | Method::None => {
            let w = local_sgd(exp, state.weights, shard, &key.child("local", 0))?;
            let v: Vec<f64> = state.weights.iter().zip(&w).map(|(a, b)| a - b).collect();
            match (cfg.method, cfg.variant) {
                (Method::None, _) => {
                    let sent = v.iter().map(|&x| f64::from(x as f32)).collect();
                    return Ok(raw(sent, 32 * d as u64));
                }
                (Method::Qsgd, Variant::Baseline) => {
                    let (vq, levels) = qsgd_quantize(&v, cfg.qsgd.levels, &mut key.child("quant", 0).stream());
                    return Ok(raw(vq, elias_gamma_bits(&levels)));
                }
                (Method::Qsgd, Variant::Klms) => {
                    let q = qsgd_client_distribution(&v)?;
                    norm = Some(q.scale() as f32);
                    q
                }
                (Method::Signsgd, Variant::Baseline) => {
                    let signs = signsgd_sample(&v, &cfg.signsgd, &mut key.child("quant", 0).stream());
                    return Ok(raw(signs, d as u64));
                }
                (Method::Signsgd, Variant::Klms) => signsgd_client_distribution(&v, &cfg.signsgd)?,
                _ => unreachable!(),
            }
        }
        Method::Sgld => {
            let h = sgld_gradient(exp, state.weights, shard, &key.child("local", 0))?;
            if cfg.variant == Variant::Baseline {
                let (hq, levels) = qsgd_quantize(&h, cfg.qsgd.levels, &mut key.child("quant", 0).stream());
                return Ok(raw(hq, elias_gamma_bits(&levels)));
            }
            sgld_client_distributions(&h, &sgld_params(exp))?.0
        }
    };

    if cfg.variant == Variant::Baseline {
        // FedPM baseline: one sampled mask bit per parameter.
        let mask = q.sample(0..d, &mut key.child("quant", 0).stream())?;
        return Ok(raw(mask, d as u64));
    }

    let p = state.reference.expect("KLMS round without a reference distribution");
    let kl = q.kl_per_coordinate(p)?;
    let own;
    let partition = if state.send_locations {
        own = split_blocks_adaptive(&kl, &cfg.codec)?;
        &own
    } else {
        state.partition.expect("KLMS round without a partition")
    };
    let header = MessageHeader {
        round: state.round,
        client_id: client as u32,
    };
    let out = encode_update(
        &q,
        p,
        partition,
        &cfg.codec,
        &key.child("codec", 0),
        header,
        state.send_locations,
    )?;
    let bytes = serialize(&out.update, &cfg.codec)?;
    let norm_bits = if norm.is_some() { 32 } else { 0 };
    Ok(Upload {
        payload: Payload::Klms { bytes, norm },
        payload_bits: out.cost.payload_bits + norm_bits,
        location_bits: out.cost.location_bits,
        header_bits: out.cost.header_bits,
        kl_sum: kl.iter().sum(),
    })
}

fn raw(values: Vec<f64>, bits: u64) -> Upload {
    Upload {
        payload: Payload::Raw(values),
        payload_bits: bits,
        location_bits: 0,
        header_bits: 0,
        kl_sum: 0.0,
    }
}
