//! Hand-computed and closed-form reference values.

use klms_core::codec::HEADER_BITS;
use klms_core::data::{partition_data, Dataset, SplitMode};
use klms_core::methods::{
    bayes_agg, elias_gamma_bits, qsgd_client_distribution, qsgd_klms_global_distribution, sgld_client_distributions,
    signsgd_client_distribution, FedPmState, ResetSchedule, SgldParams, SignParams,
};
use klms_core::model::{DeskModel, ModelKind};
use klms_core::{
    aggregate_block_locations, importance_weights, samples_per_block, split_blocks_adaptive, split_blocks_fixed,
    BlockPartition, CodecParams, EncodedUpdate, ProductDistribution, StreamKey,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn mass(d: &ProductDistribution, i: usize, x: f64) -> f64 {
    d.log_mass(i..i + 1, &[x]).unwrap().exp()
}

#[test]
fn bernoulli_and_gaussian_kl() {
    let q = ProductDistribution::bernoulli(vec![0.9, 0.9]).unwrap();
    let p = ProductDistribution::bernoulli(vec![0.5, 0.5]).unwrap();
    let one = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
    assert!(close(one, 0.3681, 1e-4));
    let kl = q.kl_per_coordinate(&p).unwrap();
    assert!(close(kl[0], one, 1e-15));
    assert!(close(q.kl_block(&p, 0..2).unwrap(), 2.0 * one, 1e-15));
    assert!(close(2.0 * one, 0.7362, 1e-4));
    assert!(close(q.log_mass(0..1, &[1.0]).unwrap(), -0.10536, 1e-5));

    let g = ProductDistribution::gaussian(vec![0.8], 1.0).unwrap();
    let g0 = ProductDistribution::gaussian(vec![0.0], 1.0).unwrap();
    assert!(close(g.kl_block(&g0, 0..1).unwrap(), 0.32, 1e-15));
}

#[test]
fn sample_budget_arithmetic() {
    let r0 = CodecParams::default();
    assert_eq!(samples_per_block(std::f64::consts::LN_2, &r0), (2, 1));
    let r1 = CodecParams {
        overhead_r: 1.0,
        ..CodecParams::default()
    };
    assert_eq!(samples_per_block(2.0, &r1), (32, 5));
}

#[test]
fn importance_weights_normalize_ratios() {
    // q/p is 1.5 on y = 1 and 0.5 on y = 0: weights 3 : 1.
    let q = ProductDistribution::bernoulli(vec![0.75]).unwrap();
    let p = ProductDistribution::bernoulli(vec![0.5]).unwrap();
    let w = importance_weights(&q, &p, 0..1, &[vec![1.0], vec![0.0]]).unwrap();
    assert!(close(w[0], 0.75, 1e-15) && close(w[1], 0.25, 1e-15));
}

#[test]
fn partition_hand_traces() {
    let params = CodecParams {
        d_kl_target: 0.3,
        max_block_size: 100,
        kl_min_threshold: 0.1,
        kl_max_threshold: 1.0,
        ..CodecParams::default()
    };
    let p = split_blocks_adaptive(&[0.1, 0.2, 0.3, 0.15, 0.25], &params).unwrap();
    assert_eq!(p.starts(), &[0, 2, 3]);
    assert_eq!(p.ranges().collect::<Vec<_>>(), vec![0..2, 2..3, 3..5]);
    assert_eq!(split_blocks_fixed(10, 4).unwrap().starts(), &[0, 4, 8]);

    let a = BlockPartition::new(vec![0, 10, 20], 40).unwrap();
    let b = BlockPartition::new(vec![0, 12, 24, 30], 40).unwrap();
    assert_eq!(
        aggregate_block_locations(&[a, b], 1024).unwrap().starts(),
        &[0, 11, 22, 30]
    );
}

#[test]
fn message_size_arithmetic() {
    // d = 4, two blocks of two, K = 4: payload 2 * 2 bits.
    let params = CodecParams {
        d_kl_target: 1.0,
        kl_min_threshold: 0.5,
        kl_max_threshold: 2.0,
        ..CodecParams::default()
    };
    assert_eq!(params.bits_per_index(), 2);
    let upd = EncodedUpdate {
        round: 0,
        client_id: 0,
        avg_block_kl: 1.0,
        block_lengths: None,
        indices: vec![3, 1],
    };
    assert_eq!(upd.bit_len(&params), HEADER_BITS + 4);
    // With locations, three blocks at max size 1024 cost 3 * 10 bits.
    assert_eq!(3 * u64::from(CodecParams::default().location_field_bits()), 30);
}

#[test]
fn elias_gamma_examples() {
    assert_eq!(elias_gamma_bits(&[0, 0, 0, 0]), 36);
    assert_eq!(elias_gamma_bits(&[1]) - elias_gamma_bits(&[0]), 3);
    assert_eq!(elias_gamma_bits(&[7]) - elias_gamma_bits(&[0]), 7);
}

#[test]
fn bayes_agg_mode_rule() {
    let mut st = FedPmState::new(vec![1.0; 3], 1.0, ResetSchedule::Never).unwrap();
    let masks = vec![vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]];
    bayes_agg(&masks, &mut st, 0).unwrap();
    assert_eq!(st.alpha, vec![3.0, 1.0, 4.0]);
    assert_eq!(st.beta, vec![2.0, 4.0, 1.0]);
    assert!(close(st.theta[0], 2.0 / 3.0, 1e-15));
    assert_eq!(st.theta[1], 0.0);
    assert_eq!(st.theta[2], 1.0);

    let mut ones = FedPmState::new(vec![1.0; 2], 1.0, ResetSchedule::Never).unwrap();
    bayes_agg(&vec![vec![1.0, 1.0]; 4], &mut ones, 0).unwrap();
    assert_eq!(ones.theta, vec![1.0, 1.0]);
}

#[test]
fn qsgd_ternary_distribution() {
    let d = qsgd_client_distribution(&[0.6, -0.8]).unwrap();
    assert!(close(d.scale(), 1.0, 1e-15));
    assert!(close(mass(&d, 0, 1.0), 0.6, 1e-12) && close(mass(&d, 0, 0.0), 0.4, 1e-12));
    assert_eq!(mass(&d, 0, -1.0), 0.0);
    assert!(close(mass(&d, 1, -1.0), 0.8, 1e-12) && close(mass(&d, 1, 0.0), 0.2, 1e-12));
    // Mean of the scaled pattern reproduces v.
    for (i, v) in [0.6, -0.8].into_iter().enumerate() {
        let mean = d.scale() * (mass(&d, i, 1.0) - mass(&d, i, -1.0));
        assert!(close(mean, v, 1e-15));
    }

    let g = qsgd_klms_global_distribution(&vec![vec![0.0]; 10], 1).unwrap();
    assert!(close(mass(&g, 0, -1.0), 1.0 / 13.0, 1e-15));
    assert!(close(mass(&g, 0, 0.0), 11.0 / 13.0, 1e-15));
    assert!(close(mass(&g, 0, 1.0), 1.0 / 13.0, 1e-15));
}

#[test]
fn signsgd_probability_at_temperature() {
    let params = SignParams {
        temperature: 0.5,
        server_lr: 0.1,
    };
    let d = signsgd_client_distribution(&[0.5], &params).unwrap();
    assert!(close(mass(&d, 0, 1.0), 1.0 / (1.0 + (-1.0f64).exp()), 1e-15));
    assert!(close(mass(&d, 0, 1.0), 0.7311, 1e-4));
}

#[test]
fn sgld_kl_closed_form() {
    let p = SgldParams {
        step: 1e-3,
        server_lr: 0.1,
        noise_std: 0.3,
    };
    let (q, g) = sgld_client_distributions(&[0.3], &p).unwrap();
    assert!(close(q.kl_block(&g, 0..1).unwrap(), 0.5, 1e-12));
    let wide = SgldParams { noise_std: 0.6, ..p };
    let (q, g) = sgld_client_distributions(&[0.3], &wide).unwrap();
    assert!(close(q.kl_block(&g, 0..1).unwrap(), 0.125, 1e-12));
}

#[test]
fn iid_split_is_equal() {
    let labels: Vec<u32> = (0..1000).map(|i| i % 10).collect();
    let mut s = StreamKey::new(3).stream();
    let part = partition_data(&labels, 10, 10, SplitMode::Iid, None, &mut s).unwrap();
    assert!(part.shards.iter().all(|sh| sh.len() == 100));
}

#[test]
fn one_sgd_step_lowers_shard_loss() {
    let data = Dataset::new(vec![1.0, 0.5, -1.0, -0.5], vec![1, 0], 2, 2).unwrap();
    let model = DeskModel::new(ModelKind::Logistic, 2, 2);
    let w = vec![0.0; model.num_params()];
    let batch = [0, 1];
    let (before, g) = model.loss_grad(&w, &data, &batch).unwrap();
    let stepped: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - 0.5 * b).collect();
    assert!(model.loss(&stepped, &data, &batch).unwrap() < before);
    assert!(close(before, 2f64.ln(), 1e-12));
}
