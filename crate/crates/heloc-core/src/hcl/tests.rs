use super::*;
use crate::ast::{parse_demo_source, sample_triplets_from_levels, AstGraph, AstNode};
use crate::numerics::finite_diff_check;
use crate::rsgnn::encode_frozen;
use alloc::vec;

fn tree(parents: &[Option<usize>]) -> AstGraph {
    let records: Vec<AstNode> = parents
        .iter()
        .enumerate()
        .map(|(id, &parent)| AstNode {
            id,
            node_type: format!("T{id}"),
            text: format!("n{id}"),
            start_line: 1,
            end_line: 1,
            parent,
            children: Vec::new(),
        })
        .collect();
    AstGraph::from_records(records, &Caps::default()).unwrap()
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        h: 8,
        layers: 2,
        max_depth: 8,
        batch_size: 4,
        steps: 3,
        lr: 1e-2,
        triplets_per_graph: 8,
        ..TrainConfig::default()
    }
}

fn tiny_corpus() -> Vec<AstGraph> {
    [
        "fn f(){x=1;y=2;}",
        "fn g(a){ if (a < 2) { a = a + 1; } return a; }",
        "fn h(a,b){ while (a < b) { a = a + 1; } call(a); }",
        "fn k(){ x = 1 + 2 * 3; y = x; z = y; }",
    ]
    .iter()
    .map(|src| parse_demo_source(src, &Caps::default()).unwrap())
    .collect()
}

#[test]
fn nep_logits_zero_weights_are_zero() {
    let cfg = tiny_cfg();
    let params = HclParams::zeros(&cfg);
    let x = Tensor2::from_fn(3, cfg.h, |i, j| (i + j) as f64);
    let logits = nep_logits_frozen(&x, &params).unwrap();
    assert_eq!(logits.shape(), (3, cfg.classes()));
    assert!(logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn nep_logits_single_row() {
    let cfg = tiny_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = HclParams::init(&cfg, &mut rng);
    let x = Tensor2::from_fn(1, cfg.h, |_, j| j as f64 * 0.1);
    let logits = nep_logits_frozen(&x, &params).unwrap();
    assert_eq!(logits.shape(), (1, cfg.classes()));
}

#[test]
fn nep_loss_uniform_logits() {
    let logits = Tensor2::zeros(5, 7);
    let loss = nep_loss(&logits, &[0, 1, 2, 3, 6]).unwrap();
    assert!((loss - 5.0 * 7.0f64.ln()).abs() < 1e-12);
}

#[test]
fn nep_loss_confident_logit_vanishes() {
    let mut logits = Tensor2::zeros(1, 4);
    logits.set(0, 2, 40.0);
    let loss = nep_loss(&logits, &[2]).unwrap();
    assert!(loss < 1e-12);
}

#[test]
fn nep_loss_hand_example() {
    let logits = Tensor2::from_rows(&[&[0.0, 0.0], &[0.0, 3.0f64.ln()]]);
    let loss = nep_loss(&logits, &[0, 1]).unwrap();
    let expect = 2.0f64.ln() + (4.0f64 / 3.0).ln();
    assert!((loss - expect).abs() < 1e-12);
}

#[test]
fn nep_loss_rejects_out_of_range_level() {
    let logits = Tensor2::zeros(1, 3);
    match nep_loss(&logits, &[3]) {
        Err(TrainError::LevelOutOfRange { level: 3, classes: 3 }) => {}
        other => panic!("expected level error, got {other:?}"),
    }
}

#[test]
fn nro_loss_hand_examples() {
    // anchor (0,0), positive (1,0), negative (0,2): 1 - 4 + 1 + 1 < 0 -> 0
    let x = Tensor2::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]]);
    let batch = TripletBatch {
        triples: vec![[0, 1, 2]],
        delta_l: vec![1],
    };
    assert_eq!(nro_loss(&x, &batch, 1.0).unwrap(), 0.0);

    // anchor (0,0), positive (2,0), negative (1,0): 4 - 1 + 2 + 1 = 6
    let x = Tensor2::from_rows(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]]);
    let batch = TripletBatch {
        triples: vec![[0, 1, 2]],
        delta_l: vec![2],
    };
    assert_eq!(nro_loss(&x, &batch, 1.0).unwrap(), 6.0);

    // anchor == positive rows, far negative: hinge floors at zero
    let x = Tensor2::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[5.0, 5.0]]);
    let batch = TripletBatch {
        triples: vec![[0, 1, 2]],
        delta_l: vec![1],
    };
    assert_eq!(nro_loss(&x, &batch, 1.0).unwrap(), 0.0);
}

#[test]
fn nro_loss_empty_batch_is_zero() {
    let x = Tensor2::from_rows(&[&[1.0, 2.0]]);
    assert_eq!(nro_loss(&x, &TripletBatch::default(), 1.0).unwrap(), 0.0);
}

#[test]
fn nro_loss_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let x = Tensor2::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0));
        let (batch, _) = sample_triplets_from_levels(&[0, 1, 1, 2, 2, 2], 10, rng.random());
        assert!(nro_loss(&x, &batch, 1.0).unwrap() >= 0.0);
    }
}

#[test]
fn joint_loss_identities() {
    assert_eq!(joint_loss(2.5, 1.5, 0.0, 0.0), 4.0);
    assert_eq!(joint_loss(0.0, 0.0, 1.0, 1.0), 2.0);
}

#[test]
fn joint_loss_theta_gradient_matches_finite_differences() {
    let (l_h, l_t) = (3.0, 0.5);
    let analytic = vec![
        Tensor2::scalar(-2.0 * (-2.0f64 * 0.3).exp() * l_h + 1.0),
        Tensor2::scalar(-2.0 * (-2.0f64 * -0.2).exp() * l_t + 1.0),
    ];
    let mut params = vec![Tensor2::scalar(0.3), Tensor2::scalar(-0.2)];
    let err = finite_diff_check(
        &mut params,
        &analytic,
        |ps| joint_loss(l_h, l_t, ps[0].item(), ps[1].item()),
        1e-6,
    );
    assert!(err < 1e-8, "relative error {err}");
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = Param::new(Tensor2::scalar(1.0));
    p.grad = Tensor2::scalar(2.0); // gradient of w^2 at w=1
    let mut adam = Adam::new(0.05);
    adam.step(&mut [(String::from("w"), &mut p)]);
    // bias-corrected m/sqrt(v) is the gradient sign, up to eps
    assert!((p.value.item() - 0.95).abs() < 1e-8);
}

#[test]
fn adam_zero_gradient_does_not_move() {
    let mut p = Param::new(Tensor2::scalar(3.0));
    let mut adam = Adam::new(0.1);
    adam.step(&mut [(String::from("w"), &mut p)]);
    assert_eq!(p.value.item(), 3.0);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut p = Param::new(Tensor2::from_rows(&[&[1.0, -2.0]]));
        let mut adam = Adam::new(0.01);
        for step in 1..=5 {
            p.grad = p.value.scale(2.0 * step as f64);
            adam.step(&mut [(String::from("w"), &mut p)]);
        }
        p.value
    };
    assert_eq!(run(), run());
}

#[test]
fn pretrain_zero_steps_returns_initialization() {
    let cfg = TrainConfig {
        steps: 0,
        ..tiny_cfg()
    };
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let expect = HclParams::init(&cfg, &mut rng);
    assert_eq!(out.checkpoint.params, expect);
    assert!(out.log.is_empty());
}

#[test]
fn pretrain_step_zero_loss_is_sum_of_objectives() {
    let cfg = tiny_cfg();
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let first = &out.log[0];
    // theta' = tau' = 0 at initialization, so the joint loss collapses.
    assert_eq!(first.theta_p, 0.0);
    assert_eq!(first.tau_p, 0.0);
    assert!((first.loss - (first.l_h + first.l_t)).abs() < 1e-9);
    assert_eq!(out.log.len(), cfg.steps);
}

#[test]
fn pretrain_is_deterministic() {
    let cfg = tiny_cfg();
    let a = pretrain(&tiny_corpus(), &cfg).unwrap();
    let b = pretrain(&tiny_corpus(), &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
}

#[test]
fn pretrain_rejects_empty_corpus() {
    assert_eq!(
        pretrain(&[], &tiny_cfg()).unwrap_err(),
        TrainError::EmptyCorpus
    );
}

#[test]
fn pretrain_aborts_without_signal() {
    // Chains have no same-level pairs, so NRO alone has nothing to optimize.
    let chains = vec![
        tree(&[None, Some(0), Some(1)]),
        tree(&[None, Some(0), Some(1), Some(2)]),
    ];
    let cfg = TrainConfig {
        no_nep: true,
        ..tiny_cfg()
    };
    match pretrain(&chains, &cfg) {
        Err(TrainError::NoTrainingSignal(_)) => {}
        other => panic!("expected no-signal abort, got {other:?}"),
    }

    let cfg = TrainConfig {
        no_nep: true,
        no_nro: true,
        ..tiny_cfg()
    };
    assert!(matches!(
        pretrain(&tiny_corpus(), &cfg),
        Err(TrainError::NoTrainingSignal(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let cfg = tiny_cfg();
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let bytes = out.checkpoint.to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded, out.checkpoint);
    assert_eq!(loaded.to_bytes(), bytes);
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let cfg = tiny_cfg();
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let mut bytes = out.checkpoint.to_bytes();
    bytes[0] = b'X';
    assert_eq!(
        Checkpoint::from_bytes(&bytes).unwrap_err(),
        CheckpointError::BadMagic
    );
}

#[test]
fn checkpoint_rejects_version_mismatch() {
    let cfg = tiny_cfg();
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let mut bytes = out.checkpoint.to_bytes();
    bytes[4] = 99;
    assert!(matches!(
        Checkpoint::from_bytes(&bytes).unwrap_err(),
        CheckpointError::VersionMismatch { found: 99 }
    ));
}

#[test]
fn checkpoint_rejects_shape_drift() {
    let cfg = tiny_cfg();
    let out = pretrain(&tiny_corpus(), &cfg).unwrap();
    let mut ck = out.checkpoint.clone();
    // Claim a different hidden size in the config block than the arrays have.
    ck.config.h = 16;
    let bytes = ck.to_bytes();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes).unwrap_err(),
        CheckpointError::Param(_)
    ));
}

#[test]
fn loaded_checkpoint_reproduces_encodings_exactly() {
    let cfg = tiny_cfg();
    let corpus = tiny_corpus();
    let out = pretrain(&corpus, &cfg).unwrap();
    let loaded = Checkpoint::from_bytes(&out.checkpoint.to_bytes()).unwrap();

    let prepared = prepare_graph(&corpus[1], &cfg.embedder());
    let opts = cfg.encoder_options();
    let a = encode_frozen(
        &prepared.x0_ast,
        &prepared.padj,
        &out.checkpoint.params.encoder,
        &opts,
    )
    .unwrap();
    let b = encode_frozen(&prepared.x0_ast, &prepared.padj, &loaded.params.encoder, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_kv_round_trip() {
    let mut cfg = TrainConfig::desk();
    cfg.no_nro = true;
    cfg.activation = Activation::Tanh;
    cfg.lr = 3.5e-3;
    let text = cfg.to_kv_text();
    let mut back = TrainConfig::default();
    back.apply_kv_text(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_rejects_unknown_key() {
    let mut cfg = TrainConfig::default();
    let err = cfg.apply_kv_text("wat=1\n").unwrap_err();
    assert!(err.contains("unknown key"));
}

fn set_params_from_slice(params: &mut HclParams, ts: &[Tensor2]) {
    let mut named = params.named_params_mut();
    assert_eq!(named.len(), ts.len());
    for (slot, t) in named.iter_mut().zip(ts) {
        slot.1.value = t.clone();
    }
}

#[test]
fn full_joint_loss_gradient_matches_finite_differences() {
    // 10-node tree, H=8, two layers: the full pretraining objective.
    let graph = tree(&[
        None,
        Some(0),
        Some(0),
        Some(1),
        Some(1),
        Some(2),
        Some(2),
        Some(3),
        Some(4),
        Some(4),
    ]);
    let cfg = TrainConfig {
        h: 8,
        layers: 2,
        max_depth: 8,
        margin: 1.0,
        triplets_per_graph: 10,
        ..TrainConfig::default()
    };
    let prepared = prepare_graph(&graph, &cfg.embedder());
    let seed = 12345u64;
    let count = prepared.node_count().min(cfg.triplets_per_graph);
    let (batch, _) = sample_triplets_from_levels(&prepared.levels, count, seed);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = HclParams::init(&cfg, &mut rng);
    // Move the uncertainty scalars off zero so their gradients are generic.
    params.theta_p.value = Tensor2::scalar(0.25);
    params.tau_p.value = Tensor2::scalar(-0.15);

    let loss_of = |ts: &[Tensor2]| -> f64 {
        let mut p = HclParams::zeros(&cfg);
        set_params_from_slice(&mut p, ts);
        let x_nd = encode_frozen(
            &prepared.x0_ast,
            &prepared.padj,
            &p.encoder,
            &cfg.encoder_options(),
        )
        .unwrap();
        let logits = nep_logits_frozen(&x_nd, &p).unwrap();
        let l_h = nep_loss(&logits, &prepared.levels).unwrap();
        let l_t = nro_loss(&x_nd, &batch, cfg.margin).unwrap();
        joint_loss(l_h, l_t, p.theta(), p.tau())
    };

    let ctx = StepContext {
        params: &params,
        prepared: core::slice::from_ref(&prepared),
        cfg: &cfg,
    };
    let job = GraphJob {
        graph: 0,
        triplet_seed: seed,
    };
    let gg = grad_one_graph(&ctx, &job).unwrap();
    let named = params.named_params();
    let mut analytic: Vec<Tensor2> = named
        .iter()
        .zip(&gg.grads)
        .map(|((_, p), g)| {
            g.clone()
                .unwrap_or_else(|| Tensor2::zeros(p.value.rows(), p.value.cols()))
        })
        .collect();
    // joint_loss adds theta' + tau' on top of the weighted terms.
    let n = analytic.len();
    analytic[n - 2] = analytic[n - 2].add(&Tensor2::scalar(1.0)).unwrap();
    analytic[n - 1] = analytic[n - 1].add(&Tensor2::scalar(1.0)).unwrap();

    let mut tensors: Vec<Tensor2> = named.iter().map(|(_, p)| p.value.clone()).collect();
    let err = finite_diff_check(&mut tensors, &analytic, loss_of, 1e-5);
    assert!(err < 1e-4, "relative error {err}");
}
