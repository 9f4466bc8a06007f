use super::*;
use crate::ast::{parse_demo_source, Caps};
use crate::hcl::prepare_graph;
use alloc::vec;

fn v(data: &[f64]) -> CodeVector {
    CodeVector { r: data.to_vec() }
}

#[test]
fn pool_examples() {
    let one = Tensor2::from_rows(&[&[1.0, 2.0, 3.0]]);
    assert_eq!(pool(&one).unwrap().r, vec![1.0, 2.0, 3.0]);

    let two = Tensor2::from_rows(&[&[1.0, 2.0], &[3.0, 6.0]]);
    assert_eq!(pool(&two).unwrap().r, vec![2.0, 4.0]);

    let swapped = Tensor2::from_rows(&[&[3.0, 6.0], &[1.0, 2.0]]);
    assert_eq!(pool(&two).unwrap(), pool(&swapped).unwrap());

    assert_eq!(pool(&Tensor2::zeros(0, 3)).unwrap_err(), TaskError::EmptyInput);
}

fn head_with(w: Tensor2, b: Tensor2, smoothing: f64) -> ClassifierHead {
    ClassifierHead {
        w0: Param::new(w),
        b0: Param::new(b),
        smoothing,
    }
}

#[test]
fn classify_uniform_logits_loss() {
    let c = 5;
    let head = head_with(Tensor2::zeros(3, c), Tensor2::zeros(1, c), 0.0);
    let loss = classify_loss(&v(&[1.0, -1.0, 0.5]), 2, &head).unwrap();
    assert!((loss - (c as f64).ln()).abs() < 1e-12);
}

#[test]
fn classify_smoothing_preserves_uniform_logit_loss() {
    let head = head_with(Tensor2::zeros(2, 2), Tensor2::zeros(1, 2), 0.1);
    let loss = classify_loss(&v(&[0.3, 0.7]), 0, &head).unwrap();
    assert!((loss - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn classify_argmax_and_ties() {
    let head = head_with(Tensor2::identity(3), Tensor2::zeros(1, 3), 0.1);
    assert_eq!(classify_predict(&v(&[0.1, 0.9, 0.3]), &head).unwrap(), 1);
    // Constant shift cannot change the argmax.
    let shifted = head_with(
        Tensor2::identity(3),
        Tensor2::from_rows(&[&[5.0, 5.0, 5.0]]),
        0.1,
    );
    assert_eq!(classify_predict(&v(&[0.1, 0.9, 0.3]), &shifted).unwrap(), 1);
    // Ties resolve to the lowest index.
    assert_eq!(classify_predict(&v(&[0.5, 0.5, 0.1]), &head).unwrap(), 0);
}

#[test]
fn classify_rejects_out_of_range_label() {
    let head = head_with(Tensor2::zeros(2, 2), Tensor2::zeros(1, 2), 0.0);
    assert!(matches!(
        classify_loss(&v(&[1.0, 0.0]), 2, &head),
        Err(TaskError::LabelOutOfRange { .. })
    ));
}

#[test]
fn relatedness_examples() {
    let a = v(&[1.0, 2.0, -1.0]);
    assert!((relatedness(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let x = v(&[1.0, 0.0]);
    let y = v(&[0.0, 3.0]);
    assert_eq!(relatedness(&x, &y).unwrap(), 0.0);
    let neg = v(&[-1.0, -2.0, 1.0]);
    assert!((relatedness(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(
        relatedness(&v(&[0.0, 0.0]), &x).unwrap_err(),
        TaskError::ZeroVector
    );
}

#[test]
fn relatedness_is_scale_invariant() {
    let a = v(&[0.3, -1.2, 2.0]);
    let b = v(&[1.1, 0.4, -0.6]);
    let base = relatedness(&a, &b).unwrap();
    let scaled = relatedness(
        &CodeVector { r: a.r.iter().map(|x| x * 7.0).collect() },
        &CodeVector { r: b.r.iter().map(|x| x * 0.01).collect() },
    )
    .unwrap();
    assert!((base - scaled).abs() < 1e-12);
}

#[test]
fn clone_examples() {
    let a = v(&[1.0, 1.0]);
    assert!(clone_loss(&a, &a, 1.0).unwrap() < 1e-30);
    assert!((clone_loss(&a, &a, -1.0).unwrap() - 4.0).abs() < 1e-12);
    assert!(matches!(
        clone_loss(&a, &a, 0.5),
        Err(TaskError::BadCloneLabel(_))
    ));

    // Orthogonal vectors give p = 0, which is "not a clone".
    let verdict = clone_predict(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
    assert_eq!(verdict.p, 0.0);
    assert!(!verdict.is_clone);

    // Positive rescaling cannot change the verdict.
    let v1 = v(&[0.4, 0.6, -0.1]);
    let v2 = v(&[0.5, 0.5, 0.2]);
    let base = clone_predict(&v1, &v2).unwrap();
    let scaled = clone_predict(
        &CodeVector { r: v1.r.iter().map(|x| x * 3.0).collect() },
        &v2,
    )
    .unwrap();
    assert_eq!(base.is_clone, scaled.is_clone);
}

#[test]
fn calibration_fits_a_line() {
    let ps = [0.0, 0.5, 1.0, 1.5];
    let ys: Vec<f64> = ps.iter().map(|p| 2.0 * p - 0.5).collect();
    let cal = CloneCalibration::fit(&ps, &ys).unwrap();
    assert!((cal.scale - 2.0).abs() < 1e-12);
    assert!((cal.offset + 0.5).abs() < 1e-12);
    // apply clamps into [-1, 1]
    assert_eq!(cal.apply(1.5), 1.0);
}

#[test]
fn kmeans_singleton_clusters() {
    let pts = vec![v(&[0.0, 0.0]), v(&[5.0, 0.0]), v(&[0.0, 5.0])];
    let out = kmeans(&pts, 3, 3, 100).unwrap();
    assert_eq!(*out.inertia_trace.last().unwrap(), 0.0);
    let mut sorted = out.assignments.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2]);
}

#[test]
fn kmeans_separates_two_blobs() {
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for i in 0..10 {
        let jitter = i as f64 * 0.01;
        pts.push(v(&[jitter, 0.2 - jitter]));
        truth.push(0usize);
        pts.push(v(&[100.0 + jitter, 100.2 - jitter]));
        truth.push(1usize);
    }
    let out = kmeans(&pts, 2, 11, 100).unwrap();
    assert!((ari(&out.assignments, &truth).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn kmeans_is_deterministic_and_bounded() {
    let pts: Vec<CodeVector> = (0..20)
        .map(|i| v(&[(i * 7 % 13) as f64, (i * 3 % 5) as f64]))
        .collect();
    let a = kmeans(&pts, 4, 9, 50).unwrap();
    let b = kmeans(&pts, 4, 9, 50).unwrap();
    assert_eq!(a, b);
    for w in a.inertia_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "inertia increased: {w:?}");
    }
    assert!(matches!(
        kmeans(&pts, 21, 9, 50),
        Err(TaskError::KTooLarge { .. })
    ));
}

#[test]
fn ari_examples() {
    // Any relabeling of an identical partition scores 1.
    assert_eq!(ari(&[1, 1, 0, 0, 2], &[5, 5, 7, 7, 9]).unwrap(), 1.0);
    assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
    assert_eq!(ari(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    assert!(matches!(
        ari(&[0, 1], &[0, 1, 2]),
        Err(TaskError::LengthMismatch { .. })
    ));
}

/// Pair-counting route to the same index, used as an independent oracle.
fn ari_pair_counting(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut pred_only, mut truth_only, mut neither) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..n {
        for j in i + 1..n {
            let same_p = pred[i] == pred[j];
            let same_t = truth[i] == truth[j];
            match (same_p, same_t) {
                (true, true) => both += 1,
                (true, false) => pred_only += 1,
                (false, true) => truth_only += 1,
                (false, false) => neither += 1,
            }
        }
    }
    let num = 2 * (both * neither - pred_only * truth_only);
    let den = (both + pred_only) * (pred_only + neither) + (both + truth_only) * (truth_only + neither);
    if den == 0 {
        return 1.0;
    }
    num as f64 / den as f64
}

#[test]
fn ari_matches_pair_counting_oracle() {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = rng.random_range(1..12usize);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let fast = ari(&pred, &truth).unwrap();
        let slow = ari_pair_counting(&pred, &truth);
        assert_eq!(fast, slow, "pred {pred:?} truth {truth:?}");
    }
}

#[test]
fn prf1_examples() {
    assert_eq!(
        prf1(&[true, false, true], &[true, false, true]).unwrap(),
        (1.0, 1.0, 1.0)
    );
    assert_eq!(
        prf1(&[false, false], &[true, false]).unwrap(),
        (0.0, 0.0, 0.0)
    );
    // TP=2, FP=1, FN=1
    let (p, r, f1) = prf1(
        &[true, true, true, false, false],
        &[true, true, false, true, false],
    )
    .unwrap();
    assert!((p - 2.0 / 3.0).abs() < 1e-12);
    assert!((r - 2.0 / 3.0).abs() < 1e-12);
    assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn pca_finds_the_dominant_direction() {
    // Points spread along (1, 1, 0) with a small orthogonal wiggle.
    let mut rows = Vec::new();
    for i in 0..12 {
        let t = i as f64 - 5.5;
        let w = if i % 2 == 0 { 0.05 } else { -0.05 };
        rows.push([t + w, t - w, 0.0]);
    }
    let x = Tensor2::from_fn(12, 3, |i, j| rows[i][j]);
    let proj = pca2(&x);
    // pc1 dominates pc2 by far.
    let var1: f64 = proj.iter().map(|(a, _)| a * a).sum();
    let var2: f64 = proj.iter().map(|(_, b)| b * b).sum();
    assert!(var1 > 100.0 * var2, "var1={var1} var2={var2}");
    // Deterministic.
    assert_eq!(proj, pca2(&x));
}

fn toy_dataset(cfg: &TrainConfig) -> Vec<(PreparedGraph, usize)> {
    let sources = [
        ("fn f(){ while (a < 9) { a = a + 1; } }", 0usize),
        ("fn f(){ while (b < 3) { b = b + 2; } }", 0),
        ("fn f(){ while (c < 7) { c = c + 3; } }", 0),
        ("fn f(){ while (d < 5) { d = d + 1; } }", 0),
        ("fn f(){ if (a < 9) { a = 1; } }", 1),
        ("fn f(){ if (b < 3) { b = 2; } }", 1),
        ("fn f(){ if (c < 7) { c = 3; } }", 1),
        ("fn f(){ if (d < 5) { d = 4; } }", 1),
    ];
    let embedder = cfg.embedder();
    sources
        .iter()
        .map(|(src, label)| {
            let g = parse_demo_source(src, &Caps::default()).unwrap();
            (prepare_graph(&g, &embedder), *label)
        })
        .collect()
}

fn toy_cfg() -> TrainConfig {
    TrainConfig {
        h: 8,
        layers: 1,
        max_depth: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn fine_tune_zero_epochs_changes_nothing() {
    let cfg = toy_cfg();
    let data = toy_dataset(&cfg);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut params = HclParams::init(&cfg, &mut rng);
    let mut head = ClassifierHead::init(cfg.h, 2, 0.1, &mut rng);
    let before = (params.clone(), head.clone());
    let ft = FineTuneConfig {
        epochs: 0,
        ..FineTuneConfig::desk(2)
    };
    let report = fine_tune(&mut params, &mut head, &data[..6], &data[6..], &cfg, &ft).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(params, before.0);
    assert_eq!(head, before.1);
}

#[test]
fn fine_tune_reduces_loss_and_is_deterministic() {
    let cfg = toy_cfg();
    let data = toy_dataset(&cfg);
    let run = || {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut params = HclParams::init(&cfg, &mut rng);
        let mut head = ClassifierHead::init(cfg.h, 2, 0.1, &mut rng);
        let ft = FineTuneConfig {
            epochs: 8,
            patience: 8,
            ..FineTuneConfig::desk(2)
        };
        let report = fine_tune(&mut params, &mut head, &data[..6], &data[6..], &cfg, &ft).unwrap();
        (report, params, head)
    };
    let (report, params, head) = run();
    let (report2, params2, head2) = run();
    assert_eq!(report, report2);
    assert_eq!(params, params2);
    assert_eq!(head, head2);
    let first = report.epochs.first().unwrap().train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last < first, "loss did not decrease: {first} -> {last}");
}
