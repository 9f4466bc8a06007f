use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use heloc_core::downstream::{
    accuracy, ari, classify_predict, code_vector, fine_tune, kmeans, pca2, prf1, ClassifierHead,
    CloneCalibration, CodeVector, FineTuneConfig,
};
use heloc_core::hcl::{prepare_graph, Checkpoint, PreparedGraph};
use heloc_core::rsgnn::encode_frozen;
use heloc_core::TrainConfig;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::write_effective_config;
use crate::errors::CliError;
use crate::ioutil::{atomic_write, load_graph, read_labeled_csv, read_pairs_csv};
use crate::{ApplyCommon, ApplyTask};

pub fn run(task: ApplyTask) -> Result<(), CliError> {
    match task {
        ApplyTask::Classify {
            common,
            train,
            eval,
            epochs,
            ft_lr,
            patience,
            smoothing,
            val_fraction,
        } => classify(
            common,
            &train,
            &eval,
            epochs,
            ft_lr,
            patience,
            smoothing,
            val_fraction,
        ),
        ApplyTask::Clone {
            common,
            pairs,
            calibrate_pairs,
        } => clone_task(common, &pairs, calibrate_pairs.as_deref()),
        ApplyTask::Cluster {
            common,
            inputs,
            k,
            labels,
            max_iters,
        } => cluster(common, &inputs, k, labels.as_deref(), max_iters),
        ApplyTask::Embed { common, inputs } => embed(common, &inputs),
        ApplyTask::Project { common, input } => project(common, &input),
    }
}

fn load_checkpoint(common: &ApplyCommon) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(&common.checkpoint).map_err(|e| CliError::io(&common.checkpoint, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn prepare(path: &Path, cfg: &TrainConfig) -> Result<PreparedGraph, CliError> {
    let graph = load_graph(path, &cfg.caps())?;
    Ok(prepare_graph(&graph, &cfg.embedder()))
}

/// Pooled vector per unique path; duplicates are computed once.
fn vectors_for(
    paths: &[PathBuf],
    ckpt: &Checkpoint,
) -> Result<HashMap<PathBuf, CodeVector>, CliError> {
    let opts = ckpt.config.encoder_options();
    let mut out = HashMap::new();
    for path in paths {
        if out.contains_key(path) {
            continue;
        }
        let prepared = prepare(path, &ckpt.config)?;
        let vector = code_vector(&prepared, &ckpt.params, &opts)?;
        out.insert(path.clone(), vector);
    }
    Ok(out)
}

fn write_metrics(out_dir: &Path, rows: &[(&str, f64)]) -> Result<(), CliError> {
    let mut text = String::from("metric,value\n");
    for (name, value) in rows {
        text.push_str(&format!("{name},{value}\n"));
    }
    atomic_write(&out_dir.join("metrics.csv"), text.as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn classify(
    common: ApplyCommon,
    train: &Path,
    eval: &Path,
    epochs: usize,
    ft_lr: f64,
    patience: usize,
    smoothing: f64,
    val_fraction: f64,
) -> Result<(), CliError> {
    let mut ckpt = load_checkpoint(&common)?;
    let seed = common.seed.unwrap_or(ckpt.config.seed);
    let train_rows = read_labeled_csv(train)?;
    let eval_rows = read_labeled_csv(eval)?;

    let mut train_data = Vec::with_capacity(train_rows.len());
    for (path, label) in &train_rows {
        train_data.push((prepare(path, &ckpt.config)?, *label));
    }
    let mut eval_data = Vec::with_capacity(eval_rows.len());
    for (path, label) in &eval_rows {
        eval_data.push((prepare(path, &ckpt.config)?, *label));
    }
    let classes = train_data
        .iter()
        .chain(&eval_data)
        .map(|(_, l)| l + 1)
        .max()
        .unwrap_or(2)
        .max(2);

    // Seeded shuffle, then split off the early-stopping slice.
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let val_count = ((train_data.len() as f64 * val_fraction) as usize)
        .min(train_data.len().saturating_sub(1));
    let (val_idx, fit_idx) = order.split_at(val_count);
    let fit: Vec<_> = fit_idx.iter().map(|&i| train_data[i].clone()).collect();
    let val: Vec<_> = val_idx.iter().map(|&i| train_data[i].clone()).collect();

    let ft = FineTuneConfig {
        epochs,
        lr: ft_lr,
        patience,
        smoothing,
        seed,
        ..FineTuneConfig::desk(classes)
    };
    let mut head = ClassifierHead::init(ckpt.config.h, classes, smoothing, &mut rng);
    let report = fine_tune(&mut ckpt.params, &mut head, &fit, &val, &ckpt.config, &ft)?;

    let opts = ckpt.config.encoder_options();
    let mut predictions = String::from("path,label,predicted\n");
    for ((path, label), (prepared, _)) in eval_rows.iter().zip(&eval_data) {
        let r = code_vector(prepared, &ckpt.params, &opts)?;
        let predicted = classify_predict(&r, &head)?;
        predictions.push_str(&format!("{},{},{}\n", path.display(), label, predicted));
    }
    atomic_write(&common.out_dir.join("predictions.csv"), predictions.as_bytes())?;

    let eval_accuracy = accuracy(&eval_data, &ckpt.params, &head, &opts)?;
    write_metrics(
        &common.out_dir,
        &[
            ("eval_accuracy", eval_accuracy),
            ("best_val_accuracy", report.best_val_accuracy),
            ("epochs_run", report.epochs.len() as f64),
        ],
    )?;
    write_effective_config(
        &common.out_dir,
        "apply.classify",
        &ckpt.config,
        &[
            ("checkpoint", common.checkpoint.display().to_string()),
            ("task_seed", seed.to_string()),
            ("epochs", epochs.to_string()),
            ("ft_lr", ft_lr.to_string()),
            ("classes", classes.to_string()),
        ],
    )?;
    println!("classify: eval accuracy {eval_accuracy:.4} over {} snippets", eval_data.len());
    Ok(())
}

fn clone_task(
    common: ApplyCommon,
    pairs: &Path,
    calibrate_pairs: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&common)?;
    let pair_rows = read_pairs_csv(pairs)?;
    let mut all_paths: Vec<PathBuf> = Vec::new();
    for (a, b, _) in &pair_rows {
        all_paths.push(a.clone());
        all_paths.push(b.clone());
    }
    let calibration_rows = match calibrate_pairs {
        Some(path) => {
            let rows = read_pairs_csv(path)?;
            for (a, b, _) in &rows {
                all_paths.push(a.clone());
                all_paths.push(b.clone());
            }
            Some(rows)
        }
        None => None,
    };
    let vectors = vectors_for(&all_paths, &ckpt)?;

    let calibration = match &calibration_rows {
        Some(rows) => {
            let mut ps = Vec::with_capacity(rows.len());
            let mut ys = Vec::with_capacity(rows.len());
            for (a, b, y) in rows {
                let verdict =
                    heloc_core::downstream::clone_predict(&vectors[a], &vectors[b])?;
                ps.push(verdict.p);
                ys.push(*y);
            }
            CloneCalibration::fit(&ps, &ys)?
        }
        None => CloneCalibration::identity(),
    };

    let mut predictions = String::from("path1,path2,y,p,predicted\n");
    let mut predicted = Vec::with_capacity(pair_rows.len());
    let mut truth = Vec::with_capacity(pair_rows.len());
    for (a, b, y) in &pair_rows {
        let verdict = calibration.predict(&vectors[a], &vectors[b])?;
        predictions.push_str(&format!(
            "{},{},{},{},{}\n",
            a.display(),
            b.display(),
            y,
            verdict.p,
            i32::from(verdict.is_clone)
        ));
        predicted.push(verdict.is_clone);
        truth.push(*y > 0.0);
    }
    atomic_write(&common.out_dir.join("clone_predictions.csv"), predictions.as_bytes())?;
    let (precision, recall, f1) = prf1(&predicted, &truth)?;
    write_metrics(
        &common.out_dir,
        &[("precision", precision), ("recall", recall), ("f1", f1)],
    )?;
    write_effective_config(
        &common.out_dir,
        "apply.clone",
        &ckpt.config,
        &[
            ("checkpoint", common.checkpoint.display().to_string()),
            ("pairs", pairs.display().to_string()),
            (
                "calibrated",
                calibration_rows.is_some().to_string(),
            ),
        ],
    )?;
    println!(
        "clone: P {precision:.4} R {recall:.4} F1 {f1:.4} over {} pairs",
        pair_rows.len()
    );
    Ok(())
}

fn cluster(
    common: ApplyCommon,
    inputs: &[PathBuf],
    k: usize,
    labels: Option<&Path>,
    max_iters: usize,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&common)?;
    let seed = common.seed.unwrap_or(ckpt.config.seed);
    let vectors_by_path = vectors_for(inputs, &ckpt)?;
    let points: Vec<CodeVector> = inputs.iter().map(|p| vectors_by_path[p].clone()).collect();
    let result = kmeans(&points, k, seed, max_iters)?;

    let mut assignments = String::from("path,cluster\n");
    for (path, cluster) in inputs.iter().zip(&result.assignments) {
        assignments.push_str(&format!("{},{}\n", path.display(), cluster));
    }
    atomic_write(&common.out_dir.join("assignments.csv"), assignments.as_bytes())?;

    let mut metrics: Vec<(&str, f64)> = vec![
        ("inertia", *result.inertia_trace.last().unwrap_or(&0.0)),
        ("iterations", result.iterations as f64),
    ];
    let mut ari_value = None;
    if let Some(labels_path) = labels {
        let rows = read_labeled_csv(labels_path)?;
        let by_path: HashMap<PathBuf, usize> = rows.into_iter().collect();
        let mut truth = Vec::with_capacity(inputs.len());
        for path in inputs {
            let label = by_path.get(path).ok_or_else(|| {
                CliError::input(format!(
                    "{}: no label for {}",
                    labels_path.display(),
                    path.display()
                ))
            })?;
            truth.push(*label);
        }
        let score = ari(&result.assignments, &truth)?;
        metrics.push(("ari", score));
        ari_value = Some(score);
    }
    write_metrics(&common.out_dir, &metrics)?;
    write_effective_config(
        &common.out_dir,
        "apply.cluster",
        &ckpt.config,
        &[
            ("checkpoint", common.checkpoint.display().to_string()),
            ("task_seed", seed.to_string()),
            ("k", k.to_string()),
        ],
    )?;
    match ari_value {
        Some(score) => println!("cluster: k={k} ari {score:.4} over {} snippets", inputs.len()),
        None => println!("cluster: k={k} over {} snippets", inputs.len()),
    }
    Ok(())
}

fn embed(common: ApplyCommon, inputs: &[PathBuf]) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&common)?;
    let vectors = vectors_for(inputs, &ckpt)?;
    let mut text = String::from("path");
    for j in 0..ckpt.config.h {
        text.push_str(&format!(",v{j}"));
    }
    text.push('\n');
    for path in inputs {
        text.push_str(&path.display().to_string());
        for v in &vectors[path].r {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    atomic_write(&common.out_dir.join("vectors.csv"), text.as_bytes())?;
    write_effective_config(
        &common.out_dir,
        "apply.embed",
        &ckpt.config,
        &[("checkpoint", common.checkpoint.display().to_string())],
    )?;
    println!("embed: wrote {} vectors of dimension {}", inputs.len(), ckpt.config.h);
    Ok(())
}

fn project(common: ApplyCommon, input: &Path) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&common)?;
    let prepared = prepare(input, &ckpt.config)?;
    let opts = ckpt.config.encoder_options();
    let x_nd = encode_frozen(&prepared.x0_ast, &prepared.padj, &ckpt.params.encoder, &opts)
        .map_err(|e| CliError::Model(e.to_string()))?;
    let coords = pca2(&x_nd);
    let mut text = String::from("node_id,level,pc1,pc2\n");
    for (id, ((pc1, pc2), level)) in coords.iter().zip(&prepared.levels).enumerate() {
        text.push_str(&format!("{id},{level},{pc1},{pc2}\n"));
    }
    atomic_write(&common.out_dir.join("projection.csv"), text.as_bytes())?;
    write_effective_config(
        &common.out_dir,
        "apply.project",
        &ckpt.config,
        &[
            ("checkpoint", common.checkpoint.display().to_string()),
            ("input", input.display().to_string()),
        ],
    )?;
    println!("project: wrote {} node coordinates", coords.len());
    Ok(())
}
