use heloc_core::ast::parse_demo_source;
use heloc_core::downstream::pool;
use heloc_core::hcl::{nep_logits_frozen, prepare_graph, Checkpoint};
use heloc_core::rsgnn::encode_frozen;

fn main() {
    let ckpt_path = std::env::args().nth(1).unwrap();
    let holdout_seed: u64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let bytes = std::fs::read(ckpt_path).unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let cfg = &ckpt.config;
    let opts = cfg.encoder_options();
    let embedder = cfg.embedder();

    let mut correct = 0usize;
    let mut total = 0usize;
    let mut d_sum = [0.0f64; 3];
    let mut d_trees = 0usize;
    for src in heloc_core::synth::random_corpus(holdout_seed, 50) {
        let g = parse_demo_source(&src, &cfg.caps()).unwrap();
        let prepared = prepare_graph(&g, &embedder);
        let x = encode_frozen(&prepared.x0_ast, &prepared.padj, &ckpt.params.encoder, &opts).unwrap();
        let logits = nep_logits_frozen(&x, &ckpt.params).unwrap();
        for (i, &level) in prepared.levels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] { best = j; }
            }
            if best == level { correct += 1; }
            total += 1;
        }
        // per-tree mean squared distance by level gap
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        let n = prepared.levels.len();
        for i in 0..n {
            for j in i+1..n {
                let gap = prepared.levels[i].abs_diff(prepared.levels[j]);
                if gap <= 2 {
                    let d: f64 = (0..x.cols()).map(|c| {
                        let d = x.get(i, c) - x.get(j, c);
                        d * d
                    }).sum();
                    sums[gap] += d;
                    counts[gap] += 1;
                }
            }
        }
        if counts.iter().all(|&c| c > 0) {
            for k in 0..3 { d_sum[k] += sums[k] / counts[k] as f64; }
            d_trees += 1;
        }
        let _ = pool(&x);
    }
    let acc = correct as f64 / total as f64;
    let d: Vec<f64> = d_sum.iter().map(|s| s / d_trees as f64).collect();
    println!("nep_holdout_accuracy={acc:.4} total_nodes={total}");
    println!("D(0)={:.4} D(1)={:.4} D(2)={:.4} trees={d_trees} ordered={}", d[0], d[1], d[2], d[0] < d[1] && d[1] < d[2]);
}
