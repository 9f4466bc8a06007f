use heloc_core::ast::parse_demo_source;
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
    let mut per_level_total = vec![0usize; 9];
    let mut per_level_correct = vec![0usize; 9];
    let mut confusions: std::collections::HashMap<(usize, usize, String), usize> = Default::default();
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
            per_level_total[level] += 1;
            if best == level { per_level_correct[level] += 1; }
            else { *confusions.entry((level, best, g.node(i).node_type.clone())).or_default() += 1; }
        }
    }
    for l in 0..9 {
        if per_level_total[l] > 0 {
            println!("level {l}: {}/{} = {:.3}", per_level_correct[l], per_level_total[l],
                per_level_correct[l] as f64 / per_level_total[l] as f64);
        }
    }
    let mut worst: Vec<_> = confusions.into_iter().collect();
    worst.sort_by_key(|(_, c)| std::cmp::Reverse(*c));
    for ((t, p, ty), c) in worst.into_iter().take(10) {
        println!("true {t} -> pred {p} [{ty}] x{c}");
    }
}
