//! Deterministic text embedding by signed feature hashing of character
//! n-grams, plus construction of the path-augmented input matrix.
//!
//! The embedder maps any string to a fixed point in `R^H` with no learned
//! state: each character n-gram is hashed to a bucket and a sign, the
//! contributions are accumulated, and the result is L2-normalized when
//! nonzero.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::ast::{AstGraph, AstNode};
use crate::mathx;
use crate::numerics::{ShapeError, Tensor2};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedderConfig {
    /// Embedding dimension H.
    pub dim: usize,
    /// Character n-gram sizes to hash.
    pub ngram_sizes: Vec<usize>,
    /// Seed mixed into every hash.
    pub hash_seed: u64,
}

impl EmbedderConfig {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        Self {
            dim,
            ngram_sizes: vec![3, 4],
            hash_seed: 0x48454c43,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(seed: u64, chars: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for &c in chars {
        for b in (c as u32).to_le_bytes() {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Embed a string: hash each character n-gram into one of `dim` buckets with
/// a sign bit, accumulate, and L2-normalize if the result is nonzero. The
/// empty string maps to the zero vector.
pub fn embed_text(s: &str, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.dim];
    let chars: Vec<char> = s.chars().collect();
    for &n in &cfg.ngram_sizes {
        if n == 0 || chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            let h = fnv1a(cfg.hash_seed, window);
            let bucket = ((h >> 1) % cfg.dim as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            out[bucket] += sign;
        }
    }
    let norm = mathx::sqrt(out.iter().map(|v| v * v).sum());
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

/// The string form of a node fed to the embedder: type, covered text, and
/// line span.
pub fn node_string(node: &AstNode) -> String {
    alloc::format!(
        "{}|{}|{}:{}",
        node.node_type,
        node.text,
        node.start_line,
        node.end_line
    )
}

/// One embedded row per node.
pub fn node_features(graph: &AstGraph, cfg: &EmbedderConfig) -> Tensor2 {
    let mut out = Tensor2::zeros(graph.node_count(), cfg.dim);
    for (i, node) in graph.nodes().iter().enumerate() {
        out.row_mut(i).copy_from_slice(&embed_text(&node_string(node), cfg));
    }
    out
}

/// One embedded row per root-to-leaf path; the path string is the node
/// strings joined by `/`.
pub fn path_features(graph: &AstGraph, cfg: &EmbedderConfig) -> Tensor2 {
    let mut out = Tensor2::zeros(graph.paths().len(), cfg.dim);
    for (j, path) in graph.paths().iter().enumerate() {
        let mut s = String::new();
        for (k, &id) in path.iter().enumerate() {
            if k > 0 {
                s.push('/');
            }
            s.push_str(&node_string(graph.node(id)));
        }
        out.row_mut(j).copy_from_slice(&embed_text(&s, cfg));
    }
    out
}

/// Path-augmented node features: each node row plus the mean of the rows of
/// every path passing through that node. A node on no retained path (possible
/// only after path-cap truncation) keeps its bare node row.
pub fn augment(
    x0_node: &Tensor2,
    x0_path: &Tensor2,
    graph: &AstGraph,
) -> Result<Tensor2, ShapeError> {
    let n = graph.node_count();
    if x0_node.rows() != n {
        return Err(ShapeError::new(
            "augment",
            alloc::format!("node features {:?} for {n} nodes", x0_node.shape()),
        ));
    }
    if x0_path.rows() != graph.paths().len() || x0_path.cols() != x0_node.cols() {
        return Err(ShapeError::new(
            "augment",
            alloc::format!(
                "path features {:?} for {} paths of width {}",
                x0_path.shape(),
                graph.paths().len(),
                x0_node.cols()
            ),
        ));
    }
    let h = x0_node.cols();
    let mut sums = Tensor2::zeros(n, h);
    let mut counts = vec![0usize; n];
    for (j, path) in graph.paths().iter().enumerate() {
        for &id in path {
            counts[id] += 1;
            for (acc, v) in sums.row_mut(id).iter_mut().zip(x0_path.row(j)) {
                *acc += v;
            }
        }
    }
    let mut out = x0_node.clone();
    for i in 0..n {
        if counts[i] == 0 {
            continue;
        }
        let k = counts[i] as f64;
        for (o, s) in out.row_mut(i).iter_mut().zip(sums.row(i)) {
            *o += s / k;
        }
    }
    Ok(out)
}

/// The three input matrices of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPack {
    pub x0_node: Tensor2,
    pub x0_path: Tensor2,
    pub x0_ast: Tensor2,
}

pub fn build_input_pack(graph: &AstGraph, cfg: &EmbedderConfig) -> InputPack {
    let x0_node = node_features(graph, cfg);
    let x0_path = path_features(graph, cfg);
    let x0_ast = augment(&x0_node, &x0_path, graph).expect("shapes are consistent by construction");
    InputPack {
        x0_node,
        x0_path,
        x0_ast,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{parse_demo_source, AstGraph, AstNode, Caps};

    fn cfg() -> EmbedderConfig {
        EmbedderConfig::new(16)
    }

    fn tree(parents: &[Option<usize>]) -> AstGraph {
        let records: Vec<AstNode> = parents
            .iter()
            .enumerate()
            .map(|(id, &parent)| AstNode {
                id,
                node_type: alloc::format!("T{id}"),
                text: alloc::format!("text{id}"),
                start_line: 1,
                end_line: 1,
                parent,
                children: Vec::new(),
            })
            .collect();
        AstGraph::from_records(records, &Caps::default()).unwrap()
    }

    #[test]
    fn embed_is_deterministic() {
        let a = embed_text("while (x < 3)", &cfg());
        let b = embed_text("while (x < 3)", &cfg());
        assert_eq!(a, b);
    }

    #[test]
    fn embed_empty_string_is_zero() {
        let v = embed_text("", &cfg());
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embed_nonempty_is_unit_norm() {
        for s in ["abc", "fn main", "x = 1 + 2;", "Identifier|x|1:1"] {
            let v = embed_text(s, &cfg());
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "norm {norm} for {s:?}");
        }
    }

    #[test]
    fn node_rows_distinguish_positions() {
        let mut records = alloc::vec![
            AstNode {
                id: 0,
                node_type: "Root".into(),
                text: "same".into(),
                start_line: 1,
                end_line: 1,
                parent: None,
                children: Vec::new(),
            },
            AstNode {
                id: 1,
                node_type: "Root".into(),
                text: "same".into(),
                start_line: 2,
                end_line: 2,
                parent: Some(0),
                children: Vec::new(),
            },
        ];
        records[1].node_type = "Root".into();
        let g = AstGraph::from_records(records, &Caps::default()).unwrap();
        let feats = node_features(&g, &cfg());
        assert_ne!(feats.row(0), feats.row(1));
    }

    #[test]
    fn single_node_pack_adds_path_row() {
        let g = tree(&[None]);
        let pack = build_input_pack(&g, &cfg());
        assert_eq!(pack.x0_node.shape(), (1, 16));
        assert_eq!(pack.x0_path.shape(), (1, 16));
        for j in 0..16 {
            let want = pack.x0_node.get(0, j) + pack.x0_path.get(0, j);
            assert!((pack.x0_ast.get(0, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn leaf_gets_its_unique_path_row() {
        // Root with two leaves: each leaf lies on exactly one path.
        let g = tree(&[None, Some(0), Some(0)]);
        let pack = build_input_pack(&g, &cfg());
        assert_ne!(pack.x0_path.row(0), pack.x0_path.row(1));
        for (leaf, path_idx) in [(1usize, 0usize), (2, 1)] {
            for j in 0..16 {
                let want = pack.x0_node.get(leaf, j) + pack.x0_path.get(path_idx, j);
                assert!((pack.x0_ast.get(leaf, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn root_of_full_binary_tree_gets_mean_of_all_paths() {
        let g = tree(&[None, Some(0), Some(1), Some(1), Some(0), Some(4), Some(4)]);
        let pack = build_input_pack(&g, &cfg());
        assert_eq!(pack.x0_path.rows(), 4);
        for j in 0..16 {
            let mean: f64 = (0..4).map(|p| pack.x0_path.get(p, j)).sum::<f64>() / 4.0;
            let want = pack.x0_node.get(0, j) + mean;
            assert!((pack.x0_ast.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_is_linear_in_path_rows() {
        let g = tree(&[None, Some(0), Some(1), Some(0)]);
        let x0_node = node_features(&g, &cfg());
        let x0_path = path_features(&g, &cfg());
        let base = augment(&x0_node, &x0_path, &g).unwrap();
        let scaled = augment(&x0_node, &x0_path.scale(3.0), &g).unwrap();
        for i in 0..base.rows() {
            for j in 0..base.cols() {
                let contrib = base.get(i, j) - x0_node.get(i, j);
                let want = x0_node.get(i, j) + 3.0 * contrib;
                assert!((scaled.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pack_on_parsed_source_is_finite_and_deterministic() {
        let g = parse_demo_source("fn f(a){ if (a < 2) { a = a + 1; } return a; }", &Caps::default())
            .unwrap();
        let p1 = build_input_pack(&g, &cfg());
        let p2 = build_input_pack(&g, &cfg());
        assert_eq!(p1, p2);
        assert!(p1.x0_ast.all_finite());
    }
}
