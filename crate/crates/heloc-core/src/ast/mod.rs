//! AST construction and analysis: parsing the demo language, loading the
//! line-delimited JSON interchange format, and deriving the structure used
//! by the encoder (levels, root-to-leaf paths, adjacency, triplets).

mod interchange;
mod parse;

pub use interchange::{load_ast_json, save_ast_json};
pub use parse::parse_demo_source;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub enum AstError {
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    CapExceeded {
        cap: &'static str,
        limit: usize,
        actual: usize,
    },
    Interchange {
        line: usize,
        message: String,
    },
    DanglingParent {
        node: usize,
        parent: usize,
    },
    Cycle {
        node: usize,
    },
    InvalidStructure(String),
}

impl fmt::Display for AstError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AstError::Syntax { line, col, message } => {
                write!(f, "syntax error at line {line}, column {col}: {message}")
            }
            AstError::CapExceeded { cap, limit, actual } => {
                write!(f, "cap violation: {cap} = {limit} exceeded ({actual})")
            }
            AstError::Interchange { line, message } => {
                write!(f, "bad interchange record at line {line}: {message}")
            }
            AstError::DanglingParent { node, parent } => {
                write!(f, "node {node} references missing parent {parent}")
            }
            AstError::Cycle { node } => write!(f, "cycle detected through node {node}"),
            AstError::InvalidStructure(msg) => write!(f, "invalid tree: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AstError {}

/// Structural limits on ingested trees. Over-depth and over-node trees are
/// rejected; excess paths are truncated and counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_depth: usize,
    pub max_paths: usize,
    pub max_nodes: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_depth: 30,
            max_paths: 200,
            max_nodes: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: usize,
    pub node_type: String,
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// A validated AST with derived levels and root-to-leaf paths.
#[derive(Debug, Clone, PartialEq)]
pub struct AstGraph {
    nodes: Vec<AstNode>,
    root: usize,
    levels: Vec<usize>,
    paths: Vec<Vec<usize>>,
    paths_dropped: usize,
}

impl AstGraph {
    /// Build a graph from nodes whose `parent` fields are set. `records`
    /// order determines children order under each parent (the interchange
    /// file-order rule); `children` fields on input are ignored and rebuilt.
    pub fn from_records(records: Vec<AstNode>, caps: &Caps) -> Result<Self, AstError> {
        let n = records.len();
        if n == 0 {
            return Err(AstError::InvalidStructure(String::from("no nodes")));
        }
        if n > caps.max_nodes {
            return Err(AstError::CapExceeded {
                cap: "max_nodes",
                limit: caps.max_nodes,
                actual: n,
            });
        }

        let mut nodes: Vec<Option<AstNode>> = vec![None; n];
        let mut order = Vec::with_capacity(n);
        for mut rec in records {
            if rec.id >= n {
                return Err(AstError::InvalidStructure(format!(
                    "node id {} outside 0..{}",
                    rec.id,
                    n - 1
                )));
            }
            if nodes[rec.id].is_some() {
                return Err(AstError::InvalidStructure(format!(
                    "duplicate node id {}",
                    rec.id
                )));
            }
            if rec.parent == Some(rec.id) {
                return Err(AstError::Cycle { node: rec.id });
            }
            if let Some(p) = rec.parent {
                if p >= n {
                    return Err(AstError::DanglingParent {
                        node: rec.id,
                        parent: p,
                    });
                }
            }
            rec.children.clear();
            let id = rec.id;
            order.push(id);
            nodes[id] = Some(rec);
        }
        let mut nodes: Vec<AstNode> = nodes.into_iter().map(|n| n.unwrap()).collect();

        let mut root = None;
        for &id in &order {
            match nodes[id].parent {
                None => {
                    if let Some(prev) = root {
                        return Err(AstError::InvalidStructure(format!(
                            "multiple roots: {prev} and {id}"
                        )));
                    }
                    root = Some(id);
                }
                Some(p) => {
                    let child = id;
                    nodes[p].children.push(child);
                }
            }
        }
        let root = root.ok_or_else(|| AstError::InvalidStructure(String::from("no root node")))?;

        let levels = levels_from_structure(&nodes, root)?;
        let depth = levels.iter().copied().max().unwrap_or(0);
        if depth > caps.max_depth {
            return Err(AstError::CapExceeded {
                cap: "max_depth",
                limit: caps.max_depth,
                actual: depth,
            });
        }
        let (paths, paths_dropped) = paths_from_structure(&nodes, root, caps.max_paths);

        Ok(Self {
            nodes,
            root,
            levels,
            paths,
            paths_dropped,
        })
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &AstNode {
        &self.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Edge distance of each node from the root.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Root-to-leaf paths in leaf-discovery (depth-first) order, after cap
    /// truncation.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    /// Number of paths dropped by the `max_paths` cap.
    pub fn paths_dropped(&self) -> usize {
        self.paths_dropped
    }

    pub fn depth(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    /// Preorder node ids following children order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.nodes[id].children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }
}

fn levels_from_structure(nodes: &[AstNode], root: usize) -> Result<Vec<usize>, AstError> {
    let n = nodes.len();
    let mut levels = vec![usize::MAX; n];
    let mut stack = vec![root];
    levels[root] = 0;
    let mut reached = 0usize;
    while let Some(id) = stack.pop() {
        reached += 1;
        for &c in &nodes[id].children {
            if levels[c] != usize::MAX {
                return Err(AstError::Cycle { node: c });
            }
            levels[c] = levels[id] + 1;
            stack.push(c);
        }
    }
    if reached < n {
        let stray = levels.iter().position(|&l| l == usize::MAX).unwrap();
        return Err(AstError::Cycle { node: stray });
    }
    Ok(levels)
}

fn paths_from_structure(
    nodes: &[AstNode],
    root: usize,
    max_paths: usize,
) -> (Vec<Vec<usize>>, usize) {
    let mut paths = Vec::new();
    let mut dropped = 0usize;
    let mut trail = Vec::new();
    // Explicit DFS carrying the current root-to-node trail.
    let mut stack = vec![(root, 0usize)];
    while let Some((id, depth)) = stack.pop() {
        trail.truncate(depth);
        trail.push(id);
        if nodes[id].children.is_empty() {
            if paths.len() < max_paths {
                paths.push(trail.clone());
            } else {
                dropped += 1;
            }
        } else {
            for &c in nodes[id].children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
    }
    (paths, dropped)
}

/// Recompute node levels from the tree structure (the DFS pseudo-label
/// construction: root 0, children one more than their parent).
pub fn compute_levels(graph: &AstGraph) -> Vec<usize> {
    levels_from_structure(&graph.nodes, graph.root).expect("graph was validated on construction")
}

/// Recompute root-to-leaf paths, truncated to `max_paths`. Returns the kept
/// paths and the number dropped.
pub fn extract_paths(graph: &AstGraph, max_paths: usize) -> (Vec<Vec<usize>>, usize) {
    paths_from_structure(&graph.nodes, graph.root, max_paths)
}

/// Directed adjacency with self-connections and its inverse row sums.
///
/// `a_tilde = A + I` where `A[j][i] = 1` iff node `i` is the parent of `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyPack {
    pub a_tilde: Tensor2,
    pub d_tilde_inv: Vec<f64>,
}

impl AdjacencyPack {
    /// The row-normalized operator `D̃⁻¹ Ã` applied by every graph
    /// convolution.
    pub fn normalized(&self) -> Tensor2 {
        let n = self.a_tilde.rows();
        Tensor2::from_fn(n, n, |i, j| self.a_tilde.get(i, j) * self.d_tilde_inv[i])
    }
}

pub fn build_adjacency(graph: &AstGraph) -> AdjacencyPack {
    let n = graph.node_count();
    let mut a_tilde = Tensor2::zeros(n, n);
    for i in 0..n {
        a_tilde.set(i, i, 1.0);
        if let Some(p) = graph.nodes[i].parent {
            a_tilde.set(i, p, 1.0);
        }
    }
    let d_tilde_inv = (0..n)
        .map(|i| 1.0 / a_tilde.row(i).iter().sum::<f64>())
        .collect();
    AdjacencyPack { a_tilde, d_tilde_inv }
}

/// Contrastive triples: anchors paired with a same-level positive and an
/// other-level negative, with the level gap of each triple.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub triples: Vec<[usize; 3]>,
    pub delta_l: Vec<u32>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Sample `count` triples. Anchors are drawn uniformly from nodes that have
/// at least one same-level peer and at least one node at a different level;
/// positives uniformly from the anchor's peers, negatives uniformly from all
/// other-level nodes. Deterministic for a given seed.
///
/// Returns the batch and a flag that is true when no valid anchor exists
/// (e.g. a pure chain), in which case the batch is empty.
pub fn sample_triplets(graph: &AstGraph, count: usize, rng_seed: u64) -> (TripletBatch, bool) {
    sample_triplets_from_levels(graph.levels(), count, rng_seed)
}

/// [`sample_triplets`] on a bare level assignment (one level per node).
pub fn sample_triplets_from_levels(
    levels: &[usize],
    count: usize,
    rng_seed: u64,
) -> (TripletBatch, bool) {
    let n = levels.len();
    let depth = levels.iter().copied().max().unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
    for (id, &l) in levels.iter().enumerate() {
        groups[l].push(id);
    }
    let anchors: Vec<usize> = (0..n)
        .filter(|&v| {
            let g = groups[levels[v]].len();
            g >= 2 && n > g
        })
        .collect();
    if anchors.is_empty() {
        return (TripletBatch::default(), true);
    }

    let mut others: Vec<Option<Vec<usize>>> = vec![None; depth + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut batch = TripletBatch::default();
    for _ in 0..count {
        let anchor = anchors[rng.random_range(0..anchors.len())];
        let level = levels[anchor];
        let peers = &groups[level];
        let mut pick = rng.random_range(0..peers.len() - 1);
        if peers[pick] == anchor {
            pick = peers.len() - 1;
        }
        let positive = peers[pick];
        let pool = others[level].get_or_insert_with(|| {
            (0..n).filter(|&v| levels[v] != level).collect()
        });
        let negative = pool[rng.random_range(0..pool.len())];
        let gap = levels[negative].abs_diff(level) as u32;
        batch.triples.push([anchor, positive, negative]);
        batch.delta_l.push(gap);
    }
    (batch, false)
}
