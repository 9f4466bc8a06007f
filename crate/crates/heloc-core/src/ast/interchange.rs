//! AST interchange format: UTF-8, one JSON object per node per line.
//!
//! Fields are `id, type, text, start_line, end_line, parent` with `parent`
//! null for the root. Children order under a parent is the file order of the
//! child records. Levels and paths are always recomputed on load, never
//! trusted from the file.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AstError, AstGraph, AstNode, Caps};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    #[serde(rename = "type")]
    node_type: String,
    text: String,
    start_line: usize,
    end_line: usize,
    parent: Option<usize>,
}

/// Load a graph from interchange bytes.
pub fn load_ast_json(bytes: &[u8], caps: &Caps) -> Result<AstGraph, AstError> {
    let text = core::str::from_utf8(bytes).map_err(|e| AstError::Interchange {
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord =
            serde_json::from_str(line).map_err(|e| AstError::Interchange {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if rec.end_line < rec.start_line || rec.start_line == 0 {
            return Err(AstError::Interchange {
                line: idx + 1,
                message: format!(
                    "bad line span {}..{}",
                    rec.start_line, rec.end_line
                ),
            });
        }
        records.push(AstNode {
            id: rec.id,
            node_type: rec.node_type,
            text: rec.text,
            start_line: rec.start_line,
            end_line: rec.end_line,
            parent: rec.parent,
            children: Vec::new(),
        });
    }
    AstGraph::from_records(records, caps)
}

/// Serialize a graph to interchange text. Nodes are emitted in preorder so
/// that file order reproduces children order on reload.
pub fn save_ast_json(graph: &AstGraph) -> String {
    let mut out = String::new();
    for id in graph.preorder() {
        let n = graph.node(id);
        let rec = NodeRecord {
            id: n.id,
            node_type: n.node_type.clone(),
            text: n.text.clone(),
            start_line: n.start_line,
            end_line: n.end_line,
            parent: n.parent,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
