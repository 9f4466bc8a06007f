use std::fs;
use std::path::{Path, PathBuf};

use heloc_core::ast::{load_ast_json, parse_demo_source};
use heloc_core::{AstGraph, Caps};

use crate::errors::{ast_error, CliError};

/// Write via a temp file in the same directory, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("new")
    ));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// True when the path looks like an interchange file rather than source.
fn is_interchange(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ast")
    )
}

/// Load one AST from a demo source or interchange file.
pub fn load_graph(path: &Path, caps: &Caps) -> Result<AstGraph, CliError> {
    if is_interchange(path) {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        load_ast_json(&bytes, caps).map_err(|e| ast_error(path, e))
    } else {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        parse_demo_source(&text, caps).map_err(|e| ast_error(path, e))
    }
}

/// All corpus files (`.dl` sources and `.jsonl`/`.ast` interchange) under a
/// directory, sorted by name for deterministic ordering.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("dl") | Some("jsonl") | Some("ast")
                )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!(
            "{}: no corpus files (.dl, .jsonl, .ast)",
            dir.display()
        )));
    }
    Ok(files)
}

/// Parse a `path,label` CSV. Paths resolve relative to the CSV's directory.
pub fn read_labeled_csv(path: &Path) -> Result<Vec<(PathBuf, usize)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line == "path,label") {
            continue;
        }
        let (p, label) = line.split_once(',').ok_or_else(|| {
            CliError::input(format!("{}:{}: expected `path,label`", path.display(), idx + 1))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            CliError::input(format!("{}:{}: bad label `{label}`", path.display(), idx + 1))
        })?;
        out.push((base.join(p.trim()), label));
    }
    if out.is_empty() {
        return Err(CliError::input(format!("{}: no rows", path.display())));
    }
    Ok(out)
}

/// Parse a `path1,path2,y` CSV with y in {1,-1}.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<(PathBuf, PathBuf, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line == "path1,path2,y") {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (p1, p2, y) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(y)) => (a, b, y),
            _ => {
                return Err(CliError::input(format!(
                    "{}:{}: expected `path1,path2,y`",
                    path.display(),
                    idx + 1
                )))
            }
        };
        let y: f64 = y.trim().parse().map_err(|_| {
            CliError::input(format!("{}:{}: bad label `{y}`", path.display(), idx + 1))
        })?;
        if y != 1.0 && y != -1.0 {
            return Err(CliError::input(format!(
                "{}:{}: clone label must be 1 or -1",
                path.display(),
                idx + 1
            )));
        }
        out.push((base.join(p1.trim()), base.join(p2.trim()), y));
    }
    if out.is_empty() {
        return Err(CliError::input(format!("{}: no rows", path.display())));
    }
    Ok(out)
}
