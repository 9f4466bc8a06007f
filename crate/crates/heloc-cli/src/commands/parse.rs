use heloc_core::ast::save_ast_json;

use crate::config::write_effective_config;
use crate::errors::CliError;
use crate::ioutil::{atomic_write, load_graph};
use crate::ParseArgs;

pub fn run(args: ParseArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let caps = cfg.caps();
    let mut stats = String::from("file,nodes,depth,paths,paths_dropped\n");
    for input in &args.inputs {
        let graph = load_graph(input, &caps)?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("tree");
        let out = args.out_dir.join(format!("{stem}.ast.jsonl"));
        atomic_write(&out, save_ast_json(&graph).as_bytes())?;
        stats.push_str(&format!(
            "{},{},{},{},{}\n",
            input.display(),
            graph.node_count(),
            graph.depth(),
            graph.paths().len(),
            graph.paths_dropped()
        ));
        println!(
            "{}: N={} depth={} M={} -> {}",
            input.display(),
            graph.node_count(),
            graph.depth(),
            graph.paths().len(),
            out.display()
        );
    }
    atomic_write(&args.out_dir.join("parse_stats.csv"), stats.as_bytes())?;
    write_effective_config(&args.out_dir, "parse", &cfg, &[])?;
    Ok(())
}
