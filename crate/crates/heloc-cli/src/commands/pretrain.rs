use heloc_core::hcl::pretrain_with;

use crate::config::write_effective_config;
use crate::errors::CliError;
use crate::ioutil::{atomic_write, corpus_files, load_graph};
use crate::runner::ThreadedRunner;
use crate::PretrainArgs;

pub fn run(args: PretrainArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let caps = cfg.caps();
    let files = corpus_files(&args.corpus)?;
    let mut corpus = Vec::with_capacity(files.len());
    for file in &files {
        corpus.push(load_graph(file, &caps)?);
    }
    let runner = ThreadedRunner::from_env();
    let out = pretrain_with(&corpus, &cfg, &runner)?;

    atomic_write(
        &args.out_dir.join("checkpoint.helc"),
        &out.checkpoint.to_bytes(),
    )?;
    let mut log = String::from("step,loss,l_h,l_t,theta_p,tau_p\n");
    for row in &out.log {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.step, row.loss, row.l_h, row.l_t, row.theta_p, row.tau_p
        ));
    }
    atomic_write(&args.out_dir.join("training_log.csv"), log.as_bytes())?;
    write_effective_config(
        &args.out_dir,
        "pretrain",
        &cfg,
        &[
            ("corpus", args.corpus.display().to_string()),
            ("corpus_files", files.len().to_string()),
            ("threads", runner.threads.to_string()),
        ],
    )?;
    if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
        println!(
            "pretrained {} steps on {} graphs: loss {:.4} -> {:.4}",
            out.log.len(),
            corpus.len(),
            first.loss,
            last.loss
        );
    } else {
        println!("wrote initialization checkpoint (0 steps)");
    }
    println!("{}", args.out_dir.join("checkpoint.helc").display());
    Ok(())
}
