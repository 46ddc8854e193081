//! Synthetic desk-scale run: generate shapes, train, evaluate closed-set.
//!
//! ```sh
//! cargo run --release --example desk_pipeline -- [out_dir] [seed]
//! ```

use std::time::Instant;

use openaff::data::{generate_synthetic, synthetic_embeddings, Dataset, EmbeddingPlan, SyntheticSpec};
use openaff::eval::{run_protocol, ProtocolMode, ProtocolOptions};
use openaff::trainer::{save_checkpoint, train, write_log, TrainConfig};

fn main() -> openaff::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/desk-run".into()));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);

    let started = Instant::now();
    let manifest = generate_synthetic(&SyntheticSpec::desk(seed), out.join("data"))?;
    let dataset = Dataset::load(&manifest)?;
    let config = TrainConfig::desk(seed);
    let table = synthetic_embeddings(
        &dataset.manifest.seen_labels,
        config.embedding_dim,
        seed,
        &EmbeddingPlan::Orthonormal,
    )?;

    let outcome = train(&config, &dataset, &table)?;
    save_checkpoint(out.join("model.oadc"), &outcome.checkpoint)?;
    write_log(out.join("train.jsonl"), &outcome.log)?;

    let options = ProtocolOptions {
        mode: ProtocolMode::ClosedSet,
        split: "test".into(),
        points: config.points,
        seed,
    };
    let report = run_protocol(&outcome.checkpoint.model, &dataset, &table, &options)?;
    let first = outcome.log.first().map_or(f64::NAN, |r| r.mean_loss);
    let last = outcome.log.last().map_or(f64::NAN, |r| r.mean_loss);
    println!("loss {first:.4} -> {last:.4}");
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
