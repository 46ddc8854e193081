//! Zero-shot detection of a label never seen in training.
//!
//! Trains on the seen labels only, then evaluates the test split with the
//! full vocabulary twice: once with an unrelated (orthogonal) vector for the
//! unseen label and once with a vector close to a related seen label.
//!
//! ```sh
//! cargo run --release --example zero_shot -- [out_dir] [seed]
//! ```

use openaff::data::{generate_synthetic, synthetic_embeddings, Dataset, EmbeddingPlan, SyntheticSpec};
use openaff::eval::{run_protocol, ProtocolMode, ProtocolOptions};
use openaff::trainer::{train, TrainConfig};

fn main() -> openaff::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/zero-shot".into()));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);

    let manifest = generate_synthetic(&SyntheticSpec::zero_shot(seed), out.join("data"))?;
    let dataset = Dataset::load(&manifest)?;
    let labels = &dataset.manifest.labels;
    let config = TrainConfig::desk(seed);

    let orthonormal = synthetic_embeddings(labels, config.embedding_dim, seed, &EmbeddingPlan::Orthonormal)?;
    let paired = synthetic_embeddings(
        labels,
        config.embedding_dim,
        seed,
        &EmbeddingPlan::Paired {
            pairs: vec![("grasp".into(), "grab".into())],
            cosine: 0.9,
        },
    )?;
    let seen = orthonormal.subset(&dataset.manifest.seen_labels)?;
    let checkpoint = train(&config, &dataset, &seen)?.checkpoint;

    let options = ProtocolOptions {
        mode: ProtocolMode::OpenVocabulary,
        split: "test".into(),
        points: config.points,
        seed,
    };
    for (name, table) in [("orthonormal", &orthonormal), ("paired", &paired)] {
        let report = run_protocol(&checkpoint.model, &dataset, table, &options)?;
        let grab = report.class("grab").and_then(|c| c.iou).unwrap_or(0.0);
        println!(
            "{name:>12}: grab IoU {grab:.4}  mIoU {:.4}  Acc {:.4}",
            report.miou, report.acc
        );
    }
    Ok(())
}
