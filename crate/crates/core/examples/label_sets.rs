//! One trained model queried with different label sets.
//!
//! Trains briefly on synthetic mugs, hammers and knives, then labels the same
//! mug three times: with every training label, with `grasp` and `contain`
//! only, and with `grasp` alone. Each query writes a colored PLY.
//!
//! ```sh
//! cargo run --release --example label_sets -- [out_dir]
//! ```

use openaff::data::{build_synthetic, synthetic_embeddings, EmbeddingPlan, SplitSizes, SyntheticSpec};
use openaff::geometry::prepare_cloud;
use openaff::head::detect;
use openaff::ply::write_ply;
use openaff::trainer::{train, TrainConfig};

fn main() -> openaff::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/label-sets".into()));
    std::fs::create_dir_all(&out).map_err(|e| openaff::Error::io(&out, e))?;

    let spec = SyntheticSpec {
        shapes: SplitSizes {
            train: 48,
            val: 0,
            test: 4,
        },
        ..SyntheticSpec::desk(1)
    };
    let dataset = build_synthetic(&spec)?.into_dataset();
    let config = TrainConfig {
        epochs: 8,
        ..TrainConfig::desk(1)
    };
    let table = synthetic_embeddings(
        &dataset.manifest.seen_labels,
        config.embedding_dim,
        1,
        &EmbeddingPlan::Orthonormal,
    )?;
    let model = train(&config, &dataset, &table)?.checkpoint.model;

    let mug = &dataset.split("test")[0].cloud;
    let (cloud, _) = prepare_cloud(mug, config.points, 0)?;
    let queries: [&[&str]; 3] = [&[], &["grasp", "contain"], &["grasp"]];
    for (k, query) in queries.into_iter().enumerate() {
        let labels = if query.is_empty() {
            table.clone()
        } else {
            table.subset(query)?
        };
        let map = detect(&model, &cloud, &labels)?;
        let path = out.join(format!("query_{k}.ply"));
        write_ply(&path, cloud.points(), &map.assignment, labels.labels())?;
        let mut counts = vec![0; labels.len()];
        for &a in &map.assignment {
            counts[a] += 1;
        }
        let summary: Vec<String> = labels
            .labels()
            .iter()
            .zip(&counts)
            .map(|(l, c)| format!("{l}={c}"))
            .collect();
        println!("{}: {}", path.display(), summary.join(" "));
    }
    Ok(())
}
