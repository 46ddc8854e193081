//! Writes the desk synthetic dataset and the JSON spec that produced it.
//!
//! The JSON spec can be edited and passed back with
//! `openaff synth --spec <file> --out <dir>`.
//!
//! ```sh
//! cargo run --release --example synthetic_data -- [out_dir] [seed]
//! ```

use openaff::data::{generate_synthetic, label_counts, Dataset, SyntheticSpec};

fn main() -> openaff::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/synthetic".into()));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);

    let spec = SyntheticSpec::desk(seed);
    std::fs::create_dir_all(&out).map_err(|e| openaff::Error::io(&out, e))?;
    let spec_path = out.join("spec.json");
    let json = serde_json::to_string_pretty(&spec).expect("spec serializes");
    std::fs::write(&spec_path, json + "\n").map_err(|e| openaff::Error::io(&spec_path, e))?;

    let manifest = generate_synthetic(&spec, &out)?;
    let dataset = Dataset::load(&manifest)?;
    println!("{} and {}", spec_path.display(), manifest.display());
    for (split, shapes) in &dataset.splits {
        let counts = label_counts(shapes, dataset.manifest.labels.len());
        let per_label: Vec<String> = dataset
            .manifest
            .labels
            .iter()
            .zip(counts)
            .map(|(l, c)| format!("{l}={c}"))
            .collect();
        println!("{split:>5}: {} shapes, points {}", shapes.len(), per_label.join(" "));
    }
    Ok(())
}
