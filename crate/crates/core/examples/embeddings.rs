//! Synthetic label embeddings and the OADE file format.
//!
//! Builds an orthonormal table and a paired table in which `grasp` and
//! `grab` have cosine 0.9, prints both Gram matrices, and round-trips the
//! paired table through an OADE file.

use openaff::data::{synthetic_embeddings, EmbeddingPlan};
use openaff::head::EmbeddingTable;

fn print_gram(name: &str, table: &EmbeddingTable) {
    println!("{name} ({}):", table.fingerprint());
    let t = table.vectors();
    let gram = t.dot(&t.t());
    for (label, row) in table.labels().iter().zip(gram.rows()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.3}")).collect();
        println!("  {label:>8} {}", cells.join(" "));
    }
}

fn main() -> openaff::Result<()> {
    let labels: Vec<String> = ["grasp", "contain", "cut", "grab"].map(String::from).to_vec();
    let orthonormal = synthetic_embeddings(&labels, 8, 0, &EmbeddingPlan::Orthonormal)?;
    let paired = synthetic_embeddings(
        &labels,
        8,
        0,
        &EmbeddingPlan::Paired {
            pairs: vec![("grasp".into(), "grab".into())],
            cosine: 0.9,
        },
    )?;
    print_gram("orthonormal", &orthonormal);
    print_gram("paired", &paired);

    let path = std::env::temp_dir().join("openaff-example.oade");
    paired.write_oade(&path)?;
    let back = EmbeddingTable::read_oade(&path)?;
    let bytes = std::fs::read(&path).map_err(|e| openaff::Error::io(&path, e))?;
    println!(
        "{}: {} bytes, identical after reload: {}",
        path.display(),
        bytes.len(),
        back.to_oade_bytes() == bytes
    );
    Ok(())
}
