//! Segmentation metrics from predicted and ground-truth labels.

use openaff::eval::{accumulate_confusion, compute_metrics};

fn main() -> openaff::Result<()> {
    let labels: Vec<String> = ["grasp", "contain", "cut", "display"].map(String::from).to_vec();
    let gt = [0, 0, 0, 1, 1, 1, 1, 2, 2, 0];
    let pred = [0, 0, 1, 1, 1, 1, 0, 2, 0, 0];
    let cm = accumulate_confusion(&pred, &gt, labels.len())?;
    for (g, label) in labels.iter().enumerate() {
        let row: Vec<String> = (0..labels.len()).map(|p| cm.get(g, p).to_string()).collect();
        println!("{label:>8} | {}", row.join(" "));
    }
    // `display` never occurs, so it is excluded from the means.
    let report = compute_metrics(&cm, &labels)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
