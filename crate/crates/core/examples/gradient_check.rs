//! Finite-difference check of the full model.
//!
//! Compares analytic gradients of the batch loss (encoder, cosine
//! correlation, scaled softmax and weighted NLL) with central differences
//! and prints the worst relative error per parameter.

use openaff::encoder::EncoderConfig;
use openaff::geometry::PointCloud;
use openaff::head::{class_weights, AffordanceModel, EmbeddingTable, TemperatureMode};
use openaff::nn::{finite_difference_check, GradCheckConfig, Probe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, m: usize) -> openaff::Result<PointCloud> {
    let points = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5)))
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..m)).collect();
    PointCloud::new(points, Some(labels))
}

fn main() -> openaff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, d) = (3, 8);
    let config = EncoderConfig::tiny(d);
    let model = AffordanceModel::new(config.clone(), TemperatureMode::LogScale)?;
    let clouds = [random_cloud(&mut rng, 6, m)?, random_cloud(&mut rng, 7, m)?];
    let batch: Vec<&PointCloud> = clouds.iter().collect();
    let vectors = ndarray::Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0));
    let table = EmbeddingTable::new(vec!["grasp".into(), "cut".into(), "contain".into()], vectors, "random")?;
    let weights = class_weights(&[9, 4, 1])?;

    let mut grads = model.params.store.zero_gradients();
    let (losses, _) = model.batch_loss_and_grad(&batch, &table, &weights, &mut grads)?;
    println!("per-cloud losses {losses:?}");

    let report = finite_difference_check(
        &model.params.store,
        &grads,
        |store| {
            let probe = AffordanceModel::from_store(config.clone(), store.clone(), TemperatureMode::LogScale)
                .expect("same architecture");
            let mut scratch = store.zero_gradients();
            let (losses, cache) = probe
                .batch_loss_and_grad(&batch, &table, &weights, &mut scratch)
                .expect("finite loss");
            Probe {
                loss: losses.iter().sum::<f64>() / losses.len() as f64,
                kinks: cache.kink_fingerprint(),
            }
        },
        GradCheckConfig::default(),
    );
    for block in &report.blocks {
        println!(
            "{:<24} max rel err {:.2e}  checked {:4}  near kinks {}",
            block.name, block.max_rel_error, block.checked, block.excluded
        );
    }
    println!("overall {:.2e}", report.max_rel_error());
    Ok(())
}
