//! Open-vocabulary semantics: label sets are data.

mod common;

use ndarray::Array1;
use openaff::data::{build_synthetic, synthetic_embeddings, Dataset, EmbeddingPlan, SplitSizes, SyntheticSpec};
use openaff::encoder::EncoderConfig;
use openaff::eval::{run_protocol, ProtocolMode, ProtocolOptions};
use openaff::geometry::prepare_cloud;
use openaff::head::{correlate, detect, scaled_softmax, AffordanceModel, EmbeddingTable, LogitScale, TemperatureMode};
use openaff::Error;

use common::{normal_matrix, rng};

fn small_dataset(spec: SyntheticSpec) -> Dataset {
    let spec = SyntheticSpec {
        shapes: SplitSizes {
            train: 5,
            val: 2,
            test: 12,
        },
        points_per_shape: 96,
        ..spec
    };
    build_synthetic(&spec).unwrap().into_dataset()
}

fn model(seed: u64) -> AffordanceModel {
    let config = EncoderConfig {
        seed,
        ..EncoderConfig::tiny(16)
    };
    AffordanceModel::new(config, TemperatureMode::LogScale).unwrap()
}

fn options(mode: ProtocolMode) -> ProtocolOptions {
    ProtocolOptions {
        mode,
        split: "test".into(),
        points: 64,
        seed: 3,
    }
}

#[test]
fn duplicated_embeddings_reproduce_closed_set_metrics() {
    let dataset = small_dataset(SyntheticSpec::desk(1));
    let table = synthetic_embeddings(&dataset.manifest.labels, 16, 1, &EmbeddingPlan::Orthonormal).unwrap();
    let m = model(4);
    let closed = run_protocol(&m, &dataset, &table, &options(ProtocolMode::ClosedSet)).unwrap();
    let mut extended = table.clone();
    for (alias, of) in [("grip", "grasp"), ("hold liquid", "contain"), ("slice", "cut")] {
        let row = table.vectors().row(table.index_of(of).unwrap()).to_owned();
        extended = extended.with_label(alias, row.view()).unwrap();
    }
    let open = run_protocol(&m, &dataset, &extended, &options(ProtocolMode::OpenVocabulary)).unwrap();
    assert_eq!(open.miou, closed.miou);
    assert_eq!(open.acc, closed.acc);
    assert_eq!(open.macc, closed.macc);
    for alias in ["grip", "hold liquid", "slice"] {
        assert!(open.excluded.contains(&alias.to_string()));
    }
}

#[test]
fn adding_a_label_only_moves_points_to_it() {
    for seed in 0..10 {
        let mut g = rng(seed);
        let dataset = small_dataset(SyntheticSpec::desk(seed));
        let base = synthetic_embeddings(&dataset.manifest.labels, 16, seed, &EmbeddingPlan::Orthonormal).unwrap();
        let extra: Array1<f64> = normal_matrix(&mut g, 1, 16).row(0).to_owned();
        let extended = base.with_label("novel", extra.view()).unwrap();
        let m = model(seed);
        for (i, shape) in dataset.split("test").iter().enumerate() {
            let (cloud, _) = prepare_cloud(&shape.cloud, 64, i as u64).unwrap();
            let before = detect(&m, &cloud, &base).unwrap().assignment;
            let after = detect(&m, &cloud, &extended).unwrap().assignment;
            let novel = extended.index_of("novel").unwrap();
            for (b, a) in before.iter().zip(&after) {
                assert!(a == b || *a == novel, "seed {seed}: point moved {b} -> {a}");
            }
        }
    }
}

#[test]
fn positive_scales_leave_assignments_unchanged() {
    let mut g = rng(9);
    let labels = common::names(5);
    let table = EmbeddingTable::new(labels.clone(), normal_matrix(&mut g, 5, 8), "test").unwrap();
    let p = normal_matrix(&mut g, 40, 8);
    let f = correlate(p.view(), &table).unwrap();
    let reference = scaled_softmax(&f, LogitScale::from_scale(1.0), &labels).assignment;
    for s in [1e-3, 0.5, 14.285_714, 100.0, 1e4] {
        assert_eq!(
            scaled_softmax(&f, LogitScale::from_scale(s), &labels).assignment,
            reference
        );
    }
}

#[test]
fn protocol_label_checks() {
    let dataset = small_dataset(SyntheticSpec::zero_shot(2));
    let full = synthetic_embeddings(&dataset.manifest.labels, 16, 2, &EmbeddingPlan::Orthonormal).unwrap();
    let seen = full.subset(&dataset.manifest.seen_labels).unwrap();
    let m = model(1);
    // Closed-set mode with unseen labels in the test split.
    assert!(matches!(
        run_protocol(&m, &dataset, &seen, &options(ProtocolMode::ClosedSet)),
        Err(Error::LabelMismatch(_))
    ));
    // Open mode needs every manifest label.
    assert!(matches!(
        run_protocol(&m, &dataset, &seen, &options(ProtocolMode::OpenVocabulary)),
        Err(Error::LabelMismatch(_))
    ));
    let report = run_protocol(&m, &dataset, &full, &options(ProtocolMode::OpenVocabulary)).unwrap();
    assert_eq!(report.per_class.len(), dataset.manifest.labels.len());
    let mut empty = options(ProtocolMode::OpenVocabulary);
    empty.split = "nonexistent".into();
    assert!(matches!(
        run_protocol(&m, &dataset, &full, &empty),
        Err(Error::EmptyEvaluation(_))
    ));
    let wrong_dim = synthetic_embeddings(&dataset.manifest.labels, 12, 2, &EmbeddingPlan::Orthonormal).unwrap();
    assert!(matches!(
        run_protocol(&m, &dataset, &wrong_dim, &options(ProtocolMode::OpenVocabulary)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn protocol_is_deterministic() {
    let dataset = small_dataset(SyntheticSpec::desk(5));
    let table = synthetic_embeddings(&dataset.manifest.labels, 16, 5, &EmbeddingPlan::Orthonormal).unwrap();
    let m = model(5);
    let a = run_protocol(&m, &dataset, &table, &options(ProtocolMode::ClosedSet)).unwrap();
    let b = run_protocol(&m, &dataset, &table, &options(ProtocolMode::ClosedSet)).unwrap();
    assert_eq!(a, b);
}
