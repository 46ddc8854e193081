//! Segmentation metrics against direct counting over label sequences.

mod common;

use openaff::eval::{accumulate_confusion, compute_metrics};
use rand::seq::SliceRandom;
use rand::Rng;

use common::oracles::{count_metrics, mean_defined};
use common::{names, rng};

fn random_case(seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let mut g = rng(seed);
    let m = g.random_range(1..=6);
    let n = g.random_range(1..=200);
    // Restrict to a random subset of classes so some are absent.
    let used = g.random_range(1..=m);
    let pred = (0..n).map(|_| g.random_range(0..used)).collect();
    let gt = (0..n).map(|_| g.random_range(0..used)).collect();
    (pred, gt, m)
}

#[test]
fn seven_twelfths_case() {
    let cm = accumulate_confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    let r = compute_metrics(&cm, &names(2)).unwrap();
    assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
    assert_eq!(r.acc, 0.75);
    assert!((r.macc - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn matches_counting_oracle() {
    for seed in 0..500 {
        let (pred, gt, m) = random_case(seed);
        let r = compute_metrics(&accumulate_confusion(&pred, &gt, m).unwrap(), &names(m)).unwrap();
        let c = count_metrics(&pred, &gt, m);
        assert!((r.acc - c.acc).abs() < 1e-12, "seed {seed}");
        assert!((r.miou - mean_defined(&c.iou)).abs() < 1e-12, "seed {seed}");
        assert!((r.macc - mean_defined(&c.recall)).abs() < 1e-12, "seed {seed}");
        for (k, pc) in r.per_class.iter().enumerate() {
            assert_eq!(pc.iou, c.iou[k]);
            assert_eq!(pc.acc, c.recall[k]);
            assert_eq!(pc.precision, c.precision[k]);
            assert_eq!(pc.iou.is_none(), r.excluded.contains(&pc.label));
            if let Some(iou) = pc.iou {
                assert!(iou <= pc.acc.unwrap_or(f64::INFINITY) + 1e-15);
                assert!(iou <= pc.precision.unwrap_or(f64::INFINITY) + 1e-15);
            }
        }
    }
}

#[test]
fn invariant_under_label_permutation() {
    for seed in 0..100 {
        let (pred, gt, m) = random_case(seed);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng(seed + 7));
        let labels = names(m);
        let permuted_labels: Vec<String> = {
            let mut l = vec![String::new(); m];
            for (old, &new) in perm.iter().enumerate() {
                l[new] = labels[old].clone();
            }
            l
        };
        let a = compute_metrics(&accumulate_confusion(&pred, &gt, m).unwrap(), &labels).unwrap();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let pg: Vec<usize> = gt.iter().map(|&g| perm[g]).collect();
        let b = compute_metrics(&accumulate_confusion(&pp, &pg, m).unwrap(), &permuted_labels).unwrap();
        assert!((a.miou - b.miou).abs() < 1e-12);
        assert!((a.macc - b.macc).abs() < 1e-12);
        assert_eq!(a.acc, b.acc);
        for pc in &a.per_class {
            assert_eq!(Some(pc), b.class(&pc.label));
        }
    }
}
