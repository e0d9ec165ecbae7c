mod common;

use std::time::Instant;

use common::{all_labelings, canonical_labelings, exhaustive_metric_check, rng, uniform_labels};
use dscan::metrics::{clustering_accuracy, nmi};
use rand::seq::SliceRandom;

#[test]
fn exhaustive_small_labelings_match_brute_force() {
    let start = Instant::now();
    let s = exhaustive_metric_check(8, 3);
    println!("{s:?} in {:?}", start.elapsed());
    assert_eq!(s.ca_mismatches, 0);
    assert_eq!(s.self_failures, 0);
    assert!(s.worst_nmi_diff < 1e-9, "{}", s.worst_nmi_diff);
}

#[test]
fn partition_counts_are_stirling_sums() {
    // S(n,1) + S(n,2) + S(n,3)
    let want = [1, 2, 5, 14, 41, 122, 365, 1094];
    for (n, &w) in (1..=8).zip(&want) {
        assert_eq!(canonical_labelings(n, 3).len(), w);
    }
}

#[test]
fn metrics_ignore_label_names_on_either_side() {
    let mut r = rng(5);
    for _ in 0..200 {
        let p = uniform_labels(12, 4, &mut r);
        let q = uniform_labels(12, 3, &mut r);
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut r);
        let p2: Vec<usize> = p.iter().map(|&l| perm[l] + 10).collect();
        let q2: Vec<String> = q.iter().map(|&l| format!("class{}", 2 - l)).collect();
        assert_eq!(
            clustering_accuracy(&p, &q).unwrap(),
            clustering_accuracy(&p2, &q2).unwrap()
        );
        assert!((nmi(&p, &q).unwrap() - nmi(&p2, &q2).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn all_pairs_through_length_five() {
    for n in 1..=5 {
        let all = all_labelings(n, 3);
        for p in &all {
            for q in &all {
                assert_eq!(
                    clustering_accuracy(p, q).unwrap(),
                    common::ca_by_permutation(p, q)
                );
                assert!((nmi(p, q).unwrap() - common::nmi_by_entropy(p, q)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn random_assignment_accuracy_is_near_chance() {
    let mut r = rng(9);
    let truth: Vec<usize> = (0..900).map(|i| i % 9).collect();
    for _ in 0..5 {
        let pred = uniform_labels(900, 9, &mut r);
        let ca = clustering_accuracy(&pred, &truth).unwrap();
        assert!((0.09..=0.20).contains(&ca), "{ca}");
        assert!(nmi(&pred, &truth).unwrap() < 0.05);
    }
}

#[test]
fn symmetric_nmi() {
    let mut r = rng(6);
    for _ in 0..100 {
        let p = uniform_labels(20, 5, &mut r);
        let q = uniform_labels(20, 3, &mut r);
        assert!((nmi(&p, &q).unwrap() - nmi(&q, &p).unwrap()).abs() < 1e-12);
    }
}
