mod common;

use std::collections::BTreeSet;

use ridgelasso::{enumerate_patterns, Coverage, EnumerationMode};

fn check(n: usize, d: usize, seed: u64) {
    let x = common::uniform_design(n, d, seed);
    let pats = enumerate_patterns(x.view(), EnumerationMode::Exact).unwrap();
    assert_eq!(pats.coverage(), Coverage::Exact);
    let found: BTreeSet<Vec<bool>> = pats.masks().iter().cloned().collect();
    assert_eq!(found.len(), pats.len(), "duplicate masks");
    let grid = common::grid_patterns(&x, if d == 1 { 200_000 } else { 400_000 });
    assert!(grid.is_subset(&found), "n={n} d={d}: grid saw a pattern the enumeration missed");
    assert_eq!(found.len(), common::generic_region_count(n, d + 1), "n={n} d={d}");
    // every witness realizes its mask strictly
    for (mask, w) in pats.masks().iter().zip(pats.witnesses()) {
        for (i, &m) in mask.iter().enumerate() {
            let pre: f64 = (0..d).map(|j| x[[i, j]] * w[j]).sum::<f64>() + w[d];
            assert!(if m { pre > 0.0 } else { pre < 0.0 }, "witness fails strictness");
        }
    }
    assert_eq!(pats.num_cones(), 2 * pats.len());
}

#[test]
fn exact_enumeration_matches_direction_grid() {
    for seed in 0..6u64 {
        for n in [1usize, 3, 5, 8] {
            check(n, 1, seed);
            check(n, 2, 100 + seed);
        }
    }
}

#[test]
fn sampled_mode_finds_a_subset() {
    let x = common::uniform_design(8, 2, 9);
    let exact = enumerate_patterns(x.view(), EnumerationMode::Exact).unwrap();
    let sampled = enumerate_patterns(
        x.view(),
        EnumerationMode::Sampled {
            samples: Some(500),
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(sampled.coverage(), Coverage::Sampled);
    let all: BTreeSet<&Vec<bool>> = exact.masks().iter().collect();
    assert!(sampled.masks().iter().all(|m| all.contains(m)));
}
