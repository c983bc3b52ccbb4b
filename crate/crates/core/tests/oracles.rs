//! Library results against independent reference computations.

mod common;

use common::*;
use proptest::prelude::*;
use wqdil::archive::{Elite, GridArchive};
use wqdil::explorer::VisitCountArchive;
use wqdil::nn::ParamVector;

#[test]
fn bonus_matches_count_oracle() {
    let (err, lo, hi) = bonus_sweep(20_000, 1);
    assert!(err <= 1e-12, "{err:e}");
    assert!(lo >= 0.5 && hi <= 1.0, "{lo} {hi}");
}

#[test]
fn archive_matches_keep_best_oracle() {
    for seed in 0..5 {
        let (matched, monotone) = archive_sweep(1000, 20, seed);
        assert!(matched && monotone, "seed {seed}: matched {matched} monotone {monotone}");
    }
}

#[test]
fn gae_matches_quadratic_definition() {
    let err = gae_sweep(2000, 64, 3);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn gae_oracle_sanity() {
    // λ = γ = 1 with zero values telescopes to reward-to-go.
    let r = [1.0, 2.0, 3.0];
    let a = gae_oracle(&r, &[0.0; 3], &[false; 3], 0.0, 1.0, 1.0);
    assert_eq!(a, vec![6.0, 5.0, 3.0]);
}

proptest! {
    #[test]
    fn archive_agrees_with_oracle_on_arbitrary_sequences(
        grid in 1usize..8,
        inserts in prop::collection::vec(((0.0f64..=1.0, 0.0f64..=1.0), -3.0f64..10.0), 0..200),
    ) {
        let mut a = GridArchive::new(grid).unwrap();
        let mut o = ArchiveOracle::default();
        let mut last = a.metrics();
        for ((m1, m2), f) in inserts {
            let ins = a.insert(Elite { params: ParamVector::new(vec![f]), fitness: f, measure: [m1, m2], learned_fitness: None }).unwrap();
            let cell = cell_of(&[m1, m2], grid);
            let before = o.best.get(&cell).copied();
            o.offer(cell, f, 0.0);
            let want = match before {
                None => o.best.get(&cell).copied().unwrap_or(0.0),
                Some(b) => o.best[&cell] - b,
            };
            prop_assert!((ins.improvement - want).abs() < 1e-12);
            prop_assert_eq!(ins.changed(), ins.improvement > 0.0);
            let m = a.metrics();
            prop_assert!(m.qd_score >= last.qd_score && m.coverage >= last.coverage);
            last = m;
        }
        prop_assert_eq!(a.len(), o.best.len());
        for (&(r, c), &f) in &o.best {
            prop_assert_eq!(a.get(r, c).map(|e| e.fitness), Some(f));
        }
    }

    #[test]
    fn bonus_matches_oracle_on_arbitrary_visits(
        visits in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..60),
        query in (0.0f64..=1.0, 0.0f64..=1.0),
    ) {
        let mut a = VisitCountArchive::new(10).unwrap();
        let mut cells = Vec::new();
        for (x, y) in &visits {
            a.visit(&[*x, *y]).unwrap();
            cells.push(cell_of(&[*x, *y], 10));
        }
        let q = [query.0, query.1];
        let b = a.bonus(&q);
        prop_assert!((b - bonus_oracle(&cells, cell_of(&q, 10))).abs() <= 1e-12);
        prop_assert!((0.5..=1.0).contains(&b));
    }
}
