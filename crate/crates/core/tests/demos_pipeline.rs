mod common;

use std::path::Path;

use rand::Rng as _;
use wqdil::archive::{Elite, GridArchive};
use wqdil::demos::{
    demos_from_expert, distance, min_pairwise_distance, record_episode, select_demonstrators, DemoSet,
};
use wqdil::env::PointWalker;
use wqdil::nn::ParamVector;
use wqdil::qd::{run, QdConfig};
use wqdil::reward::{RewardKind, RewardVariant};
use wqdil::Error;

fn random_archive(n: usize, seed: u64) -> GridArchive {
    let mut rng = common::rng(seed);
    let mut a = GridArchive::new(20).unwrap();
    while a.len() < n {
        a.insert(Elite {
            params: ParamVector::new(vec![]),
            fitness: rng.random_range(0.1..10.0),
            measure: [rng.random(), rng.random()],
            learned_fitness: None,
        })
        .unwrap();
    }
    a
}

/// Best achievable minimum pairwise distance over all k-subsets.
fn exhaustive_maximin(points: &[[f64; 2]], k: usize) -> f64 {
    fn rec(points: &[[f64; 2]], k: usize, start: usize, cur: &mut Vec<[f64; 2]>, best: &mut f64) {
        if cur.len() == k {
            *best = best.max(min_pairwise_distance(cur));
            return;
        }
        for i in start..points.len() {
            cur.push(points[i]);
            rec(points, k, i + 1, cur, best);
            cur.pop();
        }
    }
    let mut best = 0.0;
    rec(points, k, 0, &mut Vec::new(), &mut best);
    best
}

#[test]
fn greedy_selection_is_close_to_exhaustive() {
    let mut ratios = Vec::new();
    for seed in 0..200 {
        let n = 5 + (seed as usize % 8);
        let a = random_archive(n, seed);
        let chosen = select_demonstrators(&a, n, 4).unwrap();
        let ms: Vec<[f64; 2]> = chosen.iter().map(|(_, e)| e.measure).collect();
        let all: Vec<[f64; 2]> = a.elites().map(|(_, e)| e.measure).collect();
        let ratio = min_pairwise_distance(&ms) / exhaustive_maximin(&all, 4);
        // Farthest-first is a 2-approximation to the maximin optimum.
        assert!(ratio >= 0.5 - 1e-12, "seed {seed}: {ratio}");
        ratios.push(ratio);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean >= 0.8, "mean ratio {mean}");
}

#[test]
fn selection_starts_from_the_fittest_and_respects_the_pool() {
    let a = random_archive(30, 9);
    let chosen = select_demonstrators(&a, 10, 4).unwrap();
    let mut fits: Vec<f64> = a.elites().map(|(_, e)| e.fitness).collect();
    fits.sort_by(|x, y| y.total_cmp(x));
    assert_eq!(chosen[0].1.fitness, fits[0]);
    assert!(chosen.iter().all(|(_, e)| e.fitness >= fits[9]));
    let mut cells: Vec<_> = chosen.iter().map(|(c, _)| *c).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 4);
    assert!(matches!(
        select_demonstrators(&random_archive(3, 1), 10, 4),
        Err(Error::InsufficientElites { available: 3, required: 4 })
    ));
}

#[test]
fn expert_demonstrations_survive_the_file_round_trip() {
    let cfg = QdConfig {
        iterations: 12,
        horizon: 30,
        policy_hidden: vec![8],
        grid: 10,
        seed: 3,
        ..QdConfig::default()
    };
    let expert = run(&cfg, None).unwrap();
    let demos = demos_from_expert(&expert, &cfg, 20, 3).unwrap();
    let env = PointWalker::new(cfg.horizon);
    assert_eq!(demos.len(), 3);

    let mut cells: Vec<_> = demos.demos.iter().map(|d| d.source_cell.unwrap()).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 3);

    // Each kept episode is the closest to its elite among the start seeds.
    for d in &demos.demos {
        let (r, c) = d.source_cell.unwrap();
        let elite = expert.archive.get(r, c).unwrap();
        let kept = distance(&d.episodic_measure, &elite.measure);
        for s in cfg.eval_seeds() {
            let other = record_episode(&env, &expert.policy, &elite.params, env.reset_state(s)).unwrap();
            assert!(kept <= distance(&other.episodic_measure, &elite.measure));
        }
        assert_eq!(d.steps.len(), cfg.horizon);
    }

    let mut buf = Vec::new();
    demos.save(&mut buf).unwrap();
    let back = DemoSet::parse(std::str::from_utf8(&buf).unwrap(), Path::new("demos.csv"), &env).unwrap();
    assert_eq!(back, demos);

    let rows = cfg.horizon * 3;
    let plain = demos.features(&env, RewardVariant::new(RewardKind::WaeWgail, true));
    let cond = demos.features(&env, RewardVariant::new(RewardKind::McWaeWgail, true));
    assert_eq!(plain.len(), rows * (PointWalker::OBS_DIM + PointWalker::ACTION_DIM));
    assert_eq!(cond.len(), rows * (PointWalker::OBS_DIM + PointWalker::ACTION_DIM + 2));
}

#[test]
fn replay_rejects_a_shorter_horizon() {
    let cfg = QdConfig {
        iterations: 6,
        horizon: 20,
        policy_hidden: vec![8],
        grid: 10,
        ..QdConfig::default()
    };
    let expert = run(&cfg, None).unwrap();
    let demos = demos_from_expert(&expert, &cfg, 10, 1).unwrap();
    let mut buf = Vec::new();
    demos.save(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(DemoSet::parse(&text, Path::new("d.csv"), &PointWalker::new(10)).is_err());
}
