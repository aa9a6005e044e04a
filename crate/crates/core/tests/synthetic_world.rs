use std::sync::Arc;

use neindex::dqn::{exhaustive_search, SearchConfig};
use neindex::geogrid::{AreaSet, Rect};
use neindex::index::{PairEvaluator, SeasonMask};
use neindex::rl_env::{AreaPair, EnvConfig, SstEnv};
use neindex::synthdata::{expected_objective, gen_sst, gen_stations, planted_targets, SynthSpec};

fn rect(a: f64, b: f64, c: f64, d: f64) -> Rect {
    Rect::new(a, b, c, d).unwrap()
}

fn world(spec: &SynthSpec, seed: u64) -> (neindex::geogrid::SstField, neindex::index::SeasonTargets) {
    let field = gen_sst(spec, seed).unwrap();
    let targets = planted_targets(&gen_stations(spec, seed).unwrap()).unwrap();
    (field, targets)
}

#[test]
fn multi_rect_initial_areas_reset_on_all_ocean_domain() {
    let spec = SynthSpec {
        coast_cells: 0,
        coast_wiggle: 0,
        ..Default::default()
    };
    let (field, targets) = world(&spec, 0);
    assert!(field.ocean_mask().ocean.iter().all(|o| *o));
    let initial = AreaPair {
        a: AreaSet::new(vec![
            rect(10.0, 16.25, 110.0, 118.75),
            rect(8.75, 10.0, 108.75, 116.25),
            rect(7.5, 8.75, 107.5, 115.0),
        ])
        .unwrap(),
        b: AreaSet::single(rect(3.75, 6.25, 103.75, 106.25)),
    };
    let nt = field.spec().nt;
    let (field, targets) = (Arc::new(field), Arc::new(targets));
    for jitter in [0, 2] {
        let config = EnvConfig {
            jitter,
            ..EnvConfig::new(spec.domain(), initial.clone())
        };
        let mut env = SstEnv::new(field.clone(), targets.clone(), &SeasonMask::default(), 0..nt, config).unwrap();
        for seed in 0..20 {
            let state = env.reset_state(seed).unwrap().clone();
            assert!(state.last_q.is_finite());
            assert_eq!(state.areas.a.len(), 3);
            if jitter == 0 {
                assert_eq!(state.areas, initial);
            }
        }
    }
}

#[test]
fn planted_correlations_match_the_closed_form() {
    let spec = SynthSpec::default();
    let (r_on, r_re, _) = expected_objective(&spec);
    for seed in 0..3 {
        let (field, targets) = world(&spec, seed);
        let nt = field.spec().nt;
        let ev = PairEvaluator::new(&field, &targets, &SeasonMask::default(), 0.8, 0..nt).unwrap();
        let p = spec.planted();
        let rep = ev.evaluate(&p.a, &p.b);
        assert!((rep.r_onset.abs() - r_on).abs() < 0.1, "seed {seed}: {} vs {r_on}", rep.r_onset);
        assert!((rep.r_retreat.abs() - r_re).abs() < 0.1, "seed {seed}: {} vs {r_re}", rep.r_retreat);
    }
}

#[test]
fn no_rainfall_coupling_gives_near_zero_objective() {
    let spec = SynthSpec {
        k_onset: 0.0,
        k_retreat: 0.0,
        ..Default::default()
    };
    for seed in 0..3 {
        let (field, targets) = world(&spec, seed);
        let nt = field.spec().nt;
        let ev = PairEvaluator::new(&field, &targets, &SeasonMask::default(), 0.8, 0..nt).unwrap();
        let p = spec.planted();
        let q = ev.evaluate(&p.a, &p.b).q;
        assert!(q < 0.05, "seed {seed}: q = {q}");
    }
}

#[test]
fn no_sst_signal_leaves_only_a_low_noise_optimum() {
    let signal = SynthSpec::default();
    let flat = SynthSpec {
        alpha: 0.0,
        ..Default::default()
    };
    let (field, targets) = world(&flat, 0);
    let nt = field.spec().nt;
    let ev = PairEvaluator::new(&field, &targets, &SeasonMask::default(), 0.8, 0..nt).unwrap();
    let res = exhaustive_search(&ev, &flat.initial, &flat.domain(), &SearchConfig::default()).unwrap();
    let (_, _, q_signal) = expected_objective(&signal);
    assert!(res.best_q < 0.15, "noise optimum {}", res.best_q);
    assert!(res.best_q < q_signal / 3.0);
}
