use std::collections::BTreeMap;

use funnel_core::model::{pathway_loglik, pathway_probability, ModelParams, Pathway};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use funnel_core::simulate::{
    sample_ground_truth, simulate_dataset, simulate_until_valid, validate_simulation, SimulationSpec,
};

fn spec(n: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_patients: n,
        seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_data() {
    let a = simulate_until_valid(&spec(2000, 3), 50).unwrap();
    let b = simulate_until_valid(&spec(2000, 3), 50).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.data.records, b.data.records);
    assert_eq!(a.data.full_outcomes, b.data.full_outcomes);
    let c = simulate_until_valid(&spec(2000, 4), 50).unwrap();
    assert_ne!(a.data.records, c.data.records);
}

#[test]
fn pathway_frequencies_match_model_probabilities() {
    let s = spec(100_000, 8);
    let truth = sample_ground_truth(&s, 8);
    let data = simulate_dataset(&truth, &s).unwrap();
    let k = s.config.n_stages;
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for r in &data.records {
        *counts.entry(r.pathway().label()).or_default() += 1.0;
    }
    for pathway in Pathway::enumerate(k) {
        // expected count and its variance from per-patient probabilities
        let (mut expected, mut var) = (0.0, 0.0);
        for x in &data.full_features {
            let full: Vec<Option<f64>> = x.iter().copied().map(Some).collect();
            let p = pathway_probability(&full, &pathway, &truth.params, &s.config);
            expected += p;
            var += p * (1.0 - p);
        }
        let observed = counts.get(&pathway.label()).copied().unwrap_or(0.0);
        let z = (observed - expected).abs() / var.sqrt().max(1.0);
        assert!(z < 4.0, "{}: observed {observed}, expected {expected:.1}", pathway.label());
    }
}

#[test]
fn censoring_follows_the_observation_stage() {
    let sim = simulate_until_valid(&spec(5000, 5), 50).unwrap();
    let config = &SimulationSpec::default().config;
    for (r, &y) in sim.data.records.iter().zip(&sim.data.full_outcomes) {
        let deepest = r.deepest_stage(config.n_stages);
        if deepest >= config.observation_stage {
            assert_eq!(r.outcome, Some(y));
        } else {
            assert_eq!(r.outcome, None);
        }
        for (x, on) in r.features.iter().zip(config.mask(deepest)) {
            assert_eq!(x.is_some(), *on);
        }
        r.validate(config).unwrap();
    }
}

#[test]
fn ground_truth_priors() {
    let s = spec(1, 0);
    let n = 20_000;
    let (mut t1, mut d1, mut alpha) = (0.0, 0.0, 0.0);
    for seed in 0..n {
        let g = sample_ground_truth(&s, seed);
        assert!(g.params.thresholds[0] < 0.5 && g.params.thresholds[0] < g.params.thresholds[1]);
        assert!(g.params.thresholds[1] < 1.0);
        t1 += g.params.thresholds[0];
        d1 += g.params.deltas[0];
        alpha += g.params.alpha;
    }
    let nf = n as f64;
    // U(0, 0.5): mean 0.25, sd 0.144
    assert!((t1 / nf - 0.25).abs() < 4.0 * 0.1443 / nf.sqrt());
    // half-normal(0.5): mean 0.5·sqrt(2/π), sd 0.5·sqrt(1 − 2/π)
    let hn_mean = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
    let hn_sd = 0.5 * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
    assert!((d1 / nf - hn_mean).abs() < 4.0 * hn_sd / nf.sqrt());
    assert!((alpha / nf).abs() < 4.0 / nf.sqrt());
}

#[test]
fn rejects_thin_pathways() {
    let s = SimulationSpec {
        n_patients: 20,
        min_per_pathway: 10,
        ..Default::default()
    };
    // 4 pathways cannot each hold 10 of 20 patients
    assert!(simulate_until_valid(&s, 5).is_err());
    let sim = simulate_until_valid(&spec(5000, 1), 50).unwrap();
    assert!(validate_simulation(&sim.data.records, &spec(5000, 1)).accepted);
}

#[test]
fn split_keeps_rows_aligned() {
    let sim = simulate_until_valid(&spec(1000, 2), 50).unwrap();
    let (a, b) = sim.data.split_at(600);
    assert_eq!(a.records.len(), 600);
    assert_eq!(b.records.len(), 400);
    assert_eq!(b.records[0], sim.data.records[600]);
    assert_eq!(b.full_features[0], sim.data.full_features[600]);
    assert_eq!(b.full_outcomes.len(), 400);
}

#[test]
fn truth_beats_random_perturbations() {
    let s = spec(20_000, 6);
    let sim = simulate_until_valid(&s, 50).unwrap();
    let mean_ll = |p: &ModelParams| {
        sim.data
            .records
            .iter()
            .map(|r| pathway_loglik(r, p, &s.config).unwrap())
            .sum::<f64>()
            / sim.data.records.len() as f64
    };
    let truth = &sim.truth.params;
    let at_truth = mean_ll(truth);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tried = 0;
    while tried < 20 {
        // a random direction of length 0.5 in flat parameter space
        let dir: Vec<f64> = (0..truth.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let flat: Vec<f64> = truth.to_flat().iter().zip(&dir).map(|(v, d)| v + 0.5 * d / norm).collect();
        let Ok(perturbed) = ModelParams::from_flat(&flat, &s.config) else {
            continue;
        };
        if perturbed.validate(&s.config).is_err() {
            continue;
        }
        tried += 1;
        assert!(mean_ll(&perturbed) < at_truth);
    }
}
