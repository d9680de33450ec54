use std::path::PathBuf;

use funnel_core::dataio::features::identity_dictionary;
use funnel_core::dataio::{
    load_config, load_dataset, load_ground_truth, load_params, load_samples, read_full_data, read_records,
    save_config, save_ground_truth, save_params, save_samples, write_full_data, write_records, FeatureDictionary,
    FeatureKind, TransformStats,
};
use funnel_core::inference::hmc::McmcOptions;
use funnel_core::inference::mcmc::fit_mcmc;
use funnel_core::model::ModelParams;
use funnel_core::simulate::{simulate_until_valid, SimulationSpec};
use funnel_core::FunnelError;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn simulated(n: usize) -> (funnel_core::simulate::AcceptedSimulation, SimulationSpec) {
    let spec = SimulationSpec {
        n_patients: n,
        seed: 31,
        ..Default::default()
    };
    (simulate_until_valid(&spec, 50).unwrap(), spec)
}

#[test]
fn params_and_truth_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, spec) = simulated(500);
    let config = &spec.config;
    let params = ModelParams {
        alpha: 0.1 + 0.2,
        beta: vec![1.0 / 3.0, -2.0f64.sqrt(), 1e-300, 5e-324, -0.0, 123456.789],
        thresholds: vec![std::f64::consts::FRAC_1_PI, 0.9999999999999999],
        deltas: vec![1e-4, 7.25],
    };
    let p = dir.path().join("params.json");
    save_params(&p, &params, config).unwrap();
    let (back, back_config) = load_params(&p).unwrap();
    assert_eq!(back.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
               params.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(&back_config, config);

    let t = dir.path().join("truth.json");
    save_ground_truth(&t, &sim.truth, config).unwrap();
    assert_eq!(load_ground_truth(&t).unwrap(), (sim.truth.clone(), config.clone()));

    let c = dir.path().join("config.json");
    save_config(&c, config).unwrap();
    assert_eq!(&load_config(&c).unwrap(), config);
}

#[test]
fn records_and_full_data_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, spec) = simulated(800);
    let config = &spec.config;
    let mut records = sim.data.records.clone();
    records[0].extras.insert("site".into(), "north, annex".into());
    let path = dir.path().join("dataset.csv");
    write_records(&path, &records, config).unwrap();
    let back = read_records(&path, config).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.decisions, b.decisions);
        assert_eq!(a.outcome, b.outcome);
        assert_eq!(
            a.features.iter().map(|x| x.map(f64::to_bits)).collect::<Vec<_>>(),
            b.features.iter().map(|x| x.map(f64::to_bits)).collect::<Vec<_>>()
        );
    }
    assert_eq!(back[0].extras["site"], "north, annex");
    assert_eq!(back[1].extras["site"], "");

    let full = dir.path().join("full.csv");
    write_full_data(&full, &sim.data, config).unwrap();
    let mut shuffled = records.clone();
    shuffled.reverse();
    let fd = read_full_data(&full, &shuffled, config).unwrap();
    assert_eq!(fd.outcomes[0], *sim.data.full_outcomes.last().unwrap());
    assert_eq!(&fd.features[0], sim.data.full_features.last().unwrap());
}

#[test]
fn malformed_records_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (_, spec) = simulated(500);
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "id,decision_1,decision_2,outcome,x1,x2,x3,x4,x5,x6\n\
         a,0,,,0.1,0.2,0.3,,,\n\
         b,7,,,0.1,0.2,0.3,,,\n",
    )
    .unwrap();
    match read_records(&path, &spec.config) {
        Err(FunnelError::Data { row: Some(3), .. }) => {}
        other => panic!("expected a line-3 data error, got {other:?}"),
    }
    std::fs::write(&path, "id,decision_1,outcome\n").unwrap();
    assert!(matches!(read_records(&path, &spec.config), Err(FunnelError::MissingField(_))));
}

#[test]
fn samples_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, spec) = simulated(300);
    let opts = McmcOptions {
        n_chains: 2,
        n_warmup: 60,
        n_samples: 30,
        ..Default::default()
    };
    let samples = fit_mcmc(&sim.data.records, &spec.config, &opts).unwrap();
    let (csv, json) = (dir.path().join("s.csv"), dir.path().join("s.json"));
    save_samples(&csv, &json, &samples, &spec.config).unwrap();
    let (back, config) = load_samples(&csv, &json).unwrap();
    assert_eq!(config, spec.config);
    assert_eq!(back.names, samples.names);
    let bits = |s: &funnel_core::inference::mcmc::PosteriorSamples| {
        s.draws
            .iter()
            .flatten()
            .flatten()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&back), bits(&samples));

    // a sidecar from a different model is refused
    let text = std::fs::read_to_string(&json).unwrap().replace("\"t_2\"", "\"t_9\"");
    std::fs::write(&json, text).unwrap();
    assert!(load_samples(&csv, &json).is_err());
}

#[test]
fn identity_dictionary_reload_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, spec) = simulated(400);
    let path = dir.path().join("dataset.csv");
    write_records(&path, &sim.data.records, &spec.config).unwrap();
    let dict = identity_dictionary(&spec.config);
    let (records, _, config) = load_dataset(&path, &dict, None).unwrap();
    assert_eq!(config.feature_names, spec.config.feature_names);
    assert_eq!(config.stage_feature_masks, spec.config.stage_feature_masks);
    assert_eq!(records, sim.data.records);
}

#[test]
fn feature_dictionary_fixture_loads() {
    let dict = FeatureDictionary::load(&fixtures().join("mimic_feature_dictionary.json")).unwrap();
    dict.validate().unwrap();
    let kinds = |k: FeatureKind| dict.features.iter().filter(|f| f.kind == k).count();
    assert_eq!(kinds(FeatureKind::Intercept), 1);
    assert_eq!(kinds(FeatureKind::NumericZscore), 8);
    assert_eq!(kinds(FeatureKind::NumericZscoreSquared), 7);
    assert_eq!(kinds(FeatureKind::OneHot), 10);
    assert_eq!(dict.config().unwrap().n_features(), 25);
    assert_eq!(dict.priors.alpha_mean, -5.0);

    let text = dict.to_json().unwrap();
    assert_eq!(FeatureDictionary::from_json(&text).unwrap(), dict);
}

#[test]
fn fixture_transform_statistics_are_complete() {
    let dict = FeatureDictionary::load(&fixtures().join("mimic_feature_dictionary.json")).unwrap();
    let csv = fixtures().join("mimic_shaped.csv");
    let (records, stats, config) = load_dataset(&csv, &dict, None).unwrap();
    assert_eq!(records.len(), 3000);
    for r in &records {
        r.validate(&config).unwrap();
        assert!(r.extras.contains_key("acuity") && r.extras.contains_key("gender"));
    }
    assert_eq!(stats.sd_denominator, "sample");
    assert_eq!(stats.numeric.len(), 8);
    for s in &stats.numeric {
        assert!(s.sd > 0.0 && s.mean.is_finite());
        assert_eq!(s.n_available, s.n_available.min(records.len()));
    }
    // the fixture plants out-of-range temperatures, oxygen saturations and pain scores
    let bad = |name: &str| stats.numeric.iter().find(|s| s.feature == name).unwrap().n_out_of_range;
    assert!(bad("temperature") > 0 && bad("o2sat") > 0 && bad("pain") > 0);

    // reusing the statistics reproduces the same transform
    let round = TransformStats::from_json(&stats.to_json().unwrap()).unwrap();
    assert_eq!(round, stats);
    let (again, _, _) = load_dataset(&csv, &dict, Some(&round)).unwrap();
    assert_eq!(again, records);
}
