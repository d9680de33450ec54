use funnel_core::model::{
    decision_probs, final_stage_probability, log_prior, pathway_loglik, pathway_probability, predict_rates,
    total_log_posterior, Disposition, FunnelConfig, ModelParams, Pathway, PatientRecord, PreparedData,
};
use funnel_core::riskdist::{mc_oracle, RiskDistributionParams};
use funnel_core::simulate::{simulate_until_valid, SimulationSpec};
use proptest::prelude::*;

/// Standard normal CDF by Simpson integration, independent of the library's
/// erfc path.
fn cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - cdf(-x);
    }
    let n = 4_000;
    let h = x / n as f64;
    let f = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Slow reference: per patient, per stage, build φ from the visible
/// features, map the interval bounds through g⁻¹, and take CDF differences
/// for the two mixture components.
fn reference_loglik(records: &[PatientRecord], params: &ModelParams, config: &FunnelConfig) -> f64 {
    let k = config.n_stages;
    let mut total = 0.0;
    for r in records {
        let decisions: Vec<(usize, Disposition)> = r
            .decisions
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (i + 1, d)))
            .collect();
        for (n, &(stage, disposition)) in decisions.iter().enumerate() {
            let mut eta = params.alpha;
            for (j, on) in config.stage_feature_masks[stage - 1].iter().enumerate() {
                if *on {
                    eta += params.beta[j] * r.features[j].unwrap();
                }
            }
            let phi = 1.0 / (1.0 + (-eta).exp());
            let delta = params.deltas[stage - 1];
            let x_of = |t: f64| (delta * delta / 2.0 - ((1.0 - t) / t * phi / (1.0 - phi)).ln()) / delta;
            let (lo, hi) = match disposition {
                Disposition::Discharge => (0.0, params.thresholds[stage - 1]),
                Disposition::Admit(m) if m == k => (params.thresholds[m - 2], 1.0),
                Disposition::Admit(m) => (params.thresholds[m - 2], params.thresholds[m - 1]),
            };
            let (x_lo, x_hi) = (
                if lo == 0.0 { f64::NEG_INFINITY } else { x_of(lo) },
                if hi == 1.0 { f64::INFINITY } else { x_of(hi) },
            );
            let c = |x: f64| if x.is_infinite() { f64::from(u8::from(x > 0.0)) } else { cdf(x) };
            let neg = (1.0 - phi) * (c(x_hi) - c(x_lo));
            let pos = phi * (c(x_hi - delta) - c(x_lo - delta));
            let last = n + 1 == decisions.len();
            total += match (last, r.outcome) {
                (true, Some(true)) => pos.ln(),
                (true, Some(false)) => neg.ln(),
                _ => (neg + pos).ln(),
            };
        }
    }
    total
}

fn moderate_params() -> ModelParams {
    ModelParams {
        alpha: -0.3,
        beta: vec![0.6, -0.4, 0.2, 0.5, -0.3, 0.1],
        thresholds: vec![0.25, 0.6],
        deltas: vec![1.2, 0.8],
    }
}

fn small_dataset(n: usize, seed: u64) -> (Vec<PatientRecord>, FunnelConfig) {
    let spec = SimulationSpec {
        n_patients: n,
        min_per_pathway: 0,
        seed,
        ..Default::default()
    };
    let sim = simulate_until_valid(&spec, 1).unwrap();
    (sim.data.records, spec.config)
}

#[test]
fn likelihood_matches_slow_reference() {
    let (records, config) = small_dataset(60, 1);
    let params = moderate_params();
    let reference = reference_loglik(&records, &params, &config);
    let prepared = PreparedData::new(&records, &config).unwrap();
    let fast = prepared.log_likelihood(&params);
    assert!((fast - reference).abs() < 1e-8 * reference.abs(), "{fast} vs {reference}");
    let per_record: f64 = records
        .iter()
        .map(|r| pathway_loglik(r, &params, &config).unwrap())
        .sum();
    assert!((per_record - fast).abs() < 1e-9 * fast.abs());
    for (i, r) in records.iter().enumerate().take(10) {
        let single = prepared.record_log_likelihood(&params, i);
        assert!((single - pathway_loglik(r, &params, &config).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn posterior_is_likelihood_plus_prior() {
    let (records, config) = small_dataset(40, 2);
    let params = moderate_params();
    let lp = total_log_posterior(&records, &params, &config).unwrap();
    let ll: f64 = records
        .iter()
        .map(|r| pathway_loglik(r, &params, &config).unwrap())
        .sum();
    assert!((lp - ll - log_prior(&params, &config)).abs() < 1e-9);

    let mut bad = params.clone();
    bad.thresholds = vec![0.6, 0.25];
    assert_eq!(total_log_posterior(&records, &bad, &config).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn prior_matches_hand_computation() {
    let config = FunnelConfig::three_stage(2);
    let params = ModelParams {
        alpha: 0.5,
        beta: vec![-1.0, 0.25],
        thresholds: vec![0.1, 0.4],
        deltas: vec![0.3, 1.0],
    };
    let ln_n = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let ln_hn = |x: f64, s: f64| 2f64.ln() + ln_n(x, 0.0, s);
    let expected = ln_n(0.5, 0.0, 1.0)
        + ln_n(-1.0, 0.0, 1.0)
        + ln_n(0.25, 0.0, 1.0)
        + ln_hn(0.1, 0.5)
        + ln_hn(0.3, 0.5)
        + ln_hn(0.3, 0.5)
        + ln_hn(1.0, 0.5);
    assert!((log_prior(&params, &config) - expected).abs() < 1e-12);
}

#[test]
fn four_stage_events_are_normalized() {
    let features: Vec<(String, usize)> = (1..=4).map(|j| (format!("x{j}"), j.min(3))).collect();
    let config = FunnelConfig::from_first_stages(4, 3, &features).unwrap();
    let params = ModelParams {
        alpha: 0.2,
        beta: vec![0.5, -0.7, 0.3, 0.9],
        thresholds: vec![0.15, 0.4, 0.8],
        deltas: vec![0.7, 1.3, 0.4],
    };
    let x = [0.3, -1.2, 0.8, 0.1];
    let mut total = 0.0;
    for pathway in Pathway::enumerate(4) {
        let observed = pathway.deepest_stage(4) >= config.observation_stage;
        for y in if observed { vec![false, true] } else { vec![false] } {
            let r = PatientRecord::from_pathway("p", &x, &pathway, y, &config);
            total += pathway_loglik(&r, &params, &config).unwrap().exp();
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn decision_probs_match_oracle_bins() {
    let config = FunnelConfig::three_stage(2);
    let params = ModelParams {
        alpha: 0.0,
        beta: vec![1.0, 0.0],
        thresholds: vec![0.3, 0.7],
        deltas: vec![1.0, 1.0],
    };
    let record = PatientRecord::new("p", vec![Some(0.0), None], vec![Some(Disposition::Discharge), None], None);
    let probs = decision_probs(&record, 1, &params, &config).unwrap();
    let draws = mc_oracle(&RiskDistributionParams::new(0.5, 1.0).unwrap(), 1_000_000, 3);
    let n = draws.len() as f64;
    let bins = [
        draws.iter().filter(|d| d.p < 0.3).count() as f64 / n,
        draws.iter().filter(|d| d.p >= 0.3 && d.p < 0.7).count() as f64 / n,
        draws.iter().filter(|d| d.p >= 0.7).count() as f64 / n,
    ];
    for (p, b) in probs.iter().zip(bins) {
        assert!((p - b).abs() < 3.0 * (p * (1.0 - p) / n).sqrt(), "{p} vs {b}");
    }
}

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (
        -2.0f64..2.0,
        proptest::collection::vec(-1.5f64..1.5, 6),
        0.01f64..0.49,
        0.01f64..0.98,
        proptest::collection::vec(0.01f64..3.0, 2),
    )
        .prop_map(|(alpha, beta, t1, frac, deltas)| ModelParams {
            alpha,
            beta,
            thresholds: vec![t1, t1 + (1.0 - t1) * frac],
            deltas,
        })
}

proptest! {
    #[test]
    fn pathway_probabilities_sum_to_one(
        params in params_strategy(),
        x in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let config = FunnelConfig::three_stage(6);
        let features: Vec<Option<f64>> = x.iter().copied().map(Some).collect();
        let total: f64 = Pathway::enumerate(3)
            .iter()
            .map(|p| pathway_probability(&features, p, &params, &config))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let reach = final_stage_probability(&features, &params, &config);
        prop_assert!((0.0..=1.0).contains(&reach));
    }

    #[test]
    fn decision_and_mortality_rates_are_probabilities(
        params in params_strategy(),
        x in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let config = FunnelConfig::three_stage(6);
        for pathway in Pathway::enumerate(3) {
            let r = PatientRecord::from_pathway("p", &x, &pathway, true, &config);
            let probs = decision_probs(&r, 1, &params, &config).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let rates = predict_rates(&r, &params, &config).unwrap();
            prop_assert!((0.0..=1.0).contains(&rates.mortality));
        }
    }
}
