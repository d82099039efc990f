use std::collections::BTreeMap;

use msfrail::bootstrap::{run_bootstrap_lrt, LrtConfig, LrtHypothesis};
use msfrail::data::{
    build_transition_panels, label_states, read_binary_panel_csv, read_panel_csv, write_binary_panel_csv,
    write_panel_csv, Pair, StateThresholds, TransitionSpec,
};
use msfrail::estimation::fit_mle;
use msfrail::model::{BaselineSpec, FrailtySpec, ModelSpec};
use msfrail::optimize::OptimizerConfig;
use msfrail::prediction::{AccountHistory, MultistateModel, TransitionModel};
use msfrail::simulator::{
    simulate_frailty_panel, simulate_multistate, to_repayment_panel, MultistateSimConfig, SimConfig,
};

#[test]
fn predicted_landing_matches_simulated_frequencies() {
    let cfg = MultistateSimConfig::reference(6000, 4, 0.0, 1.0, 3).unwrap();
    let states = simulate_multistate(&cfg).unwrap();
    let models: BTreeMap<_, _> = cfg
        .models
        .iter()
        .map(|(p, m)| (*p, TransitionModel::new(m.spec.clone(), m.params.clone()).unwrap()))
        .collect();
    let model = MultistateModel::new(models).unwrap();
    let mut expected = [0.0; 3];
    let mut var = [0.0; 3];
    let mut observed = [0.0; 3];
    for acc in states.accounts() {
        let history = AccountHistory {
            account_id: acc[0].account_id.clone(),
            covariate_names: states.covariate_names.clone(),
            by_time: acc.iter().map(|r| (r.time, r.covariates.clone())).collect(),
        };
        // every account starts in state 1 at t = 1
        let seq = model.build_matrix_sequence(&history, 1, 1, 4).unwrap();
        for k in 0..3 {
            expected[k] += seq.landing[k];
            var[k] += seq.landing[k] * (1.0 - seq.landing[k]);
        }
        observed[acc[3].state as usize - 1] += 1.0;
    }
    for k in 0..3 {
        let z = (observed[k] - expected[k]) / var[k].sqrt();
        assert!(z.abs() < 4.0, "state {}: observed {} expected {:.1} z {z:.2}", k + 1, observed[k], expected[k]);
    }
}

#[test]
fn repayment_panel_round_trip_recovers_states() {
    let cfg = MultistateSimConfig::reference(200, 5, 0.5, 1.0, 8).unwrap();
    let states = simulate_multistate(&cfg).unwrap();
    let th = StateThresholds::default();
    let raw = to_repayment_panel(&states, &th, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    write_panel_csv(&raw, &path).unwrap();
    let back = label_states(&read_panel_csv(&path).unwrap(), &th).unwrap();
    assert_eq!(back.records.len(), states.records.len());
    for (a, b) in back.records.iter().zip(&states.records) {
        assert_eq!((a.account_id.as_str(), a.time, a.state), (b.account_id.as_str(), b.time, b.state));
    }
    let panels = build_transition_panels(&raw, &th, &TransitionSpec::default_three_state()).unwrap();
    assert_eq!(panels.len(), 6);
}

#[test]
fn binary_panel_round_trip() {
    let sim = SimConfig {
        n_individuals: 100,
        seed: 4,
        ..SimConfig::default()
    };
    let panel = simulate_frailty_panel(&sim, Pair(2, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bin.csv");
    write_binary_panel_csv(&panel, &path).unwrap();
    assert_eq!(read_binary_panel_csv(&path, Pair(2, 3)).unwrap(), panel);
}

#[test]
fn simulated_covariates_have_their_moments() {
    let sim = SimConfig {
        n_individuals: 20_000,
        beta: vec![0.0, 0.0, 0.0, 0.0],
        sigma: 0.0,
        seed: 12,
        ..SimConfig::default()
    };
    let panel = simulate_frailty_panel(&sim, Pair(1, 1)).unwrap();
    let n = panel.len() as f64;
    let mean = |k: usize| panel.rows.iter().map(|r| r.covariates[k]).sum::<f64>() / n;
    assert!(mean(0).abs() < 0.03);
    assert!((mean(1) - 0.5).abs() < 0.01);
    assert!((mean(2) - 0.72).abs() < 0.02);
    let ybar = panel.rows.iter().filter(|r| r.y).count() as f64 / n;
    assert!((ybar - 0.5).abs() < 0.01);
    let per_account = n / panel.n_accounts() as f64;
    assert!((per_account - 3.5).abs() < 0.05);
}

#[test]
fn intercept_fit_recovers_truth_at_moderate_scale() {
    let sim = SimConfig {
        n_individuals: 4000,
        sigma: 1.0,
        seed: 21,
        ..SimConfig::default()
    };
    let panel = simulate_frailty_panel(&sim, Pair(1, 1)).unwrap();
    let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::intercept(), BaselineSpec::None, sim.covariate_names()).unwrap();
    let fit = fit_mle(&spec, &panel, None, &OptimizerConfig::default()).unwrap();
    assert!(fit.converged);
    for (b, t) in fit.params.beta.iter().zip(&sim.beta) {
        assert!((b - t).abs() < 0.15, "{b} vs {t}");
    }
    assert!((fit.sigmas()[0] - 1.0).abs() < 0.25);
    assert!(fit.se.iter().all(|s| s.is_some_and(|v| v > 0.0)));
}

#[test]
fn bootstrap_lrt_is_seed_reproducible() {
    let sim = SimConfig {
        n_individuals: 300,
        sigma: 1.0,
        seed: 5,
        ..SimConfig::default()
    };
    let panel = simulate_frailty_panel(&sim, Pair(1, 1)).unwrap();
    let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::intercept(), BaselineSpec::None, sim.covariate_names()).unwrap();
    let hyp = LrtHypothesis::intercept_vs_fixed(&spec).unwrap();
    let a = run_bootstrap_lrt(&hyp, &panel, 19, 77, &LrtConfig::default()).unwrap();
    let b = run_bootstrap_lrt(&hyp, &panel, 19, 77, &LrtConfig::default()).unwrap();
    assert_eq!(a.bootstrap_lambdas, b.bootstrap_lambdas);
    assert_eq!(a.p_value, b.p_value);
    assert!(a.observed_lambda >= 0.0);
    let used = a.bootstrap_lambdas.len();
    assert_eq!(used + a.dropped, 19);
    let exceed = a.bootstrap_lambdas.iter().filter(|l| **l >= a.observed_lambda).count();
    assert_eq!(a.p_value, (1 + exceed) as f64 / (used + 1) as f64);
}
