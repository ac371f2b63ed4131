use olne::experiments::{
    cosine_error, io, noise_seed, position_error, run_study, summarize, Metric, MonteCarloConfig, ResultRow, Study,
    CSV_SCHEMA_VERSION, TWO_PLAYER_CROSSING,
};
use olne::{CostParameters, EstimationMethod, ForwardConfig, InverseConfig, ObservationKind, Trajectory};
use proptest::prelude::*;

fn traj(states: Vec<Vec<f64>>) -> Trajectory {
    let n = states.len();
    Trajectory {
        states,
        inputs: vec![vec![0.0; 4]; n],
        costates: None,
        feasible: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn position_error_matches_double_loop(
        a in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 8), 1..20),
        shift in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        let b: Vec<Vec<f64>> = a.iter().map(|x| x.iter().zip(&shift).map(|(v, s)| v + s * v.cos()).collect()).collect();
        let mut total = 0.0;
        for t in 0..a.len() {
            for p in 0..2 {
                let dx = a[t][4 * p] - b[t][4 * p];
                let dy = a[t][4 * p + 1] - b[t][4 * p + 1];
                total += (dx * dx + dy * dy).sqrt();
            }
        }
        let want = total / (2 * a.len()) as f64;
        let got = position_error(&traj(a), &traj(b)).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn cosine_error_matches_angle(
        u in prop::collection::vec(0.01..1.0f64, 3),
        v in prop::collection::vec(0.01..1.0f64, 3),
    ) {
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // the second player agrees exactly and contributes nothing
        let want = 0.5 * (1.0 - dot / (nu * nv));
        let a = CostParameters::new(vec![u.clone(), u.clone()]);
        let b = CostParameters::new(vec![v.clone(), u]);
        let got = cosine_error(&a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-12);
    }
}

#[test]
fn noise_seeds_are_distinct_and_stable() {
    let mut seen = std::collections::HashSet::new();
    for s in 0..5 {
        for k in 0..40 {
            assert!(seen.insert(noise_seed(7, s, k)));
            assert_eq!(noise_seed(7, s, k), noise_seed(7, s, k));
        }
    }
    assert_ne!(noise_seed(7, 0, 0), noise_seed(8, 0, 0));
}

fn config(sigmas: Vec<f64>, seeds: usize, methods: Vec<EstimationMethod>) -> MonteCarloConfig {
    MonteCarloConfig {
        scenario: TWO_PLAYER_CROSSING.into(),
        seeds,
        sigmas,
        kinds: vec![ObservationKind::Full],
        methods,
        master_seed: 3,
        threads: Some(1),
        record_runtimes: false,
        output: None,
    }
}

#[test]
fn noiseless_sweep_recovers_weights_and_rows_reproduce_alone() {
    let study = Study::new(TWO_PLAYER_CROSSING, InverseConfig::default(), ForwardConfig::default()).unwrap();
    let cfg = config(vec![0.0, 0.05], 3, vec![EstimationMethod::Joint]);
    let rows = run_study::<std::io::Sink>(&study, &cfg, None).unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows.iter().filter(|r| r.sigma == 0.0) {
        assert!(!r.failed);
        assert!(r.cosine_error.unwrap() < 1e-3, "{:?}", r.cosine_error);
    }

    let last = rows.iter().find(|r| r.sigma == 0.05 && r.seed_index == 2).unwrap();
    let alone = study.run_cell(&cfg, 1, 2);
    assert_eq!(alone.len(), 1);
    assert_eq!(&alone[0], last);

    let mut csv = Vec::new();
    io::write_rows(&mut csv, &rows).unwrap();
    assert_eq!(io::read_rows(csv.as_slice()).unwrap(), rows);
}

fn row(sigma: f64, seed_index: usize, value: f64, failed: bool) -> ResultRow {
    ResultRow {
        schema_version: CSV_SCHEMA_VERSION,
        scenario: TWO_PLAYER_CROSSING.into(),
        method: EstimationMethod::Joint,
        obs_kind: ObservationKind::Partial,
        sigma,
        seed_index,
        noise_seed: 0,
        cosine_error: Some(value),
        position_error: Some(value),
        failed,
        failure: None,
        status: None,
        nll: None,
        presolve_nll: None,
        kkt_residual: None,
        iterations: None,
        estimate_runtime_s: None,
        predict_runtime_s: None,
    }
}

#[test]
fn rolling_summary_matches_brute_force_windows() {
    // values out of order; one failed row with an outlier that must be ignored
    let values = [0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4];
    let mut rows: Vec<ResultRow> = values
        .iter()
        .enumerate()
        .map(|(k, v)| row(0.01 * (k / 2) as f64, k % 2, *v, false))
        .collect();
    rows.push(row(0.015, 0, 100.0, true));
    rows.reverse();

    let window = 3;
    let summary: Vec<_> = summarize(&rows, window)
        .into_iter()
        .filter(|s| s.metric == Metric::CosineError)
        .collect();
    assert_eq!(summary.len(), values.len());
    for (i, s) in summary.iter().enumerate() {
        // windows of three around each row, pushed inward at the ends
        let start = i.saturating_sub(1).min(values.len() - window);
        let mut w = values[start..start + window].to_vec();
        w.sort_by(f64::total_cmp);
        assert_eq!(s.median, w[1]);
        assert!((s.q25 - 0.5 * (w[0] + w[1])).abs() < 1e-15);
        assert!((s.q75 - 0.5 * (w[1] + w[2])).abs() < 1e-15);
        assert_eq!(s.sigma, 0.01 * (i / 2) as f64);
    }
}
