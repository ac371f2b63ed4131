mod common;

use common::{lq_game, theta1};
use olne::experiments::build_scenario;
use olne::inverse::baseline_from_trajectory;
use olne::{
    assemble_kkt, neg_log_likelihood, observe, predict, presolve, solve_forward, solve_inverse_baseline,
    solve_inverse_joint, CostParameters, EstimationResult, EstimationStatus, ForwardConfig, ForwardStatus,
    GameDefinition, InverseConfig, KktPoint, ObservationKind, ObservationModel,
};

fn check_domain(game: &GameDefinition, est: &EstimationResult, config: &InverseConfig) {
    for (spec, w) in game.players.iter().zip(&est.theta.weights) {
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-8, "weights sum to {sum}");
        for (b, v) in spec.bases.iter().zip(w) {
            assert!(*v >= 0.0);
            if b.is_control_effort() {
                assert!(*v >= config.domain.effort_floor);
            }
        }
    }
}

#[test]
fn truth_is_a_root_of_the_baseline_residual() {
    let s = build_scenario("two-player-crossing").unwrap();
    let demo = solve_forward(&s.game, &s.theta_true, &ForwardConfig::default(), None).unwrap();
    assert!(demo.converged());
    let sys = assemble_kkt(&s.game, &KktPoint::new(&s.game, &demo.trajectory, &s.theta_true), None).unwrap();
    let objective: f64 = sys.residual.iter().map(|r| r * r).sum();
    assert!(objective <= 1e-10, "‖G‖² = {objective:e}");
}

#[test]
fn degenerate_weights_give_an_ill_conditioned_prediction() {
    let s = build_scenario("two-player-crossing").unwrap();
    // nothing bounds motion before the goal window, and the proximity barrier
    // keeps rewarding distance
    let theta = CostParameters::new(vec![vec![0.5, 0.5, 0.0, 0.0, 0.0], vec![0.5, 0.5, 0.0, 0.0, 0.0]]);
    let sol = predict(&s.game, &theta, &ForwardConfig::default(), None).unwrap();
    assert_eq!(sol.status, ForwardStatus::IllConditioned);
}

#[test]
fn lq_estimates_respect_the_domain_and_repeat_exactly() {
    let game = lq_game(20, 0.25, [3.0, -2.0, 0.5, 1.0]);
    let theta = theta1(&[0.35, 0.65]);
    let demo = solve_forward(&game, &theta, &ForwardConfig::default(), None).unwrap();
    let model = ObservationModel::new(ObservationKind::Full, 0.05).unwrap();
    let obs = observe(&game, &demo.trajectory, &model, 4).unwrap();
    let config = InverseConfig::default();

    let a = solve_inverse_joint(&game, &obs, &config).unwrap();
    let b = solve_inverse_joint(&game, &obs, &config).unwrap();
    assert_eq!(a, b);
    check_domain(&game, &a, &config);
    assert_eq!(a.status, EstimationStatus::Converged);
    // converged joint estimates are equilibria of their own weights
    assert!(a.kkt_residual <= 1e-6);
    let f = game.dynamics_residual(&a.trajectory).unwrap();
    assert!(f.iter().all(|v| v.abs() <= 1e-6));
    assert!(a.presolve_nll <= a.nll + 1e-6);
    let nll = neg_log_likelihood(&game, &obs, &a.trajectory).unwrap();
    assert!((nll - a.nll).abs() <= 1e-9 * (1.0 + nll));

    let c = solve_inverse_baseline(&game, &obs, &config).unwrap();
    assert_eq!(c, solve_inverse_baseline(&game, &obs, &config).unwrap());
    check_domain(&game, &c, &config);
    let pre = presolve(&game, &obs, &config).unwrap();
    assert_eq!(c.trajectory.states, pre.trajectory.states);
    assert_eq!(c.trajectory.inputs, pre.trajectory.inputs);
}

#[test]
fn baseline_at_the_exact_trajectory_recovers_truth() {
    let s = build_scenario("two-player-crossing").unwrap();
    let demo = solve_forward(&s.game, &s.theta_true, &ForwardConfig::default(), None).unwrap();
    let est = baseline_from_trajectory(&s.game, &demo.trajectory, &InverseConfig::default(), 0.0, 0).unwrap();
    assert_eq!(est.status, EstimationStatus::Converged);
    assert!(est.kkt_residual < 1e-6);
    let err = olne::experiments::cosine_error(&s.theta_true, &est.theta).unwrap();
    assert!(err < 1e-6, "cosine error {err:e}");
}

#[test]
fn noiseless_presolve_reproduces_the_demonstration() {
    let s = build_scenario("two-player-crossing").unwrap();
    let demo = solve_forward(&s.game, &s.theta_true, &ForwardConfig::default(), None).unwrap();
    let obs = observe(&s.game, &demo.trajectory, &ObservationModel::new(ObservationKind::Full, 0.0).unwrap(), 0).unwrap();
    let pre = presolve(&s.game, &obs, &InverseConfig::default()).unwrap();
    assert!(pre.trajectory.feasible);
    for (a, b) in pre.trajectory.states.iter().flatten().zip(demo.trajectory.states.iter().flatten()) {
        assert!((a - b).abs() < 1e-6);
    }
    // the last input never affects a state and is unidentifiable
    for (a, b) in pre.trajectory.inputs[..s.game.horizon - 1]
        .iter()
        .flatten()
        .zip(demo.trajectory.inputs.iter().flatten())
    {
        assert!((a - b).abs() < 1e-4);
    }
}
