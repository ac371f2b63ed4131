//! Estimation and prediction error metrics.

use crate::dynamics::{Trajectory, STATE_DIM};
use crate::error::{check_len, GameError, Result};
use crate::objectives::CostParameters;

/// `1 − (1/N) Σᵢ cos(θ_trueⁱ, θ_estⁱ)`; invariant to positive per-player scaling.
pub fn cosine_error(theta_true: &CostParameters, theta_est: &CostParameters) -> Result<f64> {
    check_len("estimated weight set", theta_true.weights.len(), theta_est.weights.len())?;
    if theta_true.weights.is_empty() {
        return Err(GameError::ParameterDomain("cosine error of an empty weight set".into()));
    }
    let mut sum = 0.0;
    for (i, (a, b)) in theta_true.weights.iter().zip(&theta_est.weights).enumerate() {
        check_len("estimated player weights", a.len(), b.len())?;
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
            return Err(GameError::ParameterDomain(format!(
                "player {i}: cosine error needs nonzero finite weight vectors"
            )));
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        sum += (dot / (na * nb)).clamp(-1.0, 1.0);
    }
    Ok(1.0 - sum / theta_true.weights.len() as f64)
}

/// Mean over players and time steps of the Euclidean position distance.
pub fn position_error(predicted: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_len("predicted horizon", truth.horizon(), predicted.horizon())?;
    let dim = |t: &Trajectory| t.states.first().map_or(0, Vec::len);
    check_len("predicted state dimension", dim(truth), dim(predicted))?;
    let players = dim(truth) / STATE_DIM;
    if players == 0 || truth.horizon() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..truth.horizon() {
        for p in 0..players {
            let (a, b) = (predicted.position(p, t), truth.position(p, t));
            total += (a[0] - b[0]).hypot(a[1] - b[1]);
        }
    }
    Ok(total / (players * truth.horizon()) as f64)
}
