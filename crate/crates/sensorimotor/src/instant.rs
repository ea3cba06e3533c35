//! Structure-free instantaneous estimation: Broyden rank-one updates and
//! gradient descent on the secant accuracy cost.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::JacobianEstimate;

/// Squared-norm threshold below which a command is too small to divide by.
pub const DEGENERATE_COMMAND_THRESHOLD: f64 = 1e-18;

/// A (delta, u) observation: the feature change produced by a command.
#[derive(Debug, Clone)]
pub struct ObservationDU {
    pub delta: nalgebra::DVector<f64>,
    pub u: nalgebra::DVector<f64>,
}

impl ObservationDU {
    pub fn new(delta: nalgebra::DVector<f64>, u: nalgebra::DVector<f64>) -> Result<Self> {
        if delta.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self { delta, u })
    }
}

/// Broyden tuning gain, constrained to (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroydenGain(f64);

impl BroydenGain {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "Broyden gain must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self(gamma))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Result of a Broyden step; `skipped` flags a degenerate command for which
/// the previous estimate was returned untouched.
#[derive(Debug, Clone)]
pub struct BroydenUpdate {
    pub jacobian: JacobianEstimate,
    pub skipped: bool,
}

fn check_obs_shapes(a: &JacobianEstimate, obs: &ObservationDU) -> Result<()> {
    if a.feature_dim() != obs.delta.len() {
        return Err(Error::DimensionMismatch {
            context: "observation delta",
            expected: a.feature_dim(),
            actual: obs.delta.len(),
        });
    }
    if a.config_dim() != obs.u.len() {
        return Err(Error::DimensionMismatch {
            context: "observation command",
            expected: a.config_dim(),
            actual: obs.u.len(),
        });
    }
    Ok(())
}

/// Broyden rank-one update:
/// A + Gamma (delta - A u) u^T / (u^T u).
/// At unit gain the result satisfies the secant condition exactly; the action
/// on the orthogonal complement of u is unchanged for any gain.
pub fn broyden_update(
    a_prev: &JacobianEstimate,
    obs: &ObservationDU,
    gain: BroydenGain,
) -> Result<BroydenUpdate> {
    check_obs_shapes(a_prev, obs)?;
    let uu = obs.u.norm_squared();
    if uu < DEGENERATE_COMMAND_THRESHOLD {
        return Ok(BroydenUpdate {
            jacobian: a_prev.clone(),
            skipped: true,
        });
    }
    let residual = &obs.delta - a_prev.as_matrix() * &obs.u;
    let update = (gain.value() / uu) * residual * obs.u.transpose();
    Ok(BroydenUpdate {
        jacobian: JacobianEstimate::new(a_prev.as_matrix() + update)?,
        skipped: false,
    })
}

/// Accuracy cost V = (gamma/2) ||A u - delta||^2.
pub fn cost_v(a_hat: &JacobianEstimate, obs: &ObservationDU, gamma: f64) -> Result<f64> {
    check_obs_shapes(a_hat, obs)?;
    Ok(0.5 * gamma * (a_hat.as_matrix() * &obs.u - &obs.delta).norm_squared())
}

/// Entrywise gradient of the accuracy cost: gamma (A u - delta) u^T.
pub fn grad_v(a_hat: &JacobianEstimate, obs: &ObservationDU, gamma: f64) -> Result<DMatrix<f64>> {
    check_obs_shapes(a_hat, obs)?;
    let residual = a_hat.as_matrix() * &obs.u - &obs.delta;
    Ok(gamma * residual * obs.u.transpose())
}

/// One gradient step on the accuracy cost: A - gamma (A u - delta) u^T.
pub fn gradient_update_v(
    a_hat: &JacobianEstimate,
    obs: &ObservationDU,
    gamma: f64,
) -> Result<JacobianEstimate> {
    let grad = grad_v(a_hat, obs, gamma)?;
    JacobianEstimate::new(a_hat.as_matrix() - grad)
}
