//! Saturated set-point servo laws built on pseudo-inverse solutions of the
//! quadratic servo cost, plus the kinematic bookkeeping of the difference
//! model y_{t+1} = y_t + A u.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Configuration, FeatureVector, GainSettings, JacobianEstimate, MotorCommand};

/// Norm-preserving vector saturation: rescales `e` onto the ball of radius
/// `bound` when it lies outside, leaving the direction unchanged.
pub fn saturate(e: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
    if !bound.is_finite() || bound <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "saturation bound must be a positive finite number, got {bound}"
        )));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("saturation input"));
    }
    let norm = e.norm();
    if norm <= bound {
        Ok(e.clone())
    } else {
        Ok(e * (bound / norm))
    }
}

/// Applies a differential displacement command: x_{t+1} = x_t + u_t.
pub fn apply_command(x: &Configuration, u: &MotorCommand) -> Result<Configuration> {
    if x.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            context: "apply_command",
            expected: x.dim(),
            actual: u.dim(),
        });
    }
    Configuration::new(x.as_vector() + u.as_vector())
}

/// Converts a displacement command into its velocity equivalent u / dt.
pub fn to_velocity(u: &MotorCommand, dt: f64) -> Result<DVector<f64>> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    Ok(u.as_vector() / dt)
}

/// First-order prediction of the next feature vector: y + A u.
pub fn predict_feature(
    y: &FeatureVector,
    a: &JacobianEstimate,
    u: &MotorCommand,
) -> Result<FeatureVector> {
    check_shapes(a, y, u)?;
    FeatureVector::new(y.as_vector() + a.as_matrix() * u.as_vector())
}

/// The quadratic servo cost ||A u + lambda sat(y - y*)||^2, with the
/// saturation bound taken from the gains.
pub fn cost_j(
    a: &JacobianEstimate,
    u: &MotorCommand,
    y: &FeatureVector,
    y_star: &FeatureVector,
    gains: &GainSettings,
) -> Result<f64> {
    check_shapes(a, y, u)?;
    if y_star.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            context: "cost_j target",
            expected: y.dim(),
            actual: y_star.dim(),
        });
    }
    let e = saturate(&(y.as_vector() - y_star.as_vector()), gains.u_max)?;
    Ok((a.as_matrix() * u.as_vector() + gains.lambda * e).norm_squared())
}

/// Minimum-norm command via the right pseudo-inverse:
/// u = -lambda A^T (A A^T + eps I)^-1 sat_e. Used for n >= m.
pub fn right_pseudo_inverse_command(
    a: &DMatrix<f64>,
    sat_e: &DVector<f64>,
    lambda: f64,
    damping: f64,
) -> Result<DVector<f64>> {
    let mut gram = a * a.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += damping;
    }
    let chol = Cholesky::new(gram).ok_or(Error::SingularJacobian {
        branch: "right pseudo-inverse",
    })?;
    Ok(-lambda * a.transpose() * chol.solve(sat_e))
}

/// Least-squares command from the normal equation:
/// u = -lambda (A^T A + eps I)^-1 A^T sat_e. Used for m > n.
pub fn least_squares_command(
    a: &DMatrix<f64>,
    sat_e: &DVector<f64>,
    lambda: f64,
    damping: f64,
) -> Result<DVector<f64>> {
    let mut gram = a.transpose() * a;
    for i in 0..gram.nrows() {
        gram[(i, i)] += damping;
    }
    let chol = Cholesky::new(gram).ok_or(Error::SingularJacobian {
        branch: "least-squares",
    })?;
    Ok(-lambda * chol.solve(&(a.transpose() * sat_e)))
}

/// Square-case command via direct matrix inversion: u = -lambda A^-1 sat_e.
pub fn inverse_command(a: &DMatrix<f64>, sat_e: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    match lu.solve(sat_e) {
        Some(sol) => Ok(-lambda * sol),
        None => Err(Error::SingularJacobian {
            branch: "matrix-inversion",
        }),
    }
}

/// The servo command before the final saturation to u_max: dispatches on the
/// dimensional regime (n > m right pseudo-inverse, m > n least squares,
/// m = n as the degenerate right branch, exact inverse at zero damping).
pub fn raw_servo_command(
    a: &JacobianEstimate,
    y: &FeatureVector,
    y_star: &FeatureVector,
    gains: &GainSettings,
) -> Result<MotorCommand> {
    let (m, n) = (a.feature_dim(), a.config_dim());
    if y.dim() != m || y_star.dim() != m {
        return Err(Error::DimensionMismatch {
            context: "servo_command features",
            expected: m,
            actual: y.dim().max(y_star.dim()),
        });
    }
    let sat_e = saturate(&(y.as_vector() - y_star.as_vector()), gains.u_max)?;
    let u = if m > n {
        least_squares_command(a.as_matrix(), &sat_e, gains.lambda, gains.damping)?
    } else {
        right_pseudo_inverse_command(a.as_matrix(), &sat_e, gains.lambda, gains.damping)?
    };
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("servo command"));
    }
    MotorCommand::new(u)
}

/// The servo command, re-saturated to u_max so the differential-motion
/// assumption of the displacement interface holds at any feedback gain.
pub fn servo_command(
    a: &JacobianEstimate,
    y: &FeatureVector,
    y_star: &FeatureVector,
    gains: &GainSettings,
) -> Result<MotorCommand> {
    let raw = raw_servo_command(a, y, y_star, gains)?;
    MotorCommand::new(saturate(raw.as_vector(), gains.u_max)?)
}

fn check_shapes(a: &JacobianEstimate, y: &FeatureVector, u: &MotorCommand) -> Result<()> {
    if a.feature_dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian rows vs feature",
            expected: a.feature_dim(),
            actual: y.dim(),
        });
    }
    if a.config_dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian cols vs command",
            expected: a.config_dim(),
            actual: u.dim(),
        });
    }
    Ok(())
}
