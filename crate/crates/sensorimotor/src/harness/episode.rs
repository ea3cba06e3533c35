//! Closed-loop servo episodes: a runtime estimator feeding the saturated
//! servo law, with bootstrap probing, online adaptation, stall detection, and
//! a step-by-step trajectory log.

use nalgebra::{DMatrix, DVector};

use crate::distributed::{
    query_jacobian, refine_unit_online, stable_unit_gamma, winner, LocalizedObservation,
    UnitNetwork,
};
use crate::error::{Error, Result};
use crate::instant::{broyden_update, gradient_update_v, BroydenGain, ObservationDU};
use crate::plants::{finite_difference_jacobian, observe, step, Plant};
use crate::servo::{cost_j, servo_command};
use crate::structured::{jacobian_from_parameters, ParameterVector, RegressorModel};
use crate::types::{Configuration, FeatureVector, GainSettings, JacobianEstimate, MotorCommand};

/// A Jacobian source that can adapt from realized motions during an episode.
pub enum Estimator {
    /// Finite-difference ground truth, re-queried at every step.
    Oracle { fd_step: f64 },
    /// Broyden rank-one adaptation of a single global estimate.
    Broyden {
        jacobian: JacobianEstimate,
        gain: BroydenGain,
        /// Probe the axes once before the first command when the estimate is
        /// still zero.
        bootstrap: bool,
    },
    /// Gradient descent on the instantaneous accuracy cost.
    InstantGradient {
        jacobian: JacobianEstimate,
        gamma: f64,
        bootstrap: bool,
    },
    /// Jacobian derived from fitted model parameters; static during servoing.
    Structured {
        regressor: RegressorModel,
        parameters: ParameterVector,
    },
    /// Winner-takes-all lookup in a trained unit network, optionally refined
    /// online with the combined accuracy cost.
    Distributed {
        network: UnitNetwork,
        history: Vec<LocalizedObservation>,
        online: bool,
    },
}

impl Estimator {
    pub fn id(&self) -> &'static str {
        match self {
            Estimator::Oracle { .. } => "oracle",
            Estimator::Broyden { .. } => "broyden",
            Estimator::InstantGradient { .. } => "instant-gradient",
            Estimator::Structured { .. } => "structured",
            Estimator::Distributed { .. } => "distributed",
        }
    }

    /// The Jacobian estimate to servo with at configuration `x`.
    pub fn current_jacobian(
        &self,
        plant: &dyn Plant,
        x: &Configuration,
    ) -> Result<JacobianEstimate> {
        match self {
            Estimator::Oracle { fd_step } => finite_difference_jacobian(plant, x, *fd_step),
            Estimator::Broyden { jacobian, .. } => Ok(jacobian.clone()),
            Estimator::InstantGradient { jacobian, .. } => Ok(jacobian.clone()),
            Estimator::Structured {
                regressor,
                parameters,
            } => jacobian_from_parameters(regressor, x, parameters),
            Estimator::Distributed { network, .. } => query_jacobian(network, x),
        }
    }

    /// Feeds back the realized motion (x, u, delta) after a step.
    pub fn observe_motion(
        &mut self,
        x: &Configuration,
        u: &MotorCommand,
        delta: &DVector<f64>,
    ) -> Result<()> {
        match self {
            Estimator::Oracle { .. } | Estimator::Structured { .. } => Ok(()),
            Estimator::Broyden { jacobian, gain, .. } => {
                let obs = ObservationDU::new(delta.clone(), u.as_vector().clone())?;
                *jacobian = broyden_update(jacobian, &obs, *gain)?.jacobian;
                Ok(())
            }
            Estimator::InstantGradient { jacobian, gamma, .. } => {
                let obs = ObservationDU::new(delta.clone(), u.as_vector().clone())?;
                let uu = obs.u.norm_squared();
                if uu < crate::instant::DEGENERATE_COMMAND_THRESHOLD {
                    return Ok(());
                }
                // Clip the gain to the per-observation stability limit 1/u^T u.
                let safe_gamma = gamma.min(1.0 / uu);
                *jacobian = gradient_update_v(jacobian, &obs, safe_gamma)?;
                Ok(())
            }
            Estimator::Distributed {
                network,
                history,
                online,
            } => {
                if !*online {
                    return Ok(());
                }
                let obs = ObservationDU::new(delta.clone(), u.as_vector().clone())?;
                if obs.u.norm_squared() < crate::instant::DEGENERATE_COMMAND_THRESHOLD {
                    return Ok(());
                }
                let idx = winner(network, x);
                let unit = &network.units[idx];
                if !unit.trained {
                    return Ok(());
                }
                let gamma = match stable_unit_gamma(unit, history, network.sigma, network.h_min)
                {
                    Ok(g) => g.min(1.0 / obs.u.norm_squared()),
                    Err(_) => 1.0 / obs.u.norm_squared(),
                };
                let refined = refine_unit_online(
                    unit,
                    history,
                    &obs,
                    network.sigma,
                    gamma,
                    network.h_min,
                )?;
                network.units[idx] = refined;
                history.push(LocalizedObservation { x: x.clone(), obs });
                Ok(())
            }
        }
    }

    fn wants_bootstrap(&self) -> bool {
        match self {
            Estimator::Broyden {
                jacobian,
                bootstrap,
                ..
            }
            | Estimator::InstantGradient {
                jacobian,
                bootstrap,
                ..
            } => *bootstrap && jacobian.as_matrix().norm() == 0.0,
            _ => false,
        }
    }

    fn set_jacobian(&mut self, a: JacobianEstimate) {
        match self {
            Estimator::Broyden { jacobian, .. } => *jacobian = a,
            Estimator::InstantGradient { jacobian, .. } => *jacobian = a,
            _ => {}
        }
    }
}

/// Initializes a structure-free estimate by executing forward/back probe
/// pairs of size `h` along each axis and differencing the observed features.
/// The plant ends where it started.
pub fn bootstrap_jacobian(
    plant: &dyn Plant,
    x: &Configuration,
    h: f64,
) -> Result<JacobianEstimate> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("probe size must be > 0, got {h}")));
    }
    let spec = plant.spec();
    let y0 = plant.features(&observe(plant, x)?).into_vector();
    let mut jac = DMatrix::zeros(spec.m, spec.n);
    for i in 0..spec.n {
        let mut probe = DVector::zeros(spec.n);
        probe[i] = h;
        let fwd = step(plant, x, &MotorCommand::new(probe.clone())?)?;
        let du = fwd.x.as_vector() - x.as_vector();
        let moved = du.norm();
        if moved < 1e-12 {
            // Blocked by the boundary: probe backwards instead.
            probe[i] = -h;
            let back = step(plant, x, &MotorCommand::new(probe)?)?;
            let du = back.x.as_vector() - x.as_vector();
            if du.norm() < 1e-12 {
                return Err(Error::OutOfWorkspace);
            }
            let col = (back.features.as_vector() - &y0) / du[i];
            jac.set_column(i, &col);
        } else {
            let col = (fwd.features.as_vector() - &y0) / du[i];
            jac.set_column(i, &col);
        }
    }
    JacobianEstimate::new(jac)
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeStatus {
    /// The feature error dropped below the tolerance.
    Converged,
    /// The step budget ran out first.
    MaxSteps,
    /// The error stopped decreasing, or the estimator could not produce a
    /// usable command.
    Stalled,
}

impl EpisodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpisodeStatus::Converged => "converged",
            EpisodeStatus::MaxSteps => "max-steps",
            EpisodeStatus::Stalled => "stalled",
        }
    }
}

/// One logged control step (or the terminal zero-command row).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub err_norm: f64,
    pub cost_j: f64,
    /// Secant residual ||A u - delta|| of the estimate after adaptation;
    /// zero on the terminal row.
    pub diag: f64,
    pub boundary: bool,
}

/// The full trace of a servo episode.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub n: usize,
    pub m: usize,
    pub rows: Vec<LogRow>,
    pub status: EpisodeStatus,
    /// Human-readable cause when the episode stalled on an estimator error.
    pub message: Option<String>,
}

impl TrajectoryLog {
    pub fn final_error(&self) -> f64 {
        self.rows.last().map(|r| r.err_norm).unwrap_or(f64::NAN)
    }

    /// Number of commands executed (the terminal row carries none).
    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }
}

/// Window length of the stall detector.
const STALL_WINDOW: usize = 50;
/// Minimum error decrease over a full window to count as progress.
const STALL_DECREASE: f64 = 1e-12;

/// Runs a closed-loop set-point episode from the plant's start pose. Emits at
/// most `max_steps` command rows plus one terminal row. Structure-free
/// estimators with a zero initial estimate are bootstrapped with axis probes
/// of half the saturation bound before the loop starts.
pub fn run_servo_episode(
    plant: &dyn Plant,
    estimator: &mut Estimator,
    gains: &GainSettings,
    y_star: &FeatureVector,
    feature_tol: f64,
    max_steps: usize,
) -> Result<TrajectoryLog> {
    if !(feature_tol > 0.0 && feature_tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "feature_tol must be > 0, got {feature_tol}"
        )));
    }
    if max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be >= 1".into()));
    }
    let spec = plant.spec();
    if y_star.dim() != spec.m {
        return Err(Error::DimensionMismatch {
            context: "servo target",
            expected: spec.m,
            actual: y_star.dim(),
        });
    }
    let mut x = spec.x0.clone();
    if estimator.wants_bootstrap() {
        estimator.set_jacobian(bootstrap_jacobian(plant, &x, 0.5 * gains.u_max)?);
    }
    let mut y = plant.features(&observe(plant, &x)?).into_vector();
    let mut rows: Vec<LogRow> = Vec::new();
    let mut err_history: Vec<f64> = Vec::new();
    let mut status = EpisodeStatus::MaxSteps;
    let mut message = None;

    for step_idx in 0..=max_steps {
        let err = (&y - y_star.as_vector()).norm();
        err_history.push(err);
        let terminal = |rows: &mut Vec<LogRow>, diag_status: EpisodeStatus| {
            rows.push(LogRow {
                step: step_idx,
                x: x.as_vector().clone(),
                u: DVector::zeros(spec.n),
                y: y.clone(),
                err_norm: err,
                cost_j: 0.0,
                diag: 0.0,
                boundary: false,
            });
            diag_status
        };
        if err <= feature_tol {
            status = terminal(&mut rows, EpisodeStatus::Converged);
            break;
        }
        if step_idx == max_steps {
            status = terminal(&mut rows, EpisodeStatus::MaxSteps);
            break;
        }
        if err_history.len() > STALL_WINDOW {
            let before = err_history[err_history.len() - 1 - STALL_WINDOW];
            if before - err < STALL_DECREASE {
                status = terminal(&mut rows, EpisodeStatus::Stalled);
                break;
            }
        }
        let y_now = FeatureVector::new(y.clone())?;
        let outcome: Result<(MotorCommand, JacobianEstimate)> = (|| {
            let a = estimator.current_jacobian(plant, &x)?;
            let u = servo_command(&a, &y_now, y_star, gains)?;
            Ok((u, a))
        })();
        let (u, a) = match outcome {
            Ok(pair) => pair,
            Err(e) => {
                message = Some(e.to_string());
                status = terminal(&mut rows, EpisodeStatus::Stalled);
                break;
            }
        };
        let out = step(plant, &x, &u)?;
        let realized = MotorCommand::new(out.x.as_vector() - x.as_vector())?;
        let delta = out.features.as_vector() - &y;
        estimator.observe_motion(&x, &realized, &delta)?;
        let a_after = estimator
            .current_jacobian(plant, &x)
            .unwrap_or_else(|_| a.clone());
        let diag = (a_after.as_matrix() * realized.as_vector() - &delta).norm();
        let cost = cost_j(&a, &realized, &y_now, y_star, gains)?;
        rows.push(LogRow {
            step: step_idx,
            x: x.as_vector().clone(),
            u: realized.as_vector().clone(),
            y: y.clone(),
            err_norm: err,
            cost_j: cost,
            diag,
            boundary: out.clamped,
        });
        x = out.x;
        y = out.features.into_vector();
    }
    Ok(TrajectoryLog {
        n: spec.n,
        m: spec.m,
        rows,
        status,
        message,
    })
}
