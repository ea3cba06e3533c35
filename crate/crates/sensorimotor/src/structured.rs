//! Structure-based model adaptation: gradient-descent estimation of the
//! parameters of a linearly parametrised model y = L(x) pi, and the adaptive
//! Jacobian derived from the fitted parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Configuration, FeatureVector, JacobianEstimate};

/// Estimated parameter vector pi-hat of a linearly parametrised model.
pub type ParameterVector = DVector<f64>;

type EvalFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type EvalDxFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A known regression matrix L(x) with shape (m, p), optionally paired with
/// the analytic configuration derivative of L(x) pi.
pub struct RegressorModel {
    p: usize,
    m: usize,
    n: usize,
    evaluate: Box<EvalFn>,
    evaluate_dx: Option<Box<EvalDxFn>>,
}

impl RegressorModel {
    pub fn new(
        m: usize,
        n: usize,
        p: usize,
        evaluate: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            p,
            m,
            n,
            evaluate: Box::new(evaluate),
            evaluate_dx: None,
        }
    }

    /// Attaches the analytic map (x, pi) -> d{L(x) pi}/dx of shape (m, n).
    pub fn with_analytic_dx(
        mut self,
        evaluate_dx: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.evaluate_dx = Some(Box::new(evaluate_dx));
        self
    }

    pub fn param_dim(&self) -> usize {
        self.p
    }

    pub fn feature_dim(&self) -> usize {
        self.m
    }

    pub fn config_dim(&self) -> usize {
        self.n
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = (self.evaluate)(x);
        debug_assert_eq!((l.nrows(), l.ncols()), (self.m, self.p));
        l
    }

    /// Model prediction L(x) pi.
    pub fn predict(&self, x: &DVector<f64>, pi: &ParameterVector) -> DVector<f64> {
        self.evaluate(x) * pi
    }

    pub fn has_analytic_dx(&self) -> bool {
        self.evaluate_dx.is_some()
    }
}

/// An input-output observation (y_k, x_k) for structure-based fitting.
#[derive(Debug, Clone)]
pub struct ObservationYX {
    pub y: FeatureVector,
    pub x: Configuration,
}

/// Gradient-descent schedule: gain, iteration cap, and gradient tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSchedule {
    pub gamma: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl FitSchedule {
    pub fn new(gamma: f64, max_iters: usize, grad_tol: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be > 0, got {gamma}")));
        }
        if max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(grad_tol > 0.0 && grad_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grad_tol must be > 0, got {grad_tol}"
            )));
        }
        Ok(Self {
            gamma,
            max_iters,
            grad_tol,
        })
    }

    pub fn with_gamma(gamma: f64) -> Result<Self> {
        Self::new(gamma, 100_000, 1e-9)
    }
}

fn check_data(data: &[ObservationYX], reg: &RegressorModel) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for obs in data {
        if obs.y.dim() != reg.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "observation feature",
                expected: reg.feature_dim(),
                actual: obs.y.dim(),
            });
        }
        if obs.x.dim() != reg.config_dim() {
            return Err(Error::DimensionMismatch {
                context: "observation configuration",
                expected: reg.config_dim(),
                actual: obs.x.dim(),
            });
        }
    }
    Ok(())
}

/// The fitting cost U = (gamma/2) sum_k ||L(x_k) pi - y_k||^2.
pub fn cost_u(
    data: &[ObservationYX],
    pi_hat: &ParameterVector,
    gamma: f64,
    reg: &RegressorModel,
) -> Result<f64> {
    check_data(data, reg)?;
    let sum: f64 = data
        .iter()
        .map(|obs| (reg.predict(obs.x.as_vector(), pi_hat) - obs.y.as_vector()).norm_squared())
        .sum();
    Ok(0.5 * gamma * sum)
}

/// Analytic gradient of the fitting cost: gamma sum_k L^T (L pi - y).
pub fn grad_u(
    data: &[ObservationYX],
    pi_hat: &ParameterVector,
    gamma: f64,
    reg: &RegressorModel,
) -> Result<ParameterVector> {
    check_data(data, reg)?;
    let mut grad = DVector::zeros(reg.param_dim());
    for obs in data {
        let l = reg.evaluate(obs.x.as_vector());
        let residual = &l * pi_hat - obs.y.as_vector();
        grad += l.transpose() * residual;
    }
    Ok(gamma * grad)
}

/// One descent step pi - grad_U(pi); the step size is carried entirely by
/// the learning gain gamma.
pub fn update_parameters(
    pi_hat: &ParameterVector,
    data: &[ObservationYX],
    gamma: f64,
    reg: &RegressorModel,
) -> Result<ParameterVector> {
    Ok(pi_hat - grad_u(data, pi_hat, gamma, reg)?)
}

/// Iterates descent steps until the gradient norm drops below `grad_tol` or
/// the iteration cap is reached. Ten consecutive cost increases abort with a
/// step-size error.
pub fn fit(
    data: &[ObservationYX],
    pi0: &ParameterVector,
    schedule: &FitSchedule,
    reg: &RegressorModel,
) -> Result<ParameterVector> {
    check_data(data, reg)?;
    let mut pi = pi0.clone();
    let mut prev_cost = cost_u(data, &pi, schedule.gamma, reg)?;
    let mut rising = 0usize;
    for _ in 0..schedule.max_iters {
        let grad = grad_u(data, &pi, schedule.gamma, reg)?;
        if grad.norm() <= schedule.grad_tol {
            return Ok(pi);
        }
        pi -= grad;
        let cost = cost_u(data, &pi, schedule.gamma, reg)?;
        if cost > prev_cost || !cost.is_finite() {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Diverged);
            }
        } else {
            rising = 0;
        }
        prev_cost = cost;
    }
    Ok(pi)
}

/// A learning gain guaranteed stable for this dataset: 1 / lambda_max of
/// sum_k L^T L, the Gauss-Newton matrix at unit gamma.
pub fn stable_gamma(data: &[ObservationYX], reg: &RegressorModel) -> Result<f64> {
    check_data(data, reg)?;
    let mut gram = DMatrix::zeros(reg.param_dim(), reg.param_dim());
    for obs in data {
        let l = reg.evaluate(obs.x.as_vector());
        gram += l.transpose() * l;
    }
    let lambda_max = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    if lambda_max <= 0.0 {
        return Err(Error::InvalidInput(
            "regressor carries no information for any parameter".into(),
        ));
    }
    Ok(1.0 / lambda_max)
}

/// The adaptive Jacobian d{L(x) pi}/dx, analytic when the regressor carries
/// the derivative, otherwise central finite differences with a relative step.
pub fn jacobian_from_parameters(
    reg: &RegressorModel,
    x: &Configuration,
    pi_hat: &ParameterVector,
) -> Result<JacobianEstimate> {
    if x.dim() != reg.config_dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian_from_parameters",
            expected: reg.config_dim(),
            actual: x.dim(),
        });
    }
    if pi_hat.len() != reg.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "jacobian_from_parameters params",
            expected: reg.param_dim(),
            actual: pi_hat.len(),
        });
    }
    if let Some(dx) = &reg.evaluate_dx {
        return JacobianEstimate::new(dx(x.as_vector(), pi_hat));
    }
    let (m, n) = (reg.feature_dim(), reg.config_dim());
    let mut jac = DMatrix::zeros(m, n);
    for i in 0..n {
        let h = 1e-5 * (1.0 + x.as_vector()[i].abs());
        let mut xp = x.as_vector().clone();
        let mut xm = x.as_vector().clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (reg.predict(&xp, pi_hat) - reg.predict(&xm, pi_hat)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    JacobianEstimate::new(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar model y = x * pi with p = m = n = 1.
    fn scalar_reg() -> RegressorModel {
        RegressorModel::new(1, 1, 1, |x| DMatrix::from_element(1, 1, x[0]))
    }

    fn obs(x: &[f64], y: &[f64]) -> ObservationYX {
        ObservationYX {
            x: Configuration::from_slice(x).unwrap(),
            y: FeatureVector::from_slice(y).unwrap(),
        }
    }

    fn scalar_data() -> Vec<ObservationYX> {
        vec![obs(&[1.0], &[2.0]), obs(&[2.0], &[4.0])]
    }

    #[test]
    fn cost_u_exact_model_is_zero() {
        let reg = scalar_reg();
        let pi = DVector::from_row_slice(&[2.0]);
        assert_eq!(cost_u(&scalar_data(), &pi, 1.0, &reg).unwrap(), 0.0);
    }

    #[test]
    fn cost_u_hand_value_and_gamma_linearity() {
        let reg = scalar_reg();
        let pi = DVector::zeros(1);
        // (1/2)(2^2 + 4^2) = 10.
        let c1 = cost_u(&scalar_data(), &pi, 1.0, &reg).unwrap();
        assert!((c1 - 10.0).abs() < 1e-12);
        let c2 = cost_u(&scalar_data(), &pi, 2.0, &reg).unwrap();
        assert!((c2 - 2.0 * c1).abs() < 1e-12);
    }

    #[test]
    fn cost_u_empty_data_errors() {
        let reg = scalar_reg();
        let pi = DVector::zeros(1);
        assert!(matches!(cost_u(&[], &pi, 1.0, &reg), Err(Error::EmptyData)));
    }

    #[test]
    fn grad_u_hand_value() {
        let reg = scalar_reg();
        let data = vec![obs(&[1.0], &[2.0])];
        let pi = DVector::zeros(1);
        // 1 * (0 - 2) = -2.
        let g = grad_u(&data, &pi, 1.0, &reg).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-12);
        // Zero at the minimiser.
        let pi = DVector::from_row_slice(&[2.0]);
        assert!(grad_u(&scalar_data(), &pi, 3.0, &reg).unwrap().norm() < 1e-12);
    }

    #[test]
    fn grad_u_matches_finite_differences() {
        // Two-parameter linear regressor L(x) = [x, x^2].
        let reg = RegressorModel::new(1, 1, 2, |x| DMatrix::from_row_slice(1, 2, &[x[0], x[0] * x[0]]));
        let data = vec![obs(&[1.0], &[0.5]), obs(&[2.0], &[-1.0]), obs(&[0.3], &[0.2])];
        let pi = DVector::from_row_slice(&[0.7, -0.4]);
        let gamma = 1.3;
        let g = grad_u(&data, &pi, gamma, &reg).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut pp = pi.clone();
            let mut pm = pi.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (cost_u(&data, &pp, gamma, &reg).unwrap()
                - cost_u(&data, &pm, gamma, &reg).unwrap())
                / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn update_parameters_hand_value() {
        let reg = scalar_reg();
        let data = vec![obs(&[1.0], &[2.0])];
        let pi = DVector::zeros(1);
        // 0 - 0.5 * (-2) = 1.
        let next = update_parameters(&pi, &data, 0.5, &reg).unwrap();
        assert!((next[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn update_parameters_descends() {
        let reg = scalar_reg();
        let data = scalar_data();
        let pi = DVector::from_row_slice(&[0.3]);
        let gamma = 0.05;
        let next = update_parameters(&pi, &data, gamma, &reg).unwrap();
        assert!(
            cost_u(&data, &next, gamma, &reg).unwrap() < cost_u(&data, &pi, gamma, &reg).unwrap()
        );
    }

    #[test]
    fn fit_recovers_scalar_slope() {
        let reg = scalar_reg();
        let data = scalar_data();
        let schedule = FitSchedule::with_gamma(stable_gamma(&data, &reg).unwrap()).unwrap();
        let pi = fit(&data, &DVector::zeros(1), &schedule, &reg).unwrap();
        // Closed-form least squares: (sum x^2)^-1 sum x y = 10/5 = 2.
        assert!((pi[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn fit_recovers_two_parameters() {
        let reg = RegressorModel::new(1, 1, 2, |x| {
            DMatrix::from_row_slice(1, 2, &[x[0], (2.0 * x[0]).sin()])
        });
        let truth = DVector::from_row_slice(&[1.0, -3.0]);
        let xs = [0.2, 0.9, -0.5, 1.4, 0.1, -1.1];
        let data: Vec<_> = xs
            .iter()
            .map(|&x| {
                let y = reg.predict(&DVector::from_row_slice(&[x]), &truth);
                obs(&[x], &[y[0]])
            })
            .collect();
        let schedule = FitSchedule::with_gamma(stable_gamma(&data, &reg).unwrap()).unwrap();
        let pi = fit(&data, &DVector::zeros(2), &schedule, &reg).unwrap();
        assert!((pi - &truth).norm() < 1e-6);
    }

    #[test]
    fn fit_at_minimiser_is_stationary() {
        let reg = scalar_reg();
        let data = scalar_data();
        let truth = DVector::from_row_slice(&[2.0]);
        let schedule = FitSchedule::with_gamma(0.05).unwrap();
        let pi = fit(&data, &truth, &schedule, &reg).unwrap();
        assert!((pi - truth).norm() < 1e-9);
    }

    #[test]
    fn fit_divergence_guard_trips() {
        let reg = scalar_reg();
        let data = scalar_data();
        // gamma far above the stability limit 1/5 diverges.
        let schedule = FitSchedule::new(10.0, 1000, 1e-12).unwrap();
        assert!(matches!(
            fit(&data, &DVector::from_row_slice(&[1.0]), &schedule, &reg),
            Err(Error::Diverged)
        ));
    }

    #[test]
    fn jacobian_from_parameters_linear_map() {
        let reg = scalar_reg();
        let pi = DVector::from_row_slice(&[2.0]);
        let x = Configuration::from_slice(&[0.4]).unwrap();
        let j = jacobian_from_parameters(&reg, &x, &pi).unwrap();
        assert!((j.as_matrix()[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn jacobian_from_parameters_constant_regressor_is_zero() {
        let reg = RegressorModel::new(2, 3, 2, |_| {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 2.0])
        });
        let pi = DVector::from_row_slice(&[1.0, -1.0]);
        let x = Configuration::from_slice(&[0.1, 0.2, 0.3]).unwrap();
        let j = jacobian_from_parameters(&reg, &x, &pi).unwrap();
        assert!(j.as_matrix().norm() < 1e-9);
    }

    #[test]
    fn jacobian_prefers_analytic_derivative() {
        let reg = RegressorModel::new(1, 1, 1, |x| DMatrix::from_element(1, 1, x[0]))
            .with_analytic_dx(|_, pi| DMatrix::from_element(1, 1, pi[0]));
        let pi = DVector::from_row_slice(&[3.5]);
        let x = Configuration::from_slice(&[1.0]).unwrap();
        let j = jacobian_from_parameters(&reg, &x, &pi).unwrap();
        assert_eq!(j.as_matrix()[(0, 0)], 3.5);
    }

    #[test]
    fn cost_u_is_convex_along_segments() {
        let reg = RegressorModel::new(1, 1, 2, |x| DMatrix::from_row_slice(1, 2, &[x[0], 1.0]));
        let data = vec![obs(&[1.0], &[2.0]), obs(&[-0.4], &[1.0]), obs(&[2.2], &[0.1])];
        let p1 = DVector::from_row_slice(&[0.3, -1.2]);
        let p2 = DVector::from_row_slice(&[-2.0, 0.8]);
        let mid = (&p1 + &p2) * 0.5;
        let lhs = cost_u(&data, &mid, 1.0, &reg).unwrap();
        let rhs = 0.5 * cost_u(&data, &p1, 1.0, &reg).unwrap()
            + 0.5 * cost_u(&data, &p2, 1.0, &reg).unwrap();
        assert!(lhs <= rhs + 1e-12);
    }
}
