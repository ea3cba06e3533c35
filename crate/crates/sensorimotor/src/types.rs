//! Domain types shared by every module: configurations, commands, features,
//! Jacobian estimates, gains, and axis-aligned box domains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn check_finite(values: impl Iterator<Item = f64>, what: &'static str) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
    }
    Ok(())
}

macro_rules! vector_newtype {
    ($(#[$doc:meta])* $name:ident, $what:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn new(v: DVector<f64>) -> Result<Self> {
                check_finite(v.iter().copied(), $what)?;
                Ok(Self(v))
            }

            pub fn from_slice(v: &[f64]) -> Result<Self> {
                Self::new(DVector::from_row_slice(v))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(DVector::zeros(dim))
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_vector(self) -> DVector<f64> {
                self.0
            }
        }
    };
}

vector_newtype!(
    /// The robot configuration vector x_t (radians and/or meters per axis).
    Configuration,
    "configuration"
);
vector_newtype!(
    /// A differential displacement command u_t, same units as the configuration.
    MotorCommand,
    "motor command"
);
vector_newtype!(
    /// The task feature vector y_t derived from raw sensor readings.
    FeatureVector,
    "feature vector"
);

/// An m-by-n estimate of the sensorimotor Jacobian A_t.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate(DMatrix<f64>);

impl JacobianEstimate {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_finite(matrix.iter().copied(), "jacobian estimate")?;
        Ok(Self(matrix))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(DMatrix::zeros(m, n))
    }

    /// Feature dimension m (rows).
    pub fn feature_dim(&self) -> usize {
        self.0.nrows()
    }

    /// Configuration dimension n (columns).
    pub fn config_dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Servo-law gains: feedback gain, saturation bound, damping, and servo period.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSettings {
    /// Feedback gain lambda, strictly positive.
    pub lambda: f64,
    /// Saturation bound applied to the error and to the final command.
    pub u_max: f64,
    /// Tikhonov damping added inside the inverted Gram matrix.
    pub damping: f64,
    /// Servo period in seconds, used only for velocity conversion.
    pub dt: f64,
}

impl GainSettings {
    pub fn new(lambda: f64, u_max: f64, damping: f64, dt: f64) -> Result<Self> {
        check_finite([lambda, u_max, damping, dt].into_iter(), "gain settings")?;
        if lambda <= 0.0 {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
        }
        if u_max <= 0.0 {
            return Err(Error::InvalidInput(format!("u_max must be > 0, got {u_max}")));
        }
        if damping < 0.0 {
            return Err(Error::InvalidInput(format!("damping must be >= 0, got {damping}")));
        }
        if dt <= 0.0 {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self {
            lambda,
            u_max,
            damping,
            dt,
        })
    }
}

/// An axis-aligned box, used for plant workspaces and unit placement domains.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "box domain bounds",
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        check_finite(lo.iter().chain(hi.iter()).copied(), "box domain")?;
        if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
            return Err(Error::InvalidInput("box domain has lo > hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let lo = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0));
        let hi = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1));
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Clamps `x` to the box; the flag reports whether any axis was clipped.
    pub fn clamp(&self, x: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut clamped = x.clone();
        let mut clipped = false;
        for i in 0..self.dim() {
            if clamped[i] < self.lo[i] {
                clamped[i] = self.lo[i];
                clipped = true;
            } else if clamped[i] > self.hi[i] {
                clamped[i] = self.hi[i];
                clipped = true;
            }
        }
        (clamped, clipped)
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn extent(&self) -> DVector<f64> {
        &self.hi - &self.lo
    }

    /// Scale of the box: the Euclidean norm of its extent.
    pub fn scale(&self) -> f64 {
        self.extent().norm()
    }
}
