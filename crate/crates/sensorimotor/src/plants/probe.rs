//! Hand-held probe scanning a surface: image location of a feature of
//! interest, normal contact force through Hooke's law, and probe tilt read
//! through an affine transformation. All three channels are linearly
//! parametrisable, making this the structure-based case with n > m.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::Result;
use crate::structured::RegressorModel;
use crate::types::{BoxDomain, Configuration, FeatureVector};

use super::{Plant, PlantSpec, SensorReading};

/// n = 6 pose coordinates (px, py, z, t1, t2, yaw); m = 5 features
/// (mu in R^2, phi in R, omega in R^2). Yaw does not affect any feature,
/// leaving one redundant degree of freedom.
pub struct ProbePlant {
    spec: PlantSpec,
    image_map: Matrix2<f64>,
    image_offset: Vector2<f64>,
    stiffness: f64,
    contact_height: f64,
    tilt_scale: Vector2<f64>,
    tilt_offset: Vector2<f64>,
}

impl ProbePlant {
    pub fn new(noise_std: f64, seed: u64) -> Result<Self> {
        let x0 = Configuration::from_slice(&[0.1, -0.05, 0.05, 0.1, -0.1, 0.0])?;
        // z stays below the contact height so the probe never loses contact.
        let workspace = BoxDomain::from_bounds(&[
            (-0.3, 0.3),
            (-0.3, 0.3),
            (0.0, 0.45),
            (-0.4, 0.4),
            (-0.4, 0.4),
            (-0.5, 0.5),
        ])?;
        Ok(Self {
            spec: PlantSpec::new(6, 5, x0, workspace, noise_std, seed)?,
            image_map: Matrix2::new(1.2, 0.2, -0.15, 0.9),
            image_offset: Vector2::new(0.5, 0.4),
            stiffness: 4.0,
            contact_height: 0.5,
            tilt_scale: Vector2::new(1.1, 0.9),
            tilt_offset: Vector2::new(0.05, -0.02),
        })
    }

    /// Normal force under Hooke's law: zero above the contact height.
    fn force(&self, z: f64) -> f64 {
        self.stiffness * (self.contact_height - z).max(0.0)
    }
}

impl Plant for ProbePlant {
    fn name(&self) -> &'static str {
        "probe"
    }

    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn raw_sensor(&self, x: &DVector<f64>) -> SensorReading {
        let mu = self.image_map * Vector2::new(x[0], x[1]) + self.image_offset;
        let phi = self.force(x[2]);
        let omega = Vector2::new(
            self.tilt_scale[0] * x[3] + self.tilt_offset[0],
            self.tilt_scale[1] * x[4] + self.tilt_offset[1],
        );
        SensorReading::new(DVector::from_row_slice(&[mu[0], mu[1], phi, omega[0], omega[1]]))
            .expect("finite probe reading")
    }

    fn features(&self, s: &SensorReading) -> FeatureVector {
        // y = [mu, phi, omega]: the channels are already the features.
        FeatureVector::new(s.as_vector().clone()).expect("finite features")
    }

    fn regressor(&self) -> Result<RegressorModel> {
        // pi = [m11, m12, m21, m22, c1, c2, k, k*z0, s1, s2, o1, o2];
        // the force row is k*z0 - k*z, valid while the probe is in contact.
        let reg = RegressorModel::new(5, 6, 12, |x| {
            let (px, py, z, t1, t2) = (x[0], x[1], x[2], x[3], x[4]);
            DMatrix::from_row_slice(
                5,
                12,
                &[
                    px, py, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, px, py, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -z, 1.0, 0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, t1, 0.0, 1.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, t2, 0.0, 1.0,
                ],
            )
        })
        .with_analytic_dx(|_, pi| {
            DMatrix::from_row_slice(
                5,
                6,
                &[
                    pi[0], pi[1], 0.0, 0.0, 0.0, 0.0, //
                    pi[2], pi[3], 0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, -pi[6], 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, pi[8], 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, pi[9], 0.0,
                ],
            )
        });
        Ok(reg)
    }

    fn true_parameters(&self) -> Option<DVector<f64>> {
        Some(DVector::from_row_slice(&[
            self.image_map[(0, 0)],
            self.image_map[(0, 1)],
            self.image_map[(1, 0)],
            self.image_map[(1, 1)],
            self.image_offset[0],
            self.image_offset[1],
            self.stiffness,
            self.stiffness * self.contact_height,
            self.tilt_scale[0],
            self.tilt_scale[1],
            self.tilt_offset[0],
            self.tilt_offset[1],
        ]))
    }
}
