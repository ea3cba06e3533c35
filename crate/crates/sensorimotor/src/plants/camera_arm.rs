//! Planar three-link arm observed by an uncalibrated affine camera. The
//! kinematics are known; the 2x2 camera matrix and pixel offset are the
//! unknown parameters, making this the canonical structure-based scenario.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::structured::RegressorModel;
use crate::types::{BoxDomain, Configuration, FeatureVector};

use super::{Plant, PlantSpec, SensorReading};

/// n = 3 joint angles, m = 2 pixel coordinates, unit link lengths.
pub struct CameraArmPlant {
    spec: PlantSpec,
    camera: DMatrix<f64>,
    offset: DVector<f64>,
}

/// End-effector position of the planar 3-link arm with unit links.
pub fn arm_position(q: &DVector<f64>) -> DVector<f64> {
    let (a, b, c) = (q[0], q[0] + q[1], q[0] + q[1] + q[2]);
    DVector::from_row_slice(&[
        a.cos() + b.cos() + c.cos(),
        a.sin() + b.sin() + c.sin(),
    ])
}

/// Analytic kinematic Jacobian of [`arm_position`].
pub fn arm_jacobian(q: &DVector<f64>) -> DMatrix<f64> {
    let (a, b, c) = (q[0], q[0] + q[1], q[0] + q[1] + q[2]);
    let (sa, sb, sc) = (a.sin(), b.sin(), c.sin());
    let (ca, cb, cc) = (a.cos(), b.cos(), c.cos());
    DMatrix::from_row_slice(
        2,
        3,
        &[
            -(sa + sb + sc),
            -(sb + sc),
            -sc,
            ca + cb + cc,
            cb + cc,
            cc,
        ],
    )
}

impl CameraArmPlant {
    pub fn new(
        camera: DMatrix<f64>,
        offset: DVector<f64>,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        assert_eq!((camera.nrows(), camera.ncols()), (2, 2));
        assert_eq!(offset.len(), 2);
        let x0 = Configuration::from_slice(&[0.4, 0.6, -0.3])?;
        let workspace =
            BoxDomain::from_bounds(&[(-2.5, 2.5), (-2.5, 2.5), (-2.5, 2.5)])?;
        Ok(Self {
            spec: PlantSpec::new(3, 2, x0, workspace, noise_std, seed)?,
            camera,
            offset,
        })
    }

    /// Identity camera with zero offset: pixels equal arm coordinates.
    pub fn identity_camera() -> Self {
        Self::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0, 0).expect("valid defaults")
    }

    /// The true camera composed with the arm kinematics: P * J_arm(x).
    pub fn analytic_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.camera * arm_jacobian(x)
    }
}

impl Plant for CameraArmPlant {
    fn name(&self) -> &'static str {
        "camera-arm"
    }

    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn raw_sensor(&self, x: &DVector<f64>) -> SensorReading {
        let pixel = &self.camera * arm_position(x) + &self.offset;
        SensorReading::new(pixel).expect("finite pixel")
    }

    fn features(&self, s: &SensorReading) -> FeatureVector {
        // Identity feature map: pixels are the features.
        FeatureVector::new(s.as_vector().clone()).expect("finite features")
    }

    fn regressor(&self) -> Result<RegressorModel> {
        // y = P c(x) + b with pi = [p11, p12, p21, p22, b1, b2].
        let reg = RegressorModel::new(2, 3, 6, |x| {
            let c = arm_position(x);
            DMatrix::from_row_slice(
                2,
                6,
                &[
                    c[0], c[1], 0.0, 0.0, 1.0, 0.0, //
                    0.0, 0.0, c[0], c[1], 0.0, 1.0,
                ],
            )
        })
        .with_analytic_dx(|x, pi| {
            let p_hat = DMatrix::from_row_slice(2, 2, &[pi[0], pi[1], pi[2], pi[3]]);
            p_hat * arm_jacobian(x)
        });
        Ok(reg)
    }

    fn true_parameters(&self) -> Option<DVector<f64>> {
        Some(DVector::from_row_slice(&[
            self.camera[(0, 0)],
            self.camera[(0, 1)],
            self.camera[(1, 0)],
            self.camera[(1, 1)],
            self.offset[0],
            self.offset[1],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{feature_at, finite_difference_jacobian};

    #[test]
    fn stretched_arm_maps_to_three_zero() {
        let plant = CameraArmPlant::identity_camera();
        let y = feature_at(&plant, &DVector::zeros(3));
        assert!((y.as_vector() - DVector::from_row_slice(&[3.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn fd_jacobian_matches_analytic_kinematics() {
        let camera = DMatrix::from_row_slice(2, 2, &[1.3, -0.2, 0.4, 0.9]);
        let plant = CameraArmPlant::new(camera, DVector::from_row_slice(&[0.1, -0.5]), 0.0, 0)
            .unwrap();
        for q in [
            DVector::zeros(3),
            DVector::from_row_slice(&[0.4, -0.7, 1.1]),
            DVector::from_row_slice(&[1.2, 0.3, -0.5]),
        ] {
            let x = Configuration::new(q.clone()).unwrap();
            let fd = finite_difference_jacobian(&plant, &x, 1e-5).unwrap();
            let analytic = plant.analytic_jacobian(&q);
            assert!((fd.as_matrix() - analytic).norm() < 1e-6);
        }
    }

    #[test]
    fn regressor_is_consistent_with_the_sensor_model() {
        let camera = DMatrix::from_row_slice(2, 2, &[1.3, -0.2, 0.4, 0.9]);
        let plant =
            CameraArmPlant::new(camera, DVector::from_row_slice(&[0.1, -0.5]), 0.0, 0).unwrap();
        let reg = plant.regressor().unwrap();
        let pi = plant.true_parameters().unwrap();
        for q in [
            DVector::from_row_slice(&[0.2, 0.5, -0.1]),
            DVector::from_row_slice(&[-0.9, 1.4, 0.8]),
        ] {
            let predicted = reg.predict(&q, &pi);
            let actual = feature_at(&plant, &q);
            assert!((predicted - actual.as_vector()).norm() < 1e-13);
        }
    }

    #[test]
    fn analytic_regressor_dx_matches_plant_jacobian() {
        let camera = DMatrix::from_row_slice(2, 2, &[1.3, -0.2, 0.4, 0.9]);
        let plant =
            CameraArmPlant::new(camera, DVector::from_row_slice(&[0.1, -0.5]), 0.0, 0).unwrap();
        let reg = plant.regressor().unwrap();
        let pi = plant.true_parameters().unwrap();
        let q = DVector::from_row_slice(&[0.3, -0.4, 0.9]);
        let x = Configuration::new(q.clone()).unwrap();
        let from_params =
            crate::structured::jacobian_from_parameters(&reg, &x, &pi).unwrap();
        let fd = finite_difference_jacobian(&plant, &x, 1e-5).unwrap();
        assert!((from_params.as_matrix() - fd.as_matrix()).norm() < 1e-4);
    }
}
