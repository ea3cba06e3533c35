//! Elastic beam manipulated by its grasp pose. A pseudo-rigid-body closed
//! form maps the grasp to the backbone's curvature and bend angle; the raw
//! sensor emits sampled backbone points from which the features are
//! recovered, mimicking a 3D camera looking at the deformed object.
//!
//! The deformation map is deliberately nonlinear and has no linear
//! parametrisation, so this plant exercises the structure-free estimators.

use nalgebra::{DVector, Vector2};

use crate::error::Result;
use crate::types::{BoxDomain, Configuration, FeatureVector};

use super::{Plant, PlantSpec, SensorReading};

/// Number of sampled backbone points in the raw sensor reading.
const BACKBONE_SAMPLES: usize = 9;

/// Curvature threshold below which the arc degenerates to a straight line.
const STRAIGHT_EPS: f64 = 1e-9;

/// n = 4 grasp coordinates (px, py, pz, psi), m = 2 features (kappa, theta).
pub struct BeamPlant {
    spec: PlantSpec,
    c1: f64,
    c2: f64,
    c3: f64,
}

impl BeamPlant {
    pub fn new(noise_std: f64, seed: u64) -> Result<Self> {
        let x0 = Configuration::from_slice(&[0.6, 0.6, 0.0, 0.0])?;
        let workspace = BoxDomain::from_bounds(&[
            (0.05, 1.2),
            (0.05, 1.2),
            (-0.6, 0.6),
            (-0.7, 0.7),
        ])?;
        Ok(Self {
            spec: PlantSpec::new(4, 2, x0, workspace, noise_std, seed)?,
            c1: 2.0,
            c2: 0.3,
            c3: 0.5,
        })
    }

    /// The grasp pose at which the beam is undeformed.
    pub fn rest_pose() -> DVector<f64> {
        DVector::zeros(4)
    }

    /// Closed-form deformation map: curvature and bend angle of the backbone.
    pub fn deformation(&self, x: &DVector<f64>) -> (f64, f64) {
        let planar = Vector2::new(x[0], x[1]);
        let psi = x[3];
        let kappa = self.c1 * planar.norm() * (1.0 + self.c2 * psi.sin().powi(2));
        let theta = x[1].atan2(x[0]) + self.c3 * psi;
        (kappa, theta)
    }
}

/// A point on a unit-length circular arc of curvature `kappa` starting at the
/// origin with initial tangent angle `theta`, at arclength `s`.
fn arc_point(kappa: f64, theta: f64, s: f64) -> Vector2<f64> {
    if kappa.abs() < STRAIGHT_EPS {
        Vector2::new(s * theta.cos(), s * theta.sin())
    } else {
        Vector2::new(
            ((theta + kappa * s).sin() - theta.sin()) / kappa,
            (-(theta + kappa * s).cos() + theta.cos()) / kappa,
        )
    }
}

/// Unsigned curvature of the circle through three points; zero when they are
/// collinear. Exact for points sampled from a true arc.
fn three_point_curvature(p0: Vector2<f64>, p1: Vector2<f64>, p2: Vector2<f64>) -> f64 {
    let a = p1 - p0;
    let b = p2 - p0;
    let c = p2 - p1;
    let cross = (a.x * b.y - a.y * b.x).abs();
    let denom = a.norm() * b.norm() * c.norm();
    if denom < 1e-30 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

impl Plant for BeamPlant {
    fn name(&self) -> &'static str {
        "beam"
    }

    fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    fn raw_sensor(&self, x: &DVector<f64>) -> SensorReading {
        let (kappa, theta) = self.deformation(x);
        let mut values = DVector::zeros(2 * BACKBONE_SAMPLES);
        for k in 0..BACKBONE_SAMPLES {
            let s = k as f64 / (BACKBONE_SAMPLES - 1) as f64;
            let p = arc_point(kappa, theta, s);
            values[2 * k] = p.x;
            values[2 * k + 1] = p.y;
        }
        SensorReading::new(values).expect("finite backbone")
    }

    fn features(&self, s: &SensorReading) -> FeatureVector {
        // Recover (kappa, theta) from the first, middle, and last backbone
        // points. Both recoveries are exact on a noise-free arc.
        let v = s.as_vector();
        let mid = BACKBONE_SAMPLES / 2;
        let last = BACKBONE_SAMPLES - 1;
        let p0 = Vector2::new(v[0], v[1]);
        let pm = Vector2::new(v[2 * mid], v[2 * mid + 1]);
        let pe = Vector2::new(v[2 * last], v[2 * last + 1]);
        let kappa = three_point_curvature(p0, pm, pe);
        let chord = pe - p0;
        let theta = if chord.norm() < 1e-30 {
            0.0
        } else {
            // The chord of a unit-length arc bisects the tangent sweep.
            chord.y.atan2(chord.x) - 0.5 * kappa
        };
        FeatureVector::from_slice(&[kappa, theta]).expect("finite features")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{feature_at, finite_difference_jacobian};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rest_pose_is_straight_with_zero_features() {
        let plant = BeamPlant::new(0.0, 0).unwrap();
        let s = plant.raw_sensor(&BeamPlant::rest_pose());
        // All sampled points lie on the x axis.
        for k in 0..BACKBONE_SAMPLES {
            assert_eq!(s.as_vector()[2 * k + 1], 0.0);
        }
        let y = feature_at(&plant, &BeamPlant::rest_pose());
        assert_eq!(y.as_vector()[0], 0.0);
        assert_eq!(y.as_vector()[1], 0.0);
    }

    #[test]
    fn feature_extraction_inverts_the_deformation_map() {
        let plant = BeamPlant::new(0.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = DVector::from_row_slice(&[
                rng.gen_range(0.05..1.2),
                rng.gen_range(0.05..1.2),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.7..0.7),
            ]);
            let (kappa, theta) = plant.deformation(&x);
            let y = feature_at(&plant, &x);
            assert!((y.as_vector()[0] - kappa).abs() < 1e-9, "kappa mismatch");
            assert!((y.as_vector()[1] - theta).abs() < 1e-9, "theta mismatch");
        }
    }

    #[test]
    fn curvature_is_nonnegative_over_the_workspace() {
        let plant = BeamPlant::new(0.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = DVector::from_row_slice(&[
                rng.gen_range(0.05..1.2),
                rng.gen_range(0.05..1.2),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.7..0.7),
            ]);
            assert!(feature_at(&plant, &x).as_vector()[0] >= 0.0);
        }
    }

    #[test]
    fn fd_jacobian_converges_at_second_order() {
        let plant = BeamPlant::new(0.0, 0).unwrap();
        let x = Configuration::from_slice(&[0.5, 0.7, 0.1, 0.2]).unwrap();
        let j1 = finite_difference_jacobian(&plant, &x, 1e-3).unwrap();
        let j2 = finite_difference_jacobian(&plant, &x, 5e-4).unwrap();
        let j_ref = finite_difference_jacobian(&plant, &x, 1e-6).unwrap();
        let e1 = (j1.as_matrix() - j_ref.as_matrix()).norm();
        let e2 = (j2.as_matrix() - j_ref.as_matrix()).norm();
        // Halving h should shrink the error by about four.
        assert!(e2 < e1 / 2.5);
    }

    #[test]
    fn regressor_is_unsupported() {
        let plant = BeamPlant::new(0.0, 0).unwrap();
        assert!(plant.regressor().is_err());
    }
}
