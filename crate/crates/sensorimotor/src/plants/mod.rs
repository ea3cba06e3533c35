//! Synthetic, fully known plants realising a configuration-dependent sensor
//! model y = f(g(x)): a planar arm behind an uncalibrated camera, an elastic
//! beam, a multi-modal probe, and an exactly linear diagnostic plant. Each
//! plant exposes observe/features/step plus a finite-difference Jacobian
//! oracle.

use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::structured::RegressorModel;
use crate::types::{BoxDomain, Configuration, FeatureVector, JacobianEstimate, MotorCommand};

mod beam;
mod camera_arm;
mod linear;
mod probe;

pub use beam::BeamPlant;
pub use camera_arm::CameraArmPlant;
pub use linear::LinearPlant;
pub use probe::ProbePlant;

/// Static description of a plant: dimensions, start pose, workspace, noise.
#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub n: usize,
    pub m: usize,
    pub x0: Configuration,
    pub workspace: BoxDomain,
    /// Standard deviation of additive Gaussian feature noise; 0 disables it.
    pub noise_std: f64,
    pub seed: u64,
}

impl PlantSpec {
    pub fn new(
        n: usize,
        m: usize,
        x0: Configuration,
        workspace: BoxDomain,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if x0.dim() != n || workspace.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "plant spec",
                expected: n,
                actual: x0.dim(),
            });
        }
        if !workspace.contains(x0.as_vector()) {
            return Err(Error::InvalidInput(
                "initial configuration outside the workspace".into(),
            ));
        }
        if noise_std < 0.0 || !noise_std.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise_std must be >= 0, got {noise_std}"
            )));
        }
        Ok(Self {
            n,
            m,
            x0,
            workspace,
            noise_std,
            seed,
        })
    }
}

/// Concatenated raw sensor signals s = [s^1, ..., s^r].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading(DVector<f64>);

impl SensorReading {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sensor reading"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// A simulated system with a static, configuration-dependent sensor model.
pub trait Plant {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &PlantSpec;

    /// The noise-free sensor model g(x); does not check the workspace.
    fn raw_sensor(&self, x: &DVector<f64>) -> SensorReading;

    /// The feature functional f(s).
    fn features(&self, s: &SensorReading) -> FeatureVector;

    /// The linear parametrisation of the plant's model, when one exists.
    fn regressor(&self) -> Result<RegressorModel> {
        Err(Error::UnsupportedStructure { plant: self.name() })
    }

    /// The true parameter vector behind [`Plant::regressor`], when one exists.
    fn true_parameters(&self) -> Option<DVector<f64>> {
        None
    }
}

fn noise_rng(spec: &PlantSpec, x: &DVector<f64>) -> ChaCha8Rng {
    // Noise is a pure function of (seed, x) so repeated observations of the
    // same configuration are bit-identical.
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    spec.seed.hash(&mut hasher);
    for v in x.iter() {
        v.to_bits().hash(&mut hasher);
    }
    ChaCha8Rng::seed_from_u64(hasher.finish())
}

/// The sensor reading at `x`, with seeded Gaussian noise when enabled.
pub fn observe(plant: &dyn Plant, x: &Configuration) -> Result<SensorReading> {
    let spec = plant.spec();
    if !spec.workspace.contains(x.as_vector()) {
        return Err(Error::OutOfWorkspace);
    }
    let mut reading = plant.raw_sensor(x.as_vector());
    if spec.noise_std > 0.0 {
        let mut rng = noise_rng(spec, x.as_vector());
        let dist = Normal::new(0.0, spec.noise_std).expect("valid noise std");
        for v in reading.0.iter_mut() {
            *v += dist.sample(&mut rng);
        }
    }
    Ok(reading)
}

/// Noise-free feature vector at `x`, without a workspace check. Used by the
/// Jacobian oracles and the rest-pose invariants.
pub fn feature_at(plant: &dyn Plant, x: &DVector<f64>) -> FeatureVector {
    plant.features(&plant.raw_sensor(x))
}

/// Result of one control step: the configuration after clamping, its sensor
/// reading and features, and whether the workspace boundary was hit.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x: Configuration,
    pub sensor: SensorReading,
    pub features: FeatureVector,
    pub clamped: bool,
}

/// Applies the command, clamping to the workspace boundary instead of
/// failing, and returns the resulting observation.
pub fn step(plant: &dyn Plant, x: &Configuration, u: &MotorCommand) -> Result<StepOutcome> {
    if x.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            context: "plant step",
            expected: x.dim(),
            actual: u.dim(),
        });
    }
    let target = x.as_vector() + u.as_vector();
    let (clamped_x, clamped) = plant.spec().workspace.clamp(&target);
    let x_next = Configuration::new(clamped_x)?;
    let sensor = observe(plant, &x_next)?;
    let features = plant.features(&sensor);
    Ok(StepOutcome {
        x: x_next,
        sensor,
        features,
        clamped,
    })
}

fn fd_probe(plant: &dyn Plant, x: &DVector<f64>, h: f64) -> Option<DMatrix<f64>> {
    let spec = plant.spec();
    let (m, n) = (spec.m, spec.n);
    let mut jac = DMatrix::zeros(m, n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        if !spec.workspace.contains(&xp) || !spec.workspace.contains(&xm) {
            return None;
        }
        let col = (feature_at(plant, &xp).into_vector() - feature_at(plant, &xm).into_vector())
            / (2.0 * h);
        jac.set_column(i, &col);
    }
    Some(jac)
}

/// Central-difference Jacobian oracle, noise-free. If a probe leaves the
/// workspace the step is shrunk once by a factor of ten, then the call fails.
pub fn finite_difference_jacobian(
    plant: &dyn Plant,
    x: &Configuration,
    h: f64,
) -> Result<JacobianEstimate> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step h must be > 0, got {h}")));
    }
    if let Some(jac) = fd_probe(plant, x.as_vector(), h) {
        return JacobianEstimate::new(jac);
    }
    if let Some(jac) = fd_probe(plant, x.as_vector(), h / 10.0) {
        return JacobianEstimate::new(jac);
    }
    Err(Error::OutOfWorkspace)
}
