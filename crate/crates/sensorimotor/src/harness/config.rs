//! JSON experiment configuration with strict unknown-key rejection, and the
//! builders that turn a config into plants, gains, and targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::{feature_at, BeamPlant, CameraArmPlant, LinearPlant, Plant, ProbePlant};
use crate::types::{BoxDomain, Configuration, FeatureVector, GainSettings};

fn default_feature_tol() -> f64 {
    1e-3
}

fn default_max_steps() -> usize {
    400
}

fn default_lambda() -> f64 {
    0.5
}

fn default_damping() -> f64 {
    1e-8
}

fn default_dt() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_broyden_gain() -> f64 {
    1.0
}

fn default_fd_step() -> f64 {
    1e-5
}

/// Top-level experiment description consumed by the `servo` and `compare`
/// subcommands; `collect` and `train` use the plant, dataset, and estimator
/// sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub gains: GainsConfig,
    pub target: TargetConfig,
    #[serde(default = "default_feature_tol")]
    pub feature_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Default CSV output path; `--out` overrides it.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_tol <= 0.0 {
            return Err(Error::Config("feature_tol must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        self.target.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    CameraArm {
        #[serde(default)]
        noise_std: f64,
        /// Row-major 2x2 camera matrix; identity when omitted.
        #[serde(default)]
        camera: Option<[f64; 4]>,
        #[serde(default)]
        offset: Option<[f64; 2]>,
    },
    Beam {
        #[serde(default)]
        noise_std: f64,
    },
    Probe {
        #[serde(default)]
        noise_std: f64,
    },
    Linear {},
}

pub fn build_plant(config: &PlantConfig, seed: u64) -> Result<Box<dyn Plant>> {
    Ok(match config {
        PlantConfig::CameraArm {
            noise_std,
            camera,
            offset,
        } => {
            let cam = camera
                .map(|c| DMatrix::from_row_slice(2, 2, &c))
                .unwrap_or_else(|| DMatrix::identity(2, 2));
            let off = offset
                .map(|o| DVector::from_row_slice(&o))
                .unwrap_or_else(|| DVector::zeros(2));
            Box::new(CameraArmPlant::new(cam, off, *noise_std, seed)?)
        }
        PlantConfig::Beam { noise_std } => Box::new(BeamPlant::new(*noise_std, seed)?),
        PlantConfig::Probe { noise_std } => Box::new(ProbePlant::new(*noise_std, seed)?),
        PlantConfig::Linear {} => Box::new(LinearPlant::default_wide()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// Finite-difference ground truth queried at every step.
    Oracle {
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
    Broyden {
        #[serde(default = "default_broyden_gain")]
        gain: f64,
        #[serde(default = "default_true")]
        bootstrap: bool,
    },
    InstantGradient {
        /// Gradient gain; defaults to 1 / u_max^2 (the stability limit for
        /// the largest admissible command).
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "default_true")]
        bootstrap: bool,
    },
    Structured {
        /// Fitting gain; defaults to the dataset's stability limit.
        #[serde(default)]
        gamma: Option<f64>,
        /// Pre-fitted parameter file from `train`; fitted inline when absent.
        #[serde(default)]
        snapshot: Option<String>,
    },
    Distributed {
        #[serde(default)]
        placement: PlacementConfig,
        /// Per-axis anchor counts for grid placement.
        #[serde(default)]
        per_axis: Option<Vec<usize>>,
        /// Unit count for random / k-means placement.
        #[serde(default)]
        count: Option<usize>,
        /// Placement domain as [lo, hi] per axis; the dataset region or the
        /// workspace when omitted.
        #[serde(default)]
        domain: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        h_min: Option<f64>,
        /// Refine the winner unit online with the combined cost H = V + W.
        #[serde(default)]
        online: bool,
        /// Pre-trained network snapshot from `train`; trained inline when
        /// absent.
        #[serde(default)]
        snapshot: Option<String>,
    },
}

impl EstimatorConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EstimatorConfig::Oracle { .. } => "oracle",
            EstimatorConfig::Broyden { .. } => "broyden",
            EstimatorConfig::InstantGradient { .. } => "instant-gradient",
            EstimatorConfig::Structured { .. } => "structured",
            EstimatorConfig::Distributed { .. } => "distributed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementConfig {
    #[default]
    UniformGrid,
    Random,
    DataKmeans,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Saturation bound; defaults to 0.05 times the workspace scale.
    #[serde(default)]
    pub u_max: Option<f64>,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            u_max: None,
            damping: default_damping(),
            dt: default_dt(),
        }
    }
}

pub fn build_gains(config: &GainsConfig, plant: &dyn Plant) -> Result<GainSettings> {
    let u_max = config
        .u_max
        .unwrap_or_else(|| 0.05 * plant.spec().workspace.scale());
    GainSettings::new(config.lambda, u_max, config.damping, config.dt)
}

/// The servo target: either an explicit feature vector or the features of a
/// reference configuration (guaranteeing reachability on noiseless plants).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
    #[serde(default)]
    pub at_configuration: Option<Vec<f64>>,
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.feature, &self.at_configuration) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "target needs exactly one of 'feature' or 'at_configuration'".into(),
            )),
        }
    }

    pub fn resolve(&self, plant: &dyn Plant) -> Result<FeatureVector> {
        self.validate()?;
        if let Some(y) = &self.feature {
            return FeatureVector::from_slice(y);
        }
        let x = Configuration::from_slice(self.at_configuration.as_ref().unwrap())?;
        Ok(feature_at(plant, x.as_vector()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub policy: PolicyConfig,
    pub t: usize,
    pub amplitude: f64,
    /// Optional collection sub-box as [lo, hi] per axis; defaults to the
    /// plant workspace.
    #[serde(default)]
    pub region: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyConfig {
    RandomWalk,
    AxisProbes,
    GridSweep,
}

pub fn build_region(bounds: &Option<Vec<[f64; 2]>>, plant: &dyn Plant) -> Result<BoxDomain> {
    match bounds {
        Some(b) => {
            let pairs: Vec<(f64, f64)> = b.iter().map(|[lo, hi]| (*lo, *hi)).collect();
            let region = BoxDomain::from_bounds(&pairs)?;
            if region.dim() != plant.spec().n {
                return Err(Error::Config(format!(
                    "region has {} axes but the plant has {}",
                    region.dim(),
                    plant.spec().n
                )));
            }
            Ok(region)
        }
        None => Ok(plant.spec().workspace.clone()),
    }
}
