//! Command-line entry point: `collect`, `train`, `servo`, and `compare`
//! subcommands over a JSON experiment configuration. Exit codes: 0 on
//! success, 1 on usage errors, 2 on runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::distributed::{
    allocate_units, load_snapshot, save_snapshot, train_network, PlacementStrategy, UnitNetwork,
};
use crate::error::{Error, Result};
use crate::instant::BroydenGain;
use crate::plants::Plant;
use crate::structured::{fit, stable_gamma, FitSchedule, ParameterVector};
use crate::types::{GainSettings, JacobianEstimate};

use super::config::{
    build_gains, build_plant, build_region, DatasetConfig, EstimatorConfig, ExperimentConfig,
    PlacementConfig, PolicyConfig,
};
use super::csv_log::save_csv;
use super::dataset::{collect_dataset, save_dataset, Dataset, ExcitationPolicy};
use super::episode::{run_servo_episode, Estimator, TrajectoryLog};

#[derive(Parser)]
#[command(
    name = "sensorimotor",
    about = "Adaptive sensorimotor control experiments on synthetic plants",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an excitation dataset and write it as JSON.
    Collect {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured estimator offline and write its snapshot.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output snapshot path (parameters or unit network).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one closed-loop servo episode and log the trajectory as CSV.
    Servo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output path; falls back to the configuration's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every applicable estimator on the same scenario and print a
    /// convergence table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ExperimentConfig::from_json(&text)
}

fn dataset_config(cfg: &ExperimentConfig) -> Result<&DatasetConfig> {
    cfg.dataset.as_ref().ok_or_else(|| {
        Error::Config("this operation needs a 'dataset' section in the configuration".into())
    })
}

fn policy_of(cfg: &PolicyConfig) -> ExcitationPolicy {
    match cfg {
        PolicyConfig::RandomWalk => ExcitationPolicy::RandomWalk,
        PolicyConfig::AxisProbes => ExcitationPolicy::AxisProbes,
        PolicyConfig::GridSweep => ExcitationPolicy::GridSweep,
    }
}

fn collect_for(cfg: &ExperimentConfig, plant: &dyn Plant, seed: u64) -> Result<Dataset> {
    let ds = dataset_config(cfg)?;
    let region = build_region(&ds.region, plant)?;
    collect_dataset(plant, &policy_of(&ds.policy), ds.t, ds.amplitude, &region, seed)
}

/// On-disk format of fitted structured parameters.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParameterFile {
    pi: Vec<f64>,
}

fn save_parameters(pi: &ParameterVector, path: &Path) -> Result<()> {
    let file = ParameterFile {
        pi: pi.iter().copied().collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_parameters(path: &Path) -> Result<ParameterVector> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: ParameterFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(DVector::from_row_slice(&file.pi))
}

fn fit_parameters(
    cfg: &ExperimentConfig,
    plant: &dyn Plant,
    gamma: Option<f64>,
    seed: u64,
) -> Result<ParameterVector> {
    let reg = plant.regressor()?;
    let data = collect_for(cfg, plant, seed)?.observations_yx()?;
    let gamma = match gamma {
        Some(g) => g,
        None => stable_gamma(&data, &reg)?,
    };
    let schedule = FitSchedule::with_gamma(gamma)?;
    fit(&data, &DVector::zeros(reg.param_dim()), &schedule, &reg)
}

fn placement_of(
    placement: &PlacementConfig,
    per_axis: &Option<Vec<usize>>,
    count: &Option<usize>,
    n: usize,
) -> PlacementStrategy {
    match placement {
        PlacementConfig::UniformGrid => PlacementStrategy::UniformGrid {
            per_axis: per_axis.clone().unwrap_or_else(|| vec![3; n]),
        },
        PlacementConfig::Random => PlacementStrategy::Random {
            count: count.unwrap_or(8),
        },
        PlacementConfig::DataKmeans => PlacementStrategy::DataKmeans {
            count: count.unwrap_or(8),
        },
    }
}

/// Iteration schedule for offline unit training.
fn unit_schedule() -> FitSchedule {
    FitSchedule::new(1.0, 20_000, 1e-10).expect("valid schedule")
}

struct DistributedSettings<'a> {
    placement: &'a PlacementConfig,
    per_axis: &'a Option<Vec<usize>>,
    count: &'a Option<usize>,
    domain: &'a Option<Vec<[f64; 2]>>,
    sigma: Option<f64>,
    h_min: Option<f64>,
}

fn train_distributed(
    cfg: &ExperimentConfig,
    plant: &dyn Plant,
    settings: &DistributedSettings,
    seed: u64,
) -> Result<(UnitNetwork, Dataset)> {
    let dataset = collect_for(cfg, plant, seed)?;
    let domain = match settings.domain {
        Some(_) => build_region(settings.domain, plant)?,
        None => build_region(&dataset_config(cfg)?.region, plant)?,
    };
    let strategy = placement_of(
        settings.placement,
        settings.per_axis,
        settings.count,
        plant.spec().n,
    );
    let network = allocate_units(
        &strategy,
        &domain,
        &dataset.configurations(),
        plant.spec().m,
        seed,
        settings.sigma,
        settings.h_min,
    )?;
    let observations = dataset.observations_du()?;
    let (trained, _report) = train_network(&network, &observations, None, &unit_schedule())?;
    Ok((trained, dataset))
}

/// Builds a servo-ready estimator from its configuration, training offline
/// from the configured dataset where needed.
pub fn build_estimator(
    cfg: &ExperimentConfig,
    est_cfg: &EstimatorConfig,
    plant: &dyn Plant,
    gains: &GainSettings,
    seed: u64,
) -> Result<Estimator> {
    let spec = plant.spec();
    Ok(match est_cfg {
        EstimatorConfig::Oracle { fd_step } => Estimator::Oracle { fd_step: *fd_step },
        EstimatorConfig::Broyden { gain, bootstrap } => Estimator::Broyden {
            jacobian: JacobianEstimate::zeros(spec.m, spec.n),
            gain: BroydenGain::new(*gain)?,
            bootstrap: *bootstrap,
        },
        EstimatorConfig::InstantGradient { gamma, bootstrap } => Estimator::InstantGradient {
            jacobian: JacobianEstimate::zeros(spec.m, spec.n),
            gamma: gamma.unwrap_or(1.0 / (gains.u_max * gains.u_max)),
            bootstrap: *bootstrap,
        },
        EstimatorConfig::Structured { gamma, snapshot } => {
            let regressor = plant.regressor()?;
            let parameters = match snapshot {
                Some(path) => load_parameters(Path::new(path))?,
                None => fit_parameters(cfg, plant, *gamma, seed)?,
            };
            if parameters.len() != regressor.param_dim() {
                return Err(Error::DimensionMismatch {
                    context: "structured parameter snapshot",
                    expected: regressor.param_dim(),
                    actual: parameters.len(),
                });
            }
            Estimator::Structured {
                regressor,
                parameters,
            }
        }
        EstimatorConfig::Distributed {
            placement,
            per_axis,
            count,
            domain,
            sigma,
            h_min,
            online,
            snapshot,
        } => {
            let (network, history) = match snapshot {
                Some(path) => (load_snapshot(Path::new(path))?, Vec::new()),
                None => {
                    let settings = DistributedSettings {
                        placement,
                        per_axis,
                        count,
                        domain,
                        sigma: *sigma,
                        h_min: *h_min,
                    };
                    let (network, dataset) = train_distributed(cfg, plant, &settings, seed)?;
                    (network, dataset.observations_du()?)
                }
            };
            if network.config_dim() != spec.n || network.feature_dim() != spec.m {
                return Err(Error::Config(
                    "unit network dimensions do not match the plant".into(),
                ));
            }
            Estimator::Distributed {
                network,
                history,
                online: *online,
            }
        }
    })
}

fn summary_line(id: &str, log: &TrajectoryLog) -> String {
    format!(
        "{id} {} steps={} err={}",
        log.status.as_str(),
        log.steps(),
        log.final_error()
    )
}

fn run_servo(
    cfg: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<String> {
    let plant = build_plant(&cfg.plant, seed)?;
    let gains = build_gains(&cfg.gains, plant.as_ref())?;
    let y_star = cfg.target.resolve(plant.as_ref())?;
    let mut estimator = build_estimator(cfg, &cfg.estimator, plant.as_ref(), &gains, seed)?;
    let log = run_servo_episode(
        plant.as_ref(),
        &mut estimator,
        &gains,
        &y_star,
        cfg.feature_tol,
        cfg.max_steps,
    )?;
    let csv_path = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.as_ref().map(PathBuf::from));
    if let Some(path) = csv_path {
        save_csv(&log, &path)?;
    }
    Ok(summary_line(cfg.estimator.id(), &log))
}

/// The estimator line-up for `compare`: the configured estimator's settings
/// where the kind matches, library defaults otherwise.
fn compare_lineup(cfg: &ExperimentConfig, plant: &dyn Plant) -> Vec<EstimatorConfig> {
    let defaults = [
        EstimatorConfig::Oracle { fd_step: 1e-5 },
        EstimatorConfig::Broyden {
            gain: 1.0,
            bootstrap: true,
        },
        EstimatorConfig::InstantGradient {
            gamma: None,
            bootstrap: true,
        },
        EstimatorConfig::Structured {
            gamma: None,
            snapshot: None,
        },
        EstimatorConfig::Distributed {
            placement: PlacementConfig::UniformGrid,
            per_axis: None,
            count: None,
            domain: None,
            sigma: None,
            h_min: None,
            online: false,
            snapshot: None,
        },
    ];
    defaults
        .into_iter()
        .filter(|d| match d {
            EstimatorConfig::Structured { .. } => {
                plant.regressor().is_ok() && cfg.dataset.is_some()
            }
            EstimatorConfig::Distributed { .. } => cfg.dataset.is_some(),
            _ => true,
        })
        .map(|d| {
            if cfg.estimator.id() == d.id() {
                cfg.estimator.clone()
            } else {
                d
            }
        })
        .collect()
}

fn run_compare(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    let probe_plant = build_plant(&cfg.plant, seed)?;
    let mut lines = vec!["estimator,status,steps,final_err".to_string()];
    for est_cfg in compare_lineup(cfg, probe_plant.as_ref()) {
        let plant = build_plant(&cfg.plant, seed)?;
        let gains = build_gains(&cfg.gains, plant.as_ref())?;
        let y_star = cfg.target.resolve(plant.as_ref())?;
        let line = match build_estimator(cfg, &est_cfg, plant.as_ref(), &gains, seed).and_then(
            |mut estimator| {
                run_servo_episode(
                    plant.as_ref(),
                    &mut estimator,
                    &gains,
                    &y_star,
                    cfg.feature_tol,
                    cfg.max_steps,
                )
            },
        ) {
            Ok(log) => format!(
                "{},{},{},{}",
                est_cfg.id(),
                log.status.as_str(),
                log.steps(),
                log.final_error()
            ),
            Err(e) => format!("{},error,0,{e}", est_cfg.id()),
        };
        lines.push(line);
    }
    Ok(lines.join("\n"))
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Collect { config, seed, out } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let plant = build_plant(&cfg.plant, seed)?;
            let dataset = collect_for(&cfg, plant.as_ref(), seed)?;
            save_dataset(&dataset, &out)?;
            Ok(format!(
                "collected {} records ({} -> {}) at {}",
                dataset.records.len(),
                dataset.n,
                dataset.m,
                out.display()
            ))
        }
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let plant = build_plant(&cfg.plant, seed)?;
            match &cfg.estimator {
                EstimatorConfig::Structured { gamma, .. } => {
                    let pi = fit_parameters(&cfg, plant.as_ref(), *gamma, seed)?;
                    save_parameters(&pi, &out)?;
                    Ok(format!(
                        "fitted {} parameters at {}",
                        pi.len(),
                        out.display()
                    ))
                }
                EstimatorConfig::Distributed {
                    placement,
                    per_axis,
                    count,
                    domain,
                    sigma,
                    h_min,
                    ..
                } => {
                    let settings = DistributedSettings {
                        placement,
                        per_axis,
                        count,
                        domain,
                        sigma: *sigma,
                        h_min: *h_min,
                    };
                    let (network, _) = train_distributed(&cfg, plant.as_ref(), &settings, seed)?;
                    save_snapshot(&network, &out)?;
                    Ok(format!(
                        "trained {} units at {}",
                        network.len(),
                        out.display()
                    ))
                }
                other => Err(Error::Config(format!(
                    "estimator '{}' has nothing to train offline",
                    other.id()
                ))),
            }
        }
        Command::Servo { config, seed, out } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            run_servo(&cfg, seed, out.as_deref())
        }
        Command::Compare { config, seed, out } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let table = run_compare(&cfg, seed)?;
            if let Some(path) = out {
                std::fs::write(&path, format!("{table}\n"))
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(table)
        }
    }
}

/// Parses `args` (including the program name) and executes the requested
/// subcommand. Returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
