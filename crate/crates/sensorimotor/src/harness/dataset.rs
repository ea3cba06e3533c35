//! Seeded excitation policies producing the observation sets consumed by the
//! estimators, plus a JSON on-disk format for collected datasets.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributed::LocalizedObservation;
use crate::error::{Error, Result};
use crate::instant::ObservationDU;
use crate::plants::{observe, step, Plant};
use crate::structured::ObservationYX;
use crate::types::{BoxDomain, Configuration, MotorCommand};

/// How the plant is excited while collecting observations. Every policy keeps
/// the trajectory inside the collection region.
#[derive(Debug, Clone, PartialEq)]
pub enum ExcitationPolicy {
    /// Uniform random displacements of norm at most `amplitude`.
    RandomWalk,
    /// Cyclic +/- probes of size `amplitude` along each configuration axis,
    /// returning to the start after every probe.
    AxisProbes,
    /// Snake traversal of a lattice with pitch at most `amplitude`, covering
    /// the region with spatially adjacent transitions.
    GridSweep,
}

/// One motion record: the pre-motion configuration and features, the realized
/// command, and the feature change it produced.
#[derive(Debug, Clone)]
pub struct MotionRecord {
    pub x: Configuration,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub delta: DVector<f64>,
}

/// A dataset of exactly `t` motion records collected by one policy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n: usize,
    pub m: usize,
    pub records: Vec<MotionRecord>,
}

impl Dataset {
    /// Views the records as (y_k, x_k) pairs for structure-based fitting.
    pub fn observations_yx(&self) -> Result<Vec<ObservationYX>> {
        self.records
            .iter()
            .map(|r| {
                Ok(ObservationYX {
                    y: crate::types::FeatureVector::new(r.y.clone())?,
                    x: r.x.clone(),
                })
            })
            .collect()
    }

    /// Views the records as localized (delta, u) observations for the
    /// instantaneous and distributed estimators.
    pub fn observations_du(&self) -> Result<Vec<LocalizedObservation>> {
        self.records
            .iter()
            .map(|r| {
                Ok(LocalizedObservation {
                    x: r.x.clone(),
                    obs: ObservationDU::new(r.delta.clone(), r.u.clone())?,
                })
            })
            .collect()
    }

    /// The visited pre-motion configurations, e.g. for k-means placement.
    pub fn configurations(&self) -> Vec<Configuration> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// The snake (boustrophedon) ordering of a lattice over `region` whose pitch
/// along each axis is at most `amplitude`; consecutive nodes differ on one
/// axis by one pitch.
fn snake_nodes(region: &BoxDomain, amplitude: f64) -> Vec<DVector<f64>> {
    let n = region.dim();
    let counts: Vec<usize> = (0..n)
        .map(|i| {
            let extent = region.hi()[i] - region.lo()[i];
            if extent <= 1e-12 {
                1
            } else {
                ((extent / amplitude).ceil() as usize + 1).max(2)
            }
        })
        .collect();
    let coord = |axis: usize, idx: usize| -> f64 {
        if counts[axis] == 1 {
            0.5 * (region.lo()[axis] + region.hi()[axis])
        } else {
            region.lo()[axis]
                + (region.hi()[axis] - region.lo()[axis]) * idx as f64
                    / (counts[axis] - 1) as f64
        }
    };
    let total: usize = counts.iter().product();
    let mut nodes = Vec::with_capacity(total);
    for flat in 0..total {
        // Mixed-radix digits with snake reflection: a digit runs backwards
        // whenever the sum of more-significant digits is odd, which makes
        // consecutive flat indices spatially adjacent.
        let mut digits = vec![0usize; n];
        let mut rem = flat;
        for axis in 0..n {
            digits[axis] = rem % counts[axis];
            rem /= counts[axis];
        }
        let mut carry_parity = 0usize;
        let mut point = DVector::zeros(n);
        for axis in (0..n).rev() {
            let idx = if carry_parity % 2 == 0 {
                digits[axis]
            } else {
                counts[axis] - 1 - digits[axis]
            };
            point[axis] = coord(axis, idx);
            carry_parity += idx;
        }
        nodes.push(point);
    }
    nodes
}

/// Executes `t` commands under the chosen policy and records one motion per
/// command. The trajectory starts at the region center and never leaves the
/// intersection of the region and the workspace. Deterministic in `seed`.
pub fn collect_dataset(
    plant: &dyn Plant,
    policy: &ExcitationPolicy,
    t: usize,
    amplitude: f64,
    region: &BoxDomain,
    seed: u64,
) -> Result<Dataset> {
    if t == 0 {
        return Err(Error::InvalidInput("dataset size t must be >= 1".into()));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "amplitude must be > 0, got {amplitude}"
        )));
    }
    let spec = plant.spec();
    if region.dim() != spec.n {
        return Err(Error::DimensionMismatch {
            context: "collection region",
            expected: spec.n,
            actual: region.dim(),
        });
    }
    let clip = |x: &DVector<f64>| -> DVector<f64> {
        let (inside_region, _) = region.clamp(x);
        let (inside_ws, _) = spec.workspace.clamp(&inside_region);
        inside_ws
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(t);

    let start = Configuration::new(clip(&region.center()))?;
    let mut x = start.clone();
    let mut y = plant.features(&observe(plant, &x)?).into_vector();

    // Grid sweep walks the node list forward and backward repeatedly so long
    // collections keep making adjacent moves instead of jumping home.
    let nodes = match policy {
        ExcitationPolicy::GridSweep => {
            let mut nodes = snake_nodes(region, amplitude);
            for node in nodes.iter_mut() {
                *node = clip(node);
            }
            // Enter the sweep at the start node.
            x = Configuration::new(nodes[0].clone())?;
            y = plant.features(&observe(plant, &x)?).into_vector();
            nodes
        }
        _ => Vec::new(),
    };
    let mut sweep_pos = 0usize;
    let mut sweep_forward = true;
    let mut probe_axis = 0usize;
    let mut probe_sign = 1.0f64;

    for _ in 0..t {
        let target = match policy {
            ExcitationPolicy::RandomWalk => {
                let radius = amplitude * rng.gen_range(0.0..1.0_f64).powf(1.0 / spec.n as f64);
                clip(&(x.as_vector() + radius * random_direction(&mut rng, spec.n)))
            }
            ExcitationPolicy::AxisProbes => {
                let mut probe = start.as_vector().clone();
                probe[probe_axis] += probe_sign * amplitude;
                let probe = clip(&probe);
                // Alternate sign, then advance the axis; the walk returns to
                // the start implicitly because each probe leaves from it.
                if probe_sign < 0.0 {
                    probe_axis = (probe_axis + 1) % spec.n;
                }
                probe_sign = -probe_sign;
                probe
            }
            ExcitationPolicy::GridSweep => {
                if sweep_forward {
                    if sweep_pos + 1 < nodes.len() {
                        sweep_pos += 1;
                    } else {
                        sweep_forward = false;
                        sweep_pos = sweep_pos.saturating_sub(1);
                    }
                } else if sweep_pos > 0 {
                    sweep_pos -= 1;
                } else {
                    sweep_forward = true;
                    sweep_pos = (sweep_pos + 1).min(nodes.len() - 1);
                }
                nodes[sweep_pos].clone()
            }
        };
        let u = MotorCommand::new(&target - x.as_vector())?;
        let out = step(plant, &x, &u)?;
        let realized = MotorCommand::new(out.x.as_vector() - x.as_vector())?;
        let y_next = out.features.clone().into_vector();
        records.push(MotionRecord {
            x: x.clone(),
            y: y.clone(),
            u: realized.into_vector(),
            delta: &y_next - &y,
        });
        if !matches!(policy, ExcitationPolicy::AxisProbes) {
            x = out.x;
            y = y_next;
        }
        // Axis probes are measured from the fixed start pose, so the cursor
        // stays there between probes.
    }
    Ok(Dataset {
        n: spec.n,
        m: spec.m,
        records,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    x: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    delta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    n: usize,
    m: usize,
    records: Vec<RecordFile>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = DatasetFile {
        n: dataset.n,
        m: dataset.m,
        records: dataset
            .records
            .iter()
            .map(|r| RecordFile {
                x: r.x.as_vector().iter().copied().collect(),
                y: r.y.iter().copied().collect(),
                u: r.u.iter().copied().collect(),
                delta: r.delta.iter().copied().collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: DatasetFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let records = file
        .records
        .into_iter()
        .map(|r| {
            Ok(MotionRecord {
                x: Configuration::from_slice(&r.x)?,
                y: DVector::from_row_slice(&r.y),
                u: DVector::from_row_slice(&r.u),
                delta: DVector::from_row_slice(&r.delta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        n: file.n,
        m: file.m,
        records,
    })
}
