//! Distributed estimation over a network of computing units, each pairing an
//! anchor configuration with a local Jacobian valid in its neighbourhood.
//! Units are fitted by Gaussian-weighted gradient descent and retrieved by a
//! nearest-anchor winner search.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instant::{cost_v, grad_v, ObservationDU};
use crate::structured::FitSchedule;
use crate::types::{BoxDomain, Configuration, JacobianEstimate};

/// Default neighbourhood cutoff: the Gaussian weight at three sigma.
pub const DEFAULT_H_MIN: f64 = 0.011108996538242306; // exp(-9/2)

/// An anchor configuration paired with its local Jacobian estimate.
#[derive(Debug, Clone)]
pub struct ComputingUnit {
    pub anchor: Configuration,
    pub jacobian: JacobianEstimate,
    pub trained: bool,
}

impl ComputingUnit {
    pub fn new(anchor: Configuration, m: usize) -> Self {
        let n = anchor.dim();
        Self {
            anchor,
            jacobian: JacobianEstimate::zeros(m, n),
            trained: false,
        }
    }
}

/// An ordered network of computing units sharing one neighbourhood radius.
#[derive(Debug, Clone)]
pub struct UnitNetwork {
    pub units: Vec<ComputingUnit>,
    pub sigma: f64,
    pub h_min: f64,
}

impl UnitNetwork {
    pub fn new(units: Vec<ComputingUnit>, sigma: f64, h_min: f64) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::InvalidInput("network needs at least one unit".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        if !(h_min > 0.0 && h_min < 1.0) {
            return Err(Error::InvalidInput(format!(
                "h_min must lie in (0, 1), got {h_min}"
            )));
        }
        Ok(Self {
            units,
            sigma,
            h_min,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn config_dim(&self) -> usize {
        self.units[0].anchor.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.units[0].jacobian.feature_dim()
    }
}

/// A (delta, u) observation tagged with the pre-motion configuration at which
/// it was collected.
#[derive(Debug, Clone)]
pub struct LocalizedObservation {
    pub x: Configuration,
    pub obs: ObservationDU,
}

/// Anchor placement strategies for a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacementStrategy {
    /// Evenly spaced lattice including the domain endpoints.
    UniformGrid { per_axis: Vec<usize> },
    /// Uniform random draws from the domain.
    Random { count: usize },
    /// Lloyd's algorithm over visited configurations, 100 iterations.
    DataKmeans { count: usize },
}

fn axis_lattice(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

fn grid_anchors(domain: &BoxDomain, per_axis: &[usize]) -> Result<Vec<DVector<f64>>> {
    if per_axis.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            context: "grid per-axis counts",
            expected: domain.dim(),
            actual: per_axis.len(),
        });
    }
    if per_axis.iter().any(|&c| c == 0) {
        return Err(Error::InvalidInput("per-axis count must be >= 1".into()));
    }
    let axes: Vec<Vec<f64>> = (0..domain.dim())
        .map(|i| axis_lattice(domain.lo()[i], domain.hi()[i], per_axis[i]))
        .collect();
    let total: usize = per_axis.iter().product();
    let mut anchors = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut coords = DVector::zeros(domain.dim());
        for (axis, counts) in per_axis.iter().enumerate() {
            coords[axis] = axes[axis][idx % counts];
            idx /= counts;
        }
        anchors.push(coords);
    }
    Ok(anchors)
}

fn kmeans_anchors(
    samples: &[Configuration],
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if count > samples.len() {
        return Err(Error::InvalidInput(format!(
            "k-means asks for {count} units but only {} samples are available",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Seeded initialisation from distinct sample indices.
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for i in 0..count {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut centers: Vec<DVector<f64>> = indices[..count]
        .iter()
        .map(|&i| samples[i].as_vector().clone())
        .collect();

    let dim = samples[0].dim();
    for _ in 0..100 {
        let mut sums = vec![DVector::<f64>::zeros(dim); count];
        let mut counts = vec![0usize; count];
        for s in samples {
            let x = s.as_vector();
            let nearest = centers
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (x - *a).norm().partial_cmp(&(x - *b).norm()).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            sums[nearest] += x;
            counts[nearest] += 1;
        }
        for (i, center) in centers.iter_mut().enumerate() {
            if counts[i] > 0 {
                *center = &sums[i] / counts[i] as f64;
            }
        }
    }
    Ok(centers)
}

/// Half the minimum nearest-neighbour spacing between anchors; falls back to
/// the domain scale for a single unit.
fn default_sigma(anchors: &[DVector<f64>], domain: &BoxDomain) -> f64 {
    let mut min_spacing = f64::INFINITY;
    for i in 0..anchors.len() {
        for j in (i + 1)..anchors.len() {
            let d = (&anchors[i] - &anchors[j]).norm();
            if d > 1e-12 && d < min_spacing {
                min_spacing = d;
            }
        }
    }
    if min_spacing.is_finite() {
        0.5 * min_spacing
    } else {
        0.5 * domain.scale().max(1.0)
    }
}

/// Builds a network of zero-initialised units with anchors placed by the
/// chosen strategy. `samples` is consulted only by the k-means strategy.
pub fn allocate_units(
    strategy: &PlacementStrategy,
    domain: &BoxDomain,
    samples: &[Configuration],
    feature_dim: usize,
    seed: u64,
    sigma: Option<f64>,
    h_min: Option<f64>,
) -> Result<UnitNetwork> {
    let anchors = match strategy {
        PlacementStrategy::UniformGrid { per_axis } => grid_anchors(domain, per_axis)?,
        PlacementStrategy::Random { count } => {
            if *count == 0 {
                return Err(Error::InvalidInput("unit count must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..*count)
                .map(|_| {
                    DVector::from_iterator(
                        domain.dim(),
                        (0..domain.dim()).map(|i| rng.gen_range(domain.lo()[i]..=domain.hi()[i])),
                    )
                })
                .collect()
        }
        PlacementStrategy::DataKmeans { count } => {
            if *count == 0 {
                return Err(Error::InvalidInput("unit count must be >= 1".into()));
            }
            kmeans_anchors(samples, *count, seed)?
        }
    };
    let sigma = sigma.unwrap_or_else(|| default_sigma(&anchors, domain));
    let units = anchors
        .into_iter()
        .map(|a| Ok(ComputingUnit::new(Configuration::new(a)?, feature_dim)))
        .collect::<Result<Vec<_>>>()?;
    UnitNetwork::new(units, sigma, h_min.unwrap_or(DEFAULT_H_MIN))
}

/// Gaussian neighbourhood weight exp(-||anchor - x||^2 / (2 sigma^2)).
pub fn neighborhood_weight(anchor: &Configuration, x: &Configuration, sigma: f64) -> f64 {
    let d2 = (anchor.as_vector() - x.as_vector()).norm_squared();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Observations inside the unit's ball, paired with their weights.
fn ball<'a>(
    unit: &ComputingUnit,
    data: &'a [LocalizedObservation],
    sigma: f64,
    h_min: f64,
) -> Vec<(f64, &'a LocalizedObservation)> {
    data.iter()
        .filter_map(|lo| {
            let h = neighborhood_weight(&unit.anchor, &lo.x, sigma);
            (h >= h_min).then_some((h, lo))
        })
        .collect()
}

/// Weighted sufficient statistics of a ball:
/// gram = sum h u u^T, cross = sum h delta u^T, offset = sum h ||delta||^2.
struct BallStats {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    offset: f64,
}

fn ball_stats(unit: &ComputingUnit, members: &[(f64, &LocalizedObservation)]) -> BallStats {
    let n = unit.jacobian.config_dim();
    let m = unit.jacobian.feature_dim();
    let mut gram = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(m, n);
    let mut offset = 0.0;
    for (h, lo) in members {
        gram += *h * &lo.obs.u * lo.obs.u.transpose();
        cross += *h * &lo.obs.delta * lo.obs.u.transpose();
        offset += *h * lo.obs.delta.norm_squared();
    }
    BallStats {
        gram,
        cross,
        offset,
    }
}

fn cost_w_from_stats(a: &DMatrix<f64>, stats: &BallStats, gamma: f64) -> f64 {
    let quad = (a * &stats.gram * a.transpose()).trace();
    let lin = (a * stats.cross.transpose()).trace();
    0.5 * gamma * (quad - 2.0 * lin + stats.offset)
}

/// The local cost W = (gamma/2) sum_{j in ball} h_j ||A u_j - delta_j||^2.
pub fn cost_w(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    sigma: f64,
    gamma: f64,
    h_min: f64,
) -> Result<f64> {
    let members = ball(unit, data, sigma, h_min);
    if members.is_empty() {
        return Err(Error::EmptyNeighborhood { unit: 0 });
    }
    let sum: f64 = members
        .iter()
        .map(|(h, lo)| h * (unit.jacobian.as_matrix() * &lo.obs.u - &lo.obs.delta).norm_squared())
        .sum();
    Ok(0.5 * gamma * sum)
}

/// Entrywise gradient of the local cost: gamma sum h (A u - delta) u^T.
pub fn grad_w(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    sigma: f64,
    gamma: f64,
    h_min: f64,
) -> Result<DMatrix<f64>> {
    let members = ball(unit, data, sigma, h_min);
    if members.is_empty() {
        return Err(Error::EmptyNeighborhood { unit: 0 });
    }
    let stats = ball_stats(unit, &members);
    Ok(gamma * (unit.jacobian.as_matrix() * &stats.gram - &stats.cross))
}

/// A learning gain guaranteed stable for this unit's ball:
/// 1 / lambda_max of the weighted Gram matrix.
pub fn stable_unit_gamma(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    sigma: f64,
    h_min: f64,
) -> Result<f64> {
    let members = ball(unit, data, sigma, h_min);
    if members.is_empty() {
        return Err(Error::EmptyNeighborhood { unit: 0 });
    }
    let stats = ball_stats(unit, &members);
    let lambda_max = stats
        .gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    if lambda_max <= 0.0 {
        return Err(Error::InvalidInput("degenerate commands in the ball".into()));
    }
    Ok(1.0 / lambda_max)
}

/// Fits one unit by gradient descent on its local cost; iterates until the
/// gradient norm drops below `grad_tol` or the iteration cap. The fixed point
/// is the Gaussian-weighted least-squares Jacobian.
pub fn train_unit(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    sigma: f64,
    gamma: f64,
    h_min: f64,
    schedule: &FitSchedule,
) -> Result<ComputingUnit> {
    let members = ball(unit, data, sigma, h_min);
    if members.is_empty() {
        return Err(Error::EmptyNeighborhood { unit: 0 });
    }
    let stats = ball_stats(unit, &members);
    let mut a = unit.jacobian.as_matrix().clone();
    let mut prev_cost = cost_w_from_stats(&a, &stats, gamma);
    let mut rising = 0usize;
    for _ in 0..schedule.max_iters {
        let grad = gamma * (&a * &stats.gram - &stats.cross);
        if grad.norm() <= schedule.grad_tol {
            break;
        }
        a -= grad;
        let cost = cost_w_from_stats(&a, &stats, gamma);
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
    Ok(ComputingUnit {
        anchor: unit.anchor.clone(),
        jacobian: JacobianEstimate::new(a)?,
        trained: true,
    })
}

/// Indices of units left untrained because their balls were empty.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub untrained: Vec<usize>,
}

/// Trains every unit independently on the shared dataset. With `gamma: None`
/// each unit uses its own stability-limited gain. Units with empty balls are
/// reported and keep their prior Jacobians.
pub fn train_network(
    network: &UnitNetwork,
    data: &[LocalizedObservation],
    gamma: Option<f64>,
    schedule: &FitSchedule,
) -> Result<(UnitNetwork, TrainingReport)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut report = TrainingReport::default();
    let mut units = Vec::with_capacity(network.len());
    for (idx, unit) in network.units.iter().enumerate() {
        let unit_gamma = match gamma {
            Some(g) => g,
            None => match stable_unit_gamma(unit, data, network.sigma, network.h_min) {
                Ok(g) => g,
                Err(_) => {
                    report.untrained.push(idx);
                    units.push(unit.clone());
                    continue;
                }
            },
        };
        match train_unit(unit, data, network.sigma, unit_gamma, network.h_min, schedule) {
            Ok(trained) => units.push(trained),
            Err(Error::EmptyNeighborhood { .. }) => {
                report.untrained.push(idx);
                units.push(unit.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((
        UnitNetwork::new(units, network.sigma, network.h_min)?,
        report,
    ))
}

/// Index of the unit whose anchor is nearest to `x`; ties break to the
/// lowest index.
pub fn winner(network: &UnitNetwork, x: &Configuration) -> usize {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (i, unit) in network.units.iter().enumerate() {
        let d = (unit.anchor.as_vector() - x.as_vector()).norm();
        if d < best_dist {
            best_dist = d;
            best = i;
        }
    }
    best
}

/// The winner unit's local Jacobian, with no inter-unit blending.
pub fn query_jacobian(network: &UnitNetwork, x: &Configuration) -> Result<JacobianEstimate> {
    let idx = winner(network, x);
    let unit = &network.units[idx];
    if !unit.trained {
        return Err(Error::UntrainedRegion { unit: idx });
    }
    Ok(unit.jacobian.clone())
}

/// The combined cost H = V + W: instantaneous accuracy on the current
/// observation plus the historical local cost. An empty ball contributes
/// W = 0.
pub fn combined_cost_h(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    current_obs: &ObservationDU,
    sigma: f64,
    gamma: f64,
    h_min: f64,
) -> Result<f64> {
    let v = cost_v(&unit.jacobian, current_obs, gamma)?;
    let w = match cost_w(unit, data, sigma, gamma, h_min) {
        Ok(w) => w,
        Err(Error::EmptyNeighborhood { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(v + w)
}

/// One gradient step on H = V + W, used for online refinement of the winner
/// unit during a servo episode.
pub fn refine_unit_online(
    unit: &ComputingUnit,
    data: &[LocalizedObservation],
    current_obs: &ObservationDU,
    sigma: f64,
    gamma: f64,
    h_min: f64,
) -> Result<ComputingUnit> {
    let mut grad = grad_v(&unit.jacobian, current_obs, gamma)?;
    match grad_w(unit, data, sigma, gamma, h_min) {
        Ok(gw) => grad += gw,
        Err(Error::EmptyNeighborhood { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(ComputingUnit {
        anchor: unit.anchor.clone(),
        jacobian: JacobianEstimate::new(unit.jacobian.as_matrix() - grad)?,
        trained: unit.trained,
    })
}

/// Writes the flat text snapshot: N n m sigma h_min, then per unit the anchor
/// coordinates, row-major Jacobian entries, and trained flag. Values use the
/// shortest decimal representation that round-trips bit-exactly.
pub fn write_snapshot<W: Write>(network: &UnitNetwork, mut out: W) -> std::io::Result<()> {
    let n = network.config_dim();
    let m = network.feature_dim();
    writeln!(
        out,
        "{} {} {} {} {}",
        network.len(),
        n,
        m,
        network.sigma,
        network.h_min
    )?;
    for unit in &network.units {
        let mut fields: Vec<String> = unit.anchor.as_vector().iter().map(|v| v.to_string()).collect();
        for i in 0..m {
            for j in 0..n {
                fields.push(unit.jacobian.as_matrix()[(i, j)].to_string());
            }
        }
        fields.push(if unit.trained { "1" } else { "0" }.to_string());
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(())
}

/// Reads a snapshot produced by [`write_snapshot`].
pub fn read_snapshot<R: Read>(input: R) -> Result<UnitNetwork> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::SnapshotFormat("missing header".into()))?
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 {
        return Err(Error::SnapshotFormat(format!(
            "header needs 5 fields, got {}",
            head.len()
        )));
    }
    let count: usize = head[0]
        .parse()
        .map_err(|_| Error::SnapshotFormat("bad unit count".into()))?;
    let n: usize = head[1].parse().map_err(|_| Error::SnapshotFormat("bad n".into()))?;
    let m: usize = head[2].parse().map_err(|_| Error::SnapshotFormat("bad m".into()))?;
    let sigma: f64 = head[3]
        .parse()
        .map_err(|_| Error::SnapshotFormat("bad sigma".into()))?;
    let h_min: f64 = head[4]
        .parse()
        .map_err(|_| Error::SnapshotFormat("bad h_min".into()))?;

    let mut units = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::SnapshotFormat("missing unit line".into()))?
            .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != n + m * n + 1 {
            return Err(Error::SnapshotFormat(format!(
                "unit line needs {} fields, got {}",
                n + m * n + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::SnapshotFormat(format!("bad number '{s}'")))
        };
        let anchor = Configuration::new(DVector::from_iterator(
            n,
            fields[..n].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?,
        ))?;
        let entries = fields[n..n + m * n]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        let jacobian = JacobianEstimate::new(DMatrix::from_row_slice(m, n, &entries))?;
        let trained = fields[n + m * n] == "1";
        units.push(ComputingUnit {
            anchor,
            jacobian,
            trained,
        });
    }
    UnitNetwork::new(units, sigma, h_min)
}

pub fn save_snapshot(network: &UnitNetwork, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_snapshot(network, std::io::BufWriter::new(file))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_snapshot(path: &Path) -> Result<UnitNetwork> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_snapshot(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::from_slice(v).unwrap()
    }

    fn lobs(x: &[f64], u: &[f64], delta: &[f64]) -> LocalizedObservation {
        LocalizedObservation {
            x: cfg(x),
            obs: ObservationDU::new(
                DVector::from_row_slice(delta),
                DVector::from_row_slice(u),
            )
            .unwrap(),
        }
    }

    fn schedule() -> FitSchedule {
        FitSchedule::new(1.0, 50_000, 1e-11).unwrap()
    }

    #[test]
    fn grid_anchors_1d_with_endpoints() {
        let domain = BoxDomain::from_bounds(&[(0.0, 1.0)]).unwrap();
        let net = allocate_units(
            &PlacementStrategy::UniformGrid { per_axis: vec![3] },
            &domain,
            &[],
            2,
            0,
            None,
            None,
        )
        .unwrap();
        let anchors: Vec<f64> = net.units.iter().map(|u| u.anchor.as_vector()[0]).collect();
        assert_eq!(anchors, vec![0.0, 0.5, 1.0]);
        // Default sigma is half the minimum spacing.
        assert!((net.sigma - 0.25).abs() < 1e-12);
    }

    #[test]
    fn grid_anchors_2d_product_lattice() {
        let domain = BoxDomain::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let net = allocate_units(
            &PlacementStrategy::UniformGrid {
                per_axis: vec![2, 2],
            },
            &domain,
            &[],
            1,
            0,
            None,
            None,
        )
        .unwrap();
        let mut anchors: Vec<(f64, f64)> = net
            .units
            .iter()
            .map(|u| (u.anchor.as_vector()[0], u.anchor.as_vector()[1]))
            .collect();
        anchors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            anchors,
            vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn random_placement_is_seed_deterministic() {
        let domain = BoxDomain::from_bounds(&[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let strategy = PlacementStrategy::Random { count: 5 };
        let a = allocate_units(&strategy, &domain, &[], 1, 42, None, None).unwrap();
        let b = allocate_units(&strategy, &domain, &[], 1, 42, None, None).unwrap();
        for (ua, ub) in a.units.iter().zip(&b.units) {
            assert_eq!(ua.anchor.as_vector(), ub.anchor.as_vector());
        }
    }

    #[test]
    fn kmeans_rejects_more_units_than_samples() {
        let domain = BoxDomain::from_bounds(&[(0.0, 1.0)]).unwrap();
        let samples = vec![cfg(&[0.1]), cfg(&[0.9])];
        assert!(allocate_units(
            &PlacementStrategy::DataKmeans { count: 3 },
            &domain,
            &samples,
            1,
            0,
            None,
            None,
        )
        .is_err());
    }

    #[test]
    fn kmeans_finds_two_clusters() {
        let domain = BoxDomain::from_bounds(&[(0.0, 10.0)]).unwrap();
        let samples: Vec<Configuration> = [0.0, 0.1, 0.2, 9.8, 9.9, 10.0]
            .iter()
            .map(|&v| cfg(&[v]))
            .collect();
        let net = allocate_units(
            &PlacementStrategy::DataKmeans { count: 2 },
            &domain,
            &samples,
            1,
            7,
            None,
            None,
        )
        .unwrap();
        let mut centers: Vec<f64> = net.units.iter().map(|u| u.anchor.as_vector()[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] - 0.1).abs() < 1e-9);
        assert!((centers[1] - 9.9).abs() < 1e-9);
    }

    #[test]
    fn neighborhood_weight_values() {
        let anchor = cfg(&[0.2, -0.4]);
        assert_eq!(neighborhood_weight(&anchor, &anchor, 0.5), 1.0);
        // Distance sigma gives exp(-1/2).
        let x = cfg(&[0.7, -0.4]);
        assert!((neighborhood_weight(&anchor, &x, 0.5) - 0.6065306597126334).abs() < 1e-12);
        // Monotone decreasing in distance.
        let far = cfg(&[1.2, -0.4]);
        assert!(neighborhood_weight(&anchor, &far, 0.5) < neighborhood_weight(&anchor, &x, 0.5));
        // Symmetric.
        assert_eq!(
            neighborhood_weight(&anchor, &x, 0.5),
            neighborhood_weight(&x, &anchor, 0.5)
        );
    }

    #[test]
    fn cost_w_reduces_to_cost_v_at_anchor() {
        let mut unit = ComputingUnit::new(cfg(&[0.0, 0.0]), 2);
        let data = vec![lobs(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 4.0])];
        // h = 1 at the anchor: W equals (gamma/2)||delta||^2 = 25 for gamma = 2.
        let w = cost_w(&unit, &data, 0.5, 2.0, DEFAULT_H_MIN).unwrap();
        assert!((w - 25.0).abs() < 1e-12);

        // Same observation at distance sigma scales by exp(-1/2).
        let data = vec![lobs(&[0.5, 0.0], &[1.0, 0.0], &[3.0, 4.0])];
        let w_far = cost_w(&unit, &data, 0.5, 2.0, DEFAULT_H_MIN).unwrap();
        assert!((w_far - 25.0 * 0.6065306597126334).abs() < 1e-10);

        // Exact local model gives zero.
        unit.jacobian =
            JacobianEstimate::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 0.0])).unwrap();
        let data = vec![lobs(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 4.0])];
        assert!(cost_w(&unit, &data, 0.5, 2.0, DEFAULT_H_MIN).unwrap() < 1e-24);
    }

    #[test]
    fn cost_w_empty_ball_signals() {
        let unit = ComputingUnit::new(cfg(&[0.0]), 1);
        let data = vec![lobs(&[100.0], &[1.0], &[1.0])];
        assert!(matches!(
            cost_w(&unit, &data, 0.1, 1.0, DEFAULT_H_MIN),
            Err(Error::EmptyNeighborhood { .. })
        ));
    }

    #[test]
    fn train_unit_single_observation_min_norm() {
        let unit = ComputingUnit::new(cfg(&[0.0, 0.0]), 2);
        let data = vec![lobs(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 3.0])];
        let gamma = stable_unit_gamma(&unit, &data, 0.5, DEFAULT_H_MIN).unwrap();
        let trained = train_unit(&unit, &data, 0.5, gamma, DEFAULT_H_MIN, &schedule()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 3.0, 0.0]);
        assert!((trained.jacobian.as_matrix() - expected).norm() < 1e-9);
        assert!(trained.trained);
    }

    #[test]
    fn train_unit_recovers_linear_plant_jacobian() {
        let a_true = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]);
        let unit = ComputingUnit::new(cfg(&[0.0, 0.0]), 2);
        let us = [[0.1, 0.0], [0.0, 0.1], [0.07, -0.03]];
        let data: Vec<_> = us
            .iter()
            .map(|u| {
                let uv = DVector::from_row_slice(u);
                let delta = &a_true * &uv;
                lobs(&[0.0, 0.0], u, &[delta[0], delta[1]])
            })
            .collect();
        let gamma = stable_unit_gamma(&unit, &data, 0.5, DEFAULT_H_MIN).unwrap();
        let trained = train_unit(&unit, &data, 0.5, gamma, DEFAULT_H_MIN, &schedule()).unwrap();
        assert!((trained.jacobian.as_matrix() - &a_true).norm() < 1e-6);
    }

    #[test]
    fn train_unit_fixed_point_matches_weighted_least_squares() {
        // Random-ish overdetermined ball, weighted normal-equations oracle.
        let unit = ComputingUnit::new(cfg(&[0.1, -0.2]), 2);
        let raw = [
            ([0.0_f64, 0.0], [0.1, 0.02], [0.3, -0.1]),
            ([0.2, 0.1], [-0.05, 0.08], [0.1, 0.2]),
            ([0.1, -0.3], [0.03, -0.07], [-0.2, 0.05]),
            ([-0.1, 0.0], [0.09, 0.01], [0.25, -0.15]),
        ];
        let data: Vec<_> = raw.iter().map(|(x, u, d)| lobs(x, u, d)).collect();
        let sigma = 0.4;
        let gamma = stable_unit_gamma(&unit, &data, sigma, DEFAULT_H_MIN).unwrap();
        let trained = train_unit(&unit, &data, sigma, gamma, DEFAULT_H_MIN, &schedule()).unwrap();

        // Oracle: (sum h delta u^T)(sum h u u^T)^-1.
        let mut gram = DMatrix::zeros(2, 2);
        let mut cross = DMatrix::zeros(2, 2);
        for lo in &data {
            let h = neighborhood_weight(&unit.anchor, &lo.x, sigma);
            gram += h * &lo.obs.u * lo.obs.u.transpose();
            cross += h * &lo.obs.delta * lo.obs.u.transpose();
        }
        let oracle = cross * gram.try_inverse().unwrap();
        assert!((trained.jacobian.as_matrix() - oracle).norm() < 1e-6);

        // Starting at the solution changes nothing.
        let again = train_unit(&trained, &data, sigma, gamma, DEFAULT_H_MIN, &schedule()).unwrap();
        assert!((again.jacobian.as_matrix() - trained.jacobian.as_matrix()).norm() < 1e-8);
    }

    #[test]
    fn train_network_reports_empty_balls_and_splits_clusters() {
        // Two far-apart clusters; each unit fits only its own.
        let a1 = DMatrix::from_row_slice(1, 1, &[2.0]);
        let a2 = DMatrix::from_row_slice(1, 1, &[-3.0]);
        let mut data = Vec::new();
        for k in 0..5 {
            let u = 0.05 + 0.01 * k as f64;
            data.push(lobs(&[0.0 + 0.01 * k as f64], &[u], &[(a1[(0, 0)]) * u]));
            data.push(lobs(&[10.0 + 0.01 * k as f64], &[u], &[(a2[(0, 0)]) * u]));
        }
        let units = vec![
            ComputingUnit::new(cfg(&[0.0]), 1),
            ComputingUnit::new(cfg(&[10.0]), 1),
            ComputingUnit::new(cfg(&[500.0]), 1), // isolated
        ];
        let network = UnitNetwork::new(units, 0.3, DEFAULT_H_MIN).unwrap();
        let (trained, report) = train_network(&network, &data, None, &schedule()).unwrap();
        assert_eq!(report.untrained, vec![2]);
        assert!((trained.units[0].jacobian.as_matrix()[(0, 0)] - 2.0).abs() < 1e-6);
        assert!((trained.units[1].jacobian.as_matrix()[(0, 0)] + 3.0).abs() < 1e-6);
        assert!(!trained.units[2].trained);

        // Idempotent on the same data.
        let (twice, _) = train_network(&trained, &data, None, &schedule()).unwrap();
        for (a, b) in twice.units.iter().zip(&trained.units) {
            assert!((a.jacobian.as_matrix() - b.jacobian.as_matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn winner_nearest_anchor_and_tie_break() {
        let units = vec![
            ComputingUnit::new(cfg(&[0.0]), 1),
            ComputingUnit::new(cfg(&[1.0]), 1),
        ];
        let network = UnitNetwork::new(units, 0.5, DEFAULT_H_MIN).unwrap();
        assert_eq!(winner(&network, &cfg(&[0.4])), 0);
        assert_eq!(winner(&network, &cfg(&[0.5])), 0); // tie -> lower index
        assert_eq!(winner(&network, &cfg(&[1.0])), 1);
    }

    #[test]
    fn query_jacobian_untrained_region_errors() {
        let units = vec![ComputingUnit::new(cfg(&[0.0]), 1)];
        let network = UnitNetwork::new(units, 0.5, DEFAULT_H_MIN).unwrap();
        assert!(matches!(
            query_jacobian(&network, &cfg(&[0.1])),
            Err(Error::UntrainedRegion { unit: 0 })
        ));
    }

    #[test]
    fn combined_cost_is_the_sum_of_both_terms() {
        let unit = ComputingUnit::new(cfg(&[0.0, 0.0]), 2);
        let data = vec![lobs(&[0.0, 0.0], &[1.0, 0.0], &[3.0, 4.0])];
        let current = ObservationDU::new(
            DVector::from_row_slice(&[1.0, -1.0]),
            DVector::from_row_slice(&[0.5, 0.5]),
        )
        .unwrap();
        let gamma = 2.0;
        let v = cost_v(&unit.jacobian, &current, gamma).unwrap();
        let w = cost_w(&unit, &data, 0.5, gamma, DEFAULT_H_MIN).unwrap();
        let h = combined_cost_h(&unit, &data, &current, 0.5, gamma, DEFAULT_H_MIN).unwrap();
        assert!((h - (v + w)).abs() < 1e-12);

        // Zero current residual: H equals W alone.
        let exact = ObservationDU::new(DVector::zeros(2), DVector::from_row_slice(&[0.1, 0.0]))
            .unwrap();
        let h = combined_cost_h(&unit, &data, &exact, 0.5, gamma, DEFAULT_H_MIN).unwrap();
        assert!((h - w).abs() < 1e-12);

        // Empty ball: H equals V alone.
        let far_data = vec![lobs(&[100.0, 0.0], &[1.0, 0.0], &[1.0, 1.0])];
        let h = combined_cost_h(&unit, &far_data, &current, 0.5, gamma, DEFAULT_H_MIN).unwrap();
        assert!((h - v).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trips_bit_exactly() {
        let units = vec![
            ComputingUnit {
                anchor: cfg(&[0.1, -0.2]),
                jacobian: JacobianEstimate::new(DMatrix::from_row_slice(
                    2,
                    2,
                    &[1.0 / 3.0, -0.7, 2.5e-11, 4.0],
                ))
                .unwrap(),
                trained: true,
            },
            ComputingUnit::new(cfg(&[0.9, 0.4]), 2),
        ];
        let network = UnitNetwork::new(units, 0.123456789, DEFAULT_H_MIN).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&network, &mut buf).unwrap();
        let restored = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(restored.sigma.to_bits(), network.sigma.to_bits());
        assert_eq!(restored.h_min.to_bits(), network.h_min.to_bits());
        for (a, b) in restored.units.iter().zip(&network.units) {
            assert_eq!(a.trained, b.trained);
            assert_eq!(a.anchor.as_vector(), b.anchor.as_vector());
            for (x, y) in a
                .jacobian
                .as_matrix()
                .iter()
                .zip(b.jacobian.as_matrix().iter())
            {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // A second serialisation is byte-identical.
        let mut buf2 = Vec::new();
        write_snapshot(&restored, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn perturbations_outside_every_ball_change_nothing() {
        let unit = ComputingUnit::new(cfg(&[0.0]), 1);
        let near = vec![lobs(&[0.05], &[0.1], &[0.2])];
        let mut with_far = near.clone();
        with_far.push(lobs(&[50.0], &[0.1], &[99.0]));
        let network = UnitNetwork::new(vec![unit], 0.3, DEFAULT_H_MIN).unwrap();
        let (a, _) = train_network(&network, &near, None, &schedule()).unwrap();
        let (b, _) = train_network(&network, &with_far, None, &schedule()).unwrap();
        assert_eq!(
            a.units[0].jacobian.as_matrix(),
            b.units[0].jacobian.as_matrix()
        );
    }
}
