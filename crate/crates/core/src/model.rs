//! Scenarios, sensors and the range measurement model.
//!
//! Each sensor `k` of cluster `i` observes `r = ‖x − a‖ + v` with
//! `v ~ N(0, σ²)`. Draws are taken from a seeded ChaCha stream in
//! lexicographic `(cluster, sensor)` order, so the data never depends on how
//! the solvers are scheduled.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to range draws, as a fraction of the arena diameter.
pub const RANGE_FLOOR_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    /// 1-based sensor id within its cluster.
    pub id: usize,
    pub position: Vec<f64>,
    /// Range noise standard deviation, in distance units.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based cluster id.
    pub id: usize,
    pub sensors: Vec<Sensor>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.sensors.iter().map(|s| s.position.as_slice())
    }

    pub fn centroid(&self) -> Vec<f64> {
        let dim = self.sensors.first().map_or(0, |s| s.position.len());
        let mut c = vec![0.0; dim];
        for s in &self.sensors {
            for (ci, p) in c.iter_mut().zip(&s.position) {
                *ci += p;
            }
        }
        let n = self.sensors.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

/// A complete localization experiment: geometry, topology, noise and event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dimension: usize,
    pub clusters: Vec<Cluster>,
    /// True event position `x*`.
    pub event: Vec<f64>,
    /// Undirected cluster-head links as 1-based `(i, j)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Noisy ranges `r_{i,k}`, indexed `[cluster][sensor]` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub ranges: Vec<Vec<f64>>,
    /// Positive clamp applied to every range.
    pub floor: f64,
}

impl MeasurementSet {
    pub fn cluster(&self, index: usize) -> &[f64] {
        &self.ranges[index]
    }
}

/// Euclidean distance `‖x − a‖`.
pub fn true_distance(x: &[f64], a: &[f64]) -> Result<f64> {
    if x.len() != a.len() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            a.len()
        )));
    }
    Ok(x.iter()
        .zip(a)
        .map(|(xi, ai)| (xi - ai).powi(2))
        .sum::<f64>()
        .sqrt())
}

impl Scenario {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    /// Check the structural invariants: `D ∈ {1,2,3}`, contiguous 1-based
    /// cluster ids, nonempty clusters, consistent dimensions, `σ ≥ 0` and edges
    /// that reference existing clusters.
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::InvalidInput(format!(
                "dimension must be 1, 2 or 3 (got {})",
                self.dimension
            )));
        }
        if self.clusters.is_empty() {
            return Err(Error::InvalidInput("scenario has no clusters".into()));
        }
        if self.event.len() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "event has {} coordinates, expected {}",
                self.event.len(),
                self.dimension
            )));
        }
        if self.event.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("event position is not finite".into()));
        }
        for (idx, cluster) in self.clusters.iter().enumerate() {
            if cluster.id != idx + 1 {
                return Err(Error::InvalidInput(format!(
                    "cluster ids must be contiguous from 1 (position {} has id {})",
                    idx + 1,
                    cluster.id
                )));
            }
            if cluster.is_empty() {
                return Err(Error::InvalidInput(format!("cluster {} is empty", cluster.id)));
            }
            for s in &cluster.sensors {
                if s.position.len() != self.dimension {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} sensor {} has {} coordinates, expected {}",
                        cluster.id,
                        s.id,
                        s.position.len(),
                        self.dimension
                    )));
                }
                if s.position.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} sensor {} position is not finite",
                        cluster.id, s.id
                    )));
                }
                if !(s.sigma >= 0.0) || !s.sigma.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} sensor {} has invalid sigma {}",
                        cluster.id, s.id, s.sigma
                    )));
                }
            }
        }
        let m = self.clusters.len();
        for &(i, j) in &self.edges {
            if i == 0 || j == 0 || i > m || j > m {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) references a cluster outside 1..={m}"
                )));
            }
        }
        Ok(())
    }

    /// Diagonal of the bounding box holding every sensor and the event.
    pub fn arena_diameter(&self) -> f64 {
        let mut lo = self.event.clone();
        let mut hi = self.event.clone();
        for c in &self.clusters {
            for p in c.positions() {
                for d in 0..self.dimension {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| (h - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Copy of the scenario with every sensor's `σ` replaced.
    pub fn with_uniform_sigma(&self, sigma: f64) -> Scenario {
        let mut s = self.clone();
        for c in &mut s.clusters {
            for sensor in &mut c.sensors {
                sensor.sigma = sigma;
            }
        }
        s
    }

    /// Noise-free ranges `d_{i,k}`.
    pub fn true_distances(&self) -> Vec<Vec<f64>> {
        self.clusters
            .iter()
            .map(|c| {
                c.positions()
                    .map(|a| distance(&self.event, a))
                    .collect()
            })
            .collect()
    }

    /// Built-in three-cluster scenario on the arena `[-10, 10]²` with a chain
    /// topology `1 – 2 – 3`. Every cluster is a four-microphone array a few
    /// thousandths of a unit across, so an isolated cluster localizes poorly
    /// along its bearing while the union of clusters is well posed.
    pub fn reference(sigma: f64) -> Scenario {
        let arrays: [([f64; 2], f64); 3] = [
            (REFERENCE_CENTERS[0], REFERENCE_APERTURES[0]),
            (REFERENCE_CENTERS[1], REFERENCE_APERTURES[1]),
            (REFERENCE_CENTERS[2], REFERENCE_APERTURES[2]),
        ];
        let clusters = arrays
            .iter()
            .enumerate()
            .map(|(ci, (center, half))| Cluster {
                id: ci + 1,
                sensors: REFERENCE_LAYOUT
                    .iter()
                    .enumerate()
                    .map(|(k, offset)| Sensor {
                        id: k + 1,
                        position: vec![center[0] + half * offset[0], center[1] + half * offset[1]],
                        sigma,
                    })
                    .collect(),
            })
            .collect();
        Scenario {
            dimension: 2,
            clusters,
            event: REFERENCE_EVENT.to_vec(),
            edges: vec![(1, 2), (2, 3)],
            seed: 1,
        }
    }

    /// Load a scenario from a TOML file (see [`ScenarioFile`]).
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_scenario()
    }

    pub fn to_toml(&self) -> String {
        let file = ScenarioFile {
            dimension: self.dimension,
            seed: self.seed,
            event: self.event.clone(),
            sigma: None,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterFile {
                    sensors: c
                        .sensors
                        .iter()
                        .map(|s| SensorFile {
                            position: s.position.clone(),
                            sigma: Some(s.sigma),
                        })
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("scenario serializes")
    }
}

const REFERENCE_EVENT: [f64; 2] = [10.0, 8.346];
const REFERENCE_CENTERS: [[f64; 2]; 3] = [[-5.9568, -5.1512], [-5.2644, -7.8952], [7.0175, 2.8027]];
const REFERENCE_APERTURES: [f64; 3] = [0.004735, 0.003943, 0.003054];
const REFERENCE_LAYOUT: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -0.6], [0.7, 1.0], [-0.8, 0.9]];

fn distance(x: &[f64], a: &[f64]) -> f64 {
    x.iter()
        .zip(a)
        .map(|(xi, ai)| (xi - ai).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Draw one noisy range per sensor: `r = max(floor, d + σ·z)`, `z ~ N(0, 1)`.
///
/// A standard-normal draw is consumed for every sensor regardless of `σ`, so
/// the noise realization of one sensor never depends on another sensor's `σ`.
pub fn generate_measurements(scenario: &Scenario, seed: u64) -> Result<MeasurementSet> {
    scenario.validate()?;
    let floor = RANGE_FLOOR_FRACTION * scenario.arena_diameter().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = scenario
        .clusters
        .iter()
        .map(|c| {
            c.sensors
                .iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let d = distance(&scenario.event, &s.position);
                    (d + s.sigma * z).max(floor)
                })
                .collect()
        })
        .collect();
    Ok(MeasurementSet { ranges, floor })
}

/// On-disk scenario layout. Cluster and sensor ids follow file order.
///
/// ```toml
/// dimension = 2
/// seed = 7
/// event = [11.0, 9.0]
/// sigma = 0.05            # default for sensors without their own sigma
/// edges = [[1, 2], [2, 3]]
///
/// [[clusters]]
/// [[clusters.sensors]]
/// position = [2.5, 2.5]
/// sigma = 0.05
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
    pub event: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    pub clusters: Vec<ClusterFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFile {
    pub sensors: Vec<SensorFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorFile {
    pub position: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let default_sigma = self.sigma;
        let clusters = self
            .clusters
            .into_iter()
            .enumerate()
            .map(|(ci, c)| {
                let sensors = c
                    .sensors
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let sigma = s.sigma.or(default_sigma).ok_or_else(|| {
                            Error::Config(format!(
                                "cluster {} sensor {} has no sigma and no default is set",
                                ci + 1,
                                k + 1
                            ))
                        })?;
                        Ok(Sensor {
                            id: k + 1,
                            position: s.position,
                            sigma,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Cluster { id: ci + 1, sensors })
            })
            .collect::<Result<Vec<_>>>()?;
        let scenario = Scenario {
            dimension: self.dimension,
            clusters,
            event: self.event,
            edges: self.edges.into_iter().map(|[i, j]| (i, j)).collect(),
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
