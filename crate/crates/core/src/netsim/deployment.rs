//! Base-station layouts and user drops.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::antenna::AntennaModel;
use super::radio::RadioParams;
use crate::rng::{self, Stream};
use crate::{Error, Result};

pub const DEPLOYMENT_VERSION: u32 = 1;
pub const USER_DROP_VERSION: u32 = 1;

/// Knobs for deployment generation and the radio model attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentParams {
    pub min_intersite_distance_m: f64,
    /// Simulation area per base station; the square area grows linearly
    /// with the station count so the mean intersite distance is preserved.
    pub area_per_station_m2: f64,
    pub cells_per_station: usize,
    pub antenna_height_m: f64,
    pub indoor_fraction: f64,
    pub n_users: usize,
    /// Total rejection-sampling budget over all stations.
    pub max_placement_attempts: usize,
    pub antenna: AntennaModel,
    pub radio: RadioParams,
}

impl Default for DeploymentParams {
    fn default() -> Self {
        Self {
            min_intersite_distance_m: 1500.0,
            area_per_station_m2: 3.0e6,
            cells_per_station: 3,
            antenna_height_m: 32.0,
            indoor_fraction: 0.5,
            n_users: 1000,
            max_placement_attempts: 100_000,
            antenna: AntennaModel::default(),
            radio: RadioParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStation {
    pub position: [f64; 2],
}

/// One sector. Azimuth is measured counter-clockwise from the +x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub id: usize,
    pub station: usize,
    pub azimuth_deg: f64,
}

/// Immutable network geometry. The simulation area is the square
/// `[-area_half_width, area_half_width]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deployment {
    pub version: u32,
    pub stations: Vec<BaseStation>,
    pub cells: Vec<Cell>,
    pub area_half_width_m: f64,
    pub rng_seed: u64,
    pub params: DeploymentParams,
}

impl Deployment {
    /// Places `n_base_stations` uniformly at random with hard-core rejection
    /// at the minimum intersite distance, each carrying evenly spaced sectors.
    pub fn generate(n_base_stations: usize, seed: u64, params: &DeploymentParams) -> Result<Self> {
        if n_base_stations == 0 {
            return Err(Error::InvalidArgument("n_base_stations must be at least 1".into()));
        }
        if params.cells_per_station == 0 {
            return Err(Error::InvalidArgument("cells_per_station must be at least 1".into()));
        }
        let half_width = (n_base_stations as f64 * params.area_per_station_m2).sqrt() / 2.0;
        let min_d2 = params.min_intersite_distance_m.powi(2);
        let mut rng = rng::stream(seed, Stream::Deployment);

        let mut positions: Vec<[f64; 2]> = Vec::with_capacity(n_base_stations);
        let mut attempts = 0usize;
        while positions.len() < n_base_stations {
            if attempts >= params.max_placement_attempts {
                return Err(Error::PlacementFailed {
                    requested: n_base_stations,
                    placed: positions.len(),
                    attempts,
                });
            }
            attempts += 1;
            let p = [
                rng.gen_range(-half_width..half_width),
                rng.gen_range(-half_width..half_width),
            ];
            let clear = positions
                .iter()
                .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= min_d2);
            if clear {
                positions.push(p);
            }
        }

        let stations = positions.into_iter().map(|position| BaseStation { position }).collect();
        Self::with_sectorized_stations(stations, half_width, seed, params.clone())
    }

    /// Builds a deployment from given station positions, attaching
    /// `cells_per_station` sectors at evenly spaced azimuths starting at 0°.
    pub fn with_sectorized_stations(
        stations: Vec<BaseStation>,
        area_half_width_m: f64,
        rng_seed: u64,
        params: DeploymentParams,
    ) -> Result<Self> {
        let per = params.cells_per_station;
        let cells = (0..stations.len())
            .flat_map(|s| {
                (0..per).map(move |k| Cell {
                    id: s * per + k,
                    station: s,
                    azimuth_deg: 360.0 * k as f64 / per as f64,
                })
            })
            .collect();
        Self::from_parts(stations, cells, area_half_width_m, rng_seed, params)
    }

    /// Builds a deployment with an explicit cell list (e.g. one sector per
    /// station aimed at a chosen direction).
    pub fn from_parts(
        stations: Vec<BaseStation>,
        cells: Vec<Cell>,
        area_half_width_m: f64,
        rng_seed: u64,
        params: DeploymentParams,
    ) -> Result<Self> {
        let d = Self {
            version: DEPLOYMENT_VERSION,
            stations,
            cells,
            area_half_width_m,
            rng_seed,
            params,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DEPLOYMENT_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: DEPLOYMENT_VERSION,
            });
        }
        if self.stations.is_empty() || self.cells.is_empty() {
            return Err(Error::InvalidArgument("deployment has no stations or cells".into()));
        }
        if !(self.area_half_width_m > 0.0) {
            return Err(Error::InvalidArgument("area half width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.params.indoor_fraction) {
            return Err(Error::InvalidArgument("indoor_fraction must lie in [0, 1]".into()));
        }
        for (k, c) in self.cells.iter().enumerate() {
            if c.id != k {
                return Err(Error::InvalidArgument(format!("cell ids must be dense, found {} at {k}", c.id)));
            }
            if c.station >= self.stations.len() {
                return Err(Error::InvalidArgument(format!("cell {k} references missing station {}", c.station)));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn antenna_height_m(&self) -> f64 {
        self.params.antenna_height_m
    }

    pub fn indoor_fraction(&self) -> f64 {
        self.params.indoor_fraction
    }

    pub fn cell_position(&self, cell: usize) -> [f64; 2] {
        self.stations[self.cells[cell].station].position
    }

    /// Smallest distance between two stations, `None` for a single station.
    pub fn min_intersite_distance(&self) -> Option<f64> {
        let p = &self.stations;
        let mut best: Option<f64> = None;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d = distance(p[i].position, p[j].position);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best
    }

    pub fn area_m2(&self) -> f64 {
        (2.0 * self.area_half_width_m).powi(2)
    }

    /// Draws `n_users` users uniformly over the area.
    pub fn drop_users(&self, n_users: usize, seed: u64) -> Result<UserDrop> {
        if n_users == 0 {
            return Err(Error::InvalidArgument("n_users must be at least 1".into()));
        }
        let hw = self.area_half_width_m;
        let mut rng = rng::stream(seed, Stream::Users);
        let mut positions = Vec::with_capacity(n_users);
        let mut indoor = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            positions.push([rng.gen_range(-hw..hw), rng.gen_range(-hw..hw)]);
            indoor.push(rng.gen_bool(self.params.indoor_fraction));
        }
        Ok(UserDrop {
            version: USER_DROP_VERSION,
            seed,
            positions,
            indoor,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }
}

/// One placement of all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDrop {
    pub version: u32,
    pub seed: u64,
    pub positions: Vec<[f64; 2]>,
    pub indoor: Vec<bool>,
}

impl UserDrop {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let u: Self = serde_json::from_str(s)?;
        if u.version != USER_DROP_VERSION {
            return Err(Error::Version {
                found: u.version,
                expected: USER_DROP_VERSION,
            });
        }
        if u.positions.len() != u.indoor.len() {
            return Err(Error::DimensionMismatch {
                expected: u.positions.len(),
                actual: u.indoor.len(),
            });
        }
        Ok(u)
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
