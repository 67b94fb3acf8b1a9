//! Downlink link budget: path gain, association, SINR, throughput, rewards.

use serde::{Deserialize, Serialize};

use super::antenna::AntennaModel;
use super::deployment::{Deployment, UserDrop};
use crate::{Error, Observation, Result, N_TILTS, OBS_DIM};

/// Percentiles (in %) of the per-cell SINR distribution used as observation.
pub const OBSERVATION_PERCENTILES: [f64; OBS_DIM] = [10.0, 25.0, 50.0, 75.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub n_prb: usize,
    pub prb_bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub noise_figure_db: f64,
    pub indoor_loss_db: f64,
    /// 2-D distance clamp applied before the path-loss law.
    pub min_distance_m: f64,
    /// Observation reported by a cell without users.
    pub empty_cell_sinr_db: f64,
    /// Mean throughput assumed for a cell without users when computing its reward.
    pub empty_cell_throughput_bps: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            n_prb: 50,
            prb_bandwidth_hz: 180e3,
            noise_psd_dbm_per_hz: -174.0,
            noise_figure_db: 9.0,
            indoor_loss_db: 20.0,
            min_distance_m: 35.0,
            empty_cell_sinr_db: -20.0,
            empty_cell_throughput_bps: 1.0,
        }
    }
}

impl RadioParams {
    pub fn bandwidth_hz(&self) -> f64 {
        self.n_prb as f64 * self.prb_bandwidth_hz
    }

    /// Thermal noise over the carrier plus the noise figure, in watts.
    pub fn noise_power_w(&self) -> f64 {
        let dbm = self.noise_psd_dbm_per_hz + 10.0 * self.bandwidth_hz().log10() + self.noise_figure_db;
        dbm_to_watts(dbm)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Log-distance urban-macro path loss in dB at 2-D distance `d_m`.
pub fn path_loss_db(d_m: f64, min_distance_m: f64) -> f64 {
    128.1 + 37.6 * (d_m.max(min_distance_m) / 1000.0).log10()
}

/// Round-robin Shannon throughput of one user sharing a cell with `load - 1` others.
pub fn shannon_throughput(n_prb: usize, prb_bandwidth_hz: f64, load: usize, sinr: f64) -> f64 {
    n_prb as f64 * prb_bandwidth_hz / load as f64 * (1.0 + sinr).log2()
}

/// Percentile of an ascending sample with linear interpolation between
/// order statistics (rank `p/100 · (n-1)`).
pub fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let w = rank - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Tilt-independent part of every cell–user link for one user drop.
///
/// Only the vertical attenuation depends on tilt, so snapshots for many
/// tilt configurations can be derived from one geometry.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    n_cells: usize,
    n_users: usize,
    antenna: AntennaModel,
    radio: RadioParams,
    // cell-major, index c * n_users + u
    horizontal_att_db: Vec<f64>,
    elevation_deg: Vec<f64>,
    loss_db: Vec<f64>,
}

impl LinkGeometry {
    pub fn new(d: &Deployment, users: &UserDrop) -> Self {
        let n_cells = d.n_cells();
        let n_users = users.len();
        let radio = &d.params.radio;
        let antenna = &d.params.antenna;
        let h = d.antenna_height_m();
        let mut horizontal_att_db = Vec::with_capacity(n_cells * n_users);
        let mut elevation_deg = Vec::with_capacity(n_cells * n_users);
        let mut loss_db = Vec::with_capacity(n_cells * n_users);
        for cell in &d.cells {
            let bs = d.stations[cell.station].position;
            for (p, &indoor) in users.positions.iter().zip(&users.indoor) {
                let dx = p[0] - bs[0];
                let dy = p[1] - bs[1];
                let dist = dx.hypot(dy).max(radio.min_distance_m);
                let bearing = dy.atan2(dx).to_degrees();
                horizontal_att_db.push(antenna.horizontal_attenuation_db(bearing - cell.azimuth_deg));
                elevation_deg.push(h.atan2(dist).to_degrees());
                let mut loss = path_loss_db(dist, radio.min_distance_m);
                if indoor {
                    loss += radio.indoor_loss_db;
                }
                loss_db.push(loss);
            }
        }
        Self {
            n_cells,
            n_users,
            antenna: antenna.clone(),
            radio: radio.clone(),
            horizontal_att_db,
            elevation_deg,
            loss_db,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Path loss in dB (tilt-independent).
    pub fn loss_db(&self, cell: usize, user: usize) -> f64 {
        self.loss_db[cell * self.n_users + user]
    }

    /// Linear antenna gain × path loss of every user for one cell.
    pub fn fill_pathgain_row(&self, cell: usize, tilt: usize, out: &mut [f64]) {
        let base = cell * self.n_users;
        let tilt_deg = tilt as f64;
        for (u, slot) in out.iter_mut().enumerate() {
            let k = base + u;
            let v = self.antenna.vertical_attenuation_db(self.elevation_deg[k], tilt_deg);
            let g = self.antenna.gain_from_attenuations_db(self.horizontal_att_db[k], v);
            *slot = db_to_linear(g - self.loss_db[k]);
        }
    }

    pub fn pathgain(&self, tilts: &[usize]) -> Result<Vec<f64>> {
        check_tilts(tilts, self.n_cells)?;
        let mut pg = vec![0.0; self.n_cells * self.n_users];
        for (c, row) in pg.chunks_mut(self.n_users.max(1)).enumerate().take(self.n_cells) {
            self.fill_pathgain_row(c, tilts[c], row);
        }
        Ok(pg)
    }

    pub fn snapshot(&self, tilts: &[usize]) -> Result<RadioSnapshot> {
        let pg = self.pathgain(tilts)?;
        let power = vec![self.antenna.tx_power_w; self.n_cells];
        Ok(RadioSnapshot::from_pathgain(self.n_cells, pg, &power, &self.radio))
    }

    /// Snapshot after replacing one cell's row of a cached path-gain matrix.
    pub fn snapshot_with_rows(&self, pathgain: &mut [f64], changed: &[(usize, usize)]) -> RadioSnapshot {
        for &(cell, tilt) in changed {
            let row = &mut pathgain[cell * self.n_users..(cell + 1) * self.n_users];
            self.fill_pathgain_row(cell, tilt, row);
        }
        let power = vec![self.antenna.tx_power_w; self.n_cells];
        RadioSnapshot::from_pathgain(self.n_cells, pathgain.to_vec(), &power, &self.radio)
    }
}

fn check_tilts(tilts: &[usize], n_cells: usize) -> Result<()> {
    if tilts.len() != n_cells {
        return Err(Error::DimensionMismatch {
            expected: n_cells,
            actual: tilts.len(),
        });
    }
    if let Some(&t) = tilts.iter().find(|&&t| t >= N_TILTS) {
        return Err(Error::InvalidArgument(format!("tilt index {t} out of range")));
    }
    Ok(())
}

/// Link state of one user drop under one joint tilt configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioSnapshot {
    pub n_cells: usize,
    pub n_users: usize,
    /// Cell-major `n_cells × n_users` linear gain × path loss.
    pub pathgain: Vec<f64>,
    pub tx_power_w: Vec<f64>,
    pub association: Vec<usize>,
    /// Linear SINR per user.
    pub sinr: Vec<f64>,
    /// Bits per second per user.
    pub throughput: Vec<f64>,
    pub cell_loads: Vec<usize>,
    /// Natural log of the mean user throughput in each cell.
    pub cell_rewards: Vec<f64>,
    empty_cell_sinr_db: f64,
}

impl RadioSnapshot {
    /// Associates users by maximum received power (ties → lowest cell id),
    /// then evaluates SINR, round-robin throughput and per-cell rewards.
    pub fn from_pathgain(n_cells: usize, pathgain: Vec<f64>, tx_power_w: &[f64], radio: &RadioParams) -> Self {
        assert_eq!(tx_power_w.len(), n_cells);
        assert!(n_cells > 0 && pathgain.len() % n_cells == 0);
        let n_users = pathgain.len() / n_cells;
        let noise = radio.noise_power_w();

        let mut association = vec![0usize; n_users];
        let mut sinr = vec![0.0; n_users];
        let mut rx = vec![0.0; n_cells];
        for u in 0..n_users {
            let mut best = 0usize;
            for c in 0..n_cells {
                rx[c] = tx_power_w[c] * pathgain[c * n_users + u];
                if rx[c] > rx[best] {
                    best = c;
                }
            }
            let mut interference = 0.0;
            for (c, &p) in rx.iter().enumerate() {
                if c != best {
                    interference += p;
                }
            }
            association[u] = best;
            sinr[u] = rx[best] / (interference + noise);
        }

        let mut cell_loads = vec![0usize; n_cells];
        for &c in &association {
            cell_loads[c] += 1;
        }
        let throughput: Vec<f64> = association
            .iter()
            .zip(&sinr)
            .map(|(&c, &s)| shannon_throughput(radio.n_prb, radio.prb_bandwidth_hz, cell_loads[c], s))
            .collect();

        let mut sums = vec![0.0; n_cells];
        for (&c, &t) in association.iter().zip(&throughput) {
            sums[c] += t;
        }
        let cell_rewards = sums
            .iter()
            .zip(&cell_loads)
            .map(|(&s, &n)| {
                if n == 0 {
                    radio.empty_cell_throughput_bps.ln()
                } else {
                    (s / n as f64).ln()
                }
            })
            .collect();

        Self {
            n_cells,
            n_users,
            pathgain,
            tx_power_w: tx_power_w.to_vec(),
            association,
            sinr,
            throughput,
            cell_loads,
            cell_rewards,
            empty_cell_sinr_db: radio.empty_cell_sinr_db,
        }
    }

    pub fn received_power_w(&self, cell: usize, user: usize) -> f64 {
        self.tx_power_w[cell] * self.pathgain[cell * self.n_users + user]
    }

    pub fn sinr_db(&self, user: usize) -> f64 {
        linear_to_db(self.sinr[user])
    }

    pub fn max_sinr_db(&self) -> f64 {
        self.sinr.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10() * 10.0
    }

    /// SINR (dB) of every user served by `cell`, in user order.
    pub fn cell_sinr_db(&self, cell: usize) -> Vec<f64> {
        self.association
            .iter()
            .zip(&self.sinr)
            .filter(|(&c, _)| c == cell)
            .map(|(_, &s)| linear_to_db(s))
            .collect()
    }

    /// Raw SINR percentiles of one cell; the sentinel vector when it is empty.
    pub fn observe(&self, cell: usize) -> Observation {
        let mut v = self.cell_sinr_db(cell);
        percentile_observation(&mut v, self.empty_cell_sinr_db)
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); self.n_cells];
        for (&c, &s) in self.association.iter().zip(&self.sinr) {
            per_cell[c].push(linear_to_db(s));
        }
        per_cell
            .iter_mut()
            .map(|v| percentile_observation(v, self.empty_cell_sinr_db))
            .collect()
    }

    /// Sum of per-cell log-throughput rewards.
    pub fn global_reward(&self) -> f64 {
        self.cell_rewards.iter().sum()
    }
}

fn percentile_observation(values: &mut [f64], sentinel: f64) -> Observation {
    if values.is_empty() {
        return [sentinel; OBS_DIM];
    }
    values.sort_by(f64::total_cmp);
    let mut out = [0.0; OBS_DIM];
    for (o, &p) in out.iter_mut().zip(&OBSERVATION_PERCENTILES) {
        *o = percentile_linear(values, p);
    }
    out
}

/// Full snapshot for a deployment, user drop and joint tilt.
pub fn compute_snapshot(d: &Deployment, users: &UserDrop, tilts: &[usize]) -> Result<RadioSnapshot> {
    LinkGeometry::new(d, users).snapshot(tilts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::deployment::{BaseStation, Cell, DeploymentParams};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn radio_with_noise(noise_w: f64) -> RadioParams {
        // choose the noise PSD so the total noise equals `noise_w`
        let r = RadioParams::default();
        let dbm = linear_to_db(noise_w) + 30.0;
        RadioParams {
            noise_psd_dbm_per_hz: dbm - 10.0 * r.bandwidth_hz().log10() - r.noise_figure_db,
            ..r
        }
    }

    #[test]
    fn single_link_sinr_is_signal_over_noise() {
        let radio = radio_with_noise(1e-13);
        let s = RadioSnapshot::from_pathgain(1, vec![1e-10], &[1.0], &radio);
        assert!(rel(s.sinr[0], 1000.0) < 1e-9);
        assert!((s.sinr_db(0) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_pair_is_near_zero_db() {
        let radio = radio_with_noise(1e-13);
        let s = RadioSnapshot::from_pathgain(2, vec![1e-10, 1e-10], &[1.0, 1.0], &radio);
        assert_eq!(s.association[0], 0, "tie goes to the lowest id");
        let expected = 1e-10 / (1e-10 + 1e-13);
        assert!(rel(s.sinr[0], expected) < 1e-9);
        assert!(s.sinr_db(0).abs() < 0.01);
    }

    #[test]
    fn one_user_unit_sinr_gets_nine_mbps() {
        let t = shannon_throughput(50, 180e3, 1, 1.0);
        assert!(rel(t, 9.0e6) < 1e-9);
        let radio = radio_with_noise(1e-13);
        let s = RadioSnapshot::from_pathgain(1, vec![1e-13], &[1.0], &radio);
        assert!(rel(s.throughput[0], 9.0e6) < 1e-9);
        assert!(rel(s.global_reward(), (9.0e6f64).ln()) < 1e-9);
    }

    #[test]
    fn noise_budget_matches_hand_computation() {
        let n = RadioParams::default().noise_power_w();
        // -174 dBm/Hz + 10log10(9e6) + 9 dB
        let dbm = -174.0 + 10.0 * 9.0e6f64.log10() + 9.0;
        assert!(rel(n, 10f64.powf((dbm - 30.0) / 10.0)) < 1e-12);
    }

    #[test]
    fn percentiles_match_reference() {
        let v: Vec<f64> = (0..=100).map(|x| x as f64).collect();
        for p in OBSERVATION_PERCENTILES {
            assert!((percentile_linear(&v, p) - p).abs() < 1e-12);
        }
        // independent check against a fixed uneven sample (numpy 'linear')
        let v = [1.0, 2.0, 4.0, 7.0, 11.0];
        assert!((percentile_linear(&v, 10.0) - 1.4).abs() < 1e-12);
        assert!((percentile_linear(&v, 25.0) - 2.0).abs() < 1e-12);
        assert!((percentile_linear(&v, 50.0) - 4.0).abs() < 1e-12);
        assert!((percentile_linear(&v, 75.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_and_empty_cell_observations() {
        let radio = radio_with_noise(1e-13);
        // user 0 at exactly 0 dB
        let s = RadioSnapshot::from_pathgain(2, vec![1e-13, 0.0], &[1.0, 1.0], &radio);
        let o = s.observe(0);
        for v in o {
            assert!(v.abs() < 1e-9);
        }
        assert_eq!(s.observe(1), [radio.empty_cell_sinr_db; 4]);
        assert_eq!(s.observe_all()[1], [radio.empty_cell_sinr_db; 4]);
        assert_eq!(s.cell_rewards[1], 0.0);
    }

    fn tiny_deployment() -> Deployment {
        Deployment::generate(2, 7, &DeploymentParams::default()).unwrap()
    }

    #[test]
    fn association_is_argmax_and_loads_conserve() {
        let d = tiny_deployment();
        let users = d.drop_users(500, 3).unwrap();
        let tilts: Vec<usize> = (0..d.n_cells()).map(|c| (c * 5) % 16).collect();
        let s = compute_snapshot(&d, &users, &tilts).unwrap();
        for u in 0..s.n_users {
            let serving = s.received_power_w(s.association[u], u);
            for c in 0..s.n_cells {
                assert!(serving >= s.received_power_w(c, u));
            }
            assert!(s.sinr[u] > 0.0 && s.throughput[u] > 0.0);
        }
        assert_eq!(s.cell_loads.iter().sum::<usize>(), 500);
        assert_eq!(s.cell_rewards.len(), d.n_cells());
    }

    #[test]
    fn per_cell_throughput_sum_matches_direct_summation() {
        let d = tiny_deployment();
        let users = d.drop_users(300, 4).unwrap();
        let s = compute_snapshot(&d, &users, &vec![4; d.n_cells()]).unwrap();
        let r = &d.params.radio;
        for c in 0..s.n_cells {
            let members: Vec<usize> = (0..s.n_users).filter(|&u| s.association[u] == c).collect();
            if members.is_empty() {
                continue;
            }
            let got: f64 = members.iter().map(|&u| s.throughput[u]).sum();
            let direct = r.n_prb as f64 * r.prb_bandwidth_hz
                * members.iter().map(|&u| (1.0 + s.sinr[u]).log2()).sum::<f64>()
                / members.len() as f64;
            assert!(rel(got, direct) < 1e-12);
        }
    }

    #[test]
    fn global_reward_recomputed_from_raw_throughput() {
        let d = tiny_deployment();
        let users = d.drop_users(1000, 12).unwrap();
        let s = compute_snapshot(&d, &users, &vec![crate::DEFAULT_TILT; 6]).unwrap();
        let mut oracle = 0.0;
        for c in 0..6 {
            let t: Vec<f64> = (0..s.n_users)
                .filter(|&u| s.association[u] == c)
                .map(|u| s.throughput[u])
                .collect();
            oracle += if t.is_empty() { 0.0 } else { (t.iter().sum::<f64>() / t.len() as f64).ln() };
        }
        assert!((s.global_reward() - oracle).abs() < 1e-9);
    }

    #[test]
    fn identical_cells_at_mean_e_give_reward_n() {
        let radio = RadioParams::default();
        // throughput = bw·log2(1+ρ) = e  ⇒  ρ = 2^(e/bw) − 1, received/noise
        let rho = 2f64.powf(std::f64::consts::E / radio.bandwidth_hz()) - 1.0;
        let noise = radio.noise_power_w();
        // three isolated cells, one user each, no cross gain
        let mut pg = vec![0.0; 9];
        for c in 0..3 {
            pg[c * 3 + c] = rho * noise;
        }
        let s = RadioSnapshot::from_pathgain(3, pg, &[1.0; 3], &radio);
        assert!((s.global_reward() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn sinr_decreases_with_interferer_power() {
        let radio = RadioParams::default();
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let pg = vec![1e-9, 1e-12 * k as f64];
            let s = RadioSnapshot::from_pathgain(2, pg, &[1.0, 1.0], &radio);
            assert!(s.sinr[0] < last);
            last = s.sinr[0];
        }
    }

    #[test]
    fn tilt_changes_only_vertical_gain() {
        let d = tiny_deployment();
        let users = d.drop_users(200, 5).unwrap();
        let geo = LinkGeometry::new(&d, &users);
        let a = geo.snapshot(&vec![0; 6]).unwrap();
        let b = geo.snapshot(&vec![15; 6]).unwrap();
        let fresh = compute_snapshot(&d, &users, &vec![15; 6]).unwrap();
        assert_eq!(b, fresh);
        assert_ne!(a.pathgain, b.pathgain);
        // ratio of path gains equals the ratio of antenna gains alone
        let ant = &d.params.antenna;
        for c in 0..6 {
            let bs = d.cell_position(c);
            for u in 0..users.len() {
                let p = users.positions[u];
                let dist = (p[0] - bs[0]).hypot(p[1] - bs[1]).max(35.0);
                let phi = (p[1] - bs[1]).atan2(p[0] - bs[0]).to_degrees() - d.cells[c].azimuth_deg;
                let theta = 32f64.atan2(dist).to_degrees();
                let ratio = db_to_linear(ant.gain_db(phi, theta, 0.0) - ant.gain_db(phi, theta, 15.0));
                let k = c * users.len() + u;
                assert!(rel(a.pathgain[k] / b.pathgain[k], ratio) < 1e-9);
            }
        }
    }

    #[test]
    fn snapshots_are_bitwise_deterministic() {
        let d = tiny_deployment();
        let users = d.drop_users(400, 9).unwrap();
        let t = vec![3, 7, 11, 0, 15, 8];
        assert_eq!(compute_snapshot(&d, &users, &t).unwrap(), compute_snapshot(&d, &users, &t).unwrap());
    }

    #[test]
    fn cached_row_update_matches_full_recompute() {
        let d = tiny_deployment();
        let users = d.drop_users(100, 2).unwrap();
        let geo = LinkGeometry::new(&d, &users);
        let mut pg = geo.pathgain(&vec![8; 6]).unwrap();
        let s = geo.snapshot_with_rows(&mut pg, &[(2, 1), (4, 14)]);
        assert_eq!(s, geo.snapshot(&[8, 8, 1, 8, 14, 8]).unwrap());
    }

    #[test]
    fn rejects_bad_tilts() {
        let d = tiny_deployment();
        let users = d.drop_users(10, 2).unwrap();
        assert!(compute_snapshot(&d, &users, &[0; 5]).is_err());
        assert!(compute_snapshot(&d, &users, &[16; 6]).is_err());
    }

    #[test]
    fn far_away_interferer_is_negligible() {
        let params = DeploymentParams::default();
        let stations = vec![
            BaseStation { position: [0.0, 0.0] },
            BaseStation { position: [100_000.0, 0.0] },
        ];
        let cells = vec![
            Cell { id: 0, station: 0, azimuth_deg: 0.0 },
            Cell { id: 1, station: 1, azimuth_deg: 180.0 },
        ];
        let d = Deployment::from_parts(stations, cells, 1000.0, 0, params).unwrap();
        let users = d.drop_users(50, 1).unwrap();
        let s = compute_snapshot(&d, &users, &[8, 8]).unwrap();
        assert!(s.association.iter().all(|&c| c == 0));
    }
}
