use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netsim::{Deployment, LinkGeometry};
use crate::rng::{self, Stream};
use crate::{Error, Observation, Result, N_TILTS};

/// Observation scale and reward moments estimated from random tilt
/// configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    /// Largest user SINR seen during calibration, in dB.
    pub max_sinr_db: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub calibrated: bool,
}

impl Normalizer {
    /// Moments of the per-cell raw rewards (population variance).
    pub fn from_samples(max_sinr_db: f64, cell_rewards: &[f64]) -> Result<Self> {
        if !(max_sinr_db.is_finite() && max_sinr_db > 0.0) {
            return Err(Error::InvalidArgument(format!("max SINR {max_sinr_db} dB cannot scale observations")));
        }
        if cell_rewards.len() < 2 {
            return Err(Error::InvalidArgument("need at least two reward samples".into()));
        }
        let (mean, std) = crate::env::mean_std(cell_rewards);
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::DegenerateCalibration);
        }
        Ok(Self {
            max_sinr_db,
            reward_mean: mean,
            reward_std: std,
            calibrated: true,
        })
    }

    pub fn normalize_observation(&self, o: &Observation) -> Observation {
        o.map(|v| v / self.max_sinr_db)
    }

    pub fn standardize(&self, r: f64) -> f64 {
        (r - self.reward_mean) / self.reward_std
    }

    /// Mean over cells of the standardized rewards.
    pub fn standardized_mean(&self, cell_rewards: &[f64]) -> f64 {
        cell_rewards.iter().map(|&r| self.standardize(r)).sum::<f64>() / cell_rewards.len() as f64
    }
}

/// Estimates the normalizer from `n_configs` uniformly random joint tilts,
/// each on a fresh user drop.
pub fn calibrate(d: &Deployment, n_configs: usize, seed: u64) -> Result<Normalizer> {
    if n_configs < 2 {
        return Err(Error::InvalidArgument("calibration needs at least two configurations".into()));
    }
    let mut rng = rng::stream(seed, Stream::Calibration);
    let mut max_sinr = f64::NEG_INFINITY;
    let mut rewards = Vec::with_capacity(n_configs * d.n_cells());
    for _ in 0..n_configs {
        let tilts: Vec<usize> = (0..d.n_cells()).map(|_| rng.gen_range(0..N_TILTS)).collect();
        let users = d.drop_users(d.params.n_users, rng.gen::<u64>() >> 1)?;
        let snap = LinkGeometry::new(d, &users).snapshot(&tilts)?;
        max_sinr = max_sinr.max(snap.max_sinr_db());
        rewards.extend_from_slice(&snap.cell_rewards);
    }
    Normalizer::from_samples(max_sinr, &rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::DeploymentParams;

    #[test]
    fn zero_variance_is_rejected() {
        assert!(matches!(
            Normalizer::from_samples(30.0, &[1.5; 10]),
            Err(Error::DegenerateCalibration)
        ));
    }

    #[test]
    fn two_point_moments() {
        let n = Normalizer::from_samples(30.0, &[0.0, 2.0]).unwrap();
        assert_eq!((n.reward_mean, n.reward_std), (1.0, 1.0));
        assert_eq!(n.standardize(2.0), 1.0);
        assert!(n.calibrated);
    }

    #[test]
    fn observation_scaling() {
        let n = Normalizer::from_samples(40.0, &[0.0, 2.0]).unwrap();
        assert_eq!(n.normalize_observation(&[40.0, 20.0, 0.0, -40.0]), [1.0, 0.5, 0.0, -1.0]);
    }

    #[test]
    fn calibration_standardizes_its_own_sample() {
        let params = DeploymentParams {
            n_users: 1000,
            ..Default::default()
        };
        let d = Deployment::generate(2, 21, &params).unwrap();
        let n = calibrate(&d, 1000, 6).unwrap();
        // regenerate the identical sample independently
        let mut rng = rng::stream(6, Stream::Calibration);
        let mut z = Vec::new();
        for _ in 0..1000 {
            let tilts: Vec<usize> = (0..6).map(|_| rng.gen_range(0..N_TILTS)).collect();
            let users = d.drop_users(1000, rng.gen::<u64>() >> 1).unwrap();
            let s = crate::netsim::compute_snapshot(&d, &users, &tilts).unwrap();
            z.extend(s.cell_rewards.iter().map(|&r| n.standardize(r)));
        }
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((v - 1.0).abs() < 1e-9, "var {v}");
        assert!(n.max_sinr_db > 0.0);
    }
}
