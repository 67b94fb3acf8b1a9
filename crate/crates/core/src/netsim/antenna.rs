//! Parametric three-sector antenna pattern.

use serde::{Deserialize, Serialize};

/// Sector antenna with separable horizontal/vertical attenuation.
///
/// Attenuations follow the usual parabolic main-lobe shape, each clipped at
/// its own floor, and their sum is clipped at `max_attenuation_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaModel {
    pub max_gain_dbi: f64,
    pub horizontal_beamwidth_deg: f64,
    pub vertical_beamwidth_deg: f64,
    /// Floor of the vertical attenuation (side-lobe level).
    pub side_lobe_floor_v_db: f64,
    /// Floor of the horizontal attenuation (front-to-back ratio).
    pub front_back_ratio_h_db: f64,
    pub max_attenuation_db: f64,
    pub tx_power_w: f64,
}

impl Default for AntennaModel {
    fn default() -> Self {
        Self {
            max_gain_dbi: 15.0,
            horizontal_beamwidth_deg: 65.0,
            vertical_beamwidth_deg: 6.5,
            side_lobe_floor_v_db: 20.0,
            front_back_ratio_h_db: 25.0,
            max_attenuation_db: 30.0,
            tx_power_w: 40.0,
        }
    }
}

impl AntennaModel {
    /// Horizontal attenuation (dB, ≥ 0) at `offset_deg` from boresight.
    pub fn horizontal_attenuation_db(&self, offset_deg: f64) -> f64 {
        let phi = wrap_degrees(offset_deg);
        (12.0 * (phi / self.horizontal_beamwidth_deg).powi(2)).min(self.front_back_ratio_h_db)
    }

    /// Vertical attenuation (dB, ≥ 0) for a user seen `elevation_deg` below
    /// the horizon by an antenna down-tilted by `tilt_deg`.
    pub fn vertical_attenuation_db(&self, elevation_deg: f64, tilt_deg: f64) -> f64 {
        (12.0 * ((elevation_deg - tilt_deg) / self.vertical_beamwidth_deg).powi(2))
            .min(self.side_lobe_floor_v_db)
    }

    /// Combines the two attenuations into an antenna gain in dBi.
    pub fn gain_from_attenuations_db(&self, horizontal_db: f64, vertical_db: f64) -> f64 {
        self.max_gain_dbi - (horizontal_db + vertical_db).min(self.max_attenuation_db)
    }

    pub fn gain_db(&self, offset_deg: f64, elevation_deg: f64, tilt_deg: f64) -> f64 {
        self.gain_from_attenuations_db(
            self.horizontal_attenuation_db(offset_deg),
            self.vertical_attenuation_db(elevation_deg, tilt_deg),
        )
    }
}

/// Wraps an angle into [-180, 180).
pub fn wrap_degrees(angle: f64) -> f64 {
    (angle + 180.0).rem_euclid(360.0) - 180.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boresight_gain_is_maximal() {
        let a = AntennaModel::default();
        assert_eq!(a.gain_db(0.0, 5.0, 5.0), 15.0);
    }

    #[test]
    fn half_beamwidth_is_three_db_down() {
        let a = AntennaModel::default();
        assert!((a.horizontal_attenuation_db(32.5) - 3.0).abs() < 1e-12);
        assert!((a.vertical_attenuation_db(3.25, 0.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn back_lobe_is_floored() {
        let a = AntennaModel::default();
        assert_eq!(a.horizontal_attenuation_db(180.0), 25.0);
        assert_eq!(a.gain_db(180.0, 0.0, 15.0), 15.0 - 30.0);
    }

    #[test]
    fn wrap_handles_negative_and_large_angles() {
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-190.0), 170.0);
        assert_eq!(wrap_degrees(720.0), 0.0);
    }

    proptest! {
        #[test]
        fn gain_never_exceeds_max(phi in -720.0f64..720.0, theta in -90.0f64..90.0, tilt in 0.0f64..15.0) {
            let a = AntennaModel::default();
            prop_assert!(a.gain_db(phi, theta, tilt) <= a.max_gain_dbi);
            prop_assert!(a.horizontal_attenuation_db(phi) >= 0.0);
            prop_assert!(a.vertical_attenuation_db(theta, tilt) >= 0.0);
        }
    }
}
