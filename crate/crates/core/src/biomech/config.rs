use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biomech::kinematics::{pedal_position, Side};
use crate::error::{Error, Result};

/// Strict margin applied to the reachability annulus, in metres.
pub const REACH_MARGIN: f64 = 1e-6;

/// Rider and crankset geometry plus the crank dynamics constants.
///
/// The crank centre is the origin; the hip sits at `(crank_hip_dx, crank_hip_dy)`.
/// Crank angles grow counter-clockwise, which is forward pedalling for a rider
/// facing the negative x direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CyclingConfig {
    pub crank_hip_dx: f64,
    pub crank_hip_dy: f64,
    pub crank_arm: f64,
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Backrest inclination from horizontal; only shifts the hip-angle origin.
    pub seat_angle: f64,
    pub n_muscles_per_leg: usize,
    pub resistance_coulomb: f64,
    pub resistance_viscous: f64,
    pub crank_inertia: f64,
    /// When set, the simulator built from this config carries the default
    /// reality-gap perturbation drawn with this seed.
    #[serde(default)]
    pub perturbation_seed: Option<u64>,
}

impl Default for CyclingConfig {
    fn default() -> Self {
        Self {
            crank_hip_dx: 0.62,
            crank_hip_dy: 0.20,
            crank_arm: 0.17,
            thigh_len: 0.44,
            shank_len: 0.43,
            seat_angle: 60f64.to_radians(),
            n_muscles_per_leg: 2,
            resistance_coulomb: 1.0,
            resistance_viscous: 2.0,
            crank_inertia: 1.5,
            perturbation_seed: None,
        }
    }
}

impl CyclingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hip(&self) -> [f64; 2] {
        [self.crank_hip_dx, self.crank_hip_dy]
    }

    /// Checks parameter signs and leg reachability at 1 degree steps over a
    /// full revolution for both legs.
    pub fn validate(self) -> Result<ValidatedConfig> {
        let positive = [
            ("crank_arm", self.crank_arm),
            ("thigh_len", self.thigh_len),
            ("shank_len", self.shank_len),
            ("crank_inertia", self.crank_inertia),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveParameter { name });
            }
        }
        let finite = [
            ("crank_hip_dx", self.crank_hip_dx),
            ("crank_hip_dy", self.crank_hip_dy),
            ("seat_angle", self.seat_angle),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::InvalidParameter { name, reason: "not finite".into() });
            }
        }
        for (name, value) in [
            ("resistance_coulomb", self.resistance_coulomb),
            ("resistance_viscous", self.resistance_viscous),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter { name, reason: "must be >= 0".into() });
            }
        }
        if !(2..=3).contains(&self.n_muscles_per_leg) {
            return Err(Error::InvalidParameter {
                name: "n_muscles_per_leg",
                reason: format!("{} is not 2 or 3", self.n_muscles_per_leg),
            });
        }

        let lo = (self.thigh_len - self.shank_len).abs() + REACH_MARGIN;
        let hi = self.thigh_len + self.shank_len - REACH_MARGIN;
        let hip = self.hip();
        for side in [Side::Right, Side::Left] {
            for deg in 0..360 {
                let angle = f64::from(deg).to_radians();
                let p = pedal_position(&self, angle, side);
                let dist = (p[0] - hip[0]).hypot(p[1] - hip[1]);
                if !(dist > lo && dist < hi) {
                    return Err(Error::Unreachable {
                        crank_angle_deg: f64::from(deg),
                        side: side.name(),
                    });
                }
            }
        }
        Ok(ValidatedConfig(self))
    }
}

/// A [`CyclingConfig`] that passed [`CyclingConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(CyclingConfig);

impl ValidatedConfig {
    pub fn get(&self) -> &CyclingConfig {
        &self.0
    }

    pub fn into_inner(self) -> CyclingConfig {
        self.0
    }

    /// Hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.0).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::ops::Deref for ValidatedConfig {
    type Target = CyclingConfig;
    fn deref(&self) -> &CyclingConfig {
        &self.0
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= 2.0 * PI {
        0.0
    } else {
        wrapped
    }
}
