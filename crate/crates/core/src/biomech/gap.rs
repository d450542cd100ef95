use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biomech::sim::Plant;
use crate::error::Result;

/// Parameter perturbation that turns the nominal simulator into a stand-in
/// for the real rider the fine-tuning phase is meant to adapt to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealityGapConfig {
    /// Each muscle's peak torque is scaled by `1 + U(−spread, spread)`.
    pub t_max_spread: f64,
    /// Each joint profile's optimum moves by `U(−shift, shift)` degrees.
    pub q_opt_shift_deg: f64,
    /// Multiplies both resistance terms.
    pub resistance_scale: f64,
    pub seed: u64,
}

impl Default for RealityGapConfig {
    fn default() -> Self {
        Self { t_max_spread: 0.2, q_opt_shift_deg: 15.0, resistance_scale: 1.3, seed: 0 }
    }
}

impl RealityGapConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn apply(&self, plant: &Plant) -> Result<Plant> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut config = plant.config().get().clone();
        config.resistance_coulomb *= self.resistance_scale;
        config.resistance_viscous *= self.resistance_scale;
        let mut muscles = plant.muscles().to_vec();
        for m in &mut muscles {
            m.t_max *= 1.0 + self.t_max_spread * rng.random_range(-1.0..=1.0);
            for profile in [&mut m.hip, &mut m.knee].into_iter().flatten() {
                profile.q_opt += (self.q_opt_shift_deg * rng.random_range(-1.0..=1.0)).to_radians();
            }
        }
        Plant::with_muscles(config.validate()?, muscles)
    }
}
