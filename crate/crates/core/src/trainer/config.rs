use serde::{Deserialize, Serialize};

use crate::city::Scenario;
use crate::error::{Error, Result};
use crate::game::{AdversaryBounds, EmptySpotRule};

/// Hyperparameters of a training run. Every field has a default; see
/// [`TrainerConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Soft target-update coefficient.
    pub tau: f64,
    /// Regression step toward the improving vertex.
    pub delta: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Weight of supply-demand fairness in the reward.
    pub beta: f64,
    pub adversary_bounds: AdversaryBounds,
    /// Standard deviation of Gaussian exploration noise on policy outputs.
    pub exploration_sigma: f64,
    /// Disables the adversaries (non-robust baseline).
    pub baseline: bool,
    pub seed: u64,
    pub replay_capacity: usize,
    pub empty_spot_rule: EmptySpotRule,
    /// Divisor for count features; `None` means vehicles per region.
    pub obs_scale: Option<f64>,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
    /// Multiplies rewards in the critic's TD targets only; logged metrics stay unscaled.
    pub reward_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 600,
            learning_rate: 0.001,
            tau: 0.01,
            delta: 0.1,
            episodes: 300,
            steps_per_episode: 48,
            beta: 1.0,
            adversary_bounds: AdversaryBounds::default(),
            exploration_sigma: 0.1,
            baseline: false,
            seed: 0,
            replay_capacity: 50_000,
            empty_spot_rule: EmptySpotRule::TrueStill,
            obs_scale: None,
            projection_tol: crate::projection::DEFAULT_TOL,
            projection_max_iter: crate::projection::DEFAULT_MAX_ITER,
            reward_scale: 1.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(field, reason))
            }
        };
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma", "must lie in (0, 1)")?;
        check(self.delta > 0.0 && self.delta <= 1.0, "delta", "must lie in (0, 1]")?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau", "must lie in (0, 1]")?;
        check(self.steps_per_episode >= 1, "steps_per_episode", "must be >= 1")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(
            self.replay_capacity >= self.batch_size,
            "replay_capacity",
            "must hold at least one batch",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "must be positive",
        )?;
        check(self.beta >= 0.0 && self.beta.is_finite(), "beta", "must be nonnegative")?;
        check(
            self.exploration_sigma >= 0.0 && self.exploration_sigma.is_finite(),
            "exploration_sigma",
            "must be nonnegative",
        )?;
        check(self.projection_tol > 0.0, "projection_tol", "must be positive")?;
        check(self.projection_max_iter >= 1, "projection_max_iter", "must be >= 1")?;
        check(
            self.reward_scale > 0.0 && self.reward_scale.is_finite(),
            "reward_scale",
            "must be positive",
        )?;
        if let Some(s) = self.obs_scale {
            check(s > 0.0 && s.is_finite(), "obs_scale", "must be positive")?;
        }
        self.adversary_bounds.domain().map(|_| ())
    }

    pub fn validate_for(&self, scenario: &Scenario) -> Result<()> {
        self.validate()?;
        if self.steps_per_episode > scenario.demand.horizon {
            return Err(Error::validation(
                "steps_per_episode",
                format!(
                    "{} exceeds the scenario horizon {}",
                    self.steps_per_episode, scenario.demand.horizon
                ),
            ));
        }
        Ok(())
    }

    pub fn effective_obs_scale(&self, scenario: &Scenario) -> f64 {
        self.obs_scale.unwrap_or_else(|| {
            (scenario.fleet.vehicles() as f64 / scenario.grid.num_regions() as f64).max(1.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainerConfig::default();
        c.validate().unwrap();
        assert_eq!((c.gamma, c.batch_size, c.learning_rate), (0.99, 600, 0.001));
    }

    #[test]
    fn ranges_are_enforced() {
        for bad in [
            TrainerConfig { gamma: 1.0, ..Default::default() },
            TrainerConfig { delta: 0.0, ..Default::default() },
            TrainerConfig { tau: 1.5, ..Default::default() },
            TrainerConfig { steps_per_episode: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
