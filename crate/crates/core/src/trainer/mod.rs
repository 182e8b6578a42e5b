//! The robust training loop: shared region and adversary policies, a
//! centralized critic, target networks, episode snapshots, and projected
//! policy-regression updates. Baseline mode disables the adversaries.

mod config;
mod policy;
mod replay;
mod update;

pub use config::TrainerConfig;
pub use policy::{
    region_actions_from_obs, select_actions, ActionSpace, AgentNets, Exploration, JointActions,
};
pub use replay::{JointState, ReplayBuffer, Transition};
pub use update::{
    batch_pass, blend, critic_gradient, dpg_gradient, policy_gradients, regression_gradient,
    regression_targets, td_targets, BatchPass, PolicyGradients, TargetMode,
};

use serde::{Deserialize, Serialize};

use crate::city::{CityEnv, Scenario};
use crate::error::{Error, Result};
use crate::game::{compute_reward, local_states, AdversaryBounds, EmptySpotRule, LocalState};
use crate::neural::{adam_step, soft_update, AdamState};
use crate::rng::{derive_seed, stream_rng, SimRng, Stream};

/// Per-episode training metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_u_c: f64,
    pub mean_u_s: f64,
    /// Mean squared TD error over the episode's critic updates; 0 when none ran.
    pub critic_loss: f64,
    pub region_return: f64,
    pub adversary_return: f64,
}

/// Bookkeeping counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub transitions: u64,
    pub policy_updates: u64,
    pub critic_updates: u64,
    pub target_updates: u64,
    pub snapshots: u64,
}

/// Everything a run carries between steps.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub online: AgentNets,
    pub target: AgentNets,
    pub snapshot: AgentNets,
    pub adam_region: AdamState,
    pub adam_adversary: AdamState,
    pub adam_critic: AdamState,
    pub episode: usize,
    pub log: Vec<EpisodeMetrics>,
    pub counters: Counters,
}

pub struct Trainer {
    config: TrainerConfig,
    scenario: Scenario,
    space: ActionSpace,
    state: TrainerState,
    replay: ReplayBuffer,
    replay_rng: SimRng,
}

impl Trainer {
    pub fn new(config: TrainerConfig, scenario: Scenario) -> Result<Self> {
        config.validate_for(&scenario)?;
        let space = ActionSpace::new(
            &scenario,
            config.steps_per_episode,
            config.effective_obs_scale(&scenario),
            config.adversary_bounds,
            config.empty_spot_rule,
            config.baseline,
            config.projection_tol,
            config.projection_max_iter,
        )?;
        let online = AgentNets::init(&space, &mut stream_rng(config.seed, Stream::Init, 0))?;
        let lr = config.learning_rate;
        let state = TrainerState {
            adam_region: AdamState::new(online.region.params().len(), lr),
            adam_adversary: AdamState::new(online.adversary.params().len(), lr),
            adam_critic: AdamState::new(online.critic.params().len(), lr),
            target: online.clone(),
            snapshot: online.clone(),
            online,
            episode: 0,
            log: Vec::new(),
            counters: Counters::default(),
        };
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity),
            replay_rng: stream_rng(config.seed, Stream::Replay, 0),
            config,
            scenario,
            space,
            state,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainerState {
        &mut self.state
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn done(&self) -> bool {
        self.state.episode >= self.config.episodes
    }

    /// Runs all remaining episodes.
    pub fn train(&mut self) -> Result<&[EpisodeMetrics]> {
        while !self.done() {
            self.run_episode()?;
        }
        Ok(&self.state.log)
    }

    /// Runs one episode of `steps_per_episode` steps and returns its metrics.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let e = self.state.episode;
        self.state.snapshot = self.state.online.clone();
        self.state.counters.snapshots += 1;
        let mut env = CityEnv::new(
            self.scenario.clone(),
            derive_seed(self.config.seed, Stream::Episode, e as u64),
        );
        let mut region_rng = stream_rng(self.config.seed, Stream::RegionNoise, e as u64);
        let mut adversary_rng = stream_rng(self.config.seed, Stream::AdversaryNoise, e as u64);

        let steps = self.config.steps_per_episode;
        let (mut sum_r, mut sum_c, mut sum_s) = (0.0, 0.0, 0.0);
        let (mut critic_loss, mut critic_steps) = (0.0, 0usize);
        let mut adversary_return = 0.0;
        for _ in 0..steps {
            let t = env.state().t;
            let states = local_states(env.state());
            let acts = select_actions(
                &self.space,
                &self.state.snapshot,
                &states,
                t,
                Some(Exploration {
                    sigma: self.config.exploration_sigma,
                    region_rng: &mut region_rng,
                    adversary_rng: &mut adversary_rng,
                }),
            )?;
            let w = self.space.region_action_len();
            let joint: Vec<_> = (0..self.space.num_regions())
                .map(|i| self.space.layout.unpad_action(i, &acts.region[i * w..(i + 1) * w]))
                .collect();
            env.step(&joint)?;
            let next = local_states(env.state());
            let reward = compute_reward(&next, self.config.beta);
            sum_r += reward.region;
            adversary_return += reward.adversary;
            sum_c += reward.fairness.charging;
            sum_s += reward.fairness.supply_demand;
            self.replay.push(Transition {
                state: joint_state(&states, t),
                region_actions: acts.region,
                adversary_actions: acts.adversary,
                reward: reward.region,
                next_state: joint_state(&next, env.state().t),
            });
            self.state.counters.transitions += 1;

            if self.replay.len() >= self.config.batch_size {
                critic_loss += self.update()?;
                critic_steps += 1;
            }
            let s = &mut self.state;
            let tau = self.config.tau;
            soft_update(s.target.region.params_mut(), s.online.region.params(), tau);
            soft_update(s.target.adversary.params_mut(), s.online.adversary.params(), tau);
            soft_update(s.target.critic.params_mut(), s.online.critic.params(), tau);
            s.counters.target_updates += 1;
        }
        let k = steps as f64;
        let m = EpisodeMetrics {
            episode: e,
            mean_reward: sum_r / k,
            mean_u_c: sum_c / k,
            mean_u_s: sum_s / k,
            critic_loss: if critic_steps > 0 {
                critic_loss / critic_steps as f64
            } else {
                0.0
            },
            region_return: sum_r,
            adversary_return,
        };
        self.state.log.push(m);
        self.state.episode += 1;
        Ok(m)
    }

    /// One minibatch update of both policies (regression toward snapshot
    /// targets) followed by the critic. Returns the critic's mean squared error.
    fn update(&mut self) -> Result<f64> {
        let idx = self.replay.sample_indices(self.config.batch_size, &mut self.replay_rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i)).collect();
        let s = &mut self.state;
        let grads = policy_gradients(
            &self.space,
            &s.online,
            &s.snapshot,
            &batch,
            TargetMode::Constrained {
                delta: self.config.delta,
            },
        )?;
        adam_step(s.online.region.params_mut(), &grads.region, &mut s.adam_region)?;
        if !self.space.baseline {
            adam_step(s.online.adversary.params_mut(), &grads.adversary, &mut s.adam_adversary)?;
        }
        s.counters.policy_updates += 1;

        let y = td_targets(&self.space, &s.target, &batch, self.config.gamma, self.config.reward_scale)?;
        let (grad, mse) = critic_gradient(&self.space, &s.online.critic, &batch, &y)?;
        adam_step(s.online.critic.params_mut(), &grad, &mut s.adam_critic)?;
        s.counters.critic_updates += 1;
        Ok(mse)
    }

    /// A checkpoint of the online networks.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            width: self.scenario.grid.width(),
            height: self.scenario.grid.height(),
            obs_len: self.space.obs_len(),
            region_action_len: self.space.region_action_len(),
            critic_input_len: self.space.critic_input_len(),
            horizon: self.config.steps_per_episode,
            obs_scale: self.space.layout.scale,
            adversary_bounds: self.config.adversary_bounds,
            empty_spot_rule: self.config.empty_spot_rule,
            baseline: self.config.baseline,
            episode: self.state.episode,
            nets: self.state.online.clone(),
        }
    }
}

fn joint_state(states: &[LocalState], t: usize) -> JointState {
    JointState {
        t,
        locals: states.iter().flat_map(|s| s.fields()).collect(),
    }
}

pub const CHECKPOINT_FORMAT: &str = "eamod-checkpoint-v1";

/// Serialized network parameters with the dimensions needed to rebuild the
/// observation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub obs_len: usize,
    pub region_action_len: usize,
    pub critic_input_len: usize,
    pub horizon: usize,
    pub obs_scale: f64,
    pub adversary_bounds: AdversaryBounds,
    pub empty_spot_rule: EmptySpotRule,
    pub baseline: bool,
    pub episode: usize,
    pub nets: AgentNets,
}

impl Checkpoint {
    /// The action space this checkpoint was trained on, checked against `scenario`.
    pub fn space_for(&self, scenario: &Scenario) -> Result<ActionSpace> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::validation("checkpoint.format", format!("unknown format {:?}", self.format)));
        }
        if (self.width, self.height) != (scenario.grid.width(), scenario.grid.height()) {
            return Err(Error::validation(
                "checkpoint",
                format!(
                    "trained on a {}x{} grid, scenario is {}x{}",
                    self.width,
                    self.height,
                    scenario.grid.width(),
                    scenario.grid.height()
                ),
            ));
        }
        let space = ActionSpace::new(
            scenario,
            self.horizon,
            self.obs_scale,
            self.adversary_bounds,
            self.empty_spot_rule,
            true,
            crate::projection::DEFAULT_TOL,
            crate::projection::DEFAULT_MAX_ITER,
        )?;
        let nets = &self.nets;
        if space.obs_len() != self.obs_len
            || space.region_action_len() != self.region_action_len
            || nets.region.input_len() != space.obs_len()
            || nets.region.output_len() != space.region_action_len()
            || nets.critic.input_len() != space.critic_input_len()
        {
            return Err(Error::validation("checkpoint", "network shapes do not match the scenario grid"));
        }
        Ok(space)
    }
}
