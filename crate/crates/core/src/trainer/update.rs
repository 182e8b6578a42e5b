//! Minibatch math: policy-regression targets, the regression loss and its
//! gradient, and the critic's temporal-difference update.

use ndarray::{Array2, Axis};

use super::policy::{to_local_states, ActionSpace, AgentNets};
use super::replay::Transition;
use crate::error::{Error, Result};
use crate::game::{AdversaryAction, LocalState};
use crate::neural::Mlp;

/// How regression targets are formed from the snapshot actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMode {
    /// `â = (1 − δ)·Π(μ(o|θ̄)) + δ·x`, with `x` the improving vertex.
    Constrained { delta: f64 },
    /// `â = μ(o|θ̄) + η·φ·∇_a q`, with no projection (the domain is the whole space).
    Unconstrained { eta: f64 },
}

/// `(1 − δ)·a + δ·x`.
pub fn blend(a: &[f64], x: &[f64], delta: f64) -> Vec<f64> {
    a.iter().zip(x).map(|(a, x)| (1.0 - delta) * a + delta * x).collect()
}

/// Observation matrices and snapshot actions of a minibatch. Row `b·N + i`
/// belongs to region `i` of sample `b`.
pub struct BatchPass {
    pub obs_adversary: Array2<f64>,
    pub obs_region: Array2<f64>,
    /// Snapshot adversary actions (projected in constrained mode).
    pub act_adversary: Array2<f64>,
    /// Snapshot region actions (projected in constrained mode).
    pub act_region: Array2<f64>,
    /// `∇_a q` at the snapshot actions, sliced per agent.
    pub grad_adversary: Array2<f64>,
    pub grad_region: Array2<f64>,
}

/// Builds observations for a minibatch and evaluates the snapshot policies
/// and the snapshot critic's action gradient.
///
/// Region observations use the adversary action stored with each transition,
/// i.e. the perturbed view the region agent acted on.
pub fn batch_pass(
    space: &ActionSpace,
    snapshot: &AgentNets,
    batch: &[&Transition],
    project: bool,
) -> Result<BatchPass> {
    let n = space.num_regions();
    let rows = batch.len() * n;
    let obs_len = space.obs_len();
    let w = space.region_action_len();
    let mut obs_adversary = Array2::zeros((rows, obs_len));
    let mut obs_region = Array2::zeros((rows, obs_len));
    let states: Vec<Vec<LocalState>> = batch.iter().map(|tr| to_local_states(&tr.state.locals)).collect();
    for (b, tr) in batch.iter().enumerate() {
        space.write_adversary_obs(&states[b], tr.state.t, &mut obs_adversary, b * n);
        space.write_region_obs(&states[b], tr.state.t, &tr.adversary_actions, &mut obs_region, b * n);
    }

    let mut act_adversary = if space.baseline {
        Array2::zeros((rows, AdversaryAction::DIM))
    } else {
        snapshot.adversary.predict_batch(obs_adversary.view(), None)?
    };
    let mut act_region = snapshot.region.predict_batch(obs_region.view(), Some(space.masks()))?;
    if project {
        for (r, mut row) in act_region.axis_iter_mut(Axis(0)).enumerate() {
            space.project_region(r % n, row.as_slice_mut().expect("row-major"))?;
        }
        for mut row in act_adversary.axis_iter_mut(Axis(0)) {
            space.project_adversary(row.as_slice_mut().expect("row-major"));
        }
    }

    let mut critic_in = Array2::zeros((batch.len(), space.critic_input_len()));
    for (b, tr) in batch.iter().enumerate() {
        let adv = act_adversary.slice(ndarray::s![b * n..(b + 1) * n, ..]);
        let reg = act_region.slice(ndarray::s![b * n..(b + 1) * n, ..]);
        let adv: Vec<f64> = adv.iter().copied().collect();
        let reg: Vec<f64> = reg.iter().copied().collect();
        space.write_critic_input(&states[b], tr.state.t, &adv, &reg, critic_in.row_mut(b));
    }
    let cache = snapshot.critic.forward_batch(critic_in.view(), None)?;
    let ones = Array2::ones((batch.len(), 1));
    let mut scratch = vec![0.0; snapshot.critic.params().len()];
    let dx = snapshot
        .critic
        .backward_into(&cache, ones.view(), &mut scratch, true)?
        .expect("input gradient requested");
    let (adv_off, reg_off) = space.critic_action_offsets();
    let mut grad_adversary = Array2::zeros((rows, AdversaryAction::DIM));
    let mut grad_region = Array2::zeros((rows, w));
    for b in 0..batch.len() {
        for i in 0..n {
            let r = b * n + i;
            for k in 0..AdversaryAction::DIM {
                grad_adversary[[r, k]] = dx[[b, adv_off + AdversaryAction::DIM * i + k]];
            }
            for k in 0..w {
                grad_region[[r, k]] = dx[[b, reg_off + w * i + k]];
            }
        }
    }
    Ok(BatchPass {
        obs_adversary,
        obs_region,
        act_adversary,
        act_region,
        grad_adversary,
        grad_region,
    })
}

/// Regression targets `(region, adversary)` for every row of a batch pass;
/// `φ = +1` for region agents and `−1` for adversaries.
pub fn regression_targets(
    space: &ActionSpace,
    pass: &BatchPass,
    mode: TargetMode,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = space.num_regions();
    let mut region = pass.act_region.clone();
    let mut adversary = pass.act_adversary.clone();
    match mode {
        TargetMode::Constrained { delta } => {
            for (r, mut row) in region.axis_iter_mut(Axis(0)).enumerate() {
                let g: Vec<f64> = pass.grad_region.row(r).to_vec();
                let x = space.region_vertex(r % n, &g)?;
                let out = blend(row.as_slice().expect("row-major"), &x, delta);
                row.as_slice_mut().expect("row-major").copy_from_slice(&out);
            }
            if !space.baseline {
                for (r, mut row) in adversary.axis_iter_mut(Axis(0)).enumerate() {
                    let g: Vec<f64> = pass.grad_adversary.row(r).iter().map(|v| -v).collect();
                    let x = space.adversary_vertex(&g)?;
                    let out = blend(row.as_slice().expect("row-major"), &x, delta);
                    row.as_slice_mut().expect("row-major").copy_from_slice(&out);
                }
            }
        }
        TargetMode::Unconstrained { eta } => {
            region.scaled_add(eta, &pass.grad_region);
            for (r, mut row) in region.axis_iter_mut(Axis(0)).enumerate() {
                let mask = &space.masks()[r % n];
                for (v, &m) in row.iter_mut().zip(mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
            }
            if !space.baseline {
                adversary.scaled_add(-eta, &pass.grad_adversary);
            }
        }
    }
    Ok((region, adversary))
}

/// Gradient of `Σ_B (1/N)·Σ_i ‖μ(o_i|θ) − â_i‖²` with respect to `θ`.
/// Returns the gradient and the loss value.
pub fn regression_gradient(
    net: &Mlp,
    obs: &Array2<f64>,
    masks: Option<&[Vec<bool>]>,
    targets: &Array2<f64>,
    regions: usize,
) -> Result<(Vec<f64>, f64)> {
    let cache = net.forward_batch(obs.view(), masks)?;
    let diff = &cache.output - targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / regions as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "policy regression loss".into(),
        });
    }
    let upstream = diff * (2.0 / regions as f64);
    let mut grad = vec![0.0; net.params().len()];
    net.backward_into(&cache, upstream.view(), &mut grad, false)?;
    Ok((grad, loss))
}

/// Direct deterministic policy gradient `φ·Σ_B Σ_i ∇_a q·∇_θ μ`, evaluated at
/// the parameters of `nets`, for the region and adversary policies.
pub fn dpg_gradient(space: &ActionSpace, nets: &AgentNets, batch: &[&Transition]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pass = batch_pass(space, nets, batch, false)?;
    let cache = nets.region.forward_batch(pass.obs_region.view(), Some(space.masks()))?;
    let mut g_region = vec![0.0; nets.region.params().len()];
    nets.region
        .backward_into(&cache, pass.grad_region.view(), &mut g_region, false)?;
    let cache = nets.adversary.forward_batch(pass.obs_adversary.view(), None)?;
    let mut g_adversary = vec![0.0; nets.adversary.params().len()];
    let upstream = -&pass.grad_adversary;
    nets.adversary
        .backward_into(&cache, upstream.view(), &mut g_adversary, false)?;
    Ok((g_region, g_adversary))
}

/// Policy-regression gradients `(region, adversary)` and losses for one
/// minibatch, with targets from `snapshot` and the loss evaluated at `online`.
pub fn policy_gradients(
    space: &ActionSpace,
    online: &AgentNets,
    snapshot: &AgentNets,
    batch: &[&Transition],
    mode: TargetMode,
) -> Result<PolicyGradients> {
    let project = matches!(mode, TargetMode::Constrained { .. });
    let pass = batch_pass(space, snapshot, batch, project)?;
    let (t_region, t_adversary) = regression_targets(space, &pass, mode)?;
    let n = space.num_regions();
    let (region, region_loss) =
        regression_gradient(&online.region, &pass.obs_region, Some(space.masks()), &t_region, n)?;
    let (adversary, adversary_loss) = if space.baseline {
        (vec![0.0; online.adversary.params().len()], 0.0)
    } else {
        regression_gradient(&online.adversary, &pass.obs_adversary, None, &t_adversary, n)?
    };
    Ok(PolicyGradients {
        region,
        adversary,
        region_loss,
        adversary_loss,
    })
}

pub struct PolicyGradients {
    pub region: Vec<f64>,
    pub adversary: Vec<f64>,
    pub region_loss: f64,
    pub adversary_loss: f64,
}

/// `y = s·r + γ·q′(s′, μ′_a(o′_a), μ′_r(o′_r))` per sample, where `s` is the
/// reward scale and `o′_r` carries the target adversary's perturbation.
pub fn td_targets(
    space: &ActionSpace,
    target: &AgentNets,
    batch: &[&Transition],
    gamma: f64,
    reward_scale: f64,
) -> Result<Vec<f64>> {
    let n = space.num_regions();
    let rows = batch.len() * n;
    let obs_len = space.obs_len();
    let states: Vec<Vec<LocalState>> = batch
        .iter()
        .map(|tr| to_local_states(&tr.next_state.locals))
        .collect();
    let adversary = if space.baseline {
        Array2::zeros((rows, AdversaryAction::DIM))
    } else {
        let mut obs = Array2::zeros((rows, obs_len));
        for (b, tr) in batch.iter().enumerate() {
            space.write_adversary_obs(&states[b], tr.next_state.t, &mut obs, b * n);
        }
        target.adversary.predict_batch(obs.view(), None)?
    };
    let adv_rows: Vec<Vec<f64>> = (0..batch.len())
        .map(|b| adversary.slice(ndarray::s![b * n..(b + 1) * n, ..]).iter().copied().collect())
        .collect();
    let mut obs = Array2::zeros((rows, obs_len));
    for (b, tr) in batch.iter().enumerate() {
        space.write_region_obs(&states[b], tr.next_state.t, &adv_rows[b], &mut obs, b * n);
    }
    let region = target.region.predict_batch(obs.view(), Some(space.masks()))?;
    let mut critic_in = Array2::zeros((batch.len(), space.critic_input_len()));
    for (b, tr) in batch.iter().enumerate() {
        let reg: Vec<f64> = region.slice(ndarray::s![b * n..(b + 1) * n, ..]).iter().copied().collect();
        space.write_critic_input(&states[b], tr.next_state.t, &adv_rows[b], &reg, critic_in.row_mut(b));
    }
    let q_next = target.critic.predict_batch(critic_in.view(), None)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, tr)| reward_scale * tr.reward + gamma * q_next[[b, 0]])
        .collect())
}

/// Gradient of `Σ_B (q(s, a_a, a_r) − y)²` at the stored actions, and the
/// mean squared error.
pub fn critic_gradient(space: &ActionSpace, critic: &Mlp, batch: &[&Transition], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut critic_in = Array2::zeros((batch.len(), space.critic_input_len()));
    for (b, tr) in batch.iter().enumerate() {
        let states = to_local_states(&tr.state.locals);
        space.write_critic_input(
            &states,
            tr.state.t,
            &tr.adversary_actions,
            &tr.region_actions,
            critic_in.row_mut(b),
        );
    }
    let cache = critic.forward_batch(critic_in.view(), None)?;
    let mut upstream = Array2::zeros((batch.len(), 1));
    let mut sse = 0.0;
    for b in 0..batch.len() {
        let d = cache.output[[b, 0]] - y[b];
        sse += d * d;
        upstream[[b, 0]] = 2.0 * d;
    }
    if !sse.is_finite() {
        return Err(Error::NonFinite {
            context: "critic loss".into(),
        });
    }
    let mut grad = vec![0.0; critic.params().len()];
    critic.backward_into(&cache, upstream.view(), &mut grad, false)?;
    Ok((grad, sse / batch.len() as f64))
}
