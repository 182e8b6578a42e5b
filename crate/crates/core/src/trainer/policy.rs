//! Shared policies, the centralized critic, and the action-space plumbing
//! around them: observation matrices, critic inputs, projections, and the
//! improving-vertex rule.

use ndarray::{Array2, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::city::Scenario;
use crate::error::{Error, Result};
use crate::game::{
    perturb_state, AdversaryAction, AdversaryBounds, EmptySpotRule, LocalState, ObservationLayout,
    LOCAL_FIELDS,
};
use crate::neural::{Head, Mlp};
use crate::projection::{
    dykstra_project, lp_vertex_argmax, project_box, BoxDomain, HPolytope, SimplexProduct,
    VertexDomain,
};
use crate::rng::SimRng;

/// Region policy, adversary policy, and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub region: Mlp,
    pub adversary: Mlp,
    pub critic: Mlp,
}

impl AgentNets {
    pub fn init<R: Rng>(space: &ActionSpace, rng: &mut R) -> Result<Self> {
        Ok(Self {
            region: Mlp::init(
                space.obs_len(),
                space.region_action_len(),
                Head::SoftmaxBlocks {
                    block: space.layout.block_len(),
                },
                rng,
            )?,
            adversary: Mlp::init(space.obs_len(), AdversaryAction::DIM, space.adversary_head(), rng)?,
            critic: Mlp::init(space.critic_input_len(), 1, Head::Linear, rng)?,
        })
    }

    pub fn same_shape(&self, other: &AgentNets) -> bool {
        self.region.same_shape(&other.region)
            && self.adversary.same_shape(&other.adversary)
            && self.critic.same_shape(&other.critic)
    }
}

/// Joint actions of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointActions {
    /// Padded region actions, region-major.
    pub region: Vec<f64>,
    /// `(δ_d, δ_c, δ_v)` per region.
    pub adversary: Vec<f64>,
}

/// Layout and constraint domains of one scenario.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    pub layout: ObservationLayout,
    pub bounds: AdversaryBounds,
    pub rule: EmptySpotRule,
    pub baseline: bool,
    masks: Vec<Vec<bool>>,
    adversary_box: BoxDomain,
    simplices: Vec<Option<HPolytope>>,
    tol: f64,
    max_iter: usize,
}

impl ActionSpace {
    pub fn new(
        scenario: &Scenario,
        horizon: usize,
        obs_scale: f64,
        bounds: AdversaryBounds,
        rule: EmptySpotRule,
        baseline: bool,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let layout = ObservationLayout::new(&scenario.grid, horizon, obs_scale)?;
        let n = layout.num_regions();
        let masks: Vec<Vec<bool>> = (0..n).map(|i| layout.action_mask(i).to_vec()).collect();
        let mut simplices = vec![None; layout.block_len() + 1];
        for i in 0..n {
            let size = scenario.grid.action_len(i);
            if simplices[size].is_none() {
                simplices[size] = Some(HPolytope::simplex(size)?);
            }
        }
        Ok(Self {
            adversary_box: bounds.domain()?,
            layout,
            bounds,
            rule,
            baseline,
            masks,
            simplices,
            tol,
            max_iter,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.layout.num_regions()
    }

    pub fn obs_len(&self) -> usize {
        self.layout.obs_len()
    }

    pub fn region_action_len(&self) -> usize {
        self.layout.region_action_len()
    }

    pub fn critic_input_len(&self) -> usize {
        let n = self.num_regions();
        self.layout.state_feature_len() + n * AdversaryAction::DIM + n * self.region_action_len()
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn adversary_box(&self) -> &BoxDomain {
        &self.adversary_box
    }

    pub fn adversary_head(&self) -> Head {
        Head::BoundedAffine {
            lower: self.bounds.lower.to_vec(),
            upper: self.bounds.upper.to_vec(),
        }
    }

    /// Adversary observations (true states), one row per region.
    pub fn write_adversary_obs(&self, states: &[LocalState], t: usize, out: &mut Array2<f64>, row0: usize) {
        for (i, s) in states.iter().enumerate() {
            let mut row = out.row_mut(row0 + i);
            self.layout
                .write_observation(states, t, i, s, row.as_slice_mut().expect("row-major"));
        }
    }

    /// Region observations: own state perturbed by the adversary, neighbors true.
    pub fn write_region_obs(
        &self,
        states: &[LocalState],
        t: usize,
        adversary: &[f64],
        out: &mut Array2<f64>,
        row0: usize,
    ) {
        for (i, s) in states.iter().enumerate() {
            let a = AdversaryAction::from_slice(&adversary[3 * i..3 * i + 3]);
            let own = perturb_state(s, &a, self.rule);
            let mut row = out.row_mut(row0 + i);
            self.layout
                .write_observation(states, t, i, &own, row.as_slice_mut().expect("row-major"));
        }
    }

    pub fn write_critic_input(
        &self,
        states: &[LocalState],
        t: usize,
        adversary: &[f64],
        region: &[f64],
        mut out: ArrayViewMut1<'_, f64>,
    ) {
        let out = out.as_slice_mut().expect("row-major");
        let sf = self.layout.state_feature_len();
        self.layout.write_state_features(states, t, &mut out[..sf]);
        let na = adversary.len();
        out[sf..sf + na].copy_from_slice(adversary);
        out[sf + na..].copy_from_slice(region);
    }

    /// Offsets of the adversary and region blocks inside the critic input.
    pub fn critic_action_offsets(&self) -> (usize, usize) {
        let sf = self.layout.state_feature_len();
        (sf, sf + self.num_regions() * AdversaryAction::DIM)
    }

    /// Projects one padded region action onto its simplex pair in place.
    /// Masked entries are set to zero.
    pub fn project_region(&self, region: usize, padded: &mut [f64]) -> Result<()> {
        let b = self.layout.block_len();
        let mask = &self.masks[region];
        for block in 0..2 {
            let range = block * b..(block + 1) * b;
            let valid: Vec<usize> = range.clone().filter(|&k| mask[k]).collect();
            let values: Vec<f64> = valid.iter().map(|&k| padded[k]).collect();
            let sum: f64 = values.iter().sum();
            let feasible = values.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= self.tol;
            if !feasible {
                let poly = self.simplices[valid.len()].as_ref().expect("simplex per action size");
                let projected = dykstra_project(&values, poly, self.tol, self.max_iter)?;
                for (&k, v) in valid.iter().zip(projected) {
                    padded[k] = v.max(0.0);
                }
            }
            for k in range {
                if !mask[k] {
                    padded[k] = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn project_adversary(&self, a: &mut [f64]) {
        let p = project_box(a, &self.adversary_box);
        a.copy_from_slice(&p);
    }

    /// Improving vertex of the region domain for objective `g` (padded).
    pub fn region_vertex(&self, region: usize, g: &[f64]) -> Result<Vec<f64>> {
        let b = self.layout.block_len();
        let mask = &self.masks[region];
        let valid: Vec<usize> = (0..2 * b).filter(|&k| mask[k]).collect();
        let compact: Vec<f64> = valid.iter().map(|&k| g[k]).collect();
        let n = valid.len() / 2;
        let domain = SimplexProduct::pair(n)?;
        let x = lp_vertex_argmax(&compact, VertexDomain::SimplexProduct(&domain))?;
        let mut out = vec![0.0; 2 * b];
        for (&k, v) in valid.iter().zip(x) {
            out[k] = v;
        }
        Ok(out)
    }

    pub fn adversary_vertex(&self, g: &[f64]) -> Result<Vec<f64>> {
        lp_vertex_argmax(g, VertexDomain::Box(&self.adversary_box))
    }

    /// Checks a padded joint region action against its constraints.
    pub fn region_feasible(&self, padded: &[f64], tol: f64) -> bool {
        let b = self.layout.block_len();
        let w = self.region_action_len();
        (0..self.num_regions()).all(|i| {
            let a = &padded[i * w..(i + 1) * w];
            let mask = &self.masks[i];
            (0..2).all(|block| {
                let r = block * b..(block + 1) * b;
                let sum: f64 = r.clone().filter(|&k| mask[k]).map(|k| a[k]).sum();
                (sum - 1.0).abs() <= tol
                    && r.clone().all(|k| if mask[k] { a[k] >= -tol } else { a[k] == 0.0 })
            })
        })
    }
}

pub(crate) fn to_local_states(locals: &[f64]) -> Vec<LocalState> {
    locals
        .chunks_exact(LOCAL_FIELDS)
        .map(|c| LocalState::from_fields(c.try_into().expect("six fields")))
        .collect()
}

/// Exploration noise sources; separate streams keep the adversary's draws from
/// shifting the region agents' noise.
pub struct Exploration<'a> {
    pub sigma: f64,
    pub region_rng: &'a mut SimRng,
    pub adversary_rng: &'a mut SimRng,
}

/// Actions of every adversary and region agent at one state, read from
/// `nets` (the episode snapshot during training).
pub fn select_actions(
    space: &ActionSpace,
    nets: &AgentNets,
    states: &[LocalState],
    t: usize,
    explore: Option<Exploration<'_>>,
) -> Result<JointActions> {
    let n = states.len();
    let mut explore = explore;
    let adversary = if space.baseline {
        vec![0.0; n * AdversaryAction::DIM]
    } else {
        let mut obs = Array2::zeros((n, space.obs_len()));
        space.write_adversary_obs(states, t, &mut obs, 0);
        let out = nets.adversary.predict_batch(obs.view(), None)?;
        let mut a: Vec<f64> = out.iter().copied().collect();
        if let Some(ex) = explore.as_mut() {
            for v in a.iter_mut() {
                let z: f64 = ex.adversary_rng.sample(StandardNormal);
                *v += ex.sigma * z;
            }
            for chunk in a.chunks_mut(AdversaryAction::DIM) {
                space.project_adversary(chunk);
            }
        }
        a
    };

    let mut obs = Array2::zeros((n, space.obs_len()));
    space.write_region_obs(states, t, &adversary, &mut obs, 0);
    let mut region = region_actions_from_obs(space, &nets.region, &obs)?;
    if let Some(ex) = explore.as_mut() {
        let w = space.region_action_len();
        for i in 0..n {
            let chunk = &mut region[i * w..(i + 1) * w];
            for (k, v) in chunk.iter_mut().enumerate() {
                if space.masks()[i][k] {
                    let z: f64 = ex.region_rng.sample(StandardNormal);
                    *v += ex.sigma * z;
                }
            }
            space.project_region(i, chunk)?;
        }
    }
    Ok(JointActions { region, adversary })
}

/// Projected region-policy outputs for `n` observation rows (one per region).
pub fn region_actions_from_obs(space: &ActionSpace, net: &Mlp, obs: &Array2<f64>) -> Result<Vec<f64>> {
    if obs.nrows() != space.num_regions() {
        return Err(Error::validation("observations", "need one row per region"));
    }
    let mut out: Vec<f64> = net.predict_batch(obs.view(), Some(space.masks()))?.into_iter().collect();
    let w = space.region_action_len();
    for (i, chunk) in out.chunks_mut(w).enumerate() {
        space.project_region(i, chunk)?;
    }
    Ok(out)
}
