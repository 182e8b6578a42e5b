//! The zero-sum game surface: local states, the adversarial perturbation map,
//! action types, fairness metrics, the shared reward, and observations.

use serde::{Deserialize, Serialize};

use crate::city::fleet::{FleetState, RegionCounts};
use crate::city::grid::RegionGrid;
use crate::error::{Error, Result};
use crate::projection::BoxDomain;

pub const LOCAL_FIELDS: usize = 6;
/// Location features appended to every observation: row, column, region index.
pub const POS_FEATURES: usize = 3;

/// `(V, L, d, ST, ES, SP)` for one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalState {
    pub vacant: f64,
    pub low_battery: f64,
    pub demand: f64,
    pub still: f64,
    pub empty_spots: f64,
    pub spots: f64,
    /// Set on outputs of [`perturb_state`]; such states carry no invariants.
    pub perturbed: bool,
}

impl LocalState {
    pub fn new(v: f64, l: f64, d: f64, st: f64, es: f64, sp: f64) -> Self {
        Self {
            vacant: v,
            low_battery: l,
            demand: d,
            still: st,
            empty_spots: es,
            spots: sp,
            perturbed: false,
        }
    }

    pub fn from_counts(c: &RegionCounts) -> Self {
        Self::new(
            c.vacant as f64,
            c.low_battery as f64,
            c.demand as f64,
            c.still as f64,
            c.empty_spots as f64,
            c.spots as f64,
        )
    }

    pub fn fields(&self) -> [f64; LOCAL_FIELDS] {
        [
            self.vacant,
            self.low_battery,
            self.demand,
            self.still,
            self.empty_spots,
            self.spots,
        ]
    }

    pub fn from_fields(f: [f64; LOCAL_FIELDS]) -> Self {
        Self::new(f[0], f[1], f[2], f[3], f[4], f[5])
    }
}

/// True local states of every region of a fleet state.
pub fn local_states(state: &FleetState) -> Vec<LocalState> {
    state.counts().iter().map(LocalState::from_counts).collect()
}

/// Vacant (`p`) and low-battery (`q`) dispatch fractions over the region's
/// targets: neighbors ascending by index, then the region itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAction {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl RegionAction {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Self {
        Self { p, q }
    }

    /// Everything stays put.
    pub fn stay(n: usize) -> Self {
        let mut one_hot = vec![0.0; n];
        one_hot[n - 1] = 1.0;
        Self::new(one_hot.clone(), one_hot)
    }

    pub fn uniform(n: usize) -> Self {
        let u = vec![1.0 / n as f64; n];
        Self::new(u.clone(), u)
    }
}

/// `(δ_d, δ_c, δ_v)`: relative volatility of demand, charging occupancy, and vacant supply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryAction {
    pub demand: f64,
    pub charge: f64,
    pub vacant: f64,
}

impl AdversaryAction {
    pub const DIM: usize = 3;

    pub fn from_slice(a: &[f64]) -> Self {
        Self {
            demand: a[0],
            charge: a[1],
            vacant: a[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.demand, self.charge, self.vacant]
    }
}

/// Box bounds on adversary actions, ordered `(δ_d, δ_c, δ_v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for AdversaryBounds {
    fn default() -> Self {
        Self {
            lower: [-0.3, -0.2, -0.2],
            upper: [0.3, 0.2, 0.2],
        }
    }
}

impl AdversaryBounds {
    /// The degenerate box `{0}`.
    pub fn zero() -> Self {
        Self {
            lower: [0.0; 3],
            upper: [0.0; 3],
        }
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.lower.to_vec(), self.upper.to_vec())
    }

    pub fn contains(&self, a: &AdversaryAction) -> bool {
        a.to_array()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| x >= l && x <= u)
    }
}

/// Which still count the empty-spot term of the perturbation map uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptySpotRule {
    /// `ẼS = (SP − ST)·1{S̃T < SP}`: true still count in the value.
    #[default]
    TrueStill,
    /// `ẼS = (SP − S̃T)·1{S̃T < SP}`.
    PerturbedStill,
}

/// The adversarial perturbation of a true local state.
pub fn perturb_state(s: &LocalState, a: &AdversaryAction, rule: EmptySpotRule) -> LocalState {
    let occupied = s.spots - s.empty_spots;
    let still = s.still - occupied * a.charge;
    let base = match rule {
        EmptySpotRule::TrueStill => s.spots - s.still,
        EmptySpotRule::PerturbedStill => s.spots - still,
    };
    LocalState {
        vacant: s.vacant + occupied * a.charge + s.vacant * a.vacant,
        low_battery: s.low_battery,
        demand: s.demand * (1.0 + a.demand),
        still,
        empty_spots: if still < s.spots { base } else { 0.0 },
        spots: s.spots,
        perturbed: true,
    }
}

/// Charging-utilization and supply-demand fairness, both `<= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fairness {
    pub charging: f64,
    pub supply_demand: f64,
}

/// Fairness of a city-wide true state.
///
/// Regions without charging vehicles are left out of the charging term. A
/// region with demand but no vacant vehicles counts with its supply-demand
/// ratio capped at the region count.
pub fn compute_fairness(states: &[LocalState]) -> Fairness {
    let cap = states.len() as f64;

    let (mut es_total, mut st_total) = (0.0, 0.0);
    for s in states.iter().filter(|s| s.still > 0.0) {
        es_total += s.empty_spots;
        st_total += s.still;
    }
    let mut charging = 0.0;
    if st_total > 0.0 {
        let global = es_total / st_total;
        for s in states.iter().filter(|s| s.still > 0.0) {
            charging -= (s.empty_spots / s.still - global).abs();
        }
    }

    let d_total: f64 = states.iter().map(|s| s.demand).sum();
    let v_total: f64 = states.iter().map(|s| s.vacant).sum();
    let global = if v_total > 0.0 { d_total / v_total } else { 0.0 };
    let mut supply_demand = 0.0;
    for s in states {
        let ratio = if s.vacant > 0.0 {
            s.demand / s.vacant
        } else if s.demand > 0.0 {
            cap
        } else {
            continue;
        };
        supply_demand -= (ratio - global).abs();
    }
    Fairness {
        charging,
        supply_demand,
    }
}

/// Shared reward of one transition and its zero-sum counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub region: f64,
    pub adversary: f64,
    pub fairness: Fairness,
}

/// `r = u_c + β·u_s` on the post-transition true state; adversaries get `−r`.
pub fn compute_reward(states: &[LocalState], beta: f64) -> Reward {
    let fairness = compute_fairness(states);
    let region = fairness.charging + beta * fairness.supply_demand;
    Reward {
        region,
        adversary: -region,
        fairness,
    }
}

/// Fixed-length layout of observations, state features, and padded actions.
///
/// Neighbor information uses one slot per grid direction (up, left, right,
/// down, restricted to directions that occur on the grid); slots whose
/// neighbor does not exist are zero. Present neighbors therefore appear in
/// ascending region index. Padded region actions use the same slots plus a
/// trailing "stay" slot, once for `p` and once for `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLayout {
    /// Divisor applied to every count field.
    pub scale: f64,
    pub horizon: usize,
    slots: usize,
    neighbor_slots: Vec<Vec<Option<usize>>>,
    masks: Vec<Vec<bool>>,
    pos: Vec<[f64; POS_FEATURES]>,
}

impl ObservationLayout {
    pub fn new(grid: &RegionGrid, horizon: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::validation("scale", "observation scale must be positive"));
        }
        let n = grid.num_regions();
        let dirs = grid.slots();
        let neighbor_slots: Vec<Vec<Option<usize>>> = (0..n)
            .map(|i| dirs.iter().map(|&d| grid.step(i, d)).collect())
            .collect();
        let masks = neighbor_slots
            .iter()
            .map(|slots| {
                let mut m: Vec<bool> = slots.iter().map(Option::is_some).collect();
                m.push(true);
                let q = m.clone();
                m.extend(q);
                m
            })
            .collect();
        let norm = |x: usize, extent: usize| {
            if extent > 1 {
                x as f64 / (extent - 1) as f64
            } else {
                0.0
            }
        };
        let pos = (0..n)
            .map(|i| {
                let p = grid.position(i);
                [norm(p.row, grid.height()), norm(p.col, grid.width()), norm(i, n)]
            })
            .collect();
        Ok(Self {
            scale,
            horizon,
            slots: dirs.len(),
            neighbor_slots,
            masks,
            pos,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.neighbor_slots.len()
    }

    pub fn neighbor_slots(&self) -> usize {
        self.slots
    }

    pub fn obs_len(&self) -> usize {
        LOCAL_FIELDS * (1 + self.slots) + 1 + POS_FEATURES
    }

    /// Width of one padded dispatch block (direction slots plus stay).
    pub fn block_len(&self) -> usize {
        self.slots + 1
    }

    pub fn region_action_len(&self) -> usize {
        2 * self.block_len()
    }

    /// Valid entries of the padded region action of `region`.
    pub fn action_mask(&self, region: usize) -> &[bool] {
        &self.masks[region]
    }

    pub fn time_feature(&self, t: usize) -> f64 {
        (t as f64 / self.horizon.max(1) as f64).min(1.0)
    }

    /// Writes the observation of `region`, with `own` standing in for the
    /// region's own local state and `states` supplying the neighbors.
    pub fn write_observation(
        &self,
        states: &[LocalState],
        t: usize,
        region: usize,
        own: &LocalState,
        out: &mut [f64],
    ) {
        debug_assert_eq!(out.len(), self.obs_len());
        let inv = 1.0 / self.scale;
        for (o, f) in out[..LOCAL_FIELDS].iter_mut().zip(own.fields()) {
            *o = f * inv;
        }
        for (k, nb) in self.neighbor_slots[region].iter().enumerate() {
            let dst = &mut out[LOCAL_FIELDS * (k + 1)..LOCAL_FIELDS * (k + 2)];
            match nb {
                Some(j) => {
                    for (o, f) in dst.iter_mut().zip(states[*j].fields()) {
                        *o = f * inv;
                    }
                }
                None => dst.fill(0.0),
            }
        }
        let tail = LOCAL_FIELDS * (1 + self.slots);
        out[tail] = self.time_feature(t);
        out[tail + 1..].copy_from_slice(&self.pos[region]);
    }

    pub fn observation(&self, states: &[LocalState], t: usize, region: usize, own: &LocalState) -> Vec<f64> {
        let mut out = vec![0.0; self.obs_len()];
        self.write_observation(states, t, region, own, &mut out);
        out
    }

    /// Number of leading observation entries that hold local-state fields.
    pub fn local_feature_len(&self) -> usize {
        LOCAL_FIELDS * (1 + self.slots)
    }

    /// Critic state features: every region's normalized local fields, then time.
    pub fn state_feature_len(&self) -> usize {
        LOCAL_FIELDS * self.num_regions() + 1
    }

    pub fn write_state_features(&self, states: &[LocalState], t: usize, out: &mut [f64]) {
        let inv = 1.0 / self.scale;
        for (i, s) in states.iter().enumerate() {
            for (o, f) in out[LOCAL_FIELDS * i..LOCAL_FIELDS * (i + 1)].iter_mut().zip(s.fields()) {
                *o = f * inv;
            }
        }
        out[LOCAL_FIELDS * states.len()] = self.time_feature(t);
    }

    /// Expands a region action into the padded slot layout.
    pub fn pad_action(&self, region: usize, action: &RegionAction) -> Vec<f64> {
        let mask = &self.masks[region];
        let mut out = vec![0.0; mask.len()];
        let b = self.block_len();
        for (block, values) in [(0, &action.p), (1, &action.q)] {
            let mut it = values.iter();
            for k in 0..b {
                if mask[block * b + k] {
                    out[block * b + k] = *it.next().expect("action length matches mask");
                }
            }
        }
        out
    }

    /// Inverse of [`Self::pad_action`].
    pub fn unpad_action(&self, region: usize, padded: &[f64]) -> RegionAction {
        let mask = &self.masks[region];
        let b = self.block_len();
        let pick = |block: usize| {
            (0..b)
                .filter(|k| mask[block * b + k])
                .map(|k| padded[block * b + k])
                .collect()
        };
        RegionAction::new(pick(0), pick(1))
    }
}

/// Per-region adversary and region-agent observations.
///
/// Adversaries see true states; region agent `i` sees its own state perturbed
/// by adversary `i` and its neighbors' states unperturbed.
pub fn build_observations(
    layout: &ObservationLayout,
    states: &[LocalState],
    t: usize,
    adversary: &[AdversaryAction],
    rule: EmptySpotRule,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = states.len();
    let mut obs_a = Vec::with_capacity(n);
    let mut obs_r = Vec::with_capacity(n);
    for i in 0..n {
        obs_a.push(layout.observation(states, t, i, &states[i]));
        let own = perturb_state(&states[i], &adversary[i], rule);
        obs_r.push(layout.observation(states, t, i, &own));
    }
    (obs_a, obs_r)
}
