use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};

use crate::city::fleet::{FleetState, RegionCounts, Request, Status};
use crate::city::scenario::{DemandScenario, Scenario};
use crate::error::{Error, Result};
use crate::game::RegionAction;
use crate::rng::{derive_seed, SimRng, Stream};

/// Tolerance on simplex constraints of executed actions.
pub const ACTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServedCounts {
    pub served: u32,
    /// Requests still queued after matching.
    pub waiting: u32,
    /// Requests dropped after their second unserved interval.
    pub expired: u32,
    pub seated: u32,
    pub unseated: u32,
}

/// What happened during one call to [`step_environment`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub served: u32,
    pub unserved: u32,
    pub seated: u32,
    pub unseated: u32,
    pub counts: Vec<RegionCounts>,
    /// Per-region change in (V, L, ST, ES).
    pub deltas: Vec<[i64; 4]>,
}

impl StepLog {
    pub fn csv_header(regions: usize) -> String {
        let mut h = String::from("t,served,unserved");
        for tag in ["V", "L", "ST", "ES"] {
            for i in 0..regions {
                let _ = write!(h, ",{tag}_{i}");
            }
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.t, self.served, self.unserved);
        let fields: [fn(&RegionCounts) -> u32; 4] = [
            |c| c.vacant,
            |c| c.low_battery,
            |c| c.still,
            |c| c.empty_spots,
        ];
        for f in fields {
            for c in &self.counts {
                let _ = write!(row, ",{}", f(c));
            }
        }
        row
    }
}

/// Adds Poisson-distributed requests for interval `state.t` to every region queue.
pub fn spawn_demand<R: Rng>(state: &mut FleetState, scenario: &DemandScenario, rng: &mut R) {
    debug_assert!(state.t < scenario.horizon);
    let born = state.t;
    for (i, &rate) in scenario.demand_rate.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        // rate validated finite and positive
        let draws = Poisson::new(rate).expect("positive finite rate").sample(rng) as usize;
        let q = state.queue_mut(i);
        q.extend(std::iter::repeat_n(Request { born }, draws));
    }
}

/// Local trip and charging assignment inside every region.
///
/// Vacant vehicles serve queued requests first-in first-out, lowest vehicle id
/// first; low-battery vehicles then take empty local spots. Requests issued
/// before the current interval that stay unserved expire.
pub fn assign_local<R: Rng>(
    state: &mut FleetState,
    scenario: &Scenario,
    rng: &mut R,
) -> ServedCounts {
    let grid = &scenario.grid;
    let demand = &scenario.demand;
    let n = grid.num_regions();
    let t = state.t;
    let mut out = ServedCounts::default();

    let mut still_per_region = vec![0u32; n];
    for v in &state.vehicles {
        if v.status() == Status::Still {
            still_per_region[v.region] += 1;
        }
    }

    for region in 0..n {
        for idx in 0..state.vehicles.len() {
            if state.queues[region].is_empty() {
                break;
            }
            let v = &state.vehicles[idx];
            if v.region != region || v.status() != Status::Vacant {
                continue;
            }
            state.queues[region].pop_front();
            let dest = sample_row(&demand.od_matrix[region], rng);
            let duration = demand.trip_duration[region][dest];
            let v = &mut state.vehicles[idx];
            v.transition(Status::Occupied);
            v.destination = dest;
            v.timer = duration;
            v.battery = (v.battery - demand.battery.trip_drain * duration as f64).max(0.0);
            out.served += 1;
        }

        let mut free = grid.spots(region).saturating_sub(still_per_region[region]);
        for v in state.vehicles.iter_mut() {
            if v.region != region || v.status() != Status::LowBattery {
                continue;
            }
            if free == 0 {
                out.unseated += 1;
                continue;
            }
            v.transition(Status::Still);
            v.timer = demand.charge_duration;
            free -= 1;
            out.seated += 1;
        }

        let q = &mut state.queues[region];
        let before = q.len();
        q.retain(|r| r.born >= t);
        out.expired += (before - q.len()) as u32;
        out.waiting += q.len() as u32;
    }
    state.recount(grid);
    out
}

fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Splits `count` items according to `weights` by largest remainder.
///
/// The result sums to `count` exactly; fractional ties go to the lower index.
pub fn apportion(count: u32, weights: &[f64]) -> Vec<u32> {
    let clean: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
    let total: f64 = clean.iter().sum();
    if total <= 0.0 || count == 0 {
        let mut out = vec![0; weights.len()];
        if let Some(last) = out.last_mut() {
            *last = count;
        }
        return out;
    }
    let quotas: Vec<f64> = clean.iter().map(|w| count as f64 * w / total).collect();
    let mut out: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = out.iter().sum();
    let mut remaining = count.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        out[k] += 1;
        remaining -= 1;
    }
    out
}

/// Checks every region action against its simplex constraints.
pub fn validate_joint_action(scenario: &Scenario, joint: &[RegionAction]) -> Result<()> {
    let grid = &scenario.grid;
    if joint.len() != grid.num_regions() {
        return Err(Error::validation(
            "joint_action",
            format!("expected {} region actions, got {}", grid.num_regions(), joint.len()),
        ));
    }
    for (i, a) in joint.iter().enumerate() {
        let n = grid.action_len(i);
        for (row, v) in [("p", &a.p), ("q", &a.q)] {
            if v.len() != n {
                return Err(Error::ConstraintViolation {
                    region: i,
                    row,
                    reason: format!("length {} but region has {n} targets", v.len()),
                });
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < -ACTION_TOL) {
                return Err(Error::ConstraintViolation {
                    region: i,
                    row,
                    reason: format!("entry {bad} is negative"),
                });
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > ACTION_TOL {
                return Err(Error::ConstraintViolation {
                    region: i,
                    row,
                    reason: format!("entries sum to {sum}"),
                });
            }
        }
    }
    Ok(())
}

/// Initial state of an episode: fleet placed, first interval's demand spawned.
pub fn reset(scenario: &Scenario, seed: u64) -> FleetState {
    let mut rng = SimRng::seed_from_u64(derive_seed(seed, Stream::Episode, 0));
    let mut state = FleetState::initial(scenario, &mut rng);
    spawn_demand(&mut state, &scenario.demand, &mut rng);
    state.recount(&scenario.grid);
    state
}

/// Advances the city by one interval under the region agents' joint action.
///
/// Order: dispatch, battery drain, trip and charge timers, local assignment,
/// demand for the next interval, recount.
pub fn step_environment(
    state: &mut FleetState,
    scenario: &Scenario,
    joint: &[RegionAction],
    seed: u64,
) -> Result<StepLog> {
    validate_joint_action(scenario, joint)?;
    let grid = &scenario.grid;
    let demand = &scenario.demand;
    let battery = &demand.battery;
    let n = grid.num_regions();
    let mut rng = SimRng::seed_from_u64(seed);
    let before = state.counts().to_vec();
    let t = state.t;

    // 1. dispatch from pre-dispatch membership
    let mut moves: Vec<Option<usize>> = vec![None; state.vehicles.len()];
    let mut vacant_by_region: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut low_by_region: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, v) in state.vehicles.iter().enumerate() {
        match v.status() {
            Status::Vacant => vacant_by_region[v.region].push(idx),
            Status::LowBattery => low_by_region[v.region].push(idx),
            _ => {}
        }
    }
    for i in 0..n {
        let targets = grid.dispatch_targets(i);
        for (members, weights) in [(&vacant_by_region[i], &joint[i].p), (&low_by_region[i], &joint[i].q)] {
            let shares = apportion(members.len() as u32, weights);
            let mut cursor = members.iter();
            for (k, &share) in shares.iter().enumerate() {
                for _ in 0..share {
                    let idx = *cursor.next().expect("shares sum to member count");
                    if targets[k] != i {
                        moves[idx] = Some(targets[k]);
                    }
                }
            }
        }
    }
    for (v, dest) in state.vehicles.iter_mut().zip(&moves) {
        if let Some(d) = dest {
            v.region = *d;
        }
    }

    // 2. battery drain for idle vehicles
    for (v, moved) in state.vehicles.iter_mut().zip(&moves) {
        if matches!(v.status(), Status::Vacant | Status::LowBattery)
            && (battery.relocation_drain || moved.is_none())
        {
            v.battery = (v.battery - battery.idle_drain).max(0.0);
        }
    }
    sweep_low_battery(state, battery.low_threshold);

    // 3. trips finish, chargers finish
    for v in state.vehicles.iter_mut() {
        match v.status() {
            Status::Occupied => {
                v.timer = v.timer.saturating_sub(1);
                if v.timer == 0 {
                    v.transition(Status::Vacant);
                    v.region = v.destination;
                }
            }
            Status::Still => {
                v.timer = v.timer.saturating_sub(1);
                if v.timer == 0 {
                    v.transition(Status::Vacant);
                    v.battery = 1.0;
                }
            }
            _ => {}
        }
    }
    sweep_low_battery(state, battery.low_threshold);
    state.recount(grid);

    // 4. local assignment
    let served = assign_local(state, scenario, &mut rng);

    // 5. next interval
    state.t = t + 1;
    if state.t < demand.horizon {
        spawn_demand(state, demand, &mut rng);
    }
    state.recount(grid);

    let counts = state.counts().to_vec();
    let deltas = before
        .iter()
        .zip(&counts)
        .map(|(b, a)| {
            [
                a.vacant as i64 - b.vacant as i64,
                a.low_battery as i64 - b.low_battery as i64,
                a.still as i64 - b.still as i64,
                a.empty_spots as i64 - b.empty_spots as i64,
            ]
        })
        .collect();
    Ok(StepLog {
        t,
        served: served.served,
        unserved: served.expired,
        seated: served.seated,
        unseated: served.unseated,
        counts,
        deltas,
    })
}

fn sweep_low_battery(state: &mut FleetState, threshold: f64) {
    for v in state.vehicles.iter_mut() {
        if v.status() == Status::Vacant && v.battery < threshold {
            v.transition(Status::LowBattery);
        }
    }
}

/// A simulator instance with its own seed stream.
#[derive(Debug, Clone)]
pub struct CityEnv {
    scenario: Scenario,
    state: FleetState,
    seed: u64,
}

impl CityEnv {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let state = reset(&scenario, seed);
        Self {
            scenario,
            state,
            seed,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &FleetState {
        &self.state
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.scenario.demand.horizon
    }

    pub fn step(&mut self, joint: &[RegionAction]) -> Result<StepLog> {
        let seed = derive_seed(self.seed, Stream::EnvStep, self.state.t as u64);
        step_environment(&mut self.state, &self.scenario, joint, seed)
    }
}
