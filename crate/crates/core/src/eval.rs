//! Frozen-policy evaluation under observation noise and paired comparison
//! reports.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::city::{CityEnv, Scenario};
use crate::config::scenario_fingerprint;
use crate::error::{Error, Result};
use crate::game::{compute_reward, local_states, LocalState, RegionAction, LOCAL_FIELDS};
use crate::rng::{stream_rng, Stream};
use crate::trainer::{region_actions_from_obs, ActionSpace, Checkpoint};

/// Region-level dispatch rule evaluated with adversaries disabled.
pub trait DispatchPolicy {
    /// Padded joint region action for one observation row per region.
    fn act(&self, space: &ActionSpace, obs: &Array2<f64>) -> Result<Vec<f64>>;
}

/// The region policy stored in a checkpoint.
pub struct CheckpointPolicy<'a>(pub &'a Checkpoint);

impl DispatchPolicy for CheckpointPolicy<'_> {
    fn act(&self, space: &ActionSpace, obs: &Array2<f64>) -> Result<Vec<f64>> {
        region_actions_from_obs(space, &self.0.nets.region, obs)
    }
}

/// Every region spreads vacant and low-battery vehicles evenly.
pub struct UniformPolicy;

impl DispatchPolicy for UniformPolicy {
    fn act(&self, space: &ActionSpace, _obs: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(fixed(space, RegionAction::uniform))
    }
}

/// No vehicle is ever dispatched.
pub struct StayPolicy;

impl DispatchPolicy for StayPolicy {
    fn act(&self, space: &ActionSpace, _obs: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(fixed(space, RegionAction::stay))
    }
}

fn fixed(space: &ActionSpace, make: fn(usize) -> RegionAction) -> Vec<f64> {
    (0..space.num_regions())
        .flat_map(|i| {
            let n = space.masks()[i].iter().filter(|&&m| m).count() / 2;
            space.layout.pad_action(i, &make(n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub noise_sigma: f64,
    pub seeds: Vec<u64>,
    /// Steps per rollout.
    pub steps: usize,
    pub beta: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 1.0,
            seeds: vec![1, 2, 3, 4, 5],
            steps: 48,
            beta: 1.0,
        }
    }
}

/// Metrics of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub seed: u64,
    pub mean_reward: f64,
    pub mean_u_c: f64,
    pub mean_u_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    /// Fingerprint of the canonical scenario text.
    pub scenario: String,
    pub noise_sigma: f64,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub mean_reward: f64,
    pub mean_u_c: f64,
    pub mean_u_s: f64,
}

impl EvalReport {
    /// Builds a report whose averages are the plain means of `runs`.
    pub fn from_runs(scenario: String, noise_sigma: f64, runs: Vec<RunMetrics>) -> Self {
        let k = runs.len().max(1) as f64;
        let mean = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / k;
        Self {
            scenario,
            noise_sigma,
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean_reward: mean(|r| r.mean_reward),
            mean_u_c: mean(|r| r.mean_u_c),
            mean_u_s: mean(|r| r.mean_u_s),
            runs,
        }
    }
}

/// Adds `sigma`-scaled standard normal noise to every local-state field of
/// each observation row: the region's own fields and those of its present
/// neighbors. Zero padding for missing neighbors is left alone.
pub fn add_observation_noise<R: Rng>(space: &ActionSpace, obs: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let slots = space.layout.neighbor_slots();
    for (i, mut row) in obs.rows_mut().into_iter().enumerate() {
        let mask = &space.masks()[i % space.num_regions()];
        for block in 0..=slots {
            let present = block == 0 || mask[block - 1];
            if !present {
                continue;
            }
            for k in LOCAL_FIELDS * block..LOCAL_FIELDS * (block + 1) {
                let z: f64 = rng.sample(StandardNormal);
                row[k] += sigma * z;
            }
        }
    }
}

/// One rollout of `policy` on the true simulator, with noisy region
/// observations and no adversary.
pub fn rollout(
    policy: &dyn DispatchPolicy,
    space: &ActionSpace,
    scenario: &Scenario,
    seed: u64,
    opts: &EvalOptions,
) -> Result<RunMetrics> {
    let mut env = CityEnv::new(scenario.clone(), seed);
    let mut noise = stream_rng(seed, Stream::ObservationNoise, 0);
    let n = space.num_regions();
    let w = space.region_action_len();
    let zeros = vec![0.0; 3 * n];
    let (mut r, mut c, mut s) = (0.0, 0.0, 0.0);
    for _ in 0..opts.steps {
        let states: Vec<LocalState> = local_states(env.state());
        let mut obs = Array2::zeros((n, space.obs_len()));
        space.write_region_obs(&states, env.state().t, &zeros, &mut obs, 0);
        add_observation_noise(space, &mut obs, opts.noise_sigma, &mut noise);
        let padded = policy.act(space, &obs)?;
        let joint: Vec<RegionAction> = (0..n)
            .map(|i| space.layout.unpad_action(i, &padded[i * w..(i + 1) * w]))
            .collect();
        env.step(&joint)?;
        let reward = compute_reward(&local_states(env.state()), opts.beta);
        r += reward.region;
        c += reward.fairness.charging;
        s += reward.fairness.supply_demand;
    }
    let k = opts.steps as f64;
    Ok(RunMetrics {
        seed,
        mean_reward: r / k,
        mean_u_c: c / k,
        mean_u_s: s / k,
    })
}

/// Runs one rollout per seed and aggregates in seed order.
pub fn evaluate(
    policy: &dyn DispatchPolicy,
    space: &ActionSpace,
    scenario: &Scenario,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.seeds.is_empty() {
        return Err(Error::validation("seeds", "need at least one seed"));
    }
    if opts.steps == 0 || opts.steps > scenario.demand.horizon {
        return Err(Error::validation("steps", "must lie in 1..=horizon"));
    }
    if !(opts.noise_sigma >= 0.0 && opts.noise_sigma.is_finite()) {
        return Err(Error::validation("noise_sigma", "must be nonnegative"));
    }
    let runs = opts
        .seeds
        .iter()
        .map(|&seed| rollout(policy, space, scenario, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_runs(scenario_fingerprint(scenario), opts.noise_sigma, runs))
}

/// Evaluates the region policy of a checkpoint.
pub fn evaluate_checkpoint(ck: &Checkpoint, scenario: &Scenario, opts: &EvalOptions) -> Result<EvalReport> {
    let space = ck.space_for(scenario)?;
    evaluate(&CheckpointPolicy(ck), &space, scenario, opts)
}

/// `(a − b)/|b|·100`.
pub fn increasing_rate(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b) / b.abs() * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub rate: f64,
}

impl ComparisonRow {
    pub fn new(metric: &str, a: f64, b: f64) -> Self {
        Self {
            metric: metric.into(),
            a,
            b,
            rate: increasing_rate(a, b),
        }
    }

    /// The rate as printed, e.g. `+8.21%`.
    pub fn rate_text(&self) -> String {
        format!("{:+.2}%", self.rate)
    }
}

/// Rows for reward, u_s, and u_c of `a` relative to `b`.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Vec<ComparisonRow>> {
    if a.scenario != b.scenario {
        return Err(Error::validation(
            "reports",
            format!("scenario mismatch ({} vs {})", a.scenario, b.scenario),
        ));
    }
    let mut sa = a.seeds.clone();
    let mut sb = b.seeds.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return Err(Error::validation("reports", "seed lists differ"));
    }
    Ok(compare_values(
        (a.mean_reward, a.mean_u_s, a.mean_u_c),
        (b.mean_reward, b.mean_u_s, b.mean_u_c),
    ))
}

/// Rows from raw `(reward, u_s, u_c)` averages.
pub fn compare_values(a: (f64, f64, f64), b: (f64, f64, f64)) -> Vec<ComparisonRow> {
    vec![
        ComparisonRow::new("reward", a.0, b.0),
        ComparisonRow::new("u_s", a.1, b.1),
        ComparisonRow::new("u_c", a.2, b.2),
    ]
}

/// Plain-text table in the style of a paper results table.
pub fn comparison_table(rows: &[ComparisonRow], label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>14} {:>14} {:>16}", "metric", label_a, label_b, "increasing rate");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>14.4} {:>14.4} {:>16}",
            format!("avg {}", r.metric),
            r.a,
            r.b,
            r.rate_text()
        );
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "a", "b", "increasing_rate_pct"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([r.metric.clone(), r.a.to_string(), r.b.to_string(), r.rate.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_reports_give_zero_rates() {
        let rows = compare_values((-3.0, -1.0, -2.0), (-3.0, -1.0, -2.0));
        assert!(rows.iter().all(|r| r.rate == 0.0 && r.rate_text() == "+0.00%"));
    }

    #[test]
    fn improvement_on_negative_values_is_positive() {
        assert!(increasing_rate(-14.53, -15.83) > 0.0);
        assert!(increasing_rate(-16.0, -15.83) < 0.0);
    }

    #[test]
    fn averages_are_means_of_runs() {
        let runs = vec![
            RunMetrics { seed: 2, mean_reward: -2.0, mean_u_c: -1.0, mean_u_s: -1.0 },
            RunMetrics { seed: 1, mean_reward: -4.0, mean_u_c: -3.0, mean_u_s: -1.0 },
        ];
        let r = EvalReport::from_runs("x".into(), 1.0, runs);
        assert_eq!((r.mean_reward, r.mean_u_c, r.mean_u_s), (-3.0, -2.0, -1.0));
    }
}
