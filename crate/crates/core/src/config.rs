//! Scenario and run configuration files (TOML), checkpoint files (JSON), and
//! metric export (CSV).
//!
//! Scenario files have the sections `grid`, `stations`, `fleet`, `demand`,
//! `durations`, and an optional `battery`. Unknown keys are rejected
//! everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::city::{BatteryModel, DemandScenario, FleetSpec, RegionGrid, Scenario};
use crate::error::{Error, Result};
use crate::projection::{HPolytope, HalfSpace};
use crate::trainer::{Checkpoint, EpisodeMetrics, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    pub stations: StationsSection,
    pub fleet: FleetSection,
    pub demand: DemandSection,
    pub durations: DurationsSection,
    #[serde(default)]
    pub battery: BatterySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsSection {
    /// Charging spots per region, row-major.
    pub spots: Vec<i64>,
}

/// Either `placement` (vehicles per region) or `vehicles` (spread
/// round-robin) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Vec<usize>>,
    #[serde(default = "default_battery_min")]
    pub battery_min: f64,
    #[serde(default = "default_battery_max")]
    pub battery_max: f64,
}

fn default_battery_min() -> f64 {
    0.5
}

fn default_battery_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub horizon: usize,
    /// Mean requests per region and step.
    pub rates: Vec<f64>,
    /// Origin-destination probabilities; each row sums to 1.
    pub od: Vec<Vec<f64>>,
}

/// Either `trip` (a full matrix) or `trip_base` plus `trip_per_hop`
/// (Manhattan-distance durations) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_base: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_per_hop: Option<u32>,
    pub charge: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySection {
    pub low_threshold: f64,
    pub idle_drain: f64,
    pub trip_drain: f64,
    pub relocation_drain: bool,
}

impl Default for BatterySection {
    fn default() -> Self {
        let b = BatteryModel::default();
        Self {
            low_threshold: b.low_threshold,
            idle_drain: b.idle_drain,
            trip_drain: b.trip_drain,
            relocation_drain: b.relocation_drain,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let grid = RegionGrid::new(self.grid.width, self.grid.height, &self.stations.spots)?;
        let n = grid.num_regions();
        let placement = match (self.fleet.vehicles, self.fleet.placement) {
            (Some(v), None) => FleetSpec::round_robin(v, n).placement,
            (None, Some(p)) => p,
            (Some(v), Some(p)) if p.iter().sum::<usize>() == v => p,
            (Some(_), Some(_)) => {
                return Err(Error::validation("fleet.vehicles", "differs from the sum of fleet.placement"))
            }
            (None, None) => {
                return Err(Error::validation("fleet", "give either vehicles or placement"))
            }
        };
        let d = self.durations;
        let trip_duration = match (d.trip, d.trip_base, d.trip_per_hop) {
            (Some(m), None, None) => m,
            (None, Some(base), Some(hop)) => Scenario::manhattan_trips(&grid, base, hop),
            _ => {
                return Err(Error::validation(
                    "durations",
                    "give either trip or both trip_base and trip_per_hop",
                ))
            }
        };
        let b = self.battery;
        let demand = DemandScenario {
            horizon: self.demand.horizon,
            demand_rate: self.demand.rates,
            od_matrix: self.demand.od,
            trip_duration,
            charge_duration: d.charge,
            battery: BatteryModel {
                low_threshold: b.low_threshold,
                idle_drain: b.idle_drain,
                trip_drain: b.trip_drain,
                relocation_drain: b.relocation_drain,
            },
        };
        let fleet = FleetSpec {
            placement,
            battery_min: self.fleet.battery_min,
            battery_max: self.fleet.battery_max,
        };
        Scenario::new(grid, demand, fleet)
    }

    /// The canonical file form of a scenario: explicit placement and trip
    /// matrix, every battery key present.
    pub fn from_scenario(s: &Scenario) -> Self {
        let b = &s.demand.battery;
        Self {
            grid: GridSection {
                width: s.grid.width(),
                height: s.grid.height(),
            },
            stations: StationsSection {
                spots: s.grid.stations().iter().map(|&v| v as i64).collect(),
            },
            fleet: FleetSection {
                vehicles: None,
                placement: Some(s.fleet.placement.clone()),
                battery_min: s.fleet.battery_min,
                battery_max: s.fleet.battery_max,
            },
            demand: DemandSection {
                horizon: s.demand.horizon,
                rates: s.demand.demand_rate.clone(),
                od: s.demand.od_matrix.clone(),
            },
            durations: DurationsSection {
                trip: Some(s.demand.trip_duration.clone()),
                trip_base: None,
                trip_per_hop: None,
                charge: s.demand.charge_duration,
            },
            battery: BatterySection {
                low_threshold: b.low_threshold,
                idle_drain: b.idle_drain,
                trip_drain: b.trip_drain,
                relocation_drain: b.relocation_drain,
            },
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses and validates scenario text; `origin` names the source in errors.
pub fn parse_scenario_str(text: &str, origin: &Path) -> Result<Scenario> {
    parse_toml::<ScenarioFile>(text, origin)?.into_scenario()
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario_str(&read(path)?, path)
}

/// Canonical TOML text of a scenario.
pub fn serialize_scenario(s: &Scenario) -> String {
    toml::to_string(&ScenarioFile::from_scenario(s)).expect("scenario serializes")
}

/// FNV-1a hash of the canonical scenario text, as 16 hex digits.
pub fn scenario_fingerprint(s: &Scenario) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in serialize_scenario(s).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Evaluation settings of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub noise_sigma: f64,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            noise_sigma: 1.0,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// A training run: scenario, hyperparameters, evaluation settings, outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario file, relative to the run config's directory.
    pub scenario: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many episodes; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Loads a run config, resolves the scenario path against the config's
    /// directory, and validates every field.
    pub fn load(path: &Path) -> Result<(RunConfig, Scenario)> {
        let mut cfg: RunConfig = parse_toml(&read(path)?, path)?;
        if cfg.scenario.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.scenario = base.join(&cfg.scenario);
        }
        if !cfg.scenario.is_file() {
            return Err(Error::validation(
                "scenario",
                format!("{} does not exist", cfg.scenario.display()),
            ));
        }
        let scenario = parse_scenario(&cfg.scenario)?;
        cfg.validate(&scenario)?;
        Ok((cfg, scenario))
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        self.trainer.validate_for(scenario)?;
        if !(self.eval.noise_sigma >= 0.0 && self.eval.noise_sigma.is_finite()) {
            return Err(Error::validation("eval.noise_sigma", "must be nonnegative"));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::validation("eval.seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// Every setting with defaults filled in, as TOML.
    pub fn effective_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

pub const METRICS_HEADER: &str = "episode,mean_reward,mean_u_c,mean_u_s,critic_loss";

/// Per-episode metrics as CSV text, full precision.
pub fn metrics_csv(log: &[EpisodeMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER.split(',')).expect("in-memory write");
    for m in log {
        w.write_record([
            m.episode.to_string(),
            m.mean_reward.to_string(),
            m.mean_u_c.to_string(),
            m.mean_u_s.to_string(),
            m.critic_loss.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn export_metrics(log: &[EpisodeMetrics], path: &Path) -> Result<()> {
    if log.is_empty() {
        return Err(Error::validation("metrics", "log is empty"));
    }
    write_text(path, &metrics_csv(log))
}

/// Region and adversary returns per episode as CSV text.
pub fn returns_csv(log: &[EpisodeMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "region_return", "adversary_return"])
        .expect("in-memory write");
    for m in log {
        w.write_record([
            m.episode.to_string(),
            m.region_return.to_string(),
            m.adversary_return.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

/// A polytope file: `witness = [...]` and `[[rows]]` tables holding
/// `normal = [...]` and `bound = ...` for the constraint `normal·a <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeFile {
    pub witness: Vec<f64>,
    pub rows: Vec<HalfSpaceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceRow {
    pub normal: Vec<f64>,
    pub bound: f64,
}

pub fn parse_polytope(path: &Path) -> Result<HPolytope> {
    let file: PolytopeFile = parse_toml(&read(path)?, path)?;
    let rows = file
        .rows
        .into_iter()
        .map(|r| HalfSpace::new(r.normal, r.bound))
        .collect::<Result<Vec<_>>>()?;
    HPolytope::new(rows, file.witness)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write(path, contents)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::NonFinite {
        context: format!("json serialization of {}: {e}", path.display()),
    })?;
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_json(ck, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
width = 2
height = 1

[stations]
spots = [1, 0]

[fleet]
vehicles = 2

[demand]
horizon = 4
rates = [1.0, 0.0]
od = [[0.0, 1.0], [1.0, 0.0]]

[durations]
trip_base = 1
trip_per_hop = 1
charge = 2
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = parse_scenario_str(MINIMAL, Path::new("minimal.toml")).unwrap();
        assert_eq!(s.grid.num_regions(), 2);
        assert_eq!(s.grid.total_spots(), 1);
        assert_eq!(s.fleet.placement, vec![1, 1]);
        assert_eq!(s.demand.trip_duration, vec![vec![1, 2], vec![2, 1]]);
    }

    #[test]
    fn canonical_roundtrip() {
        let s = parse_scenario_str(MINIMAL, Path::new("m")).unwrap();
        let text = serialize_scenario(&s);
        let again = parse_scenario_str(&text, Path::new("m")).unwrap();
        assert_eq!(s, again);
        assert_eq!(serialize_scenario(&again), text);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("charge = 2", "charge = 2\nspeed = 3");
        let err = parse_scenario_str(&text, Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("speed"));
    }

    #[test]
    fn od_row_sum_names_row() {
        let text = MINIMAL.replace("od = [[0.0, 1.0], [1.0, 0.0]]", "od = [[0.0, 0.9], [1.0, 0.0]]");
        let err = parse_scenario_str(&text, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("demand.od[0]"), "{err}");
    }
}
