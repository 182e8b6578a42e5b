use crate::city::grid::RegionGrid;
use crate::error::{Error, Result};

/// Battery depletion and the low-battery threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryModel {
    pub low_threshold: f64,
    /// Drain per step for idle (vacant or low-battery) vehicles.
    pub idle_drain: f64,
    /// Drain per step of trip, charged in full at pickup.
    pub trip_drain: f64,
    /// Whether vehicles relocated by dispatch drain like idle vehicles.
    pub relocation_drain: bool,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            low_threshold: 0.2,
            idle_drain: 0.01,
            trip_drain: 0.05,
            relocation_drain: true,
        }
    }
}

/// Synthetic demand and duration model for one city.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandScenario {
    pub horizon: usize,
    pub demand_rate: Vec<f64>,
    pub od_matrix: Vec<Vec<f64>>,
    /// Trip length in steps, `trip_duration[origin][destination] >= 1`.
    pub trip_duration: Vec<Vec<u32>>,
    pub charge_duration: u32,
    pub battery: BatteryModel,
}

impl DemandScenario {
    pub fn validate(&self, regions: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("demand.horizon", "must be >= 1"));
        }
        if self.demand_rate.len() != regions {
            return Err(Error::validation(
                "demand.rates",
                format!("expected {regions} entries, got {}", self.demand_rate.len()),
            ));
        }
        for (i, r) in self.demand_rate.iter().enumerate() {
            if !r.is_finite() || *r < 0.0 {
                return Err(Error::validation(
                    format!("demand.rates[{i}]"),
                    format!("rate must be finite and nonnegative, got {r}"),
                ));
            }
        }
        if self.od_matrix.len() != regions {
            return Err(Error::validation(
                "demand.od",
                format!("expected {regions} rows, got {}", self.od_matrix.len()),
            ));
        }
        for (i, row) in self.od_matrix.iter().enumerate() {
            if row.len() != regions {
                return Err(Error::validation(
                    format!("demand.od[{i}]"),
                    format!("expected {regions} entries, got {}", row.len()),
                ));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::validation(
                    format!("demand.od[{i}]"),
                    "probabilities must be finite and nonnegative",
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    format!("demand.od[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        if self.trip_duration.len() != regions
            || self.trip_duration.iter().any(|r| r.len() != regions)
        {
            return Err(Error::validation("durations.trip", "must be a square region matrix"));
        }
        if self.trip_duration.iter().flatten().any(|&d| d == 0) {
            return Err(Error::validation("durations.trip", "trip durations must be >= 1"));
        }
        if self.charge_duration == 0 {
            return Err(Error::validation("durations.charge", "must be >= 1"));
        }
        let b = &self.battery;
        if !(b.low_threshold > 0.0 && b.low_threshold < 1.0) {
            return Err(Error::validation("battery.low_threshold", "must lie in (0, 1)"));
        }
        if !(b.idle_drain >= 0.0 && b.idle_drain.is_finite()) {
            return Err(Error::validation("battery.idle_drain", "must be nonnegative"));
        }
        if !(b.trip_drain >= 0.0 && b.trip_drain.is_finite()) {
            return Err(Error::validation("battery.trip_drain", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Initial fleet: size, per-region placement, and battery range.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub placement: Vec<usize>,
    pub battery_min: f64,
    pub battery_max: f64,
}

impl FleetSpec {
    /// Spreads `vehicles` round-robin over `regions`.
    pub fn round_robin(vehicles: usize, regions: usize) -> Self {
        let mut placement = vec![0; regions];
        for v in 0..vehicles {
            placement[v % regions] += 1;
        }
        Self {
            placement,
            battery_min: 0.5,
            battery_max: 1.0,
        }
    }

    pub fn vehicles(&self) -> usize {
        self.placement.iter().sum()
    }
}

/// Everything needed to run the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: RegionGrid,
    pub demand: DemandScenario,
    pub fleet: FleetSpec,
}

impl Scenario {
    pub fn new(grid: RegionGrid, demand: DemandScenario, fleet: FleetSpec) -> Result<Self> {
        let n = grid.num_regions();
        demand.validate(n)?;
        if fleet.placement.len() != n {
            return Err(Error::validation(
                "fleet.placement",
                format!("expected {n} entries, got {}", fleet.placement.len()),
            ));
        }
        if fleet.vehicles() == 0 {
            return Err(Error::validation("fleet.vehicles", "fleet must be nonempty"));
        }
        let (lo, hi) = (fleet.battery_min, fleet.battery_max);
        if !(lo >= demand.battery.low_threshold && lo <= hi && hi <= 1.0) {
            return Err(Error::validation(
                "fleet.battery_min",
                format!(
                    "need low_threshold <= battery_min <= battery_max <= 1, got [{lo}, {hi}]"
                ),
            ));
        }
        Ok(Self { grid, demand, fleet })
    }

    /// Trip durations `base + per_hop · manhattan(o, d)`.
    pub fn manhattan_trips(grid: &RegionGrid, base: u32, per_hop: u32) -> Vec<Vec<u32>> {
        let n = grid.num_regions();
        (0..n)
            .map(|o| {
                (0..n)
                    .map(|d| base + per_hop * grid.manhattan(o, d) as u32)
                    .collect()
            })
            .collect()
    }

    /// A skewed synthetic city used by tests, examples, and the acceptance runs.
    ///
    /// Demand concentrates in the north-west quadrant, trips mostly end in the
    /// south-east, and charging spots sit in a few regions, so dispatch
    /// matters for both fairness terms.
    pub fn skewed_city(width: usize, height: usize, vehicles: usize, spots: usize) -> Result<Self> {
        let n = width * height;
        let mut demand_rate = vec![0.0; n];
        let mut station_weight = vec![0usize; n];
        for i in 0..n {
            let (row, col) = (i / width, i % width);
            let near_nw = row < height.div_ceil(2) && col < width.div_ceil(2);
            demand_rate[i] = if near_nw { 0.8 } else { 0.1 };
            if (row + col) % 3 == 0 {
                station_weight[i] = 1;
            }
        }
        if station_weight.iter().all(|&w| w == 0) {
            station_weight[0] = 1;
        }
        let holders: Vec<usize> = (0..n).filter(|&i| station_weight[i] > 0).collect();
        let mut stations = vec![0i64; n];
        for s in 0..spots {
            stations[holders[s % holders.len()]] += 1;
        }
        let grid = RegionGrid::new(width, height, &stations)?;

        let od_matrix = (0..n)
            .map(|o| {
                let weights: Vec<f64> = (0..n)
                    .map(|d| {
                        let p = grid.position(d);
                        let south_east = p.row >= height / 2 && p.col >= width / 2;
                        let base = if south_east { 3.0 } else { 1.0 };
                        base / (1.0 + grid.manhattan(o, d) as f64)
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| w / total).collect()
            })
            .collect();
        let trip_duration = Self::manhattan_trips(&grid, 1, 1);
        let demand = DemandScenario {
            horizon: 48,
            demand_rate,
            od_matrix,
            trip_duration,
            charge_duration: 3,
            battery: BatteryModel::default(),
        };
        let fleet = FleetSpec::round_robin(vehicles, n);
        Self::new(grid, demand, fleet)
    }
}
