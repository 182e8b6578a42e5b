//! Grid-city fleet simulator.

pub mod fleet;
pub mod grid;
pub mod scenario;
pub mod sim;

pub use fleet::{census, FleetState, RegionCounts, Request, Status, Vehicle};
pub use grid::{Direction, RegionGrid, RegionPosition};
pub use scenario::{BatteryModel, DemandScenario, FleetSpec, Scenario};
pub use sim::{
    apportion, assign_local, reset, spawn_demand, step_environment, CityEnv, ServedCounts,
    StepLog, ACTION_TOL,
};
