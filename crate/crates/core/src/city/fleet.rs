use std::collections::VecDeque;

use rand::Rng;

use crate::city::grid::RegionGrid;
use crate::city::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Vacant,
    Occupied,
    LowBattery,
    Still,
}

impl Status {
    /// The five legal edges of the status cycle.
    pub fn can_become(self, next: Status) -> bool {
        use Status::*;
        matches!(
            (self, next),
            (Vacant, Occupied)
                | (Occupied, Vacant)
                | (Vacant, LowBattery)
                | (LowBattery, Still)
                | (Still, Vacant)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    status: Status,
    pub region: usize,
    pub battery: f64,
    /// Steps left in the current trip or charge.
    pub timer: u32,
    /// Trip destination; meaningful only while occupied.
    pub destination: usize,
}

impl Vehicle {
    pub fn new(id: usize, region: usize, battery: f64) -> Self {
        Self {
            id,
            status: Status::Vacant,
            region,
            battery,
            timer: 0,
            destination: region,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Moves along one status edge. Panics on an illegal edge, which would be
    /// a simulator bug rather than bad input.
    pub fn transition(&mut self, next: Status) {
        assert!(
            self.status.can_become(next),
            "vehicle {}: illegal status edge {:?} -> {:?}",
            self.id,
            self.status,
            next
        );
        self.status = next;
    }
}

/// A queued ride request; `born` is the interval it was issued for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub born: usize,
}

/// Per-region census.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegionCounts {
    pub vacant: u32,
    pub occupied: u32,
    pub low_battery: u32,
    pub still: u32,
    pub empty_spots: u32,
    pub spots: u32,
    pub demand: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub t: usize,
    pub(crate) vehicles: Vec<Vehicle>,
    pub(crate) queues: Vec<VecDeque<Request>>,
    counts: Vec<RegionCounts>,
}

impl FleetState {
    /// Places the fleet and draws initial batteries; no demand yet.
    pub fn initial<R: Rng>(scenario: &Scenario, rng: &mut R) -> Self {
        let n = scenario.grid.num_regions();
        let spec = &scenario.fleet;
        let mut vehicles = Vec::with_capacity(spec.vehicles());
        for (region, &count) in spec.placement.iter().enumerate() {
            for _ in 0..count {
                let battery = if spec.battery_max > spec.battery_min {
                    rng.random_range(spec.battery_min..spec.battery_max)
                } else {
                    spec.battery_min
                };
                vehicles.push(Vehicle::new(vehicles.len(), region, battery));
            }
        }
        Self::from_parts(&scenario.grid, 0, vehicles, vec![VecDeque::new(); n])
    }

    /// Builds a state from explicit vehicles and queues; counts are derived.
    pub fn from_parts(
        grid: &RegionGrid,
        t: usize,
        vehicles: Vec<Vehicle>,
        queues: Vec<VecDeque<Request>>,
    ) -> Self {
        let mut s = Self {
            t,
            vehicles,
            queues,
            counts: Vec::new(),
        };
        s.recount(grid);
        s
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicles_mut(&mut self) -> &mut [Vehicle] {
        &mut self.vehicles
    }

    pub fn queue(&self, region: usize) -> &VecDeque<Request> {
        &self.queues[region]
    }

    pub fn queue_mut(&mut self, region: usize) -> &mut VecDeque<Request> {
        &mut self.queues[region]
    }

    pub fn counts(&self) -> &[RegionCounts] {
        &self.counts
    }

    pub fn num_regions(&self) -> usize {
        self.queues.len()
    }

    pub fn recount(&mut self, grid: &RegionGrid) {
        self.counts = census(grid, &self.vehicles, &self.queues);
    }
}

/// Direct recount of the vehicle collection and queues.
pub fn census(
    grid: &RegionGrid,
    vehicles: &[Vehicle],
    queues: &[VecDeque<Request>],
) -> Vec<RegionCounts> {
    let mut counts: Vec<RegionCounts> = (0..grid.num_regions())
        .map(|i| RegionCounts {
            spots: grid.spots(i),
            demand: queues[i].len() as u32,
            ..Default::default()
        })
        .collect();
    for v in vehicles {
        let c = &mut counts[v.region];
        match v.status {
            Status::Vacant => c.vacant += 1,
            Status::Occupied => c.occupied += 1,
            Status::LowBattery => c.low_battery += 1,
            Status::Still => c.still += 1,
        }
    }
    for c in &mut counts {
        c.empty_spots = c.spots.saturating_sub(c.still);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legal_edges() {
        use Status::*;
        let all = [Vacant, Occupied, LowBattery, Still];
        let legal: usize = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| a.can_become(*b) as usize))
            .sum();
        assert_eq!(legal, 5);
        assert!(!Occupied.can_become(LowBattery));
        assert!(!Still.can_become(Occupied));
    }

    #[test]
    #[should_panic(expected = "illegal status edge")]
    fn illegal_transition_panics() {
        let mut v = Vehicle::new(0, 0, 1.0);
        v.transition(Status::Still);
    }
}
