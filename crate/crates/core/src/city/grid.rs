use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of one grid cell in synthetic degrees.
pub const CELL_DEGREES: f64 = 0.01;

/// Neighbor directions on the 4-neighborhood grid.
///
/// The declaration order matches ascending region index for row-major
/// numbering: up (`i - w`) < left (`i - 1`) < right (`i + 1`) < down (`i + w`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Left,
    Right,
    Down,
}

/// Location record of a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPosition {
    pub row: usize,
    pub col: usize,
    pub longitude: f64,
    pub latitude: f64,
    /// (west, south, east, north)
    pub bounds: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    width: usize,
    height: usize,
    neighbors: Vec<Vec<usize>>,
    positions: Vec<RegionPosition>,
    stations: Vec<u32>,
    slots: Vec<Direction>,
}

impl RegionGrid {
    /// Builds a `width × height` grid with 4-neighborhood adjacency.
    ///
    /// `stations[i]` is the number of charging spots in region `i` (row-major).
    pub fn new(width: usize, height: usize, stations: &[i64]) -> Result<Self> {
        if width == 0 {
            return Err(Error::validation("grid.width", "must be >= 1"));
        }
        if height == 0 {
            return Err(Error::validation("grid.height", "must be >= 1"));
        }
        let n = width * height;
        if n < 2 {
            return Err(Error::validation("grid", "needs at least two regions"));
        }
        if stations.len() != n {
            return Err(Error::validation(
                "stations.spots",
                format!("expected {n} entries, got {}", stations.len()),
            ));
        }
        let mut spots = Vec::with_capacity(n);
        for (i, &s) in stations.iter().enumerate() {
            if s < 0 {
                return Err(Error::validation(
                    format!("stations.spots[{i}]"),
                    format!("negative station count {s}"),
                ));
            }
            spots.push(u32::try_from(s).map_err(|_| {
                Error::validation(format!("stations.spots[{i}]"), "too large")
            })?);
        }
        if spots.iter().all(|&s| s == 0) {
            return Err(Error::validation("stations.spots", "city needs at least one spot"));
        }

        let mut slots = Vec::new();
        if height > 1 {
            slots.push(Direction::Up);
        }
        if width > 1 {
            slots.push(Direction::Left);
            slots.push(Direction::Right);
        }
        if height > 1 {
            slots.push(Direction::Down);
        }
        slots.sort();

        let mut grid = Self {
            width,
            height,
            neighbors: Vec::with_capacity(n),
            positions: Vec::with_capacity(n),
            stations: spots,
            slots,
        };
        for i in 0..n {
            let (row, col) = (i / width, i % width);
            let nb: Vec<usize> = [Direction::Up, Direction::Left, Direction::Right, Direction::Down]
                .iter()
                .filter_map(|&d| grid.step(i, d))
                .collect();
            debug_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            grid.neighbors.push(nb);
            let west = col as f64 * CELL_DEGREES;
            let south = row as f64 * CELL_DEGREES;
            grid.positions.push(RegionPosition {
                row,
                col,
                longitude: west + 0.5 * CELL_DEGREES,
                latitude: south + 0.5 * CELL_DEGREES,
                bounds: [west, south, west + CELL_DEGREES, south + CELL_DEGREES],
            });
        }
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_regions(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Neighbors of `region`, ascending by index.
    pub fn neighbors(&self, region: usize) -> &[usize] {
        &self.neighbors[region]
    }

    /// `n_i = |N(i)| + 1`.
    pub fn action_len(&self, region: usize) -> usize {
        self.neighbors[region].len() + 1
    }

    /// Dispatch targets of `region`: neighbors ascending, then the region itself.
    pub fn dispatch_targets(&self, region: usize) -> Vec<usize> {
        let mut t = self.neighbors[region].clone();
        t.push(region);
        t
    }

    pub fn position(&self, region: usize) -> &RegionPosition {
        &self.positions[region]
    }

    pub fn spots(&self, region: usize) -> u32 {
        self.stations[region]
    }

    pub fn stations(&self) -> &[u32] {
        &self.stations
    }

    pub fn total_spots(&self) -> u64 {
        self.stations.iter().map(|&s| s as u64).sum()
    }

    /// Direction slots used by fixed-width observation and action layouts.
    pub fn slots(&self) -> &[Direction] {
        &self.slots
    }

    /// Region reached from `region` by one step in `dir`, if inside the grid.
    pub fn step(&self, region: usize, dir: Direction) -> Option<usize> {
        let (row, col) = (region / self.width, region % self.width);
        match dir {
            Direction::Up if row > 0 => Some(region - self.width),
            Direction::Left if col > 0 => Some(region - 1),
            Direction::Right if col + 1 < self.width => Some(region + 1),
            Direction::Down if row + 1 < self.height => Some(region + self.width),
            _ => None,
        }
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (pa, pb) = (&self.positions[a], &self.positions[b]);
        pa.row.abs_diff(pb.row) + pa.col.abs_diff(pb.col)
    }
}
