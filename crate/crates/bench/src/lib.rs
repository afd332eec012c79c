//! Shared fixtures for the benchmark targets.

use oralab_core::{AtomList, DensityGrid, Grid, RabData, Schedule, SourceMeasure};

pub fn bench_grid(n_cells: usize) -> Grid {
    Grid::new(-10.0, 11.0, n_cells).unwrap()
}

pub fn bench_density(grid: Grid) -> DensityGrid {
    let mut u = DensityGrid::uniform_slab(grid, 0.0, 1.0, 1.0).unwrap();
    u = u
        .plus(&DensityGrid::gaussian(grid, -0.5, 0.4, 0.5).unwrap())
        .unwrap();
    u
}

pub fn bench_rab(grid: Grid, horizon: f64) -> RabData {
    RabData {
        u0: DensityGrid::uniform_slab(grid, 0.0, 1.0, 1.0).unwrap(),
        pi: SourceMeasure::from_atoms(AtomList::point(0.0)),
        injection: Schedule::LinearRate { rate: 1.0 },
        removal: Schedule::LinearRate { rate: 1.0 },
        horizon,
    }
}
