//! Atomic measures, injection sources, and time-stamped removal records.

use crate::error::{CoreError, Result};
use crate::grid::{neumaier_sum, DensityGrid, Grid};

/// Finite list of weighted point masses.
#[derive(Clone, Debug, Default)]
pub struct AtomList {
    pub atoms: Vec<(f64, f64)>,
}

impl AtomList {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for (x, w) in &atoms {
            if !x.is_finite() || !w.is_finite() || *w < 0.0 {
                return Err(CoreError::InvalidData(
                    "atoms need finite locations and nonnegative weights".into(),
                ));
            }
        }
        Ok(AtomList { atoms })
    }

    pub fn point(x: f64) -> Self {
        AtomList {
            atoms: vec![(x, 1.0)],
        }
    }

    pub fn total_weight(&self) -> f64 {
        neumaier_sum(self.atoms.iter().map(|a| a.1))
    }

    pub fn weight_left_of(&self, r: f64) -> f64 {
        neumaier_sum(self.atoms.iter().filter(|a| a.0 < r).map(|a| a.1))
    }

    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self
            .atoms
            .iter()
            .filter(|a| a.1 > 0.0)
            .map(|a| a.0)
            .collect();
        if xs.is_empty() {
            return None;
        }
        Some((
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ))
    }
}

/// Source measure for injections: atoms, a density component, or both.
#[derive(Clone, Debug)]
pub struct SourceMeasure {
    pub atoms: AtomList,
    pub density: Option<DensityGrid>,
}

impl SourceMeasure {
    pub fn from_atoms(atoms: AtomList) -> Self {
        SourceMeasure {
            atoms,
            density: None,
        }
    }

    pub fn from_density(density: DensityGrid) -> Self {
        SourceMeasure {
            atoms: AtomList::default(),
            density: Some(density),
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.total_weight()
            + self
                .density
                .as_ref()
                .map(|d| d.total_mass())
                .unwrap_or(0.0)
    }

    /// Mass on `[r, infinity)`.
    pub fn tail(&self, r: f64) -> f64 {
        let from_atoms =
            neumaier_sum(self.atoms.atoms.iter().filter(|a| a.0 >= r).map(|a| a.1));
        let from_density = self.density.as_ref().map(|d| d.tail().eval(r)).unwrap_or(0.0);
        from_atoms + from_density
    }

    /// Inverse-CDF sample at level `p` of the normalized measure. Shared
    /// uniforms across two sources realize the coupling preorder.
    pub fn quantile(&self, p: f64) -> f64 {
        let total = self.total_weight();
        let target = p.clamp(0.0, 1.0) * total;
        // Walk atoms and density cells merged by position.
        let mut segments: Vec<(f64, f64, f64)> = Vec::new(); // (x, width, mass)
        for (x, w) in &self.atoms.atoms {
            if *w > 0.0 {
                segments.push((*x, 0.0, *w));
            }
        }
        if let Some(d) = &self.density {
            let h = d.grid().h();
            for (i, v) in d.values().iter().enumerate() {
                if *v > 0.0 {
                    segments.push((d.grid().breakpoint(i), h, v * h));
                }
            }
        }
        segments.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut cum = 0.0;
        for (x, width, mass) in &segments {
            if cum + mass >= target {
                if *width == 0.0 || *mass <= 0.0 {
                    return *x;
                }
                return x + width * ((target - cum) / mass).clamp(0.0, 1.0);
            }
            cum += mass;
        }
        segments.last().map(|s| s.0 + s.1).unwrap_or(0.0)
    }

    /// Tail domination `self [r, inf) <= other [r, inf)` for all `r`,
    /// checked at atom positions and grid breakpoints of both sources.
    pub fn dominated_by(&self, other: &SourceMeasure) -> bool {
        let mut rs: Vec<f64> = Vec::new();
        for src in [self, other] {
            for (x, _) in &src.atoms.atoms {
                rs.push(*x);
                rs.push(x + 1e-12 * (1.0 + x.abs()));
            }
            if let Some(d) = &src.density {
                for k in 0..=d.grid().n_cells() {
                    rs.push(d.grid().breakpoint(k));
                }
            }
        }
        let tol = 1e-12 * self.total_weight().max(other.total_weight()).max(1.0);
        rs.iter().all(|r| self.tail(*r) <= other.tail(*r) + tol)
    }
}

/// One recorded removal: a grid slab, a batch of atoms, or a compact
/// summary when full detail is not kept.
#[derive(Clone, Debug)]
pub enum RemovalPayload {
    /// Sparse restriction of a density: `values[j]` lives in cell
    /// `start + j`. Boundary cells hold partial values from the cut split.
    GridSlab { start: usize, values: Vec<f64> },
    Atoms(AtomList),
    Summary { mass: f64, lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
pub struct RemovalEntry {
    pub time: f64,
    pub payload: RemovalPayload,
}

/// Time-stamped removal record with exactly queryable cumulative mass.
#[derive(Clone, Debug, Default)]
pub struct RemovalMeasure {
    grid: Option<Grid>,
    entries: Vec<RemovalEntry>,
    cumulative: Vec<f64>,
}

impl RemovalMeasure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_grid(grid: Grid) -> Self {
        RemovalMeasure {
            grid: Some(grid),
            entries: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    pub fn grid(&self) -> Option<Grid> {
        self.grid
    }

    pub fn entries(&self) -> &[RemovalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact mass of one entry, read off the cumulative ledger.
    pub fn entry_total(&self, idx: usize) -> f64 {
        let prev = if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        };
        self.cumulative[idx] - prev
    }

    /// Mass of one entry lying strictly left of `r`.
    pub fn entry_mass_left_of(&self, idx: usize, r: f64) -> Result<f64> {
        self.payload_mass_left_of(&self.entries[idx].payload, r)
    }

    pub fn push(&mut self, entry: RemovalEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.time < last.time {
                return Err(CoreError::InvalidData(
                    "removal entries must have nondecreasing times".into(),
                ));
            }
        }
        let h = self.grid.map(|g| g.h()).unwrap_or(1.0);
        let mass = payload_mass(&entry.payload, h);
        if mass < 0.0 {
            return Err(CoreError::InvalidData("negative removal mass".into()));
        }
        let prev = self.cumulative.last().cloned().unwrap_or(0.0);
        self.cumulative.push(prev + mass);
        self.entries.push(entry);
        Ok(())
    }

    /// Total removed mass on `[0, t]`.
    pub fn cumulative_mass_at(&self, t: f64) -> f64 {
        let idx = self.entries.partition_point(|e| e.time <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().cloned().unwrap_or(0.0)
    }

    /// Removed mass on `(-infinity, r) x [0, t]`. Slab masses resolve
    /// linearly inside cells; summaries are rejected.
    pub fn mass_left_of(&self, r: f64, t: f64) -> Result<f64> {
        let idx = self.entries.partition_point(|e| e.time <= t);
        let mut acc = 0.0;
        for e in &self.entries[..idx] {
            acc += self.payload_mass_left_of(&e.payload, r)?;
        }
        Ok(acc)
    }

    fn payload_mass_left_of(&self, payload: &RemovalPayload, r: f64) -> Result<f64> {
        match payload {
            RemovalPayload::Atoms(a) => Ok(a.weight_left_of(r)),
            RemovalPayload::GridSlab { start, values } => {
                let grid = self.grid.ok_or_else(|| {
                    CoreError::InvalidData("grid slab recorded without a grid".into())
                })?;
                let h = grid.h();
                let mut acc = 0.0;
                for (j, v) in values.iter().enumerate() {
                    let lo = grid.breakpoint(start + j);
                    if r <= lo {
                        break;
                    }
                    let frac = ((r - lo) / h).min(1.0);
                    acc += v * h * frac;
                }
                Ok(acc)
            }
            RemovalPayload::Summary { .. } => Err(CoreError::InvalidData(
                "summary removal records cannot resolve spatial queries; rerun with full detail"
                    .into(),
            )),
        }
    }

    /// Support bounds of entries with time in `[t1, t2]`.
    pub fn support_in_window(&self, t1: f64, t2: f64) -> Result<(f64, f64)> {
        if !(t1 < t2) {
            return Err(CoreError::EmptyWindow);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut seen = false;
        for e in &self.entries {
            if e.time < t1 || e.time > t2 {
                continue;
            }
            let bounds = match &e.payload {
                RemovalPayload::Atoms(a) => a.support_bounds(),
                RemovalPayload::GridSlab { start, values } => {
                    let grid = self.grid.ok_or_else(|| {
                        CoreError::InvalidData("grid slab recorded without a grid".into())
                    })?;
                    let first = values.iter().position(|v| *v > 0.0);
                    let last = values.iter().rposition(|v| *v > 0.0);
                    match (first, last) {
                        (Some(f), Some(l)) => Some((
                            grid.breakpoint(start + f),
                            grid.breakpoint(start + l + 1),
                        )),
                        _ => None,
                    }
                }
                RemovalPayload::Summary { mass, lo, hi } => {
                    if *mass > 0.0 {
                        Some((*lo, *hi))
                    } else {
                        None
                    }
                }
            };
            if let Some((a, b)) = bounds {
                lo = lo.min(a);
                hi = hi.max(b);
                seen = true;
            }
        }
        if !seen {
            return Err(CoreError::EmptyWindow);
        }
        Ok((lo, hi))
    }
}

fn payload_mass(payload: &RemovalPayload, grid_h: f64) -> f64 {
    match payload {
        RemovalPayload::Atoms(a) => a.total_weight(),
        RemovalPayload::GridSlab { values, .. } => {
            neumaier_sum(values.iter().cloned()) * grid_h
        }
        RemovalPayload::Summary { mass, .. } => *mass,
    }
}

/// Extracts the sparse nonzero block of a removed density for recording.
pub fn slab_from_density(removed: &DensityGrid) -> RemovalPayload {
    let vals = removed.values();
    let first = vals.iter().position(|v| *v > 0.0);
    let last = vals.iter().rposition(|v| *v > 0.0);
    match (first, last) {
        (Some(f), Some(l)) => RemovalPayload::GridSlab {
            start: f,
            values: vals[f..=l].to_vec(),
        },
        _ => RemovalPayload::GridSlab {
            start: 0,
            values: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_support_and_weights() {
        let a = AtomList::new(vec![(2.0, 0.5), (-1.0, 0.25)]).unwrap();
        assert_eq!(a.total_weight(), 0.75);
        assert_eq!(a.weight_left_of(0.0), 0.25);
        assert_eq!(a.support_bounds(), Some((-1.0, 2.0)));
    }

    #[test]
    fn removal_cumulative_mass() {
        let grid = Grid::new(0.0, 1.0, 10).unwrap();
        let mut m = RemovalMeasure::with_grid(grid);
        m.push(RemovalEntry {
            time: 0.5,
            payload: RemovalPayload::Atoms(AtomList::new(vec![(2.0, 1.0)]).unwrap()),
        })
        .unwrap();
        m.push(RemovalEntry {
            time: 0.75,
            payload: RemovalPayload::GridSlab {
                start: 0,
                values: vec![10.0],
            },
        })
        .unwrap();
        assert_eq!(m.cumulative_mass_at(0.4), 0.0);
        assert_eq!(m.cumulative_mass_at(0.5), 1.0);
        assert!((m.cumulative_mass_at(1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn support_window() {
        let grid = Grid::new(0.0, 1.0, 10).unwrap();
        let mut m = RemovalMeasure::with_grid(grid);
        m.push(RemovalEntry {
            time: 0.5,
            payload: RemovalPayload::Atoms(AtomList::new(vec![(2.0, 1.0)]).unwrap()),
        })
        .unwrap();
        assert_eq!(m.support_in_window(0.0, 1.0).unwrap(), (2.0, 2.0));
        assert!(matches!(
            m.support_in_window(0.6, 1.0),
            Err(CoreError::EmptyWindow)
        ));
        assert!(matches!(
            m.support_in_window(1.0, 1.0),
            Err(CoreError::EmptyWindow)
        ));
    }

    #[test]
    fn quantile_sampling_mixed_source() {
        let grid = Grid::new(-1.0, 1.0, 100).unwrap();
        let density = DensityGrid::uniform_slab(grid, 0.0, 0.5, 0.5).unwrap();
        let src = SourceMeasure {
            atoms: AtomList::new(vec![(-0.5, 0.5)]).unwrap(),
            density: Some(density),
        };
        // Half the mass sits in the atom at -0.5.
        assert_eq!(src.quantile(0.25), -0.5);
        let x = src.quantile(0.75);
        assert!((x - 0.25).abs() < 1e-10);
    }

    #[test]
    fn source_domination() {
        let a = SourceMeasure::from_atoms(AtomList::point(-1.0));
        let b = SourceMeasure::from_atoms(AtomList::point(0.0));
        assert!(a.dominated_by(&b));
        assert!(!b.dominated_by(&a));
    }
}
