//! Shared-grid densities, right-tail functions, the mass-transport partial
//! order, and the cutting operators.
//!
//! Every density in a run lives on one uniform grid. Cut boundaries falling
//! inside a cell split that cell's mass fractionally, so removed masses are
//! exact and mass ledgers hold to machine precision. Order checks compare
//! tails at the shared breakpoints, where both tails are piecewise linear.

use crate::error::{CoreError, Result};

/// Relative tolerance for order checks: `tol = TOL_ORDER_REL * total_mass`.
pub const TOL_ORDER_REL: f64 = 1e-12;

/// Compensated (Neumaier) summation.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Uniform spatial grid on `[x_min, x_max]` with `n_cells` cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_cells: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(CoreError::InvalidData(format!(
                "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_cells == 0 {
            return Err(CoreError::InvalidData("grid needs at least one cell".into()));
        }
        Ok(Grid {
            x_min,
            x_max,
            n_cells,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    /// Breakpoint `x_min + k*h`, defined for `k` in `0..=n_cells`.
    pub fn breakpoint(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.h()
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.h()
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> usize {
        let raw = ((x - self.x_min) / self.h()).floor();
        (raw.max(0.0) as usize).min(self.n_cells - 1)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(CoreError::GridMismatch(
                self.x_min,
                self.x_max,
                self.n_cells,
                other.x_min,
                other.x_max,
                other.n_cells,
            ));
        }
        Ok(())
    }
}

/// Nonnegative piecewise-constant density on a [`Grid`]. Values carry units
/// of mass per unit length.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(CoreError::InvalidData(format!(
                "expected {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        let mut values = values;
        let vmax = values.iter().cloned().fold(0.0, f64::max);
        let dust = 1e-12 * vmax.max(f64::MIN_POSITIVE);
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(CoreError::InvalidData("non-finite density value".into()));
            }
            if *v < 0.0 {
                if *v >= -dust {
                    *v = 0.0;
                } else {
                    return Err(CoreError::InvalidData(format!(
                        "negative density value {v}"
                    )));
                }
            }
        }
        Ok(DensityGrid { grid, values })
    }

    /// Internal constructor for values already known to be valid.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        DensityGrid { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        DensityGrid {
            values: vec![0.0; grid.n_cells()],
            grid,
        }
    }

    /// Indicator slab `mass * 1_[a,b] / (b-a)`, with exact total mass.
    pub fn uniform_slab(grid: Grid, a: f64, b: f64, mass: f64) -> Result<Self> {
        if !(a < b) {
            return Err(CoreError::InvalidData("slab needs a < b".into()));
        }
        let mut u = DensityGrid::zeros(grid);
        u.deposit_uniform(a, b, mass)?;
        Ok(u)
    }

    /// Gaussian profile sampled at cell centers and normalized to `mass`.
    pub fn gaussian(grid: Grid, mean: f64, std: f64, mass: f64) -> Result<Self> {
        if std <= 0.0 {
            return Err(CoreError::InvalidData("gaussian needs std > 0".into()));
        }
        let mut values = vec![0.0; grid.n_cells()];
        for (i, v) in values.iter_mut().enumerate() {
            let z = (grid.cell_center(i) - mean) / std;
            *v = (-0.5 * z * z).exp();
        }
        let raw = neumaier_sum(values.iter().cloned()) * grid.h();
        if raw <= 0.0 {
            return Err(CoreError::InvalidData(
                "gaussian mass vanished on this grid".into(),
            ));
        }
        let scale = mass / raw;
        for v in values.iter_mut() {
            *v *= scale;
        }
        Ok(DensityGrid { grid, values })
    }

    /// Piecewise-constant density from breakpoints `breaks` (length m+1) and
    /// per-piece values (length m), rasterized to the grid.
    pub fn piecewise_constant(grid: Grid, breaks: &[f64], piece_values: &[f64]) -> Result<Self> {
        if breaks.len() != piece_values.len() + 1 || piece_values.is_empty() {
            return Err(CoreError::InvalidData(
                "piecewise density needs one more breakpoint than values".into(),
            ));
        }
        let mut u = DensityGrid::zeros(grid);
        for (w, v) in breaks.windows(2).zip(piece_values.iter()) {
            if !(w[0] < w[1]) {
                return Err(CoreError::InvalidData(
                    "piecewise breakpoints must increase".into(),
                ));
            }
            if *v < 0.0 {
                return Err(CoreError::InvalidData("negative piece value".into()));
            }
            if *v > 0.0 {
                u.deposit_uniform(w[0], w[1], v * (w[1] - w[0]))?;
            }
        }
        Ok(u)
    }

    /// Adds `mass` spread uniformly over `[a, b]`, splitting boundary cells.
    /// The grid must cover `[a, b]` entirely.
    pub fn deposit_uniform(&mut self, a: f64, b: f64, mass: f64) -> Result<()> {
        if mass < 0.0 {
            return Err(CoreError::InvalidData("negative deposit".into()));
        }
        if mass == 0.0 {
            return Ok(());
        }
        let g = self.grid;
        if a < g.x_min() - 1e-12 * g.h() || b > g.x_max() + 1e-12 * g.h() {
            return Err(CoreError::InvalidData(format!(
                "slab [{a}, {b}] escapes the grid [{}, {}]",
                g.x_min(),
                g.x_max()
            )));
        }
        let h = g.h();
        let lo = g.locate(a);
        let hi = g.locate(b.min(g.x_max() - 0.5 * h * f64::EPSILON));
        let per_len = mass / (b - a);
        if lo == hi {
            self.values[lo] += mass / h;
            return Ok(());
        }
        let mut deposited = 0.0;
        let first = per_len * (g.breakpoint(lo + 1) - a);
        self.values[lo] += first / h;
        deposited += first;
        for i in lo + 1..hi {
            let full = per_len * h;
            self.values[i] += full / h;
            deposited += full;
        }
        // Remainder goes to the last cell so the deposited mass is exact.
        self.values[hi] += (mass - deposited) / h;
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        neumaier_sum(self.values.iter().cloned()) * self.grid.h()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Right-tail function with exact (compensated) suffix sums.
    pub fn tail(&self) -> TailFunction {
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let mut tail = vec![0.0; n + 1];
        let mut sum = 0.0;
        let mut comp = 0.0;
        for k in (0..n).rev() {
            let v = self.values[k] * h;
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            tail[k] = sum + comp;
        }
        TailFunction {
            grid: self.grid,
            tail,
        }
    }

    /// Cellwise sum. Grids must match.
    pub fn plus(&self, other: &DensityGrid) -> Result<DensityGrid> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(DensityGrid {
            grid: self.grid,
            values,
        })
    }

    /// Cellwise difference; fails if the result dips below the dust level.
    pub fn minus(&self, other: &DensityGrid) -> Result<DensityGrid> {
        self.grid.check_same(&other.grid)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        DensityGrid::new(self.grid, values)
    }

    pub fn scaled(&self, c: f64) -> DensityGrid {
        DensityGrid {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Midpoint of two densities on the same grid.
    pub fn average(&self, other: &DensityGrid) -> Result<DensityGrid> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Ok(DensityGrid {
            grid: self.grid,
            values,
        })
    }

    /// Reflection `x -> -x`. Requires a symmetric grid (`x_min = -x_max`).
    pub fn reflected(&self) -> Result<DensityGrid> {
        if (self.grid.x_min() + self.grid.x_max()).abs() > 1e-12 * self.grid.h() {
            return Err(CoreError::InvalidData(
                "reflection needs a symmetric grid".into(),
            ));
        }
        let mut values = self.values.clone();
        values.reverse();
        Ok(DensityGrid {
            grid: self.grid,
            values,
        })
    }

    pub fn sup_distance(&self, other: &DensityGrid) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Quantile of the normalized density: smallest position holding mass
    /// `p * total` to its left. Used for inverse-CDF sampling.
    pub fn quantile(&self, p: f64) -> f64 {
        let h = self.grid.h();
        let total: f64 = neumaier_sum(self.values.iter().cloned());
        let target = p.clamp(0.0, 1.0) * total;
        let mut cum = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let next = cum + v;
            if next >= target && *v > 0.0 {
                let frac = ((target - cum) / v).clamp(0.0, 1.0);
                return self.grid.breakpoint(i) + frac * h;
            }
            cum = next;
        }
        self.grid.x_max()
    }

    /// Interval spanned by the nonzero cells, if any.
    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        let lo = self.values.iter().position(|v| *v > 0.0)?;
        let hi = self.values.iter().rposition(|v| *v > 0.0)?;
        Some((self.grid.breakpoint(lo), self.grid.breakpoint(hi + 1)))
    }
}

/// Right-tail function `r -> mass on [r, infinity)`, piecewise linear between
/// the grid breakpoints.
#[derive(Clone, Debug)]
pub struct TailFunction {
    grid: Grid,
    tail: Vec<f64>,
}

impl TailFunction {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Tail values at the `n_cells + 1` breakpoints.
    pub fn at_breakpoints(&self) -> &[f64] {
        &self.tail
    }

    pub fn total_mass(&self) -> f64 {
        self.tail[0]
    }

    pub fn eval(&self, r: f64) -> f64 {
        let g = &self.grid;
        if r <= g.x_min() {
            return self.tail[0];
        }
        if r >= g.x_max() {
            return 0.0;
        }
        let k = g.locate(r);
        let frac = (r - g.breakpoint(k)) / g.h();
        self.tail[k] + frac * (self.tail[k + 1] - self.tail[k])
    }

    /// Largest excess `tail_self - tail_other` over all breakpoints.
    pub fn max_excess_over(&self, other: &TailFunction) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .tail
            .iter()
            .zip(other.tail.iter())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Result of a cutting operator: `kept + removed = input` cellwise, and
/// `removed` carries the requested mass exactly.
#[derive(Clone, Debug)]
pub struct CutPair {
    pub kept: DensityGrid,
    pub removed: DensityGrid,
}

/// `u [r, infinity) <= v [r, infinity) + m` at every breakpoint, within
/// `TOL_ORDER_REL * mass`. `m = 0` gives the plain partial order.
pub fn leq(u: &DensityGrid, v: &DensityGrid, m: f64) -> Result<bool> {
    let tu = u.tail();
    let tv = v.tail();
    leq_tails(&tu, &tv, m)
}

pub fn leq_tails(tu: &TailFunction, tv: &TailFunction, m: f64) -> Result<bool> {
    let tol = TOL_ORDER_REL * tu.total_mass().max(tv.total_mass()).max(f64::MIN_POSITIVE);
    Ok(tu.max_excess_over(tv)? <= m + tol)
}

/// Smallest suffix holding mass `delta`: the supremum of `x` with
/// `u[x, infinity) >= delta`, solved exactly on the piecewise-linear tail.
pub fn r_right(u: &DensityGrid, delta: f64) -> Result<f64> {
    let tail = u.tail();
    r_right_of_tail(&tail, delta, u.values())
}

fn r_right_of_tail(tail: &TailFunction, delta: f64, values: &[f64]) -> Result<f64> {
    if delta <= 0.0 {
        return Err(CoreError::InvalidData("cut level must be positive".into()));
    }
    let total = tail.total_mass();
    if total <= delta {
        return Err(CoreError::InsufficientMass {
            needed: delta,
            available: total,
        });
    }
    let t = tail.at_breakpoints();
    // Largest breakpoint with tail >= delta. Flat stretches resolve to the
    // rightmost qualifying breakpoint, matching the supremum convention.
    let mut k = t.len() - 1;
    while t[k] < delta {
        k -= 1;
    }
    let g = tail.grid();
    if k == t.len() - 1 {
        return Ok(g.x_max());
    }
    let v = values[k];
    if v <= 0.0 {
        return Ok(g.breakpoint(k));
    }
    Ok(g.breakpoint(k) + (t[k] - delta) / v)
}

/// Mirror of [`r_right`] under `x -> -x`: the infimum of `x` with
/// `u(-infinity, x] >= delta`.
pub fn r_left(u: &DensityGrid, delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(CoreError::InvalidData("cut level must be positive".into()));
    }
    let g = u.grid();
    let h = g.h();
    let total = u.total_mass();
    if total <= delta {
        return Err(CoreError::InsufficientMass {
            needed: delta,
            available: total,
        });
    }
    // Prefix sums from the left, compensated.
    let mut cum = 0.0;
    let mut comp = 0.0;
    for (i, v) in u.values().iter().enumerate() {
        let add = v * h;
        let t = cum + add;
        if cum.abs() >= add.abs() {
            comp += (cum - t) + add;
        } else {
            comp += (add - t) + cum;
        }
        cum = t;
        if cum + comp >= delta {
            let before = cum + comp - add;
            if *v <= 0.0 {
                return Ok(g.breakpoint(i));
            }
            return Ok(g.breakpoint(i) + (delta - before) / v);
        }
    }
    Ok(g.x_max())
}

/// Removes the rightmost `delta` mass. `delta = 0` is the identity.
pub fn cut_right(u: &DensityGrid, delta: f64) -> Result<CutPair> {
    if delta == 0.0 {
        return Ok(CutPair {
            kept: u.clone(),
            removed: DensityGrid::zeros(u.grid()),
        });
    }
    let boundary = r_right(u, delta)?;
    let g = u.grid();
    let h = g.h();
    let n = g.n_cells();
    let k = if boundary >= g.x_max() {
        n - 1
    } else {
        g.locate(boundary)
    };
    let mut kept = u.values().to_vec();
    let mut removed = vec![0.0; n];
    // Mass strictly above cell k moves wholesale.
    let mut above = 0.0;
    for i in k + 1..n {
        removed[i] = kept[i];
        above += kept[i];
        kept[i] = 0.0;
    }
    // Boundary cell splits so the removed mass is exactly delta.
    let split = (delta / h - above).clamp(0.0, kept[k]);
    removed[k] = split;
    kept[k] -= split;
    Ok(CutPair {
        kept: DensityGrid::from_raw(g, kept),
        removed: DensityGrid::from_raw(g, removed),
    })
}

/// Removes the leftmost `delta` mass. Mirror of [`cut_right`].
pub fn cut_left(u: &DensityGrid, delta: f64) -> Result<CutPair> {
    if delta == 0.0 {
        return Ok(CutPair {
            kept: u.clone(),
            removed: DensityGrid::zeros(u.grid()),
        });
    }
    let boundary = r_left(u, delta)?;
    let g = u.grid();
    let h = g.h();
    let k = g.locate(boundary);
    let mut kept = u.values().to_vec();
    let mut removed = vec![0.0; g.n_cells()];
    let mut below = 0.0;
    for i in 0..k {
        removed[i] = kept[i];
        below += kept[i];
        kept[i] = 0.0;
    }
    let split = (delta / h - below).clamp(0.0, kept[k]);
    removed[k] = split;
    kept[k] -= split;
    Ok(CutPair {
        kept: DensityGrid::from_raw(g, kept),
        removed: DensityGrid::from_raw(g, removed),
    })
}

/// Removes `delta` mass lying between the `(big + delta)`- and `big`-right
/// quantiles, keeping exactly `big` mass to the right of the removed band.
pub fn cut_interior(u: &DensityGrid, big: f64, delta: f64) -> Result<CutPair> {
    if big <= 0.0 {
        return Err(CoreError::InvalidData(
            "interior cut needs a positive right margin".into(),
        ));
    }
    if delta == 0.0 {
        let total = u.total_mass();
        if total <= big {
            return Err(CoreError::InsufficientMass {
                needed: big,
                available: total,
            });
        }
        return Ok(CutPair {
            kept: u.clone(),
            removed: DensityGrid::zeros(u.grid()),
        });
    }
    let hi = r_right(u, big)?;
    let lo = r_right(u, big + delta)?;
    let g = u.grid();
    let h = g.h();
    let n = g.n_cells();
    let k_hi = if hi >= g.x_max() { n - 1 } else { g.locate(hi) };
    let k_lo = g.locate(lo);
    let mut kept = u.values().to_vec();
    let mut removed = vec![0.0; n];
    if k_lo == k_hi {
        let split = ((delta / h).min(kept[k_lo])).max(0.0);
        removed[k_lo] = split;
        kept[k_lo] -= split;
    } else {
        // Upper partial cell: the part of cell k_hi at or below `hi`.
        let upper_frac = ((hi - g.breakpoint(k_hi)) / h).clamp(0.0, 1.0);
        let upper = kept[k_hi] * upper_frac;
        removed[k_hi] = upper;
        kept[k_hi] -= upper;
        let mut middle = 0.0;
        for i in k_lo + 1..k_hi {
            removed[i] = kept[i];
            middle += kept[i];
            kept[i] = 0.0;
        }
        // Lower partial cell takes the remainder, making the mass exact.
        let split = (delta / h - middle - upper).clamp(0.0, kept[k_lo]);
        removed[k_lo] = split;
        kept[k_lo] -= split;
    }
    Ok(CutPair {
        kept: DensityGrid::from_raw(g, kept),
        removed: DensityGrid::from_raw(g, removed),
    })
}

/// Extension of the interior cut to an arbitrary right margin, dispatching
/// on the sign of `big` and on whether `big + delta` exceeds the total mass.
pub fn cut_extended(u: &DensityGrid, big: f64, delta: f64) -> Result<CutPair> {
    if delta <= 0.0 {
        return Err(CoreError::InvalidData("cut level must be positive".into()));
    }
    let total = u.total_mass();
    if total <= delta {
        return Err(CoreError::InsufficientMass {
            needed: delta,
            available: total,
        });
    }
    if big <= 0.0 {
        cut_right(u, delta)
    } else if big + delta < total {
        cut_interior(u, big, delta)
    } else {
        cut_left(u, delta)
    }
}
