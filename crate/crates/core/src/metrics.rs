//! Distances between tail-evaluable objects: the Kolmogorov-style sup
//! distance on right tails and the Levy distance on cumulative functions.

use crate::grid::TailFunction;
use crate::particle::EmpiricalTail;

/// Anything with an evaluable right tail and cumulative function.
pub trait TailEval {
    /// Mass on `[r, infinity)`.
    fn tail(&self, r: f64) -> f64;
    /// Mass on `(-infinity, x]`.
    fn cdf(&self, x: f64) -> f64;
    fn total_mass(&self) -> f64;
    /// Positions where the function changes slope or jumps.
    fn breakpoints(&self) -> Vec<f64>;
}

impl TailEval for TailFunction {
    fn tail(&self, r: f64) -> f64 {
        TailFunction::eval(self, r)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.total_mass() - TailFunction::eval(self, x)
    }

    fn total_mass(&self) -> f64 {
        TailFunction::total_mass(self)
    }

    fn breakpoints(&self) -> Vec<f64> {
        (0..=self.grid().n_cells())
            .map(|k| self.grid().breakpoint(k))
            .collect()
    }
}

impl TailEval for EmpiricalTail {
    fn tail(&self, r: f64) -> f64 {
        EmpiricalTail::tail(self, r)
    }

    fn cdf(&self, x: f64) -> f64 {
        let at_most = self.sorted.partition_point(|p| *p <= x);
        at_most as f64 / self.normalizer as f64
    }

    fn total_mass(&self) -> f64 {
        self.alive_fraction()
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.sorted.clone();
        b.dedup();
        b
    }
}

/// Largest tail difference over the given evaluation points.
pub fn tail_sup_distance(a: &dyn TailEval, b: &dyn TailEval, r_grid: &[f64]) -> f64 {
    r_grid
        .iter()
        .map(|r| (a.tail(*r) - b.tail(*r)).abs())
        .fold(0.0, f64::max)
}

/// Sup tail distance over the union of both objects' breakpoints, probing
/// each side of every jump. Exact for piecewise-linear against step tails.
pub fn tail_sup_distance_exact(a: &dyn TailEval, b: &dyn TailEval) -> f64 {
    let mut rs = a.breakpoints();
    rs.extend(b.breakpoints());
    let mut worst = 0.0f64;
    for r in rs {
        let just_above = next_after(r);
        worst = worst.max((a.tail(r) - b.tail(r)).abs());
        worst = worst.max((a.tail(just_above) - b.tail(just_above)).abs());
    }
    worst
}

fn next_after(x: f64) -> f64 {
    x + 1e-13 * (1.0 + x.abs())
}

/// Levy distance on cumulative functions via bisection over the width of
/// the 45-degree band, resolved to `resolution`.
pub fn levy_distance(a: &dyn TailEval, b: &dyn TailEval, resolution: f64) -> f64 {
    let mut points = a.breakpoints();
    points.extend(b.breakpoints());
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    if points.is_empty() {
        return 0.0;
    }
    let fits = |eps: f64| -> bool {
        // Need: F(x - eps) - eps <= G(x) <= F(x + eps) + eps for all x,
        // and symmetrically. It suffices to test at both functions'
        // breakpoints and on each side of every jump.
        for &x in &points {
            for probe in [x, next_after(x)] {
                let ga = a.cdf(probe);
                let gb = b.cdf(probe);
                if gb > a.cdf(probe + eps) + eps + 1e-15
                    || a.cdf(probe - eps) - eps > gb + 1e-15
                    || ga > b.cdf(probe + eps) + eps + 1e-15
                    || b.cdf(probe - eps) - eps > ga + 1e-15
                {
                    return false;
                }
            }
        }
        true
    };
    let span = points.last().unwrap() - points.first().unwrap();
    let mut hi = span.max(a.total_mass().max(b.total_mass())).max(resolution);
    if fits(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 0.5 * resolution {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
