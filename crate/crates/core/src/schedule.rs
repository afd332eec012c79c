//! Cumulative schedules (continuous, nondecreasing, zero at the origin) and
//! the quantile curve driving removal-at-quantile runs.

use crate::error::{CoreError, Result};
use std::sync::Arc;

/// Exactly evaluable cumulative schedule. Houses injection and removal
/// clocks as well as capped identities.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    /// `t -> rate * t`
    LinearRate { rate: f64 },
    /// Piecewise linear through `(t_i, v_i)`, starting at `(0, 0)`,
    /// continued as a constant after the last breakpoint.
    PiecewiseLinear { points: Vec<(f64, f64)> },
    /// `t -> coeff * t^exponent`
    Power { coeff: f64, exponent: f64 },
    /// `t -> min(t, cap)`
    CappedIdentity { cap: f64 },
}

impl Schedule {
    pub fn zero() -> Self {
        Schedule::LinearRate { rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::LinearRate { rate } => {
                if *rate < 0.0 || !rate.is_finite() {
                    return Err(CoreError::InvalidData("schedule rate must be >= 0".into()));
                }
            }
            Schedule::PiecewiseLinear { points } => {
                if points.is_empty() || points[0] != (0.0, 0.0) {
                    return Err(CoreError::InvalidData(
                        "piecewise schedule must start at (0, 0)".into(),
                    ));
                }
                for w in points.windows(2) {
                    if !(w[0].0 < w[1].0) || w[1].1 < w[0].1 {
                        return Err(CoreError::InvalidData(
                            "piecewise schedule must have increasing times and nondecreasing values"
                                .into(),
                        ));
                    }
                }
            }
            Schedule::Power { coeff, exponent } => {
                if *coeff < 0.0 || *exponent <= 0.5 {
                    return Err(CoreError::InvalidData(
                        "power schedule needs coeff >= 0 and exponent > 1/2".into(),
                    ));
                }
            }
            Schedule::CappedIdentity { cap } => {
                if *cap < 0.0 {
                    return Err(CoreError::InvalidData("cap must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Schedule::LinearRate { rate } => rate * t,
            Schedule::PiecewiseLinear { points } => {
                let last = points.len() - 1;
                if t >= points[last].0 {
                    return points[last].1;
                }
                let idx = points.partition_point(|p| p.0 <= t);
                let (t0, v0) = points[idx - 1];
                let (t1, v1) = points[idx];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
            Schedule::Power { coeff, exponent } => coeff * t.powf(*exponent),
            Schedule::CappedIdentity { cap } => t.min(*cap),
        }
    }

    pub fn increment(&self, a: f64, b: f64) -> f64 {
        (self.eval(b) - self.eval(a)).max(0.0)
    }

    /// First time the schedule reaches `level`, or `None` if it never does.
    pub fn first_time_at_least(&self, level: f64) -> Option<f64> {
        if level <= 0.0 {
            return Some(0.0);
        }
        match self {
            Schedule::LinearRate { rate } => {
                if *rate > 0.0 {
                    Some(level / rate)
                } else {
                    None
                }
            }
            Schedule::PiecewiseLinear { points } => {
                let last = points.len() - 1;
                if level > points[last].1 {
                    return None;
                }
                let idx = points.partition_point(|p| p.1 < level);
                let (t1, v1) = points[idx];
                let (t0, v0) = points[idx - 1];
                if v1 == v0 {
                    Some(t1)
                } else {
                    Some(t0 + (t1 - t0) * (level - v0) / (v1 - v0))
                }
            }
            Schedule::Power { coeff, exponent } => {
                if *coeff > 0.0 {
                    Some((level / coeff).powf(1.0 / exponent))
                } else {
                    None
                }
            }
            Schedule::CappedIdentity { cap } => {
                if level <= *cap {
                    Some(level)
                } else {
                    None
                }
            }
        }
    }

    /// Interior breakpoints, used when scanning infima on a fine mesh.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Schedule::PiecewiseLinear { points } => points.iter().map(|p| p.0).collect(),
            Schedule::CappedIdentity { cap } => vec![*cap],
            _ => Vec::new(),
        }
    }
}

/// Checks that `a - b` is nondecreasing on `[0, horizon]`, sampling a fine
/// mesh plus both schedules' breakpoints.
pub fn difference_is_nondecreasing(a: &Schedule, b: &Schedule, horizon: f64) -> bool {
    let mut ts: Vec<f64> = (0..=2048).map(|k| horizon * k as f64 / 2048.0).collect();
    ts.extend(a.breakpoints());
    ts.extend(b.breakpoints());
    ts.retain(|t| *t >= 0.0 && *t <= horizon);
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut prev = f64::NEG_INFINITY;
    for t in ts {
        let d = a.eval(t) - b.eval(t);
        if d < prev - 1e-12 {
            return false;
        }
        prev = prev.max(d);
    }
    true
}

/// Removed-fraction curve for quantile removal: continuous on `[0, 1]`,
/// `0 <= q(t) <= 1 - t`, zero from `t = 1` on. Not necessarily monotone.
#[derive(Clone)]
pub enum QuantileCurve {
    /// Constant relative quantile `Q`, so `q(t) = level * (1 - t)`.
    ConstQ { level: f64 },
    /// Piecewise-linear relative quantile `Q(t)`; `q(t) = (1 - t) Q(t)` is
    /// piecewise quadratic and its range is computed in closed form.
    PiecewiseLinearQ { points: Vec<(f64, f64)> },
    /// Piecewise-linear `q` itself.
    PiecewiseLinearSmall { points: Vec<(f64, f64)> },
    /// Arbitrary sampled curve; ranges fall back to dense scanning.
    Sampled(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for QuantileCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantileCurve::ConstQ { level } => write!(f, "ConstQ({level})"),
            QuantileCurve::PiecewiseLinearQ { points } => {
                write!(f, "PiecewiseLinearQ({points:?})")
            }
            QuantileCurve::PiecewiseLinearSmall { points } => {
                write!(f, "PiecewiseLinearSmall({points:?})")
            }
            QuantileCurve::Sampled(_) => write!(f, "Sampled(..)"),
        }
    }
}

fn eval_pl(points: &[(f64, f64)], t: f64) -> f64 {
    if t <= points[0].0 {
        return points[0].1;
    }
    let last = points.len() - 1;
    if t >= points[last].0 {
        return points[last].1;
    }
    let idx = points.partition_point(|p| p.0 <= t);
    let (t0, v0) = points[idx - 1];
    let (t1, v1) = points[idx];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

impl QuantileCurve {
    pub fn validate(&self) -> Result<()> {
        let check_pl = |points: &Vec<(f64, f64)>| -> Result<()> {
            if points.len() < 2 || points[0].0 != 0.0 {
                return Err(CoreError::InvalidData(
                    "quantile curve needs breakpoints starting at t = 0".into(),
                ));
            }
            for w in points.windows(2) {
                if !(w[0].0 < w[1].0) {
                    return Err(CoreError::InvalidData(
                        "quantile breakpoints must increase".into(),
                    ));
                }
            }
            Ok(())
        };
        match self {
            QuantileCurve::ConstQ { level } => {
                if !(0.0..=1.0).contains(level) {
                    return Err(CoreError::InvalidData(
                        "constant quantile level must lie in [0, 1]".into(),
                    ));
                }
            }
            QuantileCurve::PiecewiseLinearQ { points } => {
                check_pl(points)?;
                if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
                    return Err(CoreError::InvalidData(
                        "relative quantile values must lie in [0, 1]".into(),
                    ));
                }
            }
            QuantileCurve::PiecewiseLinearSmall { points } => check_pl(points)?,
            QuantileCurve::Sampled(_) => {}
        }
        // Admissibility 0 <= q(t) <= 1 - t, scanned on a fine mesh.
        for k in 0..=4096 {
            let t = k as f64 / 4096.0;
            let q = self.eval(t);
            if q < -1e-12 || q > 1.0 - t + 1e-12 {
                return Err(CoreError::InvalidData(format!(
                    "quantile curve leaves the admissible band at t = {t}: q = {q}"
                )));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let t = t.max(0.0);
        match self {
            QuantileCurve::ConstQ { level } => level * (1.0 - t),
            QuantileCurve::PiecewiseLinearQ { points } => (1.0 - t) * eval_pl(points, t),
            QuantileCurve::PiecewiseLinearSmall { points } => eval_pl(points, t),
            QuantileCurve::Sampled(f) => f(t),
        }
    }

    /// Relative quantile `Q(t) = q(t) / (1 - t)`, defined for `t < 1`.
    pub fn relative(&self, t: f64) -> f64 {
        match self {
            QuantileCurve::ConstQ { level } => *level,
            QuantileCurve::PiecewiseLinearQ { points } => eval_pl(points, t),
            _ => self.eval(t) / (1.0 - t),
        }
    }

    /// Exact min and max of `q` over `[a, b]` for the closed-form kinds;
    /// dense sampling with local refinement otherwise.
    pub fn range_on(&self, a: f64, b: f64) -> (f64, f64) {
        let a = a.max(0.0);
        let b = b.max(a);
        match self {
            QuantileCurve::ConstQ { level } => {
                // Decreasing linear segment, cut off at t = 1.
                let lo = self.eval(b).min(self.eval(a));
                let hi = (level * (1.0 - a)).max(self.eval(b));
                (lo.min(hi), hi)
            }
            QuantileCurve::PiecewiseLinearQ { points } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut candidates = vec![a, b];
                for p in points.iter() {
                    if p.0 > a && p.0 < b {
                        candidates.push(p.0);
                    }
                }
                if b > 1.0 && a < 1.0 {
                    candidates.push(1.0);
                }
                // Interior vertices of (1 - t)(alpha + beta t) per segment.
                for w in points.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    let beta = (v1 - v0) / (t1 - t0);
                    let alpha = v0 - beta * t0;
                    if beta != 0.0 {
                        let vertex = (beta - alpha) / (2.0 * beta);
                        if vertex > a.max(t0) && vertex < b.min(t1) {
                            candidates.push(vertex);
                        }
                    }
                }
                for t in candidates {
                    let v = self.eval(t);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (lo, hi)
            }
            QuantileCurve::PiecewiseLinearSmall { points } => {
                let mut lo = self.eval(a).min(self.eval(b));
                let mut hi = self.eval(a).max(self.eval(b));
                for p in points.iter() {
                    if p.0 > a && p.0 < b {
                        let v = self.eval(p.0);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if b > 1.0 && a < 1.0 {
                    lo = lo.min(0.0);
                }
                (lo, hi)
            }
            QuantileCurve::Sampled(_) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut arg_lo = a;
                let mut arg_hi = a;
                let steps = 256;
                for k in 0..=steps {
                    let t = a + (b - a) * k as f64 / steps as f64;
                    let v = self.eval(t);
                    if v < lo {
                        lo = v;
                        arg_lo = t;
                    }
                    if v > hi {
                        hi = v;
                        arg_hi = t;
                    }
                }
                // One round of local refinement around each extremum.
                let w = (b - a) / steps as f64;
                for (target_min, arg) in [(true, arg_lo), (false, arg_hi)] {
                    let lo_t = (arg - w).max(a);
                    let hi_t = (arg + w).min(b);
                    for k in 0..=64 {
                        let t = lo_t + (hi_t - lo_t) * k as f64 / 64.0;
                        let v = self.eval(t);
                        if target_min {
                            lo = lo.min(v);
                        } else {
                            hi = hi.max(v);
                        }
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Curve for the reflected problem: `t -> 1 - t - q(t)`.
    pub fn reflected(&self) -> QuantileCurve {
        match self {
            QuantileCurve::ConstQ { level } => QuantileCurve::ConstQ { level: 1.0 - level },
            QuantileCurve::PiecewiseLinearQ { points } => QuantileCurve::PiecewiseLinearQ {
                points: points.iter().map(|(t, v)| (*t, 1.0 - v)).collect(),
            },
            QuantileCurve::PiecewiseLinearSmall { points } => {
                QuantileCurve::PiecewiseLinearSmall {
                    points: points.iter().map(|(t, v)| (*t, 1.0 - t - v)).collect(),
                }
            }
            QuantileCurve::Sampled(f) => {
                let f = f.clone();
                QuantileCurve::Sampled(Arc::new(move |t| {
                    if t >= 1.0 {
                        0.0
                    } else {
                        1.0 - t - f(t)
                    }
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_roundtrip() {
        let s = Schedule::LinearRate { rate: 2.0 };
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.first_time_at_least(1.0), Some(0.5));
        assert_eq!(s.increment(0.25, 0.5), 0.5);
    }

    #[test]
    fn piecewise_schedule() {
        let s = Schedule::PiecewiseLinear {
            points: vec![(0.0, 0.0), (1.0, 0.5), (2.0, 0.5), (3.0, 1.5)],
        };
        s.validate().unwrap();
        assert_eq!(s.eval(0.5), 0.25);
        assert_eq!(s.eval(1.5), 0.5);
        assert_eq!(s.eval(10.0), 1.5);
        assert_eq!(s.first_time_at_least(0.5), Some(1.0));
        assert!((s.first_time_at_least(1.0).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(s.first_time_at_least(2.0), None);
    }

    #[test]
    fn capped_identity() {
        let s = Schedule::CappedIdentity { cap: 1.0 };
        assert_eq!(s.eval(0.25), 0.25);
        assert_eq!(s.eval(3.0), 1.0);
        assert_eq!(s.first_time_at_least(0.5), Some(0.5));
        assert_eq!(s.first_time_at_least(1.5), None);
    }

    #[test]
    fn q_bounds_monotone_linear() {
        // Q constant 1/2: q(t) = (1 - t)/2 decreases, so the range over
        // [0, 0.01] is (0.495, 0.5).
        let q = QuantileCurve::ConstQ { level: 0.5 };
        let (lo, hi) = q.range_on(0.0, 0.01);
        assert!((lo - 0.495).abs() < 1e-12);
        assert!((hi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn q_bounds_zero_curve() {
        let q = QuantileCurve::ConstQ { level: 0.0 };
        let (lo, hi) = q.range_on(0.3, 0.31);
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn q_bounds_piecewise_matches_dense_oracle() {
        let points = vec![(0.0, 0.2), (0.3, 0.9), (0.6, 0.1), (1.0, 0.8)];
        let q = QuantileCurve::PiecewiseLinearQ {
            points: points.clone(),
        };
        q.validate().unwrap();
        let sampled = QuantileCurve::Sampled(Arc::new(move |t| {
            if t >= 1.0 {
                0.0
            } else {
                (1.0 - t) * eval_pl(&points, t)
            }
        }));
        for (a, b) in [(0.0, 0.05), (0.25, 0.35), (0.55, 0.75), (0.0, 0.99)] {
            let (lo, hi) = q.range_on(a, b);
            // Dense oracle at 10^4 points.
            let mut olo = f64::INFINITY;
            let mut ohi = f64::NEG_INFINITY;
            for k in 0..=10_000 {
                let t = a + (b - a) * k as f64 / 10_000.0;
                let v = sampled.eval(t);
                olo = olo.min(v);
                ohi = ohi.max(v);
            }
            // The exact range must enclose the sampled one, and the dense
            // scan can undershoot only by its own resolution.
            assert!(lo <= olo + 1e-12 && hi >= ohi - 1e-12, "range fails to enclose oracle on [{a}, {b}]");
            assert!((lo - olo).abs() < 1e-3, "min mismatch on [{a}, {b}]");
            assert!((hi - ohi).abs() < 1e-3, "max mismatch on [{a}, {b}]");
        }
    }

    #[test]
    fn reflected_curve_identity() {
        let q = QuantileCurve::ConstQ { level: 0.3 };
        let r = q.reflected();
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            assert!((r.eval(t) - (1.0 - t - q.eval(t))).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_monotonicity_check() {
        let a = Schedule::LinearRate { rate: 2.0 };
        let b = Schedule::LinearRate { rate: 1.0 };
        assert!(difference_is_nondecreasing(&a, &b, 1.0));
        assert!(!difference_is_nondecreasing(&b, &a, 1.0));
    }
}
