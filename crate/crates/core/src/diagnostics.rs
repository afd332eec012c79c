//! Checkers quantifying how well a candidate pair of density path and
//! removal record satisfies the absorption problem: order-respecting
//! absorption integrals, weak-form residuals, reflection-map consistency,
//! and removal support diagnostics.

use crate::error::{CoreError, Result};
use crate::grid::{DensityGrid, TailFunction};
use crate::kernel::InjectionSchedule;
use crate::measure::{RemovalMeasure, RemovalPayload};
use crate::particle::EmpiricalTrace;
use crate::schedule::QuantileCurve;

/// Smooth compactly supported bump `exp(1 - 1/(1 - s^2))` on `(-1, 1)`,
/// normalized to one at the center, with closed-form derivatives.
fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

fn bump_d1(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - s * s;
        bump(s) * (-2.0 * s / (d * d))
    }
}

fn bump_d2(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - s * s;
        let g1 = -2.0 * s / (d * d);
        let g2 = -2.0 * (1.0 + 3.0 * s * s) / (d * d * d);
        bump(s) * (g1 * g1 + g2)
    }
}

#[derive(Clone, Debug)]
pub enum SpaceKind {
    Bump,
    /// `(a0 + a1 s + a2 s^2) * bump(s)` in centered coordinates.
    PolyBump { coeffs: [f64; 3] },
}

#[derive(Clone, Debug)]
pub enum TimeCutoff {
    /// Smooth bump supported on `(t0, t1)`; vanishes at zero when `t0 > 0`.
    BumpWindow { t0: f64, t1: f64 },
    /// One on `[0, hold]`, smooth decay to zero over `(hold, hold + fade)`.
    Plateau { hold: f64, fade: f64 },
}

impl TimeCutoff {
    fn value(&self, t: f64) -> f64 {
        match self {
            TimeCutoff::BumpWindow { t0, t1 } => {
                let s = (2.0 * t - t0 - t1) / (t1 - t0);
                bump(s)
            }
            TimeCutoff::Plateau { hold, fade } => {
                if t <= *hold {
                    1.0
                } else {
                    bump((t - hold) / fade)
                }
            }
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeCutoff::BumpWindow { t0, t1 } => {
                let s = (2.0 * t - t0 - t1) / (t1 - t0);
                bump_d1(s) * 2.0 / (t1 - t0)
            }
            TimeCutoff::Plateau { hold, fade } => {
                if t <= *hold {
                    0.0
                } else {
                    bump_d1((t - hold) / fade) / fade
                }
            }
        }
    }

    pub fn support_end(&self) -> f64 {
        match self {
            TimeCutoff::BumpWindow { t1, .. } => *t1,
            TimeCutoff::Plateau { hold, fade } => hold + fade,
        }
    }
}

/// Smooth space-time test function with closed-form derivatives, compactly
/// supported in space and eventually vanishing in time.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub amplitude: f64,
    pub center: f64,
    pub halfwidth: f64,
    pub space: SpaceKind,
    pub time: TimeCutoff,
}

impl TestFunction {
    fn space_parts(&self, x: f64) -> (f64, f64, f64) {
        let s = (x - self.center) / self.halfwidth;
        let (v, d1, d2) = match &self.space {
            SpaceKind::Bump => (bump(s), bump_d1(s), bump_d2(s)),
            SpaceKind::PolyBump { coeffs } => {
                let [a0, a1, a2] = *coeffs;
                let p = a0 + a1 * s + a2 * s * s;
                let p1 = a1 + 2.0 * a2 * s;
                let p2 = 2.0 * a2;
                let b = bump(s);
                let b1 = bump_d1(s);
                let b2 = bump_d2(s);
                (p * b, p1 * b + p * b1, p2 * b + 2.0 * p1 * b1 + p * b2)
            }
        };
        let w = self.halfwidth;
        (v, d1 / w, d2 / (w * w))
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        let (v, _, _) = self.space_parts(x);
        self.amplitude * v * self.time.value(t)
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        let (v, _, _) = self.space_parts(x);
        self.amplitude * v * self.time.derivative(t)
    }

    pub fn dx(&self, x: f64, t: f64) -> f64 {
        let (_, d1, _) = self.space_parts(x);
        self.amplitude * d1 * self.time.value(t)
    }

    pub fn dxx(&self, x: f64, t: f64) -> f64 {
        let (_, _, d2) = self.space_parts(x);
        self.amplitude * d2 * self.time.value(t)
    }

    pub fn space_support(&self) -> (f64, f64) {
        (self.center - self.halfwidth, self.center + self.halfwidth)
    }
}

/// Eight test functions spanning centers, widths, polynomial factors, and
/// both time-cutoff shapes on a given spatial range and horizon.
pub fn preset_test_functions(x_lo: f64, x_hi: f64, horizon: f64) -> Vec<TestFunction> {
    let mid = 0.5 * (x_lo + x_hi);
    let span = x_hi - x_lo;
    let w = |f: f64| f * span / 2.0;
    vec![
        TestFunction {
            amplitude: 1.0,
            center: mid,
            halfwidth: w(0.8),
            space: SpaceKind::Bump,
            time: TimeCutoff::Plateau {
                hold: 0.6 * horizon,
                fade: 0.35 * horizon,
            },
        },
        TestFunction {
            amplitude: 0.7,
            center: mid + 0.2 * span,
            halfwidth: w(0.5),
            space: SpaceKind::Bump,
            time: TimeCutoff::BumpWindow {
                t0: 0.1 * horizon,
                t1: 0.9 * horizon,
            },
        },
        TestFunction {
            amplitude: 1.3,
            center: mid - 0.15 * span,
            halfwidth: w(0.6),
            space: SpaceKind::PolyBump {
                coeffs: [1.0, 0.5, 0.0],
            },
            time: TimeCutoff::Plateau {
                hold: 0.3 * horizon,
                fade: 0.5 * horizon,
            },
        },
        TestFunction {
            amplitude: 0.9,
            center: mid + 0.1 * span,
            halfwidth: w(0.9),
            space: SpaceKind::PolyBump {
                coeffs: [0.5, 0.0, 1.0],
            },
            time: TimeCutoff::BumpWindow {
                t0: 0.05 * horizon,
                t1: 0.6 * horizon,
            },
        },
        TestFunction {
            amplitude: 1.0,
            center: mid - 0.25 * span,
            halfwidth: w(0.4),
            space: SpaceKind::Bump,
            time: TimeCutoff::BumpWindow {
                t0: 0.4 * horizon,
                t1: 0.95 * horizon,
            },
        },
        TestFunction {
            amplitude: 0.6,
            center: mid + 0.3 * span,
            halfwidth: w(0.35),
            space: SpaceKind::PolyBump {
                coeffs: [1.0, -0.8, 0.3],
            },
            time: TimeCutoff::Plateau {
                hold: 0.5 * horizon,
                fade: 0.45 * horizon,
            },
        },
        TestFunction {
            amplitude: 1.1,
            center: mid,
            halfwidth: w(0.7),
            space: SpaceKind::PolyBump {
                coeffs: [0.0, 1.0, 0.0],
            },
            time: TimeCutoff::BumpWindow {
                t0: 0.2 * horizon,
                t1: 0.8 * horizon,
            },
        },
        TestFunction {
            amplitude: 0.8,
            center: mid - 0.05 * span,
            halfwidth: w(0.95),
            space: SpaceKind::Bump,
            time: TimeCutoff::Plateau {
                hold: 0.2 * horizon,
                fade: 0.7 * horizon,
            },
        },
    ]
}

#[derive(Clone, Debug)]
pub struct OraReport {
    pub max: f64,
    pub argmax_r: f64,
    pub per_r: Vec<f64>,
}

fn left_snapshot_index(times: &[f64], s: f64) -> Result<usize> {
    let idx = times.partition_point(|t| *t < s);
    if idx == 0 {
        return Err(CoreError::InvalidData(format!(
            "no snapshot strictly before the removal at t = {s}"
        )));
    }
    Ok(idx - 1)
}

/// Absorption-order residual for boundary removal: the total tail mass
/// seen above each `r` while removal charges strictly below `r`, with
/// pre-removal (left endpoint) tail values.
pub fn ora_residual_rab(
    u_tails: &[(f64, TailFunction)],
    beta: &RemovalMeasure,
    r_grid: &[f64],
) -> Result<OraReport> {
    let times: Vec<f64> = u_tails.iter().map(|p| p.0).collect();
    let mut per_r = vec![0.0f64; r_grid.len()];
    for (idx, entry) in beta.entries().iter().enumerate() {
        let k = left_snapshot_index(&times, entry.time)?;
        let tail = &u_tails[k].1;
        for (j, r) in r_grid.iter().enumerate() {
            let left = beta.entry_mass_left_of(idx, *r)?;
            if left > 0.0 {
                per_r[j] += tail.eval(*r) * left;
            }
        }
    }
    Ok(report_from(per_r, r_grid))
}

/// Absorption-order residuals for quantile removal: the positive parts of
/// tail mass beyond the allowed level on each side.
pub fn ora_residual_raq(
    u_tails: &[(f64, TailFunction)],
    beta: &RemovalMeasure,
    q: &QuantileCurve,
    r_grid: &[f64],
) -> Result<(OraReport, OraReport)> {
    let times: Vec<f64> = u_tails.iter().map(|p| p.0).collect();
    let mut plus = vec![0.0f64; r_grid.len()];
    let mut minus = vec![0.0f64; r_grid.len()];
    for (idx, entry) in beta.entries().iter().enumerate() {
        let k = left_snapshot_index(&times, entry.time)?;
        let tail = &u_tails[k].1;
        let total = tail.total_mass();
        let q_t = q.eval(entry.time);
        let allowed_left = 1.0 - entry.time - q_t;
        let entry_total = beta.entry_total(idx);
        for (j, r) in r_grid.iter().enumerate() {
            let left_charge = beta.entry_mass_left_of(idx, *r)?;
            let right_charge = entry_total - left_charge;
            if left_charge > 0.0 {
                plus[j] += (tail.eval(*r) - q_t).max(0.0) * left_charge;
            }
            if right_charge > 0.0 {
                minus[j] += (total - tail.eval(*r) - allowed_left).max(0.0) * right_charge;
            }
        }
    }
    Ok((report_from(plus, r_grid), report_from(minus, r_grid)))
}

fn report_from(per_r: Vec<f64>, r_grid: &[f64]) -> OraReport {
    let (mut max, mut argmax) = (0.0f64, f64::NAN);
    for (v, r) in per_r.iter().zip(r_grid.iter()) {
        if *v >= max {
            max = *v;
            argmax = *r;
        }
    }
    OraReport {
        max,
        argmax_r: argmax,
        per_r,
    }
}

/// Exact absorption-order residual of a particle trace, using the recorded
/// pre-removal tail counts at the trace's `r` grid. The shift `c_shift`
/// moves the allowed level (`0` for plain boundary removal).
pub fn ora_residual_trace(trace: &EmpiricalTrace) -> OraReport {
    let n = trace.n_initial as f64;
    let mut per_r = vec![0.0f64; trace.r_grid.len()];
    for e in &trace.events {
        for (j, r) in trace.r_grid.iter().enumerate() {
            if e.position < *r {
                per_r[j] += (e.pre_tail_counts[j] as f64 / n) / n;
            }
        }
    }
    report_from(per_r, &trace.r_grid)
}

/// Quantile-removal variant: positive parts beyond `q(t) + shift` above and
/// `1 - t - q(t) + shift` below.
pub fn ora_residual_raq_trace(
    trace: &EmpiricalTrace,
    q: &QuantileCurve,
    shift: f64,
) -> (OraReport, OraReport) {
    let n = trace.n_initial as f64;
    let mut plus = vec![0.0f64; trace.r_grid.len()];
    let mut minus = vec![0.0f64; trace.r_grid.len()];
    for e in &trace.events {
        let q_t = q.eval(e.time);
        for (j, r) in trace.r_grid.iter().enumerate() {
            if e.position < *r {
                let tail = e.pre_tail_counts[j] as f64 / n;
                plus[j] += (tail - q_t - shift).max(0.0) / n;
            }
            if e.position > *r {
                let left = e.pre_left_counts[j] as f64 / n;
                minus[j] += (left - (1.0 - e.time - q_t) - shift).max(0.0) / n;
            }
        }
    }
    (
        report_from(plus, &trace.r_grid),
        report_from(minus, &trace.r_grid),
    )
}

/// Inputs to the weak-form residual: a stored density path and optional
/// removal record and injection schedule.
pub struct WeakFormInput<'a> {
    pub u_series: &'a [(f64, DensityGrid)],
    pub beta: Option<&'a RemovalMeasure>,
    pub alpha: Option<&'a InjectionSchedule>,
}

/// Distance between the two sides of the weak formulation tested against
/// `phi`, with trapezoid-in-time and cell-sum-in-space quadrature.
pub fn weak_form_residual(input: &WeakFormInput<'_>, phi: &TestFunction) -> Result<f64> {
    let series = input.u_series;
    if series.is_empty() {
        return Err(CoreError::InvalidData("empty density series".into()));
    }
    let grid = series[0].1.grid();
    let (lo, hi) = phi.space_support();
    if lo < grid.x_min() || hi > grid.x_max() {
        return Err(CoreError::SupportEscapesGrid);
    }
    let t_last = series.last().unwrap().0;
    if phi.time.support_end() > t_last + 1e-9 {
        return Err(CoreError::SupportEscapesGrid);
    }
    let h = grid.h();
    let i_lo = grid.locate(lo);
    let i_hi = grid.locate(hi);

    let spatial = |t: f64, u: &DensityGrid| -> f64 {
        let mut acc = 0.0;
        for i in i_lo..=i_hi {
            let x = grid.cell_center(i);
            let v = u.values()[i];
            if v != 0.0 {
                acc += (phi.dt(x, t) + 0.5 * phi.dxx(x, t)) * v;
            }
        }
        acc * h
    };

    // Trapezoid in time.
    let mut integral = 0.0;
    let mut prev_t = series[0].0;
    let mut prev_g = spatial(prev_t, &series[0].1);
    for (t, u) in &series[1..] {
        let g = spatial(*t, u);
        integral += 0.5 * (g + prev_g) * (t - prev_t);
        prev_t = *t;
        prev_g = g;
    }
    let lhs = -integral;

    // Initial term.
    let u0 = &series[0].1;
    let mut init = 0.0;
    for i in i_lo..=i_hi {
        let x = grid.cell_center(i);
        init += phi.value(x, 0.0) * u0.values()[i];
    }
    init *= h;

    // Injection term, midpoint in time per series interval.
    let mut alpha_term = 0.0;
    if let Some(sched) = input.alpha {
        let weight = sched.pi.total_weight();
        for w in series.windows(2) {
            let (a, b) = (w[0].0, w[1].0);
            let mass = sched.clock.increment(a, b);
            if mass <= 0.0 {
                continue;
            }
            let t_mid = 0.5 * (a + b);
            let mut shape = 0.0;
            for (x, wgt) in &sched.pi.atoms.atoms {
                shape += phi.value(*x, t_mid) * wgt;
            }
            if let Some(d) = &sched.pi.density {
                for i in i_lo..=i_hi {
                    shape += phi.value(grid.cell_center(i), t_mid) * d.values()[i] * h;
                }
            }
            alpha_term += shape / weight * mass;
        }
    }

    // Removal term, evaluated at the recorded entry times and positions.
    let mut beta_term = 0.0;
    if let Some(beta) = input.beta {
        for e in beta.entries() {
            if e.time > t_last + 1e-12 {
                break;
            }
            match &e.payload {
                RemovalPayload::Atoms(a) => {
                    for (x, wgt) in &a.atoms {
                        beta_term += phi.value(*x, e.time) * wgt;
                    }
                }
                RemovalPayload::GridSlab { start, values } => {
                    for (j, v) in values.iter().enumerate() {
                        if *v != 0.0 {
                            beta_term += phi.value(grid.cell_center(start + j), e.time) * v * h;
                        }
                    }
                }
                RemovalPayload::Summary { .. } => {
                    return Err(CoreError::InvalidData(
                        "summary removal records cannot enter the weak form; rerun with full detail"
                            .into(),
                    ))
                }
            }
        }
    }

    Ok((lhs - (init + alpha_term - beta_term)).abs())
}

/// Running reflection of a sampled path: `t -> -min(0, min_{s<=t} v(s))`.
/// Nondecreasing and zero at the start.
pub fn skorohod_map(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut running = 0.0f64;
    for v in values {
        running = running.min(*v);
        out.push(-(running.min(0.0)));
    }
    out
}

/// Time series at a fixed position `r`: remaining tail mass, removal
/// accumulated strictly left of `r`, and the free profile that the
/// reflection map should turn back into the removal curve.
#[derive(Clone, Debug)]
pub struct SkorohodProfile {
    pub r: f64,
    pub times: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

impl SkorohodProfile {
    /// Builds the profile from a stored tail path, a removal record, and
    /// the cumulative removal clock.
    pub fn from_tails(
        u_tails: &[(f64, TailFunction)],
        beta: &RemovalMeasure,
        clock: &dyn Fn(f64) -> f64,
        r: f64,
    ) -> Result<SkorohodProfile> {
        let mut times = Vec::with_capacity(u_tails.len());
        let mut u_hat = Vec::with_capacity(u_tails.len());
        let mut beta_hat = Vec::with_capacity(u_tails.len());
        let mut gamma_hat = Vec::with_capacity(u_tails.len());
        for (t, tail) in u_tails {
            let u = tail.eval(r);
            let b_left = beta.mass_left_of(r, *t)?;
            let b_total = beta.cumulative_mass_at(*t);
            times.push(*t);
            u_hat.push(u);
            beta_hat.push(b_left);
            gamma_hat.push(u + (b_total - b_left) - clock(*t));
        }
        Ok(SkorohodProfile {
            r,
            times,
            u_hat,
            beta_hat,
            gamma_hat,
        })
    }

    /// Builds the profile from a particle trace at one of its recorded
    /// `r`-grid positions, sampled at event times with post-removal values.
    pub fn from_trace(trace: &EmpiricalTrace, r: f64) -> Result<SkorohodProfile> {
        let j = trace
            .r_grid
            .iter()
            .position(|x| (*x - r).abs() <= 1e-12 * (1.0 + r.abs()))
            .ok_or_else(|| {
                CoreError::InvalidData(format!(
                    "position {r} is not on the trace's recorded grid"
                ))
            })?;
        let n = trace.n_initial as f64;
        let mut times = vec![0.0];
        let mut u_hat = Vec::with_capacity(trace.events.len() + 1);
        let mut beta_hat = vec![0.0f64];
        let mut gamma_hat = Vec::with_capacity(trace.events.len() + 1);
        // Initial tail from the first event's pre-removal counts is not
        // available before any event; approximate time zero by the first
        // event's pre state, which is exact when no mass moves before it.
        let first = trace.events.first().ok_or(CoreError::EmptyWindow)?;
        let u0 = first.pre_tail_counts[j] as f64 / n;
        u_hat.push(u0);
        gamma_hat.push(u0);
        let mut b_left = 0.0f64;
        let mut removed = 0usize;
        for e in &trace.events {
            removed += 1;
            if e.position < r {
                b_left += 1.0 / n;
            }
            let post_tail =
                (e.pre_tail_counts[j] as f64 - if e.position >= r { 1.0 } else { 0.0 }) / n;
            let total_removed = removed as f64 / n;
            times.push(e.time);
            u_hat.push(post_tail);
            beta_hat.push(b_left);
            gamma_hat.push(post_tail + (total_removed - b_left) - total_removed);
        }
        Ok(SkorohodProfile {
            r,
            times,
            u_hat,
            beta_hat,
            gamma_hat,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SkorohodReport {
    /// Largest deviation of the additive identity along the profile.
    pub additive_dev: f64,
    /// Largest deviation of the reconstructed removal curve.
    pub reconstruction_dev: f64,
}

/// Checks that the tail equals free profile plus removal exactly, and how
/// well the reflection map reconstructs the removal curve.
pub fn skorohod_consistency(profile: &SkorohodProfile) -> SkorohodReport {
    let mut additive = 0.0f64;
    for i in 0..profile.times.len() {
        additive = additive
            .max((profile.u_hat[i] - profile.gamma_hat[i] - profile.beta_hat[i]).abs());
    }
    let rebuilt = skorohod_map(&profile.gamma_hat);
    let mut rec = 0.0f64;
    for (a, b) in rebuilt.iter().zip(profile.beta_hat.iter()) {
        rec = rec.max((a - b).abs());
    }
    SkorohodReport {
        additive_dev: additive,
        reconstruction_dev: rec,
    }
}

/// Support bounds of the removal record inside a time window.
pub fn support_bounds(beta: &RemovalMeasure, t1: f64, t2: f64) -> Result<(f64, f64)> {
    beta.support_in_window(t1, t2)
}
