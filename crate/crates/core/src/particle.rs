//! Exact event-driven simulators for the boundary-removal and quantile-
//! removal particle systems, coupled paired runs, and empirical measure
//! extraction.
//!
//! Positions are materialized only at event and snapshot times via exact
//! Gaussian increments, so no time-discretization error enters. Each
//! particle owns its own stream seeded from (run seed, label), which makes
//! traces bit-identical regardless of scheduling and lets a coupled pair
//! share driving noise per label.

use crate::derive_seed;
use crate::error::{CoreError, Result};
use crate::rab::RabData;
use crate::raq::RaqData;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    /// Assert the per-event order-respecting removal invariants.
    pub check_events: bool,
    /// Record pre-removal tail counts at these positions for every event.
    pub ora_r_grid: Vec<f64>,
    /// Also track removed particles as if they kept diffusing (free flow).
    pub record_zeta: bool,
}

impl SimOptions {
    pub fn checked() -> Self {
        SimOptions {
            check_events: true,
            ..Default::default()
        }
    }
}

/// One removal event. `pre_tail_counts[k]` counts alive particles at or
/// above `r_grid[k]` just before the removal; `pre_left_counts[k]` counts
/// strictly below.
#[derive(Clone, Debug, PartialEq)]
pub struct RemovalEventRec {
    pub time: f64,
    pub position: f64,
    pub label: u32,
    pub pre_alive: u32,
    pub pre_tail_counts: Vec<u32>,
    pub pre_left_counts: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct EmpiricalTrace {
    pub n_initial: usize,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Sorted alive positions per snapshot.
    pub snapshots: Vec<Vec<f64>>,
    /// Free-flow snapshots including removed particles, when requested.
    pub zeta_snapshots: Option<Vec<Vec<f64>>>,
    pub events: Vec<RemovalEventRec>,
    pub r_grid: Vec<f64>,
    pub injection_count: usize,
    pub removal_count: usize,
    /// Count of failed per-event order assertions (zero for a valid run).
    pub ora_violations: usize,
}

impl EmpiricalTrace {
    /// Exact right-tail step function of the snapshot at `t`.
    pub fn empirical_tail(&self, t: f64) -> Result<EmpiricalTail> {
        let idx = self
            .snapshot_times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or(CoreError::NoSnapshotAtTime(t))?;
        Ok(EmpiricalTail {
            sorted: self.snapshots[idx].clone(),
            normalizer: self.n_initial,
        })
    }

    /// Removed mass strictly left of `r` by time `t`, rescaled by `1/N`.
    pub fn beta_left_of(&self, r: f64, t: f64) -> f64 {
        let count = self
            .events
            .iter()
            .take_while(|e| e.time <= t)
            .filter(|e| e.position < r)
            .count();
        count as f64 / self.n_initial as f64
    }

    /// Total removed mass by time `t`, rescaled by `1/N`.
    pub fn removal_cum(&self, t: f64) -> f64 {
        let idx = self.events.partition_point(|e| e.time <= t);
        idx as f64 / self.n_initial as f64
    }

    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,position,label")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.time, e.position, e.label)?;
        }
        Ok(())
    }

    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,position")?;
        for (t, snap) in self.snapshot_times.iter().zip(self.snapshots.iter()) {
            for x in snap {
                writeln!(w, "{t},{x}")?;
            }
        }
        Ok(())
    }
}

/// Right-tail counts of a sorted sample, rescaled by a fixed normalizer.
#[derive(Clone, Debug)]
pub struct EmpiricalTail {
    /// Ascending positions.
    pub sorted: Vec<f64>,
    /// The `N` in the rescaling (initial particle count, not alive count).
    pub normalizer: usize,
}

impl EmpiricalTail {
    pub fn tail(&self, r: f64) -> f64 {
        let below = self.sorted.partition_point(|x| *x < r);
        (self.sorted.len() - below) as f64 / self.normalizer as f64
    }

    pub fn alive_fraction(&self) -> f64 {
        self.sorted.len() as f64 / self.normalizer as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum EventKind {
    Inject,
    Remove,
    Snapshot,
}

/// Per-particle state: position plus the particle's own noise stream.
struct Particle {
    pos: f64,
    rng: ChaCha8Rng,
}

impl Particle {
    fn spawn(seed: u64, label: u32, quantile: impl FnOnce(f64) -> f64) -> Particle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label as u64));
        let u: f64 = rng.random();
        Particle {
            pos: quantile(u),
            rng,
        }
    }

    fn advance(&mut self, dt: f64) {
        if dt > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            self.pos += dt.sqrt() * z;
        }
    }
}

fn tail_counts(alive: &[u32], particles: &[Particle], r_grid: &[f64]) -> (Vec<u32>, Vec<u32>) {
    if r_grid.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut tail = vec![0u32; r_grid.len()];
    for &lab in alive {
        let x = particles[lab as usize].pos;
        // r_grid is ascending: x sits at or above every point before the split.
        let k = r_grid.partition_point(|r| *r <= x);
        for t in tail.iter_mut().take(k) {
            *t += 1;
        }
    }
    let n = alive.len() as u32;
    let left = tail.iter().map(|c| n - c).collect();
    (tail, left)
}

fn build_timeline(
    inject_times: &[f64],
    remove_times: &[f64],
    snapshot_times: &[f64],
    horizon: f64,
) -> Vec<(f64, EventKind)> {
    let mut timeline: Vec<(f64, EventKind)> = Vec::new();
    for &t in inject_times {
        if t <= horizon {
            timeline.push((t, EventKind::Inject));
        }
    }
    for &t in remove_times {
        if t <= horizon {
            timeline.push((t, EventKind::Remove));
        }
    }
    for &t in snapshot_times {
        if t <= horizon {
            timeline.push((t, EventKind::Snapshot));
        }
    }
    // Injections before removals before snapshots at equal times.
    timeline.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then_with(|| {
            let rank = |k: EventKind| match k {
                EventKind::Inject => 0,
                EventKind::Remove => 1,
                EventKind::Snapshot => 2,
            };
            rank(a.1).cmp(&rank(b.1))
        })
    });
    timeline
}

/// Simulates the boundary-removal system: injections follow the injection
/// clock and source, and at each removal time the rightmost alive particle
/// goes (ties resolve to the smallest label; a particle injected exactly at
/// a removal time is eligible immediately).
pub fn simulate_rab(
    data: &RabData,
    n: usize,
    snapshot_times: &[f64],
    seed: u64,
    opts: &SimOptions,
) -> Result<EmpiricalTrace> {
    let eps0 = data.validate()?;
    if n as f64 * eps0 - 1.0 < 1.0 {
        return Err(CoreError::InvalidData(format!(
            "population too small: need n * eps0 - 1 >= 1, got n = {n}, eps0 = {eps0}"
        )));
    }
    let horizon = data.horizon;
    let nf = n as f64;

    let mut inject_times = Vec::new();
    let mut i = n + 1;
    while let Some(t) = data
        .injection
        .first_time_at_least((i - n) as f64 / nf)
        .filter(|t| *t <= horizon)
    {
        inject_times.push(t);
        i += 1;
    }
    let mut remove_times = Vec::new();
    let mut j = 1usize;
    while let Some(t) = data
        .removal
        .first_time_at_least(j as f64 / nf)
        .filter(|t| *t <= horizon)
    {
        remove_times.push(t);
        j += 1;
    }
    let timeline = build_timeline(&inject_times, &remove_times, snapshot_times, horizon);

    let mut particles: Vec<Particle> = (0..n)
        .map(|lab| Particle::spawn(seed, lab as u32, |u| data.u0.quantile(u)))
        .collect();
    let mut alive: Vec<u32> = (0..n as u32).collect();
    let mut trace = EmpiricalTrace {
        n_initial: n,
        seed,
        snapshot_times: Vec::new(),
        snapshots: Vec::new(),
        zeta_snapshots: if opts.record_zeta {
            Some(Vec::new())
        } else {
            None
        },
        events: Vec::new(),
        r_grid: opts.ora_r_grid.clone(),
        injection_count: 0,
        removal_count: 0,
        ora_violations: 0,
    };
    let mut removed: Vec<u32> = Vec::new();
    let mut clock = 0.0f64;
    let mut next_label = n as u32;

    for (t, kind) in timeline {
        let dt = t - clock;
        if dt > 0.0 {
            for &lab in &alive {
                particles[lab as usize].advance(dt);
            }
            if opts.record_zeta {
                for &lab in &removed {
                    particles[lab as usize].advance(dt);
                }
            }
            clock = t;
        }
        match kind {
            EventKind::Inject => {
                let lab = next_label;
                next_label += 1;
                particles.push(Particle::spawn(seed, lab, |u| data.pi.quantile(u)));
                alive.push(lab);
                trace.injection_count += 1;
            }
            EventKind::Remove => {
                if alive.is_empty() {
                    return Err(CoreError::PopulationUnderflow(t));
                }
                let (idx, lab, pos) = rightmost(&alive, &particles);
                let (pre_tail, pre_left) = tail_counts(&alive, &particles, &trace.r_grid);
                trace.events.push(RemovalEventRec {
                    time: t,
                    position: pos,
                    label: lab,
                    pre_alive: alive.len() as u32,
                    pre_tail_counts: pre_tail,
                    pre_left_counts: pre_left,
                });
                alive.swap_remove(idx);
                trace.removal_count += 1;
                if opts.record_zeta {
                    removed.push(lab);
                }
                if opts.check_events {
                    // No survivor may sit strictly right of the removal.
                    let bad = alive.iter().any(|l| particles[*l as usize].pos > pos);
                    if bad {
                        trace.ora_violations += 1;
                    }
                }
            }
            EventKind::Snapshot => {
                let mut snap: Vec<f64> =
                    alive.iter().map(|l| particles[*l as usize].pos).collect();
                snap.sort_by(|a, b| a.partial_cmp(b).unwrap());
                trace.snapshot_times.push(t);
                trace.snapshots.push(snap);
                if let Some(zs) = trace.zeta_snapshots.as_mut() {
                    let mut all: Vec<f64> = alive
                        .iter()
                        .chain(removed.iter())
                        .map(|l| particles[*l as usize].pos)
                        .collect();
                    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    zs.push(all);
                }
                // Exact count ledger at snapshot times.
                let expected = n + (nf * data.injection.eval(t) + 1e-9).floor() as usize
                    - (nf * data.removal.eval(t) + 1e-9).floor() as usize;
                if alive.len() != expected {
                    return Err(CoreError::InvalidData(format!(
                        "count ledger broke at t = {t}: alive {} vs expected {expected}",
                        alive.len()
                    )));
                }
            }
        }
    }
    Ok(trace)
}

/// Rightmost alive particle; ties resolve to the smallest label.
fn rightmost(alive: &[u32], particles: &[Particle]) -> (usize, u32, f64) {
    let mut best = 0usize;
    let mut best_lab = alive[0];
    let mut best_pos = particles[best_lab as usize].pos;
    for (i, &lab) in alive.iter().enumerate().skip(1) {
        let pos = particles[lab as usize].pos;
        if pos > best_pos || (pos == best_pos && lab < best_lab) {
            best = i;
            best_lab = lab;
            best_pos = pos;
        }
    }
    (best, best_lab, best_pos)
}

/// Member removed from a quantile-driven population. Positions are ranked
/// descending; the target is the member whose at-or-above count matches
/// `ceil(pop * level)`, where a zero target means the rightmost. Ties
/// resolve to the smallest label within the matching position group.
pub fn quantile_member(positions: &[(f64, u32)], level: f64) -> (f64, u32) {
    let pop = positions.len();
    let mut target = (pop as f64 * level).ceil() as usize;
    if target == 0 {
        target = 1;
    }
    target = target.min(pop);
    let mut desc: Vec<(f64, u32)> = positions.to_vec();
    desc.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // Group of equal positions containing the descending rank `target`.
    // Distinct positions make it a singleton with count exactly `target`.
    let mut g_start = target - 1;
    while g_start > 0 && desc[g_start - 1].0 == desc[target - 1].0 {
        g_start -= 1;
    }
    let mut g_end = target - 1;
    while g_end + 1 < pop && desc[g_end + 1].0 == desc[target - 1].0 {
        g_end += 1;
    }
    let mut best = desc[g_start];
    for c in &desc[g_start..=g_end] {
        if c.1 < best.1 {
            best = *c;
        }
    }
    (best.0, best.1)
}

/// Simulates quantile removal: one removal per `1/n` time unit, taking the
/// member at the current relative quantile until extinction at time one.
pub fn simulate_raq(
    data: &RaqData,
    n: usize,
    snapshot_times: &[f64],
    seed: u64,
    opts: &SimOptions,
) -> Result<EmpiricalTrace> {
    data.validate()?;
    if n == 0 {
        return Err(CoreError::InvalidData("need at least one particle".into()));
    }
    let nf = n as f64;
    let remove_times: Vec<f64> = (1..=n).map(|k| k as f64 / nf).collect();
    let timeline = build_timeline(&[], &remove_times, snapshot_times, 1.0);

    let mut particles: Vec<Particle> = (0..n)
        .map(|lab| Particle::spawn(seed, lab as u32, |u| data.u0.quantile(u)))
        .collect();
    let mut alive: Vec<u32> = (0..n as u32).collect();
    let mut trace = EmpiricalTrace {
        n_initial: n,
        seed,
        snapshot_times: Vec::new(),
        snapshots: Vec::new(),
        zeta_snapshots: if opts.record_zeta {
            Some(Vec::new())
        } else {
            None
        },
        events: Vec::new(),
        r_grid: opts.ora_r_grid.clone(),
        injection_count: 0,
        removal_count: 0,
        ora_violations: 0,
    };
    let mut removed: Vec<u32> = Vec::new();
    let mut clock = 0.0f64;
    let mut k = 0usize;

    for (t, kind) in timeline {
        let dt = t - clock;
        if dt > 0.0 {
            for &lab in &alive {
                particles[lab as usize].advance(dt);
            }
            if opts.record_zeta {
                for &lab in &removed {
                    particles[lab as usize].advance(dt);
                }
            }
            clock = t;
        }
        match kind {
            EventKind::Remove => {
                k += 1;
                if alive.is_empty() {
                    return Err(CoreError::PopulationUnderflow(t));
                }
                let pop = alive.len();
                let level = if k == n {
                    // Final removal takes the last survivor.
                    0.0
                } else {
                    data.q.relative(t)
                };
                let positions: Vec<(f64, u32)> = alive
                    .iter()
                    .map(|l| (particles[*l as usize].pos, *l))
                    .collect();
                let (pos, lab) = quantile_member(&positions, level);
                let (pre_tail, pre_left) = tail_counts(&alive, &particles, &trace.r_grid);
                trace.events.push(RemovalEventRec {
                    time: t,
                    position: pos,
                    label: lab,
                    pre_alive: pop as u32,
                    pre_tail_counts: pre_tail,
                    pre_left_counts: pre_left,
                });
                let idx = alive.iter().position(|l| *l == lab).unwrap();
                alive.swap_remove(idx);
                trace.removal_count += 1;
                if opts.record_zeta {
                    removed.push(lab);
                }
                if opts.check_events && k < n {
                    // Order-respecting bounds around the removed member.
                    let target = {
                        let raw = (pop as f64 * level).ceil() as usize;
                        raw.clamp(1, pop)
                    };
                    let right = alive
                        .iter()
                        .filter(|l| particles[**l as usize].pos > pos)
                        .count();
                    let left = alive
                        .iter()
                        .filter(|l| particles[**l as usize].pos < pos)
                        .count();
                    let q_t = data.q.eval(t);
                    let ok = right <= target - 1
                        && (target as f64 - 1.0) <= nf * q_t + 1.0 + 1e-9
                        && left <= pop - target
                        && (pop - target) as f64 <= nf * (1.0 - t - q_t) + 1.0 + 1e-9;
                    if !ok {
                        trace.ora_violations += 1;
                    }
                }
            }
            EventKind::Snapshot => {
                let mut snap: Vec<f64> =
                    alive.iter().map(|l| particles[*l as usize].pos).collect();
                snap.sort_by(|a, b| a.partial_cmp(b).unwrap());
                trace.snapshot_times.push(t);
                trace.snapshots.push(snap);
                if let Some(zs) = trace.zeta_snapshots.as_mut() {
                    let mut all: Vec<f64> = alive
                        .iter()
                        .chain(removed.iter())
                        .map(|l| particles[*l as usize].pos)
                        .collect();
                    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    zs.push(all);
                }
            }
            EventKind::Inject => unreachable!("no injections under quantile removal"),
        }
    }
    Ok(trace)
}

struct CoupledPair {
    pos_base: f64,
    pos_tilde: f64,
    rng: ChaCha8Rng,
}

fn rightmost_coupled(alive: &[u32], pool: &[CoupledPair], tilde: bool) -> (usize, u32, f64) {
    let read = |lab: u32| {
        let p = &pool[lab as usize];
        if tilde {
            p.pos_tilde
        } else {
            p.pos_base
        }
    };
    let mut best = 0usize;
    let mut best_lab = alive[0];
    let mut best_pos = read(best_lab);
    for (i, &lab) in alive.iter().enumerate().skip(1) {
        let pos = read(lab);
        if pos > best_pos || (pos == best_pos && lab < best_lab) {
            best = i;
            best_lab = lab;
            best_pos = pos;
        }
    }
    (best, best_lab, best_pos)
}

/// First time a nondecreasing clock difference reaches `target`, by
/// bisection on `[0, horizon]`.
fn first_difference_time(
    diff: impl Fn(f64) -> f64,
    target: f64,
    horizon: f64,
) -> Option<f64> {
    if diff(horizon) < target {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = horizon;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diff(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Runs a coupled pair of boundary-removal systems on shared noise, with
/// removal clocks arranged so every removal of the base system is also a
/// removal of the dominated one, and checks the tail-count dominance of the
/// dominated configuration after every event.
///
/// Preconditions: the dominated start and source sit below the base ones in
/// the tail order, `injection - injection_tilde` and `removal_tilde -
/// removal` are nondecreasing.
pub fn simulate_coupled_rab(
    data: &RabData,
    data_tilde: &RabData,
    n: usize,
    snapshot_times: &[f64],
    seed: u64,
    opts: &SimOptions,
) -> Result<(EmpiricalTrace, EmpiricalTrace)> {
    data.validate()?;
    data_tilde.validate()?;
    if !crate::grid::leq(&data_tilde.u0, &data.u0, 0.0)? {
        return Err(CoreError::CouplingPreconditionViolated(
            "initial density of the dominated system exceeds the base one".into(),
        ));
    }
    if !data_tilde.pi.dominated_by(&data.pi) {
        return Err(CoreError::CouplingPreconditionViolated(
            "injection source of the dominated system exceeds the base one".into(),
        ));
    }
    let horizon = data.horizon.min(data_tilde.horizon);
    if !crate::schedule::difference_is_nondecreasing(
        &data.injection,
        &data_tilde.injection,
        horizon,
    ) {
        return Err(CoreError::CouplingPreconditionViolated(
            "injection clock difference is not nondecreasing".into(),
        ));
    }
    if !crate::schedule::difference_is_nondecreasing(&data_tilde.removal, &data.removal, horizon) {
        return Err(CoreError::CouplingPreconditionViolated(
            "removal clock difference is not nondecreasing".into(),
        ));
    }
    let nf = n as f64;

    // Injection events: shared ones follow the dominated clock; the base
    // system additionally takes the jumps of the clock-difference count.
    // This keeps base injections a superset of dominated ones.
    let mut inj_events: Vec<(f64, bool)> = Vec::new();
    let mut k = 1usize;
    while let Some(t) = data_tilde
        .injection
        .first_time_at_least(k as f64 / nf)
        .filter(|t| *t <= horizon)
    {
        inj_events.push((t, true));
        k += 1;
    }
    let diff_inj = |t: f64| data.injection.eval(t) - data_tilde.injection.eval(t);
    let mut k = 1usize;
    while let Some(t) = first_difference_time(diff_inj, k as f64 / nf, horizon) {
        inj_events.push((t, false));
        k += 1;
    }
    inj_events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Removal events: shared ones follow the base clock; the dominated
    // system additionally takes the jumps of the clock-difference count.
    let mut rem_events: Vec<(f64, bool)> = Vec::new();
    let mut j = 1usize;
    while let Some(t) = data
        .removal
        .first_time_at_least(j as f64 / nf)
        .filter(|t| *t <= horizon)
    {
        rem_events.push((t, true));
        j += 1;
    }
    let diff_rem = |t: f64| data_tilde.removal.eval(t) - data.removal.eval(t);
    let mut j = 1usize;
    while let Some(t) = first_difference_time(diff_rem, j as f64 / nf, horizon) {
        rem_events.push((t, false));
        j += 1;
    }
    rem_events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    enum Tagged {
        Inject(bool),
        Remove(bool),
        Snapshot,
    }
    let mut timeline: Vec<(f64, u8, Tagged)> = Vec::new();
    for (t, shared) in &inj_events {
        timeline.push((*t, 0, Tagged::Inject(*shared)));
    }
    for (t, shared) in &rem_events {
        timeline.push((*t, 1, Tagged::Remove(*shared)));
    }
    for &t in snapshot_times {
        if t <= horizon {
            timeline.push((t, 2, Tagged::Snapshot));
        }
    }
    timeline.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    // Shared pool: quantile coupling off one uniform per label keeps the
    // dominated position at or below the base one; shared increments keep
    // it that way.
    let mut pool: Vec<CoupledPair> = (0..n as u32)
        .map(|lab| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, lab as u64));
            let u: f64 = rng.random();
            CoupledPair {
                pos_base: data.u0.quantile(u),
                pos_tilde: data_tilde.u0.quantile(u),
                rng,
            }
        })
        .collect();
    let mut alive_base: Vec<u32> = (0..n as u32).collect();
    let mut alive_tilde: Vec<u32> = (0..n as u32).collect();
    let mut next_label = n as u32;

    let mk_trace = || EmpiricalTrace {
        n_initial: n,
        seed,
        snapshot_times: Vec::new(),
        snapshots: Vec::new(),
        zeta_snapshots: None,
        events: Vec::new(),
        r_grid: opts.ora_r_grid.clone(),
        injection_count: 0,
        removal_count: 0,
        ora_violations: 0,
    };
    let mut trace_base = mk_trace();
    let mut trace_tilde = mk_trace();
    let mut clock = 0.0f64;

    fn dominance_holds(pool: &[CoupledPair], alive_base: &[u32], alive_tilde: &[u32]) -> bool {
        if alive_tilde.len() > alive_base.len() {
            return false;
        }
        let mut xb: Vec<f64> = alive_base
            .iter()
            .map(|l| pool[*l as usize].pos_base)
            .collect();
        let mut xt: Vec<f64> = alive_tilde
            .iter()
            .map(|l| pool[*l as usize].pos_tilde)
            .collect();
        xb.sort_by(|a, b| b.partial_cmp(a).unwrap());
        xt.sort_by(|a, b| b.partial_cmp(a).unwrap());
        xt.iter().zip(xb.iter()).all(|(t, b)| t <= b)
    }

    for (t, _, tag) in timeline {
        let dt = t - clock;
        if dt > 0.0 {
            for p in pool.iter_mut() {
                let z: f64 = p.rng.sample(StandardNormal);
                let step = dt.sqrt() * z;
                p.pos_base += step;
                p.pos_tilde += step;
            }
            clock = t;
        }
        match tag {
            Tagged::Inject(shared) => {
                let lab = next_label;
                next_label += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, lab as u64));
                let u: f64 = rng.random();
                pool.push(CoupledPair {
                    pos_base: data.pi.quantile(u),
                    pos_tilde: data_tilde.pi.quantile(u),
                    rng,
                });
                alive_base.push(lab);
                trace_base.injection_count += 1;
                if shared {
                    alive_tilde.push(lab);
                    trace_tilde.injection_count += 1;
                }
            }
            Tagged::Remove(shared) => {
                if shared {
                    if alive_base.is_empty() {
                        return Err(CoreError::PopulationUnderflow(t));
                    }
                    let (idx, lab, pos) = rightmost_coupled(&alive_base, &pool, false);
                    trace_base.events.push(RemovalEventRec {
                        time: t,
                        position: pos,
                        label: lab,
                        pre_alive: alive_base.len() as u32,
                        pre_tail_counts: Vec::new(),
                        pre_left_counts: Vec::new(),
                    });
                    alive_base.swap_remove(idx);
                    trace_base.removal_count += 1;
                }
                if alive_tilde.is_empty() {
                    return Err(CoreError::PopulationUnderflow(t));
                }
                let (idx, lab, pos) = rightmost_coupled(&alive_tilde, &pool, true);
                trace_tilde.events.push(RemovalEventRec {
                    time: t,
                    position: pos,
                    label: lab,
                    pre_alive: alive_tilde.len() as u32,
                    pre_tail_counts: Vec::new(),
                    pre_left_counts: Vec::new(),
                });
                alive_tilde.swap_remove(idx);
                trace_tilde.removal_count += 1;
                if opts.check_events && !dominance_holds(&pool, &alive_base, &alive_tilde) {
                    return Err(CoreError::CouplingPreconditionViolated(format!(
                        "tail-count dominance failed after the removal at t = {t}"
                    )));
                }
            }
            Tagged::Snapshot => {
                let mut sb: Vec<f64> = alive_base
                    .iter()
                    .map(|l| pool[*l as usize].pos_base)
                    .collect();
                sb.sort_by(|a, b| a.partial_cmp(b).unwrap());
                trace_base.snapshot_times.push(t);
                trace_base.snapshots.push(sb);
                let mut st: Vec<f64> = alive_tilde
                    .iter()
                    .map(|l| pool[*l as usize].pos_tilde)
                    .collect();
                st.sort_by(|a, b| a.partial_cmp(b).unwrap());
                trace_tilde.snapshot_times.push(t);
                trace_tilde.snapshots.push(st);
                if opts.check_events && !dominance_holds(&pool, &alive_base, &alive_tilde) {
                    return Err(CoreError::CouplingPreconditionViolated(format!(
                        "tail-count dominance failed at the snapshot t = {t}"
                    )));
                }
            }
        }
    }
    Ok((trace_base, trace_tilde))
}

/// Seeds for independent replicas of one scenario.
pub fn replica_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(base, i << 32)).collect()
}
