//! Scenario executors behind the subcommands: solver sweeps, simulation
//! sweeps, diagnostics, and model comparisons.

use crate::config::{CompareSpec, Model, Scenario};
use crate::emit::{write_density_csv, write_gap_rows, write_removal_rows, RunDir};
use oralab_core::diagnostics::{
    ora_residual_raq, ora_residual_rab, skorohod_consistency, SkorohodProfile,
};
use oralab_core::particle::replica_seeds;
use oralab_core::*;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

pub type RunResult<T> = std::result::Result<T, RunError>;

#[derive(Debug)]
pub enum RunError {
    Config(crate::config::ConfigError),
    Invariant(CoreError),
    Io(std::io::Error),
    StrictWarnings(usize),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Invariant(e) => write!(f, "invariant violation: {e}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
            RunError::StrictWarnings(n) => write!(f, "strict mode: {n} warning(s) escalated"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 3,
            RunError::Invariant(_) | RunError::StrictWarnings(_) => 2,
            RunError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        RunError::Invariant(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<crate::config::ConfigError> for RunError {
    fn from(e: crate::config::ConfigError) -> Self {
        RunError::Config(e)
    }
}

pub struct Ctx<'a> {
    pub scenario: &'a Scenario,
    pub config_bytes: &'a [u8],
    pub out_dir: &'a Path,
    pub seed: u64,
    pub strict: bool,
}

impl Ctx<'_> {
    fn finish(&self, dir: &mut RunDir, warnings: Vec<String>) -> RunResult<()> {
        let config_json: serde_json::Value =
            serde_json::from_slice(self.config_bytes).unwrap_or(serde_json::Value::Null);
        dir.write_manifest(&config_json, self.seed, &warnings)?;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        if self.strict && !warnings.is_empty() {
            return Err(RunError::StrictWarnings(warnings.len()));
        }
        Ok(())
    }
}

enum SolvedCell {
    Rab(BarrierRun),
    Raq(RaqBarrierRun),
}

impl SolvedCell {
    fn times(&self) -> &[f64] {
        match self {
            SolvedCell::Rab(r) => &r.times,
            SolvedCell::Raq(r) => &r.times,
        }
    }

    fn gap_bound(&self) -> &[f64] {
        match self {
            SolvedCell::Rab(r) => &r.gap_bound,
            SolvedCell::Raq(r) => &r.gap_bound,
        }
    }

    fn measured_gap(&self) -> &[f64] {
        match self {
            SolvedCell::Rab(r) => &r.measured_gap,
            SolvedCell::Raq(r) => &r.measured_gap,
        }
    }

    fn removal_lower(&self) -> &RemovalMeasure {
        match self {
            SolvedCell::Rab(r) => &r.removal_lower,
            SolvedCell::Raq(r) => &r.removal_lower,
        }
    }

    fn stored_pair(&self, t: f64) -> Option<(&DensityGrid, &DensityGrid)> {
        match self {
            SolvedCell::Rab(r) => {
                let i = r.stored_index_at(t)?;
                Some((&r.lower[i], &r.upper[i]))
            }
            SolvedCell::Raq(r) => {
                let i = r.stored_index_at(t)?;
                Some((&r.lower[i], &r.upper[i]))
            }
        }
    }

    fn midpoint_at(&self, t: f64) -> Option<DensityGrid> {
        match self {
            SolvedCell::Rab(r) => r.midpoint_at(t),
            SolvedCell::Raq(r) => r.midpoint_at(t),
        }
    }

    fn warnings(&self) -> &[Warning] {
        match self {
            SolvedCell::Rab(r) => &r.warnings,
            SolvedCell::Raq(r) => &r.warnings,
        }
    }
}

fn solve_cell(scn: &Scenario, margin: f64, step: f64) -> RunResult<SolvedCell> {
    let opts = scn.solve_options();
    match scn.model {
        Model::Rab => {
            let data = scn.build_rab()?;
            Ok(SolvedCell::Rab(solve(&data, margin, step, &opts)?))
        }
        Model::Raq => {
            let data = scn.build_raq()?;
            Ok(SolvedCell::Raq(solve_raq(&data, margin, step, &opts)?))
        }
    }
}

fn solver_cells(scn: &Scenario) -> Vec<(String, f64, f64)> {
    let mut cells = Vec::new();
    for margin in &scn.solver.margins {
        for step in &scn.solver.steps {
            cells.push((format!("m{margin}_s{step}"), *margin, *step));
        }
    }
    cells
}

/// Runs the configured solver sweep and writes gap, removal, and density
/// tables.
pub fn run_solve(ctx: &Ctx<'_>) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let cells = solver_cells(ctx.scenario);
    let solved: Vec<(String, SolvedCell)> = cells
        .par_iter()
        .map(|(key, margin, step)| {
            solve_cell(ctx.scenario, *margin, *step).map(|s| (key.clone(), s))
        })
        .collect::<RunResult<_>>()?;

    let run_id = dir.run_id.clone();
    let mut warnings: Vec<String> = Vec::new();
    {
        let mut gap = dir.writer("gap.csv")?;
        writeln!(gap, "run_id,t,bound,measured")?;
        for (key, cell) in &solved {
            write_gap_rows(
                &mut gap,
                &format!("{run_id}/{key}"),
                cell.times(),
                cell.gap_bound(),
                cell.measured_gap(),
            )?;
            warnings.extend(cell.warnings().iter().map(|w| format!("{key}: {w}")));
        }
    }
    {
        let mut rem = dir.writer("removal.csv")?;
        writeln!(rem, "run_id,t,lo,hi,mass")?;
        for (key, cell) in &solved {
            write_removal_rows(&mut rem, &format!("{run_id}/{key}"), cell.removal_lower())?;
        }
    }
    if ctx.scenario.outputs.emit_density {
        for t in &ctx.scenario.outputs.snapshot_times {
            let mut blocks = Vec::new();
            for (key, cell) in &solved {
                match cell.stored_pair(*t) {
                    Some((l, u)) => blocks.push((format!("{run_id}/{key}"), l, u)),
                    None => warnings.push(format!(
                        "{key}: no stored iterate at t = {t}, density block skipped"
                    )),
                }
            }
            if !blocks.is_empty() {
                write_density_csv(&mut dir, *t, &blocks)?;
            }
        }
    }
    if ctx.scenario.outputs.emit_plots {
        let mut w = dir.writer("plots/gap_vs_step.csv")?;
        writeln!(w, "margin,step,t,bound,measured")?;
        for ((_, margin, step), (_, cell)) in cells.iter().zip(&solved) {
            let t = cell.times().last().unwrap();
            writeln!(
                w,
                "{margin},{step},{t},{},{}",
                cell.gap_bound().last().unwrap(),
                cell.measured_gap().last().unwrap()
            )?;
        }
    }
    ctx.finish(&mut dir, warnings)
}

/// Runs the configured simulations and writes event and snapshot tables.
pub fn run_simulate(ctx: &Ctx<'_>) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let scn = ctx.scenario;
    let snapshot_times = &scn.outputs.snapshot_times;
    let opts = SimOptions::checked();

    let mut jobs = Vec::new();
    for &n in &scn.simulation.particles {
        for (rep, seed) in replica_seeds(ctx.seed, scn.simulation.replicas)
            .into_iter()
            .enumerate()
        {
            jobs.push((n, rep, seed));
        }
    }
    let traces: Vec<(usize, usize, EmpiricalTrace)> = jobs
        .par_iter()
        .map(|(n, rep, seed)| {
            let trace = match scn.model {
                Model::Rab => {
                    let data = scn.build_rab()?;
                    simulate_rab(&data, *n, snapshot_times, *seed, &opts)?
                }
                Model::Raq => {
                    let data = scn.build_raq()?;
                    simulate_raq(&data, *n, snapshot_times, *seed, &opts)?
                }
            };
            Ok::<_, RunError>((*n, *rep, trace))
        })
        .collect::<RunResult<_>>()?;

    let mut violations = 0usize;
    {
        let mut ev = dir.writer("events.csv")?;
        writeln!(ev, "n,replica,time,position,label")?;
        let mut snaps = dir.writer("snapshots.csv")?;
        writeln!(snaps, "n,replica,time,position")?;
        for (n, rep, trace) in &traces {
            violations += trace.ora_violations;
            for e in &trace.events {
                writeln!(ev, "{n},{rep},{},{},{}", e.time, e.position, e.label)?;
            }
            for (t, snap) in trace.snapshot_times.iter().zip(trace.snapshots.iter()) {
                for x in snap {
                    writeln!(snaps, "{n},{rep},{t},{x}")?;
                }
            }
        }
    }
    if violations > 0 {
        return Err(RunError::Invariant(CoreError::InvalidData(format!(
            "{violations} order-respecting removal violations recorded"
        ))));
    }
    ctx.finish(&mut dir, Vec::new())
}

fn auto_r_grid(cell: &SolvedCell, count: usize) -> Vec<f64> {
    // Evenly spaced positions across the occupied support plus the
    // removal-entry support midpoints.
    let (lo, hi) = match cell.stored_pair(*cell.times().last().unwrap()) {
        Some((l, _)) => l.support_bounds().unwrap_or((-1.0, 1.0)),
        None => (-1.0, 1.0),
    };
    let mut rs: Vec<f64> = (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count.max(2) - 1) as f64)
        .collect();
    let removal = cell.removal_lower();
    let stride = (removal.len() / count.max(1)).max(1);
    for idx in (0..removal.len()).step_by(stride) {
        if let Ok((a, b)) = removal.support_in_window(
            removal.entries()[idx].time - 1e-12,
            removal.entries()[idx].time + 1e-12,
        ) {
            rs.push(0.5 * (a + b));
        }
    }
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rs.dedup();
    rs
}

/// Solves the first configured cell with full detail and writes the
/// absorption-order and reflection-map diagnostic tables.
pub fn run_check_ora(ctx: &Ctx<'_>) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let scn = ctx.scenario;
    let mut forced = scn.clone();
    forced.solver.stride = 1;
    forced.solver.removal_detail = crate::config::DetailSpec::Full;
    let (_, margin, step) = solver_cells(&forced).remove(0);
    let cell = solve_cell(&forced, margin, step)?;
    let r_grid = auto_r_grid(&cell, scn.outputs.r_values);

    let tails: Vec<(f64, TailFunction)> = match &cell {
        SolvedCell::Rab(run) => run
            .times
            .iter()
            .zip(run.lower.iter())
            .map(|(t, u)| (*t, u.tail()))
            .collect(),
        SolvedCell::Raq(run) => run
            .times
            .iter()
            .zip(run.lower.iter())
            .map(|(t, u)| (*t, u.tail()))
            .collect(),
    };
    {
        let mut w = dir.writer("ora.csv")?;
        writeln!(w, "r,residual")?;
        match scn.model {
            Model::Rab => {
                let rep = ora_residual_rab(&tails, cell.removal_lower(), &r_grid)?;
                for (r, v) in r_grid.iter().zip(rep.per_r.iter()) {
                    writeln!(w, "{r},{v}")?;
                }
            }
            Model::Raq => {
                let data = forced.build_raq()?;
                let (plus, minus) =
                    ora_residual_raq(&tails, cell.removal_lower(), &data.q, &r_grid)?;
                let mut sides = dir.writer("ora_sides.csv")?;
                writeln!(sides, "r,residual_above,residual_below")?;
                for ((r, p), m) in r_grid.iter().zip(plus.per_r.iter()).zip(minus.per_r.iter()) {
                    writeln!(w, "{r},{}", p.max(*m))?;
                    writeln!(sides, "{r},{p},{m}")?;
                }
            }
        }
    }
    {
        // Reflection-map consistency across sixteen positions.
        let clock: Box<dyn Fn(f64) -> f64> = match scn.model {
            Model::Rab => {
                let data = forced.build_rab()?;
                Box::new(move |t| data.removal.eval(t))
            }
            Model::Raq => Box::new(|t: f64| t.min(1.0)),
        };
        let (lo, hi) = (r_grid[0], *r_grid.last().unwrap());
        let mut w = dir.writer("skorohod.csv")?;
        writeln!(w, "r,additive_dev,reconstruction_dev")?;
        for k in 0..16 {
            let r = lo + (hi - lo) * k as f64 / 15.0;
            let p = SkorohodProfile::from_tails(&tails, cell.removal_lower(), &clock, r)?;
            let rep = skorohod_consistency(&p);
            writeln!(w, "{r},{},{}", rep.additive_dev, rep.reconstruction_dev)?;
        }
    }
    let warnings = cell.warnings().iter().map(|w| w.to_string()).collect();
    ctx.finish(&mut dir, warnings)
}

/// Model comparisons: empirical-versus-barrier convergence, dominance
/// under a heavier removal clock, or the cross-model identity.
pub fn run_compare(ctx: &Ctx<'_>) -> RunResult<()> {
    let scn = ctx.scenario;
    let mode = scn
        .compare
        .clone()
        .ok_or_else(|| crate::config::ConfigError("compare needs a `compare` block".into()))?;
    match mode {
        CompareSpec::Hydro => run_compare_hydro(ctx),
        CompareSpec::Dominance { removal_factor } => run_compare_dominance(ctx, removal_factor),
        CompareSpec::CrossModel => run_compare_cross(ctx),
    }
}

fn run_compare_hydro(ctx: &Ctx<'_>) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let scn = ctx.scenario;
    let (_, margin, step) = solver_cells(scn).remove(0);
    let cell = solve_cell(scn, margin, step)?;
    let snapshot_times = if scn.outputs.snapshot_times.is_empty() {
        vec![scn.horizon / 2.0]
    } else {
        scn.outputs.snapshot_times.clone()
    };
    let grid = scn.build_grid()?;

    let mut jobs = Vec::new();
    for &n in &scn.simulation.particles {
        for (rep, seed) in replica_seeds(ctx.seed, scn.simulation.replicas)
            .into_iter()
            .enumerate()
        {
            jobs.push((n, rep, seed));
        }
    }
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|(n, rep, seed)| {
            let trace = match scn.model {
                Model::Rab => {
                    let data = scn.build_rab()?;
                    simulate_rab(&data, *n, &snapshot_times, *seed, &SimOptions::checked())?
                }
                Model::Raq => {
                    let data = scn.build_raq()?;
                    simulate_raq(&data, *n, &snapshot_times, *seed, &SimOptions::checked())?
                }
            };
            let mut out = Vec::new();
            for t in &snapshot_times {
                let mid = cell
                    .midpoint_at(*t)
                    .ok_or_else(|| CoreError::NoSnapshotAtTime(*t))?;
                let mid_tail = mid.tail();
                let emp = trace.empirical_tail(*t)?;
                let sup = tail_sup_distance_exact(&emp, &mid_tail);
                let levy = levy_distance(&emp, &mid_tail, grid.h());
                out.push(format!("{n},{rep},{t},{sup},{levy}"));
            }
            Ok::<_, RunError>(out)
        })
        .collect::<RunResult<_>>()?;
    {
        let mut w = dir.writer("convergence.csv")?;
        writeln!(w, "n,replica,t,sup_dist,levy")?;
        for block in rows {
            for line in block {
                writeln!(w, "{line}")?;
            }
        }
    }
    if ctx.scenario.outputs.emit_plots {
        let mut w = dir.writer("plots/supdist_vs_n.csv")?;
        writeln!(w, "n,mean_sup,std_sup")?;
        // Derived aggregate per population size at the first snapshot.
        let mut per_n: Vec<(usize, Vec<f64>)> = Vec::new();
        // Reread is avoided by recomputing from the csv rows written above.
        drop(w);
        let body = std::fs::read_to_string(dir.path.join("convergence.csv"))?;
        for line in body.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let n: usize = parts[0].parse().unwrap();
            let t: f64 = parts[2].parse().unwrap();
            if (t - snapshot_times[0]).abs() > 1e-12 {
                continue;
            }
            let sup: f64 = parts[3].parse().unwrap();
            match per_n.iter_mut().find(|(m, _)| *m == n) {
                Some((_, v)) => v.push(sup),
                None => per_n.push((n, vec![sup])),
            }
        }
        let mut w = dir.writer("plots/supdist_vs_n.csv")?;
        writeln!(w, "n,mean_sup,std_sup")?;
        for (n, sups) in per_n {
            let mean = sups.iter().sum::<f64>() / sups.len() as f64;
            let var = sups.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                / (sups.len().max(2) - 1) as f64;
            writeln!(w, "{n},{mean},{}", var.sqrt())?;
        }
    }
    ctx.finish(&mut dir, Vec::new())
}

fn run_compare_dominance(ctx: &Ctx<'_>, removal_factor: f64) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let scn = ctx.scenario;
    if scn.model != Model::Rab {
        return Err(crate::config::ConfigError(
            "dominance comparison applies to boundary removal".into(),
        )
        .into());
    }
    let data = scn.build_rab()?;
    let mut heavier = data.clone();
    heavier.removal = match &data.removal {
        Schedule::LinearRate { rate } => Schedule::LinearRate {
            rate: rate * removal_factor,
        },
        Schedule::PiecewiseLinear { points } => Schedule::PiecewiseLinear {
            points: points
                .iter()
                .map(|(t, v)| (*t, v * removal_factor))
                .collect(),
        },
        Schedule::Power { coeff, exponent } => Schedule::Power {
            coeff: coeff * removal_factor,
            exponent: *exponent,
        },
        Schedule::CappedIdentity { .. } => {
            return Err(crate::config::ConfigError(
                "capped removal clocks cannot be scaled for dominance runs".into(),
            )
            .into())
        }
    };

    // Coupled particle pair; dominance is hard-asserted per event.
    let n = scn.simulation.particles[0];
    let snapshot_times = &scn.outputs.snapshot_times;
    let (base, dom) = simulate_coupled_rab(
        &data,
        &heavier,
        n,
        snapshot_times,
        ctx.seed,
        &SimOptions::checked(),
    )?;

    // Barrier-level dominance at every stored step.
    let (_, margin, step) = solver_cells(scn).remove(0);
    let opts = scn.solve_options();
    let run_base = solve(&data, margin, step, &opts)?;
    let run_heavy = solve(&heavier, margin, step, &opts)?;
    rab::assert_lower_dominance(&run_heavy, &run_base)?;

    {
        let mut w = dir.writer("dominance.csv")?;
        writeln!(w, "t,base_tail_excess_over_heavy_min,events_base,events_heavy")?;
        for (i, t) in run_base.times.iter().enumerate() {
            let excess = run_heavy.lower[i]
                .tail()
                .max_excess_over(&run_base.lower[i].tail())
                .unwrap();
            writeln!(
                w,
                "{t},{excess},{},{}",
                base.events.partition_point(|e| e.time <= *t),
                dom.events.partition_point(|e| e.time <= *t)
            )?;
        }
    }
    ctx.finish(&mut dir, Vec::new())
}

fn run_compare_cross(ctx: &Ctx<'_>) -> RunResult<()> {
    let mut dir = RunDir::create(ctx.out_dir, ctx.config_bytes, ctx.seed)?;
    let scn = ctx.scenario;
    let grid = scn.build_grid()?;
    let u0 = scn.build_density(&scn.u0, grid)?;

    let cells = solver_cells(scn);
    let (_, raq_margin, raq_step) = cells.first().unwrap().clone();
    let (_, rab_margin, rab_step) = cells.last().unwrap().clone();

    let raq_data = RaqData {
        u0: u0.clone(),
        q: QuantileCurve::ConstQ { level: 0.0 },
        horizon: scn.horizon,
    };
    let rab_data = RabData {
        u0,
        pi: SourceMeasure::from_atoms(AtomList::point(0.0)),
        injection: Schedule::zero(),
        removal: Schedule::LinearRate { rate: 1.0 },
        horizon: scn.horizon,
    };
    let opts = scn.solve_options();
    let raq_run = solve_raq(&raq_data, raq_margin, raq_step, &opts)?;
    let rab_run = solve(&rab_data, rab_margin, rab_step, &opts)?;

    let times = if scn.outputs.snapshot_times.is_empty() {
        vec![scn.horizon / 4.0, scn.horizon / 2.0, scn.horizon]
    } else {
        scn.outputs.snapshot_times.clone()
    };
    {
        let mut w = dir.writer("cross.csv")?;
        writeln!(w, "t,sup_dist,certificate_sum")?;
        for t in times {
            let (raq_mid, rab_mid) = match (raq_run.midpoint_at(t), rab_run.midpoint_at(t)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            let d = tail_sup_distance_exact(&raq_mid.tail(), &rab_mid.tail());
            let cert = raq_run.gap_bound_at(t).unwrap() + rab_run.gap_bound_at(t).unwrap();
            if d > cert + 1e-6 {
                return Err(RunError::Invariant(CoreError::SandwichViolation {
                    step: 0,
                    time: t,
                    excess: d - cert,
                    bound: cert,
                }));
            }
            writeln!(w, "{t},{d},{cert}")?;
        }
    }
    ctx.finish(&mut dir, Vec::new())
}

/// Full sweep: every solver cell plus the simulation grid, compared
/// against the finest-step cell's midpoint.
pub fn run_sweep(ctx: &Ctx<'_>) -> RunResult<()> {
    run_solve(ctx)?;
    if !ctx.scenario.outputs.snapshot_times.is_empty() {
        run_compare_hydro(ctx)?;
    }
    Ok(())
}
