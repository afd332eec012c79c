//! Numerical laboratory for one-dimensional heat flow with order-respecting
//! absorption: two-sided barrier solvers with gap certificates, exact
//! event-driven particle simulators, and diagnostics that cross-validate
//! the two.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod measure;
pub mod metrics;
pub mod particle;
pub mod rab;
pub mod raq;
pub mod schedule;

pub use error::{CoreError, Result, Warning};
pub use grid::{
    cut_extended, cut_interior, cut_left, cut_right, leq, leq_tails, r_left, r_right, CutPair,
    DensityGrid, Grid, TailFunction, TOL_ORDER_REL,
};
pub use kernel::{
    apply_kernel, inject, mild_solution_residual, smear_atoms, smear_removal, smear_source,
    InjectionSchedule, KernelMethod,
};
pub use measure::{
    slab_from_density, AtomList, RemovalEntry, RemovalMeasure, RemovalPayload, SourceMeasure,
};
pub use metrics::{levy_distance, tail_sup_distance, tail_sup_distance_exact, TailEval};
pub use particle::{
    simulate_coupled_rab, simulate_rab, simulate_raq, EmpiricalTail, EmpiricalTrace,
    RemovalEventRec, SimOptions,
};
pub use rab::{gap_bound_rab, leak_factor, lower_step, solve, upper_step, BarrierRun, RabData,
    RemovalDetail, SolveOptions};
pub use raq::{gap_bound_raq, lower_step_raq, q_bounds, solve_raq, upper_step_raq, RaqBarrierRun,
    RaqData};
pub use schedule::{difference_is_nondecreasing, QuantileCurve, Schedule};

/// Deterministic per-replica and per-particle seed derivation.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 step on the combined value.
    let mut z = base ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
