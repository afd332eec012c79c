//! Named scenario presets, one per shipped guarantee, runnable directly
//! through the subcommands.

use crate::config::*;

pub fn preset_names() -> Vec<&'static str> {
    vec![
        "rab-basic",
        "raq-basic",
        "rab-hydro",
        "rab-coupled",
        "cross-model",
        "rab-selfconv",
        "raq-selfconv",
        "rab-diagnostics",
    ]
}

pub fn preset(name: &str) -> Option<Scenario> {
    let rab_grid = GridSpec {
        x_min: -10.0,
        x_max: 24.0,
        n_cells: 4096,
    };
    let unit_slab = DensitySpec::Uniform { a: 0.0, b: 1.0 };
    let origin_atom = SourceSpec {
        atoms: vec![(0.0, 1.0)],
        density: None,
    };
    let linear = ScheduleSpec::Linear { rate: 1.0 };
    let scenario = |name: &str, model: Model| Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        model,
        grid: rab_grid.clone(),
        u0: unit_slab.clone(),
        pi: Some(origin_atom.clone()),
        injection: Some(linear.clone()),
        removal: Some(linear.clone()),
        q: None,
        horizon: 1.0,
        solver: SolverSpec::default(),
        simulation: SimulationSpec::default(),
        outputs: OutputSpec {
            snapshot_times: vec![0.5],
            ..Default::default()
        },
        compare: None,
    };
    match name {
        "rab-basic" => {
            let mut s = scenario("rab-basic", Model::Rab);
            s.solver.margins = vec![0.05];
            s.solver.steps = vec![1e-3];
            Some(s)
        }
        "raq-basic" => {
            let mut s = scenario("raq-basic", Model::Raq);
            s.grid = GridSpec {
                x_min: -7.0,
                x_max: 8.0,
                n_cells: 4096,
            };
            s.pi = None;
            s.injection = None;
            s.removal = None;
            s.q = Some(QuantileSpec::ConstQ { level: 0.5 });
            s.horizon = 0.6;
            s.solver.margins = vec![0.1];
            s.solver.steps = vec![2e-5];
            s.solver.stride = 1000;
            s.solver.removal_detail = DetailSpec::Summary;
            s.outputs.snapshot_times = vec![0.3, 0.6];
            Some(s)
        }
        "rab-hydro" => {
            let mut s = scenario("rab-hydro", Model::Rab);
            s.horizon = 0.5;
            s.solver.stride = 50;
            s.solver.removal_detail = DetailSpec::Summary;
            s.simulation = SimulationSpec {
                particles: vec![1000, 4000, 16000],
                replicas: 20,
                seed: 2024,
            };
            s.compare = Some(CompareSpec::Hydro);
            s.outputs.emit_plots = true;
            Some(s)
        }
        "rab-coupled" => {
            let mut s = scenario("rab-coupled", Model::Rab);
            s.grid = GridSpec {
                x_min: -9.0,
                x_max: 14.0,
                n_cells: 2048,
            };
            s.horizon = 0.5;
            s.solver.removal_detail = DetailSpec::Summary;
            s.simulation = SimulationSpec {
                particles: vec![2000],
                replicas: 1,
                seed: 4242,
            };
            s.compare = Some(CompareSpec::Dominance {
                removal_factor: 2.0,
            });
            s.outputs.snapshot_times = vec![0.1, 0.25, 0.5];
            Some(s)
        }
        "cross-model" => {
            let mut s = scenario("cross-model", Model::Raq);
            s.grid = GridSpec {
                x_min: -8.5,
                x_max: 2.5,
                n_cells: 4096,
            };
            s.pi = None;
            s.injection = None;
            s.removal = None;
            s.q = Some(QuantileSpec::ConstQ { level: 0.0 });
            s.horizon = 0.8;
            // First cell drives the quantile model, last the boundary one.
            s.solver.margins = vec![0.06, 0.15];
            s.solver.steps = vec![1.6e-6, 1e-4];
            s.solver.stride = 125_000;
            s.solver.removal_detail = DetailSpec::Summary;
            s.solver.kernel = KernelSpec::Direct;
            s.compare = Some(CompareSpec::CrossModel);
            s.outputs.snapshot_times = vec![0.2, 0.4, 0.8];
            Some(s)
        }
        "rab-selfconv" => {
            let mut s = scenario("rab-selfconv", Model::Rab);
            s.grid = GridSpec {
                x_min: -9.0,
                x_max: 14.0,
                n_cells: 2048,
            };
            s.horizon = 0.5;
            s.solver.steps = vec![8e-3, 4e-3, 2e-3, 1e-3];
            s.solver.stride = 100;
            s.solver.removal_detail = DetailSpec::Summary;
            s.outputs.emit_plots = true;
            Some(s)
        }
        "raq-selfconv" => {
            let mut s = scenario("raq-selfconv", Model::Raq);
            s.grid = GridSpec {
                x_min: -7.0,
                x_max: 8.0,
                n_cells: 4096,
            };
            s.pi = None;
            s.injection = None;
            s.removal = None;
            s.q = Some(QuantileSpec::ConstQ { level: 0.5 });
            s.horizon = 0.5;
            s.solver.margins = vec![0.12];
            s.solver.steps = vec![4e-5, 2e-5, 1e-5, 5e-6];
            s.solver.stride = 12_500;
            s.solver.removal_detail = DetailSpec::Summary;
            s.outputs.emit_plots = true;
            Some(s)
        }
        "rab-diagnostics" => {
            let mut s = scenario("rab-diagnostics", Model::Rab);
            s.outputs.snapshot_times = vec![0.25, 0.5, 1.0];
            Some(s)
        }
        _ => None,
    }
}
