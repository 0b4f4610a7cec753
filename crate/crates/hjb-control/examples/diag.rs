use hjb_control::action_cost::ActionCost;
use hjb_control::baselines::{uniform_action_grid, value_iteration, GridPolicy, ValueIterationOptions};
use hjb_control::controller::{rollout, HjbPolicy, Policy, RolloutOptions};
use hjb_control::diffnet::load_checkpoint;
use hjb_control::dynamics::ControlAffineSystem;
use hjb_control::experiment::lqr_baseline;
use hjb_control::trainer::sample_states;

struct Row { j: f64, success: bool, max_u: f64 }

fn rows(policy: &dyn Policy, system: &ControlAffineSystem, cost: &ActionCost,
        starts: &[Vec<f64>], horizon: f64, rho: f64) -> Vec<Row> {
    starts.iter().map(|x0| {
        let r = rollout(policy, system, cost, x0, horizon, rho, RolloutOptions::default()).unwrap();
        let max_u = r.trajectory.actions.iter().map(|u| u[0].abs()).fold(0.0, f64::max);
        Row { j: r.j_discounted, success: r.success, max_u }
    }).collect()
}

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let (net, meta) = load_checkpoint(std::path::Path::new(&path)).unwrap();
    let system = ControlAffineSystem::pendulum();
    let cost = ActionCost::atan_act_scaled(2.5, 1).unwrap();
    let rho = meta.rho;
    println!("rho = {rho}");

    let t0 = std::time::Instant::now();
    let actions = uniform_action_grid(2.5, 101, 1e-3);
    let grid = value_iteration(&system, &cost, &[201, 201], &actions, rho, 0.02,
        ValueIterationOptions::default()).unwrap();
    println!("oracle: {} sweeps, max_update {:.2e}, {:?}", grid.sweeps, grid.max_update, t0.elapsed());

    let starts = sample_states(&system, 300, 42);
    let hjb = HjbPolicy::new(&net, cost.clone(), system.clone()).unwrap();
    let gridp = GridPolicy::new(grid, system.clone(), &cost, actions).unwrap();
    let clip = 2.5 * (1.0 - 1e-3);
    let (lqr, _) = lqr_baseline(&system, &cost, rho, Some(clip)).unwrap();

    let t0 = std::time::Instant::now();
    let hjb_rows = rows(&hjb, &system, &cost, &starts, 10.0, rho);
    println!("hjb rollouts {:?}", t0.elapsed());
    let grid_rows = rows(&gridp, &system, &cost, &starts, 10.0, rho);
    let lqr_rows = rows(&lqr, &system, &cost, &starts, 10.0, rho);

    let rate = |rs: &[Row]| rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64;
    let mean = |rs: &[Row]| rs.iter().map(|r| r.j).sum::<f64>() / rs.len() as f64;
    let maxu = |rs: &[Row]| rs.iter().map(|r| r.max_u).fold(0.0, f64::max);

    println!("success: hjb {:.3}  grid {:.3}  lqr {:.3}", rate(&hjb_rows), rate(&grid_rows), rate(&lqr_rows));
    println!("mean J : hjb {:.3}  grid {:.3}  lqr {:.3}", mean(&hjb_rows), mean(&grid_rows), mean(&lqr_rows));
    println!("max |u|: hjb {:.6}  grid {:.6}  lqr {:.6} (limit 2.5)", maxu(&hjb_rows), maxu(&grid_rows), maxu(&lqr_rows));
    println!("mean-J gap vs oracle: {:.4}", (mean(&hjb_rows) - mean(&grid_rows)).abs() / mean(&grid_rows));

    // swing-up from hanging
    let r = rollout(&hjb, &system, &cost, &[std::f64::consts::PI, 0.0], 10.0, rho, RolloutOptions::default()).unwrap();
    println!("swing-up from [pi, 0]: success {}", r.success);
}
