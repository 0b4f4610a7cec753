use hjb_control::action_cost::ActionCost;
use hjb_control::controller::{rollout, HjbPolicy, RolloutOptions};
use hjb_control::diffnet::load_checkpoint;
use hjb_control::dynamics::ControlAffineSystem;
use hjb_control::experiment::lqr_baseline;
use hjb_control::trainer::sample_states;

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let (net, meta) = load_checkpoint(std::path::Path::new(&path)).unwrap();
    let system = ControlAffineSystem::flexible_cartpole();
    let cost = ActionCost::linear(vec![1.0]).unwrap();
    let rho = meta.rho;
    let policy = HjbPolicy::new(&net, cost.clone(), system.clone()).unwrap();
    let (lqr, _) = lqr_baseline(&system, &cost, rho, None).unwrap();
    let starts = sample_states(&system, 300, 11);
    let opts = RolloutOptions::default();
    let mut stats = vec![(0.0f64, 0usize); 2];
    let mut fallback_violations = 0;
    for x0 in &starts {
        let rh = rollout(&policy, &system, &cost, x0, 10.0, rho, opts).unwrap();
        let rl = rollout(&lqr, &system, &cost, x0, 10.0, rho, opts).unwrap();
        stats[0].0 += rh.j_discounted; stats[0].1 += rh.success as usize;
        stats[1].0 += rl.j_discounted; stats[1].1 += rl.success as usize;
        if rl.success && !rh.success { fallback_violations += 1; }
    }
    let n = starts.len() as f64;
    println!("HJB: mean J {:.4}, success {:.3}", stats[0].0 / n, stats[0].1 as f64 / n);
    println!("LQR: mean J {:.4}, success {:.3}", stats[1].0 / n, stats[1].1 as f64 / n);
    println!("mean-J gap {:.4}, fallback violations {}", (stats[0].0 - stats[1].0).abs() / stats[1].0, fallback_violations);
}
