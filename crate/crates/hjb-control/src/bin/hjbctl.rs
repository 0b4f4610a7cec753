//! Command-line front end for training, evaluating and comparing HJB
//! feedback controllers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training divergence,
//! 4 convergence failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hjb_control::baselines::{
    uniform_action_grid, value_iteration, ValueGrid, ValueIterationOptions,
};
use hjb_control::config::{ExperimentConfig, Fig1SweepConfig};
use hjb_control::controller::evaluate;
use hjb_control::diffnet::{load_checkpoint, save_checkpoint};
use hjb_control::error::{Error, Result};
use hjb_control::experiment::{
    compare_summaries, compare_value_to_grid, export_value_csv, fig1_sweep, policy_from_files,
    read_eval_csv, run_experiment, write_fig1_csvs, write_summary,
};
use hjb_control::trainer::{train, TrainReport};

#[derive(Parser)]
#[command(name = "hjbctl", about = "HJB optimal feedback control experiments", version)]
struct Cli {
    /// Cap on worker threads for intra-stage parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a value network on a config's system and cost.
    Train(TrainArgs),
    /// Evaluate a checkpointed controller over sampled starts.
    Eval(EvalArgs),
    /// Compute a grid value-iteration oracle.
    Oracle(OracleArgs),
    /// Export (x..., V, Vx...) of a checkpoint over a grid.
    ExportValue(ExportArgs),
    /// Compare two evaluation CSVs, or a checkpoint against an oracle grid.
    Compare(CompareArgs),
    /// Run the full experiment pipeline described by a config.
    Run(RunArgs),
    /// Scan the 1D quadratic-value penalty landscape.
    Fig1Sweep(Fig1Args),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's system name.
    #[arg(long)]
    system: Option<String>,
    /// Override the config's cost id.
    #[arg(long)]
    cost: Option<String>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training report CSV (streamed while training).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Resume from a checkpoint: load parameters and continue the
    /// curriculum from the checkpointed rho.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 300)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Horizon in seconds.
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-start trajectory CSVs (t, x.., u.., c, J) here.
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
    /// How many trajectories to dump.
    #[arg(long, default_value_t = 10)]
    dump_count: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid spec like `2001` or `201x201`.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    actions: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Grid spec like `101` or `101x101`.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// First evaluation CSV.
    #[arg(long, requires = "b")]
    a: Option<PathBuf>,
    /// Second evaluation CSV (the reference).
    #[arg(long)]
    b: Option<PathBuf>,
    /// Checkpoint to compare against an oracle grid.
    #[arg(long, requires_all = ["config", "grid_file"])]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid_file: Option<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Fig1Args {
    #[arg(long)]
    out_dir: PathBuf,
    /// Sweep parameters from a config's [fig1] table (flags override).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    thetas: Option<usize>,
    /// Comma-separated penalty weights.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated discount factors for the root-trend CSV.
    #[arg(long)]
    rhos: Option<String>,
}

fn parse_grid_spec(spec: &str, dims: usize) -> Result<Vec<usize>> {
    let parts: Vec<usize> = spec
        .split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid spec '{spec}'")))
        })
        .collect::<Result<_>>()?;
    if parts.len() == 1 && dims > 1 {
        return Ok(vec![parts[0]; dims]);
    }
    if parts.len() != dims {
        return Err(Error::Config(format!(
            "grid spec '{spec}' has {} entries for a {dims}-dimensional system",
            parts.len()
        )));
    }
    Ok(parts)
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{p}' in list")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool may already be initialized.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    match cli.command {
        Command::Train(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(system) = args.system {
                cfg.system.name = system;
            }
            if let Some(cost) = args.cost {
                cfg.cost.id = cost;
            }
            cfg.validate()?;
            let system = cfg.system.build()?;
            let cost = cfg.cost.build(&system)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = cfg.seed;

            let mut net = match &args.resume {
                Some(path) => {
                    let (net, meta) = load_checkpoint(path)?;
                    if meta.rho < train_cfg.rho_init {
                        train_cfg.rho_init = meta.rho.max(train_cfg.rho_final * 1.0001);
                    }
                    net
                }
                None => cfg.network.build(&system, cfg.seed)?,
            };

            let mut report_file = match &args.report {
                Some(path) => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
                    writeln!(f, "{}", TrainReport::csv_header())?;
                    Some(f)
                }
                None => None,
            };
            let report = train(&mut net, &system, &cost, &train_cfg, |rec| {
                if let Some(f) = report_file.as_mut() {
                    let _ = writeln!(f, "{}", TrainReport::csv_line(rec));
                }
                if rec.epoch % 100 == 0 {
                    eprintln!(
                        "epoch {:>6}  rho {:>9.4}  mean|res| {:.6}",
                        rec.epoch, rec.rho, rec.mean_abs_residual
                    );
                }
            })?;
            save_checkpoint(&args.out, &net, report.final_rho)?;
            println!(
                "trained to rho = {} in {} epochs (converged: {}); checkpoint: {}",
                report.final_rho,
                report.records.len(),
                report.converged,
                args.out.display()
            );
            Ok(())
        }

        Command::Eval(args) => {
            let (policy, cfg, rho_ckpt) = policy_from_files(&args.config, &args.ckpt)?;
            let rho_eval = cfg.eval.rho_eval.unwrap_or(rho_ckpt);
            let summary = evaluate(
                &policy,
                &policy.system,
                &policy.cost,
                args.starts,
                args.seed,
                args.horizon,
                rho_eval,
            )?;
            write_summary(&summary, &args.out)?;
            if let Some(dir) = &args.dump_trajectories {
                std::fs::create_dir_all(dir)?;
                for rec in summary.records.iter().take(args.dump_count) {
                    let r = hjb_control::controller::rollout(
                        &policy,
                        &policy.system,
                        &policy.cost,
                        &rec.x0,
                        args.horizon,
                        rho_eval,
                        Default::default(),
                    )?;
                    let file = std::io::BufWriter::new(std::fs::File::create(
                        dir.join(format!("trajectory_{:03}.csv", rec.start_idx)),
                    )?);
                    r.trajectory.write_csv(file)?;
                }
            }
            println!(
                "starts {}  mean J {:.4}  success rate {:.3}  -> {}",
                summary.records.len(),
                summary.mean_j_discounted,
                summary.success_rate,
                args.out.display()
            );
            Ok(())
        }

        Command::Oracle(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let system = cfg.system.build()?;
            let cost = cfg.cost.build(&system)?;
            let points = parse_grid_spec(&args.grid, system.state_dim())?;
            let o = &cfg.oracle;
            let n_actions = args.actions.unwrap_or(o.n_actions);
            let actions = match cost.action_limit() {
                Some(limit) => uniform_action_grid(limit, n_actions, o.action_inset),
                None => uniform_action_grid(o.action_range, n_actions, 0.0),
            };
            let rho = args.rho.unwrap_or(cfg.train.rho_final);
            let dt = args.dt.unwrap_or(o.dt);
            let grid = value_iteration(
                &system,
                &cost,
                &points,
                &actions,
                rho,
                dt,
                ValueIterationOptions::default(),
            )?;
            grid.save(&args.out)?;
            println!(
                "oracle converged in {} sweeps (max update {:.2e}) -> {}",
                grid.sweeps,
                grid.max_update,
                args.out.display()
            );
            Ok(())
        }

        Command::ExportValue(args) => {
            let (policy, _, _) = policy_from_files(&args.config, &args.ckpt)?;
            let points = parse_grid_spec(&args.grid, policy.system.state_dim())?;
            export_value_csv(&policy.value, &policy.system, &points, &args.out)?;
            println!("value grid -> {}", args.out.display());
            Ok(())
        }

        Command::Compare(args) => {
            let report = if let (Some(a), Some(b)) = (&args.a, &args.b) {
                let ra = read_eval_csv(a)?;
                let rb = read_eval_csv(b)?;
                serde_json::to_string_pretty(&compare_summaries(&ra, &rb)?).unwrap()
            } else if let (Some(ckpt), Some(config), Some(grid)) =
                (&args.ckpt, &args.config, &args.grid_file)
            {
                let (policy, _, _) = policy_from_files(config, ckpt)?;
                let grid = ValueGrid::load(grid)?;
                serde_json::to_string_pretty(&compare_value_to_grid(&policy.value, &grid))
                    .unwrap()
            } else {
                return Err(Error::Config(
                    "compare needs either --a/--b CSVs or --ckpt/--config/--grid-file".into(),
                ));
            };
            std::fs::write(&args.out, &report)?;
            println!("{report}");
            Ok(())
        }

        Command::Run(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let bundle = run_experiment(&cfg, &args.out_dir)?;
            println!(
                "run '{}' complete: mean J {:.4}, success rate {:.3}, bundle in {}",
                bundle.manifest.name,
                bundle.eval.mean_j_discounted,
                bundle.eval.success_rate,
                args.out_dir.display()
            );
            if let Some(cmp) = &bundle.comparison {
                println!(
                    "vs LQR: mean relative gap {:.4}, success delta {:.3}",
                    cmp.mean_rel_gap, cmp.success_delta
                );
            }
            Ok(())
        }

        Command::Fig1Sweep(args) => {
            let mut cfg = match &args.config {
                Some(path) => Fig1SweepConfig::load(path)?,
                None => Fig1SweepConfig::default(),
            };
            if let Some(n) = args.thetas {
                cfg.n_thetas = n;
            }
            if let Some(l) = &args.lambdas {
                cfg.lambdas = parse_list(l)?;
            }
            if let Some(r) = args.rho {
                cfg.rho = r;
            }
            if let Some(r) = &args.rhos {
                cfg.rhos_for_roots = parse_list(r)?;
            }
            let data = fig1_sweep(
                (cfg.theta_min, cfg.theta_max, cfg.n_thetas),
                &cfg.lambdas,
                cfg.rho,
                &cfg.rhos_for_roots,
            )?;
            write_fig1_csvs(&data, &args.out_dir)?;
            println!("sweep CSVs -> {}", args.out_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
