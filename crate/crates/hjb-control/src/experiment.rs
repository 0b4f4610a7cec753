//! Full experiment pipeline: train, evaluate, export, compare, manifest.
//!
//! `run_experiment` chains the stages behind one config and writes a
//! reproducible artifact bundle. Comparison helpers join cost distributions
//! or value grids from two sources and emit aggregate gap statistics. The
//! penalty-landscape sweep reproduces the quadratic-value diagnostics of the
//! one-dimensional system analytically.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::action_cost::ActionCost;
use crate::baselines::{
    analytic_theta_1d, care_solve, lqr_policy, uniform_action_grid, value_iteration,
    ValueGrid, ValueIterationOptions,
};
use crate::config::{fnv1a, ExperimentConfig};
use crate::controller::{evaluate, EvaluationSummary, HjbPolicy, StartRecord};
use crate::diffnet::{load_checkpoint, save_checkpoint, DifferentialNetwork};
use crate::dynamics::{ControlAffineSystem, Termination};
use crate::error::{Error, Result};
use crate::trainer::{train, TrainReport};
use crate::value::ValueFunction;

/// Relative inset used when a clipped baseline runs under a barrier cost, so
/// its clamped actions keep finite cost.
pub const CLIP_INSET: f64 = 1e-3;

/// Gap statistics between two evaluations joined on shared starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapStats {
    pub n: usize,
    /// Mean of (J_a - J_b) / max(|J_b|, eps) over finite pairs.
    pub mean_rel_gap: f64,
    pub max_abs_gap: f64,
    pub mean_abs_gap: f64,
    pub success_rate_a: f64,
    pub success_rate_b: f64,
    pub success_delta: f64,
}

/// Joins two evaluations on `start_idx` (the starts must coincide).
pub fn compare_summaries(a: &[StartRecord], b: &[StartRecord]) -> Result<GapStats> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "evaluations have {} vs {} starts",
            a.len(),
            b.len()
        )));
    }
    let mut n = 0usize;
    let mut rel_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut max_abs: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        if ra.start_idx != rb.start_idx {
            return Err(Error::InvalidInput("start indices do not line up".into()));
        }
        for (xa, xb) in ra.x0.iter().zip(&rb.x0) {
            if (xa - xb).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "start {} differs between evaluations: {:?} vs {:?}",
                    ra.start_idx, ra.x0, rb.x0
                )));
            }
        }
        if ra.j_discounted.is_finite() && rb.j_discounted.is_finite() {
            let gap = ra.j_discounted - rb.j_discounted;
            rel_sum += gap / rb.j_discounted.abs().max(1e-9);
            abs_sum += gap.abs();
            max_abs = max_abs.max(gap.abs());
            n += 1;
        }
    }
    let rate = |recs: &[StartRecord]| {
        recs.iter().filter(|r| r.success).count() as f64 / recs.len().max(1) as f64
    };
    let (sa, sb) = (rate(a), rate(b));
    Ok(GapStats {
        n,
        mean_rel_gap: rel_sum / n.max(1) as f64,
        max_abs_gap: max_abs,
        mean_abs_gap: abs_sum / n.max(1) as f64,
        success_rate_a: sa,
        success_rate_b: sb,
        success_delta: sa - sb,
    })
}

/// Per-point statistics of |V(x) - V_grid(x)| over the oracle grid nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueGapStats {
    pub n: usize,
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Gap relative to the grid's value range.
    pub mean_rel: f64,
    pub max_rel: f64,
}

pub fn compare_value_to_grid<V: ValueFunction>(vf: &V, grid: &ValueGrid) -> ValueGapStats {
    let n = grid.cell_count();
    let mut coords = vec![0usize; grid.axes.len()];
    let (mut sum_abs, mut max_abs) = (0.0, 0.0_f64);
    let v_lo = grid.table.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_hi = grid.table.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (v_hi - v_lo).max(1e-12);
    for cell in 0..n {
        let mut c = cell;
        for d in (0..grid.axes.len()).rev() {
            coords[d] = c % grid.axes[d].n;
            c /= grid.axes[d].n;
        }
        let x: Vec<f64> = coords
            .iter()
            .zip(&grid.axes)
            .map(|(i, a)| {
                if a.periodic {
                    a.lo + (a.hi - a.lo) * *i as f64 / a.n as f64
                } else {
                    a.lo + (a.hi - a.lo) * *i as f64 / (a.n - 1) as f64
                }
            })
            .collect();
        let gap = (vf.value(&x) - grid.table[cell]).abs();
        sum_abs += gap;
        max_abs = max_abs.max(gap);
    }
    ValueGapStats {
        n,
        mean_abs: sum_abs / n as f64,
        max_abs,
        mean_rel: sum_abs / n as f64 / range,
        max_rel: max_abs / range,
    }
}

/// Writes `(x..., V, Vx...)` over an inclusive grid covering the domain box.
pub fn export_value_csv<V: ValueFunction>(
    vf: &V,
    system: &ControlAffineSystem,
    points_per_dim: &[usize],
    path: &Path,
) -> Result<()> {
    let d = system.state_dim();
    if points_per_dim.len() != d || points_per_dim.iter().any(|n| *n < 2) {
        return Err(Error::InvalidInput(format!(
            "need {d} per-dimension point counts >= 2, got {points_per_dim:?}"
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("V".into());
    header.extend((0..d).map(|i| format!("Vx{i}")));
    writeln!(file, "{}", header.join(","))?;

    let total: usize = points_per_dim.iter().product();
    let mut idx = vec![0usize; d];
    for cell in 0..total {
        let mut c = cell;
        for dim in (0..d).rev() {
            idx[dim] = c % points_per_dim[dim];
            c /= points_per_dim[dim];
        }
        let x: Vec<f64> = idx
            .iter()
            .zip(system.domain())
            .zip(points_per_dim)
            .map(|((i, (lo, hi)), n)| lo + (hi - lo) * *i as f64 / (*n - 1) as f64)
            .collect();
        let (v, grad) = vf.value_grad(&x);
        let mut row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{v}"));
        row.extend(grad.iter().map(|g| format!("{g}")));
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads back an evaluation CSV written by [`EvaluationSummary::write_csv`].
pub fn read_eval_csv(path: &Path) -> Result<Vec<StartRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty evaluation CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_x = cols.iter().filter(|c| c.starts_with("x0_")).count();
    if n_x == 0 || cols.first() != Some(&"start_idx") {
        return Err(Error::Format("not an evaluation CSV".into()));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n_x + 5 {
            return Err(Error::Format(format!("bad field count on line {}", lineno + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number '{s}' on line {}", lineno + 2)))
        };
        let x0 = f[1..1 + n_x].iter().map(|s| parse(s)).collect::<Result<Vec<f64>>>()?;
        records.push(StartRecord {
            start_idx: f[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad index on line {}", lineno + 2)))?,
            x0,
            j_discounted: parse(f[1 + n_x])?,
            j_undiscounted: parse(f[2 + n_x])?,
            success: f[3 + n_x] == "1",
            exit_flag: match f[4 + n_x] {
                "horizon" => Termination::ReachedHorizon,
                "left_domain" => Termination::LeftDomain,
                _ => Termination::Fault,
            },
            final_state: vec![],
        });
    }
    Ok(records)
}

/// Discount-adjusted LQR for the system's quadratic expansion, with the
/// action-cost curvature mapped through the convention bridge
/// `R = R_table / 2 = 1 / (2 policy'(0))`.
pub fn lqr_baseline(
    system: &ControlAffineSystem,
    cost: &ActionCost,
    rho: f64,
    clip: Option<f64>,
) -> Result<(crate::controller::LqrPolicy, crate::baselines::RiccatiSolution)> {
    let n = system.state_dim();
    let m = system.action_dim();
    let (a_flat, b_flat) = system.linearized_dynamics();
    let a = DMatrix::from_row_slice(n, n, &a_flat);
    let b = DMatrix::from_row_slice(n, m, &b_flat);
    let q = DMatrix::from_diagonal(&DVector::from_vec(system.state_cost_quadratic_diag()));
    let curv = cost.policy_deriv(&vec![0.0; m])?;
    let r = DMatrix::from_diagonal(&DVector::from_vec(
        curv.iter().map(|d| 1.0 / (2.0 * d)).collect(),
    ));
    let sol = care_solve(&a, &b, &q, &r, rho)?;
    Ok((lqr_policy(&sol, clip), sol))
}

/// Run manifest enabling bit-reproducible reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub final_rho: Option<f64>,
    pub rho_eval: Option<f64>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: u64,
    pub fnv1a: String,
}

fn manifest_file(dir: &Path, name: &str) -> Result<ManifestFile> {
    let bytes = std::fs::read(dir.join(name))?;
    Ok(ManifestFile {
        name: name.to_string(),
        bytes: bytes.len() as u64,
        fnv1a: format!("{:016x}", fnv1a(&bytes)),
    })
}

/// Artifact bundle produced by [`run_experiment`].
#[derive(Debug)]
pub struct RunBundle {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
    pub report: TrainReport,
    pub eval: EvaluationSummary,
    pub baseline_eval: Option<EvaluationSummary>,
    pub comparison: Option<GapStats>,
    pub oracle_gap: Option<ValueGapStats>,
}

/// Executes train -> evaluate -> value export -> baseline comparison and
/// writes checkpoint, CSVs, grid and manifest into `out_dir`. On a stage
/// failure a partial bundle stays behind with a failure manifest.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunBundle> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;

    match run_stages(cfg, out_dir) {
        Ok(bundle) => Ok(bundle),
        Err((stage, err)) => {
            let manifest = Manifest {
                name: cfg.name.clone(),
                status: "failed".into(),
                failed_stage: Some(stage.to_string()),
                error: Some(err.to_string()),
                config_hash: format!("{:016x}", cfg.content_hash()),
                seed: cfg.seed,
                version: env!("CARGO_PKG_VERSION").into(),
                final_rho: None,
                rho_eval: None,
                files: Vec::new(),
            };
            let _ = std::fs::write(
                out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest).unwrap(),
            );
            Err(err)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, out_dir: &Path) -> std::result::Result<RunBundle, (&'static str, Error)> {
    let stage = |name: &'static str| move |e: Error| (name, e);

    let system = cfg.system.build().map_err(stage("config"))?;
    let cost = cfg.cost.build(&system).map_err(stage("config"))?;
    let mut net = cfg.network.build(&system, cfg.seed).map_err(stage("config"))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;

    // Train with the report streamed to CSV.
    let report_path = out_dir.join("train_report.csv");
    let report = {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&report_path).map_err(|e| ("train", e.into()))?,
        );
        writeln!(file, "{}", TrainReport::csv_header()).map_err(|e| ("train", Error::from(e)))?;
        let mut write_err = None;
        let report = train(&mut net, &system, &cost, &train_cfg, |rec| {
            if let Err(e) = writeln!(file, "{}", TrainReport::csv_line(rec)) {
                write_err.get_or_insert(e);
            }
        })
        .map_err(stage("train"))?;
        if let Some(e) = write_err {
            return Err(("train", e.into()));
        }
        report
    };

    let ckpt_path = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt_path, &net, report.final_rho).map_err(stage("checkpoint"))?;

    let rho_eval = cfg.eval.rho_eval.unwrap_or(report.final_rho);
    let policy =
        HjbPolicy::new(&net, cost.clone(), system.clone()).map_err(stage("eval"))?;
    let summary = evaluate(
        &policy,
        &system,
        &cost,
        cfg.eval.n_starts,
        cfg.seed,
        cfg.eval.horizon_s,
        rho_eval,
    )
    .map_err(stage("eval"))?;
    let eval_path = out_dir.join("eval.csv");
    write_summary(&summary, &eval_path).map_err(stage("eval"))?;

    // Value-grid export for plotting.
    let points: Vec<usize> = match system.state_dim() {
        1 => vec![101],
        2 => vec![101, 101],
        d => vec![5; d],
    };
    export_value_csv(&&net, &system, &points, &out_dir.join("value_grid.csv"))
        .map_err(stage("export"))?;

    // LQR baseline under the same evaluation protocol and cost.
    let clip = cost.action_limit().map(|l| l * (1.0 - CLIP_INSET));
    let mut baseline_eval = None;
    let mut comparison = None;
    if let Ok((lqr, _)) = lqr_baseline(&system, &cost, rho_eval, clip) {
        let lqr_summary = evaluate(
            &lqr,
            &system,
            &cost,
            cfg.eval.n_starts,
            cfg.seed,
            cfg.eval.horizon_s,
            rho_eval,
        )
        .map_err(stage("baseline"))?;
        write_summary(&lqr_summary, &out_dir.join("lqr_eval.csv")).map_err(stage("baseline"))?;
        comparison =
            Some(compare_summaries(&summary.records, &lqr_summary.records)
                .map_err(stage("compare"))?);
        baseline_eval = Some(lqr_summary);
    }

    // Grid oracle for low-dimensional systems.
    let mut oracle_gap = None;
    if system.state_dim() <= 2 {
        let o = &cfg.oracle;
        let actions = match cost.action_limit() {
            Some(limit) => uniform_action_grid(limit, o.n_actions, o.action_inset),
            None => uniform_action_grid(o.action_range, o.n_actions, 0.0),
        };
        let grid = value_iteration(
            &system,
            &cost,
            &vec![o.grid_points; system.state_dim()],
            &actions,
            rho_eval,
            o.dt,
            ValueIterationOptions::default(),
        )
        .map_err(stage("oracle"))?;
        grid.save(&out_dir.join("oracle_grid.bin")).map_err(stage("oracle"))?;
        oracle_gap = Some(compare_value_to_grid(&&net, &grid));
    }

    if let Some(cmp) = &comparison {
        std::fs::write(
            out_dir.join("compare.json"),
            serde_json::to_string_pretty(cmp).unwrap(),
        )
        .map_err(|e| ("compare", Error::from(e)))?;
    }

    let mut files = Vec::new();
    for name in [
        "train_report.csv",
        "checkpoint.bin",
        "eval.csv",
        "value_grid.csv",
        "lqr_eval.csv",
        "compare.json",
        "oracle_grid.bin",
    ] {
        if out_dir.join(name).exists() {
            files.push(manifest_file(out_dir, name).map_err(|e| ("manifest", e))?);
        }
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        status: "success".into(),
        failed_stage: None,
        error: None,
        config_hash: format!("{:016x}", cfg.content_hash()),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        final_rho: Some(report.final_rho),
        rho_eval: Some(rho_eval),
        files,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .map_err(|e| ("manifest", Error::from(e)))?;

    Ok(RunBundle {
        manifest,
        out_dir: out_dir.to_path_buf(),
        report,
        eval: summary,
        baseline_eval,
        comparison,
        oracle_gap,
    })
}

pub fn write_summary(summary: &EvaluationSummary, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    summary.write_csv(&mut file)?;
    Ok(())
}

/// Loads a checkpoint and rebuilds the policy described by a config.
pub fn policy_from_files(
    config_path: &Path,
    ckpt_path: &Path,
) -> Result<(HjbPolicy<DifferentialNetwork>, ExperimentConfig, f64)> {
    let cfg = ExperimentConfig::load(config_path)?;
    let system = cfg.system.build()?;
    let cost = cfg.cost.build(&system)?;
    let (net, meta) = load_checkpoint(ckpt_path)?;
    if net.input_dim() != system.state_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} state dimensions, system '{}' has {}",
            net.input_dim(),
            system.name(),
            system.state_dim()
        )));
    }
    let policy = HjbPolicy::new(net, cost, system)?;
    Ok((policy, cfg, meta.rho))
}

/// Penalty-landscape scan of the 1D quadratic-value problem.
///
/// For `V = theta x^2` the loss is the mean |HJB residual| over an x-grid
/// plus `lambda` times the boundary penalty at the two domain faces; the
/// gradient column holds central differences over the theta grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig1Data {
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `loss[l][t]` for lambda index `l`, theta index `t`.
    pub loss: Vec<Vec<f64>>,
    pub grad: Vec<Vec<f64>>,
    pub rhos: Vec<f64>,
    /// `(theta_plus, theta_minus)` per rho.
    pub roots: Vec<(f64, f64)>,
}

pub fn fig1_sweep(
    thetas: (f64, f64, usize),
    lambdas: &[f64],
    rho: f64,
    rhos_for_roots: &[f64],
) -> Result<Fig1Data> {
    let system = ControlAffineSystem::linear_1d();
    let cost = ActionCost::linear(vec![1.0]).unwrap();
    let (lo, hi, n) = thetas;
    if n < 3 {
        return Err(Error::InvalidInput("theta grid needs at least 3 points".into()));
    }
    let theta_grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let x_grid: Vec<Vec<f64>> =
        (0..201).map(|k| vec![-5.0 + 10.0 * k as f64 / 200.0]).collect();
    let faces = [vec![5.0], vec![-5.0]];

    let mut loss = Vec::with_capacity(lambdas.len());
    let mut grad = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let row: Vec<f64> = theta_grid
            .iter()
            .map(|&theta| {
                let vf = crate::value::Quadratic1d { theta };
                let mean_res = x_grid
                    .iter()
                    .map(|x| {
                        crate::trainer::hjb_residual(&vf, &cost, &system, rho, x)
                            .map(f64::abs)
                    })
                    .sum::<Result<f64>>()?
                    / x_grid.len() as f64;
                let lb = crate::trainer::boundary_penalty(&vf, &cost, &system, &faces)?;
                Ok(mean_res + lambda * lb)
            })
            .collect::<Result<Vec<f64>>>()?;
        let h = theta_grid[1] - theta_grid[0];
        let g: Vec<f64> = (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (row[b] - row[a]) / ((b - a) as f64 * h)
            })
            .collect();
        loss.push(row);
        grad.push(g);
    }

    let roots = rhos_for_roots
        .iter()
        .map(|&r| analytic_theta_1d(1.0, 1.0, 0.5, 0.5, r).map(|(p, m)| (p, m)))
        .collect::<Result<Vec<_>>>()?;

    Ok(Fig1Data {
        thetas: theta_grid,
        lambdas: lambdas.to_vec(),
        loss,
        grad,
        rhos: rhos_for_roots.to_vec(),
        roots,
    })
}

/// Writes the three sweep CSVs (`fig1a/b/c.csv`) into `out_dir`.
pub fn write_fig1_csvs(data: &Fig1Data, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut a = std::io::BufWriter::new(std::fs::File::create(out_dir.join("fig1a.csv"))?);
    writeln!(a, "theta,lambda,loss")?;
    let mut b = std::io::BufWriter::new(std::fs::File::create(out_dir.join("fig1b.csv"))?);
    writeln!(b, "theta,lambda,grad")?;
    for (li, lambda) in data.lambdas.iter().enumerate() {
        for (ti, theta) in data.thetas.iter().enumerate() {
            writeln!(a, "{theta},{lambda},{}", data.loss[li][ti])?;
            writeln!(b, "{theta},{lambda},{}", data.grad[li][ti])?;
        }
    }
    let mut c = std::io::BufWriter::new(std::fs::File::create(out_dir.join("fig1c.csv"))?);
    writeln!(c, "rho,theta_plus,theta_minus")?;
    for (rho, (tp, tm)) in data.rhos.iter().zip(&data.roots) {
        writeln!(c, "{rho},{tp},{tm}")?;
    }
    Ok(())
}

/// Indices of strict local minima of a sampled curve.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if values[i] < values[i - 1] && values[i] <= values[i + 1] {
            out.push(i);
        }
    }
    out
}
