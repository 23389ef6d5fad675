//! Command implementations: each one loads the config, runs the pipeline,
//! and writes plot-ready CSV/JSON. Numbers are formatted with 17 significant
//! digits so every file round-trips exactly.

use crate::config::{load_config, RunConfig};
use crate::CommonArgs;
use anyhow::{Context, Result};
use mvjump::control::{FeedbackPolicy, ValueFunction};
use mvjump::frontier::{
    jump_frontier_variance, resolve_beta, sweep_frontier, variance_curve, zhou_li_variance,
};
use mvjump::odes::{
    eval_a, eval_c, solve_mean, solve_p, solve_phi, solve_psi, solve_q, solve_r,
    solve_second_moment, EmbeddingParams,
};
use mvjump::sim::{simulate, EnsembleSummary};
use mvjump::verify::{build_report, VerifyInputs, DEFAULT_EPS_GRID};
use mvjump::GridSpec;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// 17 significant digits: round-trip safe for f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn prepare(common: &CommonArgs) -> Result<(RunConfig, PathBuf, Option<String>)> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.sim.seed = seed;
    }
    let out_dir = common.out.clone().unwrap_or_else(|| config.out_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let timestamp = if common.no_timestamp {
        None
    } else {
        Some(chrono::Utc::now().to_rfc3339())
    };
    Ok((config, out_dir, timestamp))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

struct SolvedGrids {
    params: EmbeddingParams,
    spec: GridSpec,
    phi: mvjump::SolutionGrid,
    psi: mvjump::SolutionGrid,
    p: mvjump::SolutionGrid,
    q: mvjump::SolutionGrid,
    r: mvjump::SolutionGrid,
    mean: mvjump::SolutionGrid,
    second: mvjump::SolutionGrid,
}

fn solve_grids(config: &RunConfig) -> Result<SolvedGrids> {
    let w = config.require_w()?;
    let spec = GridSpec::aligned_to_model(&config.model, config.n_ode)?;
    let resolution = resolve_beta(&config.model, w, config.gamma, config.x0, spec)?;
    let params = EmbeddingParams::new(w, resolution.beta, config.gamma, config.x0)?;
    let phi = solve_phi(&config.model, &params, spec)?;
    let psi = solve_psi(&config.model, &params, &phi, spec)?;
    let p = solve_p(&config.model, &params, spec)?;
    let q = solve_q(&config.model, &params, &p, spec)?;
    let r = solve_r(&config.model, &params, &p, &q, spec)?;
    let mean = solve_mean(&config.model, &params, &psi, spec)?;
    let second = solve_second_moment(&config.model, &params, &psi, spec)?;
    Ok(SolvedGrids { params, spec, phi, psi, p, q, r, mean, second })
}

pub fn cmd_solve(common: &CommonArgs) -> Result<()> {
    let (config, out_dir, _) = prepare(common)?;
    let s = solve_grids(&config)?;
    let var = variance_curve(&s.mean, &s.second)?;

    let mut grids = String::from("t,phi,psi,P,Q,R,a,C,EX,EX2,VarX\n");
    for i in 0..=s.spec.n {
        let t = s.spec.node(i);
        let a = eval_a(&config.model, &s.params, t)?;
        let c = eval_c(&config.model, &s.params, &s.psi, t)?;
        writeln!(
            grids,
            "{},{},{},{},{},{},{},{},{},{},{}",
            num(t),
            num(s.phi.values[i]),
            num(s.psi.values[i]),
            num(s.p.values[i]),
            num(s.q.values[i]),
            num(s.r.values[i]),
            num(a),
            num(c),
            num(s.mean.values[i]),
            num(s.second.values[i]),
            num(var.values[i]),
        )?;
    }
    write_file(&out_dir.join("grids.csv"), &grids)?;

    let policy = FeedbackPolicy::mp(&config.model, s.params, s.phi.clone(), s.psi.clone())?;
    let sw = s.params.sqrt_w();
    let mut policy_csv = String::from("t,EX,y,u_hat,v_hat\n");
    for i in 0..=s.spec.n {
        let t = s.spec.node(i);
        let x = s.mean.values[i];
        let y = sw * (x - s.params.beta);
        writeln!(
            policy_csv,
            "{},{},{},{},{}",
            num(t),
            num(x),
            num(y),
            num(policy.feedback_u(t, y)?),
            num(policy.feedback_v(t, x)?),
        )?;
    }
    write_file(&out_dir.join("policy.csv"), &policy_csv)?;
    Ok(())
}

fn frontier_csv(config: &RunConfig, spec: GridSpec) -> (Vec<mvjump::frontier::SweepPoint>, String) {
    let weights = config.sweep_weights();
    let sweep = sweep_frontier(&config.model, config.gamma, config.x0, &weights, spec);
    let mut csv = String::from("w,beta,lambda_embed,mean_T,var_T,std_T,status\n");
    for entry in &sweep {
        match entry.point {
            Some(p) => {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    num(p.w),
                    num(p.beta),
                    num(p.lambda_embed),
                    num(p.mean_t),
                    num(p.var_t),
                    num(p.var_t.sqrt()),
                    entry.status,
                );
            }
            None => {
                let _ = writeln!(csv, "{},,,,,,{}", num(entry.w), entry.status);
            }
        }
    }
    (sweep, csv)
}

pub fn cmd_frontier(common: &CommonArgs) -> Result<()> {
    let (config, out_dir, _) = prepare(common)?;
    let spec = GridSpec::aligned_to_model(&config.model, config.n_ode)?;
    let (_, csv) = frontier_csv(&config, spec);
    write_file(&out_dir.join("frontier.csv"), &csv)
}

pub fn cmd_compare_frontiers(
    common: &CommonArgs,
    mean_min: Option<f64>,
    mean_max: Option<f64>,
    steps: usize,
) -> Result<()> {
    let (config, out_dir, _) = prepare(common)?;
    let spec = GridSpec::aligned_to_model(&config.model, config.n_ode)?;
    let (sweep, sweep_csv) = frontier_csv(&config, spec);
    write_file(&out_dir.join("frontier.csv"), &sweep_csv)?;

    let points: Vec<_> = sweep.iter().filter_map(|e| e.point).collect();
    anyhow::ensure!(!points.is_empty(), "no sweep point succeeded");
    let lo = mean_min.unwrap_or_else(|| {
        points.iter().map(|p| p.mean_t).fold(f64::INFINITY, f64::min)
    });
    let hi = mean_max.unwrap_or_else(|| {
        points.iter().map(|p| p.mean_t).fold(f64::NEG_INFINITY, f64::max)
    });
    anyhow::ensure!(hi > lo && steps >= 2, "need mean_max > mean_min and steps >= 2");

    let mut csv = String::from("mean_T,var_zhou_li,var_jump,var_recursive_at_T,nearest_w\n");
    for k in 0..steps {
        let mean_t = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
        let zhou = zhou_li_variance(&config.model, mean_t, config.x0)?;
        let jump = jump_frontier_variance(&config.model, mean_t, config.x0)?;
        // the recursive frontier is parameterized by w; report the sweep
        // point whose terminal mean is nearest, flagged with its w
        let nearest = points
            .iter()
            .min_by(|a, b| {
                (a.mean_t - mean_t)
                    .abs()
                    .partial_cmp(&(b.mean_t - mean_t).abs())
                    .unwrap()
            })
            .unwrap();
        writeln!(
            csv,
            "{},{},{},{},{}",
            num(mean_t),
            num(zhou),
            num(jump),
            num(nearest.var_t),
            num(nearest.w),
        )?;
    }
    write_file(&out_dir.join("compare.csv"), &csv)
}

#[derive(Serialize)]
struct SummaryDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at: Option<String>,
    #[serde(flatten)]
    summary: EnsembleSummary,
}

pub fn cmd_simulate(common: &CommonArgs, paths_csv: bool) -> Result<()> {
    let (config, out_dir, timestamp) = prepare(common)?;
    let s = solve_grids(&config)?;
    let policy = FeedbackPolicy::mp(&config.model, s.params, s.phi.clone(), s.psi.clone())?;
    let ensemble = simulate(&config.model, &s.params, &policy, &config.sim)?;

    let doc = SummaryDoc { generated_at: timestamp, summary: ensemble.summary.clone() };
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    write_file(&out_dir.join("summary.json"), &json)?;

    if paths_csv {
        let mut csv = String::from("path,terminal_wealth,utility,jump_count,excluded\n");
        for i in 0..ensemble.terminal_wealth.len() {
            writeln!(
                csv,
                "{},{},{},{},{}",
                i,
                num(ensemble.terminal_wealth[i]),
                num(ensemble.utility[i]),
                ensemble.jump_counts[i],
                ensemble.excluded[i],
            )?;
        }
        write_file(&out_dir.join("paths.csv"), &csv)?;
    }
    // keep the solved value function exercised end to end: report -V(0, y0)
    let value = ValueFunction::new(s.params, s.p.clone(), s.q.clone(), s.r.clone())?;
    let v0 = value.eval(0.0, s.params.y0())?.v;
    println!(
        "Y0_hat = {} +/- {}, -V(0, y0) = {}",
        ensemble.summary.y0_hat, ensemble.summary.se_y0, -v0
    );
    Ok(())
}

pub fn cmd_verify(common: &CommonArgs) -> Result<bool> {
    let (config, out_dir, timestamp) = prepare(common)?;
    let w = config.require_w()?;
    let inputs = VerifyInputs {
        model: &config.model,
        w,
        gamma: config.gamma,
        x0: config.x0,
        n_ode: config.n_ode,
        sim: config.sim,
        eps_grid: DEFAULT_EPS_GRID.to_vec(),
    };
    let mut report = build_report(&inputs)?;
    report.generated_at = timestamp;
    write_file(&out_dir.join("verify.json"), &report.to_json())?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    Ok(report.pass)
}
