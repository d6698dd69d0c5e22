//! Command-line front end: `generate`, `run`, `batch` and `verify`.
//!
//! Exit codes: 0 success, 1 verification outside thresholds, 2 usage or
//! input error, 3 no convergence, 4 infeasible. The output directory
//! defaults to `$HIER_ADMM_OUT`, or `out` when unset.

pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::coordinator::{self, Mode, SolverConfig};
use crate::error::{Error, Result};
use crate::oracle;
use crate::qp::QpSettings;
use crate::scenario::{self, GeneratorParams, Scenario};
use crate::study::{self, BatchConfig};
use output::TimingRecord;

pub const OUT_ENV: &str = "HIER_ADMM_OUT";

pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "hier-admm", version, about = "Hierarchical ADMM coordination of battery prosumers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a random scenario file.
    Generate(GenerateArgs),
    /// Solve one scenario and write trace, solution and aggregate CSVs.
    Run(RunArgs),
    /// Solve many seeded scenarios and summarise them by level count.
    Batch(BatchArgs),
    /// Compare the hierarchical solution with the centralised optimum.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Node levels including root and leaves.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=5))]
    pub levels: u8,
    /// Output file; defaults to `<out dir>/scenario-<seed>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Step length in hours.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub max_leaves: Option<u32>,
    #[arg(long)]
    pub max_branch_children: Option<u32>,
    /// Four levels, one branching node in each of the first three.
    #[arg(long)]
    pub example_case: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value = "parallel")]
    pub mode: Mode,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            tol: self.tol,
            max_iter: self.max_iter,
            mode: self.mode,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render residual and aggregate charts.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct BatchArgs {
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=5))]
    pub levels_min: u8,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(2..=5))]
    pub levels_max: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Scenarios solved concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Largest accepted relative objective gap.
    #[arg(long, default_value_t = 0.01)]
    pub max_gap: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_infeasible() {
        return exit::INFEASIBLE;
    }
    match e {
        Error::SolverFailed { .. } | Error::Agent { .. } => exit::NOT_CONVERGED,
        _ => exit::USAGE,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Batch(a) => cmd_batch(&a),
        Command::Verify(a) => cmd_verify(&a),
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<i32> {
    let defaults = GeneratorParams::default();
    let horizon = a.horizon.unwrap_or(defaults.horizon);
    let dt = a.dt.unwrap_or(defaults.dt);
    let s = if a.example_case {
        scenario::example_case(a.seed, horizon, dt)?
    } else {
        scenario::generate(&GeneratorParams {
            seed: a.seed,
            levels: a.levels as usize,
            horizon,
            dt,
            max_leaves_per_branch: a.max_leaves.unwrap_or(defaults.max_leaves_per_branch),
            max_branch_children: a.max_branch_children.unwrap_or(defaults.max_branch_children),
            ..defaults
        })?
    };
    let path = match &a.out {
        Some(p) => p.clone(),
        None => out_dir(&None).join(format!("scenario-{}.json", a.seed)),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    scenario::save(&s, &path)?;
    println!("{}", summary_line(&s));
    println!("wrote {}", path.display());
    Ok(exit::OK)
}

/// `levels L, branching nodes B, leaves N, constraints C, horizon T`
pub fn summary_line(s: &Scenario) -> String {
    format!(
        "levels {}, branching nodes {}, leaves {}, constraints {}, horizon {} x {} h",
        s.levels(),
        s.tree.branching_nodes().len(),
        s.num_agents(),
        s.constraints.len(),
        s.horizon,
        s.dt
    )
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let s = scenario::load(&a.scenario)?;
    let dir = out_dir(&a.out);
    fs::create_dir_all(&dir)?;
    let report = coordinator::run(&s, &a.solver.config())?;
    let objective = s.objective(&report.x_star)?;

    output::write_trace(&dir.join("trace.csv"), &report)?;
    output::write_solution(&dir.join("solution.csv"), &s, &report)?;
    let series = output::aggregate_series(&s, &report)?;
    output::write_aggregates(&dir.join("aggregates.csv"), &series)?;
    let record = study::RunRecord {
        run: 0,
        seed: s.metadata.get("seed").and_then(|v| v.as_u64()),
        levels: s.levels(),
        agents: s.num_agents(),
        iterations: report.iterations,
        converged: report.converged,
        final_primal: report.final_primal(),
        objective,
        no_action_objective: s.no_action_objective(),
        status: if report.converged { "converged" } else { "max_iter" }.into(),
    };
    output::write_rows(&dir.join("record.csv"), std::slice::from_ref(&record))?;
    output::write_rows(
        &dir.join("timing.csv"),
        &[TimingRecord::new(0, s.num_agents(), &report.timings)],
    )?;
    if a.svg {
        let curve = report.mean_primal_curve();
        fs::write(
            dir.join("residual.svg"),
            svg::line_chart(
                "mean primal residual",
                &[svg::Series {
                    name: "mean over constraints",
                    values: &curve,
                    dashed: false,
                }],
                true,
            ),
        )?;
        for ser in &series {
            let chart = svg::line_chart(
                &format!("constraint {} at {}", ser.label, ser.branch),
                &[
                    svg::Series { name: "uncontrolled", values: &ser.before, dashed: false },
                    svg::Series { name: "coordinated", values: &ser.after, dashed: false },
                    svg::Series { name: "upper", values: &ser.upper, dashed: true },
                    svg::Series { name: "lower", values: &ser.lower, dashed: true },
                ],
                false,
            );
            fs::write(dir.join(format!("aggregate-{}.svg", ser.label.replace('/', "_"))), chart)?;
        }
    }
    println!(
        "{} after {} iterations, final primal residual {:.3e}, objective {} (no action {})",
        record.status, record.iterations, record.final_primal, objective, record.no_action_objective
    );
    Ok(if report.converged { exit::OK } else { exit::NOT_CONVERGED })
}

pub fn cmd_batch(a: &BatchArgs) -> Result<i32> {
    let defaults = GeneratorParams::default();
    let cfg = BatchConfig {
        count: a.count,
        levels_min: a.levels_min as usize,
        levels_max: a.levels_max as usize,
        seed: a.seed,
        generator: GeneratorParams {
            horizon: a.horizon.unwrap_or(defaults.horizon),
            dt: a.dt.unwrap_or(defaults.dt),
            ..defaults
        },
        solver: a.solver.config(),
        jobs: a.jobs,
    };
    cfg.validate()?;
    let dir = out_dir(&a.out);
    fs::create_dir_all(&dir)?;
    let runs = study::run_batch(&cfg)?;
    write_batch(&dir, &runs, cfg.generator.max_branch_children as f64, a.svg)?;

    let ok = runs.iter().filter(|r| r.ok()).count();
    let converged = runs.iter().filter(|r| r.record.converged).count();
    println!("{} runs, {ok} solved, {converged} converged", runs.len());
    for s in study::summarize(&runs, cfg.generator.max_branch_children as f64) {
        println!(
            "levels {}: {} runs, median agents {}, median iterations {}, median cpu/agent {:.4} s (IQR {:.4}..{:.4}), naive nesting x{:.3e}",
            s.levels,
            s.runs,
            s.median_agents,
            s.median_iterations,
            s.median_cpu_per_agent_s,
            s.q1_cpu_per_agent_s,
            s.q3_cpu_per_agent_s,
            s.naive_nesting_factor
        );
    }
    Ok(if ok == 0 { exit::NOT_CONVERGED } else { exit::OK })
}

/// Writes `records.csv`, `summary.csv`, `curves.csv`, `timings.csv` and
/// `timing_summary.csv`. Only the two timing files vary between
/// invocations.
pub fn write_batch(dir: &Path, runs: &[study::BatchRun], branching: f64, with_svg: bool) -> Result<()> {
    let records: Vec<_> = runs.iter().map(|r| r.record.clone()).collect();
    output::write_rows(&dir.join("records.csv"), &records)?;
    let timings: Vec<TimingRecord> = runs
        .iter()
        .filter_map(|r| r.timings.map(|t| TimingRecord::new(r.record.run, r.record.agents, &t)))
        .collect();
    output::write_rows(&dir.join("timings.csv"), &timings)?;

    let summary = study::summarize(runs, branching);
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "levels",
        "runs",
        "converged",
        "failed",
        "median_agents",
        "median_iterations",
        "naive_nesting_factor",
    ])?;
    for s in &summary {
        w.write_record([
            s.levels.to_string(),
            s.runs.to_string(),
            s.converged.to_string(),
            s.failed.to_string(),
            s.median_agents.to_string(),
            s.median_iterations.to_string(),
            s.naive_nesting_factor.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("timing_summary.csv"))?;
    w.write_record([
        "levels",
        "median_cpu_per_agent_s",
        "q1_cpu_per_agent_s",
        "q3_cpu_per_agent_s",
        "median_wall_per_agent_s",
        "median_critical_path_per_agent_s",
    ])?;
    for s in &summary {
        w.write_record([
            s.levels.to_string(),
            s.median_cpu_per_agent_s.to_string(),
            s.q1_cpu_per_agent_s.to_string(),
            s.q3_cpu_per_agent_s.to_string(),
            s.median_wall_per_agent_s.to_string(),
            s.median_critical_path_per_agent_s.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    w.write_record(["levels", "iter", "mean_primal"])?;
    let mut charts = Vec::new();
    for s in &summary {
        let curve = study::mean_curve(
            runs.iter()
                .filter(|r| r.record.levels == s.levels && r.ok())
                .map(|r| r.curve.as_slice()),
        );
        for (k, v) in curve.iter().enumerate() {
            w.write_record([s.levels.to_string(), (k + 1).to_string(), v.to_string()])?;
        }
        charts.push((format!("{} levels", s.levels), curve));
    }
    w.flush()?;
    if with_svg {
        let series: Vec<svg::Series> = charts
            .iter()
            .map(|(name, c)| svg::Series { name, values: c, dashed: false })
            .collect();
        fs::write(
            dir.join("curves.svg"),
            svg::line_chart("mean primal residual by level count", &series, true),
        )?;
    }
    Ok(())
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let s = scenario::load(&a.scenario)?;
    let config = a.solver.config();
    let oracle_settings = QpSettings {
        tol: 1e-7,
        ..QpSettings::default()
    };
    let hier = coordinator::run(&s, &config);
    let mono = oracle::solve_monolithic(&s, &oracle_settings);
    let (hier, mono) = match (hier, mono) {
        (Ok(h), Ok(m)) => (h, m),
        (h, Err(e)) if e.is_infeasible() => {
            println!("oracle: {e}");
            match h {
                Err(he) => println!("hierarchical: {he}"),
                Ok(r) if !r.converged => println!(
                    "hierarchical: no convergence after {} iterations (residual {:.3e})",
                    r.iterations,
                    r.final_primal()
                ),
                Ok(r) => println!(
                    "hierarchical: converged in {} iterations despite infeasible oracle",
                    r.iterations
                ),
            }
            return Ok(exit::INFEASIBLE);
        }
        (Err(e), Ok(_)) => {
            println!("hierarchical: {e}");
            return Ok(exit_code(&e));
        }
        (_, Err(e)) => return Err(e),
    };
    let jh = s.objective(&hier.x_star)?;
    let gap = oracle::relative_gap(jh, mono.objective);
    let vh = s.constraint_violation(&hier.x_star)?;
    let vo = s.constraint_violation(&mono.x)?;
    println!("hierarchical objective {jh} ({} iterations, converged {})", hier.iterations, hier.converged);
    println!("monolithic objective   {}", mono.objective);
    println!("relative gap {gap:.3e}");
    println!("max constraint violation: hierarchical {vh:.3e}, monolithic {vo:.3e}");
    let pass = hier.converged && gap <= a.max_gap && vh <= 1.5 * config.tol && vo <= 1e-6;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if !hier.converged {
        exit::NOT_CONVERGED
    } else if pass {
        exit::OK
    } else {
        exit::CHECK_FAILED
    })
}
