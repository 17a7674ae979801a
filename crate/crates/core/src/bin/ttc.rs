//! `ttc` — committor-function experiment driver.
//!
//! Three commands share one flat key=value config format:
//! - `solve`: build the configured experiment, run the ALS solve, and write
//!   the solution TT plus plot-ready CSVs.
//! - `validate`: reload a solution and run the configured statistical
//!   checks; exits nonzero iff any enabled check fails.
//! - `oracle`: run the small-dimension brute-force cross-checks used in CI.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use committor_tt::config::{Experiment, RunConfig};
use committor_tt::error::{Error, Result};
use committor_tt::io::{load_tt, save_tt, write_csv, CsvCell};
use committor_tt::parallel::init_threads;
use committor_tt::pipeline::{
    build_experiment, d1_soft_comparison, dense_assembly_oracle, run_validation,
    solve_experiment, ExperimentSetup, ValidationOutput,
};
use committor_tt::solver::CommittorSolution;

#[derive(Parser)]
#[command(
    name = "ttc",
    about = "Committor functions in tensor-train format: solve, validate, oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and print the resolved plan without computing.
    #[arg(long)]
    dry_run: bool,
    /// Worker thread count (falls back to TTC_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and solve the configured experiment.
    Solve(CommonArgs),
    /// Run statistical validation against a solved experiment.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Solution TT to validate (defaults to `<out>/solution.tt`).
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Run the small-dimension brute-force oracles.
    Oracle(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(common) => run(&common, |cfg, out| cmd_solve(cfg, out)),
        Command::Validate { common, solution } => {
            run(&common, |cfg, out| cmd_validate(cfg, out, solution.as_deref()))
        }
        Command::Oracle(common) => run(&common, |cfg, out| cmd_oracle(cfg, out)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Shared command scaffolding: load config, apply overrides, set up the
/// thread pool, handle `--dry-run`, create the output directory, and write
/// the manifest.
fn run(
    common: &CommonArgs,
    body: impl FnOnce(&RunConfig, &Path) -> Result<bool>,
) -> Result<bool> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let threads = common.threads.or_else(|| {
        std::env::var("TTC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        init_threads(n);
    }
    if common.dry_run {
        print!("{}", cfg.manifest());
        return Ok(true);
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("manifest"), cfg.manifest())?;
    body(&cfg, &cfg.output_dir.clone())
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<bool> {
    eprintln!("building {} experiment, d = {}", cfg.experiment.tag(), cfg.dimension);
    let setup = build_experiment(cfg)?;
    eprintln!("solving (rank {}, rho schedule {:?})", cfg.solver.rank, cfg.solver.rho_schedule);
    let (solution, _problem) = solve_experiment(cfg, &setup)?;
    save_tt(out.join("solution.tt"), &solution.q)?;
    write_descriptor(cfg, &solution, out)?;
    write_trace(&solution, out)?;
    write_slice(cfg, &setup, &solution, out)?;
    eprintln!("solution written to {}", out.display());
    Ok(true)
}

fn cmd_validate(cfg: &RunConfig, out: &Path, solution_path: Option<&Path>) -> Result<bool> {
    let default_path = out.join("solution.tt");
    let path = solution_path.unwrap_or(&default_path);
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "solution artifact {} not found (run `ttc solve` first)",
            path.display()
        )));
    }
    let setup = build_experiment(cfg)?;
    let q = load_tt(path)?;
    let solution = CommittorSolution {
        q,
        phi_bases: setup.phi.clone(),
        objective_trace: Vec::new(),
        final_rho: *cfg
            .solver
            .rho_schedule
            .last()
            .ok_or_else(|| Error::Config("empty rho schedule".into()))?,
    };
    let problem = committor_tt::pipeline::assemble_experiment(cfg, &setup)?;
    let report = run_validation(cfg, &setup, &solution, &problem)?;
    write_metrics(&report, out)?;
    write_stochastic_artifacts(&report, out)?;
    for m in &report.metrics {
        eprintln!(
            "{}: value {:.6e}, tolerance {:.6e} -> {}",
            m.metric,
            m.value,
            m.tolerance,
            if m.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(report.all_pass())
}

fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<bool> {
    // Dense brute-force assembly comparison at d = 3.
    let worst = dense_assembly_oracle(cfg.seed)?;
    let assembly_pass = worst <= 1e-10;
    eprintln!("dense assembly oracle: max relative discrepancy {worst:.3e} -> {}",
        if assembly_pass { "pass" } else { "FAIL" });

    // 1D ALS vs finite-difference soft committor.
    let cmp = d1_soft_comparison(cfg.beta(), cfg.boundary_sigma, 1e3)?;
    let d1_pass = cmp.l2_error < 1e-3;
    eprintln!("1D ALS vs FD: weighted L2 error {:.3e} -> {}",
        cmp.l2_error,
        if d1_pass { "pass" } else { "FAIL" });

    write_csv(
        out.join("oracle.csv"),
        &["check", "value", "tolerance", "pass"],
        vec![
            vec![
                CsvCell::from("dense_assembly_max_rel_error"),
                CsvCell::from(worst),
                CsvCell::from(1e-10),
                CsvCell::from(if assembly_pass { "1" } else { "0" }),
            ],
            vec![
                CsvCell::from("d1_als_vs_fd_l2"),
                CsvCell::from(cmp.l2_error),
                CsvCell::from(1e-3),
                CsvCell::from(if d1_pass { "1" } else { "0" }),
            ],
        ],
    )?;
    let rows = cmp
        .grid
        .iter()
        .zip(cmp.q_als.iter().zip(&cmp.q_fd))
        .map(|(&x, (&qa, &qf))| {
            vec![CsvCell::from(x), CsvCell::from(qa), CsvCell::from(qf)]
        });
    write_csv(out.join("d1_comparison.csv"), &["x", "q_als", "q_fd"], rows)?;
    Ok(assembly_pass && d1_pass)
}

fn write_descriptor(cfg: &RunConfig, solution: &CommittorSolution, out: &Path) -> Result<()> {
    let ranks: Vec<String> = solution.q.ranks().iter().map(|r| r.to_string()).collect();
    let text = format!(
        "experiment = {}\ndimension = {}\ntemperature = {}\nfinal_rho = {}\nranks = {}\nconfig_hash = {}\n",
        cfg.experiment.tag(),
        cfg.dimension,
        cfg.temperature,
        solution.final_rho,
        ranks.join(","),
        cfg.config_hash(),
    );
    std::fs::write(out.join("solution.descriptor"), text)?;
    Ok(())
}

fn write_trace(solution: &CommittorSolution, out: &Path) -> Result<()> {
    let rows = solution.objective_trace.iter().map(|t| {
        vec![
            CsvCell::from(t.rho),
            CsvCell::from(t.sweep),
            CsvCell::from(t.site),
            CsvCell::from(t.objective),
        ]
    });
    write_csv(out.join("trace.csv"), &["rho", "sweep", "site", "objective"], rows)
}

/// 1D slice of q along x_1 with all other coordinates at zero (double-well
/// only — for Ginzburg-Landau the transition coordinate is not axial).
fn write_slice(
    cfg: &RunConfig,
    _setup: &ExperimentSetup,
    solution: &CommittorSolution,
    out: &Path,
) -> Result<()> {
    if cfg.experiment != Experiment::DoubleWell {
        return Ok(());
    }
    let n = 401;
    let rows = (0..n)
        .map(|i| {
            let x1 = -cfg.gamma + 2.0 * cfg.gamma * i as f64 / (n - 1) as f64;
            let mut x = vec![0.0; cfg.dimension];
            x[0] = x1;
            Ok(vec![CsvCell::from(x1), CsvCell::from(solution.eval_q(&x)?)])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(out.join("slice.csv"), &["x1", "q"], rows)
}

fn write_metrics(report: &ValidationOutput, out: &Path) -> Result<()> {
    let rows = report.metrics.iter().map(|m| {
        vec![
            CsvCell::from(m.metric.as_str()),
            CsvCell::from(m.value),
            CsvCell::from(m.tolerance),
            CsvCell::from(if m.pass { "1" } else { "0" }),
        ]
    });
    write_csv(out.join("metrics.csv"), &["metric", "value", "tolerance", "pass"], rows)
}

fn write_stochastic_artifacts(report: &ValidationOutput, out: &Path) -> Result<()> {
    if let Some(stats) = &report.hitting {
        let rows = stats
            .n_j
            .iter()
            .zip(&stats.completed_j)
            .enumerate()
            .map(|(j, (&n, &c))| {
                vec![CsvCell::from(j), CsvCell::from(n), CsvCell::from(c)]
            });
        write_csv(out.join("hitting_stats.csv"), &["start_index", "n_b_hits", "completed"], rows)?;
        let rows = stats.qq.iter().map(|&(emp, theo)| {
            vec![CsvCell::from(emp), CsvCell::from(theo)]
        });
        write_csv(out.join("qq.csv"), &["empirical", "theoretical"], rows)?;
    }
    if let Some(theta) = &report.theta {
        let rows = theta.iter().map(|&t| vec![CsvCell::from(t)]);
        write_csv(out.join("theta.csv"), &["theta"], rows)?;
    }
    if let Some(path) = &report.reactive_path {
        let d = path.states.first().map_or(0, |s| s.len());
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((1..=d).map(|k| format!("u{k}")));
        header.push("q".into());
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let rows = path
            .times
            .iter()
            .zip(path.states.iter().zip(&path.q_values))
            .map(|(&t, (state, &q))| {
                let mut row = vec![CsvCell::from(t)];
                row.extend(state.iter().map(|&u| CsvCell::from(u)));
                row.push(CsvCell::from(q));
                row
            });
        write_csv(out.join("path.csv"), &header_refs, rows)?;
    }
    Ok(())
}
