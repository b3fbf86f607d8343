//! Command-line entry point.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use covrepair::fixtures::{
    feret_config, feretdb, guide_fixture, guide_scenario, utk_like, GUIDE_TAU,
};
use covrepair::generator_client::Money;
use covrepair::guide_selection::{MaskLevel, Strategy};
use covrepair::orchestrator::{
    build_report, Backend, EvaluatorMode, KernelKind, RunConfig, RunDir, RunDriver, StepOutcome,
    DATASET_DIR, STATE_FILE,
};
use covrepair::patterns::{find_mups, min_level_mups, Dataset, InvertedIndex};
use covrepair::selection::{
    compute_gaps, greedy_plan, min_gap_plan, optimal_plan_bruteforce, random_plan, PlanDocument,
    Solver,
};
use serde_json::json;
use tracing_subscriber::EnvFilter;

use crate::api::Service;

/// Exit status when the backend is unreachable and the run was suspended.
pub const EXIT_SUSPENDED: u8 = 2;
/// Exit status when the run waits for human labels.
pub const EXIT_AWAITING: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "covrepair",
    version,
    about = "Detect and repair coverage gaps in multi-modal datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the maximal uncovered patterns of a dataset.
    DetectMups {
        /// Directory holding schema.json and tuples.jsonl.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        tau: usize,
        /// Report every level instead of only the lowest.
        #[arg(long)]
        all_levels: bool,
    },
    /// Compute how many tuples of which combinations close the lowest-level gaps.
    Plan {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        tau: usize,
        #[arg(long, default_value = "greedy")]
        solver: Solver,
        /// Seed for the random solver.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the plan here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) a repair in a run directory.
    Repair {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// JSON run configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run_dir: PathBuf,
        /// Directory that relative payload and mask paths resolve against; defaults to the dataset directory.
        #[arg(long)]
        base_dir: Option<PathBuf>,
        #[command(flatten)]
        flags: Box<RunFlags>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "covrepair-data")]
        data_dir: PathBuf,
        /// Idle time after which a claimed evaluation task returns to the pool.
        #[arg(long, default_value_t = 600)]
        task_expiry_secs: u64,
    },
    /// Print the report of a run directory without modifying it.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write a synthetic dataset directory (and a matching run configuration).
    GenFixture {
        #[arg(long, value_enum)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tuple count for the utk and guide fixtures.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FixtureKind {
    Feret,
    Utk,
    Guide,
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    alpha_quality: Option<f64>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    mask_level: Option<MaskLevel>,
    #[arg(long)]
    alpha_ucb: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    evaluator: Option<EvaluatorMode>,
    #[arg(long)]
    unit_cost: Option<Money>,
    #[arg(long)]
    iterate_levels: bool,
}

impl RunFlags {
    fn any(&self) -> bool {
        self.tau.is_some()
            || self.alpha_quality.is_some()
            || self.n_eval.is_some()
            || self.nu.is_some()
            || self.kernel.is_some()
            || self.gamma.is_some()
            || self.strategy.is_some()
            || self.mask_level.is_some()
            || self.alpha_ucb.is_some()
            || self.seed.is_some()
            || self.max_attempts.is_some()
            || self.backend.is_some()
            || self.evaluator.is_some()
            || self.unit_cost.is_some()
            || self.iterate_levels
    }

    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            };
        }
        set!(tau => tau);
        set!(alpha_quality => alpha_quality);
        set!(n_eval => n_eval);
        set!(nu => nu);
        set!(kernel => kernel);
        if let Some(g) = self.gamma {
            c.gamma = Some(g);
        }
        set!(strategy => strategy);
        set!(mask_level => mask_level);
        set!(alpha_ucb => alpha_ucb);
        set!(seed => seed);
        set!(max_attempts => max_attempts_per_tuple);
        set!(backend => backend);
        set!(evaluator => evaluator);
        set!(unit_cost => unit_cost);
        if self.iterate_levels {
            c.iterate_levels = true;
        }
    }
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::DetectMups {
            dataset,
            tau,
            all_levels,
        } => {
            let ds = load_dataset(&dataset)?;
            let index = InvertedIndex::build(&ds);
            let mups = find_mups(&index, &ds.schema, tau);
            let shown = if all_levels || mups.is_empty() {
                mups.clone()
            } else {
                min_level_mups(&mups)?
            };
            let rows: Vec<_> = shown
                .iter()
                .map(|m| {
                    json!({
                        "pattern": m.render(&ds.schema),
                        "level": m.level(),
                        "count": index.coverage_count(m),
                        "gap": tau - index.coverage_count(m),
                    })
                })
                .collect();
            print_json(&json!({
                "tau": tau,
                "tuples": ds.len(),
                "total_mups": mups.len(),
                "min_level": mups.min_level(),
                "mups": rows,
            }))?;
        }
        Command::Plan {
            dataset,
            tau,
            solver,
            seed,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let index = InvertedIndex::build(&ds);
            let mups = find_mups(&index, &ds.schema, tau);
            if mups.is_empty() {
                bail!("no uncovered patterns at tau = {tau}");
            }
            let mstar = min_level_mups(&mups)?;
            let gaps = compute_gaps(&mups, &index, tau)?;
            let plan = match solver {
                Solver::Greedy => greedy_plan(&mstar, &gaps, &ds.schema, &index),
                Solver::MinGap => min_gap_plan(&mstar, &gaps, &ds.schema, &index),
                Solver::Random => random_plan(&mstar, &gaps, &ds.schema, seed),
                Solver::Optimal => optimal_plan_bruteforce(&mstar, &gaps, &ds.schema)?,
            };
            let seed = (solver == Solver::Random).then_some(seed);
            let doc = PlanDocument::new(
                &solver.to_string(),
                seed,
                &gaps.restricted_to(&mstar),
                &plan,
                &ds.schema,
            );
            match out {
                Some(path) => std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print_json(&doc)?,
            }
        }
        Command::Repair {
            dataset,
            config,
            run_dir,
            base_dir,
            flags,
        } => return repair(dataset, config, &run_dir, base_dir, &flags),
        Command::Serve {
            addr,
            data_dir,
            task_expiry_secs,
        } => serve(addr, &data_dir, Duration::from_secs(task_expiry_secs))?,
        Command::Report { run_dir } => {
            let dir = RunDir::new(&run_dir);
            let state = dir.load_state()?;
            let mut augmented = load_dataset(&dir.path(DATASET_DIR))?;
            let schema = augmented.schema.clone();
            augmented.tuples.extend(state.accepted.iter().cloned());
            let report = build_report(&state, &schema, &InvertedIndex::build(&augmented))?;
            print_json(&report)?;
        }
        Command::GenFixture { kind, seed, n, out } => {
            let (ds, config) = match kind {
                FixtureKind::Feret => (feretdb(seed), Some(feret_config(seed))),
                FixtureKind::Utk => (utk_like(seed, n), None),
                FixtureKind::Guide => (
                    guide_fixture(seed, n),
                    Some(RunConfig {
                        tau: GUIDE_TAU,
                        seed,
                        mock: guide_scenario(),
                        ..RunConfig::default()
                    }),
                ),
            };
            ds.save_dir(&out)?;
            if let Some(c) = config {
                std::fs::write(
                    out.join("run-config.json"),
                    serde_json::to_string_pretty(&c)? + "\n",
                )?;
            }
            print_json(&json!({ "dataset": out, "tuples": ds.len() }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn repair(
    dataset: Option<PathBuf>,
    config: Option<PathBuf>,
    run_dir: &Path,
    base_dir: Option<PathBuf>,
    flags: &RunFlags,
) -> Result<ExitCode> {
    let mut driver = if run_dir.join(STATE_FILE).exists() {
        if config.is_some() || flags.any() {
            tracing::warn!(
                "resuming {}: the saved configuration applies, flags are ignored",
                run_dir.display()
            );
        }
        RunDriver::resume(run_dir)?
    } else {
        let dataset = dataset.context("--dataset is required to start a run")?;
        let mut cfg = match &config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        flags.apply(&mut cfg);
        let ds = load_dataset(&dataset)?;
        let base = base_dir.unwrap_or(dataset);
        RunDriver::create(&ds, Some(&base), cfg, run_dir)?
    };
    let outcome = driver.run()?;
    let report = driver.report()?;
    print_json(&report)?;
    Ok(match outcome {
        StepOutcome::Suspended { reason } => {
            eprintln!("suspended: {reason}; rerun the same command to resume");
            ExitCode::from(EXIT_SUSPENDED)
        }
        StepOutcome::AwaitingEvaluation { request_id } => {
            eprintln!("candidate {request_id} needs human labels; serve this run to collect them");
            ExitCode::from(EXIT_AWAITING)
        }
        _ => ExitCode::SUCCESS,
    })
}

fn serve(addr: SocketAddr, data_dir: &Path, task_expiry: Duration) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let service = Service::open(data_dir, task_expiry)
        .with_context(|| format!("opening data directory {}", data_dir.display()))?;
    let app = service.router();
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let bound = listener.local_addr()?;
        tracing::info!("listening on http://{bound}");
        println!("listening on http://{bound}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    service.shutdown();
    Ok(())
}
