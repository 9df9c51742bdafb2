use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpcpp::analysis::DEFAULT_PATH_CAP;
use dpcpp::generator::{generate_task_set, seeded_rng, Scenario};
use dpcpp::partitioning::{run_method, Method};
use dpcpp::simulator::{
    check_mutual_exclusion, check_priority_ceiling, check_response_bounds,
    check_single_lower_priority_blocking, simulate, ExecutionModel, ReleaseModel, SegmentLayout,
    SimConfig,
};
use dpcpp::{Assignment, TaskSet};
use experiment::{
    dominance_outperformance, emit_results, run_scenario_grid, write_records, ExperimentConfig,
    ResultTable,
};

#[derive(Parser)]
#[command(
    name = "dpcpp",
    version,
    about = "Schedulability experiments for DAG tasks under DPCP-p"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Acceptance-ratio sweep over a scenario grid.
    Grid(GridArgs),
    /// Draw one task set and print it as JSON.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Total utilization.
        #[arg(long)]
        utilization: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Partition and analyze a task set file.
    Analyze {
        taskset: PathBuf,
        #[arg(long, default_value = "EP", value_parser = parse_method)]
        mode: Method,
        #[arg(long = "paths-cap", default_value_t = DEFAULT_PATH_CAP)]
        paths_cap: usize,
        /// Write the final assignment here.
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Simulate a task set under an assignment and audit the trace.
    Simulate(SimulateArgs),
    /// Dominance and outperformance from a results file.
    Dominance {
        results: PathBuf,
        #[arg(long, value_parser = parse_method, default_value = "EP")]
        a: Method,
        #[arg(long, value_parser = parse_method, default_value = "EN")]
        b: Method,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Processor counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    /// Resource-count ranges such as `4-8`.
    #[arg(long, value_delimiter = ',')]
    nr: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    uavg: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    nmax: Vec<u32>,
    /// Critical-section ranges in microseconds such as `50-100`.
    #[arg(long, value_delimiter = ',')]
    lrange: Vec<String>,
    /// Scenario file of `key=value` lines; flags override it.
    #[arg(long = "scenario-file")]
    scenario_file: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Use every scenario of the full sweep; scenario flags are ignored.
    #[arg(long)]
    full: bool,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "EP,EN,FED-FP")]
    modes: Vec<Method>,
    /// Evenly spaced utilization points in (1, m]; default is steps of 0.05·m.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Simulate every task set accepted by EP or EN and audit the traces.
    #[arg(long = "sim-check")]
    sim_check: bool,
    #[arg(long = "paths-cap", default_value_t = DEFAULT_PATH_CAP)]
    paths_cap: usize,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    CriticalFirst,
    Spread,
    Shuffled,
}

#[derive(Args)]
struct SimulateArgs {
    taskset: PathBuf,
    /// Assignment JSON; computed with `--mode` when absent.
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long, default_value = "EP", value_parser = parse_method)]
    mode: Method,
    /// Horizon in nanoseconds; defaults to twice the longest period.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale vertex execution into `[factor·C, C]`.
    #[arg(long)]
    scaled: Option<f64>,
    /// Sporadic releases: gaps of `T·(1 + u)` with `u` up to this value.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, value_enum, default_value = "spread")]
    layout: Layout,
    /// Write the trace as newline-delimited JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_method(text: &str) -> Result<Method, String> {
    Method::parse(text).ok_or_else(|| format!("unknown mode `{text}` (EP, EN, FED-FP)"))
}

fn parse_pair(text: &str) -> Result<(u64, u64)> {
    let (lo, hi) = text
        .split_once(['-', ':'])
        .with_context(|| format!("expected a range like 4-8, got `{text}`"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

impl ScenarioArgs {
    fn scenarios(&self) -> Result<Vec<Scenario>> {
        let base = match &self.scenario_file {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Scenario::parse(&text)?
            }
            None => Scenario::default(),
        };
        let mut out = vec![base];
        macro_rules! cross {
            ($values:expr, |$s:ident, $v:ident| $set:expr) => {
                if !$values.is_empty() {
                    let mut next = Vec::new();
                    for s in &out {
                        for $v in $values {
                            let mut $s = s.clone();
                            $set;
                            next.push($s);
                        }
                    }
                    out = next;
                }
            };
        }
        let nr = self
            .nr
            .iter()
            .map(|t| parse_pair(t))
            .collect::<Result<Vec<_>>>()?;
        let lr = self
            .lrange
            .iter()
            .map(|t| parse_pair(t))
            .collect::<Result<Vec<_>>>()?;
        cross!(&self.m, |s, v| s.m = *v);
        cross!(&nr, |s, v| {
            s.nr_lo = v.0 as usize;
            s.nr_hi = v.1 as usize;
        });
        cross!(&self.uavg, |s, v| s.uavg = *v);
        cross!(&self.pr, |s, v| s.pr = *v);
        cross!(&self.nmax, |s, v| s.nmax = *v);
        cross!(&lr, |s, v| {
            s.llo_us = v.0;
            s.lhi_us = v.1;
        });
        for s in &out {
            s.check().with_context(|| s.id())?;
        }
        Ok(out)
    }
}

fn read_task_set(path: &PathBuf) -> Result<TaskSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TaskSet::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn grid(args: GridArgs) -> Result<()> {
    let scenarios = if args.full {
        Scenario::full_grid()
    } else {
        args.scenario.scenarios()?
    };
    let config = ExperimentConfig {
        scenarios,
        modes: args.modes,
        reps: args.reps,
        points: args.points,
        seed: args.seed,
        path_cap: args.paths_cap,
        sim_check: args.sim_check,
        threads: args.threads,
    };
    config.validate()?;
    log::info!(
        "{} scenarios, {} replicates per point",
        config.scenarios.len(),
        config.reps
    );
    let result = run_scenario_grid(&config)?;
    let files = emit_results(&result.table, &args.out)?;
    let records = args.out.join("records.ndjson");
    write_records(&result.records, &records)?;
    let redraws: u64 = result.records.iter().map(|r| r.redraws).sum();
    let failed = result.records.iter().filter(|r| !r.generated).count();
    log::info!(
        "{} task sets, {redraws} redraws, {failed} generation failures",
        result.records.len()
    );
    if args.sim_check {
        let violations: usize = result
            .records
            .iter()
            .flat_map(|r| &r.verdicts)
            .filter_map(|v| v.sim.as_ref())
            .map(|s| s.violations())
            .sum();
        log::info!("simulation audit: {violations} violations");
        if violations > 0 {
            eprintln!(
                "simulation audit found {violations} violations; see {}",
                records.display()
            );
        }
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    let modes = result.table.modes();
    for (i, &a) in modes.iter().enumerate() {
        for &b in &modes[i + 1..] {
            for (x, y) in [(a, b), (b, a)] {
                let c = dominance_outperformance(&result.table, x, y)?;
                println!(
                    "{x} over {y}: outperforms {:.1}%, dominates {:.1}% of {} scenarios",
                    c.outperform_pct(),
                    c.dominate_pct(),
                    c.scenarios
                );
            }
        }
    }
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let ts = read_task_set(&args.taskset)?;
    let outcome = run_method(&ts, args.mode, DEFAULT_PATH_CAP);
    let assignment = match &args.assignment {
        Some(p) => Assignment::from_json(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => match &outcome.assignment {
            Some(a) => a.clone(),
            None => bail!(
                "{} could not produce an assignment: {:?}",
                args.mode,
                outcome.verdict
            ),
        },
    };
    let horizon = args
        .horizon
        .unwrap_or_else(|| 2 * ts.tasks.iter().map(|t| t.period).max().unwrap_or(1));
    let mut config = SimConfig::new(horizon)
        .with_seed(args.seed)
        .with_layout(match args.layout {
            Layout::CriticalFirst => SegmentLayout::CriticalFirst,
            Layout::Spread => SegmentLayout::Spread,
            Layout::Shuffled => SegmentLayout::Shuffled,
        });
    if let Some(f) = args.scaled {
        config = config.with_execution(ExecutionModel::Scaled { min_factor: f });
    }
    if let Some(j) = args.jitter {
        config = config.with_release(ReleaseModel::Sporadic { max_jitter: j });
    }
    let trace = simulate(&ts, &assignment, &config)?;
    if let Some(p) = &args.trace {
        trace.write_ndjson(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )?;
    }
    for (task, r) in trace.max_responses() {
        println!("task {task}: max observed response {r} ns");
    }
    println!(
        "ceiling violations: {}",
        check_priority_ceiling(&trace, &ts, &assignment).len()
    );
    println!(
        "exclusion violations: {}",
        check_mutual_exclusion(&trace).len()
    );
    println!(
        "blocking violations: {}",
        check_single_lower_priority_blocking(&trace).len()
    );
    if let (Some(report), None) = (&outcome.report, &args.assignment) {
        println!(
            "bound violations: {}",
            check_response_bounds(&trace, report).len()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Grid(args) => grid(args),
        Command::Generate {
            scenario,
            utilization,
            seed,
        } => {
            let scenarios = scenario.scenarios()?;
            let [s] = scenarios.as_slice() else {
                bail!("generate takes exactly one scenario")
            };
            let ts = generate_task_set(s, utilization, &mut seeded_rng(&[seed]))?;
            println!("{}", ts.to_json());
            Ok(())
        }
        Command::Analyze {
            taskset,
            mode,
            paths_cap,
            assignment,
        } => {
            let ts = read_task_set(&taskset)?;
            let outcome = run_method(&ts, mode, paths_cap);
            eprintln!(
                "{mode}: {:?} after {} extra processors",
                outcome.verdict, outcome.rounds
            );
            if let (Some(path), Some(a)) = (assignment, &outcome.assignment) {
                fs::write(&path, a.to_json())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(report) = &outcome.report {
                println!("{}", report.to_json());
            }
            Ok(())
        }
        Command::Simulate(args) => simulate_cmd(args),
        Command::Dominance { results, a, b } => {
            let text = fs::read_to_string(&results)
                .with_context(|| format!("reading {}", results.display()))?;
            let table = ResultTable::from_csv(&text)?;
            let c = dominance_outperformance(&table, a, b)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
