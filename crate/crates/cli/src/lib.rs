//! Acceptance-ratio experiments over generated task sets.
//!
//! Every replicate draws one task set from a seed derived from
//! `(seed, scenario, point, replicate, attempt)` and evaluates every method
//! on that same task set. Replicates run in parallel; results are collected
//! in key order, so the output does not depend on the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use dpcpp::analysis::DEFAULT_PATH_CAP;
use dpcpp::generator::{derive_seed, generate_task_set, seeded_rng, Scenario, ScenarioError};
use dpcpp::model::TaskSet;
use dpcpp::partitioning::{run_method, FailureStage, Method, PartitionOutcome, Verdict};
use dpcpp::simulator::{
    check_mutual_exclusion, check_priority_ceiling, check_response_bounds,
    check_single_lower_priority_blocking, simulate, ExecutionModel, SimConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generation attempts per replicate before it is recorded as rejected.
pub const MAX_ATTEMPTS: u64 = 100;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub modes: Vec<Method>,
    /// Task sets per utilization point.
    pub reps: usize,
    /// Number of utilization points; `None` uses steps of `0.05·m`.
    pub points: Option<usize>,
    pub seed: u64,
    pub path_cap: usize,
    /// Simulate every task set a protocol mode accepts and audit the trace.
    pub sim_check: bool,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenarios: vec![Scenario::default()],
            modes: Method::ALL.to_vec(),
            reps: 100,
            points: None,
            seed: 1,
            path_cap: DEFAULT_PATH_CAP,
            sim_check: false,
            threads: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("at least one mode is required")]
    NoModes,
    #[error("at least one scenario is required")]
    NoScenarios,
    #[error("replicates per point must be at least 1")]
    NoReplicates,
    #[error("mode {0} listed twice")]
    DuplicateMode(Method),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.modes.is_empty() {
            return Err(ConfigError::NoModes);
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(ConfigError::DuplicateMode(*m));
            }
        }
        if self.scenarios.is_empty() {
            return Err(ConfigError::NoScenarios);
        }
        if self.reps == 0 {
            return Err(ConfigError::NoReplicates);
        }
        for s in &self.scenarios {
            s.check()?;
        }
        Ok(())
    }
}

/// Trace audit totals for one accepted task set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSummary {
    pub runs: usize,
    pub jobs: usize,
    pub bound_violations: usize,
    pub ceiling_violations: usize,
    pub blocking_violations: usize,
    pub exclusion_violations: usize,
}

impl SimSummary {
    pub fn violations(&self) -> usize {
        self.bound_violations
            + self.ceiling_violations
            + self.blocking_violations
            + self.exclusion_violations
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeVerdict {
    pub mode: Method,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<FailureStage>,
    pub rounds: usize,
    /// Bounds per task id, when accepted.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bounds: Option<BTreeMap<usize, u64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sim: Option<SimSummary>,
}

/// One generated task set and every method's verdict on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scenario: String,
    pub scenario_index: usize,
    pub point: usize,
    pub upoint: f64,
    pub rep: usize,
    /// `(seed, scenario, point, replicate, attempt)` of the accepted draw.
    pub seed: [u64; 5],
    /// Failed generation attempts before `seed`.
    pub redraws: u64,
    pub generated: bool,
    pub verdicts: Vec<ModeVerdict>,
}

impl Record {
    pub fn accepted(&self, mode: Method) -> Option<bool> {
        self.verdicts
            .iter()
            .find(|v| v.mode == mode)
            .map(|v| v.accepted)
    }
}

/// Scenario parameters carried on every result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: String,
    pub m: usize,
    pub nr_lo: usize,
    pub nr_hi: usize,
    pub uavg: f64,
    pub pr: f64,
    pub nmax: u32,
    pub llo_us: u64,
    pub lhi_us: u64,
    pub upoint: f64,
    pub mode: Method,
    pub accepted: usize,
    pub total: usize,
}

impl Row {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    scenario: String,
    m: usize,
    nr_lo: usize,
    nr_hi: usize,
    uavg: f64,
    pr: f64,
    nmax: u32,
    llo_us: u64,
    lhi_us: u64,
    upoint: f64,
    mode: String,
    accepted: usize,
    total: usize,
    ratio: f64,
}

pub const CSV_HEADER: &str =
    "scenario,m,nr_lo,nr_hi,uavg,pr,nmax,llo_us,lhi_us,upoint,mode,accepted,total,ratio";

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unknown mode `{0}`")]
    Mode(String),
    #[error("row {row}: accepted {accepted} exceeds total {total}")]
    Count {
        row: usize,
        accepted: usize,
        total: usize,
    },
    #[error("unexpected header `{0}`")]
    Header(String),
}

/// Accepted/total counts per scenario, utilization point and mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn from_records(config: &ExperimentConfig, records: &[Record]) -> ResultTable {
        let mut counts: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        let mut totals: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in records {
            *totals.entry((r.scenario_index, r.point)).or_insert(0) += 1;
            for (mi, mode) in config.modes.iter().enumerate() {
                if r.accepted(*mode) == Some(true) {
                    *counts.entry((r.scenario_index, r.point, mi)).or_insert(0) += 1;
                }
            }
        }
        let mut rows = Vec::new();
        for (si, s) in config.scenarios.iter().enumerate() {
            for (pi, &u) in s.utilization_grid(config.points).iter().enumerate() {
                for (mi, &mode) in config.modes.iter().enumerate() {
                    rows.push(Row {
                        scenario: s.id(),
                        m: s.m,
                        nr_lo: s.nr_lo,
                        nr_hi: s.nr_hi,
                        uavg: s.uavg,
                        pr: s.pr,
                        nmax: s.nmax,
                        llo_us: s.llo_us,
                        lhi_us: s.lhi_us,
                        upoint: u,
                        mode,
                        accepted: counts.get(&(si, pi, mi)).copied().unwrap_or(0),
                        total: totals.get(&(si, pi)).copied().unwrap_or(0),
                    });
                }
            }
        }
        ResultTable { rows }
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                scenario: r.scenario.clone(),
                m: r.m,
                nr_lo: r.nr_lo,
                nr_hi: r.nr_hi,
                uavg: r.uavg,
                pr: r.pr,
                nmax: r.nmax,
                llo_us: r.llo_us,
                lhi_us: r.lhi_us,
                upoint: r.upoint,
                mode: r.mode.name().to_string(),
                accepted: r.accepted,
                total: r.total,
                ratio: r.ratio(),
            })?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<ResultTable, TableError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != CSV_HEADER {
            return Err(TableError::Header(header));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<CsvRow>().enumerate() {
            let r = rec?;
            let mode = Method::parse(&r.mode).ok_or_else(|| TableError::Mode(r.mode.clone()))?;
            if r.accepted > r.total {
                return Err(TableError::Count {
                    row: i + 1,
                    accepted: r.accepted,
                    total: r.total,
                });
            }
            rows.push(Row {
                scenario: r.scenario,
                m: r.m,
                nr_lo: r.nr_lo,
                nr_hi: r.nr_hi,
                uavg: r.uavg,
                pr: r.pr,
                nmax: r.nmax,
                llo_us: r.llo_us,
                lhi_us: r.lhi_us,
                upoint: r.upoint,
                mode,
                accepted: r.accepted,
                total: r.total,
            });
        }
        Ok(ResultTable { rows })
    }

    /// Scenario ids in first-appearance order.
    pub fn scenarios(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.scenario) {
                out.push(r.scenario.clone());
            }
        }
        out
    }

    pub fn modes(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.mode) {
                out.push(r.mode);
            }
        }
        out
    }

    /// Rows of one scenario and mode, in utilization order.
    pub fn curve(&self, scenario: &str, mode: Method) -> Vec<&Row> {
        let mut rows: Vec<&Row> = self
            .rows
            .iter()
            .filter(|r| r.scenario == scenario && r.mode == mode)
            .collect();
        rows.sort_by(|a, b| a.upoint.total_cmp(&b.upoint));
        rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub table: ResultTable,
    pub records: Vec<Record>,
}

fn outcome_verdict(mode: Method, outcome: &PartitionOutcome) -> ModeVerdict {
    let stage = match outcome.verdict {
        Verdict::Schedulable => None,
        Verdict::Unschedulable { stage, .. } => Some(stage),
    };
    let bounds = outcome.report.as_ref().map(|rep| {
        rep.tasks
            .iter()
            .filter_map(|t| t.response.map(|r| (t.task, r)))
            .collect()
    });
    ModeVerdict {
        mode,
        accepted: outcome.verdict.is_schedulable(),
        stage,
        rounds: outcome.rounds,
        bounds,
        sim: None,
    }
}

/// Simulates an accepted task set once with WCET execution and once with
/// scaled execution, and audits both traces.
pub fn audit_by_simulation(ts: &TaskSet, outcome: &PartitionOutcome, seed: u64) -> SimSummary {
    let mut summary = SimSummary::default();
    let (Some(assignment), Some(report)) = (&outcome.assignment, &outcome.report) else {
        return summary;
    };
    let horizon = ts.tasks.iter().map(|t| t.period).max().unwrap_or(1) * 2;
    let configs = [
        SimConfig::new(horizon).with_seed(seed),
        SimConfig::new(horizon)
            .with_seed(seed)
            .with_execution(ExecutionModel::Scaled { min_factor: 0.5 }),
    ];
    for config in configs {
        let trace = match simulate(ts, assignment, &config) {
            Ok(t) => t,
            Err(e) => {
                log::error!("simulation rejected an accepted task set: {e}");
                summary.bound_violations += 1;
                continue;
            }
        };
        summary.runs += 1;
        summary.jobs += trace.jobs().len();
        summary.bound_violations += check_response_bounds(&trace, report).len();
        summary.ceiling_violations += check_priority_ceiling(&trace, ts, assignment).len();
        summary.blocking_violations += check_single_lower_priority_blocking(&trace).len();
        summary.exclusion_violations += check_mutual_exclusion(&trace).len();
    }
    summary
}

/// Draws the task set of one replicate, redrawing with the next attempt
/// index on failure.
pub fn draw_task_set(
    seed: u64,
    scenario_index: usize,
    scenario: &Scenario,
    point: usize,
    upoint: f64,
    rep: usize,
) -> (Option<TaskSet>, [u64; 5], u64) {
    let mut key = [seed, scenario_index as u64, point as u64, rep as u64, 0];
    for attempt in 0..MAX_ATTEMPTS {
        key[4] = attempt;
        match generate_task_set(scenario, upoint, &mut seeded_rng(&key)) {
            Ok(ts) => return (Some(ts), key, attempt),
            Err(e) => log::debug!(
                "{} U={upoint} rep {rep} attempt {attempt}: {e}",
                scenario.id()
            ),
        }
    }
    log::warn!(
        "{} U={upoint} rep {rep}: generation failed {MAX_ATTEMPTS} times",
        scenario.id()
    );
    (None, key, MAX_ATTEMPTS)
}

fn evaluate(
    config: &ExperimentConfig,
    si: usize,
    scenario: &Scenario,
    point: usize,
    upoint: f64,
    rep: usize,
) -> Record {
    let (ts, key, redraws) = draw_task_set(config.seed, si, scenario, point, upoint, rep);
    let verdicts = match &ts {
        None => config
            .modes
            .iter()
            .map(|&mode| ModeVerdict {
                mode,
                accepted: false,
                stage: None,
                rounds: 0,
                bounds: None,
                sim: None,
            })
            .collect(),
        Some(ts) => config
            .modes
            .iter()
            .map(|&mode| {
                let outcome = run_method(ts, mode, config.path_cap);
                let mut v = outcome_verdict(mode, &outcome);
                if config.sim_check && v.accepted && mode != Method::FedFp {
                    v.sim = Some(audit_by_simulation(ts, &outcome, derive_seed(&key)));
                }
                v
            })
            .collect(),
    };
    Record {
        scenario: scenario.id(),
        scenario_index: si,
        point,
        upoint,
        rep,
        seed: key,
        redraws,
        generated: ts.is_some(),
        verdicts,
    }
}

/// Runs every scenario × utilization point × replicate.
pub fn run_scenario_grid(config: &ExperimentConfig) -> Result<GridResult, ConfigError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (si, s) in config.scenarios.iter().enumerate() {
        for (pi, u) in s.utilization_grid(config.points).into_iter().enumerate() {
            for rep in 0..config.reps {
                jobs.push((si, pi, u, rep));
            }
        }
    }
    let run = || -> Vec<Record> {
        jobs.par_iter()
            .map(|&(si, pi, u, rep)| evaluate(config, si, &config.scenarios[si], pi, u, rep))
            .collect()
    };
    let records = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ConfigError::Pool(e.to_string()))?
            .install(run),
        None => run(),
    };
    let table = ResultTable::from_records(config, &records);
    Ok(GridResult { table, records })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub mode_a: Method,
    pub mode_b: Method,
    pub scenarios: usize,
    /// Scenarios where A accepted strictly more task sets in total.
    pub outperform: usize,
    /// Scenarios where A's ratio is never below B's and above it somewhere.
    pub dominate: usize,
}

impl Comparison {
    pub fn outperform_pct(&self) -> f64 {
        pct(self.outperform, self.scenarios)
    }

    pub fn dominate_pct(&self) -> f64 {
        pct(self.dominate, self.scenarios)
    }
}

fn pct(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ComparisonError {
    #[error("scenario {scenario}: modes were evaluated on different task sets")]
    Mismatch { scenario: String },
    #[error("mode {0} does not appear in the table")]
    MissingMode(Method),
}

/// Outperformance and dominance of `a` over `b`, scenario by scenario.
pub fn dominance_outperformance(
    table: &ResultTable,
    a: Method,
    b: Method,
) -> Result<Comparison, ComparisonError> {
    let modes = table.modes();
    for m in [a, b] {
        if !modes.contains(&m) {
            return Err(ComparisonError::MissingMode(m));
        }
    }
    let mut cmp = Comparison {
        mode_a: a,
        mode_b: b,
        scenarios: 0,
        outperform: 0,
        dominate: 0,
    };
    for s in table.scenarios() {
        let ca = table.curve(&s, a);
        let cb = table.curve(&s, b);
        if ca.len() != cb.len()
            || ca
                .iter()
                .zip(&cb)
                .any(|(x, y)| x.upoint != y.upoint || x.total != y.total)
        {
            return Err(ComparisonError::Mismatch { scenario: s });
        }
        cmp.scenarios += 1;
        let ta: usize = ca.iter().map(|r| r.accepted).sum();
        let tb: usize = cb.iter().map(|r| r.accepted).sum();
        if ta > tb {
            cmp.outperform += 1;
        }
        let never_worse = ca.iter().zip(&cb).all(|(x, y)| x.accepted >= y.accepted);
        let somewhere_better = ca.iter().zip(&cb).any(|(x, y)| x.accepted > y.accepted);
        if never_worse && somewhere_better {
            cmp.dominate += 1;
        }
    }
    Ok(cmp)
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("nothing to write: the result table is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Table(#[from] TableError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn file_stem(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `results.csv` and one `plot/<scenario>_<mode>.csv` per curve.
pub fn emit_results(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    if table.rows.is_empty() {
        return Err(EmitError::Empty);
    }
    let plot_dir = dir.join("plot");
    fs::create_dir_all(&plot_dir).map_err(io_at(&plot_dir))?;
    let results = dir.join("results.csv");
    fs::write(&results, table.to_csv()).map_err(io_at(&results))?;
    let mut written = vec![results];
    for s in table.scenarios() {
        for mode in table.modes() {
            let curve = table.curve(&s, mode);
            if curve.is_empty() {
                continue;
            }
            let mut text = String::from("normalized_utilization,ratio\n");
            for r in curve {
                text.push_str(&format!("{},{}\n", r.upoint / r.m as f64, r.ratio()));
            }
            let path = plot_dir.join(format!("{}_{}.csv", file_stem(&s), file_stem(mode.name())));
            fs::write(&path, text).map_err(io_at(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One JSON object per replicate.
pub fn write_records(records: &[Record], path: &Path) -> Result<(), EmitError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_at(path))
}
