//! Worst-case response-time bounds for DAG tasks under DPCP-p.
//!
//! A path's response time is bounded by
//!
//! ```text
//! r = len + B(r) + b + ⌈(I_intra + I_agent(r)) / m_i⌉
//! ```
//!
//! where `B` is inter-task blocking on global resources, `b` intra-task
//! blocking, `I_intra` the off-path workload of the task itself and
//! `I_agent` the agent workload hosted on the task's cluster. The task bound
//! is the maximum over its paths ([`Mode::Ep`]) or a single envelope that
//! takes every term at its own worst request-count vector ([`Mode::En`]).
//!
//! Tasks are analyzed in decreasing priority order; `η_j` uses the bound of
//! an already analyzed task and the deadline of one that is not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fixed_point::{div_ceil, least_fixed_point};
use crate::model::{PathProfile, Priority, ResourceId, ResourceScope, TaskId, TaskSet};
use crate::partitioning::{Assignment, AssignmentError};
use crate::Duration;

/// Per-path request counts `N^λ_{i,q}`; absent entries are zero.
pub type RequestVector = BTreeMap<ResourceId, u64>;

/// Default cap on distinct path profiles before falling back to [`Mode::En`].
pub const DEFAULT_PATH_CAP: usize = 100_000;

/// Size guard for the exhaustive joint request-count enumeration.
pub const JOINT_ENUMERATION_LIMIT: u128 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Enumerate complete paths.
    #[serde(rename = "EP")]
    Ep,
    /// Envelope over all per-path request counts `0..=N_{i,q}`.
    #[serde(rename = "EN")]
    En,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ep => "EP",
            Mode::En => "EN",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub mode: Mode,
    pub path_cap: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            mode: Mode::Ep,
            path_cap: DEFAULT_PATH_CAP,
        }
    }
}

impl AnalysisOptions {
    pub fn new(mode: Mode) -> Self {
        AnalysisOptions {
            mode,
            ..Default::default()
        }
    }
}

/// Path profiles of every task, computed once per task set and shared across
/// partitioning rounds. `Err(size)` marks a task whose profile count
/// exceeded the cap.
#[derive(Clone, Debug)]
pub struct PathCache {
    pub entries: Vec<Result<Vec<PathProfile>, usize>>,
}

impl PathCache {
    pub fn build(ts: &TaskSet, cap: usize) -> Self {
        PathCache {
            entries: ts.tasks.iter().map(|t| t.path_profiles(cap)).collect(),
        }
    }
}

/// Bound and its decomposition for one path (or the EN envelope).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathBreakdown {
    pub length: Duration,
    pub requests: RequestVector,
    #[serde(rename = "B")]
    pub inter_blocking: Duration,
    #[serde(rename = "b")]
    pub intra_blocking: Duration,
    #[serde(rename = "I_intra")]
    pub intra_interference: Duration,
    #[serde(rename = "I_agent")]
    pub agent_interference: Duration,
    /// Fixed point when converged; otherwise the first iterate past the
    /// deadline.
    #[serde(rename = "r")]
    pub response: Duration,
    pub converged: bool,
}

/// Per-task entry of a [`WcrtReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskId,
    /// `R_i`; absent when some path diverged.
    #[serde(rename = "R_ns")]
    pub response: Option<Duration>,
    #[serde(rename = "verdict")]
    pub schedulable: bool,
    /// Mode actually used (EP falls back to EN past the path cap).
    pub mode: Mode,
    pub breakdown: Vec<PathBreakdown>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WcrtReport {
    pub schedulable: bool,
    pub tasks: Vec<TaskReport>,
}

impl WcrtReport {
    pub fn response_of(&self, task: TaskId) -> Option<Duration> {
        self.tasks
            .iter()
            .find(|t| t.task == task)
            .and_then(|t| t.response)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything the bounds need about one task set under one assignment.
pub struct AnalysisContext<'a> {
    ts: &'a TaskSet,
    options: AnalysisOptions,
    cache: Option<&'a PathCache>,
    /// Analyzed bounds `R_j`, by task index.
    response: Vec<Option<Duration>>,
    cores: Vec<u64>,
    scope: Vec<ResourceScope>,
    ceiling: Vec<Option<Priority>>,
    host: Vec<Option<usize>>,
    /// Globals hosted on each processor.
    on_processor: Vec<Vec<ResourceId>>,
    /// Globals hosted on each task's cluster.
    on_cluster: Vec<Vec<ResourceId>>,
    requests: Vec<Vec<u64>>,
    cs: Vec<Vec<Duration>>,
}

impl<'a> AnalysisContext<'a> {
    pub fn new(
        ts: &'a TaskSet,
        assignment: &Assignment,
        options: AnalysisOptions,
    ) -> Result<Self, AssignmentError> {
        assignment.check(ts)?;
        let nr = ts.resources;
        let processors = assignment
            .clusters
            .iter()
            .flat_map(|c| c.processors.iter().copied())
            .chain(assignment.placement.values().copied())
            .max()
            .map_or(ts.m, |k| (k + 1).max(ts.m));
        let scope: Vec<ResourceScope> = (0..nr).map(|q| ts.scope(q)).collect();
        let mut host = vec![None; nr];
        let mut on_processor = vec![Vec::new(); processors];
        for q in 0..nr {
            if scope[q] == ResourceScope::Global {
                let k = assignment.placement[&q];
                host[q] = Some(k);
                on_processor[k].push(q);
            }
        }
        let mut cores = Vec::with_capacity(ts.tasks.len());
        let mut on_cluster = Vec::with_capacity(ts.tasks.len());
        for task in &ts.tasks {
            let cluster = assignment.cluster_of(task.id).expect("checked above");
            cores.push(cluster.processors.len() as u64);
            let mut hosted: Vec<ResourceId> = cluster
                .processors
                .iter()
                .flat_map(|&k| on_processor[k].iter().copied())
                .collect();
            hosted.sort_unstable();
            on_cluster.push(hosted);
        }
        Ok(AnalysisContext {
            ts,
            options,
            cache: None,
            response: vec![None; ts.tasks.len()],
            cores,
            ceiling: (0..nr).map(|q| ts.ceiling(q)).collect(),
            scope,
            host,
            on_processor,
            on_cluster,
            requests: ts
                .tasks
                .iter()
                .map(|t| (0..nr).map(|q| t.request_count(q)).collect())
                .collect(),
            cs: ts
                .tasks
                .iter()
                .map(|t| (0..nr).map(|q| t.cs_length(q)).collect())
                .collect(),
        })
    }

    pub fn with_cache(mut self, cache: &'a PathCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn task_set(&self) -> &TaskSet {
        self.ts
    }

    pub fn cores(&self, i: usize) -> u64 {
        self.cores[i]
    }

    pub fn set_response(&mut self, i: usize, bound: Option<Duration>) {
        self.response[i] = bound;
    }

    pub fn response(&self, i: usize) -> Option<Duration> {
        self.response[i]
    }

    fn priority(&self, i: usize) -> Priority {
        self.ts.tasks[i].priority
    }

    fn colocated(&self, q: ResourceId) -> &[ResourceId] {
        match self.host[q] {
            Some(k) => &self.on_processor[k],
            None => &[],
        }
    }

    /// `η_j(L) = ⌈(L + R̂_j) / T_j⌉`.
    pub fn eta(&self, j: usize, interval: Duration) -> u64 {
        let task = &self.ts.tasks[j];
        let bound = self.response[j].unwrap_or(task.deadline);
        div_ceil(interval + bound, task.period)
    }

    /// Higher-priority request workload on the processor hosting `q`
    /// within an interval of length `interval`.
    pub fn gamma(&self, i: usize, q: ResourceId, interval: Duration) -> Duration {
        let pi = self.priority(i);
        let coloc = self.colocated(q);
        (0..self.ts.tasks.len())
            .filter(|&h| self.priority(h) > pi)
            .map(|h| {
                let per_job: Duration = coloc
                    .iter()
                    .map(|&u| self.requests[h][u] * self.cs[h][u])
                    .sum();
                if per_job == 0 {
                    0
                } else {
                    self.eta(h, interval) * per_job
                }
            })
            .sum()
    }

    /// Longest lower-priority critical section on `q`'s processor whose
    /// resource ceiling reaches the priority of task `i`.
    pub fn beta(&self, i: usize, q: ResourceId) -> Duration {
        let pi = self.priority(i);
        let mut worst = 0;
        for &u in self.colocated(q) {
            if self.ceiling[u].is_none_or(|c| c < pi) {
                continue;
            }
            for j in 0..self.ts.tasks.len() {
                if self.priority(j) < pi && self.requests[j][u] > 0 {
                    worst = worst.max(self.cs[j][u]);
                }
            }
        }
        worst
    }

    fn surplus(&self, i: usize, q: ResourceId, path: &RequestVector) -> Duration {
        let on_path = path.get(&q).copied().unwrap_or(0);
        self.requests[i][q].saturating_sub(on_path) * self.cs[i][q]
    }

    /// `W_{i,q}`: least fixed point of the request response recurrence, or
    /// `None` when it exceeds the deadline of task `i`.
    pub fn request_response_bound(
        &self,
        i: usize,
        path: &RequestVector,
        q: ResourceId,
    ) -> Option<Duration> {
        let constant = self.cs[i][q]
            + self
                .colocated(q)
                .iter()
                .map(|&u| self.surplus(i, u, path))
                .sum::<Duration>()
            + self.beta(i, q);
        least_fixed_point(constant, self.ts.tasks[i].deadline, |w| {
            constant + self.gamma(i, q, w)
        })
    }

    /// `ε_i^k` for every processor with a nonzero term. Request counts come
    /// from `counts`, request response bounds are computed against `w_path`.
    fn epsilon(
        &self,
        i: usize,
        counts: &RequestVector,
        w_path: &RequestVector,
    ) -> Option<Vec<(usize, Duration)>> {
        let mut per_proc: BTreeMap<usize, Duration> = BTreeMap::new();
        for (&q, &n) in counts {
            if n == 0 || self.scope[q] != ResourceScope::Global {
                continue;
            }
            let w = self.request_response_bound(i, w_path, q)?;
            let k = self.host[q].expect("global resources are placed");
            *per_proc.entry(k).or_insert(0) += (self.beta(i, q) + self.gamma(i, q, w)) * n;
        }
        Some(per_proc.into_iter().collect())
    }

    /// `ζ_i^k`: every other task's requests to globals on processor `k`.
    fn zeta(&self, i: usize, k: usize, r: Duration) -> Duration {
        (0..self.ts.tasks.len())
            .filter(|&j| j != i)
            .map(|j| {
                let per_job: Duration = self.on_processor[k]
                    .iter()
                    .map(|&q| self.requests[j][q] * self.cs[j][q])
                    .sum();
                if per_job == 0 {
                    0
                } else {
                    self.eta(j, r) * per_job
                }
            })
            .sum()
    }

    fn blocking_from(&self, i: usize, eps: &[(usize, Duration)], r: Duration) -> Duration {
        eps.iter().map(|&(k, e)| e.min(self.zeta(i, k, r))).sum()
    }

    /// `B_i` for a path with request counts `path` and candidate response
    /// `r`; `None` when a request response bound diverges.
    pub fn inter_task_blocking(
        &self,
        i: usize,
        path: &RequestVector,
        r: Duration,
    ) -> Option<Duration> {
        let eps = self.epsilon(i, path, path)?;
        Some(self.blocking_from(i, &eps, r))
    }

    /// `b_i`: sibling vertices holding the same local resources, plus sibling
    /// requests on every processor the path sends requests to.
    pub fn intra_task_blocking(&self, i: usize, path: &RequestVector) -> Duration {
        let mut total = 0;
        for q in 0..self.ts.resources {
            if self.scope[q] == ResourceScope::Local(i) && path.get(&q).copied().unwrap_or(0) > 0 {
                total += self.surplus(i, q, path);
            }
        }
        for hosted in &self.on_processor {
            let touched = hosted.iter().any(|q| path.get(q).copied().unwrap_or(0) > 0);
            if touched {
                total += hosted
                    .iter()
                    .map(|&q| self.surplus(i, q, path))
                    .sum::<Duration>();
            }
        }
        total
    }

    fn local_surplus(&self, i: usize, path: &RequestVector) -> Duration {
        (0..self.ts.resources)
            .filter(|&q| self.scope[q] == ResourceScope::Local(i))
            .map(|q| self.surplus(i, q, path))
            .sum()
    }

    /// Non-critical WCET of the vertices off a path of the given length.
    fn off_path_non_critical(&self, i: usize, length: Duration, path: &RequestVector) -> Duration {
        let task = &self.ts.tasks[i];
        let on_path_cs: Duration = path.iter().map(|(&q, &n)| n * self.cs[i][q]).sum();
        let on_path_nc = length.saturating_sub(on_path_cs);
        task.non_critical_wcet()
            .unwrap_or(0)
            .saturating_sub(on_path_nc)
    }

    /// `I_i^intra` for a path of the given length and request counts.
    pub fn intra_interference(&self, i: usize, length: Duration, path: &RequestVector) -> Duration {
        self.off_path_non_critical(i, length, path) + self.local_surplus(i, path)
    }

    fn agent_from_others(&self, i: usize, r: Duration) -> Duration {
        self.on_cluster[i]
            .iter()
            .map(|&q| {
                (0..self.ts.tasks.len())
                    .filter(|&j| j != i && self.requests[j][q] > 0)
                    .map(|j| self.eta(j, r) * self.requests[j][q] * self.cs[j][q])
                    .sum::<Duration>()
            })
            .sum()
    }

    fn agent_own_surplus(&self, i: usize, path: &RequestVector) -> Duration {
        self.on_cluster[i]
            .iter()
            .map(|&q| self.surplus(i, q, path))
            .sum()
    }

    /// `I_i^A`: agent workload on globals hosted on the cluster of task `i`.
    pub fn agent_interference(&self, i: usize, path: &RequestVector, r: Duration) -> Duration {
        self.agent_from_others(i, r) + self.agent_own_surplus(i, path)
    }

    /// Ascending fixed point of the per-path recurrence, all path-only terms
    /// already evaluated.
    fn solve(&self, i: usize, terms: PathTerms) -> PathBreakdown {
        let deadline = self.ts.tasks[i].deadline;
        let m = self.cores[i];
        let PathTerms {
            length,
            requests,
            eps,
            intra_blocking,
            intra_interference,
            own_agent,
        } = terms;
        let Some(eps) = eps else {
            return PathBreakdown {
                length,
                requests,
                inter_blocking: 0,
                intra_blocking,
                intra_interference,
                agent_interference: own_agent,
                response: deadline + 1,
                converged: false,
            };
        };
        let step = |r: Duration| {
            let agent = self.agent_from_others(i, r) + own_agent;
            length
                + self.blocking_from(i, &eps, r)
                + intra_blocking
                + div_ceil(intra_interference + agent, m)
        };
        let start = length + intra_blocking;
        let fixed = least_fixed_point(start, deadline, step);
        let response = fixed.unwrap_or_else(|| {
            // replay to report the first iterate past the deadline
            let mut r = start;
            while r <= deadline {
                r = step(r);
            }
            r
        });
        let at = fixed.unwrap_or(deadline);
        PathBreakdown {
            length,
            requests,
            inter_blocking: self.blocking_from(i, &eps, at),
            intra_blocking,
            intra_interference,
            agent_interference: self.agent_from_others(i, at) + own_agent,
            response,
            converged: fixed.is_some(),
        }
    }

    /// Bound for one path, given its length and request counts.
    pub fn path_response_bound(&self, i: usize, path: &PathProfile) -> PathBreakdown {
        let requests = &path.requests;
        let terms = PathTerms {
            length: path.length,
            requests: requests.clone(),
            eps: self.epsilon(i, requests, requests),
            intra_blocking: self.intra_task_blocking(i, requests),
            intra_interference: self.intra_interference(i, path.length, requests),
            own_agent: self.agent_own_surplus(i, requests),
        };
        self.solve(i, terms)
    }

    /// Length term and off-path non-critical mass shared by the EN envelope
    /// and the joint enumeration.
    ///
    /// With `P(λ) = Σ_{v∈λ} (m_i·C_v − C'_v)`, a path contributes
    /// `len + ⌈(off + X)/m_i⌉ = ⌈(P(λ) + C'_i + X)/m_i⌉`, so using the maximum
    /// `P*` with `len = 𝓛*` covers every path at once.
    fn envelope_shape(&self, i: usize) -> (Duration, Duration) {
        let task = &self.ts.tasks[i];
        let m = self.cores[i];
        let p_star = task.longest_weighted_path(|v| {
            m * task.vertices[v].wcet - task.vertex_non_critical(v).unwrap_or(0)
        });
        let longest = task.longest_path_length();
        let off = (p_star + task.non_critical_wcet().unwrap_or(0)).saturating_sub(m * longest);
        (longest, off)
    }

    fn full_counts(&self, i: usize) -> RequestVector {
        (0..self.ts.resources)
            .filter(|&q| self.requests[i][q] > 0)
            .map(|q| (q, self.requests[i][q]))
            .collect()
    }

    /// Worst `b_i` over all request-count vectors.
    fn envelope_intra_blocking(&self, i: usize) -> Duration {
        let mut total = 0;
        for q in 0..self.ts.resources {
            if self.scope[q] == ResourceScope::Local(i) && self.requests[i][q] > 0 {
                total += (self.requests[i][q] - 1) * self.cs[i][q];
            }
        }
        for hosted in &self.on_processor {
            let used: Vec<ResourceId> = hosted
                .iter()
                .copied()
                .filter(|&q| self.requests[i][q] > 0)
                .collect();
            if let Some(cheapest) = used.iter().map(|&q| self.cs[i][q]).min() {
                let all: Duration = used
                    .iter()
                    .map(|&q| self.requests[i][q] * self.cs[i][q])
                    .sum();
                total += all - cheapest;
            }
        }
        total
    }

    /// EN envelope: each term at its own worst request-count vector.
    pub fn envelope_bound(&self, i: usize) -> PathBreakdown {
        let (length, off) = self.envelope_shape(i);
        let none = RequestVector::new();
        let full = self.full_counts(i);
        let terms = PathTerms {
            length,
            requests: full.clone(),
            eps: self.epsilon(i, &full, &none),
            intra_blocking: self.envelope_intra_blocking(i),
            intra_interference: off + self.local_surplus(i, &none),
            own_agent: self.agent_own_surplus(i, &none),
        };
        self.solve(i, terms)
    }

    /// Maximum bound over every joint request-count vector in
    /// `Π_q [0, N_{i,q}]`, with the same length envelope as EN. `None` when
    /// the vector space exceeds [`JOINT_ENUMERATION_LIMIT`]; the inner value
    /// is `None` when some vector diverges.
    pub fn joint_enumeration_bound(&self, i: usize) -> Option<Option<Duration>> {
        let used: Vec<ResourceId> = (0..self.ts.resources)
            .filter(|&q| self.requests[i][q] > 0)
            .collect();
        let size = used
            .iter()
            .fold(1u128, |acc, &q| acc * (self.requests[i][q] as u128 + 1));
        if size > JOINT_ENUMERATION_LIMIT {
            return None;
        }
        let (length, off) = self.envelope_shape(i);
        let mut digits = vec![0u64; used.len()];
        let mut worst = Some(0);
        loop {
            let vector: RequestVector = used
                .iter()
                .zip(&digits)
                .filter(|(_, &n)| n > 0)
                .map(|(&q, &n)| (q, n))
                .collect();
            let terms = PathTerms {
                length,
                requests: vector.clone(),
                eps: self.epsilon(i, &vector, &vector),
                intra_blocking: self.intra_task_blocking(i, &vector),
                intra_interference: off + self.local_surplus(i, &vector),
                own_agent: self.agent_own_surplus(i, &vector),
            };
            let result = self.solve(i, terms);
            worst = match (worst, result.converged) {
                (Some(w), true) => Some(w.max(result.response)),
                _ => None,
            };
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == used.len() {
                    return Some(worst);
                }
                if digits[pos] < self.requests[i][used[pos]] {
                    digits[pos] += 1;
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Bound for task `i` under the configured mode.
    pub fn task_wcrt(&self, i: usize) -> TaskReport {
        let task = &self.ts.tasks[i];
        let owned;
        let profiles = match self.options.mode {
            Mode::En => None,
            Mode::Ep => match self.cache {
                Some(cache) => cache.entries[i].as_ref().ok(),
                None => {
                    owned = task.path_profiles(self.options.path_cap);
                    owned.as_ref().ok()
                }
            },
        };
        let (mode, breakdown) = match profiles {
            Some(profiles) => (
                Mode::Ep,
                profiles
                    .iter()
                    .map(|p| self.path_response_bound(i, p))
                    .collect(),
            ),
            None => (Mode::En, vec![self.envelope_bound(i)]),
        };
        let response = breakdown
            .iter()
            .try_fold(0, |acc: Duration, b: &PathBreakdown| {
                b.converged.then(|| acc.max(b.response))
            });
        TaskReport {
            task: task.id,
            response,
            schedulable: response.is_some_and(|r| r <= task.deadline),
            mode,
            breakdown,
        }
    }

    /// Analyzes tasks in decreasing priority order, recording each bound for
    /// the `η` of later tasks. Stops at the first failure when `stop_early`.
    /// Returns the reports in analysis order and the first failing index.
    pub fn priority_pass(&mut self, stop_early: bool) -> (Vec<(usize, TaskReport)>, Option<usize>) {
        let mut reports = Vec::with_capacity(self.ts.tasks.len());
        let mut first_failure = None;
        for i in self.ts.by_priority() {
            let report = self.task_wcrt(i);
            self.response[i] = report.response.filter(|_| report.schedulable);
            let failed = !report.schedulable;
            reports.push((i, report));
            if failed && first_failure.is_none() {
                first_failure = Some(i);
                if stop_early {
                    break;
                }
            }
        }
        (reports, first_failure)
    }

    /// Full analysis: a priority-ordered pass, then, if every task passed, a
    /// second pass in which every `η_j` uses the computed `R_j`.
    pub fn analyze(&mut self) -> WcrtReport {
        let (mut reports, failure) = self.priority_pass(false);
        if failure.is_none() {
            reports = self.priority_pass(false).0;
        }
        reports.sort_by_key(|(i, _)| *i);
        let tasks: Vec<TaskReport> = reports.into_iter().map(|(_, r)| r).collect();
        WcrtReport {
            schedulable: tasks.iter().all(|t| t.schedulable),
            tasks,
        }
    }
}

struct PathTerms {
    length: Duration,
    requests: RequestVector,
    eps: Option<Vec<(usize, Duration)>>,
    intra_blocking: Duration,
    intra_interference: Duration,
    own_agent: Duration,
}

/// Analyzes a task set under a fixed assignment.
pub fn analyze(
    ts: &TaskSet,
    assignment: &Assignment,
    options: AnalysisOptions,
) -> Result<WcrtReport, AssignmentError> {
    let cache = (options.mode == Mode::Ep).then(|| PathCache::build(ts, options.path_cap));
    let mut ctx = AnalysisContext::new(ts, assignment, options)?;
    if let Some(cache) = &cache {
        ctx = ctx.with_cache(cache);
    }
    Ok(ctx.analyze())
}
