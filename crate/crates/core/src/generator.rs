//! Synthetic heavy DAG task sets.
//!
//! Utilizations come from RandFixedSum, DAGs from the Erdős–Rényi `G(n, p)`
//! model restricted to forward edges, periods from a log-uniform
//! distribution, and resource usage from per-resource coin flips. Every draw
//! goes through a caller-provided RNG so a seed reproduces a task set bit for
//! bit.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;
use rand::distributions::uniform::SampleUniform;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_task_set, Task, TaskSet, Vertex};
use crate::Duration;

type Edges = Vec<(usize, usize)>;

const NS_PER_US: u64 = 1_000;
const NS_PER_MS: u64 = 1_000_000;
const MAX_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Error)]
#[error("cannot draw {n} values in [{lo}, {hi}] summing to {total}")]
pub struct InfeasibleBounds {
    pub n: usize,
    pub total: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `n` values uniformly distributed on `{x ∈ [lo, hi]^n : Σx = total}`
/// (Stafford's RandFixedSum).
pub fn rand_fixed_sum<F, R>(
    n: usize,
    total: F,
    lo: F,
    hi: F,
    rng: &mut R,
) -> Result<Vec<F>, InfeasibleBounds>
where
    F: Float + SampleUniform,
    R: Rng + ?Sized,
{
    let nf = F::from(n).unwrap();
    let slack = F::from(1e-9).unwrap() * total.abs().max(F::one());
    let infeasible = || InfeasibleBounds {
        n,
        total: total.to_f64().unwrap_or(f64::NAN),
        lo: lo.to_f64().unwrap_or(f64::NAN),
        hi: hi.to_f64().unwrap_or(f64::NAN),
    };
    if n == 0 || lo > hi || total < nf * lo - slack || total > nf * hi + slack {
        return Err(infeasible());
    }
    if n == 1 {
        return Ok(vec![total]);
    }
    let width = hi - lo;
    if width <= F::zero() {
        return Ok(vec![lo; n]);
    }
    let zero = F::zero();
    let one = F::one();
    // rescale to the unit cube: Σy = s with y ∈ [0, 1]^n
    let s = ((total - nf * lo) / width).max(zero).min(nf);
    let k = s.floor().to_usize().unwrap_or(0).min(n - 1);
    let kf = F::from(k).unwrap();
    let s = s.max(kf).min(kf + one);
    // s1[j] = s − (k − j), s2[j] = (k + n − j) − s for j in 0..n
    let s1: Vec<F> = (0..n).map(|j| s - (kf - F::from(j).unwrap())).collect();
    let s2: Vec<F> = (0..n)
        .map(|j| (kf + nf - F::from(j).unwrap()) - s)
        .collect();
    let huge = F::max_value() / F::from(1e8).unwrap_or(F::one());
    let tiny = F::min_positive_value();
    // w[i][c], c in 0..=n; t[i][c], i in 0..n-1
    let mut w = vec![vec![zero; n + 1]; n];
    w[0][1] = huge;
    let mut t = vec![vec![zero; n]; n - 1];
    for i in 2..=n {
        let fi = F::from(i).unwrap();
        for c in 0..i {
            let tmp1 = w[i - 2][c + 1] * s1[c] / fi;
            let tmp2 = w[i - 2][c] * s2[n - i + c] / fi;
            w[i - 1][c + 1] = tmp1 + tmp2;
            let tmp3 = w[i - 1][c + 1] + tiny;
            t[i - 2][c] = if s2[n - i + c] > s1[c] {
                tmp2 / tmp3
            } else {
                one - tmp1 / tmp3
            };
        }
    }
    let mut x = vec![zero; n];
    let mut rem = s;
    let mut j = k + 1;
    let mut sm = zero;
    let mut pr = one;
    for i in (1..n).rev() {
        let fi = F::from(i).unwrap();
        let rt: F = rng.gen_range(zero..one);
        let rs: F = rng.gen_range(zero..one);
        let e = rt <= t[i - 1][j - 1];
        let sx = rs.powf(one / fi);
        sm = sm + (one - sx) * pr * rem / (fi + one);
        pr = sx * pr;
        x[n - i - 1] = sm + if e { pr } else { zero };
        if e {
            rem = rem - one;
            j -= 1;
        }
    }
    x[n - 1] = sm + pr * rem;
    x.shuffle(rng);
    Ok(x.into_iter()
        .map(|y| (lo + width * y).max(lo).min(hi))
        .collect())
}

/// Forward-edge `G(n, p)`: every pair `a < b` gets the edge `a → b` with
/// probability `edge_prob`.
pub fn generate_dag<R: Rng + ?Sized>(
    n_vertices: usize,
    edge_prob: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n_vertices {
        for b in a + 1..n_vertices {
            if rng.gen_bool(edge_prob.clamp(0.0, 1.0)) {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// One experimental configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    pub nr_lo: usize,
    pub nr_hi: usize,
    pub uavg: f64,
    /// Probability that a task uses a given resource.
    pub pr: f64,
    /// Request counts are drawn from `[1, nmax]`.
    pub nmax: u32,
    pub llo_us: u64,
    pub lhi_us: u64,
    pub vertices_lo: usize,
    pub vertices_hi: usize,
    pub edge_prob: f64,
    pub period_lo_ms: u64,
    pub period_hi_ms: u64,
    /// `D_i = T_i · deadline_ratio`.
    pub deadline_ratio: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            m: 16,
            nr_lo: 4,
            nr_hi: 8,
            uavg: 1.5,
            pr: 0.5,
            nmax: 50,
            llo_us: 50,
            lhi_us: 100,
            vertices_lo: 10,
            vertices_hi: 100,
            edge_prob: 0.1,
            period_lo_ms: 10,
            period_hi_ms: 1000,
            deadline_ratio: 1.0,
        }
    }
}

impl Scenario {
    /// The full experimental cross product (216 scenarios).
    pub fn full_grid() -> Vec<Scenario> {
        let mut out = Vec::new();
        for m in [8, 16, 32] {
            for (nr_lo, nr_hi) in [(2, 4), (4, 8), (8, 16)] {
                for uavg in [1.5, 2.0] {
                    for pr in [0.5, 0.75, 1.0] {
                        for nmax in [25, 50] {
                            for (llo_us, lhi_us) in [(15, 50), (50, 100)] {
                                out.push(Scenario {
                                    m,
                                    nr_lo,
                                    nr_hi,
                                    uavg,
                                    pr,
                                    nmax,
                                    llo_us,
                                    lhi_us,
                                    ..Default::default()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Stable identifier used in result files.
    pub fn id(&self) -> String {
        format!(
            "m{}-nr{}_{}-u{}-p{}-n{}-l{}_{}",
            self.m, self.nr_lo, self.nr_hi, self.uavg, self.pr, self.nmax, self.llo_us, self.lhi_us
        )
    }

    /// Total-utilization grid. Without `points`: `1 + k·0.05·m` for
    /// `k ≥ 1` up to `m`. With `points = P`: `P` evenly spaced values in
    /// `(1, m]`.
    pub fn utilization_grid(&self, points: Option<usize>) -> Vec<f64> {
        let m = self.m as f64;
        match points {
            Some(p) => (1..=p)
                .map(|k| (p as f64 + k as f64 * (m - 1.0)) / p as f64)
                .collect(),
            None => (1..)
                .map(|k| (20.0 + k as f64 * m) / 20.0)
                .take_while(|&u| u <= m + 1e-9)
                .collect(),
        }
    }

    /// Parses flat `key=value` lines; unknown keys are rejected, missing
    /// keys keep their defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ScenarioError::Syntax { line: lineno + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ScenarioError::Value {
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "m" => s.m = value.parse().map_err(|_| bad())?,
                "nr" => {
                    let (lo, hi) = parse_range(value).ok_or_else(bad)?;
                    s.nr_lo = lo as usize;
                    s.nr_hi = hi as usize;
                }
                "nr_lo" => s.nr_lo = value.parse().map_err(|_| bad())?,
                "nr_hi" => s.nr_hi = value.parse().map_err(|_| bad())?,
                "uavg" => s.uavg = value.parse().map_err(|_| bad())?,
                "pr" => s.pr = value.parse().map_err(|_| bad())?,
                "nmax" => s.nmax = value.parse().map_err(|_| bad())?,
                "lrange" | "l_us" => {
                    let (lo, hi) = parse_range(value).ok_or_else(bad)?;
                    s.llo_us = lo;
                    s.lhi_us = hi;
                }
                "llo_us" => s.llo_us = value.parse().map_err(|_| bad())?,
                "lhi_us" => s.lhi_us = value.parse().map_err(|_| bad())?,
                "vertices" => {
                    let (lo, hi) = parse_range(value).ok_or_else(bad)?;
                    s.vertices_lo = lo as usize;
                    s.vertices_hi = hi as usize;
                }
                "edge_prob" => s.edge_prob = value.parse().map_err(|_| bad())?,
                "period_ms" => {
                    let (lo, hi) = parse_range(value).ok_or_else(bad)?;
                    s.period_lo_ms = lo;
                    s.period_hi_ms = hi;
                }
                "deadline_ratio" => s.deadline_ratio = value.parse().map_err(|_| bad())?,
                _ => return Err(ScenarioError::UnknownKey(key.to_string())),
            }
        }
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |what: &str| Err(ScenarioError::Invalid(what.to_string()));
        if self.m == 0 {
            return invalid("m must be positive");
        }
        if self.nr_lo > self.nr_hi {
            return invalid("nr range is empty");
        }
        if self.uavg.is_nan() || self.uavg <= 1.0 {
            return invalid("uavg must exceed 1 for heavy tasks");
        }
        if !(0.0..=1.0).contains(&self.pr) {
            return invalid("pr must be a probability");
        }
        if self.nmax == 0 || self.llo_us == 0 || self.llo_us > self.lhi_us {
            return invalid("request or critical-section range is empty");
        }
        if self.vertices_lo == 0 || self.vertices_lo > self.vertices_hi {
            return invalid("vertex range is empty");
        }
        if self.period_lo_ms == 0 || self.period_lo_ms > self.period_hi_ms {
            return invalid("period range is empty");
        }
        if !(self.deadline_ratio > 0.0 && self.deadline_ratio <= 1.0) {
            return invalid("deadline_ratio must lie in (0, 1]");
        }
        Ok(())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "m={}", self.m)?;
        writeln!(f, "nr={}-{}", self.nr_lo, self.nr_hi)?;
        writeln!(f, "uavg={}", self.uavg)?;
        writeln!(f, "pr={}", self.pr)?;
        writeln!(f, "nmax={}", self.nmax)?;
        writeln!(f, "lrange={}-{}", self.llo_us, self.lhi_us)?;
        writeln!(f, "vertices={}-{}", self.vertices_lo, self.vertices_hi)?;
        writeln!(f, "edge_prob={}", self.edge_prob)?;
        writeln!(f, "period_ms={}-{}", self.period_lo_ms, self.period_hi_ms)?;
        writeln!(f, "deadline_ratio={}", self.deadline_ratio)
    }
}

fn parse_range(text: &str) -> Option<(u64, u64)> {
    let text = text.trim().trim_start_matches('[').trim_end_matches(']');
    let (lo, hi) = text.split_once(['-', ',', ':'])?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown scenario key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// A constraint generation could not satisfy within the retry budget.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum GenerationError {
    #[error("target utilization {target} cannot be split into heavy tasks with uavg {uavg}")]
    Utilization { target: f64, uavg: f64 },
    #[error("task {task}: critical sections do not fit into the vertex WCETs")]
    CriticalSections { task: usize },
    #[error("task {task}: longest path stays at or above half the deadline")]
    LongestPath { task: usize },
    #[error("generated task set is invalid: {0}")]
    Invalid(String),
}

/// Number of tasks for a total utilization: `round(U / uavg)`, clamped so
/// that every task can have utilization in `(1, 2·uavg]`.
pub fn task_count(total: f64, uavg: f64) -> Option<usize> {
    let hi = 2.0 * uavg;
    let min = (total / hi).ceil().max(1.0) as usize;
    // strictly more than one unit per task
    let max = ((total - 1e-9).ceil() as usize).saturating_sub(1);
    if min > max {
        return None;
    }
    Some(((total / uavg).round() as usize).clamp(min, max))
}

/// Splits `total` into `n` non-negative integers proportional to `weights`,
/// preserving the sum exactly (largest remainder).
pub fn split_integer(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

fn longest_path_of(wcets: &[u64], edges: &[(usize, usize)]) -> (u64, Vec<usize>) {
    // edges always go from lower to higher index, so index order is topological
    let n = wcets.len();
    let mut best = vec![0u64; n];
    let mut from = vec![usize::MAX; n];
    let mut preds = vec![Vec::new(); n];
    for &(a, b) in edges {
        preds[b].push(a);
    }
    for v in 0..n {
        let (p, len) = preds[v]
            .iter()
            .map(|&p| (p, best[p]))
            .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
            .unwrap_or((usize::MAX, 0));
        best[v] = len + wcets[v];
        from[v] = p;
    }
    let Some(end) = (0..n).max_by(|&a, &b| best[a].cmp(&best[b]).then(b.cmp(&a))) else {
        return (0, Vec::new());
    };
    let mut path = vec![end];
    let mut v = end;
    while from[v] != usize::MAX {
        v = from[v];
        path.push(v);
    }
    path.reverse();
    (best[end], path)
}

/// Moves WCET mass off the current longest path until it is shorter than
/// `limit`. Returns `false` if that is impossible.
fn shrink_longest_path(wcets: &mut [u64], edges: &[(usize, usize)], limit: u64) -> bool {
    for _ in 0..10_000 {
        let (len, path) = longest_path_of(wcets, edges);
        if len < limit {
            return true;
        }
        let off: Vec<usize> = (0..wcets.len()).filter(|v| !path.contains(v)).collect();
        if off.is_empty() {
            return false;
        }
        let excess = len - limit + 1;
        let mut moved = 0;
        let weights: Vec<f64> = path.iter().map(|&v| wcets[v] as f64).collect();
        for (&v, cut) in path.iter().zip(split_integer(excess, &weights)) {
            let cut = cut.min(wcets[v].saturating_sub(1));
            wcets[v] -= cut;
            moved += cut;
        }
        if moved == 0 {
            return false;
        }
        let share = split_integer(moved, &vec![1.0; off.len()]);
        for (&v, add) in off.iter().zip(share) {
            wcets[v] += add;
        }
    }
    false
}

/// Distributes requests one at a time over vertices whose spare WCET still
/// covers one more critical section.
fn split_demands<R: Rng + ?Sized>(
    wcets: &[u64],
    demands: &[(usize, u32, Duration)],
    rng: &mut R,
) -> Option<Vec<BTreeMap<usize, u32>>> {
    let n = wcets.len();
    for _ in 0..MAX_RETRIES {
        let mut spare = wcets.to_vec();
        let mut out = vec![BTreeMap::new(); n];
        let mut ok = true;
        'res: for &(q, count, len) in demands {
            for _ in 0..count {
                let fits: Vec<usize> = (0..n).filter(|&v| spare[v] >= len).collect();
                let Some(&v) = fits.as_slice().choose(rng) else {
                    ok = false;
                    break 'res;
                };
                spare[v] -= len;
                *out[v].entry(q).or_insert(0) += 1;
            }
        }
        if ok {
            return Some(out);
        }
    }
    None
}

/// Draws one heavy task; `index` becomes its id.
fn generate_task<R: Rng + ?Sized>(
    scenario: &Scenario,
    index: usize,
    utilization: f64,
    n_resources: usize,
    rng: &mut R,
) -> Result<Task, GenerationError> {
    let period_ns = log_uniform(
        (scenario.period_lo_ms * NS_PER_MS) as f64,
        (scenario.period_hi_ms * NS_PER_MS) as f64,
        rng,
    )
    .round() as u64;
    let wcet = (utilization * period_ns as f64).round() as u64;
    let deadline =
        ((period_ns as f64 * scenario.deadline_ratio).floor() as u64).clamp(1, period_ns);
    let task_base = Task::new(index, 0, period_ns, deadline);

    // resource usage, redrawn while the critical sections cannot fit at all
    let mut usage: Vec<(usize, u32, Duration)> = Vec::new();
    for attempt in 0..=MAX_RETRIES {
        usage.clear();
        for q in 0..n_resources {
            if rng.gen_bool(scenario.pr) {
                let count = rng.gen_range(1..=scenario.nmax);
                let len = rng.gen_range(scenario.llo_us * NS_PER_US..=scenario.lhi_us * NS_PER_US);
                usage.push((q, count, len));
            }
        }
        let demand: u64 = usage.iter().map(|&(_, n, l)| u64::from(n) * l).sum();
        if demand <= wcet {
            break;
        }
        if attempt == MAX_RETRIES {
            return Err(GenerationError::CriticalSections { task: index });
        }
    }

    let limit = deadline / 2 + deadline % 2; // 𝓛* < D/2 ⇔ 𝓛* < ⌈D/2⌉ for integers
    let mut last: Option<(Vec<u64>, Edges)> = None;
    for _ in 0..MAX_RETRIES {
        let n_vertices = rng.gen_range(scenario.vertices_lo..=scenario.vertices_hi);
        let edges = generate_dag(n_vertices, scenario.edge_prob, rng);
        let weights: Vec<f64> = (0..n_vertices)
            .map(|_| rng.gen_range(f64::EPSILON..1.0))
            .collect();
        let wcets = split_integer(wcet, &weights);
        if longest_path_of(&wcets, &edges).0 < limit {
            if let Some(split) = split_demands(&wcets, &usage, rng) {
                return Ok(assemble(task_base, wcets, edges, split, &usage));
            }
        }
        last = Some((wcets, edges));
    }
    let (mut wcets, edges) = last.expect("at least one attempt");
    if !shrink_longest_path(&mut wcets, &edges, limit) {
        return Err(GenerationError::LongestPath { task: index });
    }
    match split_demands(&wcets, &usage, rng) {
        Some(split) => Ok(assemble(task_base, wcets, edges, split, &usage)),
        None => Err(GenerationError::CriticalSections { task: index }),
    }
}

fn assemble(
    mut task: Task,
    wcets: Vec<u64>,
    edges: Vec<(usize, usize)>,
    split: Vec<BTreeMap<usize, u32>>,
    usage: &[(usize, u32, Duration)],
) -> Task {
    task.vertices = wcets
        .into_iter()
        .zip(split)
        .map(|(wcet, demands)| Vertex { wcet, demands })
        .collect();
    task.edges = edges;
    task.cs_lengths = usage.iter().map(|&(q, _, l)| (q, l)).collect();
    task
}

/// Assigns rate-monotonic priorities: shorter period is higher, ties go to
/// the smaller id.
pub fn assign_rate_monotonic(tasks: &mut [Task]) {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&a, &b| {
        tasks[a]
            .period
            .cmp(&tasks[b].period)
            .then(tasks[a].id.cmp(&tasks[b].id))
    });
    let n = tasks.len() as u32;
    for (rank, &i) in order.iter().enumerate() {
        tasks[i].priority = n - rank as u32;
    }
}

/// One task set at total utilization `target`.
pub fn generate_task_set<R: Rng + ?Sized>(
    scenario: &Scenario,
    target: f64,
    rng: &mut R,
) -> Result<TaskSet, GenerationError> {
    let n = task_count(target, scenario.uavg).ok_or(GenerationError::Utilization {
        target,
        uavg: scenario.uavg,
    })?;
    let hi = 2.0 * scenario.uavg;
    let utils = loop {
        let draw =
            rand_fixed_sum(n, target, 1.0, hi, rng).map_err(|_| GenerationError::Utilization {
                target,
                uavg: scenario.uavg,
            })?;
        // the lower bound is open
        if draw.iter().all(|&u| u > 1.0) {
            break draw;
        }
    };
    let n_resources = rng.gen_range(scenario.nr_lo..=scenario.nr_hi);
    let mut tasks = Vec::with_capacity(n);
    for (index, &u) in utils.iter().enumerate() {
        tasks.push(generate_task(scenario, index, u, n_resources, rng)?);
    }
    assign_rate_monotonic(&mut tasks);
    let ts = TaskSet::new(scenario.m, n_resources, tasks);
    let violations = validate_task_set(&ts);
    if let Some(v) = violations.first() {
        return Err(GenerationError::Invalid(v.to_string()));
    }
    Ok(ts)
}

/// Mixes a seed tuple into one 64-bit stream seed (SplitMix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        state ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(state << 6)
            .wrapping_add(state >> 2);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

pub fn seeded_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}
