use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{EventKind, SimTrace, TraceEvent};
use super::{ExecutionModel, ReleaseModel, SegmentLayout, SimConfig, SimError};
use crate::generator::split_integer;
use crate::model::{Priority, ResourceId, ResourceScope, TaskSet};
use crate::partitioning::Assignment;
use crate::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Segment {
    Plain(Duration),
    Critical {
        resource: ResourceId,
        length: Duration,
    },
}

impl Segment {
    fn length(self) -> Duration {
        match self {
            Segment::Plain(d) => d,
            Segment::Critical { length, .. } => length,
        }
    }
}

struct Job {
    task: usize,
    index: u64,
    release: Duration,
    waiting_on: Vec<usize>,
    left: usize,
}

struct VertexRun {
    job: usize,
    vertex: usize,
    segments: Vec<Segment>,
    next: usize,
    remaining: Duration,
    holds_lock: bool,
}

struct Agent {
    run: usize,
    resource: ResourceId,
    processor: usize,
    priority: Priority,
    remaining: Duration,
    started: bool,
    seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Running {
    Idle,
    Vertex(usize),
    Agent(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Holder {
    Vertex(usize),
    Agent(usize),
}

struct Engine<'a> {
    ts: &'a TaskSet,
    config: &'a SimConfig,
    rng: ChaCha8Rng,
    global: Vec<bool>,
    ceilings: Vec<Priority>,
    host: Vec<Option<usize>>,
    owner: Vec<Option<usize>>,
    cluster: Vec<Vec<usize>>,
    successors: Vec<Vec<Vec<usize>>>,
    jobs: Vec<Job>,
    runs: Vec<VertexRun>,
    agents: Vec<Agent>,
    rq_n: Vec<VecDeque<usize>>,
    rq_l: Vec<VecDeque<usize>>,
    rq_g: Vec<Vec<usize>>,
    sq_g: Vec<Vec<usize>>,
    holders: Vec<Option<Holder>>,
    local_waiters: Vec<VecDeque<usize>>,
    running: Vec<Running>,
    next_release: Vec<Option<Duration>>,
    job_counter: Vec<u64>,
    agent_seq: u64,
    trace: SimTrace,
}

/// Runs the task set under the protocol until the horizon has passed and
/// every released job has finished, or the drain limit is reached.
pub fn simulate(
    ts: &TaskSet,
    assignment: &Assignment,
    config: &SimConfig,
) -> Result<SimTrace, SimError> {
    if let Some(v) = crate::model::validate_task_set(ts).into_iter().next() {
        return Err(SimError::InvalidTaskSet(v));
    }
    assignment.check(ts)?;
    let max_period = ts.tasks.iter().map(|t| t.period).max().unwrap_or(0);
    if config.horizon < max_period {
        return Err(SimError::HorizonTooShort {
            horizon: config.horizon,
            period: max_period,
        });
    }
    let mut engine = Engine::new(ts, assignment, config);
    engine.run();
    Ok(engine.trace)
}

impl<'a> Engine<'a> {
    fn new(ts: &'a TaskSet, assignment: &'a Assignment, config: &'a SimConfig) -> Self {
        let n = ts.tasks.len();
        let m = ts.m;
        let global: Vec<bool> = (0..ts.resources)
            .map(|q| ts.scope(q) == ResourceScope::Global)
            .collect();
        let ceilings = (0..ts.resources)
            .map(|q| ts.ceiling(q).unwrap_or(0))
            .collect();
        let host = (0..ts.resources)
            .map(|q| assignment.placement.get(&q).copied())
            .collect();
        let mut owner = vec![None; m];
        let mut cluster = vec![Vec::new(); n];
        for (i, task) in ts.tasks.iter().enumerate() {
            if let Some(c) = assignment.cluster_of(task.id) {
                let mut procs = c.processors.clone();
                procs.sort_unstable();
                for &p in &procs {
                    owner[p] = Some(i);
                }
                cluster[i] = procs;
            }
        }
        let trace = SimTrace {
            priorities: ts.tasks.iter().map(|t| (t.id, t.priority)).collect(),
            global_resources: ts.globals().into_iter().collect(),
            ..SimTrace::default()
        };
        Engine {
            ts,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            global,
            ceilings,
            host,
            owner,
            cluster,
            successors: ts.tasks.iter().map(|t| t.successors()).collect(),
            jobs: Vec::new(),
            runs: Vec::new(),
            agents: Vec::new(),
            rq_n: vec![VecDeque::new(); n],
            rq_l: vec![VecDeque::new(); n],
            rq_g: vec![Vec::new(); m],
            sq_g: vec![Vec::new(); m],
            holders: vec![None; ts.resources],
            local_waiters: vec![VecDeque::new(); ts.resources],
            running: vec![Running::Idle; m],
            next_release: vec![Some(0); n],
            job_counter: vec![0; n],
            agent_seq: 0,
            trace,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        time: Duration,
        kind: EventKind,
        task: usize,
        job: u64,
        vertex: Option<usize>,
        resource: Option<ResourceId>,
        processor: Option<usize>,
    ) {
        self.trace.events.push(TraceEvent {
            time,
            kind,
            task: self.ts.tasks[task].id,
            job,
            vertex,
            resource,
            processor,
        });
    }

    fn emit_run(
        &mut self,
        time: Duration,
        kind: EventKind,
        run: usize,
        resource: Option<ResourceId>,
        processor: Option<usize>,
    ) {
        let (task, job, vertex) = self.run_identity(run);
        self.emit(time, kind, task, job, Some(vertex), resource, processor);
    }

    fn run_identity(&self, run: usize) -> (usize, u64, usize) {
        let r = &self.runs[run];
        let j = &self.jobs[r.job];
        (j.task, j.index, r.vertex)
    }

    fn task_of_run(&self, run: usize) -> usize {
        self.jobs[self.runs[run].job].task
    }

    fn run(&mut self) {
        let max_period = self.ts.tasks.iter().map(|t| t.period).max().unwrap_or(0);
        let drain_limit = self
            .config
            .drain
            .unwrap_or_else(|| max_period.saturating_mul(10))
            .saturating_add(self.config.horizon);
        let mut order: Vec<usize> = (0..self.ts.tasks.len()).collect();
        order.sort_by(|&a, &b| {
            self.ts.tasks[b]
                .priority
                .cmp(&self.ts.tasks[a].priority)
                .then(a.cmp(&b))
        });
        let mut now: Duration = 0;
        loop {
            for &i in &order {
                while self.next_release[i] == Some(now) {
                    self.release(i, now);
                }
            }
            self.complete_agents(now);
            self.complete_vertices(now);
            self.dispatch(now);
            self.audit_work_conservation();

            let next_release = self.next_release.iter().flatten().copied().min();
            let next_completion = self
                .running
                .iter()
                .filter_map(|r| match *r {
                    Running::Idle => None,
                    Running::Vertex(v) => Some(self.runs[v].remaining),
                    Running::Agent(a) => Some(self.agents[a].remaining),
                })
                .min()
                .map(|d| now + d);
            let next = match (next_release, next_completion) {
                (None, None) => break,
                (Some(a), Some(b)) => a.min(b),
                (a, b) => a.or(b).unwrap(),
            };
            if next > drain_limit {
                now = drain_limit;
                break;
            }
            let elapsed = next - now;
            for r in self.running.clone() {
                match r {
                    Running::Idle => {}
                    Running::Vertex(v) => self.runs[v].remaining -= elapsed,
                    Running::Agent(a) => self.agents[a].remaining -= elapsed,
                }
            }
            now = next;
        }
        self.trace.end = now;
        for j in 0..self.jobs.len() {
            if self.jobs[j].left > 0 {
                let (task, index, release) =
                    (self.jobs[j].task, self.jobs[j].index, self.jobs[j].release);
                if release + self.ts.tasks[task].deadline <= now {
                    self.emit(now, EventKind::DeadlineMiss, task, index, None, None, None);
                }
            }
        }
    }

    fn release(&mut self, i: usize, now: Duration) {
        let task = &self.ts.tasks[i];
        let index = self.job_counter[i];
        self.job_counter[i] += 1;
        let gap = match self.config.release {
            ReleaseModel::Synchronous => task.period,
            ReleaseModel::Sporadic { max_jitter } => {
                let extra = (task.period as f64 * max_jitter.max(0.0)).floor() as u64;
                task.period
                    + if extra > 0 {
                        self.rng.gen_range(0..=extra)
                    } else {
                        0
                    }
            }
        };
        let next = now + gap;
        self.next_release[i] = (next < self.config.horizon).then_some(next);
        let preds = task.predecessors();
        let job = self.jobs.len();
        self.jobs.push(Job {
            task: i,
            index,
            release: now,
            waiting_on: preds.iter().map(Vec::len).collect(),
            left: task.vertices.len(),
        });
        self.emit(now, EventKind::Release, i, index, None, None, None);
        for (v, p) in preds.iter().enumerate() {
            if p.is_empty() {
                let run = self.spawn(job, v);
                self.rq_n[i].push_back(run);
            }
        }
    }

    fn spawn(&mut self, job: usize, vertex: usize) -> usize {
        let task = &self.ts.tasks[self.jobs[job].task];
        let v = &task.vertices[vertex];
        let mut critical: Vec<Segment> = Vec::new();
        for (&q, &n) in &v.demands {
            for _ in 0..n {
                critical.push(Segment::Critical {
                    resource: q,
                    length: task.cs_length(q),
                });
            }
        }
        let plain = v
            .wcet
            .saturating_sub(critical.iter().map(|s| s.length()).sum());
        let mut segments = match self.config.layout {
            SegmentLayout::CriticalFirst => {
                critical.push(Segment::Plain(plain));
                critical
            }
            SegmentLayout::Spread => interleave(critical, plain, None),
            SegmentLayout::Shuffled => {
                critical.shuffle(&mut self.rng);
                let weights: Vec<f64> = (0..=critical.len())
                    .map(|_| self.rng.gen_range(f64::EPSILON..1.0))
                    .collect();
                interleave(critical, plain, Some(&weights))
            }
        };
        if let ExecutionModel::Scaled { min_factor } = self.config.execution {
            let lo = min_factor.clamp(0.0, 1.0);
            let f = if lo < 1.0 {
                self.rng.gen_range(lo..=1.0)
            } else {
                1.0
            };
            for s in &mut segments {
                *s = match *s {
                    Segment::Plain(d) => Segment::Plain((d as f64 * f).round() as u64),
                    Segment::Critical { resource, length } => Segment::Critical {
                        resource,
                        length: ((length as f64 * f).round() as u64).clamp(1, length),
                    },
                };
            }
        }
        segments.retain(|s| s.length() > 0);
        let remaining = segments.first().map_or(0, |s| s.length());
        self.runs.push(VertexRun {
            job,
            vertex,
            segments,
            next: 0,
            remaining,
            holds_lock: false,
        });
        self.runs.len() - 1
    }

    fn advance_segment(&mut self, run: usize) {
        let r = &mut self.runs[run];
        r.next += 1;
        r.holds_lock = false;
        r.remaining = r.segments.get(r.next).map_or(0, |s| s.length());
    }

    fn processor_ceiling(&self, k: usize) -> Option<Priority> {
        (0..self.ts.resources)
            .filter(|&q| self.global[q] && self.host[q] == Some(k) && self.holders[q].is_some())
            .map(|q| self.ceilings[q])
            .max()
    }

    fn eligible(&self, agent: usize) -> bool {
        let a = &self.agents[agent];
        self.holders[a.resource].is_none()
            && self
                .processor_ceiling(a.processor)
                .is_none_or(|c| a.priority > c)
    }

    fn grant_agent(&mut self, agent: usize, now: Duration) {
        let (run, q, k) = (
            self.agents[agent].run,
            self.agents[agent].resource,
            self.agents[agent].processor,
        );
        self.holders[q] = Some(Holder::Agent(agent));
        self.rq_g[k].push(agent);
        self.emit_run(now, EventKind::LockGrant, run, Some(q), Some(k));
    }

    /// Grants suspended agents on `k`, highest priority first, while the
    /// ceiling admits them.
    fn regrant(&mut self, k: usize, now: Duration) {
        loop {
            let best = self.sq_g[k]
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| {
                    let (a, b) = (&self.agents[a], &self.agents[b]);
                    a.priority.cmp(&b.priority).then(b.seq.cmp(&a.seq))
                })
                .map(|(pos, &a)| (pos, a));
            match best {
                Some((pos, a)) if self.eligible(a) => {
                    self.sq_g[k].remove(pos);
                    self.grant_agent(a, now);
                }
                _ => break,
            }
        }
    }

    /// Places `run` on processor `k`; a lock request or a finished vertex
    /// leaves `k` idle.
    fn run_on(&mut self, run: usize, k: usize, now: Duration) {
        let r = &self.runs[run];
        let Some(&segment) = r.segments.get(r.next) else {
            self.running[k] = Running::Idle;
            self.finish_vertex(run, now);
            return;
        };
        match segment {
            Segment::Plain(_) => {
                self.running[k] = Running::Vertex(run);
            }
            Segment::Critical { .. } if r.holds_lock => {
                self.running[k] = Running::Vertex(run);
            }
            Segment::Critical {
                resource: q,
                length,
            } => {
                self.running[k] = Running::Idle;
                if self.global[q] {
                    let host = self.host[q].expect("assignment checked");
                    self.emit_run(now, EventKind::LockRequest, run, Some(q), Some(host));
                    self.emit_run(now, EventKind::Suspend, run, Some(q), Some(k));
                    let task = self.task_of_run(run);
                    self.agents.push(Agent {
                        run,
                        resource: q,
                        processor: host,
                        priority: self.ts.tasks[task].priority,
                        remaining: length,
                        started: false,
                        seq: self.agent_seq,
                    });
                    self.agent_seq += 1;
                    let agent = self.agents.len() - 1;
                    if self.eligible(agent) {
                        self.grant_agent(agent, now);
                    } else {
                        self.sq_g[host].push(agent);
                    }
                    return;
                }
                self.emit_run(now, EventKind::LockRequest, run, Some(q), Some(k));
                if self.holders[q].is_none() {
                    self.holders[q] = Some(Holder::Vertex(run));
                    self.runs[run].holds_lock = true;
                    self.emit_run(now, EventKind::LockGrant, run, Some(q), Some(k));
                    self.running[k] = Running::Vertex(run);
                } else {
                    self.local_waiters[q].push_back(run);
                    self.emit_run(now, EventKind::Suspend, run, Some(q), Some(k));
                }
            }
        }
    }

    fn finish_vertex(&mut self, run: usize, now: Duration) {
        let job = self.runs[run].job;
        let vertex = self.runs[run].vertex;
        let task = self.jobs[job].task;
        for s in self.successors[task][vertex].clone() {
            self.jobs[job].waiting_on[s] -= 1;
            if self.jobs[job].waiting_on[s] == 0 {
                let succ = self.spawn(job, s);
                self.rq_n[task].push_back(succ);
            }
        }
        self.jobs[job].left -= 1;
        if self.jobs[job].left == 0 {
            let (index, release) = (self.jobs[job].index, self.jobs[job].release);
            self.emit(now, EventKind::JobFinish, task, index, None, None, None);
            if now > release + self.ts.tasks[task].deadline {
                self.emit(now, EventKind::DeadlineMiss, task, index, None, None, None);
            }
        }
    }

    fn complete_agents(&mut self, now: Duration) {
        let mut freed = Vec::new();
        for k in 0..self.running.len() {
            let Running::Agent(a) = self.running[k] else {
                continue;
            };
            if self.agents[a].remaining > 0 {
                continue;
            }
            let (run, q) = (self.agents[a].run, self.agents[a].resource);
            self.running[k] = Running::Idle;
            self.rq_g[k].retain(|&x| x != a);
            debug_assert_eq!(self.holders[q], Some(Holder::Agent(a)));
            self.holders[q] = None;
            self.emit_run(now, EventKind::AgentEnd, run, Some(q), Some(k));
            self.emit_run(now, EventKind::LockRelease, run, Some(q), Some(k));
            self.emit_run(now, EventKind::Resume, run, None, None);
            self.advance_segment(run);
            if self.runs[run].next >= self.runs[run].segments.len() {
                self.finish_vertex(run, now);
            } else {
                let task = self.task_of_run(run);
                self.rq_n[task].push_back(run);
            }
            freed.push(k);
        }
        for k in freed {
            self.regrant(k, now);
        }
    }

    fn complete_vertices(&mut self, now: Duration) {
        for k in 0..self.running.len() {
            let Running::Vertex(run) = self.running[k] else {
                continue;
            };
            if self.runs[run].remaining > 0 {
                continue;
            }
            let r = &self.runs[run];
            if let Segment::Critical { resource: q, .. } = r.segments[r.next] {
                debug_assert_eq!(self.holders[q], Some(Holder::Vertex(run)));
                self.holders[q] = None;
                self.emit_run(now, EventKind::LockRelease, run, Some(q), Some(k));
                if let Some(w) = self.local_waiters[q].pop_front() {
                    self.holders[q] = Some(Holder::Vertex(w));
                    self.runs[w].holds_lock = true;
                    self.emit_run(now, EventKind::LockGrant, w, Some(q), Some(k));
                    self.emit_run(now, EventKind::Resume, w, Some(q), None);
                    let task = self.task_of_run(w);
                    self.rq_l[task].push_back(w);
                }
            }
            self.advance_segment(run);
            self.run_on(run, k, now);
        }
    }

    fn best_agent(&self, k: usize) -> Option<usize> {
        self.rq_g[k].iter().copied().max_by(|&a, &b| {
            let (x, y) = (&self.agents[a], &self.agents[b]);
            x.priority.cmp(&y.priority).then(y.seq.cmp(&x.seq))
        })
    }

    fn preempt(&mut self, k: usize, now: Duration) {
        match self.running[k] {
            Running::Idle => {}
            Running::Vertex(run) => {
                self.emit_run(now, EventKind::Preempt, run, None, Some(k));
                let task = self.task_of_run(run);
                if self.runs[run].holds_lock {
                    self.rq_l[task].push_front(run);
                } else {
                    self.rq_n[task].push_front(run);
                }
            }
            Running::Agent(a) => {
                let (run, q) = (self.agents[a].run, self.agents[a].resource);
                self.emit_run(now, EventKind::Preempt, run, Some(q), Some(k));
            }
        }
        self.running[k] = Running::Idle;
    }

    fn dispatch(&mut self, now: Duration) {
        loop {
            let mut changed = false;
            for k in 0..self.running.len() {
                if let Some(a) = self.best_agent(k) {
                    if self.running[k] != Running::Agent(a) {
                        self.preempt(k, now);
                        let (run, q) = (self.agents[a].run, self.agents[a].resource);
                        let kind = if self.agents[a].started {
                            EventKind::Dispatch
                        } else {
                            EventKind::AgentStart
                        };
                        self.agents[a].started = true;
                        self.emit_run(now, kind, run, Some(q), Some(k));
                        self.running[k] = Running::Agent(a);
                        changed = true;
                    }
                    continue;
                }
                let Some(i) = self.owner[k] else { continue };
                while self.running[k] == Running::Idle && self.rq_g[k].is_empty() {
                    let Some(run) = self.rq_l[i]
                        .pop_front()
                        .or_else(|| self.rq_n[i].pop_front())
                    else {
                        break;
                    };
                    self.emit_run(now, EventKind::Dispatch, run, None, Some(k));
                    self.run_on(run, k, now);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn audit_work_conservation(&mut self) {
        for i in 0..self.cluster.len() {
            if self.rq_l[i].is_empty() && self.rq_n[i].is_empty() {
                continue;
            }
            if self.cluster[i]
                .iter()
                .any(|&k| self.running[k] == Running::Idle)
            {
                self.trace.idle_with_ready_work += 1;
            }
        }
    }
}

/// Alternates plain chunks with critical sections, starting and ending with
/// a plain chunk. `weights` (one per chunk) split the plain time; without
/// them it is split evenly.
fn interleave(critical: Vec<Segment>, plain: Duration, weights: Option<&[f64]>) -> Vec<Segment> {
    let chunks = critical.len() + 1;
    let even = vec![1.0; chunks];
    let parts = split_integer(plain, weights.unwrap_or(&even));
    let mut out = Vec::with_capacity(2 * chunks);
    let mut parts = parts.into_iter();
    for cs in critical {
        out.push(Segment::Plain(parts.next().unwrap_or(0)));
        out.push(cs);
    }
    out.push(Segment::Plain(parts.next().unwrap_or(0)));
    out
}
