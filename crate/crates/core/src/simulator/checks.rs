use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::trace::{EventKind, SimTrace, TraceEvent};
use crate::analysis::WcrtReport;
use crate::model::{Priority, ResourceId, TaskId, TaskSet};
use crate::partitioning::Assignment;
use crate::Duration;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum CeilingViolation {
    /// A global lock was granted although the requester's priority did not
    /// exceed the processor ceiling.
    GrantUnderCeiling {
        time: Duration,
        task: TaskId,
        resource: ResourceId,
        priority: Priority,
        ceiling: Priority,
    },
    /// An agent event happened away from the resource's host.
    WrongProcessor {
        time: Duration,
        task: TaskId,
        resource: ResourceId,
        processor: Option<usize>,
        host: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ExclusionViolation {
    GrantWhileHeld {
        time: Duration,
        resource: ResourceId,
        task: TaskId,
    },
    ReleaseWithoutHold {
        time: Duration,
        resource: ResourceId,
        task: TaskId,
    },
}

/// A global request that saw more than one lower-priority agent execute on
/// its host between the request and the end of its own agent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockingViolation {
    pub time: Duration,
    pub task: TaskId,
    pub job: u64,
    pub vertex: Option<usize>,
    pub resource: ResourceId,
    pub blockers: Vec<TaskId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundViolation {
    pub task: TaskId,
    pub job: u64,
    /// `None` for a job still unfinished when the run ended.
    pub observed: Option<Duration>,
    pub bound: Option<Duration>,
}

fn priority_of(ts: &TaskSet, task: TaskId) -> Priority {
    ts.index_of(task).map_or(0, |i| ts.tasks[i].priority)
}

/// Replays global grants against the ceilings reconstructed from the trace.
pub fn check_priority_ceiling(
    trace: &SimTrace,
    ts: &TaskSet,
    assignment: &Assignment,
) -> Vec<CeilingViolation> {
    let mut out = Vec::new();
    let mut locked: BTreeSet<ResourceId> = BTreeSet::new();
    let global: BTreeSet<ResourceId> = ts.globals().into_iter().collect();
    for e in &trace.events {
        let Some(q) = e.resource else { continue };
        if !global.contains(&q) {
            continue;
        }
        let Some(&host) = assignment.placement.get(&q) else {
            continue;
        };
        let on_host = match e.kind {
            EventKind::LockGrant | EventKind::LockRelease => true,
            _ => e.is_agent_event(),
        };
        if on_host && e.processor != Some(host) {
            out.push(CeilingViolation::WrongProcessor {
                time: e.time,
                task: e.task,
                resource: q,
                processor: e.processor,
                host,
            });
        }
        match e.kind {
            EventKind::LockGrant => {
                let ceiling = locked
                    .iter()
                    .filter(|r| assignment.placement.get(r) == Some(&host))
                    .filter_map(|&r| ts.ceiling(r))
                    .max();
                let priority = priority_of(ts, e.task);
                if let Some(c) = ceiling.filter(|&c| priority <= c) {
                    out.push(CeilingViolation::GrantUnderCeiling {
                        time: e.time,
                        task: e.task,
                        resource: q,
                        priority,
                        ceiling: c,
                    });
                }
                locked.insert(q);
            }
            EventKind::LockRelease => {
                locked.remove(&q);
            }
            _ => {}
        }
    }
    out
}

/// No resource is granted while held, and only its holder releases it.
pub fn check_mutual_exclusion(trace: &SimTrace) -> Vec<ExclusionViolation> {
    let mut out = Vec::new();
    let mut holder: BTreeMap<ResourceId, (TaskId, u64, Option<usize>)> = BTreeMap::new();
    for e in &trace.events {
        let Some(q) = e.resource else { continue };
        let who = (e.task, e.job, e.vertex);
        match e.kind {
            EventKind::LockGrant => {
                if holder.insert(q, who).is_some() {
                    out.push(ExclusionViolation::GrantWhileHeld {
                        time: e.time,
                        resource: q,
                        task: e.task,
                    });
                }
            }
            EventKind::LockRelease => {
                if holder.get(&q) != Some(&who) {
                    out.push(ExclusionViolation::ReleaseWithoutHold {
                        time: e.time,
                        resource: q,
                        task: e.task,
                    });
                }
                holder.remove(&q);
            }
            _ => {}
        }
    }
    out
}

type AgentKey = (TaskId, u64, Option<usize>, ResourceId);

struct OpenRequest {
    time: Duration,
    processor: Option<usize>,
    priority: Priority,
    blockers: BTreeSet<(AgentKey, u64)>,
}

/// For every global request, counts the distinct lower-priority agents that
/// execute on the host processor while the request is pending or its agent
/// is unfinished; more than one is a violation.
pub fn check_single_lower_priority_blocking(trace: &SimTrace) -> Vec<BlockingViolation> {
    let priority = |t: TaskId| trace.priorities.get(&t).copied().unwrap_or(0);
    let key = |e: &TraceEvent| (e.task, e.job, e.vertex, e.resource.unwrap_or(usize::MAX));
    let mut out = Vec::new();
    let mut open: BTreeMap<AgentKey, OpenRequest> = BTreeMap::new();
    let mut executions: BTreeMap<AgentKey, u64> = BTreeMap::new();
    // processor -> (agent, execution number, start)
    let mut running: BTreeMap<usize, (AgentKey, u64, Duration)> = BTreeMap::new();

    let close_interval = |open: &mut BTreeMap<AgentKey, OpenRequest>,
                          processor: usize,
                          agent: AgentKey,
                          nth: u64,
                          start: Duration,
                          end: Duration| {
        if end <= start {
            return;
        }
        let p = priority(agent.0);
        for req in open.values_mut() {
            if req.processor == Some(processor) && req.time < end && p < req.priority {
                req.blockers.insert((agent, nth));
            }
        }
    };

    for e in &trace.events {
        let Some(q) = e.resource else { continue };
        if !trace.global_resources.contains(&q) {
            continue;
        }
        let k = key(e);
        match e.kind {
            EventKind::LockRequest => {
                open.insert(
                    k,
                    OpenRequest {
                        time: e.time,
                        processor: e.processor,
                        priority: priority(e.task),
                        blockers: BTreeSet::new(),
                    },
                );
            }
            EventKind::AgentStart | EventKind::Dispatch => {
                let Some(p) = e.processor else { continue };
                let nth = *executions
                    .entry(k)
                    .and_modify(|n| *n += u64::from(e.kind == EventKind::AgentStart))
                    .or_insert(0);
                running.insert(p, (k, nth, e.time));
            }
            EventKind::Preempt | EventKind::AgentEnd => {
                let Some(p) = e.processor else { continue };
                if let Some((agent, nth, start)) = running.remove(&p) {
                    close_interval(&mut open, p, agent, nth, start, e.time);
                }
                if e.kind == EventKind::AgentEnd {
                    if let Some(req) = open.remove(&k) {
                        if req.blockers.len() > 1 {
                            let mut blockers: Vec<TaskId> =
                                req.blockers.iter().map(|((t, ..), _)| *t).collect();
                            blockers.dedup();
                            out.push(BlockingViolation {
                                time: req.time,
                                task: e.task,
                                job: e.job,
                                vertex: e.vertex,
                                resource: q,
                                blockers,
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Every observed response stays within the task's analytic bound. Jobs
/// unfinished at the end of the run count once their elapsed time exceeds
/// the bound.
pub fn check_response_bounds(trace: &SimTrace, report: &WcrtReport) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    for job in trace.jobs() {
        let bound = report.response_of(job.task);
        match job.finish {
            Some(f) => {
                let observed = f - job.release;
                if bound.is_none_or(|b| observed > b) {
                    out.push(BoundViolation {
                        task: job.task,
                        job: job.job,
                        observed: Some(observed),
                        bound,
                    });
                }
            }
            None => {
                let elapsed = trace.end.saturating_sub(job.release);
                if bound.is_none_or(|b| elapsed > b) {
                    out.push(BoundViolation {
                        task: job.task,
                        job: job.job,
                        observed: None,
                        bound,
                    });
                }
            }
        }
    }
    out
}
