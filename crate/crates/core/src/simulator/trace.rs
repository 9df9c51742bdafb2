use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::{Priority, ResourceId, TaskId};
use crate::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Release,
    Dispatch,
    Preempt,
    LockRequest,
    LockGrant,
    LockRelease,
    AgentStart,
    AgentEnd,
    Suspend,
    Resume,
    JobFinish,
    DeadlineMiss,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Release => "release",
            EventKind::Dispatch => "dispatch",
            EventKind::Preempt => "preempt",
            EventKind::LockRequest => "lock-request",
            EventKind::LockGrant => "lock-grant",
            EventKind::LockRelease => "lock-release",
            EventKind::AgentStart => "agent-start",
            EventKind::AgentEnd => "agent-end",
            EventKind::Suspend => "suspend",
            EventKind::Resume => "resume",
            EventKind::JobFinish => "job-finish",
            EventKind::DeadlineMiss => "deadline-miss",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trace record. `resource` is set on lock events and on every event
/// concerning an agent; `processor` is the processor the event happens on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: Duration,
    pub kind: EventKind,
    pub task: TaskId,
    /// Job index within the task, counting from zero.
    pub job: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vertex: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub resource: Option<ResourceId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub processor: Option<usize>,
}

impl TraceEvent {
    /// Whether this event concerns an agent rather than a task vertex.
    pub fn is_agent_event(&self) -> bool {
        matches!(self.kind, EventKind::AgentStart | EventKind::AgentEnd)
            || (matches!(self.kind, EventKind::Dispatch | EventKind::Preempt)
                && self.resource.is_some())
    }
}

/// A finished (or abandoned) job reconstructed from a trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobRecord {
    pub task: TaskId,
    pub job: u64,
    pub release: Duration,
    pub finish: Option<Duration>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Base priority of every simulated task.
    pub priorities: BTreeMap<TaskId, Priority>,
    /// Resources accessed through agents.
    pub global_resources: BTreeSet<ResourceId>,
    /// Simulated time at which the run stopped.
    pub end: Duration,
    /// Instants at which a cluster processor idled while its task had a
    /// ready vertex. Always zero for a correct engine.
    pub idle_with_ready_work: u64,
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    pub fn jobs(&self) -> Vec<JobRecord> {
        let mut jobs: BTreeMap<(TaskId, u64), JobRecord> = BTreeMap::new();
        for e in &self.events {
            match e.kind {
                EventKind::Release => {
                    jobs.insert(
                        (e.task, e.job),
                        JobRecord {
                            task: e.task,
                            job: e.job,
                            release: e.time,
                            finish: None,
                        },
                    );
                }
                EventKind::JobFinish => {
                    if let Some(j) = jobs.get_mut(&(e.task, e.job)) {
                        j.finish = Some(e.time);
                    }
                }
                _ => {}
            }
        }
        jobs.into_values().collect()
    }

    /// Largest observed response time per task, over finished jobs.
    pub fn max_responses(&self) -> BTreeMap<TaskId, Duration> {
        let mut out = BTreeMap::new();
        for j in self.jobs() {
            if let Some(f) = j.finish {
                let r = out.entry(j.task).or_insert(0);
                *r = (*r).max(f - j.release);
            }
        }
        out
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn events_from_ndjson(text: &str) -> serde_json::Result<Vec<TraceEvent>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// `time,kind,task,processor` projection.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,kind,task,processor")?;
        for e in &self.events {
            let p = e.processor.map(|p| p.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.time, e.kind, e.task, p)?;
        }
        Ok(())
    }
}
