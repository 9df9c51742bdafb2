//! Discrete-event simulation of the locking protocol on a federated
//! platform, plus trace checkers.
//!
//! Within a cluster, local-lock holders are dispatched before other ready
//! vertices and a running vertex is never displaced by another vertex. On
//! every processor, granted agents run ahead of task vertices and among
//! themselves by the priority of their task, so a newly granted agent
//! preempts a lower-priority one. A global request is granted only while the
//! requesting task's priority exceeds the ceiling of the target processor.
//!
//! Simultaneous events are handled in the order releases, agent
//! completions, vertex completions, dispatch.

mod checks;
mod engine;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checks::{
    check_mutual_exclusion, check_priority_ceiling, check_response_bounds,
    check_single_lower_priority_blocking, BlockingViolation, BoundViolation, CeilingViolation,
    ExclusionViolation,
};
pub use engine::simulate;
pub use trace::{EventKind, JobRecord, SimTrace, TraceEvent};

use crate::model::{Task, TaskSet, Vertex, Violation};
use crate::partitioning::{Assignment, AssignmentError, Cluster};
use crate::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReleaseModel {
    /// All tasks release at 0 and then strictly periodically.
    Synchronous,
    /// Inter-release gaps of `T·(1 + u)`, `u` uniform in `[0, max_jitter]`.
    Sporadic { max_jitter: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExecutionModel {
    Wcet,
    /// Each vertex instance runs for its WCET times a factor drawn
    /// uniformly from `[min_factor, 1]`.
    Scaled {
        min_factor: f64,
    },
}

/// Where critical sections sit inside a vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentLayout {
    CriticalFirst,
    /// Plain execution split evenly around the critical sections.
    Spread,
    /// Random order and random split, from the simulation seed.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Jobs are released in `[0, horizon)`.
    pub horizon: Duration,
    pub release: ReleaseModel,
    pub execution: ExecutionModel,
    pub layout: SegmentLayout,
    pub seed: u64,
    /// Extra time after the horizon for released jobs to finish; defaults
    /// to ten times the largest period.
    pub drain: Option<Duration>,
}

impl SimConfig {
    pub fn new(horizon: Duration) -> Self {
        SimConfig {
            horizon,
            release: ReleaseModel::Synchronous,
            execution: ExecutionModel::Wcet,
            layout: SegmentLayout::Spread,
            seed: 0,
            drain: None,
        }
    }

    pub fn with_release(mut self, release: ReleaseModel) -> Self {
        self.release = release;
        self
    }

    pub fn with_execution(mut self, execution: ExecutionModel) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_layout(mut self, layout: SegmentLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("invalid task set: {0}")]
    InvalidTaskSet(Violation),
    #[error("horizon {horizon} is shorter than the largest period {period}")]
    HorizonTooShort { horizon: Duration, period: Duration },
}

/// Two heavy tasks sharing one global resource, with unit time.
///
/// The high-priority task (id 0, clusters on processors 2 and 3) has eight
/// vertices, a longest path of 10 and one request to the global resource 0
/// plus two requests to its local resource 1. The low-priority task (id 1,
/// processors 0 and 1) locks resource 0 first, at time 1, so under
/// [`SegmentLayout::CriticalFirst`] it releases it at 4 and the
/// high-priority agent, hosted on processor 1, finishes at 7.
pub fn two_task_example() -> (TaskSet, Assignment) {
    let hi = Task::new(0, 2, 20, 15)
        .with_vertex(Vertex::new(2))
        .with_vertex(Vertex::new(3).with_demand(0, 1))
        .with_vertex(Vertex::new(2).with_demand(1, 1))
        .with_vertex(Vertex::new(2).with_demand(1, 1))
        .with_vertex(Vertex::new(3))
        .with_vertex(Vertex::new(1))
        .with_vertex(Vertex::new(3))
        .with_vertex(Vertex::new(2))
        .with_edge(0, 1)
        .with_edge(0, 2)
        .with_edge(0, 3)
        .with_edge(0, 4)
        .with_edge(1, 5)
        .with_edge(2, 5)
        .with_edge(3, 6)
        .with_edge(4, 6)
        .with_edge(5, 7)
        .with_edge(6, 7)
        .with_cs(0, 3)
        .with_cs(1, 2);
    let lo = Task::new(1, 1, 12, 10)
        .with_vertex(Vertex::new(1))
        .with_vertex(Vertex::new(3))
        .with_vertex(Vertex::new(3).with_demand(0, 1))
        .with_vertex(Vertex::new(2))
        .with_vertex(Vertex::new(2))
        .with_vertex(Vertex::new(1))
        .with_edge(0, 1)
        .with_edge(0, 2)
        .with_edge(0, 3)
        .with_edge(0, 4)
        .with_edge(1, 5)
        .with_edge(2, 5)
        .with_edge(3, 5)
        .with_edge(4, 5)
        .with_cs(0, 3);
    let ts = TaskSet::new(4, 2, vec![lo, hi]);
    let assignment = Assignment {
        clusters: vec![
            Cluster {
                task: 1,
                processors: vec![0, 1],
            },
            Cluster {
                task: 0,
                processors: vec![2, 3],
            },
        ],
        placement: [(0, 1)].into_iter().collect(),
    };
    (ts, assignment)
}
