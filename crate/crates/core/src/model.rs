//! Sporadic DAG tasks, shared resources, and the structural queries the
//! analysis is built on (paths, longest path, per-path request counts).
//!
//! All time quantities are integer nanoseconds ([`Duration`]). Priorities are
//! unique integers where a larger value means a higher priority.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Duration;

/// Index of a resource; resources are numbered densely `0..n_r`.
pub type ResourceId = usize;
/// Identifier of a task as it appears in task-set documents.
pub type TaskId = usize;
/// Base priority; larger is higher.
pub type Priority = u32;

/// A DAG node: its WCET and how many times it requests each resource.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub wcet: Duration,
    pub demands: BTreeMap<ResourceId, u32>,
}

impl Vertex {
    pub fn new(wcet: Duration) -> Self {
        Vertex {
            wcet,
            demands: BTreeMap::new(),
        }
    }

    pub fn with_demand(mut self, resource: ResourceId, count: u32) -> Self {
        if count > 0 {
            self.demands.insert(resource, count);
        }
        self
    }

    pub fn demand(&self, resource: ResourceId) -> u32 {
        self.demands.get(&resource).copied().unwrap_or(0)
    }
}

/// A parallel real-time task whose jobs follow a DAG of vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub priority: Priority,
    pub period: Duration,
    pub deadline: Duration,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<(usize, usize)>,
    /// Maximum critical-section length per resource this task uses.
    pub cs_lengths: BTreeMap<ResourceId, Duration>,
}

impl Task {
    pub fn new(id: TaskId, priority: Priority, period: Duration, deadline: Duration) -> Self {
        Task {
            id,
            priority,
            period,
            deadline,
            vertices: Vec::new(),
            edges: Vec::new(),
            cs_lengths: BTreeMap::new(),
        }
    }

    pub fn with_vertex(mut self, vertex: Vertex) -> Self {
        self.vertices.push(vertex);
        self
    }

    pub fn with_edge(mut self, pred: usize, succ: usize) -> Self {
        self.edges.push((pred, succ));
        self
    }

    pub fn with_cs(mut self, resource: ResourceId, length: Duration) -> Self {
        self.cs_lengths.insert(resource, length);
        self
    }

    /// `C_i`, the sum of all vertex WCETs.
    pub fn wcet(&self) -> Duration {
        self.vertices.iter().map(|v| v.wcet).sum()
    }

    /// `N_{i,q}`, the total number of requests a job issues for `resource`.
    pub fn request_count(&self, resource: ResourceId) -> u64 {
        self.vertices
            .iter()
            .map(|v| u64::from(v.demand(resource)))
            .sum()
    }

    /// `L_{i,q}`; zero when the task does not declare a length.
    pub fn cs_length(&self, resource: ResourceId) -> Duration {
        self.cs_lengths.get(&resource).copied().unwrap_or(0)
    }

    /// Resources with at least one request, ascending.
    pub fn resources_used(&self) -> Vec<ResourceId> {
        let mut used: Vec<ResourceId> = self
            .vertices
            .iter()
            .flat_map(|v| v.demands.iter().filter(|(_, &n)| n > 0).map(|(&q, _)| q))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn uses(&self, resource: ResourceId) -> bool {
        self.vertices.iter().any(|v| v.demand(resource) > 0)
    }

    /// Critical-section time inside one vertex.
    pub fn vertex_critical(&self, vertex: usize) -> Duration {
        self.vertices[vertex]
            .demands
            .iter()
            .map(|(&q, &n)| u64::from(n) * self.cs_length(q))
            .sum()
    }

    /// `C'_{i,x}`; `None` when the critical sections do not fit.
    pub fn vertex_non_critical(&self, vertex: usize) -> Option<Duration> {
        self.vertices[vertex]
            .wcet
            .checked_sub(self.vertex_critical(vertex))
    }

    /// Total critical-section time of one job, `Σ_q N_{i,q}·L_{i,q}`.
    pub fn critical_demand(&self) -> Duration {
        (0..self.vertices.len())
            .map(|x| self.vertex_critical(x))
            .sum()
    }

    /// `C'_i`; `None` when critical sections exceed the WCET.
    pub fn non_critical_wcet(&self) -> Option<Duration> {
        self.wcet().checked_sub(self.critical_demand())
    }

    pub fn utilization(&self) -> f64 {
        self.wcet() as f64 / self.period as f64
    }

    /// `C_i / D_i > 1`.
    pub fn is_heavy(&self) -> bool {
        self.wcet() > self.deadline
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            if a < self.vertices.len() && b < self.vertices.len() && !succ[a].contains(&b) {
                succ[a].push(b);
            }
        }
        succ
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut pred = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            if a < self.vertices.len() && b < self.vertices.len() && !pred[b].contains(&a) {
                pred[b].push(a);
            }
        }
        pred
    }

    pub fn heads(&self) -> Vec<usize> {
        let pred = self.predecessors();
        (0..self.vertices.len())
            .filter(|&v| pred[v].is_empty())
            .collect()
    }

    pub fn tails(&self) -> Vec<usize> {
        let succ = self.successors();
        (0..self.vertices.len())
            .filter(|&v| succ[v].is_empty())
            .collect()
    }

    /// Kahn's algorithm, smallest ready index first. `None` on a cycle or a
    /// dangling edge.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.vertices.len();
        if self.edges.iter().any(|&(a, b)| a >= n || b >= n) {
            return None;
        }
        let succ = self.successors();
        let mut indeg = vec![0usize; n];
        for s in &succ {
            for &b in s {
                indeg[b] += 1;
            }
        }
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&v| indeg[v] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            order.push(v);
            for &s in &succ[v] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(std::cmp::Reverse(s));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Maximum over complete paths of `Σ weight(v)`, by dynamic programming
    /// over a topological order.
    pub fn longest_weighted_path<F>(&self, weight: F) -> u64
    where
        F: Fn(usize) -> u64,
    {
        let order = self.topological_order().expect("task DAG must be acyclic");
        let pred = self.predecessors();
        let mut best = vec![0u64; self.vertices.len()];
        for &v in &order {
            let from = pred[v].iter().map(|&p| best[p]).max().unwrap_or(0);
            best[v] = from + weight(v);
        }
        self.tails().into_iter().map(|v| best[v]).max().unwrap_or(0)
    }

    /// `𝓛*_i`.
    pub fn longest_path_length(&self) -> Duration {
        self.longest_weighted_path(|v| self.vertices[v].wcet)
    }

    /// Number of complete paths, saturating.
    pub fn path_count(&self) -> u128 {
        let order = self.topological_order().expect("task DAG must be acyclic");
        let succ = self.successors();
        let mut count = vec![0u128; self.vertices.len()];
        for &v in order.iter().rev() {
            count[v] = if succ[v].is_empty() {
                1
            } else {
                succ[v]
                    .iter()
                    .fold(0u128, |acc, &s| acc.saturating_add(count[s]))
            };
        }
        self.heads()
            .into_iter()
            .fold(0u128, |acc, h| acc.saturating_add(count[h]))
    }

    /// Every head-to-tail path, or [`PathEnumeration::Overflow`] when there
    /// are more than `cap`.
    pub fn enumerate_complete_paths(&self, cap: usize) -> PathEnumeration {
        let count = self.path_count();
        if count > cap as u128 {
            return PathEnumeration::Overflow { count };
        }
        let succ = self.successors();
        let mut paths = Vec::with_capacity(count as usize);
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for head in self.heads() {
            stack.push((head, 0));
            current.push(head);
            while let Some(top) = stack.last_mut() {
                let v = top.0;
                if succ[v].is_empty() {
                    paths.push(Path::from_vertices(self, current.clone()));
                    stack.pop();
                    current.pop();
                } else if top.1 < succ[v].len() {
                    let s = succ[v][top.1];
                    top.1 += 1;
                    stack.push((s, 0));
                    current.push(s);
                } else {
                    stack.pop();
                    current.pop();
                }
            }
        }
        PathEnumeration::Paths(paths)
    }

    /// Distinct per-path request vectors, each with the longest path that
    /// realizes it.
    ///
    /// For a fixed request vector every path-dependent term of the
    /// response-time bound is monotone in the path length, so the maximum
    /// over these profiles equals the maximum over all complete paths.
    /// Fails with the offending size when a vertex would hold more than
    /// `cap` distinct vectors.
    pub fn path_profiles(&self, cap: usize) -> Result<Vec<PathProfile>, usize> {
        let used = self.resources_used();
        let order = self.topological_order().expect("task DAG must be acyclic");
        let succ = self.successors();
        let pred = self.predecessors();
        let n = self.vertices.len();
        let own: Vec<Vec<u32>> = self
            .vertices
            .iter()
            .map(|v| used.iter().map(|&q| v.demand(q)).collect())
            .collect();
        let mut pending_preds: Vec<usize> = pred.iter().map(Vec::len).collect();
        let mut suffix: Vec<Option<HashMap<Vec<u32>, Duration>>> = vec![None; n];
        let mut heads: HashMap<Vec<u32>, Duration> = HashMap::new();
        for &v in order.iter().rev() {
            let wcet = self.vertices[v].wcet;
            let mut map: HashMap<Vec<u32>, Duration> = HashMap::new();
            if succ[v].is_empty() {
                map.insert(own[v].clone(), wcet);
            }
            for &s in &succ[v] {
                let child = suffix[s].as_ref().expect("successor processed first");
                for (key, &len) in child {
                    let merged: Vec<u32> = key.iter().zip(&own[v]).map(|(a, b)| a + b).collect();
                    let entry = map.entry(merged).or_insert(0);
                    *entry = (*entry).max(len + wcet);
                }
                if map.len() > cap {
                    return Err(map.len());
                }
            }
            // release successor tables once every predecessor has consumed them
            for &s in &succ[v] {
                pending_preds[s] -= 1;
                if pending_preds[s] == 0 {
                    suffix[s] = None;
                }
            }
            if pred[v].is_empty() {
                for (key, &len) in &map {
                    let entry = heads.entry(key.clone()).or_insert(0);
                    *entry = (*entry).max(len);
                }
                if heads.len() > cap {
                    return Err(heads.len());
                }
            }
            suffix[v] = Some(map);
        }
        let mut profiles: Vec<PathProfile> = heads
            .into_iter()
            .map(|(key, length)| PathProfile {
                length,
                requests: used
                    .iter()
                    .zip(&key)
                    .filter(|(_, &n)| n > 0)
                    .map(|(&q, &n)| (q, u64::from(n)))
                    .collect(),
            })
            .collect();
        profiles.sort_by(|a, b| a.requests.cmp(&b.requests).then(a.length.cmp(&b.length)));
        Ok(profiles)
    }
}

/// Result of [`Task::enumerate_complete_paths`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathEnumeration {
    Paths(Vec<Path>),
    /// More paths than the cap; callers switch to the request-count envelope.
    Overflow {
        count: u128,
    },
}

/// A complete path through a task DAG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub vertices: Vec<usize>,
    pub length: Duration,
    /// `N^λ_{i,q}` for every resource with a nonzero count.
    pub requests: BTreeMap<ResourceId, u64>,
}

impl Path {
    pub fn from_vertices(task: &Task, vertices: Vec<usize>) -> Self {
        let length = vertices.iter().map(|&v| task.vertices[v].wcet).sum();
        let mut requests = BTreeMap::new();
        for &v in &vertices {
            for (&q, &n) in &task.vertices[v].demands {
                if n > 0 {
                    *requests.entry(q).or_insert(0) += u64::from(n);
                }
            }
        }
        Path {
            vertices,
            length,
            requests,
        }
    }

    pub fn profile(&self) -> PathProfile {
        PathProfile {
            length: self.length,
            requests: self.requests.clone(),
        }
    }
}

/// `N^λ_{i,q}`.
pub fn path_request_count(path: &Path, resource: ResourceId) -> u64 {
    path.requests.get(&resource).copied().unwrap_or(0)
}

/// The only facts about a path the response-time bound depends on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathProfile {
    pub length: Duration,
    pub requests: BTreeMap<ResourceId, u64>,
}

impl PathProfile {
    pub fn request_count(&self, resource: ResourceId) -> u64 {
        self.requests.get(&resource).copied().unwrap_or(0)
    }
}

/// How a resource is shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceScope {
    Unused,
    /// Used by the task at this index only.
    Local(usize),
    Global,
}

/// A set of DAG tasks on `m` identical processors sharing `resources`
/// resources.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSet {
    pub m: usize,
    pub resources: usize,
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(m: usize, resources: usize, tasks: Vec<Task>) -> Self {
        TaskSet {
            m,
            resources,
            tasks,
        }
    }

    /// Indices of tasks that request `resource`.
    pub fn users(&self, resource: ResourceId) -> Vec<usize> {
        (0..self.tasks.len())
            .filter(|&i| self.tasks[i].uses(resource))
            .collect()
    }

    pub fn scope(&self, resource: ResourceId) -> ResourceScope {
        let users = self.users(resource);
        match users.len() {
            0 => ResourceScope::Unused,
            1 => ResourceScope::Local(users[0]),
            _ => ResourceScope::Global,
        }
    }

    pub fn globals(&self) -> Vec<ResourceId> {
        (0..self.resources)
            .filter(|&q| self.scope(q) == ResourceScope::Global)
            .collect()
    }

    /// Highest base priority among the users of `resource`; the agent-tier
    /// ceiling of the resource is this value lifted above every base priority.
    pub fn ceiling(&self, resource: ResourceId) -> Option<Priority> {
        self.users(resource)
            .into_iter()
            .map(|i| self.tasks[i].priority)
            .max()
    }

    /// Task indices sorted by decreasing priority.
    pub fn by_priority(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.tasks.len()).collect();
        idx.sort_by(|&a, &b| {
            self.tasks[b]
                .priority
                .cmp(&self.tasks[a].priority)
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn index_of(&self, id: TaskId) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn utilization(&self) -> f64 {
        self.tasks.iter().map(Task::utilization).sum()
    }

    /// Copy with every resource demand removed; critical-section time is kept
    /// inside the vertex WCETs as ordinary execution.
    pub fn without_resources(&self) -> TaskSet {
        let mut ts = self.clone();
        for task in &mut ts.tasks {
            task.cs_lengths.clear();
            for v in &mut task.vertices {
                v.demands.clear();
            }
        }
        ts
    }

    pub fn to_document(&self) -> TaskSetDocument {
        let resources = (0..self.resources)
            .map(|q| ResourceDocument {
                id: q,
                cs_ns: self
                    .tasks
                    .iter()
                    .filter_map(|t| t.cs_lengths.get(&q).map(|&l| (t.id, l)))
                    .collect(),
            })
            .collect();
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskDocument {
                id: t.id,
                priority: t.priority,
                period_ns: t.period,
                deadline_ns: t.deadline,
                vertices: t
                    .vertices
                    .iter()
                    .map(|v| VertexDocument {
                        wcet_ns: v.wcet,
                        demands: v.demands.clone(),
                    })
                    .collect(),
                edges: t.edges.iter().map(|&(a, b)| [a, b]).collect(),
            })
            .collect();
        TaskSetDocument {
            m: self.m,
            resources,
            tasks,
        }
    }

    pub fn from_document(doc: TaskSetDocument) -> Result<TaskSet, ModelError> {
        let mut tasks: Vec<Task> = doc
            .tasks
            .into_iter()
            .map(|t| Task {
                id: t.id,
                priority: t.priority,
                period: t.period_ns,
                deadline: t.deadline_ns,
                vertices: t
                    .vertices
                    .into_iter()
                    .map(|v| Vertex {
                        wcet: v.wcet_ns,
                        demands: v.demands,
                    })
                    .collect(),
                edges: t.edges.into_iter().map(|[a, b]| (a, b)).collect(),
                cs_lengths: BTreeMap::new(),
            })
            .collect();
        for (pos, res) in doc.resources.iter().enumerate() {
            if res.id != pos {
                return Err(ModelError::ResourceNumbering {
                    position: pos,
                    id: res.id,
                });
            }
            for (&task_id, &len) in &res.cs_ns {
                let task =
                    tasks
                        .iter_mut()
                        .find(|t| t.id == task_id)
                        .ok_or(ModelError::UnknownTask {
                            resource: res.id,
                            task: task_id,
                        })?;
                task.cs_lengths.insert(res.id, len);
            }
        }
        Ok(TaskSet {
            m: doc.m,
            resources: doc.resources.len(),
            tasks,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("task set serializes")
    }

    pub fn from_json(text: &str) -> Result<TaskSet, ModelError> {
        let doc: TaskSetDocument = serde_json::from_str(text)?;
        TaskSet::from_document(doc)
    }
}

/// On-disk task-set format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSetDocument {
    pub m: usize,
    pub resources: Vec<ResourceDocument>,
    pub tasks: Vec<TaskDocument>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceDocument {
    pub id: ResourceId,
    /// Critical-section length per task id.
    pub cs_ns: BTreeMap<TaskId, Duration>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDocument {
    pub id: TaskId,
    pub priority: Priority,
    pub period_ns: Duration,
    pub deadline_ns: Duration,
    pub vertices: Vec<VertexDocument>,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexDocument {
    pub wcet_ns: Duration,
    #[serde(default)]
    pub demands: BTreeMap<ResourceId, u32>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed task-set document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("resource at position {position} has id {id}; ids must be 0..n_r in order")]
    ResourceNumbering { position: usize, id: ResourceId },
    #[error("resource {resource} lists a critical-section length for unknown task {task}")]
    UnknownTask { resource: ResourceId, task: TaskId },
}

/// One violated structural invariant.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("platform has no processors")]
    NoProcessors,
    #[error("task {task} has no vertices")]
    EmptyTask { task: TaskId },
    #[error("task {task}: edge ({from}, {to}) refers to a missing vertex")]
    DanglingEdge {
        task: TaskId,
        from: usize,
        to: usize,
    },
    #[error("task {task}: precedence graph has a cycle")]
    Cycle { task: TaskId },
    #[error("task {task}: period must be positive")]
    ZeroPeriod { task: TaskId },
    #[error("task {task}: deadline must be positive")]
    ZeroDeadline { task: TaskId },
    #[error("task {task}: deadline {deadline} exceeds period {period}")]
    DeadlineExceedsPeriod {
        task: TaskId,
        deadline: Duration,
        period: Duration,
    },
    #[error("task {task}: critical sections exceed the task WCET")]
    NegativeNonCritical { task: TaskId },
    #[error("task {task}: vertex {vertex} demands more critical-section time than its WCET")]
    VertexDemandExceedsWcet { task: TaskId, vertex: usize },
    #[error("task {task}: requests resource {resource} which does not exist")]
    UnknownResource { task: TaskId, resource: ResourceId },
    #[error(
        "task {task}: requests resource {resource} without a positive critical-section length"
    )]
    MissingCsLength { task: TaskId, resource: ResourceId },
    #[error("tasks {first} and {second} share priority {priority}")]
    DuplicatePriority {
        first: TaskId,
        second: TaskId,
        priority: Priority,
    },
    #[error("task id {task} is used more than once")]
    DuplicateTaskId { task: TaskId },
}

/// Every violated invariant; an empty list means the set is valid.
pub fn validate_task_set(ts: &TaskSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if ts.m == 0 {
        out.push(Violation::NoProcessors);
    }
    for (a, ta) in ts.tasks.iter().enumerate() {
        for tb in &ts.tasks[a + 1..] {
            if ta.id == tb.id {
                out.push(Violation::DuplicateTaskId { task: ta.id });
            }
            if ta.priority == tb.priority {
                out.push(Violation::DuplicatePriority {
                    first: ta.id,
                    second: tb.id,
                    priority: ta.priority,
                });
            }
        }
    }
    for task in &ts.tasks {
        let id = task.id;
        if task.vertices.is_empty() {
            out.push(Violation::EmptyTask { task: id });
        }
        if task.period == 0 {
            out.push(Violation::ZeroPeriod { task: id });
        }
        if task.deadline == 0 {
            out.push(Violation::ZeroDeadline { task: id });
        }
        if task.deadline > task.period {
            out.push(Violation::DeadlineExceedsPeriod {
                task: id,
                deadline: task.deadline,
                period: task.period,
            });
        }
        let n = task.vertices.len();
        let mut dangling = false;
        for &(a, b) in &task.edges {
            if a >= n || b >= n {
                dangling = true;
                out.push(Violation::DanglingEdge {
                    task: id,
                    from: a,
                    to: b,
                });
            }
        }
        if !dangling && task.topological_order().is_none() {
            out.push(Violation::Cycle { task: id });
        }
        for q in task.resources_used() {
            if q >= ts.resources {
                out.push(Violation::UnknownResource {
                    task: id,
                    resource: q,
                });
            }
            if task.cs_length(q) == 0 {
                out.push(Violation::MissingCsLength {
                    task: id,
                    resource: q,
                });
            }
        }
        for x in 0..n {
            if task.vertex_non_critical(x).is_none() {
                out.push(Violation::VertexDemandExceedsWcet {
                    task: id,
                    vertex: x,
                });
            }
        }
        if task.non_critical_wcet().is_none() {
            out.push(Violation::NegativeNonCritical { task: id });
        }
    }
    out
}
