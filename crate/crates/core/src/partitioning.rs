//! Processor clusters per task and worst-fit-decreasing placement of global
//! resources, iterated with the response-time analysis until every task
//! meets its deadline or processors run out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisContext, AnalysisOptions, Mode, PathCache, WcrtReport};
use crate::fixed_point::div_ceil;
use crate::model::{ResourceId, Task, TaskId, TaskSet};
use crate::scalar::UtilizationScalar;
use crate::ExactUtilization;

/// Processors dedicated to one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub task: TaskId,
    pub processors: Vec<usize>,
}

/// Clusters plus the processor hosting each global resource.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub clusters: Vec<Cluster>,
    pub placement: BTreeMap<ResourceId, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AssignmentError {
    #[error("task {0} has no cluster")]
    MissingCluster(TaskId),
    #[error("task {0} has an empty cluster")]
    EmptyCluster(TaskId),
    #[error("processor {0} belongs to more than one cluster")]
    OverlappingClusters(usize),
    #[error("processor {processor} does not exist on an {m}-processor platform")]
    NoSuchProcessor { processor: usize, m: usize },
    #[error("global resource {0} is not placed")]
    UnplacedGlobal(ResourceId),
    #[error("placement names resource {0} which does not exist")]
    UnknownResource(ResourceId),
}

impl Assignment {
    pub fn cluster_of(&self, task: TaskId) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.task == task)
    }

    /// Task owning `processor`, if any.
    pub fn owner_of(&self, processor: usize) -> Option<TaskId> {
        self.clusters
            .iter()
            .find(|c| c.processors.contains(&processor))
            .map(|c| c.task)
    }

    pub fn assigned_processors(&self) -> usize {
        self.clusters.iter().map(|c| c.processors.len()).sum()
    }

    /// Global resources hosted on `processor`, ascending.
    pub fn hosted_on(&self, processor: usize) -> Vec<ResourceId> {
        self.placement
            .iter()
            .filter(|(_, &k)| k == processor)
            .map(|(&q, _)| q)
            .collect()
    }

    /// Disjoint non-empty clusters for every task, within `m` processors,
    /// and every global resource placed.
    pub fn check(&self, ts: &TaskSet) -> Result<(), AssignmentError> {
        let mut seen = vec![false; ts.m];
        for cluster in &self.clusters {
            for &k in &cluster.processors {
                if k >= ts.m {
                    return Err(AssignmentError::NoSuchProcessor {
                        processor: k,
                        m: ts.m,
                    });
                }
                if std::mem::replace(&mut seen[k], true) {
                    return Err(AssignmentError::OverlappingClusters(k));
                }
            }
        }
        for task in &ts.tasks {
            match self.cluster_of(task.id) {
                None => return Err(AssignmentError::MissingCluster(task.id)),
                Some(c) if c.processors.is_empty() => {
                    return Err(AssignmentError::EmptyCluster(task.id))
                }
                Some(_) => {}
            }
        }
        for (&q, &k) in &self.placement {
            if q >= ts.resources {
                return Err(AssignmentError::UnknownResource(q));
            }
            if k >= ts.m {
                return Err(AssignmentError::NoSuchProcessor {
                    processor: k,
                    m: ts.m,
                });
            }
        }
        for q in ts.globals() {
            if !self.placement.contains_key(&q) {
                return Err(AssignmentError::UnplacedGlobal(q));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// The longest path does not fit in the deadline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("longest path {longest} does not fit in deadline {deadline}")]
pub struct TriviallyInfeasible {
    pub longest: u64,
    pub deadline: u64,
}

/// `⌈(C_i − 𝓛*_i) / (D_i − 𝓛*_i)⌉`, at least one.
pub fn initial_core_count(task: &Task) -> Result<usize, TriviallyInfeasible> {
    let longest = task.longest_path_length();
    let deadline = task.deadline;
    if longest >= deadline {
        return Err(TriviallyInfeasible { longest, deadline });
    }
    let spare = task.wcet() - longest;
    Ok((div_ceil(spare, deadline - longest) as usize).max(1))
}

/// `u^Φ_q = Σ_j N_{j,q}·L_{j,q} / T_j`.
pub fn resource_utilization<S: UtilizationScalar>(q: ResourceId, ts: &TaskSet) -> S {
    ts.tasks
        .iter()
        .filter(|t| t.uses(q))
        .map(|t| {
            S::from_ratio(
                u128::from(t.request_count(q) * t.cs_length(q)),
                u128::from(t.period),
            )
        })
        .fold(S::zero(), |acc, u| acc + u)
}

/// Capacity and load of one cluster during worst-fit placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLoad<S> {
    pub capacity: S,
    pub utilization: S,
    pub processors: Vec<usize>,
}

impl<S: UtilizationScalar> ClusterLoad<S> {
    pub fn slack(&self) -> S {
        self.capacity.clone() - self.utilization.clone()
    }
}

/// Output of a feasible worst-fit run.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement<S> {
    pub hosts: BTreeMap<ResourceId, usize>,
    pub clusters: Vec<ClusterLoad<S>>,
    /// `u^℘_k` for every processor that appears in a cluster.
    pub processor_load: BTreeMap<usize, S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("resource {resource} does not fit in the cluster with the most slack")]
pub struct PlacementInfeasible {
    pub resource: ResourceId,
}

/// Worst-fit decreasing over abstract loads.
///
/// Resources go in non-increasing utilization (ties: lower id) to the cluster
/// with maximum slack (ties: lower index), and within it to the processor
/// with the least resource load (ties: lower processor index).
pub fn worst_fit_decreasing<S: UtilizationScalar>(
    resources: &[(ResourceId, S)],
    mut clusters: Vec<ClusterLoad<S>>,
) -> Result<Placement<S>, PlacementInfeasible> {
    let mut order: Vec<&(ResourceId, S)> = resources.iter().collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut processor_load: BTreeMap<usize, S> = clusters
        .iter()
        .flat_map(|c| c.processors.iter().map(|&k| (k, S::zero())))
        .collect();
    let mut hosts = BTreeMap::new();
    for (q, u) in order {
        let mut best: Option<usize> = None;
        for (x, c) in clusters.iter().enumerate() {
            if c.processors.is_empty() {
                continue;
            }
            best = match best {
                Some(b) if clusters[b].slack() >= c.slack() => Some(b),
                _ => Some(x),
            };
        }
        let Some(x) = best else {
            return Err(PlacementInfeasible { resource: *q });
        };
        let cluster = &mut clusters[x];
        if cluster.utilization.clone() + u.clone() > cluster.capacity {
            return Err(PlacementInfeasible { resource: *q });
        }
        let mut target = cluster.processors[0];
        for &k in &cluster.processors[1..] {
            if processor_load[&k] < processor_load[&target] {
                target = k;
            }
        }
        let load = processor_load.get_mut(&target).expect("cluster processor");
        *load = load.clone() + u.clone();
        cluster.utilization = cluster.utilization.clone() + u.clone();
        hosts.insert(*q, target);
    }
    Ok(Placement {
        hosts,
        clusters,
        processor_load,
    })
}

/// Places the global resources of `ts` on the given clusters.
pub fn wfd_resources<S: UtilizationScalar>(
    ts: &TaskSet,
    clusters: &[Cluster],
) -> Result<Placement<S>, PlacementInfeasible> {
    let resources: Vec<(ResourceId, S)> = ts
        .globals()
        .into_iter()
        .map(|q| (q, resource_utilization::<S>(q, ts)))
        .collect();
    let loads = clusters
        .iter()
        .map(|c| {
            let owner = ts
                .tasks
                .iter()
                .find(|t| t.id == c.task)
                .expect("cluster owner exists");
            ClusterLoad {
                capacity: S::from_count(c.processors.len()),
                utilization: S::from_ratio(u128::from(owner.wcet()), u128::from(owner.period)),
                processors: c.processors.clone(),
            }
        })
        .collect();
    worst_fit_decreasing(&resources, loads)
}

/// Where a partitioning attempt gave up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureStage {
    InitialAssignment,
    ResourcePlacement,
    Analysis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Schedulable,
    Unschedulable {
        stage: FailureStage,
        task: Option<TaskId>,
    },
}

impl Verdict {
    pub fn is_schedulable(&self) -> bool {
        matches!(self, Verdict::Schedulable)
    }
}

#[derive(Clone, Debug)]
pub struct PartitionOutcome {
    pub verdict: Verdict,
    /// Last assignment tried; absent when the initial assignment failed.
    pub assignment: Option<Assignment>,
    /// Full report when schedulable.
    pub report: Option<WcrtReport>,
    /// Extra processors granted after the initial assignment.
    pub rounds: usize,
}

/// Which test a partitioning run applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "EP")]
    Ep,
    #[serde(rename = "EN")]
    En,
    /// Federated scheduling ignoring shared resources.
    #[serde(rename = "FED-FP")]
    FedFp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ep, Method::En, Method::FedFp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ep => "EP",
            Method::En => "EN",
            Method::FedFp => "FED-FP",
        }
    }

    pub fn parse(text: &str) -> Option<Method> {
        match text.trim().to_ascii_uppercase().as_str() {
            "EP" => Some(Method::Ep),
            "EN" => Some(Method::En),
            "FED-FP" | "FEDFP" | "FED" => Some(Method::FedFp),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn clusters_for(ts: &TaskSet, counts: &[usize]) -> Vec<Cluster> {
    let mut next = 0;
    ts.tasks
        .iter()
        .zip(counts)
        .map(|(t, &c)| {
            let processors = (next..next + c).collect();
            next += c;
            Cluster {
                task: t.id,
                processors,
            }
        })
        .collect()
}

/// Runs a method end to end with exact utilization arithmetic.
pub fn run_method(ts: &TaskSet, method: Method, path_cap: usize) -> PartitionOutcome {
    match method {
        Method::Ep => partition_and_analyze(
            ts,
            AnalysisOptions {
                mode: Mode::Ep,
                path_cap,
            },
        ),
        Method::En => partition_and_analyze(
            ts,
            AnalysisOptions {
                mode: Mode::En,
                path_cap,
            },
        ),
        Method::FedFp => partition_and_analyze(
            &ts.without_resources(),
            AnalysisOptions {
                mode: Mode::En,
                path_cap,
            },
        ),
    }
}

/// Task and resource partitioning with exact utilizations.
pub fn partition_and_analyze(ts: &TaskSet, options: AnalysisOptions) -> PartitionOutcome {
    partition_and_analyze_with::<ExactUtilization>(ts, options)
}

/// Task and resource partitioning.
///
/// Every task starts with its federated core count. Each round places the
/// global resources afresh, then analyzes tasks by decreasing priority; the
/// first task that misses its deadline gets one more processor and the round
/// restarts. Placement is recomputed from scratch every round.
pub fn partition_and_analyze_with<S: UtilizationScalar>(
    ts: &TaskSet,
    options: AnalysisOptions,
) -> PartitionOutcome {
    let unschedulable = |stage, task, assignment, rounds| PartitionOutcome {
        verdict: Verdict::Unschedulable { stage, task },
        assignment,
        report: None,
        rounds,
    };
    let mut counts = Vec::with_capacity(ts.tasks.len());
    let mut used = 0;
    for task in &ts.tasks {
        let need = match initial_core_count(task) {
            Ok(n) => n,
            Err(_) => {
                return unschedulable(FailureStage::InitialAssignment, Some(task.id), None, 0)
            }
        };
        if used + need > ts.m {
            return unschedulable(FailureStage::InitialAssignment, Some(task.id), None, 0);
        }
        used += need;
        counts.push(need);
    }
    let cache = (options.mode == Mode::Ep).then(|| PathCache::build(ts, options.path_cap));
    let mut rounds = 0;
    loop {
        let clusters = clusters_for(ts, &counts);
        let placement = match wfd_resources::<S>(ts, &clusters) {
            Ok(p) => p,
            Err(PlacementInfeasible { .. }) => {
                let assignment = Assignment {
                    clusters,
                    placement: BTreeMap::new(),
                };
                return unschedulable(
                    FailureStage::ResourcePlacement,
                    None,
                    Some(assignment),
                    rounds,
                );
            }
        };
        let assignment = Assignment {
            clusters,
            placement: placement.hosts,
        };
        let mut ctx = AnalysisContext::new(ts, &assignment, options)
            .expect("partitioner builds complete assignments");
        if let Some(cache) = &cache {
            ctx = ctx.with_cache(cache);
        }
        let (_, failure) = ctx.priority_pass(true);
        match failure {
            None => {
                let report = ctx.analyze();
                return PartitionOutcome {
                    verdict: Verdict::Schedulable,
                    assignment: Some(assignment),
                    report: Some(report),
                    rounds,
                };
            }
            Some(i) if used < ts.m => {
                counts[i] += 1;
                used += 1;
                rounds += 1;
            }
            Some(i) => {
                return unschedulable(
                    FailureStage::Analysis,
                    Some(ts.tasks[i].id),
                    Some(assignment),
                    rounds,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vertex;
    use num_rational::BigRational;

    fn load(
        capacity: usize,
        used: (u128, u128),
        processors: Vec<usize>,
    ) -> ClusterLoad<BigRational> {
        ClusterLoad {
            capacity: BigRational::from_count(capacity),
            utilization: BigRational::from_ratio(used.0, used.1),
            processors,
        }
    }

    #[test]
    fn core_count_formula() {
        // C=22, L*=10, D=14 → ⌈12/4⌉ = 3
        let t = Task::new(0, 1, 20, 14)
            .with_vertex(Vertex::new(10))
            .with_vertex(Vertex::new(12));
        assert_eq!(t.longest_path_length(), 12);
        let t = Task::new(0, 1, 20, 14)
            .with_vertex(Vertex::new(4))
            .with_vertex(Vertex::new(6))
            .with_vertex(Vertex::new(12))
            .with_edge(0, 1);
        assert_eq!((t.wcet(), t.longest_path_length()), (22, 12));
        let t = Task::new(0, 1, 20, 14)
            .with_vertex(Vertex::new(4))
            .with_vertex(Vertex::new(6))
            .with_vertex(Vertex::new(6))
            .with_vertex(Vertex::new(6))
            .with_edge(0, 1);
        assert_eq!((t.wcet(), t.longest_path_length()), (22, 10));
        assert_eq!(initial_core_count(&t), Ok(3));
    }

    #[test]
    fn chain_needs_one_core() {
        let t = Task::new(0, 1, 20, 14)
            .with_vertex(Vertex::new(5))
            .with_vertex(Vertex::new(5))
            .with_edge(0, 1);
        assert_eq!(initial_core_count(&t), Ok(1));
    }

    #[test]
    fn longest_path_equal_to_deadline_is_infeasible() {
        let t = Task::new(0, 1, 20, 10).with_vertex(Vertex::new(10));
        assert_eq!(
            initial_core_count(&t),
            Err(TriviallyInfeasible {
                longest: 10,
                deadline: 10
            })
        );
    }

    #[test]
    fn resource_utilization_sums_tasks() {
        let ms = 1_000_000;
        let a = Task::new(0, 2, 100 * ms, 100 * ms)
            .with_vertex(Vertex::new(20 * ms).with_demand(0, 10))
            .with_cs(0, ms);
        assert_eq!(
            resource_utilization::<f64>(0, &TaskSet::new(2, 1, vec![a.clone()])),
            0.1
        );
        let b = Task::new(1, 1, 50 * ms, 50 * ms)
            .with_vertex(Vertex::new(20 * ms).with_demand(0, 5))
            .with_cs(0, 2 * ms);
        let ts = TaskSet::new(2, 2, vec![a, b]);
        // ledger: 10·1/100 + 5·2/50 = 0.3
        assert_eq!(
            resource_utilization::<BigRational>(0, &ts),
            BigRational::from_ratio(3, 10)
        );
        assert_eq!(
            resource_utilization::<BigRational>(1, &ts),
            BigRational::from_ratio(0, 1)
        );
    }

    #[test]
    fn worst_fit_hand_trace() {
        // slacks 0.5 and 0.4; resources 0.3, 0.2, 0.1
        let clusters = vec![load(2, (15, 10), vec![0, 1]), load(2, (16, 10), vec![2, 3])];
        let resources = vec![
            (0, BigRational::from_ratio(1, 10)),
            (1, BigRational::from_ratio(3, 10)),
            (2, BigRational::from_ratio(2, 10)),
        ];
        let placed = worst_fit_decreasing(&resources, clusters).unwrap();
        assert_eq!(placed.hosts[&1], 0);
        assert_eq!(placed.hosts[&2], 2);
        // tie at slack 0.2 goes to the lower cluster, least-loaded processor
        assert_eq!(placed.hosts[&0], 1);
        assert!(placed
            .clusters
            .iter()
            .all(|c| c.slack() >= BigRational::from_count(0)));
    }

    #[test]
    fn worst_fit_without_resources() {
        let placed = worst_fit_decreasing::<f64>(
            &[],
            vec![ClusterLoad {
                capacity: 1.0,
                utilization: 0.5,
                processors: vec![0],
            }],
        )
        .unwrap();
        assert!(placed.hosts.is_empty());
    }

    #[test]
    fn worst_fit_rejects_oversized_resource() {
        let clusters = vec![load(2, (18, 10), vec![0, 1]), load(1, (9, 10), vec![2])];
        let resources = vec![(0, BigRational::from_ratio(3, 10))];
        assert_eq!(
            worst_fit_decreasing(&resources, clusters),
            Err(PlacementInfeasible { resource: 0 })
        );
    }

    #[test]
    fn assignment_check_catches_overlap_and_unplaced() {
        let a = Task::new(0, 2, 10, 10)
            .with_vertex(Vertex::new(5).with_demand(0, 1))
            .with_cs(0, 1);
        let b = Task::new(1, 1, 10, 10)
            .with_vertex(Vertex::new(5).with_demand(0, 1))
            .with_cs(0, 1);
        let ts = TaskSet::new(4, 1, vec![a, b]);
        let mut asg = Assignment {
            clusters: vec![
                Cluster {
                    task: 0,
                    processors: vec![0, 1],
                },
                Cluster {
                    task: 1,
                    processors: vec![1, 2],
                },
            ],
            placement: BTreeMap::new(),
        };
        assert_eq!(asg.check(&ts), Err(AssignmentError::OverlappingClusters(1)));
        asg.clusters[1].processors = vec![2, 3];
        assert_eq!(asg.check(&ts), Err(AssignmentError::UnplacedGlobal(0)));
        asg.placement.insert(0, 3);
        assert_eq!(asg.check(&ts), Ok(()));
        assert_eq!(asg.owner_of(3), Some(1));
        let back = Assignment::from_json(&asg.to_json()).unwrap();
        assert_eq!(back, asg);
    }
}
