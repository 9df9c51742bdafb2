//! Response-time analysis, task/resource partitioning, workload generation
//! and discrete-event simulation for parallel DAG tasks that share resources
//! through the DPCP-p distributed locking protocol under federated
//! scheduling.
//!
//! Time is integer nanoseconds throughout. Utilization arithmetic is generic
//! over [`scalar::UtilizationScalar`]; the partitioner defaults to exact
//! rationals so that worst-fit tie-breaks never depend on rounding.

pub mod analysis;
pub mod fixed_point;
pub mod generator;
pub mod model;
pub mod partitioning;
pub mod scalar;
pub mod simulator;

/// Integer nanoseconds.
pub type Duration = u64;
/// Floating-point utilization, used by the generator.
pub type Utilization = f64;
/// Exact utilization, used by the partitioner by default.
pub type ExactUtilization = num_rational::BigRational;

pub use analysis::{AnalysisContext, AnalysisOptions, Mode, PathBreakdown, TaskReport, WcrtReport};
pub use model::{Path, PathProfile, ResourceId, Task, TaskId, TaskSet, Vertex};
pub use partitioning::{partition_and_analyze, Assignment, Cluster, PartitionOutcome, Verdict};
