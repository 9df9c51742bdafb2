mod common;

use common::{random_instance, Shape};
use dpcpp::analysis::{analyze, AnalysisOptions, Mode};
use dpcpp::model::{Task, TaskSet, Vertex};
use dpcpp::partitioning::{Assignment, Cluster};
use dpcpp::simulator::{
    check_mutual_exclusion, check_priority_ceiling, check_response_bounds,
    check_single_lower_priority_blocking, simulate, two_task_example, EventKind, ExecutionModel,
    ReleaseModel, SegmentLayout, SimConfig, SimTrace, TraceEvent,
};

fn find(trace: &SimTrace, kind: EventKind, task: usize, resource: usize) -> Vec<u64> {
    trace
        .events
        .iter()
        .filter(|e| e.kind == kind && e.task == task && e.resource == Some(resource))
        .map(|e| e.time)
        .collect()
}

fn example_trace() -> (TaskSet, Assignment, SimTrace) {
    let (ts, asg) = two_task_example();
    let config = SimConfig::new(20).with_layout(SegmentLayout::CriticalFirst);
    let trace = simulate(&ts, &asg, &config).unwrap();
    (ts, asg, trace)
}

#[test]
fn example_replays_the_narrated_timeline() {
    let (ts, asg, trace) = example_trace();
    let first_job: Vec<&TraceEvent> = trace.events.iter().filter(|e| e.job == 0).collect();
    let release_lo = first_job
        .iter()
        .find(|e| e.kind == EventKind::LockRelease && e.task == 1 && e.resource == Some(0))
        .unwrap();
    assert_eq!(release_lo.time, 4);
    let end_hi = first_job
        .iter()
        .find(|e| e.kind == EventKind::AgentEnd && e.task == 0 && e.resource == Some(0))
        .unwrap();
    assert_eq!(end_hi.time, 7);
    assert_eq!(end_hi.processor, Some(1));
    // the high-priority request arrived at 2 and waited for the ceiling
    assert_eq!(find(&trace, EventKind::LockRequest, 0, 0)[0], 2);
    assert_eq!(find(&trace, EventKind::LockGrant, 0, 0)[0], 4);
    assert!(check_priority_ceiling(&trace, &ts, &asg).is_empty());
    assert!(check_single_lower_priority_blocking(&trace).is_empty());
    assert!(check_mutual_exclusion(&trace).is_empty());
    assert_eq!(trace.idle_with_ready_work, 0);
}

#[test]
fn removing_a_release_breaks_the_ceiling() {
    let (ts, asg, mut trace) = example_trace();
    let pos = trace
        .events
        .iter()
        .position(|e| e.kind == EventKind::LockRelease && e.task == 1 && e.resource == Some(0))
        .unwrap();
    trace.events.remove(pos);
    assert!(!check_priority_ceiling(&trace, &ts, &asg).is_empty());
    assert!(!check_mutual_exclusion(&trace).is_empty());
}

#[test]
fn chain_runs_for_its_wcet() {
    let t = Task::new(0, 1, 100, 100)
        .with_vertex(Vertex::new(10))
        .with_vertex(Vertex::new(20))
        .with_edge(0, 1);
    let ts = TaskSet::new(1, 0, vec![t]);
    let asg = Assignment {
        clusters: vec![Cluster {
            task: 0,
            processors: vec![0],
        }],
        placement: Default::default(),
    };
    let trace = simulate(&ts, &asg, &SimConfig::new(300)).unwrap();
    assert_eq!(trace.jobs().len(), 3);
    assert!(trace
        .jobs()
        .iter()
        .all(|j| j.finish == Some(j.release + 30)));
    let report = analyze(&ts, &asg, AnalysisOptions::default()).unwrap();
    assert!(check_response_bounds(&trace, &report).is_empty());
    assert!(check_single_lower_priority_blocking(&trace).is_empty());
}

/// Tasks on one processor each, all resources hosted on processor 0.
fn scripted(tasks: Vec<Task>, resources: usize) -> (TaskSet, Assignment) {
    let n = tasks.len();
    let ts = TaskSet::new(n, resources, tasks);
    let asg = Assignment {
        clusters: (0..n)
            .map(|i| Cluster {
                task: ts.tasks[i].id,
                processors: vec![i],
            })
            .collect(),
        placement: ts.globals().into_iter().map(|q| (q, 0)).collect(),
    };
    (ts, asg)
}

#[test]
fn one_lower_priority_blocking_interval() {
    let lo = Task::new(0, 1, 100, 100)
        .with_vertex(Vertex::new(5).with_demand(0, 1))
        .with_cs(0, 4);
    let hi = Task::new(1, 2, 100, 100)
        .with_vertex(Vertex::new(1))
        .with_vertex(Vertex::new(2).with_demand(0, 1))
        .with_edge(0, 1)
        .with_cs(0, 2);
    let (ts, asg) = scripted(vec![lo, hi], 1);
    let config = SimConfig::new(100).with_layout(SegmentLayout::CriticalFirst);
    let trace = simulate(&ts, &asg, &config).unwrap();
    assert_eq!(find(&trace, EventKind::LockGrant, 0, 0), vec![0]);
    assert_eq!(find(&trace, EventKind::LockRequest, 1, 0), vec![1]);
    assert_eq!(find(&trace, EventKind::LockGrant, 1, 0), vec![4]);
    assert_eq!(find(&trace, EventKind::AgentEnd, 1, 0), vec![6]);
    assert_eq!(trace.max_responses()[&1], 6);
    assert!(check_single_lower_priority_blocking(&trace).is_empty());
    assert!(check_priority_ceiling(&trace, &ts, &asg).is_empty());
}

#[test]
fn three_agents_on_one_processor() {
    // lo locks 0 first; mid asks for 1 at 1, hi asks for 0 at 2
    let lo = Task::new(0, 1, 100, 100)
        .with_vertex(Vertex::new(6).with_demand(0, 1).with_demand(1, 1))
        .with_cs(0, 4)
        .with_cs(1, 1);
    let mid = Task::new(1, 2, 100, 100)
        .with_vertex(Vertex::new(1))
        .with_vertex(Vertex::new(3).with_demand(1, 1))
        .with_edge(0, 1)
        .with_cs(1, 3);
    let hi = Task::new(2, 3, 100, 100)
        .with_vertex(Vertex::new(2))
        .with_vertex(Vertex::new(2).with_demand(0, 1))
        .with_edge(0, 1)
        .with_cs(0, 2);
    let (ts, asg) = scripted(vec![lo, mid, hi], 2);
    let config = SimConfig::new(100).with_layout(SegmentLayout::CriticalFirst);
    let trace = simulate(&ts, &asg, &config).unwrap();
    assert_eq!(find(&trace, EventKind::LockGrant, 0, 0), vec![0]);
    assert_eq!(find(&trace, EventKind::LockGrant, 2, 0), vec![4]);
    assert_eq!(find(&trace, EventKind::LockGrant, 1, 1), vec![6]);
    assert_eq!(find(&trace, EventKind::AgentEnd, 1, 1), vec![9]);
    assert!(check_single_lower_priority_blocking(&trace).is_empty());
    assert!(check_priority_ceiling(&trace, &ts, &asg).is_empty());
    assert!(check_mutual_exclusion(&trace).is_empty());
}

#[test]
fn blocking_checker_flags_two_lower_blockers() {
    let ev = |time, kind, task, resource| TraceEvent {
        time,
        kind,
        task,
        job: 0,
        vertex: Some(0),
        resource: Some(resource),
        processor: Some(0),
    };
    let trace = SimTrace {
        priorities: [(0, 1), (1, 2), (2, 3)].into_iter().collect(),
        global_resources: [0, 1, 2].into_iter().collect(),
        events: vec![
            ev(0, EventKind::LockRequest, 2, 2),
            ev(0, EventKind::AgentStart, 0, 0),
            ev(2, EventKind::AgentEnd, 0, 0),
            ev(2, EventKind::AgentStart, 1, 1),
            ev(4, EventKind::AgentEnd, 1, 1),
            ev(4, EventKind::LockGrant, 2, 2),
            ev(4, EventKind::AgentStart, 2, 2),
            ev(5, EventKind::AgentEnd, 2, 2),
        ],
        ..SimTrace::default()
    };
    let v = check_single_lower_priority_blocking(&trace);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].blockers, vec![0, 1]);
}

fn configs(seed: u64, horizon: u64) -> Vec<SimConfig> {
    vec![
        SimConfig::new(horizon).with_seed(seed),
        SimConfig::new(horizon)
            .with_seed(seed)
            .with_layout(SegmentLayout::CriticalFirst),
        SimConfig::new(horizon)
            .with_seed(seed)
            .with_layout(SegmentLayout::Shuffled)
            .with_execution(ExecutionModel::Scaled { min_factor: 0.3 })
            .with_release(ReleaseModel::Sporadic { max_jitter: 0.5 }),
    ]
}

#[test]
fn random_instances_respect_protocol_and_bounds() {
    let shape = Shape {
        tasks: 4,
        resources: 3,
        max_requests: 3,
        max_cores: 2,
        period: (150, 400),
        ..Shape::default()
    };
    let mut checked = 0;
    for seed in 0..150 {
        let (ts, asg) = random_instance(seed, &shape);
        let report = analyze(&ts, &asg, AnalysisOptions::new(Mode::Ep)).unwrap();
        for config in configs(seed, 2000) {
            let trace = simulate(&ts, &asg, &config).unwrap();
            assert!(
                check_priority_ceiling(&trace, &ts, &asg).is_empty(),
                "seed {seed}"
            );
            assert!(check_mutual_exclusion(&trace).is_empty(), "seed {seed}");
            assert!(
                check_single_lower_priority_blocking(&trace).is_empty(),
                "seed {seed}"
            );
            assert_eq!(trace.idle_with_ready_work, 0, "seed {seed}");
            if report.schedulable {
                assert!(
                    check_response_bounds(&trace, &report).is_empty(),
                    "seed {seed}"
                );
                assert_eq!(trace.count(EventKind::DeadlineMiss), 0);
                checked += 1;
            }
        }
    }
    assert!(checked > 30, "only {checked} schedulable runs");
}

#[test]
fn traces_are_deterministic_and_export() {
    let shape = Shape::default();
    let (ts, asg) = random_instance(77, &shape);
    for config in configs(5, 1500) {
        let a = simulate(&ts, &asg, &config).unwrap();
        let b = simulate(&ts, &asg, &config).unwrap();
        assert_eq!(a.to_ndjson(), b.to_ndjson());
        assert_eq!(
            SimTrace::events_from_ndjson(&a.to_ndjson()).unwrap(),
            a.events
        );
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("time,kind,task,processor\n"));
        assert_eq!(csv.lines().count(), a.events.len() + 1);
        assert!(a.events.windows(2).all(|w| w[0].time <= w[1].time));
    }
}

#[test]
fn every_global_release_is_followed_by_resume() {
    let (ts, asg) = random_instance(
        3,
        &Shape {
            tasks: 4,
            resources: 2,
            ..Shape::default()
        },
    );
    let trace = simulate(&ts, &asg, &SimConfig::new(2000)).unwrap();
    for (i, e) in trace.events.iter().enumerate() {
        if e.kind == EventKind::LockRelease && trace.global_resources.contains(&e.resource.unwrap())
        {
            let next = &trace.events[i + 1];
            assert_eq!(next.kind, EventKind::Resume);
            assert_eq!(
                (next.task, next.job, next.vertex, next.time),
                (e.task, e.job, e.vertex, e.time)
            );
        }
    }
    let grants = trace.count(EventKind::LockGrant);
    assert_eq!(grants, trace.count(EventKind::LockRelease));
}

#[test]
fn rejects_bad_inputs() {
    let (ts, mut asg) = two_task_example();
    assert!(simulate(&ts, &asg, &SimConfig::new(5)).is_err());
    asg.placement.clear();
    assert!(simulate(&ts, &asg, &SimConfig::new(50)).is_err());
}
