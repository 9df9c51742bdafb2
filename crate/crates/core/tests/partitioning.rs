use dpcpp::analysis::{AnalysisOptions, Mode};
use dpcpp::model::{Task, TaskSet, Vertex};
use dpcpp::partitioning::{partition_and_analyze, run_method, FailureStage, Method, Verdict};

fn contended(m: usize) -> TaskSet {
    let mut hi = Task::new(0, 2, 20, 20);
    for _ in 0..4 {
        hi = hi.with_vertex(Vertex::new(10));
    }
    hi.vertices[0] = Vertex::new(10).with_demand(0, 1);
    let hi = hi.with_cs(0, 1);
    let lo = Task::new(1, 1, 100, 100)
        .with_vertex(Vertex::new(10).with_demand(0, 1))
        .with_vertex(Vertex::new(10))
        .with_cs(0, 2);
    TaskSet::new(m, 1, vec![hi, lo])
}

#[test]
fn extra_cores_until_schedulable() {
    let out = partition_and_analyze(&contended(6), AnalysisOptions::new(Mode::Ep));
    assert_eq!(out.verdict, Verdict::Schedulable);
    assert_eq!(out.rounds, 2);
    let asg = out.assignment.unwrap();
    assert_eq!(asg.cluster_of(0).unwrap().processors, vec![0, 1, 2, 3, 4]);
    assert_eq!(asg.cluster_of(1).unwrap().processors, vec![5]);
    assert_eq!(asg.placement.get(&0), Some(&0));
    let report = out.report.unwrap();
    assert_eq!(report.response_of(0), Some(19));
    assert_eq!(report.response_of(1), Some(22));
}

#[test]
fn runs_out_of_processors() {
    let out = partition_and_analyze(&contended(5), AnalysisOptions::new(Mode::Ep));
    assert_eq!(
        out.verdict,
        Verdict::Unschedulable {
            stage: FailureStage::Analysis,
            task: Some(0)
        }
    );
    assert_eq!(out.rounds, 1);
}

#[test]
fn local_gate_cannot_be_bought_with_cores() {
    let mut t = Task::new(0, 1, 20, 20).with_cs(0, 10);
    for _ in 0..3 {
        t = t.with_vertex(Vertex::new(10).with_demand(0, 1));
    }
    let out = partition_and_analyze(&TaskSet::new(4, 1, vec![t]), AnalysisOptions::new(Mode::Ep));
    assert_eq!(
        out.verdict,
        Verdict::Unschedulable {
            stage: FailureStage::Analysis,
            task: Some(0)
        }
    );
    assert_eq!(out.rounds, 2);
}

#[test]
fn initial_assignment_limits() {
    let mut t = Task::new(0, 1, 15, 15);
    for _ in 0..3 {
        t = t.with_vertex(Vertex::new(10));
    }
    let fits = partition_and_analyze(
        &TaskSet::new(4, 0, vec![t.clone()]),
        AnalysisOptions::new(Mode::Ep),
    );
    assert_eq!(fits.verdict, Verdict::Schedulable);
    assert_eq!(fits.rounds, 0);
    assert_eq!(fits.report.unwrap().response_of(0), Some(15));
    let short = partition_and_analyze(&TaskSet::new(3, 0, vec![t]), AnalysisOptions::new(Mode::Ep));
    assert_eq!(
        short.verdict,
        Verdict::Unschedulable {
            stage: FailureStage::InitialAssignment,
            task: Some(0)
        }
    );
}

#[test]
fn federated_baseline_accepts_what_protocol_accepts() {
    for m in 5..8 {
        let ts = contended(m);
        let fed = run_method(&ts, Method::FedFp, 1000);
        for method in [Method::Ep, Method::En] {
            if run_method(&ts, method, 1000).verdict.is_schedulable() {
                assert!(fed.verdict.is_schedulable());
            }
        }
        assert!(fed.verdict.is_schedulable());
        assert_eq!(fed.rounds, 0);
    }
}
