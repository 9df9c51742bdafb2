use std::collections::BTreeMap;
use std::fs;
use std::process::Command;

use dpcpp::generator::Scenario;
use dpcpp::partitioning::Method;
use experiment::{
    dominance_outperformance, emit_results, run_scenario_grid, write_records, ComparisonError,
    ExperimentConfig, Record, ResultTable, Row, CSV_HEADER,
};
use proptest::prelude::*;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        scenarios: vec![Scenario {
            m: 16,
            nr_lo: 4,
            nr_hi: 8,
            pr: 0.5,
            uavg: 1.5,
            ..Scenario::default()
        }],
        reps: 6,
        points: Some(8),
        seed: 5,
        ..ExperimentConfig::default()
    }
}

#[test]
fn curves_are_emitted_per_scenario_and_mode() {
    let config = small_config();
    let result = run_scenario_grid(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_results(&result.table, dir.path()).unwrap();
    assert_eq!(files.len(), 1 + 3);
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(ResultTable::from_csv(&csv).unwrap(), result.table);
    let id = config.scenarios[0].id();
    for mode in ["EP", "EN", "FED-FP"] {
        let plot =
            fs::read_to_string(dir.path().join("plot").join(format!("{id}_{mode}.csv"))).unwrap();
        let mut lines = plot.lines();
        assert_eq!(lines.next(), Some("normalized_utilization,ratio"));
        let xs: Vec<f64> = lines
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(xs.len(), 8);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert!(xs[0] > 1.0 / 16.0 && (xs[7] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn every_replicate_is_recorded_once_with_every_mode() {
    let config = small_config();
    let result = run_scenario_grid(&config).unwrap();
    let mut seen: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for r in &result.records {
        *seen.entry((r.scenario_index, r.point, r.rep)).or_insert(0) += 1;
        let modes: Vec<Method> = r.verdicts.iter().map(|v| v.mode).collect();
        assert_eq!(modes, Method::ALL.to_vec());
        for m in [Method::Ep, Method::En] {
            if r.accepted(m) == Some(true) {
                assert_eq!(r.accepted(Method::FedFp), Some(true));
            }
        }
    }
    assert_eq!(seen.len(), 8 * 6);
    assert!(seen.values().all(|&n| n == 1));
    for row in &result.table.rows {
        assert!(row.accepted <= row.total);
        assert!((0.0..=1.0).contains(&row.ratio()));
        assert_eq!(row.total, 6);
    }
}

#[test]
fn acceptance_vanishes_near_full_utilization() {
    let config = ExperimentConfig {
        scenarios: vec![Scenario {
            m: 8,
            nr_lo: 2,
            nr_hi: 4,
            pr: 1.0,
            ..Scenario::default()
        }],
        reps: 20,
        points: Some(10),
        seed: 3,
        ..ExperimentConfig::default()
    };
    let result = run_scenario_grid(&config).unwrap();
    let id = config.scenarios[0].id();
    let fed = result.table.curve(&id, Method::FedFp);
    assert_eq!(fed[0].accepted, fed[0].total);
    for mode in [Method::Ep, Method::En] {
        assert_eq!(result.table.curve(&id, mode).last().unwrap().accepted, 0);
    }
}

#[test]
fn records_carry_seed_tuples() {
    let config = ExperimentConfig {
        reps: 2,
        points: Some(3),
        ..small_config()
    };
    let result = run_scenario_grid(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.ndjson");
    write_records(&result.records, &path).unwrap();
    let back: Vec<Record> = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(back, result.records);
    for r in &back {
        assert_eq!(
            r.seed[..4],
            [5, r.scenario_index as u64, r.point as u64, r.rep as u64]
        );
        assert_eq!(r.seed[4], r.redraws);
    }
}

#[test]
fn same_seed_same_table() {
    let a = run_scenario_grid(&ExperimentConfig {
        threads: Some(1),
        ..small_config()
    })
    .unwrap();
    let b = run_scenario_grid(&ExperimentConfig {
        threads: Some(3),
        ..small_config()
    })
    .unwrap();
    assert_eq!(a.table.to_csv(), b.table.to_csv());
    assert_eq!(a.records, b.records);
    let c = run_scenario_grid(&ExperimentConfig {
        seed: 6,
        ..small_config()
    })
    .unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn sim_check_audits_accepted_sets() {
    let config = ExperimentConfig {
        scenarios: vec![Scenario {
            m: 8,
            nr_lo: 2,
            nr_hi: 4,
            ..Scenario::default()
        }],
        reps: 3,
        points: Some(4),
        sim_check: true,
        ..ExperimentConfig::default()
    };
    let result = run_scenario_grid(&config).unwrap();
    let mut audited = 0;
    for v in result.records.iter().flat_map(|r| &r.verdicts) {
        match (v.mode, v.accepted) {
            (Method::FedFp, _) | (_, false) => assert!(v.sim.is_none()),
            _ => {
                let s = v.sim.as_ref().unwrap();
                assert_eq!(s.runs, 2);
                assert_eq!(s.violations(), 0);
                audited += 1;
            }
        }
    }
    assert!(audited > 0);
}

#[test]
fn dominance_needs_both_modes() {
    let config = ExperimentConfig {
        modes: vec![Method::Ep],
        reps: 1,
        points: Some(2),
        ..small_config()
    };
    let result = run_scenario_grid(&config).unwrap();
    assert_eq!(
        dominance_outperformance(&result.table, Method::Ep, Method::En),
        Err(ComparisonError::MissingMode(Method::En))
    );
}

fn arb_row() -> impl Strategy<Value = Row> {
    (
        0usize..3,
        1usize..64,
        0usize..40,
        0usize..40,
        prop::sample::select(Method::ALL.to_vec()),
        1.0f64..64.0,
    )
        .prop_map(|(s, m, a, extra, mode, u)| Row {
            scenario: format!("s{s}"),
            m,
            nr_lo: 2,
            nr_hi: 4,
            uavg: 1.5,
            pr: 0.75,
            nmax: 25,
            llo_us: 15,
            lhi_us: 50,
            upoint: u,
            mode,
            accepted: a,
            total: a + extra,
        })
}

proptest! {
    #[test]
    fn csv_round_trips(rows in prop::collection::vec(arb_row(), 0..20)) {
        let table = ResultTable { rows };
        prop_assert_eq!(ResultTable::from_csv(&table.to_csv()).unwrap(), table);
    }

    #[test]
    fn a_mode_never_beats_itself(rows in prop::collection::vec(arb_row(), 1..20)) {
        let table = ResultTable { rows };
        for mode in table.modes() {
            let c = dominance_outperformance(&table, mode, mode).unwrap();
            prop_assert_eq!((c.outperform, c.dominate), (0, 0));
        }
    }
}

fn dpcpp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpcpp"))
}

#[test]
fn binary_runs_a_grid_and_compares_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpcpp()
        .args([
            "grid", "--m", "8", "--nr", "2-4", "--points", "3", "--reps", "2", "--seed", "9",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("EP over EN"));
    let results = dir.path().join("results.csv");
    let cmp = dpcpp().arg("dominance").arg(&results).output().unwrap();
    assert!(cmp.status.success());
    let json: serde_json::Value = serde_json::from_slice(&cmp.stdout).unwrap();
    assert_eq!(json["scenarios"], 1);
    assert!(dir.path().join("records.ndjson").exists());
}

#[test]
fn binary_generates_analyzes_and_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let ts = dir.path().join("ts.json");
    let out = dpcpp()
        .args(["generate", "--m", "8", "--nr", "2-4", "--utilization", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    fs::write(&ts, &out.stdout).unwrap();
    let asg = dir.path().join("asg.json");
    let out = dpcpp()
        .arg("analyze")
        .arg(&ts)
        .arg("--assignment")
        .arg(&asg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let trace = dir.path().join("trace.ndjson");
    let out = dpcpp()
        .arg("simulate")
        .arg(&ts)
        .arg("--assignment")
        .arg(&asg)
        .args(["--scaled", "0.5", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ceiling violations: 0"));
    assert!(stdout.contains("blocking violations: 0"));
    assert!(fs::read_to_string(&trace).unwrap().lines().count() > 0);
}

#[test]
fn binary_rejects_bad_configuration() {
    for args in [
        vec!["grid", "--reps", "0"],
        vec!["grid", "--modes", "XYZ"],
        vec!["grid", "--nr", "8-4"],
        vec!["grid", "--pr", "1.5"],
    ] {
        let out = dpcpp()
            .args(&args)
            .arg("--out")
            .arg(std::env::temp_dir().join("never"))
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} was accepted");
    }
}
