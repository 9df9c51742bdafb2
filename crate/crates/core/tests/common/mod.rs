#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use dpcpp::model::{Task, TaskSet, Vertex};
use dpcpp::partitioning::{Assignment, Cluster};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Shape {
    pub tasks: usize,
    pub resources: usize,
    pub max_requests: u32,
    pub max_vertices: usize,
    pub max_cores: usize,
    pub period: (u64, u64),
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            tasks: 3,
            resources: 3,
            max_requests: 3,
            max_vertices: 6,
            max_cores: 2,
            period: (200, 600),
        }
    }
}

/// Small random task set with an arbitrary complete assignment.
pub fn random_instance(seed: u64, shape: &Shape) -> (TaskSet, Assignment) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut priorities: Vec<u32> = (1..=shape.tasks as u32).collect();
    priorities.shuffle(&mut rng);
    let mut tasks = Vec::new();
    for (i, &priority) in priorities.iter().enumerate() {
        let period = rng.gen_range(shape.period.0..=shape.period.1);
        let mut task = Task::new(i, priority, period, period);
        let n = rng.gen_range(1..=shape.max_vertices);
        for _ in 0..n {
            task = task.with_vertex(Vertex::new(rng.gen_range(4..=30)));
        }
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.35) {
                    task = task.with_edge(a, b);
                }
            }
        }
        for q in 0..shape.resources {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let len = rng.gen_range(1..=4);
            let count = rng.gen_range(1..=shape.max_requests);
            task = task.with_cs(q, len);
            let mut placed = 0;
            for _ in 0..count {
                let spare: Vec<usize> = (0..n)
                    .filter(|&v| task.vertices[v].wcet >= task.vertex_critical(v) + len)
                    .collect();
                if let Some(&v) = spare.choose(&mut rng) {
                    *task.vertices[v].demands.entry(q).or_insert(0) += 1;
                    placed += 1;
                }
            }
            if placed == 0 {
                task.cs_lengths.remove(&q);
            }
        }
        tasks.push(task);
    }
    let mut clusters = Vec::new();
    let mut next = 0;
    for i in 0..shape.tasks {
        let c = rng.gen_range(1..=shape.max_cores);
        clusters.push(Cluster {
            task: i,
            processors: (next..next + c).collect(),
        });
        next += c;
    }
    let ts = TaskSet::new(next, shape.resources, tasks);
    let placement: BTreeMap<usize, usize> = ts
        .globals()
        .into_iter()
        .map(|q| (q, rng.gen_range(0..next)))
        .collect();
    (
        ts,
        Assignment {
            clusters,
            placement,
        },
    )
}
