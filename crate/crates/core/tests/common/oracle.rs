//! Straight-line reimplementation of the per-path bound, solved by linear
//! scans instead of fixed-point iteration.

use std::collections::BTreeMap;

use dpcpp::model::{PathEnumeration, TaskSet};
use dpcpp::partitioning::Assignment;

pub struct Oracle<'a> {
    pub ts: &'a TaskSet,
    pub assignment: &'a Assignment,
    /// Known bounds; `None` falls back to the deadline.
    pub known: Vec<Option<u64>>,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

impl<'a> Oracle<'a> {
    pub fn new(ts: &'a TaskSet, assignment: &'a Assignment) -> Self {
        Oracle {
            ts,
            assignment,
            known: vec![None; ts.tasks.len()],
        }
    }

    fn n(&self, j: usize, q: usize) -> u64 {
        self.ts.tasks[j]
            .vertices
            .iter()
            .map(|v| u64::from(v.demands.get(&q).copied().unwrap_or(0)))
            .sum()
    }

    fn l(&self, j: usize, q: usize) -> u64 {
        self.ts.tasks[j].cs_lengths.get(&q).copied().unwrap_or(0)
    }

    fn prio(&self, j: usize) -> u32 {
        self.ts.tasks[j].priority
    }

    fn users(&self, q: usize) -> Vec<usize> {
        (0..self.ts.tasks.len())
            .filter(|&j| self.n(j, q) > 0)
            .collect()
    }

    fn is_global(&self, q: usize) -> bool {
        self.users(q).len() >= 2
    }

    fn is_local_to(&self, q: usize, i: usize) -> bool {
        self.users(q) == vec![i]
    }

    fn host(&self, q: usize) -> Option<usize> {
        if self.is_global(q) {
            self.assignment.placement.get(&q).copied()
        } else {
            None
        }
    }

    fn on_processor(&self, k: usize) -> Vec<usize> {
        (0..self.ts.resources)
            .filter(|&q| self.host(q) == Some(k))
            .collect()
    }

    fn ceiling(&self, q: usize) -> u32 {
        self.users(q)
            .into_iter()
            .map(|j| self.prio(j))
            .max()
            .unwrap_or(0)
    }

    fn cluster(&self, i: usize) -> Vec<usize> {
        self.assignment
            .cluster_of(self.ts.tasks[i].id)
            .unwrap()
            .processors
            .clone()
    }

    pub fn eta(&self, j: usize, t: u64) -> u64 {
        let task = &self.ts.tasks[j];
        ceil_div(t + self.known[j].unwrap_or(task.deadline), task.period)
    }

    pub fn gamma(&self, i: usize, q: usize, t: u64) -> u64 {
        let k = self.host(q).unwrap();
        let mut total = 0;
        for h in 0..self.ts.tasks.len() {
            if self.prio(h) <= self.prio(i) {
                continue;
            }
            for u in self.on_processor(k) {
                if self.n(h, u) > 0 {
                    total += self.eta(h, t) * self.n(h, u) * self.l(h, u);
                }
            }
        }
        total
    }

    pub fn beta(&self, i: usize, q: usize) -> u64 {
        let k = self.host(q).unwrap();
        let mut worst = 0;
        for u in self.on_processor(k) {
            if self.ceiling(u) < self.prio(i) {
                continue;
            }
            for j in 0..self.ts.tasks.len() {
                if self.prio(j) < self.prio(i) && self.n(j, u) > 0 {
                    worst = worst.max(self.l(j, u));
                }
            }
        }
        worst
    }

    /// Least `w ≥ base` with `w = base + γ(w)`, scanning up to the deadline.
    pub fn w(&self, i: usize, q: usize, on_path: &BTreeMap<usize, u64>) -> Option<u64> {
        let k = self.host(q).unwrap();
        let np = |u: usize| on_path.get(&u).copied().unwrap_or(0);
        let surplus: u64 = self
            .on_processor(k)
            .iter()
            .map(|&u| (self.n(i, u) - np(u)) * self.l(i, u))
            .sum();
        let base = self.l(i, q) + surplus + self.beta(i, q);
        (base..=self.ts.tasks[i].deadline).find(|&w| w == base + self.gamma(i, q, w))
    }

    /// Bound for one path given by its vertices; `None` if it exceeds the
    /// deadline.
    pub fn path_bound(&self, i: usize, vertices: &[usize]) -> Option<u64> {
        let task = &self.ts.tasks[i];
        let m = self.cluster(i).len() as u64;
        let len: u64 = vertices.iter().map(|&v| task.vertices[v].wcet).sum();
        let mut on_path: BTreeMap<usize, u64> = BTreeMap::new();
        for &v in vertices {
            for (&q, &c) in &task.vertices[v].demands {
                *on_path.entry(q).or_insert(0) += u64::from(c);
            }
        }
        let np = |u: usize| on_path.get(&u).copied().unwrap_or(0);
        let surplus = |u: usize| (self.n(i, u) - np(u)) * self.l(i, u);

        // ε per processor
        let mut eps: BTreeMap<usize, u64> = BTreeMap::new();
        for (&q, &c) in &on_path {
            if !self.is_global(q) {
                continue;
            }
            let w = self.w(i, q, &on_path)?;
            *eps.entry(self.host(q).unwrap()).or_insert(0) +=
                c * (self.beta(i, q) + self.gamma(i, q, w));
        }
        let big_b = |r: u64| -> u64 {
            eps.iter()
                .map(|(&k, &e)| {
                    let mut zeta = 0;
                    for j in 0..self.ts.tasks.len() {
                        if j == i {
                            continue;
                        }
                        let per: u64 = self
                            .on_processor(k)
                            .iter()
                            .map(|&u| self.n(j, u) * self.l(j, u))
                            .sum();
                        if per > 0 {
                            zeta += self.eta(j, r) * per;
                        }
                    }
                    e.min(zeta)
                })
                .sum()
        };

        let mut small_b = 0;
        for q in 0..self.ts.resources {
            if self.is_local_to(q, i) && np(q) > 0 {
                small_b += surplus(q);
            }
        }
        for k in 0..self.ts.m {
            let hosted = self.on_processor(k);
            if hosted.iter().any(|&q| np(q) > 0) {
                small_b += hosted.iter().map(|&q| surplus(q)).sum::<u64>();
            }
        }

        let total_cs: u64 = (0..self.ts.resources)
            .map(|q| self.n(i, q) * self.l(i, q))
            .sum();
        let c_prime = task.wcet() - total_cs;
        let path_cs: u64 = on_path.iter().map(|(&q, &c)| c * self.l(i, q)).sum();
        let local_surplus: u64 = (0..self.ts.resources)
            .filter(|&q| self.is_local_to(q, i))
            .map(surplus)
            .sum();
        let intra = c_prime - (len - path_cs) + local_surplus;

        let cluster = self.cluster(i);
        let agent = |r: u64| -> u64 {
            let mut total = 0;
            for k in &cluster {
                for q in self.on_processor(*k) {
                    for j in 0..self.ts.tasks.len() {
                        if j != i && self.n(j, q) > 0 {
                            total += self.eta(j, r) * self.n(j, q) * self.l(j, q);
                        }
                    }
                    total += surplus(q);
                }
            }
            total
        };

        let start = len + small_b;
        (start..=task.deadline)
            .find(|&r| r == len + big_b(r) + small_b + ceil_div(intra + agent(r), m))
    }

    /// Maximum over every complete path.
    pub fn task_bound(&self, i: usize) -> Option<u64> {
        let PathEnumeration::Paths(paths) = self.ts.tasks[i].enumerate_complete_paths(100_000)
        else {
            panic!("oracle needs enumerable paths");
        };
        let mut worst = 0;
        for p in paths {
            worst = worst.max(self.path_bound(i, &p.vertices)?);
        }
        Some(worst)
    }
}
