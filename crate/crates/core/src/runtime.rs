//! Multi-device greedy seed selection over in-process collectives.
//!
//! Each simulated device is a long-lived worker thread owning its
//! device-local graph and sketch matrix. Workers only interact through a
//! [`CollectiveGroup`]: a binary-tree reduce to rank 0, a broadcast from
//! rank 0, an allreduce and barriers. Every collective is a rendezvous and
//! combines values in a fixed order, so runs are bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{
    cascade, count_visited, simulate_to_convergence, EngineError, FrontierQueue,
    DEFAULT_MAX_ITERATIONS,
};
use crate::fasst::{build_device_graph, make_plan, FasstError, PartitionMode};
use crate::graph::{VertexId, WeightedGraph};
use crate::sampling::{RandomVector, SamplingError};
use crate::sketch::{fill_sketches, sketchwise_score, RegisterHashFamily, SketchMatrix};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("collective payloads differ in length")]
    LengthMismatch,
    #[error("worker {0} panicked")]
    WorkerPanic(usize),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Fasst(#[from] FasstError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Elements moved by each kind of collective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCounters {
    pub reduce_calls: u64,
    pub reduce_elements: u64,
    pub broadcast_calls: u64,
    pub broadcast_elements: u64,
    pub allreduce_calls: u64,
    pub allreduce_elements: u64,
    pub barriers: u64,
}

#[derive(Default)]
struct AtomicCounters {
    reduce_calls: AtomicU64,
    reduce_elements: AtomicU64,
    broadcast_calls: AtomicU64,
    broadcast_elements: AtomicU64,
    allreduce_calls: AtomicU64,
    allreduce_elements: AtomicU64,
    barriers: AtomicU64,
}

/// Rendezvous collectives among a fixed set of `size` workers.
///
/// All members must call the same collectives in the same order.
pub struct CollectiveGroup {
    size: usize,
    barrier: Barrier,
    slots: Mutex<Vec<Vec<f64>>>,
    word: Mutex<u64>,
    counters: AtomicCounters,
}

impl CollectiveGroup {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "a group needs at least one member");
        Self {
            size,
            barrier: Barrier::new(size),
            slots: Mutex::new(vec![Vec::new(); size]),
            word: Mutex::new(0),
            counters: AtomicCounters::default(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn barrier(&self, rank: usize) {
        if rank == 0 {
            self.counters.barriers.fetch_add(1, Ordering::Relaxed);
        }
        self.barrier.wait();
    }

    fn wait(&self) {
        self.barrier.wait();
    }

    /// Elementwise sum delivered to rank 0 over a binary tree with
    /// `ceil(log2(size))` levels. At level `l`, rank `r` with
    /// `r % 2^(l+1) == 0` adds the partial sum of rank `r + 2^l`.
    pub fn reduce_to_root(&self, rank: usize, data: Vec<f64>) -> Result<Option<Vec<f64>>, RuntimeError> {
        let len = data.len();
        self.slots.lock().unwrap()[rank] = data;
        self.wait();
        let consistent = self.slots.lock().unwrap().iter().all(|s| s.len() == len);
        if !consistent {
            self.wait();
            return Err(RuntimeError::LengthMismatch);
        }
        // everyone must finish the length check before slots are consumed
        self.wait();
        if rank == 0 {
            self.counters.reduce_calls.fetch_add(1, Ordering::Relaxed);
            self.counters
                .reduce_elements
                .fetch_add(((self.size - 1) * len) as u64, Ordering::Relaxed);
        }
        let mut step = 1;
        while step < self.size {
            if rank.is_multiple_of(2 * step) && rank + step < self.size {
                let mut slots = self.slots.lock().unwrap();
                let incoming = std::mem::take(&mut slots[rank + step]);
                for (acc, x) in slots[rank].iter_mut().zip(incoming) {
                    *acc += x;
                }
            }
            self.wait();
            step *= 2;
        }
        let out = if rank == 0 {
            Some(std::mem::take(&mut self.slots.lock().unwrap()[0]))
        } else {
            None
        };
        self.wait();
        Ok(out)
    }

    /// Every rank receives rank 0's `value`; other ranks' arguments are
    /// ignored.
    pub fn broadcast(&self, rank: usize, value: u64) -> u64 {
        if rank == 0 {
            *self.word.lock().unwrap() = value;
            self.counters.broadcast_calls.fetch_add(1, Ordering::Relaxed);
            self.counters
                .broadcast_elements
                .fetch_add((self.size - 1) as u64, Ordering::Relaxed);
        }
        self.wait();
        let out = *self.word.lock().unwrap();
        self.wait();
        out
    }

    /// Sum of every rank's `value`, delivered to all ranks. Equivalent to a
    /// reduce to rank 0 followed by a broadcast.
    pub fn allreduce_sum(&self, rank: usize, value: f64) -> f64 {
        let reduced = self
            .reduce_to_root(rank, vec![value])
            .expect("scalar payloads have equal length");
        let bits = reduced.map(|v| v[0].to_bits()).unwrap_or(0);
        let out = f64::from_bits(self.broadcast(rank, bits));
        if rank == 0 {
            // account the allreduce as its own collective, not its parts
            let c = &self.counters;
            c.reduce_calls.fetch_sub(1, Ordering::Relaxed);
            c.reduce_elements.fetch_sub((self.size - 1) as u64, Ordering::Relaxed);
            c.broadcast_calls.fetch_sub(1, Ordering::Relaxed);
            c.broadcast_elements.fetch_sub((self.size - 1) as u64, Ordering::Relaxed);
            c.allreduce_calls.fetch_add(1, Ordering::Relaxed);
            c.allreduce_elements.fetch_add(2 * (self.size - 1) as u64, Ordering::Relaxed);
        }
        out
    }

    pub fn counters(&self) -> CommCounters {
        let c = &self.counters;
        CommCounters {
            reduce_calls: c.reduce_calls.load(Ordering::Relaxed),
            reduce_elements: c.reduce_elements.load(Ordering::Relaxed),
            broadcast_calls: c.broadcast_calls.load(Ordering::Relaxed),
            broadcast_elements: c.broadcast_elements.load(Ordering::Relaxed),
            allreduce_calls: c.allreduce_calls.load(Ordering::Relaxed),
            allreduce_elements: c.allreduce_elements.load(Ordering::Relaxed),
            barriers: c.barriers.load(Ordering::Relaxed),
        }
    }
}

/// Parameters of one seed-selection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Seeds to select.
    pub k: usize,
    /// Total simulations `R` across devices.
    pub simulations: usize,
    pub devices: usize,
    pub mode: PartitionMode,
    /// Relative score gain above which sketches are rebuilt.
    pub rebuild_eps: f64,
    /// Master seed for the random vector and the register hash family.
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 50,
            simulations: 1024,
            devices: 1,
            mode: PartitionMode::Fasst,
            rebuild_eps: 0.01,
            seed: 0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n: usize) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.k > n {
            return bad(format!("k = {} exceeds vertex count {n}", self.k));
        }
        if self.devices == 0 {
            return bad("devices must be at least 1".into());
        }
        if self.simulations == 0 || !self.simulations.is_multiple_of(self.devices) {
            return bad(format!(
                "simulations ({}) must be a positive multiple of devices ({})",
                self.simulations, self.devices
            ));
        }
        if !(0.0..=1.0).contains(&self.rebuild_eps) {
            return bad(format!("rebuild_eps {} outside [0, 1]", self.rebuild_eps));
        }
        Ok(())
    }
}

/// Outcome of a run. Contains no wall-clock data, so identical configs
/// serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    /// Selected seeds (dense vertex ids), in commit order.
    pub seeds: Vec<VertexId>,
    /// Estimated influence after each commit: visited registers over `R`.
    pub scores: Vec<f64>,
    pub rebuilds: usize,
    /// Simulate iterations summed over the initial build and every rebuild
    /// (device 0).
    pub simulate_iterations: usize,
    /// Set if some seed had to be picked with every candidate score at 0.
    pub saturated: bool,
    /// Edges per device-local graph.
    pub device_edges: Vec<usize>,
    pub comms: CommCounters,
}

/// Wall-clock seconds per phase, measured on device 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub build: f64,
    pub initial_simulate: f64,
    pub selection: f64,
    pub cascade: f64,
    pub rebuild: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub report: SeedReport,
    pub timings: PhaseTimings,
}

struct WorkerResult {
    seeds: Vec<VertexId>,
    scores: Vec<f64>,
    rebuilds: usize,
    iterations: usize,
    saturated: bool,
    edges: usize,
    timings: PhaseTimings,
    error: Option<RuntimeError>,
}

/// Index of the largest score among unmasked vertices, smallest id on ties.
/// Returns `(id, saturated)`; when every candidate scores 0 the smallest
/// unmasked id is chosen and `saturated` is set.
pub fn select_seed(scores: &[f64], masked: &[bool]) -> Option<(VertexId, bool)> {
    let mut best: Option<(usize, f64)> = None;
    for (v, (&s, &m)) in scores.iter().zip(masked).enumerate() {
        if m {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((v, s)),
        }
    }
    best.map(|(v, s)| (v as VertexId, s <= 0.0))
}

/// Greedy seed selection across `cfg.devices` simulated devices.
pub fn run(g: &WeightedGraph, cfg: &RunConfig) -> Result<RunOutcome, RuntimeError> {
    let started = Instant::now();
    cfg.validate(g.num_vertices())?;
    let x = RandomVector::generate(cfg.simulations, cfg.seed)?;
    let plan = make_plan(&x, cfg.devices, cfg.mode)?;
    let family = RegisterHashFamily::new(cfg.seed);
    let group = CollectiveGroup::new(cfg.devices);

    let results: Vec<Result<WorkerResult, RuntimeError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.devices)
            .map(|rank| {
                let (plan, group, family) = (&plan, &group, &family);
                scope.spawn(move || worker(g, cfg, plan, family, group, rank))
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, h)| h.join().unwrap_or(Err(RuntimeError::WorkerPanic(rank))))
            .collect()
    });

    let mut device_edges = Vec::with_capacity(cfg.devices);
    let mut lead = None;
    for (rank, res) in results.into_iter().enumerate() {
        let mut res = res?;
        if let Some(err) = res.error.take() {
            return Err(err);
        }
        device_edges.push(res.edges);
        if rank == 0 {
            lead = Some(res);
        }
    }
    let lead = lead.expect("at least one device");
    let mut timings = lead.timings;
    timings.total = started.elapsed().as_secs_f64();
    Ok(RunOutcome {
        report: SeedReport {
            seeds: lead.seeds,
            scores: lead.scores,
            rebuilds: lead.rebuilds,
            simulate_iterations: lead.iterations,
            saturated: lead.saturated,
            device_edges,
            comms: group.counters(),
        },
        timings,
    })
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// One device. Errors from local kernels are recorded and the worker keeps
/// taking part in collectives so that no peer blocks forever.
fn worker(
    g: &WeightedGraph,
    cfg: &RunConfig,
    plan: &crate::fasst::PartitionPlan,
    family: &RegisterHashFamily,
    group: &CollectiveGroup,
    rank: usize,
) -> Result<WorkerResult, RuntimeError> {
    let mut timings = PhaseTimings::default();
    let mut error: Option<RuntimeError> = None;
    let mut note = |e: EngineError| {
        if error.is_none() {
            error = Some(e.into());
        }
    };

    let t = Instant::now();
    let dg = build_device_graph(g, plan, rank)?;
    timings.build = secs(t.elapsed());

    let n = g.num_vertices();
    let lanes = dg.num_lanes();
    let offset = dg.register_offset();
    let mut m = SketchMatrix::zeroed(n, lanes);
    let t = Instant::now();
    fill_sketches(&mut m, family, offset);
    let mut iterations = simulate_to_convergence(&dg, &mut m, cfg.max_iterations).unwrap_or_else(|e| {
        note(e);
        cfg.max_iterations
    });
    timings.initial_simulate = secs(t.elapsed());

    let mut queue = FrontierQueue::new(n);
    let mut next = FrontierQueue::new(n);
    let mut committed = vec![false; n];
    let mut seeds = Vec::with_capacity(cfg.k);
    let mut scores = Vec::with_capacity(cfg.k);
    let mut saturated = false;
    let mut rebuilds = 0;
    let mut old_score = 0.0;
    let total_registers = (cfg.devices * lanes) as f64;

    while seeds.len() < cfg.k {
        let t = Instant::now();
        group.barrier(rank);
        let local = sketchwise_score(&m);
        let reduced = group.reduce_to_root(rank, local)?;
        let choice = match reduced {
            Some(sums) => {
                let (s, sat) = select_seed(&sums, &committed).expect("k <= n leaves a candidate");
                saturated |= sat;
                s as u64
            }
            None => 0,
        };
        let s = group.broadcast(rank, choice) as VertexId;
        committed[s as usize] = true;
        seeds.push(s);
        timings.selection += secs(t.elapsed());

        let t = Instant::now();
        if let Err(e) = cascade(&dg, &mut m, s, &mut queue, &mut next) {
            note(e);
        }
        let local_score = count_visited(&m) as f64;
        let score = group.allreduce_sum(rank, local_score) / total_registers;
        scores.push(score);
        timings.cascade += secs(t.elapsed());

        // every worker sees the same score, so all take the same branch
        if seeds.len() < cfg.k && score > 0.0 && (score - old_score) / score > cfg.rebuild_eps {
            let t = Instant::now();
            fill_sketches(&mut m, family, offset);
            iterations += simulate_to_convergence(&dg, &mut m, cfg.max_iterations).unwrap_or_else(|e| {
                note(e);
                cfg.max_iterations
            });
            rebuilds += 1;
            old_score = score;
            timings.rebuild += secs(t.elapsed());
        }
    }

    Ok(WorkerResult {
        seeds,
        scores,
        rebuilds,
        iterations,
        saturated,
        edges: dg.num_edges(),
        timings,
        error,
    })
}
