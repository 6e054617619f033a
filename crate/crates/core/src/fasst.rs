//! Sample-space tasking: split the simulations among devices, optionally
//! after sorting the random values so each device's simulations flip
//! similar hash bits. Sorting shrinks device-local edge sets and packs the
//! live lanes of an edge into fewer 32-lane batches.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{DeviceGraph, LANE_BATCH};
use crate::graph::WeightedGraph;
use crate::sampling::{is_sampled, RandomVector};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FasstError {
    #[error("{simulations} simulations cannot be split evenly over {devices} devices")]
    Indivisible { simulations: usize, devices: usize },
    #[error("device count must be at least 1")]
    NoDevices,
    #[error("device {device} out of range for {devices} devices")]
    DeviceOutOfRange { device: usize, devices: usize },
    #[error("invalid partition mode `{0}` (expected naive or fasst)")]
    Mode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Contiguous slices of the unsorted vector.
    Naive,
    /// Contiguous slices of the vector sorted ascending.
    Fasst,
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionMode::Naive => "naive",
            PartitionMode::Fasst => "fasst",
        })
    }
}

impl FromStr for PartitionMode {
    type Err = FasstError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(PartitionMode::Naive),
            "fasst" => Ok(PartitionMode::Fasst),
            _ => Err(FasstError::Mode(s.to_string())),
        }
    }
}

/// Assignment of simulations to devices. Position `p` of the arranged
/// vector is global register `p`; device `k` owns positions
/// `[k * R / devices, (k + 1) * R / devices)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    mode: PartitionMode,
    devices: usize,
    values: Vec<u32>,
    origins: Vec<u32>,
    degraded: bool,
}

/// Minimum simulations per device for full lane batches.
pub const MIN_LANES_PER_DEVICE: usize = LANE_BATCH;

pub fn make_plan(
    x: &RandomVector,
    devices: usize,
    mode: PartitionMode,
) -> Result<PartitionPlan, FasstError> {
    if devices == 0 {
        return Err(FasstError::NoDevices);
    }
    let r = x.len();
    if !r.is_multiple_of(devices) {
        return Err(FasstError::Indivisible { simulations: r, devices });
    }
    let origins: Vec<u32> = match mode {
        PartitionMode::Naive => (0..r as u32).collect(),
        PartitionMode::Fasst => x.sorted_order(),
    };
    let values = origins.iter().map(|&i| x.values()[i as usize]).collect();
    let degraded = mode == PartitionMode::Fasst && r / devices < MIN_LANES_PER_DEVICE;
    if degraded {
        log::warn!(
            "{} simulations per device is below {MIN_LANES_PER_DEVICE}; lane batches will be partial",
            r / devices
        );
    }
    Ok(PartitionPlan { mode, devices, values, origins, degraded })
}

impl PartitionPlan {
    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn simulations(&self) -> usize {
        self.values.len()
    }

    pub fn lanes_per_device(&self) -> usize {
        self.values.len() / self.devices
    }

    /// Set when FASST runs with fewer than 32 simulations per device.
    pub fn is_degraded(&self) -> bool {
        self.degraded
    }

    /// Random values in global register order.
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn chunk_range(&self, device: usize) -> std::ops::Range<usize> {
        let j = self.lanes_per_device();
        device * j..(device + 1) * j
    }

    pub fn chunk(&self, device: usize) -> &[u32] {
        &self.values[self.chunk_range(device)]
    }

    /// Original simulation indices of a device's lanes.
    pub fn chunk_origins(&self, device: usize) -> &[u32] {
        &self.origins[self.chunk_range(device)]
    }
}

/// Device-local graph: the edges sampled by at least one simulation of
/// `device`, renumbered compactly over the full vertex set.
pub fn build_device_graph(
    g: &WeightedGraph,
    plan: &PartitionPlan,
    device: usize,
) -> Result<DeviceGraph, FasstError> {
    if device >= plan.devices {
        return Err(FasstError::DeviceOutOfRange { device, devices: plan.devices });
    }
    Ok(DeviceGraph::from_lanes(
        g,
        device,
        plan.chunk(device).to_vec(),
        plan.chunk_origins(device).to_vec(),
        plan.chunk_range(device).start as u64,
    ))
}

/// Per-edge number of device-local graphs that contain the edge.
pub fn edge_appearances(g: &WeightedGraph, plan: &PartitionPlan) -> Vec<u8> {
    let (w, h) = (g.weights(), g.hashes());
    (0..g.num_edges())
        .into_par_iter()
        .map(|e| {
            (0..plan.devices)
                .filter(|&d| plan.chunk(d).iter().any(|&x| is_sampled(x, h[e], w[e])))
                .count() as u8
        })
        .collect()
}

/// Fractions of edges appearing in exactly `k` device-local graphs,
/// `k = 0..=devices`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DuplicationHistogram {
    pub devices: usize,
    pub counts: Vec<u64>,
}

impl DuplicationHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Fraction of edges in at most `k` device graphs.
    pub fn fraction_at_most(&self, k: usize) -> f64 {
        self.fractions().iter().take(k + 1).sum()
    }

    /// Fraction of edges in at least `k` device graphs.
    pub fn fraction_at_least(&self, k: usize) -> f64 {
        self.fractions().iter().skip(k).sum()
    }

    /// Mean appearances per edge.
    pub fn mean(&self) -> f64 {
        let total = self.total().max(1) as f64;
        self.counts.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / total
    }
}

pub fn duplication_stats(g: &WeightedGraph, plan: &PartitionPlan) -> DuplicationHistogram {
    let mut counts = vec![0u64; plan.devices + 1];
    for k in edge_appearances(g, plan) {
        counts[k as usize] += 1;
    }
    DuplicationHistogram { devices: plan.devices, counts }
}

/// Largest device-local edge count as a fraction of `|E|`.
pub fn max_device_edge_fraction(g: &WeightedGraph, plan: &PartitionPlan) -> f64 {
    let (w, h) = (g.weights(), g.hashes());
    let largest = (0..plan.devices)
        .into_par_iter()
        .map(|d| {
            let chunk = plan.chunk(d);
            (0..g.num_edges())
                .filter(|&e| chunk.iter().any(|&x| is_sampled(x, h[e], w[e])))
                .count()
        })
        .max()
        .unwrap_or(0);
    largest as f64 / g.num_edges().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FillRateReport {
    /// Live lanes over lanes of batches with at least one live lane.
    pub fill_rate: f64,
    pub live_lanes: u64,
    pub active_batches: u64,
    pub batch_width: usize,
}

/// Lane utilization of 32-wide batches over consecutive simulations, in the
/// order given by `values`.
pub fn fill_rate_of(g: &WeightedGraph, values: &[u32]) -> FillRateReport {
    let (w, h) = (g.weights(), g.hashes());
    let (live, active) = (0..g.num_edges())
        .into_par_iter()
        .map(|e| {
            let mut live = 0u64;
            let mut active = 0u64;
            for batch in values.chunks(LANE_BATCH) {
                let k = batch.iter().filter(|&&x| is_sampled(x, h[e], w[e])).count() as u64;
                if k > 0 {
                    live += k;
                    active += 1;
                }
            }
            (live, active)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let lanes = active * LANE_BATCH as u64;
    FillRateReport {
        fill_rate: if lanes == 0 { 0.0 } else { live as f64 / lanes as f64 },
        live_lanes: live,
        active_batches: active,
        batch_width: LANE_BATCH,
    }
}

/// Fill rate of the whole random vector arranged per `mode`.
pub fn fill_rate(g: &WeightedGraph, x: &RandomVector, mode: PartitionMode) -> FillRateReport {
    match mode {
        PartitionMode::Naive => fill_rate_of(g, x.values()),
        PartitionMode::Fasst => {
            let mut sorted = x.values().to_vec();
            sorted.sort_unstable();
            fill_rate_of(g, &sorted)
        }
    }
}

/// Writes `setting,mode,devices,k,fraction` rows.
pub fn write_duplication_csv<W: Write>(
    mut out: W,
    setting: &str,
    mode: PartitionMode,
    hist: &DuplicationHistogram,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "setting,mode,devices,k,fraction")?;
    }
    for (k, f) in hist.fractions().iter().enumerate() {
        writeln!(out, "{setting},{mode},{},{k},{f:.6}", hist.devices)?;
    }
    Ok(())
}

/// Writes a `setting,mode,fill_rate` row.
pub fn write_fill_rate_csv<W: Write>(
    mut out: W,
    setting: &str,
    mode: PartitionMode,
    report: &FillRateReport,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "setting,mode,fill_rate")?;
    }
    writeln!(out, "{setting},{mode},{:.6}", report.fill_rate)
}
