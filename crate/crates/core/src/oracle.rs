//! Plain Monte-Carlo influence evaluation under independent cascade, used
//! to check seed sets. It draws every edge coin from a ChaCha generator and
//! runs its own BFS; nothing here touches the hash-fused sampling path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{from_fixed, VertexId, WeightedGraph};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("seed count {k} exceeds vertex count {n}")]
    TooManySeeds { k: usize, n: usize },
    #[error("vertex {0} out of range")]
    UnknownVertex(VertexId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub trials: usize,
    pub seed: u64,
    /// Independent repetitions with derived seeds; results are averaged.
    pub runs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { trials: 10_000, seed: 0, runs: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub mean: f64,
    /// Standard error of the mean over all trials of all runs.
    pub stderr: f64,
    pub trials: usize,
}

fn trial_rng(seed: u64, run: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 40) | trial as u64);
    rng
}

/// Reach of `seeds` in one random realization, flipping each edge's coin
/// when its source is first activated.
fn cascade_size(g: &WeightedGraph, probs: &[f64], seeds: &[VertexId], rng: &mut ChaCha8Rng, active: &mut [bool], stack: &mut Vec<VertexId>) -> usize {
    stack.clear();
    for &s in seeds {
        if !active[s as usize] {
            active[s as usize] = true;
            stack.push(s);
        }
    }
    let mut reached = 0;
    let mut touched = Vec::with_capacity(stack.len());
    while let Some(u) = stack.pop() {
        reached += 1;
        touched.push(u);
        for e in g.edge_range(u) {
            let v = g.targets()[e];
            if !active[v as usize] && rng.gen::<f64>() < probs[e] {
                active[v as usize] = true;
                stack.push(v);
            }
        }
    }
    for u in touched {
        active[u as usize] = false;
    }
    reached
}

/// Expected number of vertices activated by `seeds`.
pub fn influence(g: &WeightedGraph, seeds: &[VertexId], cfg: &OracleConfig) -> Result<InfluenceEstimate, OracleError> {
    if cfg.trials == 0 || cfg.runs == 0 {
        return Err(OracleError::NoTrials);
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s as usize >= g.num_vertices()) {
        return Err(OracleError::UnknownVertex(bad));
    }
    let probs: Vec<f64> = g.weights().iter().map(|&w| from_fixed(w)).collect();
    let total = cfg.trials * cfg.runs;
    let sizes: Vec<usize> = (0..total)
        .into_par_iter()
        .map_init(
            || (vec![false; g.num_vertices()], Vec::new()),
            |(active, stack), i| {
                let mut rng = trial_rng(cfg.seed, i / cfg.trials, i % cfg.trials);
                cascade_size(g, &probs, seeds, &mut rng, active, stack)
            },
        )
        .collect();
    Ok(summarize(&sizes))
}

fn summarize(sizes: &[usize]) -> InfluenceEstimate {
    let n = sizes.len() as f64;
    let mean = sizes.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = if sizes.len() > 1 {
        sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    InfluenceEstimate { mean, stderr: (var / n).sqrt(), trials: sizes.len() }
}

/// A fixed set of live-edge realizations ("common random numbers"): each
/// edge is live in realization `t` independently with its probability.
#[derive(Clone, Debug)]
pub struct LiveEdgeSamples {
    words: usize,
    bits: Vec<u64>,
    count: usize,
}

impl LiveEdgeSamples {
    pub fn draw(g: &WeightedGraph, count: usize, seed: u64) -> Self {
        let words = g.num_edges().div_ceil(64).max(1);
        let probs: Vec<f64> = g.weights().iter().map(|&w| from_fixed(w)).collect();
        let bits = (0..count)
            .into_par_iter()
            .flat_map_iter(|t| {
                let mut rng = trial_rng(seed, usize::MAX >> 24, t);
                let mut row = vec![0u64; words];
                for (e, &p) in probs.iter().enumerate() {
                    if rng.gen::<f64>() < p {
                        row[e / 64] |= 1 << (e % 64);
                    }
                }
                row
            })
            .collect();
        Self { words, bits, count }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn is_live(&self, t: usize, e: usize) -> bool {
        self.bits[t * self.words + e / 64] >> (e % 64) & 1 == 1
    }

    /// Marks in `active` everything reachable from `from` in realization
    /// `t`, skipping vertices already marked; returns how many were newly
    /// marked.
    pub fn spread(&self, g: &WeightedGraph, t: usize, from: &[VertexId], active: &mut [bool], stack: &mut Vec<VertexId>) -> usize {
        stack.clear();
        let mut added = 0;
        for &s in from {
            if !active[s as usize] {
                active[s as usize] = true;
                stack.push(s);
                added += 1;
            }
        }
        while let Some(u) = stack.pop() {
            for e in g.edge_range(u) {
                let v = g.targets()[e];
                if !active[v as usize] && self.is_live(t, e) {
                    active[v as usize] = true;
                    stack.push(v);
                    added += 1;
                }
            }
        }
        added
    }

    /// Mean reach of `seeds` over all realizations.
    pub fn influence(&self, g: &WeightedGraph, seeds: &[VertexId]) -> f64 {
        let total: usize = (0..self.count)
            .into_par_iter()
            .map_init(
                || (vec![false; g.num_vertices()], Vec::new()),
                |(active, stack), t| {
                    active.iter_mut().for_each(|a| *a = false);
                    self.spread(g, t, seeds, active, stack)
                },
            )
            .sum();
        total as f64 / self.count as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyConfig {
    /// Realizations per greedy step.
    pub trials: usize,
    pub seed: u64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 0 }
    }
}

/// Greedy seed selection with Monte-Carlo marginal gains. Each step draws
/// fresh realizations shared by all candidates of that step, then adds the
/// candidate with the largest mean marginal reach (smallest id on ties).
/// Also returns the estimated marginal gain of each pick.
pub fn greedy_exact(g: &WeightedGraph, k: usize, cfg: &GreedyConfig) -> Result<(Vec<VertexId>, Vec<f64>), OracleError> {
    let n = g.num_vertices();
    if k > n {
        return Err(OracleError::TooManySeeds { k, n });
    }
    if cfg.trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let mut seeds: Vec<VertexId> = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    for step in 0..k {
        let samples = LiveEdgeSamples::draw(g, cfg.trials, cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let covered: Vec<Vec<bool>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut active = vec![false; n];
                samples.spread(g, t, &seeds, &mut active, &mut Vec::new());
                active
            })
            .collect();
        let marginal: Vec<usize> = (0..n as VertexId)
            .into_par_iter()
            .map_init(
                || (vec![false; n], Vec::new(), Vec::new()),
                |(scratch, stack, touched), v| {
                    if chosen[v as usize] {
                        return 0;
                    }
                    let mut total = 0;
                    for (t, cov) in covered.iter().enumerate() {
                        if cov[v as usize] {
                            continue;
                        }
                        total += reach_outside(g, &samples, t, v, cov, scratch, stack, touched);
                    }
                    total
                },
            )
            .collect();
        let best = (0..n)
            .filter(|&v| !chosen[v])
            .max_by(|&a, &b| marginal[a].cmp(&marginal[b]).then(b.cmp(&a)))
            .expect("k <= n leaves a candidate");
        chosen[best] = true;
        seeds.push(best as VertexId);
        gains.push(marginal[best] as f64 / cfg.trials as f64);
    }
    Ok((seeds, gains))
}

#[allow(clippy::too_many_arguments)]
fn reach_outside(
    g: &WeightedGraph,
    samples: &LiveEdgeSamples,
    t: usize,
    v: VertexId,
    covered: &[bool],
    scratch: &mut [bool],
    stack: &mut Vec<VertexId>,
    touched: &mut Vec<VertexId>,
) -> usize {
    stack.clear();
    touched.clear();
    scratch[v as usize] = true;
    stack.push(v);
    touched.push(v);
    while let Some(u) = stack.pop() {
        for e in g.edge_range(u) {
            let w = g.targets()[e];
            if !scratch[w as usize] && !covered[w as usize] && samples.is_live(t, e) {
                scratch[w as usize] = true;
                stack.push(w);
                touched.push(w);
            }
        }
    }
    for &u in touched.iter() {
        scratch[u as usize] = false;
    }
    touched.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(trials: usize) -> OracleConfig {
        OracleConfig { trials, seed: 5, runs: 1 }
    }

    fn star(n: u32, w: f64) -> WeightedGraph {
        let arcs: Vec<_> = (1..n).map(|v| (0, v, w)).collect();
        WeightedGraph::from_arcs(n as usize, &arcs).unwrap()
    }

    #[test]
    fn empty_seed_set_has_no_influence() {
        let g = star(10, 0.5);
        assert_eq!(influence(&g, &[], &cfg(100)).unwrap().mean, 0.0);
    }

    #[test]
    fn certain_edges_give_exact_reach() {
        let g = WeightedGraph::from_arcs(6, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (4, 5, 1.0)]).unwrap();
        let est = influence(&g, &[1], &cfg(50)).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn path_expectation_matches_closed_form() {
        // 1 + 0.5 + 0.25
        let g = WeightedGraph::from_arcs(3, &[(0, 1, 0.5), (1, 2, 0.5)]).unwrap();
        let est = influence(&g, &[0], &cfg(100_000)).unwrap();
        assert!((est.mean - 1.75).abs() / 1.75 < 0.02, "{est:?}");
        assert!(est.stderr < 0.01);
    }

    #[test]
    fn errors() {
        let g = star(4, 0.5);
        assert_eq!(influence(&g, &[0], &cfg(0)), Err(OracleError::NoTrials));
        assert_eq!(influence(&g, &[9], &cfg(1)), Err(OracleError::UnknownVertex(9)));
        assert_eq!(
            greedy_exact(&g, 5, &GreedyConfig::default()),
            Err(OracleError::TooManySeeds { k: 5, n: 4 })
        );
    }

    #[test]
    fn greedy_picks_star_center() {
        let g = star(30, 0.3);
        let (seeds, _) = greedy_exact(&g, 1, &GreedyConfig { trials: 200, seed: 1 }).unwrap();
        assert_eq!(seeds, vec![0]);
    }

    #[test]
    fn full_seeding_covers_everything() {
        let g = star(12, 0.2);
        let (seeds, _) = greedy_exact(&g, 12, &GreedyConfig { trials: 20, seed: 1 }).unwrap();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..12).collect::<Vec<_>>());
        assert_eq!(influence(&g, &seeds, &cfg(10)).unwrap().mean, 12.0);
    }

    #[test]
    fn monotone_under_common_realizations() {
        let arcs: Vec<_> = (0..40u32).flat_map(|u| [(u, (u * 7 + 3) % 40, 0.3), (u, (u + 1) % 40, 0.2)]).collect();
        let g = WeightedGraph::from_arcs(40, &arcs).unwrap();
        let samples = LiveEdgeSamples::draw(&g, 64, 9);
        let mut set = Vec::new();
        let mut last = 0.0;
        for v in [3u32, 17, 25, 8] {
            set.push(v);
            let now = samples.influence(&g, &set);
            assert!(now >= last);
            last = now;
        }
    }

    #[test]
    fn greedy_gains_are_non_increasing_per_realization_set() {
        // with one shared realization set, greedy marginal gains shrink
        let arcs: Vec<_> = (0..60u32).flat_map(|u| [(u, (u * 13 + 5) % 60, 0.4), (u, (u + 2) % 60, 0.3)]).collect();
        let g = WeightedGraph::from_arcs(60, &arcs).unwrap();
        let samples = LiveEdgeSamples::draw(&g, 50, 4);
        let mut set: Vec<VertexId> = Vec::new();
        let mut gains = Vec::new();
        for _ in 0..6 {
            let base = samples.influence(&g, &set);
            let (best, gain) = (0..60u32)
                .filter(|v| !set.contains(v))
                .map(|v| {
                    let mut s = set.clone();
                    s.push(v);
                    (v, samples.influence(&g, &s) - base)
                })
                .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
            set.push(best);
            gains.push(gain);
        }
        assert!(gains.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{gains:?}");
    }

    #[test]
    fn standard_error_shrinks_with_trials() {
        let arcs: Vec<_> = (0..30u32).flat_map(|u| [(u, (u + 1) % 30, 0.4), (u, (u + 5) % 30, 0.3)]).collect();
        let g = WeightedGraph::from_arcs(30, &arcs).unwrap();
        let small = influence(&g, &[0], &cfg(4_000)).unwrap();
        let large = influence(&g, &[0], &cfg(16_000)).unwrap();
        let ratio = small.stderr / large.stderr;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn deterministic_given_seed() {
        let g = star(20, 0.3);
        let c = OracleConfig { trials: 500, seed: 3, runs: 3 };
        assert_eq!(influence(&g, &[0], &c), influence(&g, &[0], &c));
    }
}
