//! Flajolet–Martin register sketches, one register per simulation.
//!
//! Register `j` of vertex `u` holds the largest count of leading zeros seen
//! among the 64-bit hashes `h_j(x)` of items `x` reachable from `u` in
//! simulation `j`. The value [`VISITED`] marks `(u, j)` as already activated
//! by the committed seed set; such registers are skipped by every update and
//! excluded from estimation.

use std::io::Write;

use rayon::prelude::*;

use crate::sampling::{fmix64, murmur3_x64_128_block};

/// Register value for a `(vertex, simulation)` pair reached by the seed set.
pub const VISITED: i8 = -1;

/// FM correction factor.
pub const PHI: f64 = 0.77351;

/// Rows per work chunk in parallel sketch kernels.
pub const ROW_CHUNK: usize = 256;

const FAMILY_SEED: u32 = 0x9747_b28c;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SketchError {
    #[error("register rows differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Indexed family of 64-bit hash functions `h_j`, keyed by a base key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegisterHashFamily {
    key: u64,
}

impl RegisterHashFamily {
    pub fn new(key: u64) -> Self {
        Self { key: fmix64(key ^ 0x2545_f491_4f6c_dd1d) }
    }

    #[inline]
    pub fn hash(&self, j: u64, item: u64) -> u64 {
        murmur3_x64_128_block(j ^ self.key, item, FAMILY_SEED).0
    }

    /// `clz(h_j(item))`, in `[0, 64]`.
    #[inline]
    pub fn rank(&self, j: u64, item: u64) -> i8 {
        self.hash(j, item).leading_zeros() as i8
    }
}

impl Default for RegisterHashFamily {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Global register index of local register 0 on device `device`.
pub fn device_offset(device: usize, devices: usize, total_registers: usize) -> u64 {
    (device * (total_registers / devices)) as u64
}

/// `n x width` register block, row-major: the registers of one vertex are
/// contiguous in increasing simulation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchMatrix {
    width: usize,
    regs: Vec<i8>,
}

impl SketchMatrix {
    pub fn zeroed(rows: usize, width: usize) -> Self {
        assert!(width > 0, "sketch rows need at least one register");
        Self { width, regs: vec![0; rows * width] }
    }

    pub fn from_rows(width: usize, regs: Vec<i8>) -> Self {
        assert!(width > 0 && regs.len().is_multiple_of(width));
        Self { width, regs }
    }

    pub fn rows(&self) -> usize {
        self.regs.len() / self.width
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, u: usize) -> &[i8] {
        &self.regs[u * self.width..(u + 1) * self.width]
    }

    pub fn row_mut(&mut self, u: usize) -> &mut [i8] {
        &mut self.regs[u * self.width..(u + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.regs
    }

    pub fn as_mut_slice(&mut self) -> &mut [i8] {
        &mut self.regs
    }

    /// Number of registers equal to [`VISITED`].
    pub fn count_visited(&self) -> u64 {
        self.regs
            .par_chunks(ROW_CHUNK * self.width)
            .map(|c| c.iter().filter(|&&r| r == VISITED).count() as u64)
            .sum()
    }

    /// Raw register dump, row-major, one byte per register.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let bytes: Vec<u8> = self.regs.iter().map(|&r| r as u8).collect();
        out.write_all(&bytes)
    }
}

/// Resets every non-visited register to the vertex's own rank:
/// `M_u[j] = clz(h_{offset + j}(u))`. Visited registers are left alone.
pub fn fill_sketches(m: &mut SketchMatrix, family: &RegisterHashFamily, offset: u64) {
    let width = m.width;
    m.regs
        .par_chunks_mut(ROW_CHUNK * width)
        .enumerate()
        .for_each(|(chunk, block)| {
            for (i, row) in block.chunks_exact_mut(width).enumerate() {
                let u = (chunk * ROW_CHUNK + i) as u64;
                for (j, reg) in row.iter_mut().enumerate() {
                    if *reg != VISITED {
                        *reg = family.rank(offset + j as u64, u);
                    }
                }
            }
        });
}

/// Adds `item` to a register row whose register 0 has global index `offset`.
pub fn add_item(row: &mut [i8], family: &RegisterHashFamily, offset: u64, item: u64) {
    for (j, reg) in row.iter_mut().enumerate() {
        if *reg != VISITED {
            *reg = (*reg).max(family.rank(offset + j as u64, item));
        }
    }
}

/// Register-wise maximum of `dst` and `src`, written into `dst`. Visited
/// registers of `dst` stay visited.
pub fn merge_into(dst: &mut [i8], src: &[i8]) -> Result<(), SketchError> {
    if dst.len() != src.len() {
        return Err(SketchError::LengthMismatch(dst.len(), src.len()));
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        if *d != VISITED {
            *d = (*d).max(s);
        }
    }
    Ok(())
}

pub fn merge(a: &[i8], b: &[i8]) -> Result<Vec<i8>, SketchError> {
    let mut out = a.to_vec();
    merge_into(&mut out, b)?;
    Ok(out)
}

/// FM cardinality estimate `2^mean / PHI` over the non-visited registers.
/// A fully visited row estimates 0.
pub fn estimate(row: &[i8]) -> f64 {
    let (sum, live) = row
        .iter()
        .filter(|&&r| r != VISITED)
        .fold((0i64, 0usize), |(s, c), &r| (s + r as i64, c + 1));
    if live == 0 {
        return 0.0;
    }
    (sum as f64 / live as f64).exp2() / PHI
}

fn inverse_powers() -> [f64; 65] {
    let mut t = [0.0; 65];
    for (k, slot) in t.iter_mut().enumerate() {
        *slot = (-(k as f64)).exp2();
    }
    t
}

/// Seed-selection score of one row: the harmonic mean of `2^M[j]` over the
/// non-visited registers, weighted by the fraction of registers that are
/// still non-visited, divided by [`PHI`].
pub fn row_score(row: &[i8], inv: &[f64; 65]) -> f64 {
    let mut mass = 0.0;
    let mut live = 0usize;
    for &r in row {
        if r != VISITED {
            mass += inv[r as usize];
            live += 1;
        }
    }
    if live == 0 {
        return 0.0;
    }
    let harmonic = live as f64 / mass;
    harmonic * (live as f64 / row.len() as f64) / PHI
}

/// Per-vertex scores for a whole matrix.
pub fn sketchwise_score(m: &SketchMatrix) -> Vec<f64> {
    let inv = inverse_powers();
    m.regs.par_chunks(m.width).map(|row| row_score(row, &inv)).collect()
}
