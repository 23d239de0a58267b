//! Exact top-l scan.
//!
//! Rows are prefiltered against a bfloat16 copy of the matrix, which halves
//! the memory traffic of the full pass. The distance between the prefilter
//! score and the true dot product is bounded analytically (rounding of the
//! copy plus `f32` accumulation), and every row that could still belong to
//! the top l under that bound is rescored with the canonical `f64` dot
//! product. The result is identical to a full `f64` scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::vector::dot_slices;

const LANES: usize = 16;
const BLOCK_ROWS: usize = 8192;

/// Unit roundoff of `f32`.
const F32_EPS: f64 = 5.960_464_477_539_063e-8;

/// Round-to-nearest-even `f32 → bf16`. Inputs are finite.
#[inline]
pub(crate) fn to_bf16(x: f32) -> u16 {
    let b = x.to_bits();
    ((b + 0x7FFF + ((b >> 16) & 1)) >> 16) as u16
}

#[inline(always)]
fn from_bf16(b: u16) -> f32 {
    f32::from_bits((b as u32) << 16)
}

/// bfloat16 copy of a row-major matrix plus the largest row-wise rounding
/// error `max ‖x − x̂‖`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Sketch {
    bits: Vec<u16>,
    residual: f64,
}

impl Sketch {
    pub(crate) fn build(data: &[f32], dim: usize) -> Self {
        let bits: Vec<u16> = data.par_iter().map(|&x| to_bf16(x)).collect();
        let residual = if dim == 0 {
            0.0
        } else {
            data.par_chunks(dim)
                .zip(bits.par_chunks(dim))
                .map(|(row, approx)| {
                    row.iter()
                        .zip(approx)
                        .map(|(&x, &b)| {
                            let e = x as f64 - from_bf16(b) as f64;
                            e * e
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .reduce(|| 0.0, f64::max)
        };
        Self { bits, residual }
    }
}

#[inline(always)]
fn dot_bf16(a: &[u16], b: &[f32]) -> f32 {
    let mut acc = [0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let mut tail = 0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += from_bf16(*x) * *y;
    }
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += from_bf16(x[i]) * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Upper bound on `|dot_bf16(x̂, q) − x·q|` for rows of `dim` elements with
/// `‖x‖ ≤ max_row_norm` and `‖x − x̂‖ ≤ residual`.
pub(crate) fn prefilter_error_bound(dim: usize, query_norm: f64, max_row_norm: f64, residual: f64) -> f64 {
    // Longest rounding path of one product: its own rounding, the lane
    // accumulation, the sequential lane sum and the final tail add.
    let k = (dim.div_ceil(LANES) + LANES + 2) as f64;
    let gamma = k * F32_EPS / (1.0 - k * F32_EPS);
    let accumulation = gamma * query_norm * (max_row_norm + residual);
    let copy = query_norm * residual;
    // The canonical f64 dot product is itself off by far less than this.
    (accumulation + copy) * (1.0 + 1e-6) + 1e-12 * query_norm * max_row_norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    score: f32,
    row: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so BinaryHeap acts as a min-heap on score.
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score)
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the l best `f32` scores seen and every row that may still belong to
/// the exact top l.
struct Collector {
    l: usize,
    slack: f32,
    best: BinaryHeap<Entry>,
    candidates: Vec<Entry>,
}

impl Collector {
    fn new(l: usize, slack: f32) -> Self {
        Self { l, slack, best: BinaryHeap::with_capacity(l + 1), candidates: Vec::new() }
    }

    fn threshold(&self) -> f32 {
        if self.best.len() < self.l {
            f32::NEG_INFINITY
        } else {
            self.best.peek().map_or(f32::NEG_INFINITY, |e| e.score)
        }
    }

    #[inline]
    fn offer(&mut self, score: f32, row: u32) {
        let t = self.threshold();
        if score < t - self.slack {
            return;
        }
        let e = Entry { score, row };
        self.candidates.push(e);
        if self.best.len() < self.l {
            self.best.push(e);
        } else if score > t {
            self.best.pop();
            self.best.push(e);
        }
        if self.candidates.len() > 8 * self.l + 1024 {
            self.prune();
        }
    }

    fn prune(&mut self) {
        let cut = self.threshold() - self.slack;
        self.candidates.retain(|e| e.score >= cut);
    }

    fn merge(mut self, other: Collector) -> Collector {
        self.candidates.extend(other.candidates);
        for e in other.best {
            if self.best.len() < self.l {
                self.best.push(e);
            } else if e.score > self.threshold() {
                self.best.pop();
                self.best.push(e);
            }
        }
        self.prune();
        self
    }
}

macro_rules! scan_block_impl {
    ($name:ident $(, $feat:literal)?) => {
        $(#[target_feature(enable = $feat)])?
        unsafe fn $name<F: Fn(usize) -> bool>(
            block: &[u16],
            dim: usize,
            first_row: usize,
            query: &[f32],
            allowed: &F,
            out: &mut Collector,
        ) {
            for (i, row) in block.chunks_exact(dim).enumerate() {
                let r = first_row + i;
                if !allowed(r) {
                    continue;
                }
                out.offer(dot_bf16(row, query), r as u32);
            }
        }
    };
}

scan_block_impl!(scan_block_generic);
#[cfg(target_arch = "x86_64")]
scan_block_impl!(scan_block_avx2, "avx2");
#[cfg(target_arch = "x86_64")]
scan_block_impl!(scan_block_avx512, "avx512f");

fn scan_block<F: Fn(usize) -> bool>(
    block: &[u16],
    dim: usize,
    first_row: usize,
    query: &[f32],
    allowed: &F,
    out: &mut Collector,
) {
    // SAFETY: each variant is only called when the CPU supports its features.
    #[cfg(target_arch = "x86_64")]
    unsafe {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return scan_block_avx512(block, dim, first_row, query, allowed, out);
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            return scan_block_avx2(block, dim, first_row, query, allowed, out);
        }
    }
    unsafe { scan_block_generic(block, dim, first_row, query, allowed, out) }
}

/// Rows of the exact top `l` by `f64` dot product with `query`, as
/// `(row, score)` sorted by descending score then ascending `tie_key(row)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn exact_top_l(
    data: &[f32],
    sketch: &Sketch,
    dim: usize,
    query: &[f32],
    l: usize,
    max_row_norm: f64,
    allowed: impl Fn(usize) -> bool + Sync,
    tie_key: impl Fn(usize) -> u64,
) -> Vec<(usize, f64)> {
    if l == 0 || dim == 0 || data.is_empty() {
        return Vec::new();
    }
    debug_assert_eq!(sketch.bits.len(), data.len());
    let qnorm = dot_slices(query, query).sqrt();
    let bound = prefilter_error_bound(dim, qnorm, max_row_norm, sketch.residual);
    // Comparisons happen in f32, so widen by a rounding of the largest
    // possible score as well.
    let slack = 2.0 * bound + 4.0 * F32_EPS * qnorm * (max_row_norm + sketch.residual);
    let slack = (slack as f32).max(f32::MIN_POSITIVE) * (1.0 + 1e-6);

    let collector = sketch
        .bits
        .par_chunks(BLOCK_ROWS * dim)
        .enumerate()
        .map(|(b, block)| {
            let mut c = Collector::new(l, slack);
            scan_block(block, dim, b * BLOCK_ROWS, query, &allowed, &mut c);
            c
        })
        .reduce(|| Collector::new(l, slack), Collector::merge);

    let cut = collector.threshold() - slack;
    let mut rescored: Vec<(usize, f64)> = collector
        .candidates
        .iter()
        .filter(|e| e.score >= cut)
        .map(|e| {
            let r = e.row as usize;
            (r, dot_slices(&data[r * dim..(r + 1) * dim], query))
        })
        .collect();
    rescored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| tie_key(a.0).cmp(&tie_key(b.0))));
    rescored.truncate(l);
    rescored
}
