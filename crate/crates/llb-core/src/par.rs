//! Data-parallel loop helpers.
//!
//! Every kernel assigns each output element to exactly one task and keeps
//! inner reductions sequential, so results are bitwise identical whether the
//! `parallel` feature is on or off, and independent of the thread count.
//! The runtime switch exists so the bench suite can compare both paths in a
//! single binary.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Runtime switch for the rayon path. A no-op when the `parallel` feature is
/// disabled at compile time.
pub fn set_parallel_enabled(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Work below this many output elements is not worth a fork-join.
#[cfg(feature = "parallel")]
const MIN_PAR_ELEMS: usize = 4096;

/// Fill `out` by disjoint rows of length `row_len`; `f(row_index, row)` writes
/// one row.
pub fn fill_rows(out: &mut [f64], row_len: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    debug_assert_eq!(out.len() % row_len.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if parallel_enabled() && out.len() >= MIN_PAR_ELEMS && row_len > 0 {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    if row_len > 0 {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

const DOT_CHUNK: usize = 8192;

/// Deterministic dot product: fixed-size chunks are reduced independently and
/// the partial sums are combined in chunk order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunk_sum = |(ca, cb): (&[f64], &[f64])| -> f64 {
        ca.iter().zip(cb.iter()).map(|(x, y)| x * y).sum()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if parallel_enabled() && a.len() >= 2 * DOT_CHUNK {
            let partials: Vec<f64> = a
                .par_chunks(DOT_CHUNK)
                .zip(b.par_chunks(DOT_CHUNK))
                .map(chunk_sum)
                .collect();
            return partials.iter().sum();
        }
    }
    a.chunks(DOT_CHUNK)
        .zip(b.chunks(DOT_CHUNK))
        .map(chunk_sum)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_is_identical_on_both_paths() {
        let a: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.11).cos()).collect();
        set_parallel_enabled(true);
        let d1 = dot(&a, &b);
        set_parallel_enabled(false);
        let d2 = dot(&a, &b);
        set_parallel_enabled(true);
        assert_eq!(d1.to_bits(), d2.to_bits());
    }

    #[test]
    fn fill_rows_is_identical_on_both_paths() {
        let rows = 300;
        let cols = 40;
        let gen = |i: usize, row: &mut [f64]| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((i * 31 + j) as f64).sqrt();
            }
        };
        let mut a = vec![0.0; rows * cols];
        let mut b = vec![0.0; rows * cols];
        set_parallel_enabled(true);
        fill_rows(&mut a, cols, gen);
        set_parallel_enabled(false);
        fill_rows(&mut b, cols, gen);
        set_parallel_enabled(true);
        assert_eq!(a, b);
    }
}
