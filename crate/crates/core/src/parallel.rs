//! Data-parallel execution inside primitives.
//!
//! With the `parallel` feature the kernels split work over rayon tasks; the
//! split never changes the per-element reduction order, so results are
//! bit-identical to the sequential path. The mode can be flipped at runtime,
//! which is how the benches compare both paths in one binary.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Rayon,
}

const SEQUENTIAL: u8 = 0;
const RAYON: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { RAYON } else { SEQUENTIAL });

/// Selects the execution mode. Requesting `Rayon` without the `parallel`
/// feature is a no-op and the sequential path stays active.
pub fn set_parallelism(mode: Parallelism) {
    let v = match mode {
        Parallelism::Rayon if cfg!(feature = "parallel") => RAYON,
        _ => SEQUENTIAL,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn parallelism() -> Parallelism {
    match MODE.load(Ordering::Relaxed) {
        RAYON => Parallelism::Rayon,
        _ => Parallelism::Sequential,
    }
}

/// Number of tasks to split `items` independent work items into.
pub(crate) fn task_count(items: usize) -> usize {
    match parallelism() {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => rayon::current_num_threads().min(items).max(1),
        _ => {
            let _ = items;
            1
        }
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len`-sized chunks and
/// returns the results in chunk order.
pub(crate) fn map_chunks_mut<T, R, F>(data: &mut [T], chunk_len: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    match parallelism() {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon if data.len() > chunk_len => data
            .par_chunks_mut(chunk_len)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect(),
        _ => data.chunks_mut(chunk_len).enumerate().map(|(i, c)| f(i, c)).collect(),
    }
}

/// Elementwise threshold below which splitting costs more than it saves.
const ELEMENTWISE_GRAIN: usize = 1 << 14;

/// Applies `f` to consecutive chunks for elementwise kernels; `f` receives the
/// offset of the chunk within `data`.
pub(crate) fn for_each_span_mut<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let tasks = task_count(data.len().div_ceil(ELEMENTWISE_GRAIN));
    let span = data.len().div_ceil(tasks).max(1);
    map_chunks_mut(data, span, |i, c| f(i * span, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_keep_order() {
        let mut v: Vec<u32> = (0..100).collect();
        let sums = map_chunks_mut(&mut v, 30, |i, c| (i, c.iter().sum::<u32>()));
        assert_eq!(sums.len(), 4);
        assert_eq!(sums.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(sums.iter().map(|s| s.1).sum::<u32>(), 4950);
    }

    #[test]
    fn span_offsets_cover_buffer() {
        let mut v = vec![0usize; 40_000];
        for_each_span_mut(&mut v, |off, c| {
            for (i, x) in c.iter_mut().enumerate() {
                *x = off + i;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }
}
