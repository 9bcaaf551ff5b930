//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the rayon pool unless the
//! process-wide mode was switched to [`Exec::Sequential`]. Every helper
//! produces results in index order, and reductions are done by the caller in
//! that order, so both modes give bitwise-identical output.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

static EXEC: AtomicU8 = AtomicU8::new(1);

pub fn set_exec(mode: Exec) {
    EXEC.store(matches!(mode, Exec::Parallel) as u8, Ordering::Relaxed);
}

/// Effective mode. Always sequential when built without `parallel`.
pub fn exec() -> Exec {
    if cfg!(feature = "parallel") && EXEC.load(Ordering::Relaxed) == 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Runs `f` under the given mode, restoring the previous mode afterwards.
pub fn with_exec<T>(mode: Exec, f: impl FnOnce() -> T) -> T {
    let prev = EXEC.load(Ordering::Relaxed);
    set_exec(mode);
    let out = f();
    EXEC.store(prev, Ordering::Relaxed);
    out
}

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// Calls `f(chunk_index, chunk)` for consecutive `chunk`-sized pieces.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && data.len() > chunk {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = with_exec(Exec::Sequential, || map_indexed(100, |i| (i as f64).sqrt()));
        let par = with_exec(Exec::Parallel, || map_indexed(100, |i| (i as f64).sqrt()));
        assert_eq!(seq, par);
    }

    #[test]
    fn chunks_visit_everything() {
        let mut v = vec![0.0; 10];
        for_each_chunk_mut(&mut v, 3, |i, c| c.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(v, vec![0., 0., 0., 1., 1., 1., 2., 2., 2., 3.]);
    }
}
