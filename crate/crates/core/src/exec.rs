//! Execution policy for the data-parallel kernels.
//!
//! Every hot loop in the crate (pooling rows, per-token similarity, attention
//! query rows, oracle instances) goes through [`map_indexed`]. With the
//! `parallel` feature it fans out over rayon; without it, or when the caller
//! asks for [`Execution::Sequential`], it runs on the calling thread. Results
//! are always collected in index order, so both paths are bit-identical.

/// How a kernel should schedule its independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(i)` for `i in 0..len` and collects in index order.
pub fn map_indexed<R, F>(exec: Execution, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec == Execution::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Fills `out` in chunks of `chunk` elements, calling `f(chunk_index, slice)`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec == Execution::Parallel {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = exec;
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_policies_agree() {
        let seq = map_indexed(Execution::Sequential, 1000, |i| (i as f64).sqrt());
        let par = map_indexed(Execution::Parallel, 1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
    }

    #[test]
    fn chunked_fill_covers_everything() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let mut buf = vec![0usize; 103];
            for_each_chunk_mut(exec, &mut buf, 10, |ci, c| {
                for (j, v) in c.iter_mut().enumerate() {
                    *v = ci * 10 + j;
                }
            });
            assert!(buf.iter().enumerate().all(|(i, &v)| i == v));
        }
    }
}
