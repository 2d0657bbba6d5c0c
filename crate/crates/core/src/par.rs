//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and the per-chunk
//! results are returned in chunk order, so floating-point reductions done
//! by the caller are bit-identical whether or not rayon is enabled and
//! regardless of the thread count.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` when the `parallel` feature is compiled in.
    pub fn best() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f` over consecutive chunks of `items` (chunk size `chunk`),
/// returning one result per chunk in order.
pub fn map_chunks<I, T, F>(exec: Execution, items: &[I], chunk: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(chunk).map(f).collect()
        }
        _ => items.chunks(chunk).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_match_across_modes() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let seq = map_chunks(Execution::Sequential, &xs, 64, |c| c.iter().sum::<f64>());
        let par = map_chunks(Execution::Parallel, &xs, 64, |c| c.iter().sum::<f64>());
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 16);
    }

    #[test]
    fn indexed_order_preserved() {
        let v = map_indexed(Execution::best(), 10, |i| i * i);
        assert_eq!(v, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }
}
