//! Order-preserving evaluation of a per-path kernel over a path ensemble.
//!
//! The kernel receives only the path index and must derive everything else
//! from counter-based generators, so evaluation order cannot change results.
//! [`map_paths`] runs on the rayon pool when the `parallel` feature is on
//! (honouring the `DEFLAB_THREADS` environment variable); [`map_paths_seq`]
//! is always compiled and always sequential, which the benchmark suite uses
//! as the comparison baseline.  Outputs are collected in path-index order
//! and reduced sequentially by callers, so a run's bytes are identical at
//! every thread count.

use crate::error::{Error, Result};

/// Environment variable naming the number of worker threads.
pub const THREADS_ENV: &str = "DEFLAB_THREADS";

fn parse_threads(raw: Option<&str>) -> Result<Option<usize>> {
    match raw {
        None => Ok(None),
        Some(s) => {
            let n: usize = s.trim().parse().map_err(|_| {
                Error::invalid(format!(
                    "{THREADS_ENV} must be a positive integer, got {s:?}"
                ))
            })?;
            if n == 0 {
                return Err(Error::invalid(format!(
                    "{THREADS_ENV} must be a positive integer, got 0"
                )));
            }
            Ok(Some(n))
        }
    }
}

/// Evaluate `kernel` at every path index in `0..paths`, in parallel when
/// built with the `parallel` feature, honouring `DEFLAB_THREADS`.
///
/// The output vector is ordered by path index regardless of thread count,
/// and the first kernel error (by any path) aborts the run.
pub fn map_paths<T, F>(paths: u64, kernel: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let threads = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    map_paths_with_threads(paths, threads, kernel)
}

/// As [`map_paths`] with an explicit thread count (`None` uses the library
/// default pool).  Ignores `DEFLAB_THREADS`.
#[cfg(feature = "parallel")]
pub fn map_paths_with_threads<T, F>(
    paths: u64,
    threads: Option<usize>,
    kernel: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;

    let run = || (0..paths).into_par_iter().map(&kernel).collect();
    match threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run),
    }
}

/// Sequential build: the thread count is accepted for interface parity and
/// ignored.
#[cfg(not(feature = "parallel"))]
pub fn map_paths_with_threads<T, F>(
    paths: u64,
    _threads: Option<usize>,
    kernel: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    map_paths_seq(paths, kernel)
}

/// Always-sequential evaluation in index order; compiled under every
/// feature combination.
pub fn map_paths_seq<T, F>(paths: u64, kernel: F) -> Result<Vec<T>>
where
    F: Fn(u64) -> Result<T>,
{
    (0..paths).map(kernel).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{PathRng, Stream};

    fn kernel(index: u64) -> Result<f64> {
        let rng = PathRng::new(11, index);
        let mut acc = 0.0;
        for draw in 0..50 {
            acc += rng.normal(Stream::Synthetic, draw);
        }
        Ok(acc)
    }

    #[test]
    fn parallel_and_sequential_agree_bit_for_bit() {
        let seq = map_paths_seq(500, kernel).unwrap();
        for threads in [None, Some(1), Some(2), Some(4)] {
            let par = map_paths_with_threads(500, threads, kernel).unwrap();
            assert_eq!(seq, par, "threads = {threads:?}");
        }
    }

    #[test]
    fn outputs_are_in_path_index_order() {
        let out = map_paths_with_threads(64, Some(4), Ok).unwrap();
        assert_eq!(out, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn kernel_errors_abort_the_run() {
        let r = map_paths_with_threads(100, Some(2), |i| {
            if i == 37 {
                Err(Error::invalid("boom"))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
        let r = map_paths_seq(100, |i| {
            if i == 37 {
                Err(Error::invalid("boom"))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn empty_ensemble_is_empty() {
        assert!(map_paths_seq(0, kernel).unwrap().is_empty());
    }

    #[test]
    fn thread_variable_parsing() {
        assert_eq!(parse_threads(None).unwrap(), None);
        assert_eq!(parse_threads(Some("4")).unwrap(), Some(4));
        assert_eq!(parse_threads(Some(" 8 ")).unwrap(), Some(8));
        assert!(parse_threads(Some("0")).is_err());
        assert!(parse_threads(Some("-2")).is_err());
        assert!(parse_threads(Some("many")).is_err());
    }
}
