//! Order-preserving parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool of
//! `jobs` threads; without it, or with `jobs <= 1`, items run in order on the
//! calling thread. Results always come back in input order, so reductions
//! over them are identical in both modes.

/// How to execute data-parallel work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Parallel over this many worker threads (0 = rayon default).
    Parallel(usize),
}

impl Exec {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel(jobs)
        }
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::Parallel(0)
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Exec::Sequential => items.iter().map(f).collect(),
        Exec::Parallel(jobs) => par_map(jobs, items, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if jobs == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(_jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x * x + 1;
        let a = map(Exec::Sequential, &items, f);
        let b = map(Exec::Parallel(0), &items, f);
        let c = map(Exec::Parallel(3), &items, f);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a[10], 101);
    }
}
