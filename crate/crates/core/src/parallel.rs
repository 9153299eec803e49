use rayon::prelude::*;

/// Maps `f` over `0..n` on at most `workers` threads and returns results in
/// index order. Inside an existing rayon pool the work joins that pool
/// instead of spawning a nested one.
pub fn par_map<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    if rayon::current_thread_index().is_some() {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}), running sequentially");
            (0..n).map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = par_map(1, 50, |i| i * i);
        let b = par_map(4, 50, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(b[7], 49);
    }
}
