//! Process-wide rayon pool. `MOBIDIARY_THREADS` caps the worker count;
//! unset or invalid values fall back to rayon's default (one per core).

use std::sync::OnceLock;

pub fn thread_cap() -> Option<usize> {
    std::env::var("MOBIDIARY_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// The shared pool. Built once; the env var is read at first use.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap() {
            b = b.num_threads(n);
        }
        b.build().expect("rayon pool construction cannot fail with these settings")
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn pool_is_reusable() {
        let p = super::pool();
        let sum: i64 = p.install(|| {
            use rayon::prelude::*;
            (0..1000i64).into_par_iter().sum()
        });
        assert_eq!(sum, 499_500);
        assert!(std::ptr::eq(p, super::pool()));
    }
}
