use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Default worker count: the machine's available parallelism.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Maps `f` over `0..n` on up to `jobs` threads; results are in index order
/// regardless of scheduling.
pub fn map<R: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every index mapped")).collect()
}

/// As [`map`] for fallible work; the first error by index wins.
pub fn try_map<R: Send, E: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> Result<R, E> + Sync) -> Result<Vec<R>, E> {
    map(jobs, n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn ordered_for_any_job_count() {
        for jobs in [1, 2, 5] {
            assert_eq!(super::map(jobs, 37, |i| i * i), (0..37).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(super::map(3, 0, |i| i).is_empty());
    }
}
