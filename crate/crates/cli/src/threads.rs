//! Bounded parallelism controlled by the FFPF_THREADS environment
//! variable (default 1, so runs are sequential unless asked otherwise).
//! Work items get deterministic per-index seeds upstream and results are
//! merged by index, so the output is bit-identical at any thread count.

use std::env;

pub fn thread_limit() -> usize {
    env::var("FFPF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Run `f(0..n)` with at most `thread_limit()` workers; results ordered by
/// index. Indices are striped across workers, each collecting locally.
pub fn run_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_limit().min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let f = &f;
            handles.push(scope.spawn(move || {
                let mut local = Vec::new();
                let mut i = w;
                while i < n {
                    local.push((i, f(i)));
                    i += workers;
                }
                local
            }));
        }
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("all indices filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_ordered_by_index() {
        let out = run_indexed(25, |i| i * i);
        assert_eq!(out, (0..25).map(|i| i * i).collect::<Vec<_>>());
    }
}
