use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fbid_core::training::Parallel;

/// Scoped worker threads pulling job indices from a shared counter. Results
/// come back in index order, so reductions stay deterministic.
#[derive(Debug, Clone, Copy)]
pub struct Threads(pub usize);

impl Threads {
    /// `0` means one worker per available core.
    pub fn new(n: usize) -> Threads {
        if n == 0 {
            Threads(std::thread::available_parallelism().map_or(1, |n| n.get()))
        } else {
            Threads(n)
        }
    }
}

impl Parallel for Threads {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, jobs: usize, f: F) -> Vec<T> {
        let workers = self.0.min(jobs);
        if workers <= 1 {
            return (0..jobs).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<T>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let r = f(i);
                    *slots[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("result slot").expect("job ran")).collect()
    }
}
