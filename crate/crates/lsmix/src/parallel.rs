//! Bounded-concurrency map over a slice using scoped threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Apply `f` to every item with at most `max_in_flight` invocations running
/// concurrently, returning outputs in input order. The closure receives the
/// item's index and a reference to the item. Panics in workers propagate.
pub(crate) fn parallel_map<T, U, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<U>>> = (0..items.len()).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn preserves_input_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = parallel_map(&items, 8, |i, x| (i as u64) * 1000 + x * 2);
        let expected: Vec<u64> = (0..100).map(|i| i * 1000 + i * 2).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn handles_empty_and_single() {
        let empty: Vec<u32> = vec![];
        assert!(parallel_map(&empty, 4, |_, x| *x).is_empty());
        assert_eq!(parallel_map(&[7u32], 4, |_, x| x + 1), vec![8]);
    }

    #[test]
    fn concurrency_never_exceeds_the_cap() {
        let in_flight = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<u32> = (0..64).collect();
        parallel_map(&items, 3, |_, _| {
            let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            in_flight.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert!(peak.load(Ordering::SeqCst) >= 2, "pool should actually run in parallel");
    }

    #[test]
    fn zero_cap_is_treated_as_one() {
        let items: Vec<u32> = (0..5).collect();
        assert_eq!(parallel_map(&items, 0, |_, x| x * x), vec![0, 1, 4, 9, 16]);
    }
}
