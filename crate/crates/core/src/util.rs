use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Maps `f` over `items` on at most `workers` threads. Each worker owns a
/// state built by `init`. Results come back in input order.
pub(crate) fn parallel_map_with<T, S, R>(
    items: &[T],
    workers: usize,
    init: impl Fn() -> S + Sync,
    f: impl Fn(&mut S, usize, &T) -> R + Sync,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        let mut state = init();
        return items
            .iter()
            .enumerate()
            .map(|(i, item)| f(&mut state, i, item))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut state = init();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&mut state, i, &items[i]);
                    slots.lock().expect("result slots poisoned")[i] = Some(r);
                }
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every index is processed"))
        .collect()
}

/// `100 * num / den` in tenths of a percent, rounded half up.
pub fn percent_tenths(num: u64, den: u64) -> u64 {
    if den == 0 {
        0
    } else {
        (2000 * num + den) / (2 * den)
    }
}

/// `100 * num / den` in hundredths of a percent, rounded half up.
pub fn percent_hundredths(num: u64, den: u64) -> u64 {
    if den == 0 {
        0
    } else {
        (20000 * num + den) / (2 * den)
    }
}

/// Renders tenths as `84.7`.
pub fn fmt_tenths(t: u64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// Renders a signed tenths delta as `+0.8` / `-1.2` / `0.0`.
pub fn fmt_delta_tenths(d: i64) -> String {
    let sign = match d.signum() {
        1 => "+",
        -1 => "-",
        _ => "",
    };
    format!("{sign}{}.{}", d.unsigned_abs() / 10, d.unsigned_abs() % 10)
}

/// Renders hundredths as `24.20`.
pub fn fmt_hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_results_under_parallelism() {
        let items: Vec<usize> = (0..200).collect();
        let out = parallel_map_with(
            &items,
            8,
            || 0usize,
            |seen, i, x| {
                *seen += 1;
                (i, x * 2)
            },
        );
        assert!(out
            .iter()
            .enumerate()
            .all(|(i, &(j, v))| i == j && v == 2 * i));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent_tenths(864, 1034), 836);
        assert_eq!(percent_tenths(1, 16), 63); // 6.25 rounds up
        assert_eq!(percent_tenths(0, 0), 0);
        assert_eq!(percent_hundredths(1694, 7000), 2420);
        assert_eq!(fmt_hundredths(percent_hundredths(1068, 7000)), "15.26");
        assert_eq!(fmt_delta_tenths(8), "+0.8");
        assert_eq!(fmt_delta_tenths(-12), "-1.2");
    }
}
