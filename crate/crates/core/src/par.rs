//! Deterministic data-parallel primitives.
//!
//! Every reduction is chunked: partial results are computed per fixed-size
//! block of indices (sequentially inside a block) and combined in block
//! order. The outcome is bit-identical for any worker count and for the
//! sequential build (`--no-default-features`), which is what the fixed-order
//! reduction contract requires.

/// Block size for chunked reductions. Changing this changes rounding, so it
/// is part of the determinism contract.
pub const CHUNK: usize = 2048;

/// Sum `term(i)` for `i in 0..n` with a fixed chunked reduction order.
#[cfg(feature = "parallel")]
pub fn chunked_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let blocks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += term(i);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Sum `term(i)` for `i in 0..n` with a fixed chunked reduction order.
#[cfg(not(feature = "parallel"))]
pub fn chunked_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let mut total = 0.0;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += term(i);
        }
        total += acc;
        lo = hi;
    }
    total
}

/// Ordered map over `0..n`; the output index matches the input index.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Ordered map over `0..n`; the output index matches the input index.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maximum of `term(i)` over `0..n` together with the smallest attaining
/// index. Returns `None` for an empty range. Ties keep the earliest index,
/// which makes the result independent of the reduction tree.
pub fn max_with_index<F>(n: usize, term: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync,
{
    let combine = |a: (usize, f64), b: (usize, f64)| if b.1 > a.1 { b } else { a };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let blocks = n.div_ceil(CHUNK);
        (0..blocks)
            .into_par_iter()
            .filter_map(|b| {
                let lo = b * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut best: Option<(usize, f64)> = None;
                for i in lo..hi {
                    let v = (i, term(i));
                    best = Some(match best {
                        Some(cur) => combine(cur, v),
                        None => v,
                    });
                }
                best
            })
            .reduce_with(combine)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let v = (i, term(i));
            best = Some(match best {
                Some(cur) => combine(cur, v),
                None => v,
            });
        }
        best
    }
}

/// Run `f` inside a worker pool of the requested size. `workers == 0` keeps
/// the ambient pool. In the sequential build the closure runs inline.
#[cfg(feature = "parallel")]
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("failed to build worker pool")
            .install(f)
    }
}

/// Run `f` inside a worker pool of the requested size. `workers == 0` keeps
/// the ambient pool. In the sequential build the closure runs inline.
#[cfg(not(feature = "parallel"))]
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let _ = workers;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        let chunked = chunked_sum(v.len(), |i| v[i]);
        assert!((naive - chunked).abs() < 1e-12);
    }

    #[test]
    fn chunked_sum_is_identical_across_worker_counts() {
        let v: Vec<f64> = (0..100_000).map(|i| ((i * 37) as f64).sin() * 1e-3).collect();
        let a = with_workers(1, || chunked_sum(v.len(), |i| v[i]));
        let b = with_workers(4, || chunked_sum(v.len(), |i| v[i]));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn max_with_index_prefers_lowest_index_on_ties() {
        let v = [1.0, 5.0, 5.0, 2.0];
        let (i, m) = max_with_index(v.len(), |i| v[i]).unwrap();
        assert_eq!(i, 1);
        assert_eq!(m, 5.0);
    }
}
