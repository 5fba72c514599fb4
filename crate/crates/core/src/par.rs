//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures on the calling thread. Reductions go through
//! fixed-size chunks whose partial results are combined in index order, so the
//! floating-point result does not depend on the number of worker threads.

/// Cells per reduction chunk. Changing it changes rounding, not results' meaning.
pub const CHUNK: usize = 1024;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..len` in chunks of [`CHUNK`] and returns the per-chunk
/// results in chunk order.
pub fn map_chunks<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunks = len.div_ceil(CHUNK);
    let range = move |c: usize| c * CHUNK..((c + 1) * CHUNK).min(len);
    #[cfg(feature = "parallel")]
    {
        (0..chunks).into_par_iter().map(|c| f(range(c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..chunks).map(|c| f(range(c))).collect()
    }
}

/// Order-preserving parallel map over a slice.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving parallel map over an index range.
pub fn map_range<U, F>(range: std::ops::Range<usize>, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}

/// Fills `out[i] = f(i)` in parallel.
pub fn fill<U, F>(out: &mut [U], f: F)
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    }
}

/// Deterministic chunked sum of `f(i)` over `0..len`.
pub fn sum(len: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    map_chunks(len, |r| r.map(&f).sum::<f64>()).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_order() {
        let n = 5 * CHUNK + 17;
        let direct: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let chunked = map_chunks(n, |r| r.map(|i| direct[i]).sum::<f64>());
        let expected: f64 = direct
            .chunks(CHUNK)
            .map(|c| c.iter().sum::<f64>())
            .sum();
        assert_eq!(chunked.into_iter().sum::<f64>(), expected);
        assert_eq!(sum(n, |i| direct[i]), expected);
    }

    #[test]
    fn empty_inputs() {
        assert!(map_chunks(0, |r| r.len()).is_empty());
        assert_eq!(sum(0, |_| 1.0), 0.0);
    }

    #[test]
    fn maps_preserve_order() {
        let v: Vec<usize> = (0..3000).collect();
        assert_eq!(map_slice(&v, |x| x * 2)[2999], 5998);
        assert_eq!(map_range(0..10, |i| i)[..], (0..10).collect::<Vec<_>>()[..]);
        let mut out = vec![0usize; 100];
        fill(&mut out, |i| i + 1);
        assert_eq!(out[99], 100);
    }
}
