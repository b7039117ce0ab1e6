//! Data-parallel helpers. With the `parallel` feature these dispatch to
//! rayon; without it they run as plain iterators with identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `items.iter().map(f).collect()`, order preserved.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Number of items satisfying `pred`.
pub fn count_slice<T, F>(items: &[T], pred: F) -> usize
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().filter(|x| pred(x)).count()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().filter(|x| pred(x)).count()
    }
}

/// Folds each item into an accumulator, then merges accumulators.
///
/// `merge` must be associative and `identity` must be its neutral element;
/// the sequential path folds everything into a single accumulator.
pub fn fold_slice<T, A, I, F, M>(items: &[T], identity: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter()
            .fold(&identity, &fold)
            .reduce(&identity, &merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = &merge;
        items.iter().fold(identity(), fold)
    }
}

/// Runs `f` on every item, collecting results in order. Used for per-day and
/// per-feed jobs that are independent of one another.
pub fn map_vec<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_matches_sequential_sum() {
        let xs: Vec<u64> = (1..=10_000).collect();
        let total = fold_slice(&xs, || 0u64, |a, x| a + x, |a, b| a + b);
        assert_eq!(total, 10_000 * 10_001 / 2);
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u32> = (0..1000).collect();
        assert_eq!(map_slice(&xs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_vec(xs.clone(), |x| x + 1)[999], 1000);
        assert_eq!(count_slice(&xs, |x| x % 2 == 0), 500);
    }
}
