//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) these run on the rayon global
//! pool; without it they are plain iterator loops. Every caller combines
//! results with an associative, commutative merge over integer or
//! order-independent state, so both paths produce identical output.

/// Maps every item and folds the results with `merge`, starting from `identity()`.
#[cfg(feature = "parallel")]
pub fn map_reduce<T, R, M, I, F>(items: &[T], identity: I, map: M, merge: F) -> R
where
    T: Sync,
    R: Send,
    I: Fn() -> R + Sync + Send,
    M: Fn(&T) -> R + Sync + Send,
    F: Fn(R, R) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(map).reduce(identity, merge)
}

#[cfg(not(feature = "parallel"))]
pub fn map_reduce<T, R, M, I, F>(items: &[T], identity: I, map: M, merge: F) -> R
where
    I: Fn() -> R,
    M: Fn(&T) -> R,
    F: Fn(R, R) -> R,
{
    map_reduce_sequential(items, identity, map, merge)
}

/// Always-sequential variant, kept available for benchmarking against the parallel path.
pub fn map_reduce_sequential<T, R, M, I, F>(items: &[T], identity: I, map: M, merge: F) -> R
where
    I: Fn() -> R,
    M: Fn(&T) -> R,
    F: Fn(R, R) -> R,
{
    items.iter().map(map).fold(identity(), merge)
}

/// Order-preserving map.
#[cfg(feature = "parallel")]
pub fn map<T, R, M>(items: &[T], f: M) -> Vec<R>
where
    T: Sync,
    R: Send,
    M: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, M>(items: &[T], f: M) -> Vec<R>
where
    M: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range.
#[cfg(feature = "parallel")]
pub fn map_range<R, M>(n: usize, f: M) -> Vec<R>
where
    R: Send,
    M: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, M>(n: usize, f: M) -> Vec<R>
where
    M: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}
