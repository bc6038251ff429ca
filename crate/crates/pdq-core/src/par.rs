//! Data-parallel helpers. With the `parallel` feature they run on rayon,
//! otherwise they fall back to sequential iteration with the same results.

use num::{BigInt, BigRational, Zero};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_sum_bigint<T: Sync, F: Fn(&T) -> BigInt + Sync + Send>(items: &[T], f: F) -> BigInt {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(&f).reduce(BigInt::zero, |a, b| a + b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).fold(BigInt::zero(), |a, b| a + b)
    }
}

pub fn map_sum_rational<T: Sync, F: Fn(&T) -> BigRational + Sync + Send>(
    items: &[T],
    f: F,
) -> BigRational {
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter()
            .map(&f)
            .reduce(BigRational::zero, |a, b| a + b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).fold(BigRational::zero(), |a, b| a + b)
    }
}

pub fn map_sum_u64<T: Sync, F: Fn(&T) -> u64 + Sync + Send>(items: &[T], f: F) -> u64 {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(&f).sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).sum()
    }
}

/// Order-preserving parallel map.
pub fn map<T: Sync, R: Send, F: Fn(&T) -> R + Sync + Send>(items: &[T], f: F) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
