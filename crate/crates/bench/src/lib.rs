//! Deterministic inputs shared by the benchmarks.

use snowseg::{Shape, Tensor};

/// A tensor filled with a fixed low-discrepancy pattern in `[-1, 1)`.
pub fn pattern(shape: Shape) -> Tensor {
    let mut i = 0u64;
    Tensor::from_fn(shape, |_| {
        i += 1;
        // Fractional part of i * golden ratio.
        let v = (i as f64 * 0.618_033_988_749_895).fract();
        2.0 * v - 1.0
    })
    .expect("non-empty shape")
}
