//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! the optimized kernels it is used to check.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snowseg::dataset::{Dataset, Sample};
use snowseg::{LabelMap, Shape, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with elements uniform in [-1, 1].
pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..=1.0)).unwrap()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` with respect to `values[i]`.
pub fn central_diff(values: &mut [f64], i: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + FD_STEP;
    let plus = f(values);
    values[i] = orig - FD_STEP;
    let minus = f(values);
    values[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Largest relative error between `analytic` and central differences of `f`
/// over every coordinate accepted by `keep`.
pub fn max_fd_error(
    values: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    keep: impl Fn(usize) -> bool,
) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut v = values.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        if !keep(i) {
            continue;
        }
        let numeric = central_diff(&mut v, i, &mut f);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Direct six-loop cross-correlation: for every (n, co, oh, ow), bias plus the
/// sum over (ci, kh, kw) of in-bounds input taps.
pub fn conv_oracle(x: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Tensor {
    let xs = x.shape();
    let ks = kernel.shape();
    let h_out = (xs.h + 2 * pad - ks.h) / stride + 1;
    let w_out = (xs.w + 2 * pad - ks.w) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, h_out, w_out)).unwrap();
    for n in 0..xs.n {
        for co in 0..ks.n {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = bias[co];
                    for ci in 0..xs.c {
                        for a in 0..ks.h {
                            for b in 0..ks.w {
                                let ih = (oh * stride + a) as isize - pad as isize;
                                let iw = (ow * stride + b) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= xs.h as isize || iw >= xs.w as isize {
                                    continue;
                                }
                                acc += kernel.get(co, ci, a, b)
                                    * x.get(n, ci, ih as usize, iw as usize);
                            }
                        }
                    }
                    out.set(n, co, oh, ow, acc);
                }
            }
        }
    }
    out
}

/// Random convolution geometry with an integral output size.
#[derive(Clone, Copy, Debug)]
pub struct ConvCase {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=k / 2 + 1);
        let h_out = rng.random_range(1..=5);
        let w_out = rng.random_range(1..=5);
        let h = (h_out - 1) * stride + k;
        let w = (w_out - 1) * stride + k;
        if h <= 2 * pad || w <= 2 * pad {
            continue;
        }
        return ConvCase {
            n: rng.random_range(1..=2),
            c_in: rng.random_range(1..=3),
            c_out: rng.random_range(1..=3),
            k,
            stride,
            pad,
            h: h - 2 * pad,
            w: w - 2 * pad,
        };
    }
}

/// Random transposed-convolution geometry with a positive output size.
pub fn random_transposed_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=k / 2);
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        if (h - 1) * stride + k <= 2 * pad || (w - 1) * stride + k <= 2 * pad {
            continue;
        }
        return ConvCase {
            n: rng.random_range(1..=2),
            c_in: rng.random_range(1..=3),
            c_out: rng.random_range(1..=3),
            k,
            stride,
            pad,
            h,
            w,
        };
    }
}

pub const BLOCK: usize = 8;

pub const PALETTE: [[f64; 3]; 4] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.20],
    [0.20, 0.30, 0.90],
    [0.90, 0.90, 0.20],
];

/// A `size x size` scene of 8x8 blocks with random classes. Each block is
/// painted `palette[class]` plus small per-pixel noise.
pub fn block_scene(rng: &mut ChaCha8Rng, size: usize, palette: &[[f64; 3]]) -> Sample {
    let per_row = size / BLOCK;
    let blocks: Vec<u8> = (0..per_row * per_row)
        .map(|_| rng.random_range(0..palette.len()) as u8)
        .collect();
    let noise: Vec<f64> = (0..3 * size * size)
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    let block_of = |y: usize, x: usize| blocks[(y / BLOCK) * per_row + x / BLOCK];
    let image = Tensor::from_fn(Shape::new(1, 3, size, size), |[_, c, y, x]| {
        (palette[usize::from(block_of(y, x))][c] + noise[(c * size + y) * size + x]).clamp(0.0, 1.0)
    })
    .unwrap();
    let label = LabelMap::new(
        size,
        size,
        (0..size * size)
            .map(|i| block_of(i / size, i % size))
            .collect(),
    )
    .unwrap();
    Sample { image, label }
}

/// Two training scenes painted with [`PALETTE`] and two held-out scenes whose
/// class-to-colour assignment is rotated by one, so a model that memorizes
/// the training appearance grows more confidently wrong on them.
pub fn overfit_split(seed: u64, size: usize) -> (Dataset, Dataset) {
    let mut r = rng(seed);
    let train = (0..2)
        .map(|_| block_scene(&mut r, size, &PALETTE))
        .collect();
    let rotated = [PALETTE[1], PALETTE[2], PALETTE[3], PALETTE[0]];
    let val = (0..2)
        .map(|_| block_scene(&mut r, size, &rotated))
        .collect();
    (
        Dataset::new(PALETTE.len(), train).unwrap(),
        Dataset::new(PALETTE.len(), val).unwrap(),
    )
}

pub fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    LabelMap::new(
        h,
        w,
        (0..h * w)
            .map(|_| rng.random_range(0..classes) as u8)
            .collect(),
    )
    .unwrap()
}
