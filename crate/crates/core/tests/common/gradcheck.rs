//! Finite-difference gradient suites. Each returns the worst relative error
//! seen over `cases` random shapes; scalar objectives are `sum(g * forward(..))`.

use rand::Rng;
use snowseg::model::{backward, forward_trace, ParamSet};
use snowseg::tensor::{
    conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, softmax_ce_loss, transposed_conv2d_backward, transposed_conv2d_forward,
    ConvParams,
};
use snowseg::{LabelMap, NetworkGraph, Shape, Tensor};

use super::*;

/// Gradient of x, kernel and bias of `conv2d_backward`.
pub fn conv_suite(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = random_conv_case(&mut r);
        let x = uniform(&mut r, Shape::new(c.n, c.c_in, c.h, c.w));
        let kshape = Shape::new(c.c_out, c.c_in, c.k, c.k);
        let (kernel, bias) = (uniform(&mut r, kshape), uniform_vec(&mut r, c.c_out));
        let p = ConvParams::new(kernel.clone(), bias.clone(), c.stride, c.pad).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        let g = uniform(&mut r, y.shape());
        let grads = conv2d_backward(&x, &p, &g).unwrap();

        let obj = |x: &Tensor, k: &Tensor, b: &[f64]| {
            let p = ConvParams::new(k.clone(), b.to_vec(), c.stride, c.pad).unwrap();
            conv2d_forward(x, &p).unwrap().dot(&g).unwrap()
        };
        worst = worst.max(max_fd_error(
            x.data(),
            grads.grad_x.data(),
            |v| {
                obj(
                    &Tensor::from_vec(x.shape(), v.to_vec()).unwrap(),
                    &kernel,
                    &bias,
                )
            },
            |_| true,
        ));
        worst = worst.max(max_fd_error(
            kernel.data(),
            grads.grad_kernel.data(),
            |v| obj(&x, &Tensor::from_vec(kshape, v.to_vec()).unwrap(), &bias),
            |_| true,
        ));
        worst = worst.max(max_fd_error(
            &bias,
            &grads.grad_bias,
            |v| obj(&x, &kernel, v),
            |_| true,
        ));
    }
    worst
}

pub fn transposed_suite(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = random_transposed_case(&mut r);
        let x = uniform(&mut r, Shape::new(c.n, c.c_in, c.h, c.w));
        let kshape = Shape::new(c.c_in, c.c_out, c.k, c.k);
        let (kernel, bias) = (uniform(&mut r, kshape), uniform_vec(&mut r, c.c_out));
        let p = ConvParams::new_transposed(kernel.clone(), bias.clone(), c.stride, c.pad).unwrap();
        let y = transposed_conv2d_forward(&x, &p).unwrap();
        let g = uniform(&mut r, y.shape());
        let grads = transposed_conv2d_backward(&x, &p, &g).unwrap();

        let obj = |x: &Tensor, k: &Tensor, b: &[f64]| {
            let p = ConvParams::new_transposed(k.clone(), b.to_vec(), c.stride, c.pad).unwrap();
            transposed_conv2d_forward(x, &p).unwrap().dot(&g).unwrap()
        };
        worst = worst.max(max_fd_error(
            x.data(),
            grads.grad_x.data(),
            |v| {
                obj(
                    &Tensor::from_vec(x.shape(), v.to_vec()).unwrap(),
                    &kernel,
                    &bias,
                )
            },
            |_| true,
        ));
        worst = worst.max(max_fd_error(
            kernel.data(),
            grads.grad_kernel.data(),
            |v| obj(&x, &Tensor::from_vec(kshape, v.to_vec()).unwrap(), &bias),
            |_| true,
        ));
        worst = worst.max(max_fd_error(
            &bias,
            &grads.grad_bias,
            |v| obj(&x, &kernel, v),
            |_| true,
        ));
    }
    worst
}

/// Coordinates whose 2x2 window has a runner-up within `margin` of the
/// maximum are skipped: a step there can change the winner.
pub fn maxpool_suite(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let margin = 10.0 * FD_STEP;
    for _ in 0..cases {
        let shape = Shape::new(
            r.random_range(1..=2),
            r.random_range(1..=3),
            2 * r.random_range(1..=4),
            2 * r.random_range(1..=4),
        );
        let x = uniform(&mut r, shape);
        let (y, idx) = maxpool2_forward(&x).unwrap();
        let g = uniform(&mut r, y.shape());
        let grad = maxpool2_backward(&idx, &g).unwrap();
        let near_tie = |i: usize| {
            let (w, plane) = (shape.w, shape.plane());
            let base = i / plane * plane;
            let (row, col) = ((i % plane) / w, (i % plane) % w);
            let top = base + (row / 2 * 2) * w + col / 2 * 2;
            let mut vals = [top, top + 1, top + w, top + w + 1].map(|j| x.data()[j]);
            vals.sort_by(|a, b| b.total_cmp(a));
            vals[0] - vals[1] < margin
        };
        worst = worst.max(max_fd_error(
            x.data(),
            grad.data(),
            |v| {
                let t = Tensor::from_vec(shape, v.to_vec()).unwrap();
                maxpool2_forward(&t).unwrap().0.dot(&g).unwrap()
            },
            |i| !near_tie(i),
        ));
    }
    worst
}

pub fn relu_suite(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let shape = Shape::new(
            r.random_range(1..=2),
            r.random_range(1..=3),
            r.random_range(1..=6),
            r.random_range(1..=6),
        );
        let x = uniform(&mut r, shape);
        let g = uniform(&mut r, shape);
        let grad = relu_backward(&x, &g).unwrap();
        worst = worst.max(max_fd_error(
            x.data(),
            grad.data(),
            |v| {
                relu_forward(&Tensor::from_vec(shape, v.to_vec()).unwrap())
                    .dot(&g)
                    .unwrap()
            },
            |i| x.data()[i].abs() > 10.0 * FD_STEP,
        ));
    }
    worst
}

pub fn softmax_suite(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let shape = Shape::new(
            r.random_range(1..=2),
            r.random_range(2..=5),
            r.random_range(1..=4),
            r.random_range(1..=4),
        );
        let logits = uniform(&mut r, shape);
        let labels: Vec<LabelMap> = (0..shape.n)
            .map(|_| random_labels(&mut r, shape.h, shape.w, shape.c))
            .collect();
        let (_, grad) = softmax_ce_loss(&logits, &labels).unwrap();
        worst = worst.max(max_fd_error(
            logits.data(),
            grad.data(),
            |v| {
                softmax_ce_loss(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &labels)
                    .unwrap()
                    .0
            },
            |_| true,
        ));
    }
    worst
}

/// Loss gradient of every parameter of a full graph against finite
/// differences of the mean cross-entropy.
pub fn full_graph_error(graph: &NetworkGraph, params: &ParamSet, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let input = graph.layers[0].shape;
    let x = Tensor::from_fn(input, |_| r.random_range(0.0..1.0)).unwrap();
    let labels = vec![random_labels(
        &mut r,
        input.h,
        input.w,
        graph.config.num_classes,
    )];
    let trace = forward_trace(graph, params, &x).unwrap();
    let (_, g) = softmax_ce_loss(trace.logits(), &labels).unwrap();
    let grads = backward(graph, params, &trace, &g).unwrap();

    let analytic = grads.flatten();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.scalar_mut(i).unwrap();
        let loss_at = |v: f64, probe: &mut ParamSet| {
            *probe.scalar_mut(i).unwrap() = v;
            let t = forward_trace(graph, probe, &x).unwrap();
            softmax_ce_loss(t.logits(), &labels).unwrap().0
        };
        let plus = loss_at(orig + FD_STEP, &mut probe);
        let minus = loss_at(orig - FD_STEP, &mut probe);
        *probe.scalar_mut(i).unwrap() = orig;
        worst = worst.max(rel_err(a, (plus - minus) / (2.0 * FD_STEP)));
    }
    (worst, analytic.len())
}
