use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvParams, Sgd, Shape, Tensor};

use super::graph::{NetworkGraph, ParamKind, ParamSpec};

/// One [`ConvParams`] per parameterized layer, in graph order. Also used to hold
/// gradients and momentum buffers of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<ConvParams>,
}

impl ParamSet {
    /// All-zero parameters matching `graph`.
    pub fn zeros(graph: &NetworkGraph) -> ParamSet {
        ParamSet {
            layers: graph.params.iter().map(zero_layer).collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|p| ConvParams {
                    kernel: Tensor::zeros_unchecked(p.kernel.shape()),
                    bias: vec![0.0; p.bias.len()],
                    stride: p.stride,
                    padding: p.padding,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(ConvParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every scalar, kernel before bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.layers {
            out.extend_from_slice(p.kernel.data());
            out.extend_from_slice(&p.bias);
        }
        out
    }

    /// Mutable access to scalar `i` in [`ParamSet::flatten`] order.
    pub fn scalar_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for p in &mut self.layers {
            let k = p.kernel.data().len();
            if i < k {
                return Some(&mut p.kernel.data_mut()[i]);
            }
            i -= k;
            if i < p.bias.len() {
                return Some(&mut p.bias[i]);
            }
            i -= p.bias.len();
        }
        None
    }

    /// Checks that every layer matches the graph's parameter slots.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<()> {
        if self.layers.len() != graph.params.len() {
            return Err(Error::Dimension(format!(
                "parameter set has {} layers, graph expects {}",
                self.layers.len(),
                graph.params.len()
            )));
        }
        for (p, spec) in self.layers.iter().zip(&graph.params) {
            if p.kernel.shape() != spec.kernel
                || p.bias.len() != spec.out_channels()
                || p.stride != spec.stride
                || p.padding != spec.padding
            {
                return Err(Error::Dimension(format!(
                    "layer {}: kernel {} stride {} pad {} does not match expected {} stride {} pad {}",
                    spec.name,
                    p.kernel.shape(),
                    p.stride,
                    p.padding,
                    spec.kernel,
                    spec.stride,
                    spec.padding
                )));
            }
        }
        Ok(())
    }

    /// Momentum SGD over every layer whose entry in `trainable` is true.
    pub fn sgd_step(
        &mut self,
        grads: &ParamSet,
        velocity: &mut ParamSet,
        opt: Sgd,
        trainable: &[bool],
    ) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || velocity.layers.len() != self.layers.len()
            || trainable.len() != self.layers.len()
        {
            return Err(Error::Dimension(
                "parameter, gradient and velocity sets differ in length".into(),
            ));
        }
        for (((p, g), v), _) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(velocity.layers.iter_mut())
            .zip(trainable)
            .filter(|(_, &t)| t)
        {
            tensor::sgd_step(
                &mut [&mut p.kernel],
                &[&g.kernel],
                &mut [&mut v.kernel],
                opt,
            )?;
            if g.bias.len() != p.bias.len() || v.bias.len() != p.bias.len() {
                return Err(Error::Dimension("bias lengths differ".into()));
            }
            tensor::optim::update(&mut p.bias, &g.bias, &mut v.bias, opt);
        }
        Ok(())
    }
}

fn zero_layer(spec: &ParamSpec) -> ConvParams {
    ConvParams {
        kernel: Tensor::zeros_unchecked(spec.kernel),
        bias: vec![0.0; spec.out_channels()],
        stride: spec.stride,
        padding: spec.padding,
    }
}

/// 1-D bilinear interpolation profile of length `size`: `w(i) = 1 - |i/f - c|`
/// with `f = ceil(size/2)` and `c = (2f - 1 - f mod 2) / (2f)`.
pub fn bilinear_profile(size: usize) -> Vec<f64> {
    let f = size.div_ceil(2) as f64;
    let c = (2.0 * f - 1.0 - (f as usize % 2) as f64) / (2.0 * f);
    (0..size).map(|i| 1.0 - (i as f64 / f - c).abs()).collect()
}

/// A `(c, c, size, size)` kernel that upsamples each channel independently by
/// bilinear interpolation.
pub fn bilinear_kernel(channels: usize, size: usize) -> Tensor {
    let prof = bilinear_profile(size);
    let shape = Shape::new(channels, channels, size, size);
    let mut k = Tensor::zeros_unchecked(shape);
    for c in 0..channels {
        for a in 0..size {
            for b in 0..size {
                k.set(c, c, a, b, prof[a] * prof[b]);
            }
        }
    }
    k
}

/// He-normal convolution kernels (variance `2 / fan_in`), zero biases and
/// bilinear upsampling kernels, drawn deterministically from `seed`.
pub fn init_parameters(graph: &NetworkGraph, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = graph
        .params
        .iter()
        .map(|spec| {
            let mut p = zero_layer(spec);
            match spec.kind {
                ParamKind::Conv => {
                    let k = spec.kernel;
                    let std = (2.0 / (k.c * k.h * k.w) as f64).sqrt();
                    for v in p.kernel.data_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v = z * std;
                    }
                }
                ParamKind::TransposedConv => {
                    p.kernel = bilinear_kernel(spec.kernel.n, spec.kernel.h);
                }
            }
            p
        })
        .collect();
    ParamSet { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_fcn8, ModelConfig};
    use crate::tensor::transposed_conv2d_forward;

    #[test]
    fn stride_two_profile() {
        let p = bilinear_profile(4);
        assert_eq!(p, vec![0.25, 0.75, 0.75, 0.25]);
        let k = bilinear_kernel(1, 4);
        assert_eq!(k.get(0, 0, 1, 2), 0.75 * 0.75);
        assert_eq!(k.get(0, 0, 0, 3), 0.25 * 0.25);
    }

    #[test]
    fn stride_eight_profile_is_symmetric_partition() {
        let p = bilinear_profile(16);
        for i in 0..8 {
            assert!((p[i] - p[15 - i]).abs() < 1e-15);
            // taps i and i+8 land on the same output phase
            assert!((p[i] + p[i + 8] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_upsampling_keeps_constants_in_interior() {
        let x = Tensor::filled(Shape::new(1, 2, 5, 6), 3.5).unwrap();
        let p = ConvParams::new_transposed(bilinear_kernel(2, 4), vec![0.0; 2], 2, 1).unwrap();
        let y = transposed_conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 10, 12));
        for c in 0..2 {
            for h in 1..9 {
                for w in 1..11 {
                    assert!((y.get(0, c, h, w) - 3.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        let g = build_fcn8(&ModelConfig::default()).unwrap();
        let a = init_parameters(&g, 7);
        assert_eq!(a, init_parameters(&g, 7));
        assert_ne!(a, init_parameters(&g, 8));
        a.check_against(&g).unwrap();

        // conv3_2: fan_in = 64 * 9, 64 * 576 samples
        let idx = g.params.iter().position(|p| p.name == "conv3_2").unwrap();
        let k = &a.layers[idx].kernel;
        let n = k.data().len() as f64;
        let mean = k.sum() / n;
        let var = k.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 576.0;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(
            (var / expected - 1.0).abs() < 0.05,
            "var {var} vs {expected}"
        );
        assert!(a.layers.iter().all(|p| p.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn frozen_layers_are_not_updated() {
        let g = build_fcn8(&ModelConfig {
            input_h: 32,
            input_w: 32,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut p = init_parameters(&g, 1);
        let before = p.clone();
        let mut grads = p.zeros_like();
        for l in &mut grads.layers {
            l.kernel.data_mut().fill(1.0);
        }
        let mut vel = p.zeros_like();
        let trainable: Vec<bool> = g.params.iter().map(|s| s.kind == ParamKind::Conv).collect();
        p.sgd_step(
            &grads,
            &mut vel,
            Sgd {
                lr: 0.1,
                momentum: 0.9,
            },
            &trainable,
        )
        .unwrap();
        for ((a, b), t) in p.layers.iter().zip(&before.layers).zip(&trainable) {
            assert_eq!(a == b, !t);
        }
    }
}
