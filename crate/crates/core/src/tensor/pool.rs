use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Winning input index of every 2x2 window, recorded by [`maxpool2_forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    output_shape: Shape,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.output_shape
    }

    /// Flat input index chosen for each output element, in output order.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2, stride-2 max pooling. Ties resolve to the first element in row-major order.
pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "2x2 pooling needs even height and width, got {s}"
        )));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut y = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oh in 0..out_shape.h {
            for ow in 0..out_shape.w {
                let top = base + 2 * oh * s.w + 2 * ow;
                let mut best = top;
                for cand in [top + 1, top + s.w, top + s.w + 1] {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                y.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, y)?,
        PoolIndices {
            input_shape: s,
            output_shape: out_shape,
            argmax,
        },
    ))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != indices.output_shape {
        return Err(Error::Dimension(format!(
            "pool gradient {} does not match recorded output {}",
            grad_out.shape(),
            indices.output_shape
        )));
    }
    let mut grad = Tensor::zeros_unchecked(indices.input_shape);
    let g = grad.data_mut();
    for (&i, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(grad)
}
