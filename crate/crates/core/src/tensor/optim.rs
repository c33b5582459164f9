use super::{ensure_same_shape, Tensor};
use crate::error::{Error, Result};

/// Constant-learning-rate SGD with heavy-ball momentum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

/// One momentum step over matched lists of tensors:
/// `v <- momentum * v + grad; param <- param - lr * v`.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    velocity: &mut [&mut Tensor],
    opt: Sgd,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Dimension(format!(
            "sgd_step got {} params, {} grads and {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        ensure_same_shape(p.shape(), g.shape(), "sgd param/grad")?;
        ensure_same_shape(p.shape(), v.shape(), "sgd param/velocity")?;
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        update(p.data_mut(), g.data(), v.data_mut(), opt);
    }
    Ok(())
}

/// The same update on raw slices, used for bias vectors.
pub(crate) fn update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], opt: Sgd) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = opt.momentum * *v + g;
        *p -= opt.lr * *v;
    }
}
