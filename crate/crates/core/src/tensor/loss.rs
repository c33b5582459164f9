use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::label::LabelMap;

/// Mean pixel-wise softmax cross-entropy and its gradient with respect to the logits.
///
/// `labels[n]` is the target map of batch item `n`. The gradient is
/// `(softmax - onehot) / (n * h * w)`.
pub fn softmax_ce_loss(logits: &Tensor, labels: &[LabelMap]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::Dimension(format!(
            "{} label maps for logits {s}",
            labels.len()
        )));
    }
    for (n, l) in labels.iter().enumerate() {
        if l.dims() != (s.h, s.w) {
            return Err(Error::Dimension(format!(
                "label map {n} is {}x{} but logits are {s}",
                l.height(),
                l.width()
            )));
        }
        if let Some(i) = l.values().iter().position(|&v| usize::from(v) >= s.c) {
            return Err(Error::Data(format!(
                "label {} at batch {n}, (row {}, col {}) is not below the class count {}",
                l.values()[i],
                i / s.w,
                i % s.w,
                s.c
            )));
        }
    }

    let plane = s.plane();
    let scale = 1.0 / (s.n * plane) as f64;
    let mut grad = Tensor::zeros_unchecked(s);
    // Per-item partial losses, summed in item order afterwards.
    let partial: Vec<f64> = grad
        .data_mut()
        .par_chunks_mut(s.c * plane)
        .zip(labels.par_iter())
        .enumerate()
        .map(|(n, (g, label))| {
            let x = logits.item(n);
            let mut total = 0.0;
            for (i, &target) in label.values().iter().enumerate() {
                let mut max = f64::NEG_INFINITY;
                for c in 0..s.c {
                    max = max.max(x[c * plane + i]);
                }
                let mut denom = 0.0;
                for c in 0..s.c {
                    let e = (x[c * plane + i] - max).exp();
                    g[c * plane + i] = e;
                    denom += e;
                }
                let t = usize::from(target);
                total += denom.ln() - (x[t * plane + i] - max);
                for c in 0..s.c {
                    g[c * plane + i] = g[c * plane + i] / denom * scale;
                }
                g[t * plane + i] -= scale;
            }
            total
        })
        .collect();
    Ok((partial.iter().sum::<f64>() * scale, grad))
}
