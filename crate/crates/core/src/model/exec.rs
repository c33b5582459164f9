use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::{
    conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, transposed_conv2d_backward, transposed_conv2d_forward, PoolIndices, Shape,
    Tensor,
};

use super::graph::{LayerKind, NetworkGraph};
use super::params::ParamSet;

/// Every layer output of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    pub activations: Vec<Tensor>,
    pools: Vec<Option<PoolIndices>>,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        self.activations
            .last()
            .expect("graph has at least one layer")
    }
}

fn check_input(graph: &NetworkGraph, x: &Tensor) -> Result<()> {
    let want = graph.layers[0].shape;
    let got = x.shape();
    if (got.c, got.h, got.w) != (want.c, want.h, want.w) {
        return Err(Error::Dimension(format!(
            "model expects input (n, {}, {}, {}), got {got}",
            want.c, want.h, want.w
        )));
    }
    Ok(())
}

/// Runs the graph and keeps every intermediate activation.
pub fn forward_trace(graph: &NetworkGraph, params: &ParamSet, x: &Tensor) -> Result<Trace> {
    check_input(graph, x)?;
    params.check_against(graph)?;
    let mut acts: Vec<Tensor> = Vec::with_capacity(graph.layers.len());
    let mut pools = Vec::with_capacity(graph.layers.len());
    for layer in &graph.layers {
        let input = |i: usize| &acts[layer.inputs[i]];
        let (out, pool) = match layer.kind {
            LayerKind::Input => (x.clone(), None),
            LayerKind::Conv { param } => (conv2d_forward(input(0), &params.layers[param])?, None),
            LayerKind::Relu => (relu_forward(input(0)), None),
            LayerKind::MaxPool => {
                let (y, idx) = maxpool2_forward(input(0))?;
                (y, Some(idx))
            }
            LayerKind::Add => (input(0).add(input(1))?, None),
            LayerKind::TransposedConv { param } => (
                transposed_conv2d_forward(input(0), &params.layers[param])?,
                None,
            ),
        };
        acts.push(out);
        pools.push(pool);
    }
    Ok(Trace {
        activations: acts,
        pools,
    })
}

/// Class logits `(n, num_classes, input_h, input_w)` for a batch of images.
pub fn forward(graph: &NetworkGraph, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let mut trace = forward_trace(graph, params, x)?;
    Ok(trace.activations.swap_remove(graph.logits))
}

/// Backpropagates `grad_logits` through a recorded pass and returns the
/// parameter gradients in graph order.
pub fn backward(
    graph: &NetworkGraph,
    params: &ParamSet,
    trace: &Trace,
    grad_logits: &Tensor,
) -> Result<ParamSet> {
    let logits_shape = trace.activations[graph.logits].shape();
    if grad_logits.shape() != logits_shape {
        return Err(Error::Dimension(format!(
            "logit gradient {} does not match logits {logits_shape}",
            grad_logits.shape()
        )));
    }
    let mut grads = params.zeros_like();
    let mut pending: Vec<Option<Tensor>> = vec![None; graph.layers.len()];
    pending[graph.logits] = Some(grad_logits.clone());

    fn send(pending: &mut [Option<Tensor>], to: usize, g: Tensor) {
        match &mut pending[to] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    for (id, layer) in graph.layers.iter().enumerate().rev() {
        let Some(g) = pending[id].take() else {
            continue;
        };
        let acts = &trace.activations;
        match layer.kind {
            LayerKind::Input => {}
            LayerKind::Conv { param } => {
                let src = layer.inputs[0];
                let cg = conv2d_backward(&acts[src], &params.layers[param], &g)?;
                grads.layers[param].kernel = cg.grad_kernel;
                grads.layers[param].bias = cg.grad_bias;
                if graph.layers[src].kind != LayerKind::Input {
                    send(&mut pending, src, cg.grad_x);
                }
            }
            LayerKind::TransposedConv { param } => {
                let src = layer.inputs[0];
                let cg = transposed_conv2d_backward(&acts[src], &params.layers[param], &g)?;
                grads.layers[param].kernel = cg.grad_kernel;
                grads.layers[param].bias = cg.grad_bias;
                send(&mut pending, src, cg.grad_x);
            }
            LayerKind::Relu => {
                let src = layer.inputs[0];
                send(&mut pending, src, relu_backward(&acts[src], &g)?);
            }
            LayerKind::MaxPool => {
                let idx = trace.pools[id].as_ref().ok_or_else(|| {
                    Error::Dimension(format!("no pool indices for {}", layer.name))
                })?;
                send(&mut pending, layer.inputs[0], maxpool2_backward(idx, &g)?);
            }
            LayerKind::Add => {
                send(&mut pending, layer.inputs[1], g.clone());
                send(&mut pending, layer.inputs[0], g);
            }
        }
    }
    Ok(grads)
}

/// Per-pixel argmax over the class axis; ties go to the lowest class ID.
pub fn predict_labels(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let s: Shape = logits.shape();
    if s.c > 256 {
        return Err(Error::Dimension(format!(
            "{} classes do not fit an 8-bit label map",
            s.c
        )));
    }
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let x = logits.item(n);
            let values = (0..plane)
                .map(|i| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if x[c * plane + i] > x[best * plane + i] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.h, s.w, values)
        })
        .collect()
}
