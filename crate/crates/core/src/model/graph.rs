use crate::error::Result;
use crate::tensor::Shape;

use super::config::{ModelConfig, VGG16_BLOCK_DEPTHS};

/// Index of a layer within [`NetworkGraph::layers`].
pub type LayerId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Input,
    /// Convolution using parameter slot `param`.
    Conv {
        param: usize,
    },
    Relu,
    MaxPool,
    /// Elementwise sum of the two inputs.
    Add,
    /// Transposed convolution using parameter slot `param`.
    TransposedConv {
        param: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
    /// Output shape for a batch of one.
    pub shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Conv,
    TransposedConv,
}

/// Shape of one parameterized layer's kernel, stride and padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    /// `(c_out, c_in, kh, kw)` for convolutions, `(c_in, c_out, kh, kw)` for transposed ones.
    pub kernel: Shape,
    pub stride: usize,
    pub padding: usize,
}

impl ParamSpec {
    pub fn out_channels(&self) -> usize {
        match self.kind {
            ParamKind::Conv => self.kernel.n,
            ParamKind::TransposedConv => self.kernel.c,
        }
    }

    pub fn len(&self) -> usize {
        self.kernel.len() + self.out_channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The fixed FCN-8 computation graph: layers in execution order, parameter
/// slots in the order they appear, and named taps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkGraph {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
    pub params: Vec<ParamSpec>,
    pub pool3: LayerId,
    pub pool4: LayerId,
    pub pool5: LayerId,
    pub logits: LayerId,
}

impl NetworkGraph {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(ParamSpec::len).sum()
    }

    pub fn count(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn output_shape(&self, batch: usize) -> Shape {
        Shape {
            n: batch,
            ..self.layers[self.logits].shape
        }
    }
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<ParamSpec>,
}

impl Builder {
    fn push(
        &mut self,
        name: String,
        kind: LayerKind,
        inputs: Vec<LayerId>,
        shape: Shape,
    ) -> LayerId {
        self.layers.push(Layer {
            name,
            kind,
            inputs,
            shape,
        });
        self.layers.len() - 1
    }

    fn shape(&self, id: LayerId) -> Shape {
        self.layers[id].shape
    }

    fn conv(&mut self, name: &str, input: LayerId, c_out: usize, k: usize) -> LayerId {
        let s = self.shape(input);
        let param = self.params.len();
        self.params.push(ParamSpec {
            name: name.to_string(),
            kind: ParamKind::Conv,
            kernel: Shape::new(c_out, s.c, k, k),
            stride: 1,
            padding: k / 2,
        });
        let out = Shape::new(1, c_out, s.h, s.w);
        self.push(
            name.to_string(),
            LayerKind::Conv { param },
            vec![input],
            out,
        )
    }

    fn relu(&mut self, name: &str, input: LayerId) -> LayerId {
        let s = self.shape(input);
        self.push(name.to_string(), LayerKind::Relu, vec![input], s)
    }

    fn pool(&mut self, name: &str, input: LayerId) -> LayerId {
        let s = self.shape(input);
        let out = Shape::new(1, s.c, s.h / 2, s.w / 2);
        self.push(name.to_string(), LayerKind::MaxPool, vec![input], out)
    }

    /// Upsampling by `factor` with kernel `2 * factor` and padding `factor / 2`,
    /// which maps `h` to exactly `h * factor`.
    fn upsample(&mut self, name: &str, input: LayerId, factor: usize) -> LayerId {
        let s = self.shape(input);
        let (k, pad) = (2 * factor, factor / 2);
        let param = self.params.len();
        self.params.push(ParamSpec {
            name: name.to_string(),
            kind: ParamKind::TransposedConv,
            kernel: Shape::new(s.c, s.c, k, k),
            stride: factor,
            padding: pad,
        });
        let out = Shape::new(
            1,
            s.c,
            (s.h - 1) * factor + k - 2 * pad,
            (s.w - 1) * factor + k - 2 * pad,
        );
        self.push(
            name.to_string(),
            LayerKind::TransposedConv { param },
            vec![input],
            out,
        )
    }

    fn add(&mut self, name: &str, a: LayerId, b: LayerId) -> LayerId {
        let s = self.shape(a);
        debug_assert_eq!(s, self.shape(b));
        self.push(name.to_string(), LayerKind::Add, vec![a, b], s)
    }
}

/// Builds the FCN-8 graph for `cfg`: a VGG16-shaped encoder of 3x3 same-padded
/// convolutions with 2x2 pooling after each block, 1x1 class scoring of pool5,
/// pool4 and pool3, two fused 2x upsamplings and a final 8x upsampling back to
/// the input resolution.
pub fn build_fcn8(cfg: &ModelConfig) -> Result<NetworkGraph> {
    cfg.validate()?;
    let mut b = Builder {
        layers: Vec::new(),
        params: Vec::new(),
    };
    let mut x = b.push(
        "input".into(),
        LayerKind::Input,
        Vec::new(),
        Shape::new(1, 3, cfg.input_h, cfg.input_w),
    );

    let mut pools = Vec::with_capacity(5);
    for (block, (&depth, width)) in VGG16_BLOCK_DEPTHS.iter().zip(cfg.widths()).enumerate() {
        for i in 1..=depth {
            x = b.conv(&format!("conv{}_{i}", block + 1), x, width, 3);
            x = b.relu(&format!("relu{}_{i}", block + 1), x);
        }
        x = b.pool(&format!("pool{}", block + 1), x);
        pools.push(x);
    }
    let (pool3, pool4, pool5) = (pools[2], pools[3], pools[4]);

    let classes = cfg.num_classes;
    let score_fr = b.conv("score_fr", pool5, classes, 1);
    let upscore2 = b.upsample("upscore2", score_fr, 2);
    let score_pool4 = b.conv("score_pool4", pool4, classes, 1);
    let fuse_pool4 = b.add("fuse_pool4", upscore2, score_pool4);
    let upscore_pool4 = b.upsample("upscore_pool4", fuse_pool4, 2);
    let score_pool3 = b.conv("score_pool3", pool3, classes, 1);
    let fuse_pool3 = b.add("fuse_pool3", upscore_pool4, score_pool3);
    let logits = b.upsample("upscore8", fuse_pool3, 8);

    Ok(NetworkGraph {
        config: cfg.clone(),
        layers: b.layers,
        params: b.params,
        pool3,
        pool4,
        pool5,
        logits,
    })
}
