use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn yes() -> bool {
    true
}

/// One layer descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        /// Convolutions feeding a batch norm usually carry no bias.
        #[serde(default = "yes")]
        bias: bool,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    Relu,
    AvgPool {
        kernel: usize,
    },
    Flatten,
    Residual {
        inner: Vec<LayerSpec>,
    },
}

/// Activation shape of a single batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Image { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub probe_index: usize,
    pub num_classes: usize,
}

pub(crate) fn layer_output(spec: &LayerSpec, input: Shape, index: usize) -> Result<Shape> {
    let shape_err = |msg: String| Error::Shape { layer: index, msg };
    match (spec, input) {
        (LayerSpec::Dense { out }, Shape::Flat(_)) => {
            if *out == 0 {
                return Err(shape_err("dense layer with zero outputs".into()));
            }
            Ok(Shape::Flat(*out))
        }
        (LayerSpec::Dense { .. }, s) => Err(shape_err(format!(
            "dense layer needs flat input, got {s:?} (insert a flatten layer)"
        ))),
        (
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            },
            Shape::Image { h, w, .. },
        ) => {
            if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                return Err(shape_err("conv kernel, stride and channels must be positive".into()));
            }
            if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                return Err(shape_err(format!("conv kernel {kernel} larger than padded input {h}x{w}")));
            }
            Ok(Shape::Image {
                c: *out_channels,
                h: (h + 2 * pad - kernel) / stride + 1,
                w: (w + 2 * pad - kernel) / stride + 1,
            })
        }
        (LayerSpec::Conv { .. }, s) => Err(shape_err(format!("conv layer needs image input, got {s:?}"))),
        (LayerSpec::BatchNorm { momentum, epsilon }, s) => {
            if !(0.0..=1.0).contains(momentum) {
                return Err(invalid(format!("batch norm momentum {momentum} outside [0, 1]")));
            }
            if !(*epsilon > 0.0) {
                return Err(invalid("batch norm epsilon must be positive"));
            }
            Ok(s)
        }
        (LayerSpec::Relu, s) => Ok(s),
        (LayerSpec::AvgPool { kernel }, Shape::Image { c, h, w }) => {
            if *kernel == 0 || *kernel > h || *kernel > w {
                return Err(shape_err(format!("pool kernel {kernel} invalid for {h}x{w}")));
            }
            Ok(Shape::Image {
                c,
                h: h / kernel,
                w: w / kernel,
            })
        }
        (LayerSpec::AvgPool { .. }, s) => Err(shape_err(format!("pooling needs image input, got {s:?}"))),
        (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.len())),
        (LayerSpec::Residual { inner }, s) => {
            let mut cur = s;
            for l in inner {
                cur = layer_output(l, cur, index)?;
            }
            if cur != s {
                return Err(shape_err(format!(
                    "residual branch maps {s:?} to {cur:?}; shapes must match"
                )));
            }
            Ok(s)
        }
    }
}

impl NetworkSpec {
    pub fn input_shape(&self) -> Shape {
        let (c, h, w) = self.input;
        Shape::Image { c, h, w }
    }

    /// Validates the stack and returns each top-level layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = layer_output(l, cur, i)?;
            out.push(cur);
        }
        match self.layers.get(self.probe_index) {
            Some(LayerSpec::Relu) => {}
            _ => {
                return Err(invalid(format!(
                    "probe index {} does not address a top-level relu",
                    self.probe_index
                )))
            }
        }
        if cur != Shape::Flat(self.num_classes) {
            return Err(Error::Shape {
                layer: self.layers.len().saturating_sub(1),
                msg: format!("final output {cur:?}, expected {} logits", self.num_classes),
            });
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn probe_shape(&self) -> Result<Shape> {
        Ok(self.shapes()?[self.probe_index])
    }

    /// The desk-scale residual CNN:
    /// conv-BN-relu, residual{conv-BN-relu-conv-BN}, relu, avgpool(2),
    /// flatten, dense(hidden)-relu (probe), dense(classes).
    pub fn mini_resnet(
        input: (usize, usize, usize),
        num_classes: usize,
        channels: usize,
        hidden: usize,
        bn_momentum: f64,
        bn_epsilon: f64,
    ) -> Self {
        let conv = |c| LayerSpec::Conv {
            out_channels: c,
            kernel: 3,
            stride: 1,
            pad: 1,
            bias: false,
        };
        let bn = || LayerSpec::BatchNorm {
            momentum: bn_momentum,
            epsilon: bn_epsilon,
        };
        NetworkSpec {
            input,
            layers: vec![
                conv(channels),
                bn(),
                LayerSpec::Relu,
                LayerSpec::Residual {
                    inner: vec![conv(channels), bn(), LayerSpec::Relu, conv(channels), bn()],
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool { kernel: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { out: num_classes },
            ],
            probe_index: 8,
            num_classes,
        }
    }

    /// flatten, dense(hidden)-BN-relu (probe), dense(classes).
    pub fn mlp(
        input: (usize, usize, usize),
        num_classes: usize,
        hidden: usize,
        bn_momentum: f64,
        bn_epsilon: f64,
    ) -> Self {
        NetworkSpec {
            input,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { out: hidden },
                LayerSpec::BatchNorm {
                    momentum: bn_momentum,
                    epsilon: bn_epsilon,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { out: num_classes },
            ],
            probe_index: 3,
            num_classes,
        }
    }

    /// Copy with every batch-norm momentum (including nested ones) replaced.
    pub fn with_bn_momentum(&self, momentum: f64) -> Self {
        fn rewrite(layers: &mut [LayerSpec], m: f64) {
            for l in layers {
                match l {
                    LayerSpec::BatchNorm { momentum, .. } => *momentum = m,
                    LayerSpec::Residual { inner } => rewrite(inner, m),
                    _ => {}
                }
            }
        }
        let mut out = self.clone();
        rewrite(&mut out.layers, momentum);
        out
    }

    pub fn has_batch_norm(&self) -> bool {
        fn any(layers: &[LayerSpec]) -> bool {
            layers.iter().any(|l| match l {
                LayerSpec::BatchNorm { .. } => true,
                LayerSpec::Residual { inner } => any(inner),
                _ => false,
            })
        }
        any(&self.layers)
    }
}
