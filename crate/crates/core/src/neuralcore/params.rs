use rand::Rng as _;

use super::spec::{layer_output, LayerSpec, NetworkSpec, Shape};
use super::Real;
use crate::error::{invalid, Error, Result};
use crate::seeds;

/// Glorot-uniform samples on `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real>(fan_in: usize, fan_out: usize, len: usize, seed: u64) -> Result<Vec<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(invalid("glorot_uniform needs fan_in and fan_out >= 1"));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seeds::rng(seed);
    Ok((0..len)
        .map(|_| T::lit(rng.random_range(-limit..=limit)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNormParams<T> {
    fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
        }
    }

    /// Moving-average update of the running statistics:
    /// `v_ma <- (1 - momentum) * v_batch + momentum * v_ma`, for both the
    /// mean and the (biased) variance.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(invalid(format!(
                "batch norm momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        if batch_mean.len() != self.running_mean.len() || batch_var.len() != self.running_var.len() {
            return Err(invalid("batch statistics do not match the channel count"));
        }
        let keep = T::lit(self.momentum);
        let take = T::lit(1.0 - self.momentum);
        for (ma, &v) in self.running_mean.iter_mut().zip(batch_mean) {
            *ma = take * v + keep * *ma;
        }
        for (ma, &v) in self.running_var.iter_mut().zip(batch_var) {
            *ma = take * v + keep * *ma;
        }
        Ok(())
    }
}

/// Parameters of one layer, mirroring [`LayerSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Empty,
    /// `weight` is `out x in`, row-major.
    Dense { weight: Vec<T>, bias: Vec<T> },
    /// `weight` is `out x in x k x k`; `bias` is empty when disabled.
    Conv { weight: Vec<T>, bias: Vec<T> },
    BatchNorm(BatchNormParams<T>),
    Residual(Vec<LayerParams<T>>),
}

/// Gradients of one layer. Running statistics never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads<T> {
    Empty,
    Dense { weight: Vec<T>, bias: Vec<T> },
    Conv { weight: Vec<T>, bias: Vec<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    Residual(Vec<LayerGrads<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub layers: Vec<LayerParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

fn init_layers<T: Real>(
    layers: &[LayerSpec],
    mut shape: Shape,
    seed: u64,
    counter: &mut u64,
    index: usize,
) -> Result<Vec<LayerParams<T>>> {
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        let next = layer_output(l, shape, index)?;
        let mut next_seed = || {
            *counter += 1;
            seeds::hash64("init", &[seed, *counter])
        };
        let p = match (l, shape) {
            (LayerSpec::Dense { out }, Shape::Flat(inp)) => LayerParams::Dense {
                weight: glorot_uniform(inp, *out, inp * out, next_seed())?,
                bias: vec![T::zero(); *out],
            },
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    bias,
                    ..
                },
                Shape::Image { c, .. },
            ) => {
                let k2 = kernel * kernel;
                LayerParams::Conv {
                    weight: glorot_uniform(c * k2, out_channels * k2, out_channels * c * k2, next_seed())?,
                    bias: if *bias { vec![T::zero(); *out_channels] } else { Vec::new() },
                }
            }
            (LayerSpec::BatchNorm { momentum, epsilon }, s) => {
                let channels = match s {
                    Shape::Image { c, .. } => c,
                    Shape::Flat(n) => n,
                };
                LayerParams::BatchNorm(BatchNormParams::new(channels, *momentum, *epsilon))
            }
            (LayerSpec::Residual { inner }, s) => {
                LayerParams::Residual(init_layers(inner, s, seed, counter, index)?)
            }
            _ => LayerParams::Empty,
        };
        out.push(p);
        shape = next;
    }
    Ok(out)
}

fn zero_grads<T: Real>(p: &LayerParams<T>) -> LayerGrads<T> {
    let z = |v: &Vec<T>| vec![T::zero(); v.len()];
    match p {
        LayerParams::Empty => LayerGrads::Empty,
        LayerParams::Dense { weight, bias } => LayerGrads::Dense {
            weight: z(weight),
            bias: z(bias),
        },
        LayerParams::Conv { weight, bias } => LayerGrads::Conv {
            weight: z(weight),
            bias: z(bias),
        },
        LayerParams::BatchNorm(bn) => LayerGrads::BatchNorm {
            gamma: z(&bn.gamma),
            beta: z(&bn.beta),
        },
        LayerParams::Residual(inner) => LayerGrads::Residual(inner.iter().map(zero_grads).collect()),
    }
}

impl<T: Real> ParamStore<T> {
    /// Glorot-uniform weights, zero biases, unit BN scale, zero BN shift,
    /// running mean 0 and running variance 1.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut counter = 0;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shape = spec.input_shape();
        for (i, l) in spec.layers.iter().enumerate() {
            let mut p = init_layers(std::slice::from_ref(l), shape, seed, &mut counter, i)?;
            layers.push(p.pop().unwrap());
            shape = layer_output(l, shape, i)?;
        }
        Ok(ParamStore { layers })
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            layers: self.layers.iter().map(zero_grads).collect(),
        }
    }

    /// Trainable tensors in a fixed traversal order (matches
    /// [`Gradients::tensors`]).
    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        fn walk<'a, T>(layers: &'a mut [LayerParams<T>], out: &mut Vec<&'a mut Vec<T>>) {
            for l in layers {
                match l {
                    LayerParams::Empty => {}
                    LayerParams::Dense { weight, bias } | LayerParams::Conv { weight, bias } => {
                        out.push(weight);
                        out.push(bias);
                    }
                    LayerParams::BatchNorm(bn) => {
                        out.push(&mut bn.gamma);
                        out.push(&mut bn.beta);
                    }
                    LayerParams::Residual(inner) => walk(inner, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&mut self.layers, &mut out);
        out
    }

    /// Named trainable tensors, same order as [`ParamStore::trainable_mut`].
    pub fn trainable_named(&self) -> Vec<(String, &Vec<T>)> {
        fn walk<'a, T>(layers: &'a [LayerParams<T>], prefix: &str, out: &mut Vec<(String, &'a Vec<T>)>) {
            for (i, l) in layers.iter().enumerate() {
                let p = format!("{prefix}{i}");
                match l {
                    LayerParams::Empty => {}
                    LayerParams::Dense { weight, bias } => {
                        out.push((format!("{p}.dense.weight"), weight));
                        out.push((format!("{p}.dense.bias"), bias));
                    }
                    LayerParams::Conv { weight, bias } => {
                        out.push((format!("{p}.conv.weight"), weight));
                        out.push((format!("{p}.conv.bias"), bias));
                    }
                    LayerParams::BatchNorm(bn) => {
                        out.push((format!("{p}.bn.gamma"), &bn.gamma));
                        out.push((format!("{p}.bn.beta"), &bn.beta));
                    }
                    LayerParams::Residual(inner) => walk(inner, &format!("{p}."), out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, "", &mut out);
        out
    }

    /// All batch-norm parameter blocks, outer layers first.
    pub fn batch_norms(&self) -> Vec<&BatchNormParams<T>> {
        fn walk<'a, T>(layers: &'a [LayerParams<T>], out: &mut Vec<&'a BatchNormParams<T>>) {
            for l in layers {
                match l {
                    LayerParams::BatchNorm(bn) => out.push(bn),
                    LayerParams::Residual(inner) => walk(inner, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormParams<T>> {
        fn walk<'a, T>(layers: &'a mut [LayerParams<T>], out: &mut Vec<&'a mut BatchNormParams<T>>) {
            for l in layers {
                match l {
                    LayerParams::BatchNorm(bn) => out.push(bn),
                    LayerParams::Residual(inner) => walk(inner, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&mut self.layers, &mut out);
        out
    }

    pub fn set_bn_momentum(&mut self, momentum: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(invalid(format!("batch norm momentum {momentum} outside [0, 1]")));
        }
        for bn in self.batch_norms_mut() {
            bn.momentum = momentum;
        }
        Ok(())
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        fn conv<T: Real, U: Real>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::lit(x.as_f64())).collect()
        }
        fn layer<T: Real, U: Real>(l: &LayerParams<T>) -> LayerParams<U> {
            match l {
                LayerParams::Empty => LayerParams::Empty,
                LayerParams::Dense { weight, bias } => LayerParams::Dense {
                    weight: conv(weight),
                    bias: conv(bias),
                },
                LayerParams::Conv { weight, bias } => LayerParams::Conv {
                    weight: conv(weight),
                    bias: conv(bias),
                },
                LayerParams::BatchNorm(bn) => LayerParams::BatchNorm(BatchNormParams {
                    gamma: conv(&bn.gamma),
                    beta: conv(&bn.beta),
                    running_mean: conv(&bn.running_mean),
                    running_var: conv(&bn.running_var),
                    momentum: bn.momentum,
                    epsilon: bn.epsilon,
                }),
                LayerParams::Residual(inner) => LayerParams::Residual(inner.iter().map(layer).collect()),
            }
        }
        ParamStore {
            layers: self.layers.iter().map(layer).collect(),
        }
    }

    /// Checks that tensor shapes agree with `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let fresh = ParamStore::<T>::init(spec, 0)?;
        fn same<T>(a: &[LayerParams<T>], b: &[LayerParams<T>]) -> bool {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| match (x, y) {
                    (LayerParams::Empty, LayerParams::Empty) => true,
                    (
                        LayerParams::Dense { weight: w1, bias: b1 },
                        LayerParams::Dense { weight: w2, bias: b2 },
                    )
                    | (
                        LayerParams::Conv { weight: w1, bias: b1 },
                        LayerParams::Conv { weight: w2, bias: b2 },
                    ) => w1.len() == w2.len() && b1.len() == b2.len(),
                    (LayerParams::BatchNorm(p), LayerParams::BatchNorm(q)) => p.gamma.len() == q.gamma.len(),
                    (LayerParams::Residual(p), LayerParams::Residual(q)) => same(p, q),
                    _ => false,
                })
        }
        if same(&self.layers, &fresh.layers) {
            Ok(())
        } else {
            Err(Error::Consistency("parameter shapes do not match the network spec".into()))
        }
    }
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        fn walk<'a, T>(layers: &'a [LayerGrads<T>], out: &mut Vec<&'a Vec<T>>) {
            for l in layers {
                match l {
                    LayerGrads::Empty => {}
                    LayerGrads::Dense { weight, bias } | LayerGrads::Conv { weight, bias } => {
                        out.push(weight);
                        out.push(bias);
                    }
                    LayerGrads::BatchNorm { gamma, beta } => {
                        out.push(gamma);
                        out.push(beta);
                    }
                    LayerGrads::Residual(inner) => walk(inner, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
