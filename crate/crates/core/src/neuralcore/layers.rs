//! Forward and backward passes.

use super::params::{Gradients, LayerGrads, LayerParams, ParamStore};
use super::spec::{LayerSpec, NetworkSpec};
use super::{gemm, Layout, Real, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN; caches kept for backward.
    Train,
    /// Running statistics in BN; no caches.
    Eval,
}

#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    Dense { input: Tensor<T> },
    Conv { input: Tensor<T> },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Relu { output: Tensor<T> },
    AvgPool { in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    Residual(Vec<Cache<T>>),
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    /// Output of the probe layer, `g(x; theta_g)`, shape `[batch, features...]`.
    pub probe: Tensor<T>,
    /// Network output `f(g(x; theta_g); theta_f)`, shape `[batch, classes]`.
    pub logits: Tensor<T>,
    pub(crate) caches: Vec<Cache<T>>,
}

impl<T: Real> ForwardTrace<T> {
    /// Batch `(mean, variance)` of every BN layer, in [`ParamStore::batch_norms`] order.
    pub fn batch_statistics(&self) -> Vec<(&[T], &[T])> {
        fn walk<'a, T>(caches: &'a [Cache<T>], out: &mut Vec<(&'a [T], &'a [T])>) {
            for c in caches {
                match c {
                    Cache::BatchNorm { mean, var, .. } => out.push((mean, var)),
                    Cache::Residual(inner) => walk(inner, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.caches, &mut out);
        out
    }
}

impl<T: Real> ParamStore<T> {
    /// Applies the moving-average update of every BN layer with the batch
    /// statistics recorded in a train-mode trace. Call once per step.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>) -> Result<()> {
        if trace.mode != Mode::Train {
            return Err(Error::State("running statistics need a train-mode trace".into()));
        }
        let stats: Vec<(Vec<T>, Vec<T>)> = trace
            .batch_statistics()
            .into_iter()
            .map(|(m, v)| (m.to_vec(), v.to_vec()))
            .collect();
        let bns = self.batch_norms_mut();
        if stats.len() != bns.len() {
            return Err(Error::State("trace does not match parameter store".into()));
        }
        for (bn, (m, v)) in bns.into_iter().zip(stats) {
            bn.update_running(&m, &v)?;
        }
        Ok(())
    }
}

fn im2col<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..][..w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
    dx: &mut [T],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * h + iy as usize) * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn image_dims(t: &Tensor<impl Real>, layer: usize) -> Result<(usize, usize, usize)> {
    match t.shape.as_slice() {
        [_, c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::Shape {
            layer,
            msg: format!("expected [batch, c, h, w], got {s:?}"),
        }),
    }
}

/// Splits a BN input into (outer, channels, inner) so element index is
/// `(o * channels + ch) * inner + i`.
fn bn_view(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [b, c, h, w] => (*b, *c, h * w),
        [b, f] => (*b, *f, 1),
        _ => (0, 0, 0),
    }
}

fn layer_forward<T: Real>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    x: Tensor<T>,
    mode: Mode,
    index: usize,
) -> Result<(Tensor<T>, Option<Cache<T>>)> {
    let keep = mode == Mode::Train;
    let mismatch = || Error::Shape {
        layer: index,
        msg: "parameters do not match layer kind".into(),
    };
    match (spec, params) {
        (LayerSpec::Dense { out }, LayerParams::Dense { weight, bias }) => {
            let b = x.batch();
            if x.shape.len() != 2 || x.shape[1] * out != weight.len() {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("dense input {:?} does not fit weight of {} x {}", x.shape, out, weight.len() / out),
                });
            }
            let inp = x.shape[1];
            let mut y = Vec::with_capacity(b * out);
            for _ in 0..b {
                y.extend_from_slice(bias);
            }
            gemm(
                b,
                inp,
                *out,
                &x.data,
                Layout::row_major(inp),
                weight,
                Layout::transposed(inp),
                T::one(),
                &mut y,
                Layout::row_major(*out),
            );
            let cache = keep.then_some(Cache::Dense { input: x });
            Ok((Tensor::new(vec![b, *out], y), cache))
        }
        (
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            },
            LayerParams::Conv { weight, bias },
        ) => {
            let (c, h, w) = image_dims(&x, index)?;
            let (k, oc) = (*kernel, *out_channels);
            if weight.len() != oc * c * k * k {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("conv input has {c} channels, weights expect {}", weight.len() / (oc * k * k)),
                });
            }
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let (q, p) = (c * k * k, oh * ow);
            let b = x.batch();
            let mut y = vec![T::zero(); b * oc * p];
            let mut cols = vec![T::zero(); q * p];
            for bi in 0..b {
                im2col(x.item(bi), (c, h, w), k, *stride, *pad, (oh, ow), &mut cols);
                let out = &mut y[bi * oc * p..(bi + 1) * oc * p];
                if !bias.is_empty() {
                    for (o, bv) in bias.iter().enumerate() {
                        out[o * p..(o + 1) * p].fill(*bv);
                    }
                }
                gemm(
                    oc,
                    q,
                    p,
                    weight,
                    Layout::row_major(q),
                    &cols,
                    Layout::row_major(p),
                    T::one(),
                    out,
                    Layout::row_major(p),
                );
            }
            let cache = keep.then_some(Cache::Conv { input: x });
            Ok((Tensor::new(vec![b, oc, oh, ow], y), cache))
        }
        (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
            let (outer, ch, inner) = bn_view(&x.shape);
            if ch != bn.gamma.len() {
                return Err(Error::Shape {
                    layer: index,
                    msg: format!("batch norm over {ch} channels, parameters have {}", bn.gamma.len()),
                });
            }
            let eps = T::lit(bn.epsilon);
            let mut y = x.data;
            match mode {
                Mode::Eval => {
                    for o in 0..outer {
                        for c in 0..ch {
                            let inv = T::one() / (bn.running_var[c] + eps).sqrt();
                            let (g, s, m) = (bn.gamma[c], bn.beta[c], bn.running_mean[c]);
                            for v in &mut y[(o * ch + c) * inner..][..inner] {
                                *v = g * ((*v - m) * inv) + s;
                            }
                        }
                    }
                    Ok((Tensor::new(x.shape, y), None))
                }
                Mode::Train => {
                    if outer < 2 {
                        return Err(invalid(format!(
                            "train-mode batch norm (layer {index}) needs a batch of at least 2"
                        )));
                    }
                    let count = T::lit((outer * inner) as f64);
                    let mut mean = vec![T::zero(); ch];
                    let mut var = vec![T::zero(); ch];
                    for o in 0..outer {
                        for c in 0..ch {
                            for &v in &y[(o * ch + c) * inner..][..inner] {
                                mean[c] += v;
                            }
                        }
                    }
                    for m in mean.iter_mut() {
                        *m = *m / count;
                    }
                    for o in 0..outer {
                        for c in 0..ch {
                            let m = mean[c];
                            for &v in &y[(o * ch + c) * inner..][..inner] {
                                var[c] += (v - m) * (v - m);
                            }
                        }
                    }
                    for v in var.iter_mut() {
                        *v = *v / count;
                    }
                    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut xhat = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for c in 0..ch {
                            let (m, inv, g, s) = (mean[c], inv_std[c], bn.gamma[c], bn.beta[c]);
                            let base = (o * ch + c) * inner;
                            for i in base..base + inner {
                                let xh = (y[i] - m) * inv;
                                xhat[i] = xh;
                                y[i] = g * xh + s;
                            }
                        }
                    }
                    Ok((
                        Tensor::new(x.shape, y),
                        Some(Cache::BatchNorm {
                            xhat,
                            inv_std,
                            mean,
                            var,
                        }),
                    ))
                }
            }
        }
        (LayerSpec::Relu, LayerParams::Empty) => {
            let mut x = x;
            for v in x.data.iter_mut() {
                *v = v.max(T::zero());
            }
            let cache = keep.then(|| Cache::Relu { output: x.clone() });
            Ok((x, cache))
        }
        (LayerSpec::AvgPool { kernel }, LayerParams::Empty) => {
            let (c, h, w) = image_dims(&x, index)?;
            let k = *kernel;
            let (oh, ow) = (h / k, w / k);
            let b = x.batch();
            let scale = T::one() / T::lit((k * k) as f64);
            let mut y = vec![T::zero(); b * c * oh * ow];
            for plane in 0..b * c {
                let src = &x.data[plane * h * w..][..h * w];
                let dst = &mut y[plane * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = T::zero();
                        for dy in 0..k {
                            for dx in 0..k {
                                s += src[(oy * k + dy) * w + ox * k + dx];
                            }
                        }
                        dst[oy * ow + ox] = s * scale;
                    }
                }
            }
            let cache = keep.then(|| Cache::AvgPool {
                in_shape: x.shape.clone(),
            });
            Ok((Tensor::new(vec![b, c, oh, ow], y), cache))
        }
        (LayerSpec::Flatten, LayerParams::Empty) => {
            let in_shape = x.shape.clone();
            let b = x.batch();
            let n = x.item_len();
            let cache = keep.then_some(Cache::Flatten { in_shape });
            Ok((Tensor::new(vec![b, n], x.data), cache))
        }
        (LayerSpec::Residual { inner }, LayerParams::Residual(inner_params)) => {
            let skip = x.clone();
            let mut cur = x;
            let mut caches = Vec::with_capacity(inner.len());
            for (l, p) in inner.iter().zip(inner_params) {
                let (y, c) = layer_forward(l, p, cur, mode, index)?;
                cur = y;
                if let Some(c) = c {
                    caches.push(c);
                }
            }
            if cur.shape != skip.shape {
                return Err(Error::Shape {
                    layer: index,
                    msg: "residual branch changed the shape".into(),
                });
            }
            for (v, s) in cur.data.iter_mut().zip(&skip.data) {
                *v += *s;
            }
            Ok((cur, keep.then_some(Cache::Residual(caches))))
        }
        _ => Err(mismatch()),
    }
}

/// Runs the network on a batch `[batch, c, h, w]`.
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    batch: &Tensor<T>,
    mode: Mode,
) -> Result<ForwardTrace<T>> {
    let (c, h, w) = spec.input;
    if batch.shape.len() != 4 || batch.shape[1..] != [c, h, w] {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("input batch {:?} does not match [_, {c}, {h}, {w}]", batch.shape),
        });
    }
    if params.layers.len() != spec.layers.len() {
        return Err(Error::Shape {
            layer: 0,
            msg: "parameter store does not match the network spec".into(),
        });
    }
    let mut cur = batch.clone();
    let mut caches = Vec::new();
    let mut probe = None;
    for (i, (l, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let (y, cache) = layer_forward(l, p, cur, mode, i)?;
        if let Some(c) = cache {
            caches.push(c);
        }
        if i == spec.probe_index {
            probe = Some(y.clone());
        }
        cur = y;
    }
    if cur.shape != [batch.batch(), spec.num_classes] {
        return Err(Error::Shape {
            layer: spec.layers.len() - 1,
            msg: format!("logits {:?}, expected [_, {}]", cur.shape, spec.num_classes),
        });
    }
    Ok(ForwardTrace {
        mode,
        probe: probe.ok_or_else(|| invalid("probe index outside the layer stack"))?,
        logits: cur,
        caches,
    })
}

fn layer_backward<T: Real>(
    spec: &LayerSpec,
    params: &LayerParams<T>,
    cache: &Cache<T>,
    dy: Tensor<T>,
    index: usize,
) -> Result<(Tensor<T>, LayerGrads<T>)> {
    match (spec, params, cache) {
        (LayerSpec::Dense { out }, LayerParams::Dense { weight, bias }, Cache::Dense { input }) => {
            let (b, inp, out) = (input.batch(), input.shape[1], *out);
            let mut dw = vec![T::zero(); weight.len()];
            gemm(
                out,
                b,
                inp,
                &dy.data,
                Layout::transposed(out),
                &input.data,
                Layout::row_major(inp),
                T::zero(),
                &mut dw,
                Layout::row_major(inp),
            );
            let mut db = vec![T::zero(); bias.len()];
            for row in dy.data.chunks_exact(out) {
                for (d, &g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            let mut dx = vec![T::zero(); b * inp];
            gemm(
                b,
                out,
                inp,
                &dy.data,
                Layout::row_major(out),
                weight,
                Layout::row_major(inp),
                T::zero(),
                &mut dx,
                Layout::row_major(inp),
            );
            Ok((
                Tensor::new(input.shape.clone(), dx),
                LayerGrads::Dense { weight: dw, bias: db },
            ))
        }
        (
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            },
            LayerParams::Conv { weight, bias },
            Cache::Conv { input },
        ) => {
            let (c, h, w) = image_dims(input, index)?;
            let (k, oc) = (*kernel, *out_channels);
            let (oh, ow) = (dy.shape[2], dy.shape[3]);
            let (q, p) = (c * k * k, oh * ow);
            let b = input.batch();
            let mut dw = vec![T::zero(); weight.len()];
            let mut db = vec![T::zero(); bias.len()];
            let mut dx = vec![T::zero(); input.data.len()];
            let mut cols = vec![T::zero(); q * p];
            let mut dcols = vec![T::zero(); q * p];
            for bi in 0..b {
                let g = &dy.data[bi * oc * p..(bi + 1) * oc * p];
                im2col(input.item(bi), (c, h, w), k, *stride, *pad, (oh, ow), &mut cols);
                gemm(
                    oc,
                    p,
                    q,
                    g,
                    Layout::row_major(p),
                    &cols,
                    Layout::transposed(p),
                    T::one(),
                    &mut dw,
                    Layout::row_major(q),
                );
                if !db.is_empty() {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[o * p..(o + 1) * p].iter().copied().sum::<T>();
                    }
                }
                gemm(
                    q,
                    oc,
                    p,
                    weight,
                    Layout::transposed(q),
                    g,
                    Layout::row_major(p),
                    T::zero(),
                    &mut dcols,
                    Layout::row_major(p),
                );
                col2im(
                    &dcols,
                    (c, h, w),
                    k,
                    *stride,
                    *pad,
                    (oh, ow),
                    &mut dx[bi * c * h * w..(bi + 1) * c * h * w],
                );
            }
            Ok((
                Tensor::new(input.shape.clone(), dx),
                LayerGrads::Conv { weight: dw, bias: db },
            ))
        }
        (
            LayerSpec::BatchNorm { .. },
            LayerParams::BatchNorm(bn),
            Cache::BatchNorm { xhat, inv_std, .. },
        ) => {
            let (outer, ch, inner) = bn_view(&dy.shape);
            let mut dgamma = vec![T::zero(); ch];
            let mut dbeta = vec![T::zero(); ch];
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        dgamma[c] += dy.data[i] * xhat[i];
                        dbeta[c] += dy.data[i];
                    }
                }
            }
            let count = T::lit((outer * inner) as f64);
            let mut dx = dy.data;
            for o in 0..outer {
                for c in 0..ch {
                    let scale = bn.gamma[c] * inv_std[c] / count;
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        dx[i] = scale * (count * dx[i] - dbeta[c] - xhat[i] * dgamma[c]);
                    }
                }
            }
            Ok((
                Tensor::new(dy.shape, dx),
                LayerGrads::BatchNorm {
                    gamma: dgamma,
                    beta: dbeta,
                },
            ))
        }
        (LayerSpec::Relu, _, Cache::Relu { output }) => {
            let mut dx = dy;
            for (d, &y) in dx.data.iter_mut().zip(&output.data) {
                if y <= T::zero() {
                    *d = T::zero();
                }
            }
            Ok((dx, LayerGrads::Empty))
        }
        (LayerSpec::AvgPool { kernel }, _, Cache::AvgPool { in_shape }) => {
            let (c, h, w) = (in_shape[1], in_shape[2], in_shape[3]);
            let b = in_shape[0];
            let k = *kernel;
            let (oh, ow) = (h / k, w / k);
            let scale = T::one() / T::lit((k * k) as f64);
            let mut dx = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let g = &dy.data[plane * oh * ow..][..oh * ow];
                let dst = &mut dx[plane * h * w..][..h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let v = g[oy * ow + ox] * scale;
                        for ddy in 0..k {
                            for ddx in 0..k {
                                dst[(oy * k + ddy) * w + ox * k + ddx] = v;
                            }
                        }
                    }
                }
            }
            Ok((Tensor::new(in_shape.clone(), dx), LayerGrads::Empty))
        }
        (LayerSpec::Flatten, _, Cache::Flatten { in_shape }) => {
            Ok((Tensor::new(in_shape.clone(), dy.data), LayerGrads::Empty))
        }
        (LayerSpec::Residual { inner }, LayerParams::Residual(inner_params), Cache::Residual(caches)) => {
            let (d_inner, grads) = backward_layers(inner, inner_params, caches, dy.clone(), index)?;
            let mut dx = dy;
            for (v, g) in dx.data.iter_mut().zip(&d_inner.data) {
                *v += *g;
            }
            Ok((dx, LayerGrads::Residual(grads)))
        }
        _ => Err(Error::State(format!(
            "cache for layer {index} does not match its spec"
        ))),
    }
}

fn backward_layers<T: Real>(
    layers: &[LayerSpec],
    params: &[LayerParams<T>],
    caches: &[Cache<T>],
    dy: Tensor<T>,
    index: usize,
) -> Result<(Tensor<T>, Vec<LayerGrads<T>>)> {
    if caches.len() != layers.len() {
        return Err(Error::State("trace caches do not match the layer stack".into()));
    }
    let mut grad = dy;
    let mut grads = vec![LayerGrads::Empty; layers.len()];
    for i in (0..layers.len()).rev() {
        let (g, lg) = layer_backward(&layers[i], &params[i], &caches[i], grad, index)?;
        grad = g;
        grads[i] = lg;
    }
    Ok((grad, grads))
}

/// Backpropagates `logit_grad` (and optionally `probe_grad`, added at the
/// probe output) through a train-mode trace.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    trace: &ForwardTrace<T>,
    logit_grad: &Tensor<T>,
    probe_grad: Option<&Tensor<T>>,
) -> Result<Gradients<T>> {
    if trace.mode != Mode::Train || trace.caches.len() != spec.layers.len() {
        return Err(Error::State(
            "backward needs the trace of a train-mode forward pass".into(),
        ));
    }
    if logit_grad.shape != trace.logits.shape {
        return Err(Error::Shape {
            layer: spec.layers.len() - 1,
            msg: format!("logit gradient {:?} vs logits {:?}", logit_grad.shape, trace.logits.shape),
        });
    }
    if let Some(pg) = probe_grad {
        if pg.shape != trace.probe.shape {
            return Err(Error::Shape {
                layer: spec.probe_index,
                msg: format!("probe gradient {:?} vs probe {:?}", pg.shape, trace.probe.shape),
            });
        }
    }
    let mut grad = logit_grad.clone();
    let mut grads = vec![LayerGrads::Empty; spec.layers.len()];
    for i in (0..spec.layers.len()).rev() {
        if i == spec.probe_index {
            if let Some(pg) = probe_grad {
                for (g, p) in grad.data.iter_mut().zip(&pg.data) {
                    *g += *p;
                }
            }
        }
        let (g, lg) = layer_backward(&spec.layers[i], &params.layers[i], &trace.caches[i], grad, i)?;
        grad = g;
        grads[i] = lg;
    }
    Ok(Gradients { layers: grads })
}
