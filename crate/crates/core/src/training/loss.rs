use crate::error::{invalid, Error, Result};
use crate::neuralcore::{ForwardTrace, Real, Tensor};

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / batch`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let [b, k] = logits.shape[..] else {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("logits must be [batch, classes], got {:?}", logits.shape),
        });
    };
    if labels.len() != b || b == 0 {
        return Err(invalid(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut grad = vec![T::zero(); b * k];
    let mut total = 0.0;
    let mut probs = vec![0.0f64; k];
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(invalid(format!("label {y} outside {k} classes")));
        }
        let row = &logits.data[r * k..(r + 1) * k];
        let mut m = f64::NEG_INFINITY;
        for v in row {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite logit in row {r}")));
            }
            m = m.max(v);
        }
        let mut rest = 0.0;
        for (j, v) in row.iter().enumerate() {
            probs[j] = (v.as_f64() - m).exp();
            if j != y {
                rest += (v.as_f64() - row[y].as_f64()).exp();
            }
        }
        let z: f64 = probs.iter().sum();
        // -log softmax_y = log(1 + sum_{j != y} exp(l_j - l_y))
        total += rest.ln_1p();
        for j in 0..k {
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad[r * k + j] = T::lit((probs[j] / z - onehot) / b as f64);
        }
    }
    Ok((total / b as f64, Tensor::new(vec![b, k], grad)))
}

/// Batch mean of `||g_i - g'_i||_2` and the gradients w.r.t. `g` and `g'`.
/// The subgradient at zero distance is zero.
pub fn invariance_loss<T: Real>(probe: &Tensor<T>, pair_probe: &Tensor<T>) -> Result<(f64, Tensor<T>, Tensor<T>)> {
    if probe.shape != pair_probe.shape || probe.shape.len() < 2 {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("pair activations {:?} vs {:?}", probe.shape, pair_probe.shape),
        });
    }
    let b = probe.batch();
    if b == 0 {
        return Err(invalid("empty batch"));
    }
    let d = probe.item_len();
    let mut ga = vec![T::zero(); b * d];
    let mut gb = vec![T::zero(); b * d];
    let mut total = 0.0;
    for i in 0..b {
        let (x, y) = (probe.item(i), pair_probe.item(i));
        let dist = x
            .iter()
            .zip(y)
            .map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt();
        total += dist;
        if dist > 0.0 {
            let s = 1.0 / (dist * b as f64);
            for j in 0..d {
                let g = (x[j].as_f64() - y[j].as_f64()) * s;
                ga[i * d + j] = T::lit(g);
                gb[i * d + j] = T::lit(-g);
            }
        }
    }
    Ok((
        total / b as f64,
        Tensor::new(probe.shape.clone(), ga),
        Tensor::new(probe.shape.clone(), gb),
    ))
}

/// `ce + lambda * inv`.
pub fn total_loss(ce: f64, inv: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda {lambda} must be >= 0")));
    }
    if lambda == 0.0 {
        return Ok(ce);
    }
    Ok(ce + lambda * inv)
}

/// Training objective evaluated on one forward pass.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub total: f64,
    pub ce: f64,
    pub inv: f64,
    pub logit_grad: Tensor<T>,
    pub probe_grad: Option<Tensor<T>>,
}

/// Cross-entropy plus `lambda` times the invariance loss.
///
/// With `paired`, the batch is `[items; partners]`: cross-entropy covers the
/// first half only and the invariance term compares the two halves.
pub fn objective<T: Real>(trace: &ForwardTrace<T>, labels: &[usize], lambda: f64, paired: bool) -> Result<Objective<T>> {
    if !paired {
        let (ce, g) = cross_entropy(&trace.logits, labels)?;
        return Ok(Objective {
            total: total_loss(ce, 0.0, lambda)?,
            ce,
            inv: 0.0,
            logit_grad: g,
            probe_grad: None,
        });
    }
    let b = labels.len();
    if trace.logits.batch() != 2 * b {
        return Err(invalid(format!(
            "paired batch of {} items for {b} labels",
            trace.logits.batch()
        )));
    }
    let (ce, g_ce) = cross_entropy(&trace.logits.slice_batch(0, b), labels)?;
    let (inv, ga, gb) = invariance_loss(&trace.probe.slice_batch(0, b), &trace.probe.slice_batch(b, 2 * b))?;
    let mut pg = Tensor::concat_batch(&ga, &gb);
    let lam = T::lit(lambda);
    pg.data.iter_mut().for_each(|v| *v *= lam);
    Ok(Objective {
        total: total_loss(ce, inv, lambda)?,
        ce,
        inv,
        logit_grad: Tensor::concat_batch(&g_ce, &Tensor::zeros(g_ce.shape.clone())),
        probe_grad: Some(pg),
    })
}
