//! Central-difference gradient verification in 64-bit precision.

use rand::seq::index::sample;

use super::layers::{backward, forward, ForwardTrace, Mode};
use super::params::ParamStore;
use super::spec::NetworkSpec;
use super::Tensor;
use crate::error::{invalid, Result};
use crate::seeds;

/// Loss value plus its gradients w.r.t. the logits and, optionally, the probe.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub logit_grad: Tensor<f64>,
    pub probe_grad: Option<Tensor<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate of the worst error within the tensor.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    /// `(tensor name, coordinate)` of the worst offender.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares backprop gradients with central differences of `loss_fn` on a
/// random subsample of up to 200 coordinates per trainable tensor.
pub fn finite_difference_check(
    spec: &NetworkSpec,
    params: &ParamStore<f64>,
    batch: &Tensor<f64>,
    loss_fn: &dyn Fn(&ForwardTrace<f64>) -> Result<LossEval>,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let trace = forward(spec, params, batch, Mode::Train)?;
    let eval = loss_fn(&trace)?;
    let grads = backward(spec, params, &trace, &eval.logit_grad, eval.probe_grad.as_ref())?;
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();
    let names: Vec<String> = params.trainable_named().into_iter().map(|(n, _)| n).collect();

    let loss_at = |p: &ParamStore<f64>| -> Result<f64> {
        let t = forward(spec, p, batch, Mode::Train)?;
        Ok(loss_fn(&t)?.loss)
    };

    let mut rng = seeds::rng(seed);
    let mut work = params.clone();
    let mut tensors = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        if len == 0 {
            continue;
        }
        let mut coords: Vec<usize> = sample(&mut rng, len, len.min(200)).into_vec();
        coords.sort_unstable();
        let mut check = TensorCheck {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: coords[0],
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &coords {
            let orig = work.trainable_mut()[ti][i];
            work.trainable_mut()[ti][i] = orig + h;
            let up = loss_at(&work)?;
            work.trainable_mut()[ti][i] = orig - h;
            let down = loss_at(&work)?;
            work.trainable_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][i];
            let e = relative_error(a, numeric);
            if e > check.max_rel_error || i == coords[0] {
                check.max_rel_error = check.max_rel_error.max(e);
                if e >= check.max_rel_error {
                    check.worst_index = i;
                    check.worst_analytic = a;
                    check.worst_numeric = numeric;
                }
            }
        }
        tensors.push(check);
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let max_rel_error = worst.map_or(0.0, |w| w.max_rel_error);
    let worst = worst.map(|w| (w.name.clone(), w.worst_index));
    Ok(GradCheckReport {
        passed: max_rel_error <= tol,
        tensors,
        max_rel_error,
        worst,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::LayerSpec;

    fn softmax_ce(trace: &ForwardTrace<f64>, labels: &[usize]) -> LossEval {
        let (b, k) = (trace.logits.shape[0], trace.logits.shape[1]);
        let mut grad = vec![0.0; b * k];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &trace.logits.data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += z.ln() + m - row[y];
            for j in 0..k {
                grad[r * k + j] = ((row[j] - m).exp() / z - if j == y { 1.0 } else { 0.0 }) / b as f64;
            }
        }
        LossEval {
            loss: loss / b as f64,
            logit_grad: Tensor::new(vec![b, k], grad),
            probe_grad: None,
        }
    }

    fn batch(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = seeds::rng(seed);
        Tensor::new(
            vec![b, c, h, w],
            (0..b * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn dense_relu_cross_entropy() {
        let spec = NetworkSpec {
            input: (1, 3, 3),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { out: 4 },
            ],
            probe_index: 2,
            num_classes: 4,
        };
        let params = ParamStore::<f64>::init(&spec, 2).unwrap();
        let x = batch(5, 1, 3, 3, 3);
        let labels = [0, 1, 2, 3, 1];
        let r = finite_difference_check(&spec, &params, &x, &|t| Ok(softmax_ce(t, &labels)), 1e-5, 1e-4, 1)
            .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn injected_probe_gradient() {
        let spec = NetworkSpec::mini_resnet((1, 4, 4), 3, 2, 5, 0.9, 1e-3);
        let params = ParamStore::<f64>::init(&spec, 4).unwrap();
        let x = batch(4, 1, 4, 4, 5);
        let labels = [0, 1, 2, 0];
        // ce + 0.3 * sum(probe^2) / 2
        let r = finite_difference_check(
            &spec,
            &params,
            &x,
            &|t| {
                let mut e = softmax_ce(t, &labels);
                e.loss += 0.15 * t.probe.data.iter().map(|v| v * v).sum::<f64>();
                e.probe_grad = Some(Tensor::new(
                    t.probe.shape.clone(),
                    t.probe.data.iter().map(|v| 0.3 * v).collect(),
                ));
                Ok(e)
            },
            1e-5,
            1e-4,
            2,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn reports_worst_offender_for_wrong_gradient() {
        let spec = NetworkSpec {
            input: (1, 1, 2),
            layers: vec![LayerSpec::Flatten, LayerSpec::Relu, LayerSpec::Dense { out: 2 }],
            probe_index: 1,
            num_classes: 2,
        };
        let params = ParamStore::<f64>::init(&spec, 2).unwrap();
        let x = batch(2, 1, 1, 2, 3);
        let r = finite_difference_check(
            &spec,
            &params,
            &x,
            &|t| {
                let mut e = softmax_ce(t, &[0, 1]);
                e.logit_grad.data.iter_mut().for_each(|g| *g *= 2.0);
                Ok(e)
            },
            1e-5,
            1e-4,
            1,
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.worst.is_some());
    }
}
