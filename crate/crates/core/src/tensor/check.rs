//! Finite-difference verification of recorded gradients.

use super::{fl, Elem, Graph, Tensor};
use crate::error::{Error, Result};

/// Outcome of a [`grad_check`] sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Total scalar coordinates compared.
    pub checked: usize,
    /// Largest error observed, as `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare tape gradients against central finite differences.
///
/// `forward` must rebuild the loss from scratch on the supplied graph — it is
/// called once recording (for analytic gradients) and twice per parameter
/// coordinate without recording (for the `(f(x+ε) - f(x-ε)) / 2ε` probe).
/// Parameter data is perturbed in place and restored exactly.
///
/// Use `f64` tensors: at `f32` the subtraction cancels most significant bits
/// and the probe measures rounding noise instead of the derivative.
pub fn grad_check<F, Fwd>(
    forward: Fwd,
    params: &[Tensor<F>],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Elem,
    Fwd: Fn(&mut Graph<F>) -> Result<Tensor<F>>,
{
    for (i, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            return Err(Error::invalid(format!(
                "grad_check: parameter {i} does not require gradients"
            )));
        }
        p.zero_grad();
    }

    let mut graph = Graph::new();
    let loss = forward(&mut graph)?;
    graph.backward(&loss)?;

    let analytic: Vec<Vec<F>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]))
        .collect();

    let eval = |fwd: &Fwd| -> Result<f64> {
        let mut g = Graph::no_grad();
        let out = fwd(&mut g)?;
        out.item()
            .to_f64()
            .ok_or_else(|| Error::invalid("grad_check: loss not representable as f64"))
    };

    let step = fl::<F>(eps);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };

    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let original = p.data()[j];
            p.update(|data, _| data[j] = original + step);
            let plus = eval(&forward)?;
            p.update(|data, _| data[j] = original - step);
            let minus = eval(&forward)?;
            p.update(|data, _| data[j] = original);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j].to_f64().unwrap_or(f64::NAN);
            let denom = a.abs().max(numeric.abs()).max(1.0);
            let rel = (a - numeric).abs() / denom;

            report.checked += 1;
            if !(rel <= report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = Some((pi, j));
            }
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};
    use super::*;

    #[test]
    fn grad_check_passes_on_composite_expression() {
        // loss = sum((sigmoid(a·b)·bᵀ) ⊙ a) exercises matmul, sigmoid,
        // transpose, mul, and sum together.
        let a = Tensor::from_vec(&[2, 3], vec![0.3, -0.5, 0.8, 1.2, 0.05, -0.7])
            .unwrap()
            .with_grad();
        let b = Tensor::from_vec(&[3, 2], vec![0.2, 0.9, -0.4, 0.1, 0.6, -0.3])
            .unwrap()
            .with_grad();
        let params = [a.clone(), b.clone()];
        let report = grad_check(
            |g: &mut Graph<f64>| {
                let prod = g.matmul(&a, &b)?;
                let sig = g.sigmoid(&prod);
                let bt = g.transpose(&b)?;
                let back = g.matmul(&sig, &bt)?;
                let mixed = g.mul(&back, &a)?;
                Ok(g.sum_all(&mixed))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.checked, 12);
        assert!(
            report.passed(1e-7),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn grad_check_detects_a_corrupted_gradient() {
        // A loss whose true gradient is constant 3; leave a stale gradient of
        // the wrong magnitude in place by pre-accumulating before the check.
        // grad_check zeroes grads itself, so instead verify detection by
        // checking a deliberately wrong closure: loss reads x but the scale
        // factor differs between analytic and probe paths via recording state.
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let params = [x.clone()];
        let report = grad_check(
            |g: &mut Graph<f64>| {
                let factor = if g.is_recording() { 3.0 } else { 5.0 };
                let y = g.scale(&x, factor);
                Ok(g.sum_all(&y))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(
            !report.passed(1e-3),
            "inconsistent forward must fail the check, got {}",
            report.max_rel_err
        );
    }
}
