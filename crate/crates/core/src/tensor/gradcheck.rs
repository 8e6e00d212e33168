//! Finite-difference gradient checking.
//!
//! The checker evaluates a loss closure twice per parameter entry (central
//! differences) and compares the quotient against the analytic gradient.
//! It is independent of the reverse pass: it only re-runs forward
//! evaluations at perturbed parameter values.

use rayon::prelude::*;

use crate::error::Result;
use crate::tensor::Tensor;

/// Default finite-difference step (assumes f64 evaluation).
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check over a set of named parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name, flat entry index, analytic value, numeric value of
    /// the worst-matching entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so that near-zero gradient pairs compare
/// absolutely rather than blowing up the quotient.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-2);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of `loss` with respect to every entry of
/// every parameter. `loss` must be a pure function of the parameter values.
pub fn finite_difference<F>(loss: &F, params: &[(String, Tensor)], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[(String, Tensor)]) -> Result<f64> + Sync,
{
    let jobs: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, t))| (0..t.numel()).map(move |ei| (pi, ei)))
        .collect();

    let partials: Vec<((usize, usize), f64)> = jobs
        .par_iter()
        .map(|&(pi, ei)| {
            let mut work = params.to_vec();
            work[pi].1.data_mut()[ei] += step;
            let plus = loss(&work)?;
            work[pi].1.data_mut()[ei] -= 2.0 * step;
            let minus = loss(&work)?;
            Ok(((pi, ei), (plus - minus) / (2.0 * step)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out: Vec<Tensor> = params
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    for ((pi, ei), g) in partials {
        out[pi].data_mut()[ei] = g;
    }
    Ok(out)
}

/// Compare analytic gradients against central finite differences.
pub fn compare<F>(
    loss: &F,
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[(String, Tensor)]) -> Result<f64> + Sync,
{
    assert_eq!(params.len(), analytic.len());
    let numeric = finite_difference(loss, params, step)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for ((name, _), (a, n)) in params.iter().zip(analytic.iter().zip(numeric.iter())) {
        for (ei, (&av, &nv)) in a.data().iter().zip(n.data().iter()).enumerate() {
            report.entries_checked += 1;
            let err = relative_error(av, nv);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), ei, av, nv));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn quadratic_gradient_matches() {
        // loss = sum(w * w): grad = 2w.
        let params = vec![("w".to_string(), Tensor::vector(vec![0.5, -1.5, 2.0]))];
        let loss = |ps: &[(String, Tensor)]| -> Result<f64> {
            Ok(ps[0].1.data().iter().map(|v| v * v).sum())
        };
        let tape = Tape::new();
        let w = tape.param(&params[0].1);
        let sq = tape.mul(w, w).unwrap();
        let l = tape.sum_all(sq).unwrap();
        let grads = tape.backward(l).unwrap();
        let report = compare(&loss, &params, &[grads.wrt(w)], DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-6), "max err {}", report.max_rel_err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let params = vec![("w".to_string(), Tensor::vector(vec![1.0]))];
        let loss = |ps: &[(String, Tensor)]| -> Result<f64> { Ok(ps[0].1.data()[0].powi(2)) };
        let wrong = vec![Tensor::vector(vec![3.0])]; // truth is 2.0
        let report = compare(&loss, &params, &wrong, DEFAULT_STEP).unwrap();
        assert!(!report.passes(1e-4));
    }
}
