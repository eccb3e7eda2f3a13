//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffOptions {
    pub eps: f64,
    /// Coordinates probed per tensor; tensors at or below this size are probed exhaustively.
    pub max_coords_per_tensor: usize,
    /// Coordinates where both gradients are at most this large in magnitude
    /// are below the difference quotient's roundoff and count as agreeing.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_tensor: 64,
            noise_floor: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// (tensor index, flat coordinate, analytic, numeric) of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` on sampled coordinates.
///
/// The error at a coordinate is `|a − n| / (|a| + |n| + 1e-12)`; the report
/// carries the maximum.
pub fn finite_diff_check<F>(
    f: F,
    params: &[Tensor2<f64>],
    analytic: &[Tensor2<f64>],
    opts: FiniteDiffOptions,
) -> Result<FiniteDiffReport>
where
    F: Fn(&[Tensor2<f64>]) -> Result<f64>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut r = rng(opts.seed);
    let mut work = params.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (ti, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != a.shape() {
            return Err(Error::Shape(format!("gradient {ti} shape {:?} vs {:?}", a.shape(), p.shape())));
        }
        let coords: Vec<usize> = if p.len() <= opts.max_coords_per_tensor {
            (0..p.len()).collect()
        } else {
            let mut v = sample(&mut r, p.len(), opts.max_coords_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for c in coords {
            let orig = p.data()[c];
            work[ti].data_mut()[c] = orig + opts.eps;
            let plus = f(&work)?;
            work[ti].data_mut()[c] = orig - opts.eps;
            let minus = f(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let an = a.data()[c];
            let rel = if an.abs().max(numeric.abs()) <= opts.noise_floor {
                0.0
            } else {
                (an - numeric).abs() / (an.abs() + numeric.abs() + 1e-12)
            };
            report.coords_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, c, an, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let w = vec![Tensor2::filled(1, 1, 3.0)];
        let g = vec![Tensor2::filled(1, 1, 6.0)];
        let rep = finite_diff_check(
            |p| Ok(p[0].get(0, 0).powi(2)),
            &w,
            &g,
            FiniteDiffOptions {
                eps: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
    }

    #[test]
    fn linear_function_is_exact_at_any_step() {
        let w = vec![Tensor2::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let g = vec![Tensor2::from_vec(1, 3, vec![2.0, -3.0, 0.25]).unwrap()];
        for eps in [1e-6, 1e-3, 0.5] {
            let rep = finite_diff_check(
                |p| {
                    let d = p[0].data();
                    Ok(2.0 * d[0] - 3.0 * d[1] + 0.25 * d[2] + 7.0)
                },
                &w,
                &g,
                FiniteDiffOptions { eps, ..Default::default() },
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-8, "eps={eps} {rep:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let w = vec![Tensor2::filled(1, 1, 3.0)];
        let g = vec![Tensor2::filled(1, 1, 5.0)];
        let rep = finite_diff_check(|p| Ok(p[0].get(0, 0).powi(2)), &w, &g, Default::default()).unwrap();
        assert!(rep.max_rel_error > 0.05);
    }

    #[test]
    fn non_positive_step_rejected() {
        let w = vec![Tensor2::filled(1, 1, 3.0)];
        let opts = FiniteDiffOptions { eps: 0.0, ..Default::default() };
        assert!(finite_diff_check(|_| Ok(0.0), &w, &w.clone(), opts).is_err());
    }

    #[test]
    fn flat_direction_within_noise_floor() {
        let w = vec![Tensor2::filled(1, 2, 1.0)];
        let g = vec![Tensor2::from_vec(1, 2, vec![0.0, 0.0]).unwrap()];
        let f = |p: &[Tensor2<f64>]| Ok(1e-11 * p[0].get(0, 0));
        let rep = finite_diff_check(f, &w, &g, Default::default()).unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
        let strict = FiniteDiffOptions { noise_floor: 0.0, ..Default::default() };
        assert!(finite_diff_check(f, &w, &g, strict).unwrap().max_rel_error > 0.5);
    }
}
