/// Worst coordinate found by [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|a - n|` over all coordinates.
    pub max_abs_error: f64,
    /// Coordinates whose relative error exceeds `tolerance`.
    pub failures: usize,
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare `analytic` against central differences of `f` around `point`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64], step: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    finite_diff_check_tol(f, point, analytic, step, 1e-4)
}

/// [`finite_diff_check`] with an explicit tolerance for the failure count.
pub fn finite_diff_check_tol<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length differs from point");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: 0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let err = abs / a.abs().max(numeric.abs()).max(1e-8);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.failures += usize::from(err > tolerance);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three() {
        let r = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn squared_norm_dim_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(|x| x.iter().map(|v| v * v).sum(), &x, &grad, 1e-5);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let r = finite_diff_check(|_| 4.2, &[1.0, -1.0], &[0.0, 0.0], 1e-5);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let r = finite_diff_check(|x| x[0] * x[0], &[3.0], &[5.0], 1e-5);
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst_index, Some(0));
        assert_eq!(r.failures, 1);
        assert!((r.max_abs_error - 1.0).abs() < 1e-6);
    }
}
