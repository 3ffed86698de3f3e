/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Central differences of a scalar function, one coordinate at a time.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = f(&x);
            x[i] = orig - eps;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error between `analytic` and central differences of `f` at `point`.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, point: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    numeric_gradient(f, point, eps).iter().zip(analytic).map(|(&n, &a)| relative_error(a, n)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let err = grad_check(f, &[1.5, -2.0], &[3.0, 3.0], DEFAULT_EPS);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| x[0].sin();
        assert!(grad_check(f, &[0.3], &[0.3_f64.cos() * 1.01], DEFAULT_EPS) > 1e-3);
    }

    #[test]
    fn tiny_gradients_use_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }
}
