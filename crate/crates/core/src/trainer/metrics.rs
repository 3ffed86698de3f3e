use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{actual} predictions for {expected} targets")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("targets have zero variance")]
    ZeroVariance,
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), MetricError> {
    if y.len() != y_hat.len() {
        return Err(MetricError::LengthMismatch { expected: y.len(), actual: y_hat.len() });
    }
    if y.len() < 2 {
        return Err(MetricError::TooShort(y.len()));
    }
    Ok(())
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        let m = 7.0 / 3.0;
        assert!(r2(&y, &[m; 3]).unwrap().abs() < 1e-15);
        assert_eq!(r2(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -3.0);
        assert_eq!(mae(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(r2(&[1.0, 1.0], &[0.0, 1.0]), Err(MetricError::ZeroVariance));
        assert_eq!(r2(&[1.0], &[1.0]), Err(MetricError::TooShort(1)));
        assert!(matches!(mae(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
