use crate::error::{Error, Result};

/// Mean absolute error in millinewtons for predictions and targets in newtons.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("mae of an empty set".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(1000.0 * sum / pred.len() as f64)
}

/// `(recon - raw) / recon`; positive when the raw representation wins.
pub fn relative_difference(mae_raw: f64, mae_recon: f64) -> Result<f64> {
    if mae_recon == 0.0 || !mae_recon.is_finite() || !mae_raw.is_finite() {
        return Err(Error::InvalidInput(format!(
            "relative difference undefined for raw {mae_raw}, recon {mae_recon}"
        )));
    }
    Ok((mae_recon - mae_raw) / mae_recon)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of already sorted values, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!((mae(&[0.010], &[0.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!((mae(&[0.0, 0.002], &[0.001, 0.001]).unwrap() - 1.0).abs() < 1e-12);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn mae_invariances() {
        let p = [0.1, 0.5, 0.33, 0.9];
        let t = [0.12, 0.4, 0.3, 0.95];
        let base = mae(&p, &t).unwrap();
        let shift = |v: &[f64]| v.iter().map(|x| x + 0.37).collect::<Vec<_>>();
        assert!((mae(&shift(&p), &shift(&t)).unwrap() - base).abs() < 1e-12);
        let (rp, rt): (Vec<f64>, Vec<f64>) = p.iter().zip(&t).rev().map(|(a, b)| (*a, *b)).unzip();
        assert!((mae(&rp, &rt).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn relative_difference_examples() {
        assert!((relative_difference(4.40, 6.61).unwrap() - 0.334).abs() < 5e-4);
        assert!((relative_difference(8.54, 7.22).unwrap() + 0.183).abs() < 5e-4);
        assert_eq!(relative_difference(3.0, 3.0).unwrap(), 0.0);
        assert!(relative_difference(1.0, 0.0).is_err());
        let a = relative_difference(2.0, 5.0).unwrap();
        assert!((relative_difference(2.0 * 7.5, 5.0 * 7.5).unwrap() - a).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 2f64.sqrt()));
    }
}
