//! Least-squares power-law fits and Richardson error estimates.

use crate::error::{CascadeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CascadeError::InvalidParams(format!(
            "line fit needs matching samples (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CascadeError::InvalidParams(
            "line fit on non-finite data".into(),
        ));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CascadeError::InvalidParams(
            "line fit with constant abscissa".into(),
        ));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Fit `y ≈ C x^p` in log-log coordinates; returns the fit of `ln y` on `ln x`.
pub fn power_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(CascadeError::InvalidParams(
            "power fit needs positive data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    line_fit(&lx, &ly)
}

/// Error estimate of the finer of two runs of a scheme of order `order`
/// that differ by `diff` when the step is halved.
pub fn richardson_error(diff: f64, order: u32) -> f64 {
    diff / (2f64.powi(order as i32) - 1.0)
}

/// Observed order from errors at steps `h`, `h/2`, `h/4` (differences of
/// successive runs).
pub fn observed_order(diff_coarse: f64, diff_fine: f64) -> f64 {
    (diff_coarse / diff_fine).log2()
}

/// Abscissa where the piecewise-linear interpolant of `(xs, ys)` first
/// crosses `level`, scanning in the given order.
pub fn first_crossing(xs: &[f64], ys: &[f64], level: f64) -> Option<f64> {
    for i in 1..xs.len().min(ys.len()) {
        let (a, b) = (ys[i - 1] - level, ys[i] - level);
        if a == 0.0 {
            return Some(xs[i - 1]);
        }
        if a * b <= 0.0 && a != b {
            let w = a / (a - b);
            return Some(xs[i - 1] + w * (xs[i] - xs[i - 1]));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let xs = [1e-2, 1e-3, 1e-4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        let f = power_fit(&xs, &ys).unwrap();
        assert!((f.slope - 1.7).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(line_fit(&[1.0], &[1.0]).is_err());
        assert!(line_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(power_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn richardson() {
        assert_eq!(richardson_error(3.0, 2), 1.0);
        assert_eq!(richardson_error(15.0, 4), 1.0);
        assert!((observed_order(4.0, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn crossings() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 2.0, 4.0];
        assert_eq!(first_crossing(&xs, &ys, 1.0), Some(0.5));
        assert_eq!(first_crossing(&xs, &ys, 5.0), None);
    }

    proptest! {
        #[test]
        fn recovers_slope(p in -3.0..3.0f64, c in 0.1..10.0f64) {
            let xs: Vec<f64> = (1..6).map(|i| i as f64 * 0.7).collect();
            let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(p)).collect();
            let f = power_fit(&xs, &ys).unwrap();
            prop_assert!((f.slope - p).abs() < 1e-10);
        }
    }
}
