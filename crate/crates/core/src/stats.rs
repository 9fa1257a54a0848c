//! Small statistics helpers: least-squares fits, moments, binomial intervals.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Least-squares line `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(format!("linear fit needs at least 2 paired samples, got {}", x.len())));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("linear fit with constant abscissa".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least-squares slope of `y = slope * x`.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> Result<f64> {
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    if x.len() != y.len() || x.is_empty() || sxx == 0.0 {
        return Err(Error::Fit("degenerate regression through the origin".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx)
}

/// Quadratic `c[0] + c[1] x + c[2] x^2` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic(pub [f64; 3]);

impl Quadratic {
    pub fn eval(&self, x: f64) -> f64 {
        let [a, b, c] = self.0;
        a + x * (b + x * c)
    }
}

/// Least-squares quadratic through `(x, y)` samples.
pub fn fit_quadratic(samples: &[(f64, f64)]) -> Result<Quadratic> {
    if samples.len() < 3 {
        return Err(Error::Fit(format!("quadratic fit needs at least 3 samples, got {}", samples.len())));
    }
    // centre and scale the abscissa so the normal equations stay well conditioned
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let x0 = mean(&xs);
    let scale = xs.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Fit("quadratic fit with constant abscissa".into()));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for &(x, y) in samples {
        let u = (x - x0) / scale;
        let row = [1.0, u, u * u];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let d = solve3(ata, aty).ok_or_else(|| Error::Fit("singular quadratic fit (fewer than 3 distinct abscissae)".into()))?;
    // expand d0 + d1 u + d2 u^2 with u = (x - x0) / s
    let (s, s2) = (scale, scale * scale);
    let c2 = d[2] / s2;
    let c1 = d[1] / s - 2.0 * d[2] * x0 / s2;
    let c0 = d[0] - d[1] * x0 / s + d[2] * x0 * x0 / s2;
    Ok(Quadratic([c0, c1, c2]))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..3 {
            let f = a[r][col] / a[col][col];
            for k in col..3 {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = ((r + 1)..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_quadratic_recovered() {
        let q = fit_quadratic(&[(0.45, 0.2), (0.47, 0.15), (0.49, 0.05)]).unwrap();
        for (x, y) in [(0.45, 0.2), (0.47, 0.15), (0.49, 0.05)] {
            assert!((q.eval(x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_samples_give_flat_fit() {
        let q = fit_quadratic(&[(0.1, 3.0), (0.2, 3.0), (0.3, 3.0), (0.4, 3.0)]).unwrap();
        assert!(q.0[1].abs() < 1e-12 && q.0[2].abs() < 1e-12);
        assert!((q.0[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(fit_quadratic(&[(0.1, 1.0), (0.2, 2.0)]).is_err());
        assert!(fit_quadratic(&[(0.1, 1.0), (0.1, 2.0), (0.2, 3.0)]).is_err());
    }

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(30, 1000, 1.96);
        assert!(lo < 0.03 && 0.03 < hi);
        assert_eq!(wilson_interval(0, 100, 1.96).0, 0.0);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn linear_fit_exact(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (s, i) = linear_fit(&x, &y).unwrap();
            prop_assert!((s - a).abs() < 1e-9 && (i - b).abs() < 1e-9);
        }
    }
}
