//! Ornstein-Uhlenbeck process `dZ = -b (Z - m) dt + σ dW` and its time integral.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    /// Mean level.
    pub m: f64,
    /// Reversion rate.
    pub b: f64,
    /// Diffusion coefficient.
    pub sigma: f64,
}

/// Gaussian moments of `(Z_h, ∫_0^h Z dt)` given `Z_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStep {
    pub mean_z: f64,
    pub mean_int: f64,
    pub var_z: f64,
    pub var_int: f64,
    pub cov: f64,
}

impl OuParams {
    pub fn new(m: f64, b: f64, sigma: f64) -> Result<Self> {
        let p = OuParams { m, b, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Parameters matching a stationary mean, variance and autocorrelation
    /// rate: `Cov(Z_s, Z_t) = var · exp(-rate |s - t|)`.
    pub fn from_moments(mean: f64, var: f64, rate: f64) -> Result<Self> {
        Self::new(mean, rate, (2.0 * rate * var.max(0.0)).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) || !(self.sigma >= 0.0) || !self.m.is_finite() {
            return Err(Error::Spec(format!("OU parameters need b > 0 and σ ≥ 0, got {self:?}")));
        }
        Ok(())
    }

    /// `σ² / (2b)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.b)
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.m + self.stationary_variance().sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    /// Exact transition `Z_0 = z → Z_h`.
    pub fn transition<R: Rng + ?Sized>(&self, z: f64, h: f64, rng: &mut R) -> f64 {
        let a = (-self.b * h).exp();
        let var = self.stationary_variance() * (1.0 - a * a);
        self.m + (z - self.m) * a + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    pub fn joint_step(&self, z: f64, h: f64) -> JointStep {
        let (b, s2) = (self.b, self.sigma * self.sigma);
        let a = (-b * h).exp();
        // 1 - a and its relatives lose precision for small b h
        let one_a = -(-b * h).exp_m1();
        let one_a2 = -(-2.0 * b * h).exp_m1();
        JointStep {
            mean_z: self.m + (z - self.m) * a,
            mean_int: self.m * h + (z - self.m) * one_a / b,
            var_z: s2 / (2.0 * b) * one_a2,
            var_int: (s2 / (b * b) * (h - 2.0 * one_a / b + one_a2 / (2.0 * b))).max(0.0),
            cov: s2 / (2.0 * b * b) * one_a * one_a,
        }
    }

    /// Exact joint draw of `(Z_h, ∫_0^h Z dt)` given `Z_0 = z`.
    pub fn step_with_integral<R: Rng + ?Sized>(&self, z: f64, h: f64, rng: &mut R) -> (f64, f64) {
        let j = self.joint_step(z, h);
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        let sz = j.var_z.sqrt();
        if sz == 0.0 {
            return (j.mean_z, j.mean_int + j.var_int.sqrt() * g2);
        }
        let beta = j.cov / sz;
        let rest = (j.var_int - beta * beta).max(0.0).sqrt();
        (j.mean_z + sz * g1, j.mean_int + beta * g1 + rest * g2)
    }

    /// Mean and variance of `∫_0^t Z dt` from a stationary start.
    pub fn integrated_moments(&self, t: f64) -> (f64, f64) {
        let b = self.b;
        let var = self.sigma * self.sigma / (b * b) * (t + (-b * t).exp_m1() / b);
        (self.m * t, var.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, substream};
    use crate::stats::{mean, variance};

    fn integrate(p: &OuParams, t: f64, steps: usize, paths: u64, seed: u64) -> Vec<f64> {
        (0..paths)
            .map(|i| {
                let mut rng = substream(seed, domain::OU, i);
                let mut z = p.sample_stationary(&mut rng);
                let mut acc = 0.0;
                for _ in 0..steps {
                    let (z1, int) = p.step_with_integral(z, t / steps as f64, &mut rng);
                    z = z1;
                    acc += int;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn stationary_transition_keeps_moments() {
        let p = OuParams::new(1.5, 2.0, 0.8).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|i| {
                let mut rng = substream(1, domain::OU, i);
                let z = p.sample_stationary(&mut rng);
                p.transition(z, 0.37, &mut rng)
            })
            .collect();
        assert!((mean(&xs) - 1.5).abs() < 0.01);
        assert!((variance(&xs) / p.stationary_variance() - 1.0).abs() < 0.03);
    }

    #[test]
    fn integrated_moments_match_long_horizon_asymptote() {
        // bt = 50: the exact variance is within 2% of (σ²/b²) t
        let p = OuParams::new(0.7, 2.5, 1.1).unwrap();
        let t = 20.0;
        let xs = integrate(&p, t, 40, 20_000, 2);
        let asym = p.sigma * p.sigma / (p.b * p.b) * t;
        assert!((mean(&xs) / (p.m * t) - 1.0).abs() < 0.05);
        assert!((variance(&xs) / asym - 1.0).abs() < 0.05, "{} vs {asym}", variance(&xs));
    }

    #[test]
    fn integrated_moments_exact_at_short_horizon() {
        let p = OuParams::new(0.2, 1.0, 0.9).unwrap();
        let t = 10.0;
        let xs = integrate(&p, t, 25, 4000, 3);
        let (m, v) = p.integrated_moments(t);
        assert!((mean(&xs) - m).abs() < 0.05 * m.abs() + 3.0 * (v / 4000.0).sqrt());
        assert!((variance(&xs) / v - 1.0).abs() < 0.05);
    }

    #[test]
    fn step_size_does_not_matter() {
        // exact joint stepping: one step and many steps agree in distribution
        let p = OuParams::new(0.0, 1.3, 1.0).unwrap();
        let one = integrate(&p, 3.0, 1, 6000, 4);
        let many = integrate(&p, 3.0, 30, 6000, 5);
        let v = p.integrated_moments(3.0).1;
        assert!((variance(&one) / v - 1.0).abs() < 0.06);
        assert!((variance(&many) / v - 1.0).abs() < 0.06);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let p = OuParams::new(2.0, 1.0, 0.0).unwrap();
        let mut rng = substream(0, domain::OU, 0);
        let (z, int) = p.step_with_integral(3.0, 1.0, &mut rng);
        assert!((z - (2.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((int - (2.0 + (1.0 - (-1.0f64).exp()))).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        assert!(OuParams::new(0.0, 0.0, 1.0).is_err());
        assert!(OuParams::new(0.0, 1.0, -1.0).is_err());
    }
}
