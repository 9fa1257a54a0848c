//! Distribution of the peeling time `n_PD(I_eff)` covered by one decoding
//! wave within a limited iteration budget.

use serde::{Deserialize, Serialize};

use crate::stats::norm_cdf;

/// Number of histogram bins for empirical distributions.
pub const HISTOGRAM_BINS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NpdDistribution {
    /// Piecewise-constant density over `edges` (one more than `masses`).
    EmpiricalHistogram {
        edges: Vec<f64>,
        masses: Vec<f64>,
        mean: f64,
        variance: f64,
    },
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// Degenerate distribution, e.g. a zero-variance process.
    PointMass(f64),
}

impl NpdDistribution {
    /// Histogram of `samples` with [`HISTOGRAM_BINS`] equal bins over the
    /// sample range. Collapses to a point mass when all samples coincide.
    pub fn from_samples(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "no samples");
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            return NpdDistribution::PointMass(mean);
        }
        let variance = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &x in samples {
            let k = (((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[k] += 1;
        }
        let edges = (0..=HISTOGRAM_BINS).map(|k| lo + k as f64 * width).collect();
        let masses = counts.iter().map(|&c| c as f64 / n).collect();
        NpdDistribution::EmpiricalHistogram {
            edges,
            masses,
            mean,
            variance,
        }
    }

    /// Gaussian, or a point mass when the variance vanishes.
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        if variance > 0.0 {
            NpdDistribution::Gaussian { mean, variance }
        } else {
            NpdDistribution::PointMass(mean)
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NpdDistribution::EmpiricalHistogram { mean, .. } | NpdDistribution::Gaussian { mean, .. } => *mean,
            NpdDistribution::PointMass(x) => *x,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            NpdDistribution::EmpiricalHistogram { variance, .. } | NpdDistribution::Gaussian { variance, .. } => *variance,
            NpdDistribution::PointMass(_) => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            NpdDistribution::EmpiricalHistogram { edges, masses, .. } => {
                let lo = edges[0];
                let hi = edges[edges.len() - 1];
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let width = (hi - lo) / masses.len() as f64;
                let pos = (x - lo) / width;
                let k = (pos as usize).min(masses.len() - 1);
                let below: f64 = masses[..k].iter().sum();
                (below + masses[k] * (pos - k as f64)).min(1.0)
            }
            NpdDistribution::Gaussian { mean, variance } => norm_cdf((x - mean) / variance.sqrt()),
            NpdDistribution::PointMass(x0) => {
                if x >= *x0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// A copy of `self` with the CDF tabulated for O(1) evaluation.
    pub(crate) fn prepared(&self) -> PreparedCdf<'_> {
        let cumulative = match self {
            NpdDistribution::EmpiricalHistogram { masses, .. } => {
                let mut acc = 0.0;
                let mut c = Vec::with_capacity(masses.len() + 1);
                c.push(0.0);
                for m in masses {
                    acc += m;
                    c.push(acc);
                }
                c
            }
            _ => Vec::new(),
        };
        PreparedCdf { dist: self, cumulative }
    }
}

pub(crate) struct PreparedCdf<'a> {
    dist: &'a NpdDistribution,
    cumulative: Vec<f64>,
}

impl PreparedCdf<'_> {
    pub fn cdf(&self, x: f64) -> f64 {
        match self.dist {
            NpdDistribution::EmpiricalHistogram { edges, masses, .. } => {
                let lo = edges[0];
                let hi = edges[edges.len() - 1];
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let pos = (x - lo) / (hi - lo) * masses.len() as f64;
                let k = (pos as usize).min(masses.len() - 1);
                (self.cumulative[k] + masses[k] * (pos - k as f64)).min(1.0)
            }
            d => d.cdf(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_masses_sum_to_one() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let d = NpdDistribution::from_samples(&xs);
        let NpdDistribution::EmpiricalHistogram { masses, edges, .. } = &d else {
            panic!()
        };
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(edges.len(), HISTOGRAM_BINS + 1);
        assert_eq!(d.cdf(-1.0), 0.0);
        assert_eq!(d.cdf(100.0), 1.0);
        let p = d.prepared();
        for x in [0.05, 1.3, 5.0, 9.99] {
            assert!((p.cdf(x) - d.cdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_samples_make_point_mass() {
        assert_eq!(NpdDistribution::from_samples(&[2.5; 10]), NpdDistribution::PointMass(2.5));
        assert_eq!(NpdDistribution::gaussian(1.0, 0.0), NpdDistribution::PointMass(1.0));
    }

    #[test]
    fn gaussian_cdf() {
        let d = NpdDistribution::gaussian(3.0, 4.0);
        assert!((d.cdf(3.0) - 0.5).abs() < 1e-15);
        assert!((d.cdf(5.0) - norm_cdf(1.0)).abs() < 1e-15);
    }
}
