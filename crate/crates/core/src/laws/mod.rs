//! FER predictors for full BP decoding: the unlimited-iteration laws, the
//! constant-propagation law and the randomized-propagation laws.
//!
//! Time is peeling time `τ` (erased VNs per `N` recovered). A wave dies when
//! the degree-one CN count `r1` of its peeling process first hits zero; that
//! first-hit time is exponential with mean `μ̆₀`. With a limited budget a
//! wave covers at most `n_PD(I_eff)` peeling time.

mod npd;
pub mod ou;

pub use npd::{NpdDistribution, HISTOGRAM_BINS};
pub use ou::{JointStep, OuParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PointParams;
use crate::rng::{domain, substream};
use crate::stats::norm_cdf;

/// Cells of the convolution grid for the two-wave failure probability.
pub const CONVOLUTION_CELLS: usize = 16_384;

/// Mean first-hit time `μ₀ = (√(2π)/θ) ∫_0^u Φ(z) e^{z²/2} dz` with
/// `u = γ √(N/ν) (ε* − ε)`.
pub fn mu0(gamma: f64, nu: f64, theta: f64, n: usize, epsilon: f64, epsilon_star: f64) -> f64 {
    let u = gamma * (n as f64 / nu).sqrt() * (epsilon_star - epsilon);
    if u <= 0.0 {
        return 0.0;
    }
    if u > 37.0 {
        // e^{u²/2} leaves the f64 range; the wave never dies at this length
        return f64::INFINITY;
    }
    let f = |z: f64| norm_cdf(z) * (0.5 * z * z).exp();
    let panels = ((u * 4000.0).ceil() as usize).max(2000) & !1;
    let h = u / panels as f64;
    let mut acc = f(0.0) + f(u);
    for k in 1..panels {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    (2.0 * std::f64::consts::PI).sqrt() / theta * acc * h / 3.0
}

/// `P_f,t = 1 − (1 + Δ/μ) e^{−Δ/μ}`: both waves of a terminated chain die
/// before covering the steady-state duration `Δ` between them.
pub fn two_wave_failure(delta: f64, mu: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    if mu <= 0.0 {
        return 1.0;
    }
    let x = delta / mu;
    (1.0 - (1.0 + x) * (-x).exp()).clamp(0.0, 1.0)
}

/// `P_f,u = 1 − e^{−s/μ}`: a single wave dies within peeling time `s`.
pub fn one_wave_failure(span: f64, mu: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    if mu <= 0.0 {
        return 1.0;
    }
    (-(-span / mu).exp_m1()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnlimitedVariant {
    Terminated,
    /// Unterminated chain of `l_prime` positions.
    Unterminated {
        l_prime: usize,
    },
    /// Sliding window of `w` positions over a terminated chain of `l`.
    SlidingWindow {
        l: usize,
        w: usize,
    },
}

fn unterminated_failure(p: &PointParams, l_prime: usize, mu: f64) -> f64 {
    let span = p.epsilon * l_prime as f64 - p.tau_start_breve;
    if span < 0.0 {
        log::warn!(
            "ε L' = {} is shorter than τ̆_start = {}; clamping to FER 0",
            p.epsilon * l_prime as f64,
            p.tau_start_breve
        );
    }
    one_wave_failure(span, mu)
}

/// Steady-state duration of a terminated chain of `w` positions, derived
/// from the tabulated `l`-position duration: each position holds `ε` of
/// peeling time.
fn window_duration(p: &PointParams, l: usize, w: usize) -> f64 {
    (p.steady_duration() - p.epsilon * (l as f64 - w as f64)).max(0.0)
}

/// Unlimited-iteration FER.
pub fn fer_unlimited(p: &PointParams, n: usize, variant: UnlimitedVariant) -> f64 {
    let mu = p.mu0(n);
    match variant {
        UnlimitedVariant::Terminated => two_wave_failure(p.steady_duration(), mu),
        UnlimitedVariant::Unterminated { l_prime } => unterminated_failure(p, l_prime, mu),
        UnlimitedVariant::SlidingWindow { l, w } => {
            let pu = unterminated_failure(p, l.saturating_sub(w), mu);
            let pt = two_wave_failure(window_duration(p, l, w), mu);
            1.0 - (1.0 - pu) * (1.0 - pt)
        }
    }
}

/// Quantities derived from an iteration budget `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitedBudget {
    pub i: usize,
    /// `I − I_start − I_end`; may be negative.
    pub i_eff: f64,
    /// `I_eff (ε* − ε)`.
    pub t_eff: f64,
    /// `I_start (ε* − ε)`.
    pub t_start: f64,
    /// Positions covered by the steady state, `(τ̃_end − τ̃_start) V_PD`.
    pub l_eff: f64,
    /// Distance the waves must cover beyond what constant-speed BP reaches.
    pub d_min: f64,
    /// `D_min / V_PD`.
    pub tau_min: f64,
}

impl LimitedBudget {
    pub fn new(p: &PointParams, i: usize) -> Self {
        let i_eff = i as f64 - p.i_start - p.i_end;
        let l_eff = p.steady_duration() * p.v_pd;
        let d_min = (l_eff - p.v_bp * i_eff).max(0.0);
        LimitedBudget {
            i,
            i_eff,
            t_eff: i_eff * p.gap(),
            t_start: p.i_start * p.gap(),
            l_eff,
            d_min,
            tau_min: d_min / p.v_pd,
        }
    }
}

/// Constant-propagation law: each wave advances `V_BP` positions per
/// iteration, so both must survive at least `τ_min` for the budget to
/// suffice.
pub fn fer_const_propagation(p: &PointParams, n: usize, i: usize) -> f64 {
    let b = LimitedBudget::new(p, i);
    if b.i_eff <= 0.0 || b.d_min >= b.l_eff / 2.0 {
        return 1.0;
    }
    let delta = p.steady_duration();
    let mu = p.mu0(n);
    if mu == f64::INFINITY {
        return 0.0;
    }
    if mu <= 0.0 {
        return 1.0;
    }
    let success = (1.0 + (delta - 2.0 * b.tau_min) / mu) * (-delta / mu).exp();
    (1.0 - success).clamp(0.0, 1.0)
}

/// Monte-Carlo samples of `n_PD(I_eff)`: `n(1) = r1(0)` and
/// `n(K) = n(K−1) + max(0, r1(n(K−1)))` along one stationary OU path of
/// `r1` with the peeling moments. A non-positive `r1` stalls the wave for
/// good. Sample `i` uses OU substream `i`.
pub fn npd_iterative_samples(p: &PointParams, n: usize, i_eff: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if i_eff == 0 {
        return Err(Error::Spec("I_eff must be at least 1".into()));
    }
    let ou = OuParams::from_moments(p.gamma_breve * p.gap(), p.nu_breve / n as f64, p.theta_breve)?;
    Ok((0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, domain::OU, s);
            let mut z = ou.sample_stationary(&mut rng);
            let mut t = 0.0;
            let mut pos = z.max(0.0);
            for _ in 1..i_eff {
                if z <= 0.0 {
                    break;
                }
                z = ou.transition(z, pos - t, &mut rng);
                t = pos;
                pos += z.max(0.0);
            }
            pos
        })
        .collect())
}

/// Histogram of [`npd_iterative_samples`].
pub fn simulate_npd_iterative(p: &PointParams, n: usize, i_eff: usize, samples: usize, seed: u64) -> Result<NpdDistribution> {
    Ok(NpdDistribution::from_samples(&npd_iterative_samples(p, n, i_eff, samples, seed)?))
}

/// Samples and seed used when `c_f` must be re-simulated for a lifting
/// factor other than the tabulated one.
pub const CF_RESIMULATION: (usize, u64) = (20_000, 0);

/// `c_f` at lifting factor `n`: the tabulated value if it was simulated at
/// `n`, otherwise a fresh simulation at the same reference horizon.
pub fn cf_at(p: &PointParams, n: usize) -> Result<f64> {
    if n == p.c_f_n {
        return Ok(p.c_f);
    }
    log::info!("re-simulating c_f at N = {n} (table holds N = {})", p.c_f_n);
    crate::params::estimate_cf(p, n, cf_reference_horizon(p), CF_RESIMULATION.0, CF_RESIMULATION.1)
}

/// `I'_eff = 350 − I_start − I_end`, at least 1.
pub fn cf_reference_horizon(p: &PointParams) -> usize {
    (350.0 - p.i_start - p.i_end).round().max(1.0) as usize
}

/// Gaussian approximation of `n_PD(I_eff)` from the BP moments. The mean is
/// `γ_BP (ε* − ε) I_eff`, or `c_f I_eff` when `shifted`.
pub fn npd_gaussian(p: &PointParams, n: usize, i_eff: f64, shifted: bool) -> Result<NpdDistribution> {
    if i_eff <= 0.0 {
        return Ok(NpdDistribution::PointMass(0.0));
    }
    let var = 2.0 * p.nu_bp * i_eff / (n as f64 * p.theta_bp * p.gap());
    let mean = if shifted {
        cf_at(p, n)? * i_eff
    } else {
        p.gamma_bp * p.gap() * i_eff
    };
    Ok(NpdDistribution::gaussian(mean, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NpdModel {
    IterativeOu,
    Gaussian,
    ShiftedGaussian,
}

impl NpdModel {
    pub fn name(&self) -> &'static str {
        match self {
            NpdModel::IterativeOu => "iterative_ou",
            NpdModel::Gaussian => "gaussian",
            NpdModel::ShiftedGaussian => "shifted_gaussian",
        }
    }
}

/// Monte-Carlo settings of the iterative-OU model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomizedOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for RandomizedOptions {
    fn default() -> Self {
        RandomizedOptions { samples: 100_000, seed: 0 }
    }
}

/// CDF of `X = min(A, max(n_PD, 0))` with `A ~ Exp(μ)` independent of `n_PD`.
fn x_cdf(x: f64, mu: f64, npd: &npd::PreparedCdf<'_>) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let surv_a = if mu == f64::INFINITY { 1.0 } else { (-x / mu).exp() };
    1.0 - surv_a * (1.0 - npd.cdf(x))
}

/// Total mass of the distribution of `X` as built on the convolution grid
/// over `[0, upper]`, with the tail beyond `upper` added analytically.
pub fn x_distribution_mass(mu: f64, npd: &NpdDistribution, upper: f64, cells: usize) -> f64 {
    let prep = npd.prepared();
    let h = upper / cells as f64;
    let mut mass = x_cdf(0.0, mu, &prep);
    let mut prev = mass;
    for k in 1..=cells {
        let f = x_cdf(k as f64 * h, mu, &prep);
        mass += f - prev;
        prev = f;
    }
    mass + (1.0 - prev)
}

/// `Pr{X₁ + X₂ ≤ Δ}` for i.i.d. copies of `X = min(A, n_PD)`: neither wave
/// pair covers the steady state, by death or by running out of iterations.
pub fn two_wave_failure_limited(delta: f64, mu: f64, npd: &NpdDistribution, cells: usize) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let prep = npd.prepared();
    let h = delta / cells as f64;
    let mut fer = x_cdf(0.0, mu, &prep) * x_cdf(delta, mu, &prep);
    let mut prev = x_cdf(0.0, mu, &prep);
    for k in 1..=cells {
        let f = x_cdf(k as f64 * h, mu, &prep);
        let mid = (k as f64 - 0.5) * h;
        fer += (f - prev) * x_cdf(delta - mid, mu, &prep);
        prev = f;
    }
    fer.clamp(0.0, 1.0)
}

/// Randomized-propagation FER with the given model of `n_PD(I_eff)`.
pub fn fer_randomized(p: &PointParams, n: usize, i: usize, model: NpdModel, opts: RandomizedOptions) -> Result<f64> {
    let b = LimitedBudget::new(p, i);
    if b.i_eff <= 0.0 {
        return Ok(1.0);
    }
    let npd = match model {
        NpdModel::IterativeOu => {
            let k = (b.i_eff.round() as usize).max(1);
            simulate_npd_iterative(p, n, k, opts.samples, opts.seed)?
        }
        NpdModel::Gaussian => npd_gaussian(p, n, b.i_eff, false)?,
        NpdModel::ShiftedGaussian => npd_gaussian(p, n, b.i_eff, true)?,
    };
    Ok(two_wave_failure_limited(p.steady_duration(), p.mu0(n), &npd, CONVOLUTION_CELLS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::tests::sample_table;
    use proptest::prelude::*;

    fn simpson_oracle(u: f64, panels: usize) -> f64 {
        let f = |z: f64| 0.5 * libm::erfc(-z / 2f64.sqrt()) * (z * z / 2.0).exp();
        let h = u / panels as f64;
        let mut s = f(0.0) + f(u);
        for k in 1..panels {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn mu0_matches_fine_quadrature() {
        // u = 1 · √100 · 0.1 = 1
        let got = mu0(1.0, 1.0, 1.0, 100, 0.4, 0.5);
        let want = (2.0 * std::f64::consts::PI).sqrt() * simpson_oracle(1.0, 1_000_000);
        assert!(((got - want) / want).abs() < 5e-9, "{got} vs {want}");
        let got = mu0(2.0, 0.4, 2.7, 10_000, 0.47, 0.4994);
        let u = 2.0 * (10_000f64 / 0.4).sqrt() * (0.4994 - 0.47);
        let want = (2.0 * std::f64::consts::PI).sqrt() / 2.7 * simpson_oracle(u, 1_000_000);
        assert!(((got - want) / want).abs() < 5e-9, "{got} vs {want}");
    }

    #[test]
    fn mu0_edge_cases() {
        assert_eq!(mu0(2.0, 0.4, 2.7, 1000, 0.4994, 0.4994), 0.0);
        assert_eq!(mu0(2.0, 0.4, 2.7, 1000, 0.5, 0.4994), 0.0);
        let a = mu0(2.0, 0.4, 2.7, 1000, 0.47, 0.4994);
        assert!(mu0(2.0, 0.4, 2.7, 1000, 0.46, 0.4994) > a);
        assert!(mu0(2.0, 0.4, 2.7, 2000, 0.47, 0.4994) > a);
    }

    #[test]
    fn unlimited_limits() {
        let mut p = sample_table().at(0.46).unwrap();
        p.tau_end_tilde = p.tau_start_tilde;
        assert_eq!(fer_unlimited(&p, 1000, UnlimitedVariant::Terminated), 0.0);
        let p = sample_table().at(0.46).unwrap();
        // enormous N: the waves never die
        for v in [
            UnlimitedVariant::Terminated,
            UnlimitedVariant::Unterminated { l_prime: 40 },
            UnlimitedVariant::SlidingWindow { l: 50, w: 20 },
        ] {
            assert!(fer_unlimited(&p, 1 << 40, v) < 1e-12);
            let f = fer_unlimited(&p, 200, v);
            assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn const_law_reduces_to_unlimited_without_deficit() {
        let p = sample_table().at(0.46).unwrap();
        let b = LimitedBudget::new(&p, 10_000);
        assert_eq!(b.d_min, 0.0);
        let unl = fer_unlimited(&p, 1000, UnlimitedVariant::Terminated);
        assert!((fer_const_propagation(&p, 1000, 10_000) - unl).abs() < 1e-15);
    }

    #[test]
    fn const_law_fails_when_waves_cannot_meet() {
        let p = sample_table().at(0.46).unwrap();
        let b = LimitedBudget::new(&p, 60);
        assert!(b.d_min >= b.l_eff / 2.0);
        assert_eq!(fer_const_propagation(&p, 1000, 60), 1.0);
        assert_eq!(fer_const_propagation(&p, 1000, 5), 1.0);
    }

    #[test]
    fn point_mass_at_infinity_gives_unlimited_law() {
        let p = sample_table().at(0.46).unwrap();
        let mu = p.mu0(1000);
        let far = NpdDistribution::PointMass(1e9);
        let got = two_wave_failure_limited(p.steady_duration(), mu, &far, CONVOLUTION_CELLS);
        let want = fer_unlimited(&p, 1000, UnlimitedVariant::Terminated);
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn reduction_chain_to_const_law() {
        // with V_BP = V_PD γ̆ (ε* − ε) the constant law is the randomized
        // law with a point mass at γ̆ (ε* − ε) I_eff
        for eps in [0.45, 0.455, 0.46, 0.465, 0.47] {
            let mut p = sample_table().at(eps).unwrap();
            p.v_bp = p.v_pd * p.gamma_breve * p.gap();
            for i in [100, 140, 170, 200, 260, 400] {
                let b = LimitedBudget::new(&p, i);
                let point = NpdDistribution::PointMass(p.gamma_breve * p.gap() * b.i_eff);
                let rand = two_wave_failure_limited(p.steady_duration(), p.mu0(1000), &point, CONVOLUTION_CELLS);
                let cons = fer_const_propagation(&p, 1000, i);
                assert!((rand - cons).abs() < 2e-3, "eps {eps} I {i}: {rand} vs {cons}");
            }
        }
    }

    #[test]
    fn convolution_mass_is_one() {
        let p = sample_table().at(0.465).unwrap();
        let mu = p.mu0(1000);
        for d in [
            npd_gaussian(&p, 1000, 150.0, false).unwrap(),
            simulate_npd_iterative(&p, 1000, 150, 5000, 1).unwrap(),
        ] {
            let m = x_distribution_mass(mu, &d, p.steady_duration() + 10.0 * mu, 4096);
            assert!((m - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_variance_ou_is_point_mass() {
        let mut p = sample_table().at(0.46).unwrap();
        p.nu_breve = 0.0;
        let d = simulate_npd_iterative(&p, 1000, 120, 100, 0).unwrap();
        let want = p.gamma_breve * p.gap() * 120.0;
        match d {
            NpdDistribution::PointMass(x) => assert!((x - want).abs() < 1e-9 * want),
            other => panic!("expected a point mass, got {other:?}"),
        }
    }

    #[test]
    fn iterative_model_mean_below_constant_speed() {
        let p = sample_table().at(0.47).unwrap();
        let xs = npd_iterative_samples(&p, 1000, 150, 20_000, 3).unwrap();
        let m = crate::stats::mean(&xs);
        assert!(m < p.gamma_breve * p.gap() * 150.0);
        // heavier left tail
        let sd = crate::stats::variance(&xs).sqrt();
        let third: f64 = xs.iter().map(|x| ((x - m) / sd).powi(3)).sum::<f64>() / xs.len() as f64;
        assert!(third < 0.0, "skewness {third}");
    }

    #[test]
    fn gaussian_variants_share_variance() {
        let p = sample_table().at(0.46).unwrap();
        let a = npd_gaussian(&p, 1000, 150.0, false).unwrap();
        let b = npd_gaussian(&p, 1000, 150.0, true).unwrap();
        assert_eq!(a.variance(), b.variance());
        assert!((b.mean() - p.c_f * 150.0).abs() < 1e-12);
        assert_eq!(npd_gaussian(&p, 1000, 0.0, true).unwrap(), NpdDistribution::PointMass(0.0));
    }

    #[test]
    fn randomized_without_budget_fails() {
        let p = sample_table().at(0.46).unwrap();
        for m in [NpdModel::IterativeOu, NpdModel::Gaussian, NpdModel::ShiftedGaussian] {
            assert_eq!(
                fer_randomized(&p, 1000, 20, m, RandomizedOptions { samples: 100, seed: 0 }).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn randomized_monotone_in_budget() {
        let p = sample_table().at(0.465).unwrap();
        let opts = RandomizedOptions { samples: 4000, seed: 9 };
        let unl = fer_unlimited(&p, 1000, UnlimitedVariant::Terminated);
        for m in [NpdModel::IterativeOu, NpdModel::Gaussian, NpdModel::ShiftedGaussian] {
            let mut prev = 1.0;
            for i in [60, 120, 160, 200, 260, 350, 600] {
                let f = fer_randomized(&p, 1000, i, m, opts).unwrap();
                assert!(f <= prev + 1e-3, "{m:?} I {i}: {f} > {prev}");
                assert!(f >= unl - 1e-3);
                prev = f;
            }
        }
    }

    proptest! {
        #[test]
        fn law_outputs_are_probabilities(delta in 0.0f64..50.0, mu in 0.0f64..100.0, span in -5.0f64..50.0) {
            let a = two_wave_failure(delta, mu);
            let b = one_wave_failure(span, mu);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
    }
}
