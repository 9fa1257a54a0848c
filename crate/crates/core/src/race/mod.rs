//! Sliding-window decoding with a limited iteration budget: the race
//! between the left decoding wave and the left edge of the window.
//!
//! In iteration units `τ`, the wave's leftmost unrecovered position `P_L`
//! integrates an OU speed `η`, with extra per-iteration position noise σ₂.
//! In the window's frame both edges are fixed: `W_L` absorbs (overtaking)
//! and `W_R = W_L + W` reflects.

mod fp;

pub use fp::{fp_solve, Convection, FpGrid, FpOptions, FpSolution, PdfField};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::WindowConfig;
use crate::error::{Error, Result};
use crate::laws::{one_wave_failure, two_wave_failure};
use crate::params::PointParams;
use crate::rng::{domain, substream};

/// Correlation of the initial `(η, P_L)` Gaussian.
pub const INIT_RHO: f64 = 0.99;
/// Initial standard deviation of `P_L`.
pub const INIT_DELTA: f64 = 0.1;

/// Parameters of the augmented integrated-OU model in the window frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpProblem {
    /// Mean wave speed relative to the window, `c_f V_PD − V_W`.
    pub m: f64,
    /// Reversion rate `θ_BP (ε* − ε)` per iteration.
    pub b: f64,
    pub sigma1_sq: f64,
    pub sigma2: f64,
    pub w_left: f64,
    pub w_right: f64,
    /// Iteration at which the window's left edge passes position 1.
    pub ell_star: f64,
    /// Time at which the window has slid through the chain.
    pub tau_star: f64,
    /// Window speed `1/I_s`.
    pub v_window: f64,
    pub init_rho: f64,
    pub init_delta: f64,
}

impl FpProblem {
    pub fn sigma_st(&self) -> f64 {
        (self.sigma1_sq / (2.0 * self.b)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !(self.sigma1_sq >= 0.0) || !(self.sigma2 >= 0.0) {
            return Err(Error::Spec(format!("race model needs b > 0 and non-negative noise, got {self:?}")));
        }
        if !(self.w_left < self.w_right) || !(self.tau_star > 0.0) {
            return Err(Error::Spec(format!("race model needs W_L < W_R and τ* > 0, got {self:?}")));
        }
        if !(0.0..1.0).contains(&self.init_rho) || !(self.init_delta > 0.0) {
            return Err(Error::Spec("initial correlation must lie in [0, 1) and δ > 0".into()));
        }
        Ok(())
    }
}

/// Window reach left to the two-wave phase:
/// `W' = [W − (I_start + I_end) V_W] · V_BP / (V_BP + V_W)`, clamped to `[0, W]`.
pub fn adjusted_window(p: &PointParams, w: usize, i_s: usize) -> f64 {
    let v_w = 1.0 / i_s as f64;
    let reach = (w as f64 - (p.i_start + p.i_end) * v_w) * p.v_bp / (p.v_bp + v_w);
    reach.clamp(0.0, w as f64)
}

/// Race model for a chain of `l` positions decoded by `cfg` at lifting
/// factor `n`.
pub fn build_problem(p: &PointParams, n: usize, l: usize, cfg: &WindowConfig) -> Result<FpProblem> {
    cfg.validate(l)?;
    let v_w = 1.0 / cfg.i_s as f64;
    let speed = crate::laws::cf_at(p, n)? * p.v_pd;
    let b = p.theta_bp_window * p.gap();
    let sigma1_sq = 2.0 * b * p.v_pd * p.v_pd * p.nu_bp_window / n as f64;
    let ell_star = cfg.i_in as f64 - p.i_start + 1.0 / speed;
    let w_left = 1.0 - ell_star * v_w;
    let pr = FpProblem {
        m: speed - v_w,
        b,
        sigma1_sq,
        sigma2: p.sigma2,
        w_left,
        w_right: w_left + cfg.w as f64,
        ell_star,
        tau_star: ell_star + (l - 1) as f64 * cfg.i_s as f64,
        v_window: v_w,
        init_rho: INIT_RHO,
        init_delta: INIT_DELTA,
    };
    if pr.m <= -4.0 * pr.sigma_st() * b {
        log::warn!("the wave is deterministically slower than the window (m = {:.4})", pr.m);
    }
    pr.validate()?;
    Ok(pr)
}

/// Euler-Maruyama estimate of the absorbed fraction at `τ*`.
///
/// The initial state is drawn from the same truncated Gaussian the solver
/// starts from. A path is absorbed once `P_L ≤ W_L` after a step and is
/// mirrored at `W_R`. Path `i` uses SDE substream `i`.
pub fn em_simulate(pr: &FpProblem, paths: usize, dt: f64, seed: u64) -> Result<f64> {
    pr.validate()?;
    if dt > 0.25 / pr.b {
        return Err(Error::Spec(format!("time step {dt} exceeds 0.25/b = {}", 0.25 / pr.b)));
    }
    let steps = (pr.tau_star / dt).ceil() as usize;
    let h = pr.tau_star / steps as f64;
    let (s1, s2) = (pr.sigma1_sq.sqrt() * h.sqrt(), pr.sigma2 * h.sqrt());
    let sst = pr.sigma_st();
    let cond_sd = pr.init_delta * (1.0 - pr.init_rho * pr.init_rho).sqrt();
    let absorbed: usize = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, domain::SDE, i);
            let mut normal = || -> f64 { rng.sample(StandardNormal) };
            let (mut eta, mut pos) = loop {
                let z1 = normal();
                let z2 = normal();
                let pos = pr.init_rho * pr.init_delta * z1 + cond_sd * z2;
                if pos > pr.w_left && pos < pr.w_right && z1.abs() <= 4.0 {
                    break (pr.m + sst * z1, pos);
                }
            };
            for _ in 0..steps {
                let (z1, z2) = (normal(), normal());
                pos += eta * h + s2 * z2;
                eta += -pr.b * (eta - pr.m) * h + s1 * z1;
                if pos <= pr.w_left {
                    return 1;
                }
                if pos > pr.w_right {
                    pos = 2.0 * pr.w_right - pos;
                }
            }
            0
        })
        .sum();
    Ok(absorbed as f64 / paths as f64)
}

/// Prediction of the limited-iteration sliding-window law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub fer: f64,
    pub pr_overtake: f64,
    pub w_prime: f64,
    pub fer_unterminated: f64,
    pub fer_terminated: f64,
}

/// Combines the three failure causes as independent events: overtaking,
/// a wave dying over the first `L − W'` positions, and the two final waves
/// failing to meet within the last `W'` positions.
pub fn combine_window_law(p: &PointParams, n: usize, l: usize, w_prime: f64, pr_overtake: f64) -> WindowPrediction {
    let mu = p.mu0(n);
    let pu = one_wave_failure(p.epsilon * (l as f64 - w_prime) - p.tau_start_breve, mu);
    let delta_w = (p.steady_duration() - p.epsilon * (l as f64 - w_prime)).max(0.0);
    let pt = two_wave_failure(delta_w, mu);
    WindowPrediction {
        fer: 1.0 - (1.0 - pr_overtake) * (1.0 - pu) * (1.0 - pt),
        pr_overtake,
        w_prime,
        fer_unterminated: pu,
        fer_terminated: pt,
    }
}

/// Limited-iteration sliding-window FER with `Pr{O}` from the
/// Fokker-Planck solver.
pub fn fer_sliding_window_limited(p: &PointParams, n: usize, l: usize, cfg: &WindowConfig, opts: &FpOptions) -> Result<WindowPrediction> {
    let w_prime = adjusted_window(p, cfg.w, cfg.i_s);
    if w_prime == 0.0 {
        log::warn!("adjusted window W' is 0 for W = {}, I_s = {}", cfg.w, cfg.i_s);
    }
    let pr = build_problem(p, n, l, cfg)?;
    let sol = fp_solve(&pr, opts)?;
    Ok(combine_window_law(p, n, l, w_prime, sol.pr_overtake))
}
