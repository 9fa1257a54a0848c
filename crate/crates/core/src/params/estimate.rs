//! Monte-Carlo estimation of the scaling parameters.

use rayon::prelude::*;

use super::PointParams;
use crate::de::{steady_state_window, DETECTOR_HOLD, DETECTOR_LEVEL};
use crate::decoder::{bp_full, peel, transmit_bec, DecodingTrace, PeelOptions};
use crate::error::{Error, Result};
use crate::graph::{sample_graph, EnsembleSpec, Termination};
use crate::laws::{npd_iterative_samples, OuParams};
use crate::rng::{domain, mix, substream};
use crate::stats::{mean, slope_through_origin};

/// Minimum successful trials for a peeling steady-state estimate.
pub const MIN_PEELING_SUCCESSES: usize = 50;
/// Minimum trajectories for a covariance fit.
pub const MIN_COV_SEGMENTS: usize = 100;
/// Minimum qualifying BP traces for σ₂.
pub const MIN_SIGMA2_TRACES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeelingConfig {
    pub trials: usize,
    pub seed: u64,
    /// Index of the first trial, so that disjoint batches can be drawn.
    pub first_trial: u64,
    /// Sampling step of the averaged curves in peeling time.
    pub grid_step: f64,
    /// Width of the moving average applied before detection.
    pub smoothing: f64,
}

impl Default for PeelingConfig {
    fn default() -> Self {
        PeelingConfig {
            trials: 200,
            seed: 0,
            first_trial: 0,
            grid_step: 0.01,
            smoothing: 0.5,
        }
    }
}

/// Steady state of averaged peeling trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct PeelingSteadyState {
    pub termination: Termination,
    pub epsilon: f64,
    /// Plateau of the averaged `r1` divided by `ε* − ε`. For the terminated
    /// chain this counts both waves.
    pub gamma: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Wave speed in positions per `N` peeling steps; terminated chain only.
    pub v_pd: Option<f64>,
    pub successes: usize,
    pub trials: usize,
    /// Spacing of `mean_r1` and of the segments.
    pub grid_step: f64,
    /// Averaged `r1` over successful trials.
    pub mean_r1: Vec<f64>,
    /// `r1` of every successful trial over `[tau_start, tau_end]`.
    pub segments: Vec<Vec<f64>>,
}

struct PeelTrial {
    success: bool,
    r1: Vec<f64>,
    middle: Vec<f64>,
}

fn centred_moving_average(xs: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = vec![0.0; xs.len() + 1];
    for (i, x) in xs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..xs.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(xs.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Averages peeling trajectories over successful trials and locates the
/// steady state of the averaged `r1` with the second-difference rule of
/// density evolution, applied to the smoothed curve sampled at the peeling
/// time one BP iteration covers.
///
/// A truncated chain almost never peels completely (its reduced-degree tail
/// keeps stopping sets), so a truncated trial counts as successful when no
/// erasure is left outside its last `2 dv` positions.
pub fn estimate_peeling_steady_state(
    spec: &EnsembleSpec,
    epsilon: f64,
    epsilon_star: f64,
    cfg: &PeelingConfig,
) -> Result<PeelingSteadyState> {
    let gap = epsilon_star - epsilon;
    if !(gap > 0.0) {
        return Err(Error::Domain(format!(
            "epsilon {epsilon} is not below the threshold {epsilon_star}"
        )));
    }
    let terminated = match spec.termination {
        Termination::Terminated => true,
        Termination::Truncated => false,
        _ => return Err(Error::Spec("peeling steady state needs a terminated or truncated chain".into())),
    };
    let n = spec.n;
    let stride = ((cfg.grid_step * n as f64).round() as usize).max(1);
    let grid_step = stride as f64 / n as f64;
    let middle = spec.l / 2;
    let tail_start = spec.l.saturating_sub(2 * spec.dv);

    let trials: Vec<PeelTrial> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|k| -> Result<PeelTrial> {
            let t = cfg.first_trial + k;
            let graph = sample_graph(spec, mix(cfg.seed, t))?;
            let erasures = transmit_bec(&graph, epsilon, &mut substream(cfg.seed, domain::CHANNEL, t))?;
            let opts = PeelOptions {
                r1_stride: stride,
                history_stride: if terminated { stride } else { 0 },
            };
            let trace = peel(&graph, &erasures, opts, &mut substream(cfg.seed, domain::PEELING, t));
            let success = if terminated {
                trace.success
            } else {
                trace.residual.iter().all(|&v| graph.vn_position(v as usize) >= tail_start)
            };
            let on_grid = |i: usize| i + 1 < trace.r1_trajectory.len() || trace.stop_iteration % stride == 0;
            let r1: Vec<f64> = (0..trace.r1_trajectory.len())
                .filter(|&i| on_grid(i))
                .map(|i| trace.r1_trajectory[i].1)
                .collect();
            let middle = match &trace.erased_per_position_history {
                Some(h) => (0..h.len()).filter(|&i| on_grid(i)).map(|i| h[i][middle] as f64).collect(),
                None => Vec::new(),
            };
            Ok(PeelTrial { success, r1, middle })
        })
        .collect::<Result<_>>()?;

    let ok: Vec<&PeelTrial> = trials.iter().filter(|t| t.success).collect();
    if ok.len() < MIN_PEELING_SUCCESSES {
        return Err(Error::Estimation(format!(
            "only {} of {} peeling trials succeeded at epsilon {epsilon} (need {MIN_PEELING_SUCCESSES})",
            ok.len(),
            cfg.trials
        )));
    }
    let len = ok.iter().map(|t| t.r1.len()).max().unwrap();
    let mut mean_r1 = vec![0.0; len];
    let mut alive = vec![0usize; len];
    for t in &ok {
        for (k, r) in t.r1.iter().enumerate() {
            mean_r1[k] += r;
            alive[k] += 1;
        }
    }
    let count = ok.len() as f64;
    mean_r1.iter_mut().for_each(|x| *x /= count);

    // detection runs while most trials are still decoding
    let cut = alive.iter().position(|&a| 2 * a < ok.len()).unwrap_or(len);
    let g: Vec<f64> = mean_r1[..cut].iter().map(|r| r / gap).collect();
    let half = ((cfg.smoothing / 2.0 / grid_step).round() as usize).max(0);
    let smooth = centred_moving_average(&g, half);
    // The detector sees the curve once per BP-iteration equivalent: one
    // iteration recovers about `plateau · (ε* − ε)` of peeling time.
    let mut middle_half = g[cut / 4..(3 * cut / 4).max(cut / 4 + 1)].to_vec();
    middle_half.sort_by(f64::total_cmp);
    let plateau = middle_half[middle_half.len() / 2];
    let step = ((plateau * gap / grid_step).round() as usize).max(1);
    let coarse: Vec<f64> = smooth.iter().step_by(step).copied().collect();
    let (s, e) = steady_state_window(&coarse, DETECTOR_LEVEL, DETECTOR_HOLD)
        .ok_or_else(|| Error::Estimation(format!("no peeling steady state detected at epsilon {epsilon}")))?;
    let (ks, ke) = ((s - 1) * step, (e - 1) * step);
    let tau_start = ks as f64 * grid_step;
    let tau_end = ke as f64 * grid_step;
    let gamma = mean(&g[ks..=ke]);

    let v_pd = if terminated {
        let k = (((tau_end - tau_start) / 2.0) / grid_step).round() as usize;
        let vals: Vec<f64> = ok.iter().map(|t| t.middle.get(k).copied().unwrap_or(0.0)).collect();
        let v = mean(&vals);
        if v <= 0.0 {
            return Err(Error::Estimation(
                "middle position already decoded at the steady-state midpoint".into(),
            ));
        }
        Some(n as f64 / v)
    } else {
        None
    };

    let segments = ok.iter().filter(|t| t.r1.len() > ke).map(|t| t.r1[ks..=ke].to_vec()).collect();
    Ok(PeelingSteadyState {
        termination: spec.termination,
        epsilon,
        gamma,
        tau_start,
        tau_end,
        v_pd,
        successes: ok.len(),
        trials: cfg.trials,
        grid_step,
        mean_r1,
        segments,
    })
}

/// Variance and autocorrelation rate of a stationary process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovEstimate {
    /// `N` times the pooled variance.
    pub nu: f64,
    /// Decay rate of the autocorrelation per unit time.
    pub theta: f64,
    pub segments: usize,
}

/// Fits `Cov(X_s, X_t) = (ν/N) e^{−θ|s−t|}` to trajectory segments sampled
/// every `dt` and aligned at a common start. Segments may differ in length;
/// each time index pools the segments that reach it.
///
/// ν is `N` times the pooled variance at matched times. θ is the
/// least-squares slope through the origin of `−log(C(k)/C(0))` against the
/// lag, over positive-covariance lags up to `2/θ̂`; the window starts where
/// the correlation falls below `e^{−2}` and is refined once.
pub fn estimate_cov_params(segments: &[Vec<f64>], dt: f64, n: usize) -> Result<CovEstimate> {
    if segments.len() < MIN_COV_SEGMENTS {
        return Err(Error::Estimation(format!(
            "{} trajectories, need at least {MIN_COV_SEGMENTS}",
            segments.len()
        )));
    }
    let len = segments.iter().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    for s in segments {
        for (k, x) in s.iter().enumerate() {
            sums[k] += x;
            counts[k] += 1;
        }
    }
    // drop the tail reached by too few segments
    let usable = counts.iter().position(|&c| c < 10).unwrap_or(len);
    let centre: Vec<f64> = (0..usable).map(|k| sums[k] / counts[k] as f64).collect();

    let autocov = |lag: usize| -> f64 {
        let (mut acc, mut pairs) = (0.0, 0usize);
        for s in segments {
            let end = s.len().min(usable);
            for k in 0..end.saturating_sub(lag) {
                acc += (s[k] - centre[k]) * (s[k + lag] - centre[k + lag]);
                pairs += 1;
            }
        }
        if pairs == 0 {
            f64::NAN
        } else {
            acc / pairs as f64
        }
    };
    let c0 = autocov(0) * segments.len() as f64 / (segments.len() - 1) as f64;
    if !(c0 > 0.0) {
        return Err(Error::Data("non-positive variance at lag 0".into()));
    }
    let max_lag = usable.saturating_sub(1);
    let mut ratios = Vec::new();
    for lag in 1..=max_lag {
        let r = autocov(lag) / c0;
        if !(r > (-3.0f64).exp()) {
            break;
        }
        ratios.push(r);
    }
    let fit = |horizon: f64| -> Result<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64 * dt, -r.ln()))
            .filter(|&(x, _)| x <= horizon + 1e-12)
            .unzip();
        slope_through_origin(&xs, &ys)
    };
    let first = ratios.iter().position(|&r| r < (-2.0f64).exp()).map_or(ratios.len(), |i| i + 1);
    let theta0 = fit(first.max(1) as f64 * dt)?;
    let theta = fit(2.0 / theta0).or(Ok::<f64, Error>(theta0))?;
    if !(theta > 0.0) {
        return Err(Error::Fit(format!("autocorrelation does not decay (θ = {theta})")));
    }
    Ok(CovEstimate {
        nu: n as f64 * c0,
        theta,
        segments: segments.len(),
    })
}

/// Full-BP traces of a batch of frames.
#[derive(Debug, Clone)]
pub struct BpTraceSet {
    pub spec: EnsembleSpec,
    pub epsilon: f64,
    pub traces: Vec<DecodingTrace>,
}

/// Runs unlimited full BP on `trials` fresh frames.
pub fn collect_bp_traces(spec: &EnsembleSpec, epsilon: f64, trials: usize, seed: u64) -> Result<BpTraceSet> {
    let traces = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<DecodingTrace> {
            let graph = sample_graph(spec, mix(seed, t))?;
            let erasures = transmit_bec(&graph, epsilon, &mut substream(seed, domain::CHANNEL, t))?;
            let mut trace = bp_full(&graph, &erasures, None);
            trace.residual = Vec::new();
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    Ok(BpTraceSet {
        spec: spec.clone(),
        epsilon,
        traces,
    })
}

/// Steady-state pieces of `v_BP` traces of a truncated chain: from
/// iteration `i_start` until the leftmost unrecovered position reaches
/// `L − 2 dv`, where the wave starts to feel the reduced-degree tail, or
/// until the stop when the wave died earlier.
pub fn steady_segments(set: &BpTraceSet, i_start: usize) -> Vec<Vec<f64>> {
    let first = i_start.max(1) - 1;
    let tail = set.spec.l.saturating_sub(2 * set.spec.dv) as u32;
    set.traces
        .iter()
        .filter_map(|t| {
            let end = t.p_left.iter().position(|&p| p >= tail).unwrap_or(t.v_bp_per_iter.len());
            (end > first + 1).then(|| t.v_bp_per_iter[first..end].to_vec())
        })
        .collect()
}

/// `c_f = E[n_PD(I'_eff)] / I'_eff` under the iterative OU model.
pub fn estimate_cf(p: &PointParams, n: usize, i_eff_ref: usize, samples: usize, seed: u64) -> Result<f64> {
    let xs = npd_iterative_samples(p, n, i_eff_ref, samples, seed)?;
    Ok(mean(&xs) / i_eff_ref as f64)
}

/// Position diffusion estimate and the moments behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma2Estimate {
    pub sigma2: f64,
    pub sim_mean: f64,
    pub sim_var: f64,
    pub model_mean: f64,
    pub model_var: f64,
    pub traces: usize,
}

/// Compares simulated leftmost-unrecovered positions at iteration
/// `ell_ref` with the integrated-OU position model and attributes the
/// variance excess to per-iteration position noise:
/// `σ₂² = (Var_sim − Var_model) / ell_ref`.
///
/// The model position is `⌊∫_0^τ η⌋` with `η` a stationary OU of mean
/// `c_f V_PD`, rate `θ_BP (ε* − ε)` and variance `σ₁²/(2b)` (window-point
/// BP covariance), started where
/// the wave has crossed its first position, so
/// `τ = ell_ref − I_start + 1/(c_f V_PD)`.
pub fn sigma2_from_positions(
    positions: &[f64],
    p: &PointParams,
    n: usize,
    ell_ref: usize,
    model_paths: usize,
    seed: u64,
) -> Result<Sigma2Estimate> {
    if positions.len() < MIN_SIGMA2_TRACES {
        return Err(Error::Estimation(format!(
            "{} qualifying traces, need at least {MIN_SIGMA2_TRACES}",
            positions.len()
        )));
    }
    let sim_mean = mean(positions);
    let sim_var = crate::stats::variance(positions);
    let (model_mean, model_var) = model_position_moments(p, n, ell_ref, model_paths, seed)?;
    let excess = (sim_var - model_var) / ell_ref as f64;
    if excess < 0.0 {
        log::warn!("simulated position variance {sim_var} is below the model's {model_var}; σ₂ clamped to 0");
    }
    Ok(Sigma2Estimate {
        sigma2: excess.max(0.0).sqrt(),
        sim_mean,
        sim_var,
        model_mean,
        model_var,
        traces: positions.len(),
    })
}

/// Mean and variance of the floored model position at `ell_ref`.
pub fn model_position_moments(p: &PointParams, n: usize, ell_ref: usize, paths: usize, seed: u64) -> Result<(f64, f64)> {
    let m = crate::laws::cf_at(p, n)? * p.v_pd;
    let b = p.theta_bp_window * p.gap();
    let sigma1_sq = 2.0 * b * p.v_pd * p.v_pd * p.nu_bp_window / n as f64;
    let ou = OuParams::new(m, b, sigma1_sq.sqrt())?;
    let tau = ell_ref as f64 - p.i_start + 1.0 / m;
    if tau <= 0.0 {
        return Err(Error::Domain(format!("ell_ref = {ell_ref} precedes the steady state")));
    }
    let (mu, var) = ou.integrated_moments(tau);
    let sd = var.sqrt();
    let floors: Vec<f64> = (0..paths as u64)
        .map(|i| {
            let mut rng = substream(seed, domain::SDE, i);
            let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            (mu + sd * z).floor()
        })
        .collect();
    Ok((mean(&floors), crate::stats::variance(&floors)))
}

/// σ₂ from full-BP traces of a long truncated chain: the leftmost
/// unrecovered position after iteration `ell_ref` of every trace that is
/// still decoding there.
pub fn estimate_sigma2(set: &BpTraceSet, p: &PointParams, ell_ref: usize, seed: u64) -> Result<Sigma2Estimate> {
    let positions: Vec<f64> = set
        .traces
        .iter()
        .filter(|t| t.p_left.len() >= ell_ref && (t.p_left[ell_ref - 1] as usize) < set.spec.l.saturating_sub(set.spec.dv))
        .map(|t| t.p_left[ell_ref - 1] as f64)
        .collect();
    sigma2_from_positions(&positions, p, set.spec.n, ell_ref, 100_000, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::tests::sample_table;

    fn ou_segments(nu: f64, theta: f64, n: usize, dt: f64, len: usize, count: u64, seed: u64) -> Vec<Vec<f64>> {
        let ou = OuParams::from_moments(1.0, nu / n as f64, theta).unwrap();
        (0..count)
            .map(|i| {
                let mut rng = substream(seed, domain::OU, i);
                let mut z = ou.sample_stationary(&mut rng);
                (0..len)
                    .map(|_| {
                        let x = z;
                        z = ou.transition(z, dt, &mut rng);
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn recovers_synthetic_ou() {
        let segs = ou_segments(0.41, 2.74, 5000, 0.0344, 300, 400, 1);
        let est = estimate_cov_params(&segs, 0.0344, 5000).unwrap();
        assert!((est.nu / 0.41 - 1.0).abs() < 0.1, "nu {}", est.nu);
        assert!((est.theta / 2.74 - 1.0).abs() < 0.1, "theta {}", est.theta);
    }

    #[test]
    fn estimator_bias_is_small() {
        // 10³ paths: bias well inside 5%
        let segs = ou_segments(0.5, 3.0, 10_000, 0.05, 200, 1000, 2);
        let est = estimate_cov_params(&segs, 0.05, 10_000).unwrap();
        assert!((est.nu / 0.5 - 1.0).abs() < 0.05, "nu {}", est.nu);
        assert!((est.theta / 3.0 - 1.0).abs() < 0.05, "theta {}", est.theta);
    }

    #[test]
    fn cov_needs_data() {
        let segs = vec![vec![1.0; 50]; 20];
        assert!(matches!(estimate_cov_params(&segs, 0.1, 100), Err(Error::Estimation(_))));
        let flat = vec![vec![1.0; 50]; 150];
        assert!(matches!(estimate_cov_params(&flat, 0.1, 100), Err(Error::Data(_))));
    }

    #[test]
    fn cf_without_noise_is_constant_speed() {
        let mut p = sample_table().at(0.46).unwrap();
        p.nu_breve = 0.0;
        let cf = estimate_cf(&p, 1000, 300, 50, 0).unwrap();
        assert!((cf - p.gamma_breve * p.gap()).abs() < 1e-12);
    }

    #[test]
    fn cf_is_linear_in_horizon() {
        let p = sample_table().at(0.465).unwrap();
        // large N: the wave rarely stalls within the horizon
        let cf = estimate_cf(&p, 5000, 150, 20_000, 4).unwrap();
        let doubled = estimate_cf(&p, 5000, 300, 20_000, 5).unwrap();
        assert!(cf <= p.gamma_breve * p.gap());
        assert!((doubled / cf - 1.0).abs() < 0.03, "{cf} vs {doubled}");
    }

    #[test]
    fn model_variance_fed_back_gives_zero() {
        let p = sample_table().at(0.46).unwrap();
        let (m, v) = model_position_moments(&p, 1000, 300, 20_000, 1).unwrap();
        // a sample with exactly the model's moments
        let half = 150;
        let sd = (v * (2 * half - 1) as f64 / (2 * half) as f64).sqrt();
        let pos: Vec<f64> = (0..2 * half).map(|i| if i % 2 == 0 { m + sd } else { m - sd }).collect();
        let est = sigma2_from_positions(&pos, &p, 1000, 300, 20_000, 1).unwrap();
        assert!(est.sigma2 < 1e-9, "{}", est.sigma2);
        assert!(sigma2_from_positions(&pos[..100], &p, 1000, 300, 100, 1).is_err());
    }

    #[test]
    fn moving_average_edges() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(centred_moving_average(&xs, 1), vec![1.5, 2.0, 3.0, 4.0, 4.5]);
        assert_eq!(centred_moving_average(&xs, 0), xs.to_vec());
    }
}
