//! Density evolution for the semi-structured coupled ensemble on the BEC.
//!
//! Within an iteration the CN output probability depends only on the CN
//! position, because every CN averages over the same `dv` incoming VN
//! positions. The state therefore stores one value per (VN position, edge
//! offset) and the CN step is a single pass over CN positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EnsembleSpec, Termination};
use crate::stats;

/// Probability below which every position counts as decoded.
pub const CONVERGED: f64 = 1e-10;
/// Change in total erasure mass below which a run counts as stalled.
pub const STALL_DELTA: f64 = 1e-12;
/// A stalled run only fails if some position is still above this.
pub const STALL_FLOOR: f64 = 1e-3;
pub const MAX_ITERS: usize = 100_000;
/// Threshold of the second-difference detector.
pub const DETECTOR_LEVEL: f64 = 1e-2;
/// Consecutive quiet iterations required by the detector.
pub const DETECTOR_HOLD: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DeState {
    /// `p_msg[i * dv + j]`: VN at position `i` to CN at position `i + j`.
    pub p_msg: Vec<f64>,
    /// A-posteriori erasure probability per VN position.
    pub p_app: Vec<f64>,
    /// `E[v_BP(l)]` for every completed iteration.
    pub v_bp_mean: Vec<f64>,
    pub iteration: usize,
    q: Vec<f64>,
}

impl DeState {
    /// State before the first iteration: every message and every bit is
    /// erased with the channel probability.
    pub fn new(spec: &EnsembleSpec, epsilon: f64) -> Self {
        let l = spec.vn_positions();
        DeState {
            p_msg: vec![epsilon; l * spec.dv],
            p_app: vec![epsilon; l],
            v_bp_mean: Vec::new(),
            iteration: 0,
            q: vec![0.0; cn_positions(spec)],
        }
    }

    pub fn sum_p(&self) -> f64 {
        self.p_app.iter().sum()
    }

    pub fn max_p(&self) -> f64 {
        self.p_app.iter().copied().fold(0.0, f64::max)
    }
}

fn cn_positions(spec: &EnsembleSpec) -> usize {
    match spec.termination {
        Termination::Terminated => spec.vn_positions() + spec.dv - 1,
        _ => spec.vn_positions(),
    }
}

/// One flooding iteration: CN update, VN update, a-posteriori update.
/// VNs outside the chain are never erased; edges past the end of a truncated
/// chain do not exist.
pub fn de_step(state: &mut DeState, epsilon: f64, spec: &EnsembleSpec) {
    let dv = spec.dv;
    let l = state.p_app.len();
    let cn = state.q.len();
    let exp = (spec.dc - 1) as i32;
    for c in 0..cn {
        let mut acc = 0.0;
        for j in 0..dv {
            if c >= j && c - j < l {
                acc += state.p_msg[(c - j) * dv + j];
            }
        }
        state.q[c] = 1.0 - (1.0 - acc / dv as f64).powi(exp);
    }
    let mut decrease = 0.0;
    for i in 0..l {
        let mut full = epsilon;
        for j in 0..dv {
            if i + j < cn {
                full *= state.q[i + j];
            }
        }
        for j in 0..dv {
            if i + j >= cn {
                continue;
            }
            let mut prod = epsilon;
            for k in 0..dv {
                if k != j && i + k < cn {
                    prod *= state.q[i + k];
                }
            }
            state.p_msg[i * dv + j] = prod;
        }
        decrease += state.p_app[i] - full;
        state.p_app[i] = full;
    }
    state.v_bp_mean.push(decrease);
    state.iteration += 1;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeRun {
    pub state: DeState,
    pub converged: bool,
    /// `sum_i p_i` after every iteration, starting with the channel value.
    pub sum_p: Vec<f64>,
    /// Per-iteration snapshots of `p_app`, when requested.
    pub profiles: Option<Vec<Vec<f64>>>,
}

/// Iterates DE until convergence to zero, a stall, or `max_iters`.
pub fn run_de(spec: &EnsembleSpec, epsilon: f64, max_iters: usize, keep_profiles: bool) -> DeRun {
    let mut state = DeState::new(spec, epsilon);
    let mut sum_p = vec![state.sum_p()];
    let mut profiles = keep_profiles.then(|| vec![state.p_app.clone()]);
    let mut converged = state.max_p() < CONVERGED;
    while !converged && state.iteration < max_iters {
        de_step(&mut state, epsilon, spec);
        let s = state.sum_p();
        let prev = *sum_p.last().unwrap();
        sum_p.push(s);
        if let Some(p) = profiles.as_mut() {
            p.push(state.p_app.clone());
        }
        let max = state.max_p();
        if max < CONVERGED {
            converged = true;
        } else if (prev - s).abs() < STALL_DELTA && max > STALL_FLOOR {
            break;
        }
    }
    DeRun {
        state,
        converged,
        sum_p,
        profiles,
    }
}

/// Writes the DE history as CSV `iter,sum_p,v_bp_mean`.
pub fn write_history<W: std::io::Write>(run: &DeRun, mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,sum_p,v_bp_mean")?;
    for (k, v) in run.state.v_bp_mean.iter().enumerate() {
        writeln!(out, "{},{},{}", k + 1, run.sum_p[k + 1], v)?;
    }
    Ok(())
}

/// BP threshold by bisection on `[0, 1]`; the result is within `tol` of the
/// boundary between converging and stalling erasure probabilities.
pub fn de_threshold(spec: &EnsembleSpec, tol: f64) -> Result<f64> {
    de_threshold_in(spec, tol, 0.0, 1.0)
}

pub fn de_threshold_in(spec: &EnsembleSpec, tol: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Spec(format!("threshold tolerance must be positive, got {tol}")));
    }
    spec.validate()?;
    let converges = |e: f64| run_de(spec, e, MAX_ITERS, false).converged;
    if !converges(lo) || converges(hi) {
        return Err(Error::Search(format!("interval [{lo}, {hi}] does not bracket the threshold")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if converges(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DePhaseEstimates {
    pub epsilon_star: f64,
    /// Wave speed in positions per BP iteration.
    pub v_bp_speed: f64,
    pub i_start: usize,
    pub i_end: usize,
    pub gamma_bp: f64,
}

/// Steady-state window `[first, last]` of a normalized recovery curve
/// (`g[k]` belongs to iteration `k + 1`), by the second-difference rule: the
/// longest run of iterations whose absolute second difference stays below
/// `level`, provided it lasts at least `hold` iterations. Taking the longest
/// run keeps the flat tail after decoding from passing for a steady state.
pub fn steady_state_window(g: &[f64], level: f64, hold: usize) -> Option<(usize, usize)> {
    if g.len() < 3 {
        return None;
    }
    // d2[k] is centred on g[k + 1], i.e. on iteration k + 2
    let quiet: Vec<bool> = g.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs() < level).collect();
    let mut best: Option<(usize, usize)> = None;
    let mut k = 0;
    while k < quiet.len() {
        if !quiet[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < quiet.len() && quiet[k] {
            k += 1;
        }
        let len = k - start;
        if len >= hold.max(1) && best.is_none_or(|(a, b)| len > b - a + 1) {
            best = Some((start, k - 1));
        }
    }
    best.map(|(a, b)| (a + 2, b + 2))
}

/// Fractional position where the erasure profile first reaches `level`,
/// interpolated linearly between neighbouring positions.
pub fn front_position(profile: &[f64], level: f64) -> Option<f64> {
    let i = profile.iter().position(|&p| p >= level)?;
    if i == 0 {
        return None;
    }
    let (a, b) = (profile[i - 1], profile[i]);
    Some((i - 1) as f64 + (level - a) / (b - a))
}

/// Wave speed, steady-state boundaries and level from density evolution.
///
/// `I_start` and `I_end` come from the terminated chain: the steady state
/// begins at the first quiet iteration, and `I_end` counts the iterations
/// from its last quiet iteration until the chain is decoded. The speed and
/// `gamma_BP` come from the truncated chain, which carries a single wave,
/// over the same window.
pub fn estimate_phase(spec: &EnsembleSpec, epsilon: f64, epsilon_star: f64) -> Result<DePhaseEstimates> {
    if !(epsilon < epsilon_star) {
        return Err(Error::Domain(format!(
            "epsilon {epsilon} is not below the threshold {epsilon_star}"
        )));
    }
    let gap = epsilon_star - epsilon;
    let term = run_de(&spec.clone().with_termination(Termination::Terminated), epsilon, MAX_ITERS, false);
    if !term.converged {
        return Err(Error::Domain(format!("density evolution does not converge at epsilon {epsilon}")));
    }
    let done = completion_iteration(&term.state.v_bp_mean);
    let g: Vec<f64> = term.state.v_bp_mean[..done].iter().map(|v| v / gap).collect();
    let (i_start, last) = steady_state_window(&g, DETECTOR_LEVEL, DETECTOR_HOLD)
        .ok_or_else(|| Error::Domain(format!("no steady state detected at epsilon {epsilon}")))?;
    let i_end = done - last;

    let trunc = run_de(&spec.clone().with_termination(Termination::Truncated), epsilon, MAX_ITERS, true);
    // the truncated wave is in steady state over the whole terminated window
    let (ts, te) = (i_start, last);
    let gt: Vec<f64> = trunc.state.v_bp_mean.iter().map(|v| v / gap).collect();
    if gt.len() < te {
        return Err(Error::Domain(format!("truncated chain stalls at epsilon {epsilon}")));
    }
    let gamma_bp = stats::mean(&gt[ts - 1..te]);
    let profiles = trunc.profiles.as_ref().unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ell in ts..=te {
        if let Some(f) = front_position(&profiles[ell], epsilon / 2.0) {
            xs.push(ell as f64);
            ys.push(f);
        }
    }
    let (v_bp_speed, _) = stats::linear_fit(&xs, &ys)?;
    Ok(DePhaseEstimates {
        epsilon_star,
        v_bp_speed,
        i_start,
        i_end,
        gamma_bp,
    })
}

/// Last iteration that still recovers a non-negligible amount of erasure
/// mass: the iteration after which the remaining mass drops below
/// [`STALL_FLOOR`] of a single position.
fn completion_iteration(v_bp_mean: &[f64]) -> usize {
    let total: f64 = v_bp_mean.iter().sum();
    let mut acc = 0.0;
    for (k, v) in v_bp_mean.iter().enumerate() {
        acc += v;
        if total - acc < STALL_FLOOR {
            return k + 1;
        }
    }
    v_bp_mean.len()
}

/// Least-squares quadratic through `(epsilon, V_BP)` samples.
pub fn fit_speed_curve(samples: &[(f64, f64)]) -> Result<stats::Quadratic> {
    stats::fit_quadratic(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dv: usize, dc: usize, l: usize, t: Termination) -> EnsembleSpec {
        EnsembleSpec::new(dv, dc, l, dc, t).unwrap()
    }

    #[test]
    fn zero_erasure_is_immediately_decoded() {
        let s = spec(5, 10, 50, Termination::Terminated);
        let mut st = DeState::new(&s, 0.0);
        de_step(&mut st, 0.0, &s);
        assert!(st.p_app.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_position_chain_decodes_small_erasure() {
        let s = spec(3, 6, 1, Termination::Terminated);
        let run = run_de(&s, 0.1, 1000, true);
        assert!(run.converged);
        let prof = run.profiles.unwrap();
        assert!(prof.windows(2).all(|w| w[1][0] <= w[0][0]));
    }

    #[test]
    fn monotone_and_symmetric() {
        let s = spec(5, 10, 30, Termination::Terminated);
        let run = run_de(&s, 0.48, 5000, true);
        let prof = run.profiles.unwrap();
        for w in prof.windows(2) {
            for i in 0..30 {
                assert!(w[1][i] <= w[0][i] + 1e-15);
            }
        }
        for p in &prof {
            for i in 0..15 {
                assert!((p[i] - p[29 - i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_is_conserved() {
        let s = spec(5, 10, 50, Termination::Terminated);
        let run = run_de(&s, 0.47, MAX_ITERS, false);
        assert!(run.converged);
        let total: f64 = run.state.v_bp_mean.iter().sum();
        assert!((total - 0.47 * 50.0).abs() < 1e-8);
    }

    #[test]
    fn bracket_errors() {
        let s = spec(3, 6, 10, Termination::Terminated);
        assert!(matches!(de_threshold_in(&s, 1e-3, 0.6, 0.9), Err(Error::Search(_))));
        assert!(de_threshold(&s, 0.0).is_err());
    }

    #[test]
    fn front_interpolation() {
        assert_eq!(front_position(&[0.0, 0.2, 0.4], 0.3), Some(1.5));
        assert_eq!(front_position(&[0.5, 0.5], 0.3), None);
        assert_eq!(front_position(&[0.0, 0.1], 0.3), None);
    }

    #[test]
    fn window_detector_on_plateau() {
        let mut g = vec![0.0, 0.5, 1.5, 2.0];
        g.extend(std::iter::repeat_n(2.0, 20));
        g.extend([1.5, 0.5, 0.0]);
        let (s, e) = steady_state_window(&g, 1e-2, 5).unwrap();
        assert!(s >= 4 && s <= 5, "{s}");
        assert!(e >= 22 && e <= 24, "{e}");
    }
}
