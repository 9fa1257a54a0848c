//! Builds the scaling-parameter table section by section.
//!
//! Sections already present in an existing table with the same operating
//! point are reused unless explicitly requested again.

use serde::{Deserialize, Serialize};

use crate::de::{de_threshold, estimate_phase};
use crate::error::{Error, Result};
use crate::graph::{EnsembleSpec, Termination};
use crate::laws::cf_reference_horizon;
use crate::params::{
    collect_bp_traces, estimate_cf, estimate_cov_params, estimate_peeling_steady_state, estimate_sigma2, steady_segments, PeelingConfig,
    Scalar, ScalingParams, TableMeta,
};
use crate::rng::mix;

/// Tolerance of the threshold bisection.
pub const THRESHOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    /// Threshold and density-evolution phase columns.
    De,
    /// Peeling steady state columns, `ν̆` and `θ̆`.
    Peeling,
    /// BP covariance scalars.
    Cov,
    /// `c_f` column.
    Cf,
    /// Position diffusion σ₂.
    Sigma2,
}

impl Section {
    pub const ALL: [Section; 5] = [Section::De, Section::Peeling, Section::Cov, Section::Cf, Section::Sigma2];

    pub fn name(self) -> &'static str {
        match self {
            Section::De => "de",
            Section::Peeling => "peeling",
            Section::Cov => "cov",
            Section::Cf => "cf",
            Section::Sigma2 => "sigma2",
        }
    }

    pub fn parse(s: &str) -> Result<Section> {
        Section::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown section `{s}` (expected de, peeling, cov, cf or sigma2)")))
    }

    fn present(self, t: &ScalingParams) -> bool {
        let c = &t.columns;
        match self {
            Section::De => c.v_bp.is_some() && c.i_start.is_some() && c.i_end.is_some() && c.gamma_bp.is_some(),
            Section::Peeling => c.gamma_breve.is_some() && c.v_pd.is_some() && t.nu_breve.is_some() && t.theta_breve.is_some(),
            Section::Cov => t.nu_bp.is_some() && t.theta_bp.is_some(),
            Section::Cf => c.c_f.is_some() && t.c_f_n.is_some(),
            Section::Sigma2 => t.sigma2.is_some(),
        }
    }
}

/// Operating points of every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dv: usize,
    pub dc: usize,
    pub l: usize,
    /// Lifting factor of the peeling Monte-Carlo.
    pub n_peeling: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub peeling_trials: usize,
    /// ε at which `ν̆`, `θ̆` are fitted (nearest knot).
    pub breve_cov_epsilon: f64,
    /// ε whose `V_PD` is re-estimated from a disjoint batch (nearest knot).
    pub split_check_epsilon: Option<f64>,
    pub cov_epsilon: f64,
    pub cov_n: usize,
    pub cov_traces: usize,
    /// Second BP covariance estimate at the sliding-window operating point.
    pub window_cov: Option<(f64, usize, usize)>,
    pub cf_n: usize,
    pub cf_samples: usize,
    pub sigma2_epsilon: f64,
    pub sigma2_n: usize,
    pub sigma2_l: usize,
    pub sigma2_traces: usize,
    pub sigma2_ell: usize,
}

impl PipelineConfig {
    /// The (5,10) setup: ε from 0.44 to 0.49 in steps of 0.005.
    pub fn standard() -> Self {
        PipelineConfig {
            dv: 5,
            dc: 10,
            l: 50,
            n_peeling: 10_000,
            grid: grid(0.44, 0.49, 0.005),
            seed: 1,
            peeling_trials: 200,
            breve_cov_epsilon: 0.47,
            split_check_epsilon: Some(0.485),
            cov_epsilon: 0.465,
            cov_n: 5000,
            cov_traces: 200,
            window_cov: Some((0.455, 1000, 2000)),
            cf_n: 1000,
            cf_samples: 100_000,
            sigma2_epsilon: 0.455,
            sigma2_n: 1000,
            sigma2_l: 120,
            sigma2_traces: 2000,
            sigma2_ell: 412,
        }
    }

    pub fn meta(&self) -> TableMeta {
        TableMeta {
            dv: self.dv,
            dc: self.dc,
            l: self.l,
            n_est: self.n_peeling,
            seed: self.seed,
            grid: self.grid.clone(),
        }
    }

    fn spec(&self, n: usize, l: usize, t: Termination) -> Result<EnsembleSpec> {
        EnsembleSpec::new(self.dv, self.dc, l, n, t)
    }
}

/// `lo, lo + step, …` up to `hi` inclusive (rounded to 1e-9).
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

fn nearest_knot(grid: &[f64], eps: f64) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| (grid[a] - eps).abs().total_cmp(&(grid[b] - eps).abs()))
        .unwrap()
}

/// What a pipeline run did with each section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionOutcome {
    Estimated,
    Cached,
}

/// Runs the requested sections (all when `only` is empty) on top of
/// `existing`. A section outside `only` is kept if present and estimated
/// otherwise. A table built for another operating point is discarded.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    existing: Option<ScalingParams>,
    only: &[Section],
) -> Result<(ScalingParams, Vec<(Section, SectionOutcome)>)> {
    let mut table = match existing {
        Some(t) if t.meta == cfg.meta() => t,
        Some(_) => {
            log::info!("existing table belongs to another operating point; starting afresh");
            placeholder(cfg)?
        }
        None => placeholder(cfg)?,
    };
    let mut report = Vec::new();
    for (s, action) in plan(&table, only) {
        if action == SectionOutcome::Cached {
            log::info!("section {} cached, skipped", s.name());
            report.push((s, action));
            continue;
        }
        log::info!("estimating section {}", s.name());
        match s {
            Section::De => run_de_section(cfg, &mut table)?,
            Section::Peeling => run_peeling_section(cfg, &mut table)?,
            Section::Cov => run_cov_section(cfg, &mut table)?,
            Section::Cf => run_cf_section(cfg, &mut table)?,
            Section::Sigma2 => run_sigma2_section(cfg, &mut table)?,
        }
        report.push((s, SectionOutcome::Estimated));
    }
    table.validate()?;
    Ok((table, report))
}

/// Sections to estimate or reuse, in pipeline order. Sections neither
/// present nor requested are left out.
pub fn plan(table: &ScalingParams, only: &[Section]) -> Vec<(Section, SectionOutcome)> {
    Section::ALL
        .into_iter()
        .filter_map(|s| {
            if only.contains(&s) || (only.is_empty() && !s.present(table)) {
                Some((s, SectionOutcome::Estimated))
            } else {
                s.present(table).then_some((s, SectionOutcome::Cached))
            }
        })
        .collect()
}

/// Empty table; the DE section fills in the threshold.
fn placeholder(cfg: &PipelineConfig) -> Result<ScalingParams> {
    ScalingParams::new(cfg.meta(), 1.0)
}

fn run_de_section(cfg: &PipelineConfig, t: &mut ScalingParams) -> Result<()> {
    let spec = cfg.spec(cfg.dc, cfg.l, Termination::Terminated)?;
    let eps_star = de_threshold(&spec, THRESHOLD_TOL)?;
    log::info!("threshold {eps_star:.7}");
    if let Some(e) = cfg.grid.iter().find(|&&e| e >= eps_star) {
        return Err(Error::Spec(format!("grid point {e} is not below the threshold {eps_star}")));
    }
    t.epsilon_star = eps_star;
    let phases = cfg
        .grid
        .iter()
        .map(|&e| estimate_phase(&spec, e, eps_star))
        .collect::<Result<Vec<_>>>()?;
    let c = &mut t.columns;
    c.v_bp = Some(phases.iter().map(|p| p.v_bp_speed).collect());
    c.i_start = Some(phases.iter().map(|p| p.i_start as f64).collect());
    c.i_end = Some(phases.iter().map(|p| p.i_end as f64).collect());
    c.gamma_bp = Some(phases.iter().map(|p| p.gamma_bp).collect());
    Ok(())
}

fn require(t: &ScalingParams, s: Section, by: Section) -> Result<()> {
    if s.present(t) {
        Ok(())
    } else {
        Err(Error::Data(format!("section {} needs section {} first", by.name(), s.name())))
    }
}

fn run_peeling_section(cfg: &PipelineConfig, t: &mut ScalingParams) -> Result<()> {
    require(t, Section::De, Section::Peeling)?;
    let eps_star = t.epsilon_star;
    let trunc = cfg.spec(cfg.n_peeling, cfg.l, Termination::Truncated)?;
    let term = cfg.spec(cfg.n_peeling, cfg.l, Termination::Terminated)?;
    let pc = |k: usize, which: u64| PeelingConfig {
        trials: cfg.peeling_trials,
        seed: mix(cfg.seed, 2 * k as u64 + which),
        ..Default::default()
    };
    let cov_knot = nearest_knot(&cfg.grid, cfg.breve_cov_epsilon);
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (k, &eps) in cfg.grid.iter().enumerate() {
        let a = estimate_peeling_steady_state(&trunc, eps, eps_star, &pc(k, 0))?;
        let b = estimate_peeling_steady_state(&term, eps, eps_star, &pc(k, 1))?;
        log::info!(
            "ε = {eps}: γ̆ {:.4}, τ̆_start {:.2}, τ̃ [{:.2}, {:.2}], V_PD {:.4}",
            a.gamma,
            a.tau_start,
            b.tau_start,
            b.tau_end,
            b.v_pd.unwrap()
        );
        for (col, v) in cols.iter_mut().zip([a.gamma, a.tau_start, b.tau_start, b.tau_end, b.v_pd.unwrap()]) {
            col.push(v);
        }
        if k == cov_knot {
            let est = estimate_cov_params(&a.segments, a.grid_step, cfg.n_peeling)?;
            let at = |value| Scalar {
                value,
                epsilon_est: eps,
                n_est: cfg.n_peeling,
                trials: est.segments,
            };
            t.nu_breve = Some(at(est.nu));
            t.theta_breve = Some(at(est.theta));
        }
        if cfg.split_check_epsilon.is_some_and(|e| nearest_knot(&cfg.grid, e) == k) {
            let other = PeelingConfig {
                first_trial: cfg.peeling_trials as u64,
                ..pc(k, 1)
            };
            let v2 = estimate_peeling_steady_state(&term, eps, eps_star, &other)?.v_pd.unwrap();
            let v1 = b.v_pd.unwrap();
            let rel = (v1 - v2).abs() / v1;
            log::info!("split-sample V_PD at ε = {eps}: {v1:.4} vs {v2:.4}");
            if rel > 0.03 {
                return Err(Error::Estimation(format!(
                    "V_PD differs by {:.1}% across disjoint batches at ε = {eps}",
                    100.0 * rel
                )));
            }
        }
    }
    let [g, ts, tts, tte, v] = cols;
    let c = &mut t.columns;
    c.gamma_breve = Some(g);
    c.tau_start_breve = Some(ts);
    c.tau_start_tilde = Some(tts);
    c.tau_end_tilde = Some(tte);
    c.v_pd = Some(v);
    Ok(())
}

fn bp_cov(cfg: &PipelineConfig, t: &ScalingParams, eps: f64, n: usize, traces: usize, which: u64) -> Result<(Scalar, Scalar)> {
    let p = t.at_partial(eps)?;
    let spec = cfg.spec(n, cfg.l, Termination::Truncated)?;
    let set = collect_bp_traces(&spec, eps, traces, mix(cfg.seed, 1000 + which))?;
    let est = estimate_cov_params(&steady_segments(&set, p.i_start.round() as usize), p.gap(), n)?;
    log::info!("BP covariance at ε = {eps}, N = {n}: ν {:.4}, θ {:.4}", est.nu, est.theta);
    let at = |value| Scalar {
        value,
        epsilon_est: eps,
        n_est: n,
        trials: est.segments,
    };
    Ok((at(est.nu), at(est.theta)))
}

fn run_cov_section(cfg: &PipelineConfig, t: &mut ScalingParams) -> Result<()> {
    require(t, Section::De, Section::Cov)?;
    let (nu, theta) = bp_cov(cfg, t, cfg.cov_epsilon, cfg.cov_n, cfg.cov_traces, 0)?;
    t.nu_bp = Some(nu);
    t.theta_bp = Some(theta);
    (t.nu_bp_window, t.theta_bp_window) = match cfg.window_cov {
        Some((eps, n, traces)) => {
            let (nu, theta) = bp_cov(cfg, t, eps, n, traces, 1)?;
            (Some(nu), Some(theta))
        }
        None => (None, None),
    };
    Ok(())
}

fn run_cf_section(cfg: &PipelineConfig, t: &mut ScalingParams) -> Result<()> {
    require(t, Section::De, Section::Cf)?;
    require(t, Section::Peeling, Section::Cf)?;
    let col = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let p = t.at_partial(eps)?;
            estimate_cf(
                &p,
                cfg.cf_n,
                cf_reference_horizon(&p),
                cfg.cf_samples,
                mix(cfg.seed, 2000 + k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    t.columns.c_f = Some(col);
    t.c_f_n = Some(cfg.cf_n);
    Ok(())
}

fn run_sigma2_section(cfg: &PipelineConfig, t: &mut ScalingParams) -> Result<()> {
    for s in [Section::De, Section::Peeling, Section::Cov, Section::Cf] {
        require(t, s, Section::Sigma2)?;
    }
    let p = t.at_partial(cfg.sigma2_epsilon)?;
    let spec = cfg.spec(cfg.sigma2_n, cfg.sigma2_l, Termination::Truncated)?;
    let set = collect_bp_traces(&spec, cfg.sigma2_epsilon, cfg.sigma2_traces, mix(cfg.seed, 3000))?;
    let est = estimate_sigma2(&set, &p, cfg.sigma2_ell, mix(cfg.seed, 3001))?;
    log::info!(
        "σ₂ {:.4}: positions at ℓ = {} simulated {:.1} ± {:.2}, model {:.1} ± {:.2}",
        est.sigma2,
        cfg.sigma2_ell,
        est.sim_mean,
        est.sim_var.sqrt(),
        est.model_mean,
        est.model_var.sqrt()
    );
    t.sigma2 = Some(Scalar {
        value: est.sigma2,
        epsilon_est: cfg.sigma2_epsilon,
        n_est: cfg.sigma2_n,
        trials: est.traces,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_knots() {
        let g = grid(0.45, 0.49, 0.005);
        assert_eq!(g.len(), 9);
        assert_eq!(g[8], 0.49);
        assert_eq!(nearest_knot(&g, 0.4875), 7);
    }

    #[test]
    fn section_names_round_trip() {
        for s in Section::ALL {
            assert_eq!(Section::parse(s.name()).unwrap(), s);
        }
        assert!(Section::parse("everything").is_err());
    }

    fn small() -> PipelineConfig {
        PipelineConfig {
            dv: 3,
            dc: 6,
            l: 40,
            n_peeling: 200,
            grid: vec![0.46, 0.47],
            ..PipelineConfig::standard()
        }
    }

    #[test]
    fn de_section_then_cache() {
        use SectionOutcome::*;
        let cfg = small();
        let (t, report) = run_pipeline(&cfg, None, &[Section::De]).unwrap();
        assert_eq!(report, vec![(Section::De, Estimated)]);
        assert!(t.epsilon_star > 0.47 && t.epsilon_star < 0.5);
        assert_eq!(
            plan(&t, &[]),
            vec![
                (Section::De, Cached),
                (Section::Peeling, Estimated),
                (Section::Cov, Estimated),
                (Section::Cf, Estimated),
                (Section::Sigma2, Estimated)
            ]
        );
        assert_eq!(plan(&t, &[Section::Cf]), vec![(Section::De, Cached), (Section::Cf, Estimated)]);
        let (again, report) = run_pipeline(&cfg, Some(t.clone()), &[Section::De]).unwrap();
        assert_eq!(report, vec![(Section::De, Estimated)]);
        assert_eq!(again.to_json().unwrap(), t.to_json().unwrap());
        let moved = PipelineConfig { seed: 9, ..cfg };
        assert_eq!(plan(&run_pipeline(&moved, Some(t), &[Section::De]).unwrap().0, &[]).len(), 5);
    }

    #[test]
    fn missing_prerequisite() {
        let err = run_pipeline(&small(), None, &[Section::Cf]).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }
}
