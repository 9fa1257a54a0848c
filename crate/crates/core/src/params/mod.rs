//! The scaling-parameter table.
//!
//! Per-ε quantities are stored at the knots of an ε grid and linearly
//! interpolated between them; the covariance parameters and σ₂ are scalars
//! that depend on the ensemble degrees only and carry the operating point at
//! which they were estimated.

mod estimate;

pub use estimate::{
    collect_bp_traces, estimate_cf, estimate_cov_params, estimate_peeling_steady_state, estimate_sigma2, sigma2_from_positions,
    steady_segments, BpTraceSet, CovEstimate, PeelingConfig, PeelingSteadyState, Sigma2Estimate,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the `params.json` layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Operating point of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub dv: usize,
    pub dc: usize,
    pub l: usize,
    /// Lifting factor used for the peeling Monte-Carlo.
    pub n_est: usize,
    pub seed: u64,
    /// ε knots, ascending.
    pub grid: Vec<f64>,
}

/// A scalar parameter with the point at which it was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub value: f64,
    pub epsilon_est: f64,
    pub n_est: usize,
    pub trials: usize,
}

/// Per-knot columns. A column is absent until the pipeline stage that fills
/// it has run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_end: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_bp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_breve: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_start_breve: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_start_tilde: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_end_tilde: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_pd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_f: Option<Vec<f64>>,
}

/// The persisted parameter table (`params.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub schema_version: u32,
    pub meta: TableMeta,
    pub epsilon_star: f64,
    pub columns: Columns,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_breve: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_breve: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_bp: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bp: Option<Scalar>,
    /// BP covariance at the sliding-window operating point; the window
    /// model falls back to `nu_bp`/`theta_bp` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_bp_window: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bp_window: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Scalar>,
    /// Lifting factor at which the `c_f` column was simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_f_n: Option<usize>,
}

/// Every parameter evaluated at one erasure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub gamma_breve: f64,
    pub nu_breve: f64,
    pub theta_breve: f64,
    pub tau_start_breve: f64,
    pub tau_start_tilde: f64,
    pub tau_end_tilde: f64,
    pub v_pd: f64,
    pub v_bp: f64,
    pub i_start: f64,
    pub i_end: f64,
    pub gamma_bp: f64,
    pub nu_bp: f64,
    pub theta_bp: f64,
    pub nu_bp_window: f64,
    pub theta_bp_window: f64,
    pub c_f: f64,
    /// Lifting factor `c_f` belongs to.
    pub c_f_n: usize,
    pub sigma2: f64,
}

impl PointParams {
    /// Distance to the BP threshold, `ε* − ε`.
    pub fn gap(&self) -> f64 {
        self.epsilon_star - self.epsilon
    }

    /// Length of the terminated steady state in peeling time.
    pub fn steady_duration(&self) -> f64 {
        self.tau_end_tilde - self.tau_start_tilde
    }

    /// Mean first-hit time of the truncated `r1` process at lifting factor `n`.
    pub fn mu0(&self, n: usize) -> f64 {
        crate::laws::mu0(
            self.gamma_breve,
            self.nu_breve,
            self.theta_breve,
            n,
            self.epsilon,
            self.epsilon_star,
        )
    }
}

fn interp(grid: &[f64], values: &[f64], eps: f64) -> f64 {
    let k = grid.partition_point(|&g| g <= eps);
    if k == 0 {
        return values[0];
    }
    if k >= grid.len() {
        return values[grid.len() - 1];
    }
    let (x0, x1) = (grid[k - 1], grid[k]);
    if eps == x0 {
        return values[k - 1];
    }
    let w = (eps - x0) / (x1 - x0);
    values[k - 1] + w * (values[k] - values[k - 1])
}

impl ScalingParams {
    pub fn new(meta: TableMeta, epsilon_star: f64) -> Result<Self> {
        if meta.grid.is_empty() || meta.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spec("the ε grid must be non-empty and strictly ascending".into()));
        }
        if meta.grid.iter().any(|&e| !(0.0..epsilon_star).contains(&e)) {
            return Err(Error::Spec(format!("ε grid must lie in [0, ε* = {epsilon_star})")));
        }
        Ok(ScalingParams {
            schema_version: SCHEMA_VERSION,
            meta,
            epsilon_star,
            columns: Columns::default(),
            nu_breve: None,
            theta_breve: None,
            nu_bp: None,
            theta_bp: None,
            nu_bp_window: None,
            theta_bp_window: None,
            sigma2: None,
            c_f_n: None,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.meta.grid[0], *self.meta.grid.last().unwrap())
    }

    pub fn contains(&self, eps: f64) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&eps)
    }

    fn column(&self, name: &str, col: &Option<Vec<f64>>, eps: f64) -> Result<f64> {
        let values = col
            .as_ref()
            .ok_or_else(|| Error::Data(format!("params table has no `{name}` column")))?;
        if values.len() != self.meta.grid.len() {
            return Err(Error::Data(format!(
                "column `{name}` has {} entries for {} knots",
                values.len(),
                self.meta.grid.len()
            )));
        }
        Ok(interp(&self.meta.grid, values, eps))
    }

    fn scalar(name: &str, s: &Option<Scalar>) -> Result<f64> {
        s.map(|s| s.value)
            .ok_or_else(|| Error::Data(format!("params table has no `{name}` scalar")))
    }

    /// Linear interpolation of every parameter at `eps`. Refuses to
    /// extrapolate and fails if a column or scalar has not been estimated.
    pub fn at(&self, eps: f64) -> Result<PointParams> {
        self.point(eps, true)
    }

    /// Like [`at`](Self::at), but parameters that have not been estimated
    /// yet come out as NaN (`c_f_n` as 0). Used while the table is built.
    pub fn at_partial(&self, eps: f64) -> Result<PointParams> {
        self.point(eps, false)
    }

    fn point(&self, eps: f64, strict: bool) -> Result<PointParams> {
        let (lo, hi) = self.range();
        if !self.contains(eps) {
            return Err(Error::Range { eps, lo, hi });
        }
        let c = &self.columns;
        let column = |name: &str, col: &Option<Vec<f64>>| match self.column(name, col, eps) {
            Err(Error::Data(_)) if !strict && col.is_none() => Ok(f64::NAN),
            r => r,
        };
        let scalar = |name: &str, s: &Option<Scalar>| match Self::scalar(name, s) {
            Err(_) if !strict => Ok(f64::NAN),
            r => r,
        };
        let nu_bp = scalar("nu_bp", &self.nu_bp)?;
        let theta_bp = scalar("theta_bp", &self.theta_bp)?;
        Ok(PointParams {
            epsilon: eps,
            epsilon_star: self.epsilon_star,
            gamma_breve: column("gamma_breve", &c.gamma_breve)?,
            nu_breve: scalar("nu_breve", &self.nu_breve)?,
            theta_breve: scalar("theta_breve", &self.theta_breve)?,
            tau_start_breve: column("tau_start_breve", &c.tau_start_breve)?,
            tau_start_tilde: column("tau_start_tilde", &c.tau_start_tilde)?,
            tau_end_tilde: column("tau_end_tilde", &c.tau_end_tilde)?,
            v_pd: column("v_pd", &c.v_pd)?,
            v_bp: column("v_bp", &c.v_bp)?,
            i_start: column("i_start", &c.i_start)?,
            i_end: column("i_end", &c.i_end)?,
            gamma_bp: column("gamma_bp", &c.gamma_bp)?,
            nu_bp,
            theta_bp,
            nu_bp_window: self.nu_bp_window.map_or(nu_bp, |s| s.value),
            theta_bp_window: self.theta_bp_window.map_or(theta_bp, |s| s.value),
            c_f: column("c_f", &c.c_f)?,
            c_f_n: match self.c_f_n {
                Some(n) => n,
                None if !strict => 0,
                None => return Err(Error::Data("params table has no `c_f_n`".into())),
            },
            sigma2: scalar("sigma2", &self.sigma2)?,
        })
    }

    /// Checks positivity of every stored value and `τ̃_start < τ̃_end`.
    pub fn validate(&self) -> Result<()> {
        let c = &self.columns;
        let named = [
            ("v_bp", &c.v_bp),
            ("gamma_bp", &c.gamma_bp),
            ("gamma_breve", &c.gamma_breve),
            ("v_pd", &c.v_pd),
            ("c_f", &c.c_f),
            ("tau_end_tilde", &c.tau_end_tilde),
        ];
        for (name, col) in named {
            if let Some(v) = col {
                if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                    return Err(Error::Data(format!("column `{name}` holds non-positive value {bad}")));
                }
            }
        }
        for (name, col) in [
            ("i_start", &c.i_start),
            ("i_end", &c.i_end),
            ("tau_start_breve", &c.tau_start_breve),
            ("tau_start_tilde", &c.tau_start_tilde),
        ] {
            if let Some(v) = col {
                if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                    return Err(Error::Data(format!("column `{name}` holds negative value {bad}")));
                }
            }
        }
        if let (Some(s), Some(e)) = (&c.tau_start_tilde, &c.tau_end_tilde) {
            if s.iter().zip(e).any(|(a, b)| a >= b) {
                return Err(Error::Data("τ̃_start must precede τ̃_end at every knot".into()));
            }
        }
        for (name, s) in [
            ("nu_breve", &self.nu_breve),
            ("theta_breve", &self.theta_breve),
            ("nu_bp", &self.nu_bp),
            ("theta_bp", &self.theta_bp),
            ("nu_bp_window", &self.nu_bp_window),
            ("theta_bp_window", &self.theta_bp_window),
        ] {
            if let Some(s) = s {
                if !(s.value.is_finite() && s.value > 0.0) {
                    return Err(Error::Data(format!("scalar `{name}` = {} is not positive", s.value)));
                }
            }
        }
        if let Some(s) = &self.sigma2 {
            if !(s.value.is_finite() && s.value >= 0.0) {
                return Err(Error::Data(format!("scalar `sigma2` = {} is negative", s.value)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.schema_version > SCHEMA_VERSION {
            return Err(Error::Schema {
                found: v.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
