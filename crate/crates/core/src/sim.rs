//! Monte-Carlo FER estimation.
//!
//! Frame `f` of a run with seed `s` uses graph seed `mix(s, f)` (or `s` for
//! every frame with a fixed graph) and channel stream `(s, CHANNEL, f)`, so
//! outcomes do not depend on the worker count and two runs that differ only
//! in the decoder see the same frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{bp_full, bp_sliding_window, frame_error, transmit_bec, WindowConfig};
use crate::error::{Error, Result};
use crate::graph::{sample_graph, EnsembleSpec, TannerGraph};
use crate::rng::{domain, mix, substream};
use crate::stats::wilson_interval;

/// Normal quantile of the reported 95% interval.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    /// Full BP with at most `I` iterations.
    FullBp(usize),
    SlidingWindow(WindowConfig),
    /// Full BP to its fixed point.
    Unlimited,
}

impl DecoderKind {
    pub fn validate(&self, spec: &EnsembleSpec) -> Result<()> {
        match self {
            DecoderKind::FullBp(0) => Err(Error::Spec("iteration budget must be positive".into())),
            DecoderKind::SlidingWindow(cfg) => cfg.validate(spec.l),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec: EnsembleSpec,
    pub decoder: DecoderKind,
    pub frames: usize,
    /// Stop once this many frame errors were seen (0: never).
    pub max_frame_errors: usize,
    pub seed: u64,
    pub fixed_graph: bool,
}

/// Empirical FER at one erasure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FerPoint {
    pub epsilon: f64,
    /// Frames actually decoded.
    pub frames: usize,
    pub errors: usize,
    pub fer: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Decodes frame `frame` and reports whether it is in error.
pub fn run_frame(cfg: &SimConfig, graph: Option<&TannerGraph>, epsilon: f64, frame: u64) -> Result<bool> {
    let owned;
    let g = match graph {
        Some(g) => g,
        None => {
            owned = sample_graph(&cfg.spec, mix(cfg.seed, frame))?;
            &owned
        }
    };
    let erasures = transmit_bec(g, epsilon, &mut substream(cfg.seed, domain::CHANNEL, frame))?;
    let trace = match cfg.decoder {
        DecoderKind::FullBp(i) => bp_full(g, &erasures, Some(i)),
        DecoderKind::Unlimited => bp_full(g, &erasures, None),
        DecoderKind::SlidingWindow(w) => bp_sliding_window(g, &erasures, w)?,
    };
    Ok(frame_error(&trace, g))
}

/// Per-frame outcomes for frames `0..count`.
pub fn frame_outcomes(cfg: &SimConfig, epsilon: f64, count: usize) -> Result<Vec<bool>> {
    let fixed = if cfg.fixed_graph {
        Some(sample_graph(&cfg.spec, cfg.seed)?)
    } else {
        None
    };
    (0..count as u64)
        .into_par_iter()
        .map(|f| run_frame(cfg, fixed.as_ref(), epsilon, f))
        .collect()
}

/// Simulates frames in order until `frames` were run or `max_frame_errors`
/// errors were seen. Frames are decoded in parallel chunks, and the stop is
/// applied at the exact frame that reached the error limit.
pub fn simulate_fer(cfg: &SimConfig, epsilon: f64) -> Result<FerPoint> {
    if cfg.frames == 0 {
        return Err(Error::Spec("frames must be positive".into()));
    }
    cfg.spec.validate()?;
    cfg.decoder.validate(&cfg.spec)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Spec(format!("erasure probability {epsilon} outside [0, 1]")));
    }
    let fixed = if cfg.fixed_graph {
        Some(sample_graph(&cfg.spec, cfg.seed)?)
    } else {
        None
    };
    let chunk = (rayon::current_num_threads() * 16).max(64);
    let (mut run, mut errors) = (0usize, 0usize);
    'outer: while run < cfg.frames {
        let end = (run + chunk).min(cfg.frames);
        let outcomes: Vec<bool> = (run as u64..end as u64)
            .into_par_iter()
            .map(|f| run_frame(cfg, fixed.as_ref(), epsilon, f))
            .collect::<Result<_>>()?;
        for e in outcomes {
            run += 1;
            errors += e as usize;
            if cfg.max_frame_errors > 0 && errors >= cfg.max_frame_errors {
                break 'outer;
            }
        }
    }
    let (ci_low, ci_high) = wilson_interval(errors as u64, run as u64, Z95);
    Ok(FerPoint {
        epsilon,
        frames: run,
        errors,
        fer: errors as f64 / run as f64,
        ci_low,
        ci_high,
    })
}

/// Writes `epsilon,frames,errors,fer,ci_low,ci_high` rows.
pub fn write_fer_csv<W: std::io::Write>(points: &[FerPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epsilon,frames,errors,fer,ci_low,ci_high")?;
    for p in points {
        writeln!(out, "{},{},{},{},{},{}", p.epsilon, p.frames, p.errors, p.fer, p.ci_low, p.ci_high)?;
    }
    Ok(())
}
