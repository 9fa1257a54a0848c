//! Flooding BP on the BEC, run as parallel peeling.
//!
//! In one flooding iteration every CN whose incoming messages are all known
//! except one resolves that VN. A CN message along an edge is known iff all
//! other edges of the CN carried known messages in the previous half
//! iteration, so the VNs recovered in iteration `l` are exactly the unknown
//! neighbours of CNs that had one unknown neighbour after iteration `l - 1`.
//! Tracking only those CNs makes each iteration cost proportional to the work
//! it does instead of the edge count.

use super::{DecoderMode, DecodingTrace, ErasurePattern, ErasureState, WindowConfig};
use crate::error::Result;
use crate::graph::TannerGraph;

/// Full-BP decoder. Runs until no CN has a single unknown neighbour, or for at
/// most `max_iters` iterations.
pub fn bp_full(graph: &TannerGraph, erasures: &ErasurePattern, max_iters: Option<usize>) -> DecodingTrace {
    let mut state = ErasureState::new(graph, erasures);
    let n = graph.spec().n as f64;
    let mut trace = DecodingTrace::empty(DecoderMode::FullBp);
    trace.initial_erased = state.remaining;

    let mut frontier: Vec<u32> = (0..graph.cn_count() as u32)
        .filter(|&c| state.cn_unknown[c as usize] == 1)
        .collect();
    let mut next = Vec::new();
    let mut batch = Vec::new();
    let limit = max_iters.unwrap_or(usize::MAX);
    let mut iter = 0;
    while iter < limit && state.remaining > 0 {
        batch.clear();
        for &c in &frontier {
            if state.cn_unknown[c as usize] == 1 {
                batch.push(state.cn_xor[c as usize]);
            }
        }
        if batch.is_empty() {
            break;
        }
        iter += 1;
        next.clear();
        let mut recovered = 0usize;
        for &v in &batch {
            if !state.erased[v as usize] {
                continue;
            }
            recovered += 1;
            state.recover(v, |c, k| {
                if k == 1 {
                    next.push(c);
                }
            });
        }
        trace.v_bp_per_iter.push(recovered as f64 / n);
        trace.p_left.push(state.p_left() as u32);
        std::mem::swap(&mut frontier, &mut next);
    }

    trace.stop_iteration = iter;
    trace.success = state.remaining == 0;
    trace.residual = state.residual();
    trace
}

/// One VN recovery inside the sliding window decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowEvent {
    pub iteration: usize,
    pub w_left: usize,
    pub cn_position: usize,
    pub vn_position: usize,
}

/// Sliding-window BP decoder. See [`bp_sliding_window_observed`].
pub fn bp_sliding_window(graph: &TannerGraph, erasures: &ErasurePattern, config: WindowConfig) -> Result<DecodingTrace> {
    bp_sliding_window_observed(graph, erasures, config, |_| {})
}

/// Sliding-window BP decoder reporting every VN recovery to `observer`.
///
/// The window covers CN positions `[W_L, W_L + W)`, clipped to the chain.
/// `I_in` iterations run at `W_L = 0`, then the window slides one position
/// and runs `I_s` iterations, until `W_L = L - 1` has been processed. VNs at
/// positions below `W_L` are frozen. The window is overtaken when it slides
/// past a position that still holds an unrecovered VN; decoding stops there.
/// Iterations without any degree-one CN in the window are skipped and
/// recorded as zero recoveries.
pub fn bp_sliding_window_observed(
    graph: &TannerGraph,
    erasures: &ErasurePattern,
    config: WindowConfig,
    mut observer: impl FnMut(WindowEvent),
) -> Result<DecodingTrace> {
    let l = graph.spec().l;
    config.validate(l)?;
    let mut state = ErasureState::new(graph, erasures);
    let n = graph.spec().n as f64;
    let m = graph.spec().m();
    let cn_positions = graph.cn_positions();
    let mut trace = DecodingTrace::empty(DecoderMode::SlidingWindow);
    trace.initial_erased = state.remaining;

    let mut frontier: Vec<u32> = Vec::new();
    let activate = |pos: usize, state: &ErasureState, frontier: &mut Vec<u32>| {
        if pos < cn_positions {
            for c in (pos * m)..((pos + 1) * m) {
                if state.cn_unknown[c] == 1 {
                    frontier.push(c as u32);
                }
            }
        }
    };
    for pos in 0..config.w {
        activate(pos, &state, &mut frontier);
    }

    let mut next = Vec::new();
    let mut batch: Vec<(u32, u32)> = Vec::new();
    let mut iter = 0usize;
    'phases: for w_left in 0..l {
        if w_left > 0 {
            if state.p_left() < w_left {
                trace.overtaken = true;
                break;
            }
            activate(w_left + config.w - 1, &state, &mut frontier);
        }
        let w_right = (w_left + config.w).min(cn_positions);
        let phase_iters = if w_left == 0 { config.i_in } else { config.i_s };
        for step in 0..phase_iters {
            if state.remaining == 0 {
                break 'phases;
            }
            batch.clear();
            for &c in &frontier {
                let cu = c as usize;
                let pos = cu / m;
                if pos < w_left || pos >= w_right || state.cn_unknown[cu] != 1 {
                    continue;
                }
                let v = state.cn_xor[cu];
                if graph.vn_position(v as usize) >= w_left {
                    batch.push((c, v));
                }
            }
            if batch.is_empty() {
                // nothing can change until the next slide
                let idle = phase_iters - step;
                trace.v_bp_per_iter.extend(std::iter::repeat_n(0.0, idle));
                trace.p_left.extend(std::iter::repeat_n(state.p_left() as u32, idle));
                iter += idle;
                frontier.clear();
                break;
            }
            iter += 1;
            next.clear();
            let mut recovered = 0usize;
            for &(c, v) in &batch {
                if !state.erased[v as usize] {
                    continue;
                }
                recovered += 1;
                observer(WindowEvent {
                    iteration: iter,
                    w_left,
                    cn_position: c as usize / m,
                    vn_position: graph.vn_position(v as usize),
                });
                state.recover(v, |c2, k| {
                    if k == 1 {
                        let p = c2 as usize / m;
                        if p >= w_left && p < w_right {
                            next.push(c2);
                        }
                    }
                });
            }
            trace.v_bp_per_iter.push(recovered as f64 / n);
            trace.p_left.push(state.p_left() as u32);
            std::mem::swap(&mut frontier, &mut next);
        }
    }

    // trailing idle iterations carry no information
    while trace.v_bp_per_iter.last() == Some(&0.0) {
        trace.v_bp_per_iter.pop();
        trace.p_left.pop();
    }
    trace.stop_iteration = trace.v_bp_per_iter.len();
    trace.success = state.remaining == 0;
    trace.residual = state.residual();
    Ok(trace)
}
