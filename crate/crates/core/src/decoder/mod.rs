//! Binary erasure channel and the three erasure decoders.
//!
//! Over the BEC a message is either known or erased, and the value of a
//! known bit never matters for decodability, so the decoders track erasure
//! status only. All three decoders share [`ErasureState`]: for every CN the
//! number of still-erased neighbours and the XOR of their indices, which
//! names the single unknown neighbour of a degree-one CN in O(1).

mod bp;
mod peeling;

pub use bp::{bp_full, bp_sliding_window, bp_sliding_window_observed, WindowEvent};
pub use peeling::{peel, PeelOptions};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TannerGraph;

/// Which VNs the channel erased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasurePattern {
    erased: Vec<bool>,
}

impl ErasurePattern {
    pub fn from_bits(erased: Vec<bool>) -> Self {
        ErasurePattern { erased }
    }

    pub fn none(len: usize) -> Self {
        ErasurePattern { erased: vec![false; len] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.erased
    }

    pub fn len(&self) -> usize {
        self.erased.len()
    }

    pub fn is_empty(&self) -> bool {
        self.erased.is_empty()
    }

    pub fn count(&self) -> usize {
        self.erased.iter().filter(|&&e| e).count()
    }
}

/// Erases every bit independently with probability `epsilon`.
///
/// Bit `v` is erased iff the `v`-th uniform draw is below `epsilon`, so two
/// patterns drawn from the same stream at different erasure probabilities are
/// nested.
pub fn transmit_bec<R: Rng + ?Sized>(graph: &TannerGraph, epsilon: f64, rng: &mut R) -> Result<ErasurePattern> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Spec(format!("erasure probability {epsilon} outside [0, 1]")));
    }
    let erased = (0..graph.vn_count()).map(|_| rng.random::<f64>() < epsilon).collect();
    Ok(ErasurePattern { erased })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderMode {
    Peeling,
    FullBp,
    SlidingWindow,
}

/// Per-trial record produced by every decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingTrace {
    pub mode: DecoderMode,
    pub success: bool,
    /// `(tau_pd, r1)` samples; peeling only.
    pub r1_trajectory: Vec<(f64, f64)>,
    /// VNs recovered in each BP iteration, divided by `N`.
    pub v_bp_per_iter: Vec<f64>,
    /// Leftmost position holding an unrecovered VN after each BP iteration
    /// (the number of positions if there is none).
    pub p_left: Vec<u32>,
    /// Erased VN count per position, sampled during peeling.
    pub erased_per_position_history: Option<Vec<Vec<u32>>>,
    /// Sliding window only: the window froze an unrecovered position.
    pub overtaken: bool,
    /// Peeling steps, or BP iterations, performed.
    pub stop_iteration: usize,
    /// Channel erasures before decoding.
    pub initial_erased: usize,
    /// Unrecovered VN indices, ascending.
    pub residual: Vec<u32>,
}

impl DecodingTrace {
    fn empty(mode: DecoderMode) -> Self {
        DecodingTrace {
            mode,
            success: true,
            r1_trajectory: Vec::new(),
            v_bp_per_iter: Vec::new(),
            p_left: Vec::new(),
            erased_per_position_history: None,
            overtaken: false,
            stop_iteration: 0,
            initial_erased: 0,
            residual: Vec::new(),
        }
    }

    /// Writes the per-trial CSV dump: `tau_pd,r1` for peeling and
    /// `iter,v_bp,p_left` for the BP decoders.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        match self.mode {
            DecoderMode::Peeling => {
                writeln!(out, "tau_pd,r1")?;
                for (t, r) in &self.r1_trajectory {
                    writeln!(out, "{t},{r}")?;
                }
            }
            _ => {
                writeln!(out, "iter,v_bp,p_left")?;
                for (i, (v, p)) in self.v_bp_per_iter.iter().zip(&self.p_left).enumerate() {
                    writeln!(out, "{},{v},{p}", i + 1)?;
                }
            }
        }
        Ok(())
    }
}

/// Iteration schedule of the sliding window decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window size in positions.
    pub w: usize,
    /// Iterations before the first slide.
    pub i_in: usize,
    /// Iterations per subsequent slide.
    pub i_s: usize,
}

impl WindowConfig {
    pub fn validate(&self, l: usize) -> Result<()> {
        if self.w == 0 || self.w > l {
            return Err(Error::Spec(format!("window size W = {} must lie in 1..={l}", self.w)));
        }
        if self.i_in == 0 || self.i_s == 0 {
            return Err(Error::Spec("I_in and I_s must be positive".into()));
        }
        Ok(())
    }

    /// Total iteration budget `I_in + (L - 1) I_s`.
    pub fn budget(&self, l: usize) -> usize {
        self.i_in + (l - 1) * self.i_s
    }
}

/// True iff an unrecovered bit remains in a position covered by the
/// evaluation mask.
pub fn frame_error(trace: &DecodingTrace, graph: &TannerGraph) -> bool {
    let mask = graph.eval_mask();
    trace.residual.iter().any(|&v| mask[graph.vn_position(v as usize)])
}

/// Mutable erasure bookkeeping shared by the decoders.
pub(crate) struct ErasureState<'g> {
    pub graph: &'g TannerGraph,
    pub erased: Vec<bool>,
    pub cn_unknown: Vec<u32>,
    pub cn_xor: Vec<u32>,
    pub per_position: Vec<u32>,
    pub remaining: usize,
    left: usize,
}

impl<'g> ErasureState<'g> {
    pub fn new(graph: &'g TannerGraph, erasures: &ErasurePattern) -> Self {
        assert_eq!(erasures.len(), graph.vn_count(), "erasure pattern does not match the graph");
        let mut cn_unknown = vec![0u32; graph.cn_count()];
        let mut cn_xor = vec![0u32; graph.cn_count()];
        let mut per_position = vec![0u32; graph.vn_positions()];
        let mut remaining = 0;
        for (v, &e) in erasures.bits().iter().enumerate() {
            if e {
                remaining += 1;
                per_position[graph.vn_position(v)] += 1;
                for &c in graph.vn_neighbors(v) {
                    cn_unknown[c as usize] += 1;
                    cn_xor[c as usize] ^= v as u32;
                }
            }
        }
        let mut state = ErasureState {
            graph,
            erased: erasures.bits().to_vec(),
            cn_unknown,
            cn_xor,
            per_position,
            remaining,
            left: 0,
        };
        state.advance_left();
        state
    }

    fn advance_left(&mut self) {
        while self.left < self.per_position.len() && self.per_position[self.left] == 0 {
            self.left += 1;
        }
    }

    /// Leftmost position with an unrecovered VN, or the number of positions.
    pub fn p_left(&self) -> usize {
        self.left
    }

    /// Marks `v` recovered and updates its CNs; calls `on_cn` for every CN
    /// whose unknown count changed, with the new count.
    #[inline]
    pub fn recover(&mut self, v: u32, mut on_cn: impl FnMut(u32, u32)) {
        let vu = v as usize;
        debug_assert!(self.erased[vu]);
        self.erased[vu] = false;
        self.remaining -= 1;
        let pos = self.graph.vn_position(vu);
        self.per_position[pos] -= 1;
        if pos == self.left {
            self.advance_left();
        }
        for &c in self.graph.vn_neighbors(vu) {
            let cu = c as usize;
            self.cn_unknown[cu] -= 1;
            self.cn_xor[cu] ^= v;
            on_cn(c, self.cn_unknown[cu]);
        }
    }

    pub fn residual(&self) -> Vec<u32> {
        self.erased.iter().enumerate().filter(|(_, &e)| e).map(|(v, _)| v as u32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sample_graph, EnsembleSpec, Termination};
    use crate::rng::{domain, substream};

    #[test]
    fn channel_extremes_and_range() {
        let g = sample_graph(&EnsembleSpec::new(3, 6, 10, 6, Termination::Terminated).unwrap(), 1).unwrap();
        let mut rng = substream(1, domain::CHANNEL, 0);
        assert_eq!(transmit_bec(&g, 0.0, &mut rng).unwrap().count(), 0);
        assert_eq!(transmit_bec(&g, 1.0, &mut rng).unwrap().count(), g.vn_count());
        assert!(transmit_bec(&g, 1.5, &mut rng).is_err());
        assert!(transmit_bec(&g, -0.1, &mut rng).is_err());
    }

    #[test]
    fn channel_concentration() {
        let g = sample_graph(&EnsembleSpec::new(5, 10, 50, 1000, Termination::Terminated).unwrap(), 1).unwrap();
        let n = g.vn_count() as f64;
        let band = 3.0 * (0.25 / n).sqrt();
        let mut inside = 0;
        for t in 0..100 {
            let mut rng = substream(2, domain::CHANNEL, t);
            let frac = transmit_bec(&g, 0.5, &mut rng).unwrap().count() as f64 / n;
            if (frac - 0.5).abs() <= band {
                inside += 1;
            }
        }
        // a 3-sigma band holds 99.7% of trials
        assert!(inside >= 97, "{inside} of 100 trials inside the band");
    }

    #[test]
    fn nested_patterns_under_common_stream() {
        let g = sample_graph(&EnsembleSpec::new(3, 6, 10, 60, Termination::Terminated).unwrap(), 1).unwrap();
        let lo = transmit_bec(&g, 0.3, &mut substream(5, domain::CHANNEL, 0)).unwrap();
        let hi = transmit_bec(&g, 0.4, &mut substream(5, domain::CHANNEL, 0)).unwrap();
        assert!(lo.bits().iter().zip(hi.bits()).all(|(&a, &b)| !a || b));
    }
}
