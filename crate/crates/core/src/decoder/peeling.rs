use rand::Rng;

use super::{DecoderMode, DecodingTrace, ErasurePattern, ErasureState};
use crate::graph::TannerGraph;

/// Sampling of the peeling trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeelOptions {
    /// Record `r1` every this many steps (0: no trajectory).
    pub r1_stride: usize,
    /// Record the per-position erasure counts every this many steps (0: never).
    pub history_stride: usize,
}

impl Default for PeelOptions {
    fn default() -> Self {
        PeelOptions {
            r1_stride: 1,
            history_stride: 0,
        }
    }
}

/// Degree-one CN set with O(1) insert, remove and uniform sampling.
struct DegreeOneSet {
    items: Vec<u32>,
    slot: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl DegreeOneSet {
    fn new(cn_count: usize) -> Self {
        DegreeOneSet {
            items: Vec::new(),
            slot: vec![ABSENT; cn_count],
        }
    }

    fn insert(&mut self, c: u32) {
        if self.slot[c as usize] == ABSENT {
            self.slot[c as usize] = self.items.len() as u32;
            self.items.push(c);
        }
    }

    fn remove(&mut self, c: u32) {
        let s = self.slot[c as usize];
        if s == ABSENT {
            return;
        }
        let last = self.items.pop().unwrap();
        if last != c {
            self.items[s as usize] = last;
            self.slot[last as usize] = s;
        }
        self.slot[c as usize] = ABSENT;
    }
}

/// Peeling decoder: repeatedly picks a degree-one CN uniformly at random and
/// recovers its unknown VN. One step is one recovered VN, and the decoding
/// time is `tau_pd = step / N`.
pub fn peel<R: Rng + ?Sized>(graph: &TannerGraph, erasures: &ErasurePattern, options: PeelOptions, rng: &mut R) -> DecodingTrace {
    let mut state = ErasureState::new(graph, erasures);
    let n = graph.spec().n as f64;
    let mut trace = DecodingTrace::empty(DecoderMode::Peeling);
    trace.initial_erased = state.remaining;

    let mut ripple = DegreeOneSet::new(graph.cn_count());
    for (c, &k) in state.cn_unknown.iter().enumerate() {
        if k == 1 {
            ripple.insert(c as u32);
        }
    }
    let mut history = (options.history_stride > 0).then(Vec::new);

    let mut step = 0usize;
    loop {
        if options.r1_stride > 0 && (step % options.r1_stride == 0 || ripple.items.is_empty()) {
            trace.r1_trajectory.push((step as f64 / n, ripple.items.len() as f64 / n));
        }
        if let Some(h) = history.as_mut() {
            if step % options.history_stride == 0 || ripple.items.is_empty() {
                h.push(state.per_position.clone());
            }
        }
        if ripple.items.is_empty() {
            break;
        }
        let c = ripple.items[rng.random_range(0..ripple.items.len())];
        let v = state.cn_xor[c as usize];
        state.recover(v, |c2, k| match k {
            1 => ripple.insert(c2),
            0 => ripple.remove(c2),
            _ => {}
        });
        step += 1;
    }

    trace.stop_iteration = step;
    trace.success = state.remaining == 0;
    trace.residual = state.residual();
    trace.erased_per_position_history = history;
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::transmit_bec;
    use crate::graph::{sample_graph, EnsembleSpec, Termination};
    use crate::rng::{domain, substream};

    #[test]
    fn set_operations() {
        let mut s = DegreeOneSet::new(5);
        s.insert(3);
        s.insert(1);
        s.insert(3);
        assert_eq!(s.items.len(), 2);
        s.remove(3);
        s.remove(3);
        assert_eq!(s.items, vec![1]);
        s.insert(4);
        s.remove(1);
        assert_eq!(s.items, vec![4]);
    }

    #[test]
    fn low_erasure_decodes() {
        let spec = EnsembleSpec::new(3, 6, 20, 200, Termination::Terminated).unwrap();
        let g = sample_graph(&spec, 3).unwrap();
        let e = transmit_bec(&g, 0.3, &mut substream(3, domain::CHANNEL, 0)).unwrap();
        let t = peel(&g, &e, PeelOptions::default(), &mut substream(3, domain::PEELING, 0));
        assert!(t.success);
        assert_eq!(t.stop_iteration, e.count());
        assert_eq!(t.r1_trajectory.len(), e.count() + 1);
        assert_eq!(t.r1_trajectory.last().unwrap().1, 0.0);
    }

    #[test]
    fn history_tracks_erasures() {
        let spec = EnsembleSpec::new(3, 6, 10, 100, Termination::Terminated).unwrap();
        let g = sample_graph(&spec, 3).unwrap();
        let e = transmit_bec(&g, 0.4, &mut substream(4, domain::CHANNEL, 0)).unwrap();
        let opts = PeelOptions {
            r1_stride: 10,
            history_stride: 10,
        };
        let t = peel(&g, &e, opts, &mut substream(4, domain::PEELING, 0));
        let h = t.erased_per_position_history.unwrap();
        assert_eq!(h[0].iter().map(|&x| x as usize).sum::<usize>(), e.count());
        let last: usize = h.last().unwrap().iter().map(|&x| x as usize).sum();
        assert_eq!(last, t.residual.len());
        for (k, snap) in h.iter().enumerate().take(h.len() - 1) {
            let total: usize = snap.iter().map(|&x| x as usize).sum();
            assert_eq!(total, e.count() - 10 * k);
        }
    }
}
