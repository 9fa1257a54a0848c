//! Tanner graphs of the semi-structured `(dv, dc, L, N)` SC-LDPC ensemble.
//!
//! Position `i` holds `N` variable nodes (VNs) and `M = dv N / dc` check
//! nodes (CNs). A VN at position `i` has exactly one edge into each CN
//! position `i ..= i + dv - 1` that exists. The edges arriving at one CN
//! position are spread over that position's `dc M` sockets by a single
//! uniform random permutation, so any given edge lands on a uniformly chosen
//! CN and a CN may collect its edges from any mix of VN positions.
//!
//! VN `v` lives at position `v / N`, CN `c` at position `c / M`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, substream};

/// How the right end of the chain is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `dv - 1` extra CN-only positions close the chain.
    Terminated,
    /// Edges that would leave the chain are deleted.
    Truncated,
    /// Finite stand-in for the semi-infinite chain: a truncated chain of
    /// `l_prime + margin` positions whose errors are only counted on the
    /// first `l_prime` positions.
    UnterminatedEval { l_prime: usize, margin: usize },
}

impl Termination {
    /// Unterminated evaluation over `l_prime` positions with the default
    /// right margin of `max(2 W, 20)` positions.
    pub fn unterminated(l_prime: usize, window: Option<usize>) -> Self {
        let margin = window.map_or(20, |w| (2 * w).max(20));
        Termination::UnterminatedEval { l_prime, margin }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Terminated => write!(f, "terminated"),
            Termination::Truncated => write!(f, "truncated"),
            Termination::UnterminatedEval { l_prime, margin } => {
                write!(f, "unterminated:{l_prime}:{margin}")
            }
        }
    }
}

/// Parameters of one code ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub dv: usize,
    pub dc: usize,
    /// Chain length (number of VN positions).
    pub l: usize,
    /// VNs per position.
    pub n: usize,
    pub termination: Termination,
}

impl EnsembleSpec {
    pub fn new(dv: usize, dc: usize, l: usize, n: usize, termination: Termination) -> Result<Self> {
        let spec = EnsembleSpec { dv, dc, l, n, termination };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dv < 2 {
            return Err(Error::Spec(format!("dv = {} must be at least 2", self.dv)));
        }
        if self.dc <= self.dv {
            return Err(Error::Spec(format!("dc = {} must exceed dv = {}", self.dc, self.dv)));
        }
        if self.l == 0 || self.n == 0 {
            return Err(Error::Spec("L and N must be positive".into()));
        }
        if (self.n * self.dv) % self.dc != 0 {
            return Err(Error::Spec(format!(
                "M = dv N / dc = {} * {} / {} is not an integer",
                self.dv, self.n, self.dc
            )));
        }
        if let Termination::UnterminatedEval { l_prime, .. } = self.termination {
            if l_prime == 0 || l_prime > self.l {
                return Err(Error::Spec(format!("L' = {l_prime} must lie in 1..={}", self.l)));
            }
        }
        if self.vn_positions() * self.n >= u32::MAX as usize {
            return Err(Error::Spec("graph too large for 32-bit node indices".into()));
        }
        Ok(())
    }

    /// CNs per position.
    pub fn m(&self) -> usize {
        self.n * self.dv / self.dc
    }

    /// Number of VN positions actually materialized.
    pub fn vn_positions(&self) -> usize {
        match self.termination {
            Termination::UnterminatedEval { l_prime, margin } => l_prime + margin,
            _ => self.l,
        }
    }

    /// Number of CN positions actually materialized.
    pub fn cn_positions(&self) -> usize {
        match self.termination {
            Termination::Terminated => self.l + self.dv - 1,
            _ => self.vn_positions(),
        }
    }

    pub fn with_termination(mut self, termination: Termination) -> Self {
        self.termination = termination;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }
}

/// An immutable Tanner graph in compressed adjacency form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    spec: EnsembleSpec,
    seed: u64,
    vn_offsets: Vec<u32>,
    vn_adj: Vec<u32>,
    cn_offsets: Vec<u32>,
    cn_adj: Vec<u32>,
    eval_mask: Vec<bool>,
}

impl TannerGraph {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vn_count(&self) -> usize {
        self.vn_offsets.len() - 1
    }

    pub fn cn_count(&self) -> usize {
        self.cn_offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.vn_adj.len()
    }

    pub fn vn_positions(&self) -> usize {
        self.spec.vn_positions()
    }

    pub fn cn_positions(&self) -> usize {
        self.spec.cn_positions()
    }

    #[inline]
    pub fn vn_position(&self, v: usize) -> usize {
        v / self.spec.n
    }

    #[inline]
    pub fn cn_position(&self, c: usize) -> usize {
        c / self.spec.m()
    }

    /// CN neighbours of VN `v`, ordered by CN position.
    #[inline]
    pub fn vn_neighbors(&self, v: usize) -> &[u32] {
        &self.vn_adj[self.vn_offsets[v] as usize..self.vn_offsets[v + 1] as usize]
    }

    /// VN neighbours of CN `c`, in increasing VN order.
    #[inline]
    pub fn cn_neighbors(&self, c: usize) -> &[u32] {
        &self.cn_adj[self.cn_offsets[c] as usize..self.cn_offsets[c + 1] as usize]
    }

    /// Positions whose bits count towards a frame error.
    pub fn eval_mask(&self) -> &[bool] {
        &self.eval_mask
    }

    /// Writes the debug edge-list format: a header `dv dc L N termination seed`
    /// followed by one `vn_index cn_index` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let s = &self.spec;
        writeln!(out, "{} {} {} {} {} {}", s.dv, s.dc, s.l, s.n, s.termination, self.seed)?;
        for v in 0..self.vn_count() {
            for &c in self.vn_neighbors(v) {
                writeln!(out, "{v} {c}")?;
            }
        }
        Ok(())
    }
}

/// Draws one graph from the ensemble. The result is a pure function of
/// `(spec, seed)`.
pub fn sample_graph(spec: &EnsembleSpec, seed: u64) -> Result<TannerGraph> {
    spec.validate()?;
    let mut rng = substream(seed, domain::GRAPH, 0);
    let n = spec.n;
    let m = spec.m();
    let dv = spec.dv;
    let dc = spec.dc;
    let vpos = spec.vn_positions();
    let cpos = spec.cn_positions();

    let vn_degree = |q: usize| (q + dv).min(cpos) - q;
    let mut vn_offsets = Vec::with_capacity(vpos * n + 1);
    vn_offsets.push(0u32);
    let mut acc = 0u32;
    for q in 0..vpos {
        let d = vn_degree(q) as u32;
        for _ in 0..n {
            acc += d;
            vn_offsets.push(acc);
        }
    }
    let mut vn_adj = vec![0u32; acc as usize];

    let sockets = dc * m;
    let mut perm: Vec<u32> = (0..sockets as u32).collect();
    for p in 0..cpos {
        let q_lo = (p + 1).saturating_sub(dv);
        let q_hi = p.min(vpos - 1);
        let incoming = (q_hi + 1 - q_lo) * n;
        debug_assert!(incoming <= sockets);
        // partial Fisher-Yates: the first `incoming` entries become a uniform
        // random injection of the incoming edges into the sockets
        for k in 0..incoming {
            let r = rng.random_range(k..sockets);
            perm.swap(k, r);
        }
        let mut k = 0;
        for q in q_lo..=q_hi {
            let j = p - q;
            for v in q * n..(q + 1) * n {
                let cn = (p * m) as u32 + perm[k] / dc as u32;
                vn_adj[vn_offsets[v] as usize + j] = cn;
                k += 1;
            }
        }
    }

    let cn_count = cpos * m;
    let mut cn_offsets = vec![0u32; cn_count + 1];
    for &c in &vn_adj {
        cn_offsets[c as usize + 1] += 1;
    }
    for c in 0..cn_count {
        cn_offsets[c + 1] += cn_offsets[c];
    }
    let mut fill = cn_offsets.clone();
    let mut cn_adj = vec![0u32; vn_adj.len()];
    for v in 0..vpos * n {
        for &c in &vn_adj[vn_offsets[v] as usize..vn_offsets[v + 1] as usize] {
            cn_adj[fill[c as usize] as usize] = v as u32;
            fill[c as usize] += 1;
        }
    }

    let eval_mask = match spec.termination {
        Termination::UnterminatedEval { l_prime, .. } => (0..vpos).map(|q| q < l_prime).collect(),
        _ => vec![true; vpos],
    };

    Ok(TannerGraph {
        spec: *spec,
        seed,
        vn_offsets,
        vn_adj,
        cn_offsets,
        cn_adj,
        eval_mask,
    })
}

/// Degree histograms per spatial position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeAudit {
    /// `vn[i][d]` = number of VNs at position `i` with degree `d`.
    pub vn: Vec<BTreeMap<usize, usize>>,
    /// `cn[i][d]` = number of CNs at position `i` with degree `d`.
    pub cn: Vec<BTreeMap<usize, usize>>,
    pub vn_degree_sum: usize,
    pub cn_degree_sum: usize,
}

impl DegreeAudit {
    pub fn mean_cn_degree(&self) -> f64 {
        let count: usize = self.cn.iter().flat_map(|h| h.values()).sum();
        self.cn_degree_sum as f64 / count as f64
    }
}

pub fn audit_graph(graph: &TannerGraph) -> DegreeAudit {
    let mut vn = vec![BTreeMap::new(); graph.vn_positions()];
    let mut cn = vec![BTreeMap::new(); graph.cn_positions()];
    let mut vn_degree_sum = 0;
    let mut cn_degree_sum = 0;
    for v in 0..graph.vn_count() {
        let d = graph.vn_neighbors(v).len();
        vn_degree_sum += d;
        *vn[graph.vn_position(v)].entry(d).or_insert(0) += 1;
    }
    for c in 0..graph.cn_count() {
        let d = graph.cn_neighbors(c).len();
        cn_degree_sum += d;
        *cn[graph.cn_position(c)].entry(d).or_insert(0) += 1;
    }
    DegreeAudit {
        vn,
        cn,
        vn_degree_sum,
        cn_degree_sum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dv: usize, dc: usize, l: usize, n: usize, t: Termination) -> EnsembleSpec {
        EnsembleSpec::new(dv, dc, l, n, t).unwrap()
    }

    #[test]
    fn terminated_counts() {
        let g = sample_graph(&spec(3, 6, 10, 6, Termination::Terminated), 1).unwrap();
        assert_eq!(g.cn_count(), 36);
        assert_eq!(g.edge_count(), 180);
        let a = audit_graph(&g);
        assert!(a.vn.iter().all(|h| h.keys().all(|&d| d == 3)));
        assert!((a.mean_cn_degree() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn large_terminated_counts() {
        let g = sample_graph(&spec(5, 10, 50, 1000, Termination::Terminated), 9).unwrap();
        assert_eq!(g.spec().m(), 500);
        assert_eq!(g.vn_count(), 50_000);
        assert_eq!(g.cn_count(), 27_000);
    }

    #[test]
    fn truncated_tail_degrees() {
        let g = sample_graph(&spec(3, 6, 4, 6, Termination::Truncated), 5).unwrap();
        // brute-force traversal of the edge list rather than the audit helper
        let mut deg = vec![0usize; g.vn_count()];
        for c in 0..g.cn_count() {
            for &v in g.cn_neighbors(c) {
                deg[v as usize] += 1;
            }
        }
        for v in 0..g.vn_count() {
            let expect = match g.vn_position(v) {
                0 | 1 => 3,
                2 => 2,
                _ => 1,
            };
            assert_eq!(deg[v], expect, "vn {v}");
        }
        let big = sample_graph(&spec(5, 10, 50, 1000, Termination::Truncated), 5).unwrap();
        let a = audit_graph(&big);
        assert_eq!(a.vn[49].keys().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn invalid_specs() {
        assert!(EnsembleSpec::new(3, 6, 10, 5, Termination::Terminated).is_err());
        assert!(EnsembleSpec::new(4, 4, 10, 4, Termination::Terminated).is_err());
        assert!(EnsembleSpec::new(3, 6, 10, 6, Termination::UnterminatedEval { l_prime: 11, margin: 2 }).is_err());
    }

    #[test]
    fn unterminated_layout() {
        let s = spec(3, 6, 30, 6, Termination::UnterminatedEval { l_prime: 10, margin: 20 });
        let g = sample_graph(&s, 3).unwrap();
        assert_eq!(g.vn_positions(), 30);
        assert_eq!(g.cn_positions(), 30);
        assert_eq!(g.eval_mask().iter().filter(|&&b| b).count(), 10);
        assert!(g.eval_mask()[9] && !g.eval_mask()[10]);
    }

    #[test]
    fn edge_list_header() {
        let g = sample_graph(&spec(3, 6, 10, 6, Termination::Terminated), 42).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "3 6 10 6 terminated 42");
        assert_eq!(lines.count(), 180);
    }
}
