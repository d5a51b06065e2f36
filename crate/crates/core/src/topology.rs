//! Communication graphs, doubly stochastic mixing matrices and B-connected
//! time-varying schedules.
//!
//! All objects here are immutable once built. Graphs always carry a self-loop
//! on every vertex; the degree reported by [`Graph::degree`] excludes it.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Tolerance on row/column sums and symmetry of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Undirected graph on vertices `0..n` with a self-loop on every vertex.
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<BTreeSet<usize>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n())
            .field("edges", &self.edges())
            .finish()
    }
}

impl Graph {
    /// Graph with only self-loops.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("graph needs at least one vertex".into()));
        }
        let adj = (0..n).map(|i| BTreeSet::from([i])).collect();
        Ok(Self { adj })
    }

    /// Builds a graph from undirected pairs; self-loops are implicit and
    /// duplicates are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidSize(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            g.adj[i].insert(j);
            g.adj[j].insert(i);
        }
        Ok(g)
    }

    /// Cycle `0-1-...-(n-1)-0`. For `n <= 3` this is the complete graph.
    pub fn ring(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Star with vertex 0 as the centre.
    pub fn star(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|j| (0, j)))
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    /// Neighbours of `i`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].contains(&j)
    }

    /// Number of neighbours other than `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len() - 1
    }

    /// Undirected edges `(i, j)` with `i < j` (self-loops omitted).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }

    /// Union of edge sets.
    pub fn union(&self, other: &Graph) -> Result<Graph> {
        if self.n() != other.n() {
            return Err(Error::Shape {
                expected: self.n(),
                got: other.n(),
            });
        }
        let adj = self
            .adj
            .iter()
            .zip(&other.adj)
            .map(|(a, b)| a.union(b).copied().collect())
            .collect();
        Ok(Graph { adj })
    }

    /// Parses an edge list: one `i j` pair per line, 0-indexed. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse_edge_list(n: usize, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|s| s.parse().ok()).ok_or_else(|| {
                    Error::Config(format!("edge list line {}: expected `i j`", lineno + 1))
                })
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Config(format!(
                    "edge list line {}: trailing tokens",
                    lineno + 1
                )));
            }
            edges.push((i, j));
        }
        Self::from_edges(n, edges)
    }
}

/// Row-sparse view of a mixing matrix used in the consensus step.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

impl GossipWeights {
    fn from_dense(w: &DMatrix<f64>) -> Self {
        let rows = (0..w.nrows())
            .map(|i| {
                (0..w.ncols())
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Nonzero entries `(j, W_ij)` of row `i`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

/// Symmetric doubly stochastic matrix respecting a graph's sparsity, with its
/// exact spectral gap.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    sparse: GossipWeights,
    rho: f64,
}

impl MixingMatrix {
    /// Validates `weights` and computes its spectral gap. Fails when the
    /// matrix is not symmetric doubly stochastic or the gap is zero.
    pub fn from_dense(weights: DMatrix<f64>) -> Result<Self> {
        let rho = spectral_gap(&weights)?;
        let sparse = GossipWeights::from_dense(&weights);
        Ok(Self {
            weights,
            sparse,
            rho,
        })
    }

    fn for_graph(g: &Graph, weights: DMatrix<f64>) -> Result<Self> {
        check_sparsity(g, &weights)?;
        if !g.is_connected() {
            return Err(Error::NotConnected {
                components: g.components(),
            });
        }
        Self::from_dense(weights)
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn gossip(&self) -> &GossipWeights {
        &self.sparse
    }

    /// Spectral gap: `1 - ||W - 11ᵀ/n||₂`, in `(0, 1]`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }
}

/// `W_ij = 1/deg` on edges, where `deg` counts the self-loop. Requires a
/// regular graph.
pub fn uniform_neighbor_weights(g: &Graph) -> Result<MixingMatrix> {
    let degrees: Vec<usize> = (0..g.n()).map(|i| g.degree(i) + 1).collect();
    let min = *degrees.iter().min().unwrap();
    let max = *degrees.iter().max().unwrap();
    if min != max {
        return Err(Error::NotRegular { min, max });
    }
    let w = 1.0 / min as f64;
    let n = g.n();
    let weights = DMatrix::from_fn(n, n, |i, j| if g.has_edge(i, j) { w } else { 0.0 });
    MixingMatrix::for_graph(g, weights)
}

/// Metropolis–Hastings weights on a connected graph.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    MixingMatrix::for_graph(g, metropolis_rule(g))
}

/// The Metropolis rule without the connectivity requirement:
/// `W_ij = 1/(1 + max(d_i, d_j))` off the diagonal, the diagonal absorbing the
/// remainder. Doubly stochastic on any graph.
pub fn metropolis_rule(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in g.neighbors(i).filter(|&j| j != i) {
            w[(i, j)] = 1.0 / (1 + g.degree(i).max(g.degree(j))) as f64;
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

fn check_sparsity(g: &Graph, w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != g.n() || w.ncols() != g.n() {
        return Err(Error::Shape {
            expected: g.n(),
            got: w.nrows(),
        });
    }
    for i in 0..g.n() {
        for j in 0..g.n() {
            if w[(i, j)] != 0.0 && !g.has_edge(i, j) {
                return Err(Error::Validation(format!(
                    "W[{i},{j}] = {} on a non-edge",
                    w[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Checks that `w` is square, nonnegative, symmetric and doubly stochastic.
pub fn validate_doubly_stochastic(w: &DMatrix<f64>) -> Result<()> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(Error::Validation(format!(
            "mixing matrix must be square and nonempty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("W[{i},{j}] = {v} is not a weight")));
            }
            if (v - w[(j, i)]).abs() > STOCHASTIC_TOL {
                return Err(Error::Validation(format!("W is not symmetric at ({i},{j})")));
            }
        }
        let row: f64 = w.row(i).sum();
        let col: f64 = w.column(i).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!(
                "row/column {i} sums to {row}/{col}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Largest absolute eigenvalue of `W - 11ᵀ/n` for a symmetric `W`, i.e. the
/// operator norm of the mixing matrix off the consensus direction.
fn off_consensus_norm(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    let eig = SymmetricEigen::new(centered);
    eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Exact spectral gap `rho = 1 - ||W - 11ᵀ/n||₂` of a symmetric doubly
/// stochastic matrix. A zero gap (no mixing between some pair of components)
/// is reported as [`Error::NotConnected`].
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<f64> {
    validate_doubly_stochastic(w)?;
    let rho = 1.0 - off_consensus_norm(w);
    // Eigen-solver round-off on the unit eigenvalue of a disconnected matrix.
    if rho <= 1e-10 {
        let n = w.nrows();
        let support = Graph::from_edges(
            n,
            (0..n).flat_map(|i| (0..n).filter(move |&j| w[(i, j)] > 0.0).map(move |j| (i, j))),
        )?;
        return Err(Error::NotConnected {
            components: support.components().max(2),
        });
    }
    Ok(rho.min(1.0))
}

/// Finite sequence of graphs repeated cyclically, with a declared window `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    graphs: Vec<Graph>,
    window: usize,
}

/// Outcome of [`validate_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleCertificate {
    /// Every cyclic window of this length has a connected union; it is the
    /// smallest such length not exceeding the declared window.
    Connected { window: usize },
    /// The union over the window starting at this index is disconnected.
    Violation { start: usize },
}

impl GraphSchedule {
    pub fn new(graphs: Vec<Graph>, window: usize) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::InvalidSize("schedule needs at least one graph".into()));
        };
        if window == 0 {
            return Err(Error::InvalidSize("schedule window must be positive".into()));
        }
        let n = first.n();
        if let Some(g) = graphs.iter().find(|g| g.n() != n) {
            return Err(Error::Shape {
                expected: n,
                got: g.n(),
            });
        }
        Ok(Self { graphs, window })
    }

    /// Splits the `n`-ring into two alternating edge sets: edges `(2k, 2k+1)`
    /// and the remaining ones. For even `n` both are perfect matchings; for
    /// odd `n` the second set also holds the closing edge `(n-1, 0)`, since an
    /// odd cycle cannot be covered by two matchings.
    pub fn ring_alternating(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize("alternating ring needs n >= 2".into()));
        }
        let ring = (0..n).map(|i| (i, (i + 1) % n));
        let (even, odd): (Vec<_>, Vec<_>) = ring.partition(|&(i, j)| i % 2 == 0 && j == i + 1);
        Self::new(vec![Graph::from_edges(n, even)?, Graph::from_edges(n, odd)?], 2)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n(&self) -> usize {
        self.graphs[0].n()
    }

    /// Graph in force at (0-based) position `t` of the cyclic sequence.
    pub fn graph_at(&self, t: u64) -> &Graph {
        &self.graphs[(t % self.graphs.len() as u64) as usize]
    }

    fn window_union(&self, start: usize, len: usize) -> Graph {
        let k = self.graphs.len();
        (1..len).fold(self.graphs[start % k].clone(), |acc, off| {
            acc.union(&self.graphs[(start + off) % k])
                .expect("schedule graphs share n")
        })
    }

    fn all_windows_connected(&self, len: usize) -> Option<usize> {
        (0..self.graphs.len()).find(|&start| !self.window_union(start, len).is_connected())
    }

    /// Metropolis weights for each graph in the cycle. Individual graphs may
    /// be disconnected.
    pub fn mixing(&self) -> TimeVaryingMixing {
        TimeVaryingMixing {
            weights: self
                .graphs
                .iter()
                .map(|g| GossipWeights::from_dense(&metropolis_rule(g)))
                .collect(),
        }
    }
}

/// Checks B-connectivity of a cyclic schedule. Disconnection is a result,
/// not an error.
pub fn validate_schedule(s: &GraphSchedule) -> ScheduleCertificate {
    if let Some(start) = s.all_windows_connected(s.window) {
        return ScheduleCertificate::Violation { start };
    }
    let window = (1..=s.window)
        .find(|&b| s.all_windows_connected(b).is_none())
        .unwrap_or(s.window);
    ScheduleCertificate::Connected { window }
}

/// Cyclic sequence of mixing weights `W^(1), W^(2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingMixing {
    weights: Vec<GossipWeights>,
}

impl TimeVaryingMixing {
    pub fn at(&self, t: u64) -> &GossipWeights {
        &self.weights[(t % self.weights.len() as u64) as usize]
    }

    pub fn n(&self) -> usize {
        self.weights[0].n()
    }
}

/// What the consensus step mixes with at each iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Communication {
    Static(MixingMatrix),
    TimeVarying(TimeVaryingMixing),
}

impl Communication {
    /// Weights used in the step producing iterate `t + 1` from iterate `t`.
    pub fn weights_for_step(&self, t: u64) -> &GossipWeights {
        match self {
            Communication::Static(m) => m.gossip(),
            Communication::TimeVarying(tv) => tv.at(t),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Communication::Static(m) => m.n(),
            Communication::TimeVarying(tv) => tv.n(),
        }
    }

    /// Spectral gap for static topologies.
    pub fn rho(&self) -> Option<f64> {
        match self {
            Communication::Static(m) => Some(m.rho()),
            Communication::TimeVarying(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn eigen_oracle(w: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(w.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn ring_sizes() {
        let g = Graph::ring(25).unwrap();
        assert_eq!(g.n(), 25);
        assert!((0..25).all(|i| g.degree(i) + 1 == 3));
        let single = Graph::ring(1).unwrap();
        assert_eq!(single.edges(), vec![]);
        assert!(single.has_edge(0, 0));
        assert_eq!(Graph::ring(3).unwrap(), Graph::complete(3).unwrap());
        assert_eq!(Graph::ring(2).unwrap(), Graph::complete(2).unwrap());
        assert!(matches!(Graph::ring(0), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn uniform_ring_weights() {
        let m = uniform_neighbor_weights(&Graph::ring(25).unwrap()).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                let d = (i as i64 - j as i64).rem_euclid(25);
                let expected = if d == 0 || d == 1 || d == 24 { 1.0 / 3.0 } else { 0.0 };
                assert_eq!(m.weights()[(i, j)], expected);
            }
        }
        let one = uniform_neighbor_weights(&Graph::ring(1).unwrap()).unwrap();
        assert_eq!(one.weights()[(0, 0)], 1.0);
        assert_eq!(one.rho(), 1.0);
    }

    #[test]
    fn ring3_is_projector() {
        let m = uniform_neighbor_weights(&Graph::ring(3).unwrap()).unwrap();
        let ev = eigen_oracle(m.weights());
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rho(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn irregular_rejected_by_uniform() {
        let err = uniform_neighbor_weights(&Graph::star(4).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotRegular { min: 2, max: 4 }));
    }

    #[test]
    fn metropolis_star() {
        let m = metropolis_weights(&Graph::star(3).unwrap()).unwrap();
        let w = m.weights();
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(w[(0, 1)], third, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 2)], third, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 0)], third, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(1, 1)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(2, 2)], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(w[(1, 2)], 0.0);
    }

    #[test]
    fn metropolis_small_cases() {
        let m = metropolis_weights(&Graph::complete(2).unwrap()).unwrap();
        assert_eq!(m.weights(), &DMatrix::from_element(2, 2, 0.5));
        let ring = Graph::ring(25).unwrap();
        let a = metropolis_weights(&ring).unwrap();
        let b = uniform_neighbor_weights(&ring).unwrap();
        assert!((a.weights() - b.weights()).amax() < 1e-15);
    }

    #[test]
    fn metropolis_rejects_disconnected() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(
            metropolis_weights(&g),
            Err(Error::NotConnected { components: 2 })
        ));
    }

    #[test]
    fn spectral_gap_cases() {
        let proj = DMatrix::from_element(4, 4, 0.25);
        assert_abs_diff_eq!(spectral_gap(&proj).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            spectral_gap(&DMatrix::identity(2, 2)),
            Err(Error::NotConnected { .. })
        ));
        let bad = DMatrix::from_row_slice(2, 2, &[0.7, 0.4, 0.3, 0.6]);
        assert!(matches!(spectral_gap(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn ring25_gap_matches_circulant_formula() {
        let m = uniform_neighbor_weights(&Graph::ring(25).unwrap()).unwrap();
        let closed = 1.0 - (1.0 + 2.0 * (2.0 * PI / 25.0).cos()) / 3.0;
        assert_abs_diff_eq!(m.rho(), closed, epsilon = 1e-12);
        // independent numeric route: sorted eigenvalues of W itself
        let ev = eigen_oracle(m.weights());
        let second = ev[1..].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert_abs_diff_eq!(1.0 - second, closed, epsilon = 1e-12);
    }

    #[test]
    fn schedule_certificates() {
        let ring = Graph::ring(25).unwrap();
        let constant = GraphSchedule::new(vec![ring.clone(); 3], 1).unwrap();
        assert_eq!(
            validate_schedule(&constant),
            ScheduleCertificate::Connected { window: 1 }
        );

        let alt = GraphSchedule::ring_alternating(25).unwrap();
        assert_eq!(alt.graphs()[0].union(&alt.graphs()[1]).unwrap(), ring);
        assert_eq!(validate_schedule(&alt), ScheduleCertificate::Connected { window: 2 });

        let isolated = Graph::from_edges(4, [(0, 1), (1, 2)]).unwrap();
        let never = GraphSchedule::new(vec![isolated.clone(), isolated], 2).unwrap();
        assert_eq!(
            validate_schedule(&never),
            ScheduleCertificate::Violation { start: 0 }
        );
    }

    #[test]
    fn alternating_schedule_even_is_matchings() {
        let s = GraphSchedule::ring_alternating(6).unwrap();
        for g in s.graphs() {
            assert!((0..6).all(|i| g.degree(i) == 1));
        }
    }

    #[test]
    fn time_varying_weights_are_doubly_stochastic() {
        let s = GraphSchedule::ring_alternating(25).unwrap();
        for g in s.graphs() {
            let w = metropolis_rule(g);
            validate_doubly_stochastic(&w).unwrap();
        }
    }

    #[test]
    fn edge_list_parsing() {
        let g = Graph::parse_edge_list(3, "# star\n0 1\n\n0 2\n").unwrap();
        assert_eq!(g, Graph::star(3).unwrap());
        assert!(Graph::parse_edge_list(3, "0 5\n").is_err());
        assert!(Graph::parse_edge_list(3, "0\n").is_err());
    }

    fn connected_graph() -> impl Strategy<Value = Graph> {
        (2usize..9).prop_flat_map(|n| {
            let extra = prop::collection::vec((0..n, 0..n), 0..12);
            (Just(n), extra).prop_map(|(n, extra)| {
                // a spanning path guarantees connectivity
                let path = (0..n - 1).map(|i| (i, i + 1));
                Graph::from_edges(n, path.chain(extra)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn metropolis_invariants(g in connected_graph()) {
            let m = metropolis_weights(&g).unwrap();
            let w = m.weights();
            for i in 0..g.n() {
                prop_assert!((w.row(i).sum() - 1.0).abs() < STOCHASTIC_TOL);
                prop_assert!((w.column(i).sum() - 1.0).abs() < STOCHASTIC_TOL);
                for j in 0..g.n() {
                    prop_assert_eq!(w[(i, j)], w[(j, i)]);
                    if !g.has_edge(i, j) { prop_assert_eq!(w[(i, j)], 0.0); }
                }
            }
            prop_assert!(m.rho() > 0.0 && m.rho() <= 1.0);
        }

        #[test]
        fn gap_invariant_under_relabeling(g in connected_graph(), seed in any::<u64>()) {
            let n = g.n();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let relabeled = Graph::from_edges(n, g.edges().into_iter().map(|(i, j)| (perm[i], perm[j]))).unwrap();
            let a = metropolis_weights(&g).unwrap().rho();
            let b = metropolis_weights(&relabeled).unwrap().rho();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn consensus_step_preserves_average(g in connected_graph(), vals in prop::collection::vec(-100.0f64..100.0, 9 * 3)) {
            let n = g.n();
            let w = metropolis_weights(&g).unwrap();
            let theta = DMatrix::from_fn(3, n, |r, c| vals[c * 3 + r]);
            let mixed = &theta * w.weights().transpose();
            for r in 0..3 {
                let before = theta.row(r).sum() / n as f64;
                let after = mixed.row(r).sum() / n as f64;
                prop_assert!((before - after).abs() < 1e-10);
            }
        }

        #[test]
        fn constant_schedule_certifies_one(g in connected_graph(), declared in 1usize..5, len in 1usize..4) {
            let s = GraphSchedule::new(vec![g; len], declared).unwrap();
            prop_assert_eq!(validate_schedule(&s), ScheduleCertificate::Connected { window: 1 });
        }
    }
}
