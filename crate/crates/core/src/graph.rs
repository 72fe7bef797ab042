//! Social graph representation, edge-list ingestion, per-agent structure
//! matrices, and confidence-bound filtering for the receding-horizon modes.
//!
//! Two views coexist: [`SocialGraph`] is the undirected, connected base graph
//! the game is declared on, while [`NeighborSets`] holds per-agent neighbor
//! sets that may be asymmetric (confidence filtering with heterogeneous
//! bounds keeps `j` in agent `i`'s set without the converse). All structure
//! matrices are built from the per-agent sets, so both views feed the solvers
//! the same way.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Per-agent neighbor sets. Possibly directional: `sets[i]` is the set of
/// agents whose opinions agent `i` listens to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSets {
    sets: Vec<BTreeSet<usize>>,
}

impl NeighborSets {
    pub fn new(sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        let n = sets.len();
        for (i, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptyNeighborhood { agent: i });
            }
            if set.contains(&i) || set.iter().any(|&j| j >= n) {
                return Err(Error::InvalidParam {
                    name: "neighbor_sets",
                    reason: format!("agent {i} has a self-loop or out-of-range neighbor"),
                });
            }
        }
        Ok(Self { sets })
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.sets[i].len()
    }

    pub fn set(&self, i: usize) -> &BTreeSet<usize> {
        &self.sets[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BTreeSet<usize>> {
        self.sets.iter()
    }
}

/// Undirected connected social graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    edges: BTreeSet<(usize, usize)>,
    nbrs: NeighborSets,
}

impl SocialGraph {
    /// Builds a graph from unordered agent pairs. Duplicate edges collapse;
    /// orientation is ignored. `n` is one past the largest mentioned index.
    pub fn from_edges(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        let mut n = 0usize;
        for (a, b) in pairs {
            if a == b {
                return Err(Error::SelfLoop { line: 0, agent: a });
            }
            n = n.max(a + 1).max(b + 1);
            edges.insert((a.min(b), a.max(b)));
        }
        if n < 2 {
            return Err(Error::InvalidParam {
                name: "edges",
                reason: "graph needs at least two agents".into(),
            });
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in &edges {
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let nbrs = NeighborSets::new(sets)?;
        let g = Self { edges, nbrs };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Parses a newline-separated edge list: two whitespace-separated 0-based
    /// agent indices per line; blank lines and lines starting with `#` are
    /// ignored.
    pub fn load_edge_list(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split_whitespace();
            let a = parse_index(fields.next(), line)?;
            let b = parse_index(fields.next(), line)?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    line,
                    reason: "expected exactly two indices".into(),
                });
            }
            if a == b {
                return Err(Error::SelfLoop { line, agent: a });
            }
            pairs.push((a, b));
        }
        if pairs.is_empty() {
            return Err(Error::Parse {
                line: 0,
                reason: "edge list is empty".into(),
            });
        }
        Self::from_edges(pairs)
    }

    /// The canonical Zachary Karate Club network: 34 members, 78 friendships.
    pub fn zachary() -> Self {
        Self::from_edges(ZACHARY_EDGES.iter().copied())
            .expect("canonical Zachary edge list is valid")
    }

    pub fn n(&self) -> usize {
        self.nbrs.n()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        self.nbrs.set(i)
    }

    pub fn neighbor_sets(&self) -> &NeighborSets {
        &self.nbrs
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.nbrs.set(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }
}

fn parse_index(field: Option<&str>, line: usize) -> Result<usize> {
    let s = field.ok_or_else(|| Error::Parse {
        line,
        reason: "expected two indices".into(),
    })?;
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        reason: format!("`{s}` is not a non-negative integer"),
    })
}

/// Candidate set used when re-filtering neighbors against confidence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Candidates are the agent's neighbors on the fixed social graph.
    Fixed,
    /// Candidates are all other agents.
    Complete,
    /// Candidates are graph neighbors plus neighbors-of-neighbors.
    SecondNeighborhood,
}

/// Keeps, for each agent `i`, the candidates whose opinions lie within
/// `eps[i]` of `x[i]`. The kept relation is directional: with heterogeneous
/// bounds, `j` may fall inside `i`'s bound but not conversely.
///
/// Errors with [`Error::EmptyNeighborhood`] naming the first agent whose
/// filtered set comes out empty.
pub fn confidence_filter(
    g: &SocialGraph,
    x: &[f64],
    eps: &[f64],
    mode: FilterMode,
) -> Result<NeighborSets> {
    let n = g.n();
    assert_eq!(x.len(), n, "opinion vector length");
    assert_eq!(eps.len(), n, "confidence bound vector length");
    assert!(eps.iter().all(|&e| e > 0.0), "confidence bounds must be positive");

    let mut sets = Vec::with_capacity(n);
    for i in 0..n {
        let mut kept = BTreeSet::new();
        let mut admit = |j: usize| {
            if j != i && (x[i] - x[j]).abs() <= eps[i] {
                kept.insert(j);
            }
        };
        match mode {
            FilterMode::Fixed => {
                for &j in g.neighbors(i) {
                    admit(j);
                }
            }
            FilterMode::Complete => {
                for j in 0..n {
                    admit(j);
                }
            }
            FilterMode::SecondNeighborhood => {
                for &j in g.neighbors(i) {
                    admit(j);
                    for &k in g.neighbors(j) {
                        admit(k);
                    }
                }
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyNeighborhood { agent: i });
        }
        sets.push(kept);
    }
    Ok(NeighborSets { sets })
}

/// Per-agent disagreement structure: the Laplacian of the star centered at
/// the agent, together with her degree.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStructure {
    pub laplacian: DMatrix<f64>,
    pub degree: usize,
}

/// Builds agent `i`'s star Laplacian `Σ_{j∈N_i} (e_i - e_j)(e_i - e_j)ᵀ`.
///
/// The defining identity is `xᵀ L_i x = Σ_{j∈N_i} (x_i - x_j)²`, which is
/// exactly the agent's disagreement with her neighbors.
pub fn agent_laplacian(nbrs: &NeighborSets, i: usize) -> Result<AgentStructure> {
    let n = nbrs.n();
    if i >= n {
        return Err(Error::IndexOutOfRange { agent: i, n });
    }
    let mut l = DMatrix::zeros(n, n);
    for &j in nbrs.set(i) {
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
    }
    Ok(AgentStructure {
        laplacian: l,
        degree: nbrs.degree(i),
    })
}

/// Builds the averaging drift matrix: row `i` carries `-1` on the diagonal
/// and `1/|N_i|` at each neighbor column, so `(Λx)_i` is the gap between the
/// neighborhood average and the agent's own opinion. Every row sums to zero.
pub fn dynamics_matrix(nbrs: &NeighborSets) -> DMatrix<f64> {
    let n = nbrs.n();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -1.0;
        let w = 1.0 / nbrs.degree(i) as f64;
        for &j in nbrs.set(i) {
            m[(i, j)] += w;
        }
    }
    m
}

/// The standard 78-edge Zachary Karate Club friendship list, 0-based.
const ZACHARY_EDGES: [(usize, usize); 78] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (0, 6),
    (0, 7),
    (0, 8),
    (0, 10),
    (0, 11),
    (0, 12),
    (0, 13),
    (0, 17),
    (0, 19),
    (0, 21),
    (0, 31),
    (1, 2),
    (1, 3),
    (1, 7),
    (1, 13),
    (1, 17),
    (1, 19),
    (1, 21),
    (1, 30),
    (2, 3),
    (2, 7),
    (2, 8),
    (2, 9),
    (2, 13),
    (2, 27),
    (2, 28),
    (2, 32),
    (3, 7),
    (3, 12),
    (3, 13),
    (4, 6),
    (4, 10),
    (5, 6),
    (5, 10),
    (5, 16),
    (6, 16),
    (8, 30),
    (8, 32),
    (8, 33),
    (9, 33),
    (13, 33),
    (14, 32),
    (14, 33),
    (15, 32),
    (15, 33),
    (18, 32),
    (18, 33),
    (19, 33),
    (20, 32),
    (20, 33),
    (22, 32),
    (22, 33),
    (23, 25),
    (23, 27),
    (23, 29),
    (23, 32),
    (23, 33),
    (24, 25),
    (24, 27),
    (24, 31),
    (25, 31),
    (26, 29),
    (26, 33),
    (27, 33),
    (28, 31),
    (28, 33),
    (29, 32),
    (29, 33),
    (30, 32),
    (30, 33),
    (31, 32),
    (31, 33),
    (32, 33),
];
