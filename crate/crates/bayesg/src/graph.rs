//! Physical environment graph, per-agent ego-graphs, and hop distances.
//!
//! The environment graph is undirected and fixed for the lifetime of a run;
//! per-agent masks later impose directionality. Ego-graphs are strictly
//! closed 1-hop neighborhoods with a fixed member ordering (center first,
//! neighbors by ascending node id) so matrices are comparable across runs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("self-loop rejected at line {line}: node {node}")]
    SelfLoop { line: usize, node: usize },
    #[error("invalid node id {node} (node count {count})")]
    InvalidNode { node: usize, count: usize },
}

/// Fixed physical topology G = (V, E), undirected, no self-loops.
#[derive(Clone, Debug)]
pub struct EnvGraph {
    node_count: usize,
    /// Deduplicated undirected edges stored as (min, max) pairs, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists per node.
    adjacency: Vec<Vec<usize>>,
}

impl EnvGraph {
    pub fn new(node_count: usize, edge_list: &[(usize, usize)]) -> Result<Self, GraphError> {
        assert!(node_count > 0, "node_count must be positive");
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &(u, v) in edge_list {
            if u == v {
                return Err(GraphError::SelfLoop { line: 0, node: u });
            }
            for n in [u, v] {
                if n >= node_count {
                    return Err(GraphError::InvalidNode { node: n, count: node_count });
                }
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Self { node_count, edges, adjacency })
    }

    /// Parse an edge-list document: one "u v" pair per line, '#' comments.
    /// Node count is 1 + max referenced id unless a `nodes N` header line is
    /// present (needed for graphs with isolated trailing nodes).
    pub fn parse(spec_text: &str) -> Result<Self, GraphError> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut declared_nodes: Option<usize> = None;
        for (idx, raw) in spec_text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() == 2 && toks[0] == "nodes" {
                declared_nodes = Some(toks[1].parse().map_err(|e| GraphError::Parse {
                    line: lineno,
                    msg: format!("bad node count: {e}"),
                })?);
                continue;
            }
            if toks.len() != 2 {
                return Err(GraphError::Parse {
                    line: lineno,
                    msg: format!("expected 'u v', got {:?}", line),
                });
            }
            let u: usize = toks[0].parse().map_err(|e| GraphError::Parse {
                line: lineno,
                msg: format!("bad node id {:?}: {e}", toks[0]),
            })?;
            let v: usize = toks[1].parse().map_err(|e| GraphError::Parse {
                line: lineno,
                msg: format!("bad node id {:?}: {e}", toks[1]),
            })?;
            if u == v {
                return Err(GraphError::SelfLoop { line: lineno, node: u });
            }
            pairs.push((u, v));
        }
        let max_ref = pairs.iter().map(|&(u, v)| u.max(v)).max();
        let node_count = match (declared_nodes, max_ref) {
            (Some(n), Some(m)) if m >= n => {
                return Err(GraphError::InvalidNode { node: m, count: n })
            }
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => 1,
        };
        Self::new(node_count, &pairs)
    }

    /// 4-neighbor lattice with rows*cols nodes, row-major ids.
    pub fn grid(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1);
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Self::new(rows * cols, &edges).expect("grid construction cannot fail")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// True when every node is reachable from node 0. Disconnected graphs
    /// are legal (isolated intersections are degenerate agents) but callers
    /// may want to warn.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn ego_graph(&self, center: usize) -> Result<EgoGraph, GraphError> {
        if center >= self.node_count {
            return Err(GraphError::InvalidNode { node: center, count: self.node_count });
        }
        let mut members = Vec::with_capacity(self.degree(center) + 1);
        members.push(center);
        members.extend_from_slice(&self.adjacency[center]);
        let n = members.len();
        let mut adjacency = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b && self.has_edge(members[a], members[b]) {
                    adjacency[a * n + b] = 1.0;
                }
            }
        }
        Ok(EgoGraph { center, members, adjacency })
    }
}

/// Closed 1-hop neighborhood of an agent: members = {i} ∪ N_i, center first,
/// neighbors in ascending node id; adjacency restricted to member-member
/// edges of the environment graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoGraph {
    center: usize,
    members: Vec<usize>,
    /// Row-major |V_i| x |V_i| binary matrix (0.0/1.0 values).
    adjacency: Vec<f64>,
}

impl EgoGraph {
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn neighbor_count(&self) -> usize {
        self.members.len() - 1
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn adjacency_entry(&self, a: usize, b: usize) -> f64 {
        self.adjacency[a * self.members.len() + b]
    }

    /// Hop distances from the center: 0 for the center itself, 1 for every
    /// neighbor (1-hop neighborhoods by construction).
    pub fn hop_distances(&self) -> Vec<usize> {
        let mut d = vec![1; self.members.len()];
        d[0] = 0;
        d
    }
}
