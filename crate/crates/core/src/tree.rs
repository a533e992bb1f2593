//! Trees on `k+1` labelled vertices and their leaf-peeling elimination order.
//!
//! Peeling repeatedly strips every current leaf (degree-1 vertex), charging it
//! to its unique neighbour (its host), until a single edge remains. When
//! stripping all leaves would leave fewer than two vertices (stars, 3-paths),
//! the lowest-id leaf is kept back so the schedule always ends on an edge.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::rng::SplitMix64;

/// A tree on vertices `0..n` with canonical edges (`i < j`, sorted).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TreeGraph {
    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of edges, `k`.
    pub fn k(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// The path `0 - 1 - ... - (n-1)`, i.e. the `(n-1)`-chain.
    pub fn path(n: usize) -> Result<Self> {
        validate_tree(n, &(1..n).map(|i| (i - 1, i)).collect::<Vec<_>>())
    }

    /// Star with center `0` and leaves `1..n`.
    pub fn star(n: usize) -> Result<Self> {
        validate_tree(n, &(1..n).map(|i| (0, i)).collect::<Vec<_>>())
    }

    /// Uniform random labelled tree on `n` vertices (Prüfer decoding).
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return validation(format!("a tree needs at least 2 vertices (got {n})"));
        }
        let mut rng = SplitMix64::new(seed);
        let code: Vec<usize> = (0..n - 2).map(|_| rng.below(n)).collect();
        let mut degree = vec![1usize; n];
        for &c in &code {
            degree[c] += 1;
        }
        let mut leaves: BTreeSet<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        let mut edges = Vec::with_capacity(n - 1);
        for &c in &code {
            let leaf = *leaves.iter().next().expect("Prüfer decoding always has a leaf");
            leaves.remove(&leaf);
            edges.push((leaf, c));
            degree[c] -= 1;
            if degree[c] == 1 {
                leaves.insert(c);
            }
        }
        let last: Vec<usize> = leaves.into_iter().collect();
        edges.push((last[0], last[1]));
        validate_tree(n, &edges)
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            n: self.n,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

/// Builds a [`TreeGraph`] after checking it is one: no self-loops or
/// duplicates, exactly `n - 1` edges, connected.
pub fn validate_tree(n: usize, edges: &[(usize, usize)]) -> Result<TreeGraph> {
    if n < 2 {
        return validation(format!("a tree needs at least 2 vertices (got {n})"));
    }
    let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a == b {
            return Err(Error::Structural(format!("self-loop at vertex {a}")));
        }
        if a >= n || b >= n {
            return Err(Error::Structural(format!(
                "edge ({a},{b}) names a vertex outside 0..{n}"
            )));
        }
        canon.push((a.min(b), a.max(b)));
    }
    canon.sort_unstable();
    if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Structural(format!("duplicate edge ({},{})", w[0].0, w[0].1)));
    }
    if canon.len() != n - 1 {
        return Err(Error::Structural(format!(
            "edge count {} != {} for {n} vertices",
            canon.len(),
            n - 1
        )));
    }
    let tree = TreeGraph { n, edges: canon };
    let adj = tree.adjacency();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::Structural(format!(
            "disconnected: vertex {v} unreachable from 0 (a cycle elsewhere)"
        )));
    }
    Ok(tree)
}

/// On-disk tree: `{"n": int, "edges": [[i, j], ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TreeFile {
    pub fn to_tree(&self) -> Result<TreeGraph> {
        validate_tree(self.n, &self.edges.iter().map(|e| (e[0], e[1])).collect::<Vec<_>>())
    }
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<TreeGraph> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str::<TreeFile>(&text)?.to_tree()
}

pub fn write_tree(tree: &TreeGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&tree.to_file())?)?;
    Ok(())
}

/// A subtree of the original tree, vertex ids unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTree {
    pub vertices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl SubTree {
    pub fn is_single_edge(&self) -> bool {
        self.vertices.len() == 2 && self.edges.len() == 1
    }
}

/// Leaves of one round that hang off the same host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostAttachment {
    pub host: usize,
    pub multiplicity: usize,
    pub leaves: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeelRound {
    /// Leaves removed this round, ascending.
    pub peeled: Vec<usize>,
    /// Hosts ascending; multiplicities sum to `peeled.len()`.
    pub hosts: Vec<HostAttachment>,
    pub remaining: SubTree,
}

/// The edge left when peeling stops, with the pigeonhole stage each endpoint
/// reached (the last round it served as a host, 0 if never).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalEdge {
    pub pair: (usize, usize),
    pub stages: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeelSchedule {
    pub n_vertices: usize,
    pub rounds: Vec<PeelRound>,
    pub terminal: TerminalEdge,
    /// Per vertex: last round (1-based) in which it was a host, 0 if never.
    pub vertex_stages: Vec<usize>,
}

impl PeelSchedule {
    /// Deepest good set any vertex is restricted to, including the extra
    /// stage used when both terminal endpoints sit at the same depth.
    pub fn required_depth(&self) -> usize {
        let (a, b) = self.terminal.stages;
        if a == b {
            a + 1
        } else {
            a.max(b)
        }
    }

    /// Good-set stage each vertex variable is integrated against when the
    /// schedule is evaluated with restriction (0 means the full measure).
    ///
    /// Matches `vertex_stages` except at the terminal edge: if both endpoints
    /// share stage `J`, the higher-id endpoint is pushed to stage `J + 1`.
    pub fn restriction_stages(&self) -> Vec<usize> {
        let mut stages = self.vertex_stages.clone();
        let TerminalEdge {
            pair: (_, z2),
            stages: (j1, j2),
        } = self.terminal;
        if j1 == j2 {
            stages[z2] = j2 + 1;
        }
        stages
    }
}

/// Deterministic leaf-peeling schedule (ascending vertex ids throughout).
pub fn compute_peel_schedule(tree: &TreeGraph) -> PeelSchedule {
    let n = tree.n_vertices();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in tree.edges() {
        adj[i].insert(j);
        adj[j].insert(i);
    }
    let mut alive: BTreeSet<usize> = (0..n).collect();
    let mut stages = vec![0usize; n];
    let mut rounds = Vec::new();

    while alive.len() > 2 {
        let mut leaves: Vec<usize> = alive.iter().copied().filter(|&v| adj[v].len() == 1).collect();
        if alive.len() - leaves.len() < 2 {
            leaves.remove(0);
        }
        let mut by_host: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &leaf in &leaves {
            let host = *adj[leaf].iter().next().expect("leaf has a neighbour");
            by_host.entry(host).or_default().push(leaf);
        }
        for &leaf in &leaves {
            let host = *adj[leaf].iter().next().unwrap();
            adj[host].remove(&leaf);
            adj[leaf].clear();
            alive.remove(&leaf);
        }
        let round_no = rounds.len() + 1;
        let hosts = by_host
            .into_iter()
            .map(|(host, leaves)| {
                stages[host] = round_no;
                HostAttachment {
                    host,
                    multiplicity: leaves.len(),
                    leaves,
                }
            })
            .collect();
        let remaining = SubTree {
            vertices: alive.iter().copied().collect(),
            edges: alive
                .iter()
                .flat_map(|&v| adj[v].iter().filter(move |&&u| u > v).map(move |&u| (v, u)))
                .collect(),
        };
        rounds.push(PeelRound {
            peeled: leaves,
            hosts,
            remaining,
        });
    }

    let last: Vec<usize> = alive.into_iter().collect();
    let pair = (last[0], last[1]);
    PeelSchedule {
        n_vertices: n,
        rounds,
        terminal: TerminalEdge {
            pair,
            stages: (stages[pair.0], stages[pair.1]),
        },
        vertex_stages: stages,
    }
}
