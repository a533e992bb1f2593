//! Embedding a tree into the distance graph of a measure's support: vertices
//! are the positive-weight atoms, joined when their distance lies in the
//! closed band `[t - eps, t + eps]`.
//!
//! [`feasibility_dp`] decides whether a homomorphism exists (tree rooted at 0,
//! bottom-up, then pruned top-down). [`extract_embedding`] backtracks over the
//! feasible atoms, optionally keeping the assignment injective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{Convolver, KernelParams};
use crate::measure::AtomicMeasure;
use crate::scalar::{dist, Scalar};
use crate::tree::TreeGraph;

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Per-vertex feasible atoms together with the distance graph they were
/// computed on.
#[derive(Clone, Debug)]
pub struct FeasibilityTables {
    /// Vertices in BFS order from the root (vertex 0).
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Distance-graph neighbours of each atom, ascending. Empty for atoms of
    /// zero weight.
    pub neighbours: Vec<Vec<usize>>,
    /// `feasible[v][p]`: some homomorphism of the whole tree sends `v` to
    /// atom `p`.
    pub feasible: Vec<Vec<bool>>,
}

impl FeasibilityTables {
    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn has_homomorphism(&self) -> bool {
        self.feasible[self.root()].iter().any(|&b| b)
    }

    pub fn feasible_atoms(&self, v: usize) -> Vec<usize> {
        (0..self.feasible[v].len()).filter(|&p| self.feasible[v][p]).collect()
    }
}

pub fn feasibility_dp<T: Scalar>(
    mu: &AtomicMeasure<T>,
    tree: &TreeGraph,
    params: &KernelParams<T>,
) -> Result<FeasibilityTables> {
    let n = tree.n_vertices();
    let adj = tree.adjacency();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut order = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                parent[u] = Some(v);
                children[v].push(u);
                order.push(u);
            }
        }
    }

    let conv = Convolver::new(mu);
    let w = mu.weights();
    let neighbours: Vec<Vec<usize>> = (0..mu.len())
        .into_par_iter()
        .map(|p| {
            if w[p] <= T::zero() {
                return Vec::new();
            }
            conv.neighbours(mu.atom(p), params)
                .into_iter()
                .filter(|&q| w[q] > T::zero())
                .collect()
        })
        .collect();

    let mut feasible = vec![Vec::new(); n];
    for &v in order.iter().rev() {
        let table: Vec<bool> = (0..mu.len())
            .map(|p| {
                w[p] > T::zero()
                    && children[v]
                        .iter()
                        .all(|&u| neighbours[p].iter().any(|&q| feasible[u][q]))
            })
            .collect();
        feasible[v] = table;
    }
    // keep only atoms that extend to a full homomorphism
    for &v in &order[1..] {
        let p = parent[v].unwrap();
        let table: Vec<bool> = (0..mu.len())
            .map(|q| feasible[v][q] && neighbours[q].iter().any(|&a| feasible[p][a]))
            .collect();
        feasible[v] = table;
    }

    Ok(FeasibilityTables {
        order,
        parent,
        children,
        neighbours,
        feasible,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingWitness<T> {
    /// `assignment[v]` is the atom tree vertex `v` sits on.
    pub assignment: Vec<usize>,
    /// Realized distance of each tree edge, in `tree.edges()` order.
    pub edges: Vec<(usize, usize)>,
    pub gaps: Vec<T>,
    pub distinct: bool,
    pub params: KernelParams<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeGap {
    pub edge: [usize; 2],
    pub distance: f64,
}

/// Exportable form: `{assignment, gaps, distinct, t, eps}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub assignment: Vec<usize>,
    pub gaps: Vec<EdgeGap>,
    pub distinct: bool,
    pub t: f64,
    pub eps: f64,
}

impl<T: Scalar> EmbeddingWitness<T> {
    pub fn record(&self) -> WitnessRecord {
        WitnessRecord {
            assignment: self.assignment.clone(),
            gaps: self
                .edges
                .iter()
                .zip(&self.gaps)
                .map(|(&(a, b), g)| EdgeGap {
                    edge: [a, b],
                    distance: g.to_f64_lossy(),
                })
                .collect(),
            distinct: self.distinct,
            t: self.params.t.to_f64_lossy(),
            eps: self.params.eps.to_f64_lossy(),
        }
    }
}

/// Rechecks a witness against `mu` and `tree` by direct distance computation.
pub fn verify_witness<T: Scalar>(w: &EmbeddingWitness<T>, mu: &AtomicMeasure<T>, tree: &TreeGraph) -> Result<()> {
    if w.assignment.len() != tree.n_vertices() {
        return Err(Error::Invariant("witness does not cover every vertex".into()));
    }
    if let Some(&a) = w.assignment.iter().find(|&&a| a >= mu.len()) {
        return Err(Error::Invariant(format!("witness uses atom {a} outside the measure")));
    }
    for &(i, j) in tree.edges() {
        let r = dist(mu.atom(w.assignment[i]), mu.atom(w.assignment[j]));
        if !(w.params.inner() <= r && r <= w.params.outer()) {
            return Err(Error::Invariant(format!("edge ({i},{j}) realized at distance {r}")));
        }
    }
    let mut sorted = w.assignment.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let injective = sorted.len() == w.assignment.len();
    if w.distinct && !injective {
        return Err(Error::Invariant("witness marked distinct repeats an atom".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbedOutcome<T> {
    Found(EmbeddingWitness<T>),
    /// The whole search space was explored.
    Absent {
        nodes: u64,
    },
    /// Gave up after `nodes` assignments without deciding.
    BudgetExhausted {
        nodes: u64,
    },
}

impl<T> EmbedOutcome<T> {
    pub fn witness(&self) -> Option<&EmbeddingWitness<T>> {
        match self {
            EmbedOutcome::Found(w) => Some(w),
            _ => None,
        }
    }
}

struct Search<'a> {
    tables: &'a FeasibilityTables,
    distinct: bool,
    budget: u64,
    nodes: u64,
    assign: Vec<usize>,
    used: Vec<bool>,
}

enum Step {
    Done,
    Dead,
    OutOfBudget,
}

impl Search<'_> {
    fn run(&mut self, depth: usize) -> Step {
        let t = self.tables;
        if depth == t.order.len() {
            return Step::Done;
        }
        let v = t.order[depth];
        let candidates: Vec<usize> = match t.parent[v] {
            Some(p) => t.neighbours[self.assign[p]].clone(),
            None => (0..t.feasible[v].len()).collect(),
        };
        for a in candidates {
            if !t.feasible[v][a] || (self.distinct && self.used[a]) {
                continue;
            }
            if self.nodes >= self.budget {
                return Step::OutOfBudget;
            }
            self.nodes += 1;
            self.assign[v] = a;
            self.used[a] = true;
            match self.run(depth + 1) {
                Step::Done => return Step::Done,
                Step::OutOfBudget => return Step::OutOfBudget,
                Step::Dead => self.used[a] = false,
            }
        }
        Step::Dead
    }
}

/// Backtracking search for a witness, trying atoms in ascending index order so
/// the first witness found is deterministic.
pub fn extract_embedding<T: Scalar>(
    tables: &FeasibilityTables,
    mu: &AtomicMeasure<T>,
    tree: &TreeGraph,
    params: &KernelParams<T>,
    require_distinct: bool,
    node_budget: u64,
) -> Result<EmbedOutcome<T>> {
    if tables.order.len() != tree.n_vertices() || tables.neighbours.len() != mu.len() {
        return validation("feasibility tables do not match the measure and tree");
    }
    let mut search = Search {
        tables,
        distinct: require_distinct,
        budget: node_budget,
        nodes: 0,
        assign: vec![0; tree.n_vertices()],
        used: vec![false; mu.len()],
    };
    if !tables.has_homomorphism() {
        return Ok(EmbedOutcome::Absent { nodes: 0 });
    }
    match search.run(0) {
        Step::Done => {
            let assignment = search.assign;
            let edges = tree.edges().to_vec();
            let gaps = edges
                .iter()
                .map(|&(i, j)| dist(mu.atom(assignment[i]), mu.atom(assignment[j])))
                .collect();
            let mut sorted = assignment.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let witness = EmbeddingWitness {
                distinct: sorted.len() == assignment.len(),
                assignment,
                edges,
                gaps,
                params: *params,
            };
            verify_witness(&witness, mu, tree)?;
            Ok(EmbedOutcome::Found(witness))
        }
        Step::Dead => Ok(EmbedOutcome::Absent { nodes: search.nodes }),
        Step::OutOfBudget => Ok(EmbedOutcome::BudgetExhausted { nodes: search.nodes }),
    }
}

/// [`feasibility_dp`] followed by [`extract_embedding`].
pub fn find_embedding<T: Scalar>(
    mu: &AtomicMeasure<T>,
    tree: &TreeGraph,
    params: &KernelParams<T>,
    require_distinct: bool,
    node_budget: u64,
) -> Result<(FeasibilityTables, EmbedOutcome<T>)> {
    let tables = feasibility_dp(mu, tree, params)?;
    let outcome = extract_embedding(&tables, mu, tree, params, require_distinct, node_budget)?;
    Ok((tables, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integral::integral_bruteforce;
    use crate::measure::{build_ifs_measure, restrict_measure, IfsSpec, DEFAULT_ATOM_CAP};
    use crate::rng::SplitMix64;

    fn params(t: f64, eps: f64) -> KernelParams<f64> {
        KernelParams::new(t, eps).unwrap()
    }

    fn line(n: usize, t: f64) -> AtomicMeasure<f64> {
        let atoms: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * t]).collect();
        AtomicMeasure::new(1, &atoms, vec![1.0 / n as f64; n], "line").unwrap()
    }

    /// Exhaustive search over assignments, edges checked as soon as both ends
    /// are placed (vertices placed in label order).
    fn oracle(mu: &AtomicMeasure<f64>, tree: &TreeGraph, p: &KernelParams<f64>, injective: bool) -> bool {
        fn go(
            v: usize,
            assign: &mut Vec<usize>,
            mu: &AtomicMeasure<f64>,
            tree: &TreeGraph,
            p: &KernelParams<f64>,
            injective: bool,
        ) -> bool {
            if v == tree.n_vertices() {
                return true;
            }
            for a in 0..mu.len() {
                if injective && assign.contains(&a) {
                    continue;
                }
                let ok = tree.edges().iter().all(|&(i, j)| {
                    let (lo, hi) = (i.min(j), i.max(j));
                    if hi != v {
                        return true;
                    }
                    let r = dist(mu.atom(assign[lo]), mu.atom(a));
                    p.t - p.eps <= r && r <= p.t + p.eps
                });
                if ok {
                    assign.push(a);
                    if go(v + 1, assign, mu, tree, p, injective) {
                        return true;
                    }
                    assign.pop();
                }
            }
            false
        }
        go(0, &mut Vec::new(), mu, tree, p, injective)
    }

    #[test]
    fn two_atoms_single_edge() {
        let mu = line(2, 0.7);
        let tree = TreeGraph::path(2).unwrap();
        let tables = feasibility_dp(&mu, &tree, &params(0.7, 0.01)).unwrap();
        assert_eq!(tables.feasible_atoms(0), vec![0, 1]);
        assert_eq!(tables.feasible_atoms(1), vec![0, 1]);
    }

    #[test]
    fn one_atom_has_no_edge() {
        let mu = line(1, 0.7);
        let tree = TreeGraph::path(2).unwrap();
        let p = params(0.7, 0.01);
        let tables = feasibility_dp(&mu, &tree, &p).unwrap();
        assert!(tables.feasible_atoms(0).is_empty() && tables.feasible_atoms(1).is_empty());
        let out = extract_embedding(&tables, &mu, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(out, EmbedOutcome::Absent { nodes: 0 });
    }

    #[test]
    fn collinear_path() {
        let mu = line(3, 1.0);
        let tree = TreeGraph::path(3).unwrap();
        let p = params(1.0, 0.1);
        let tables = feasibility_dp(&mu, &tree, &p).unwrap();
        assert!(tables.has_homomorphism());
        // the middle vertex (1) must sit on the middle atom for an injective map
        assert!(tables.feasible[1][1]);
        let out = extract_embedding(&tables, &mu, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
        let w = out.witness().unwrap();
        assert!(w.assignment == vec![0, 1, 2] || w.assignment == vec![2, 1, 0]);
        assert!(w.distinct);
        assert_eq!(w.gaps, vec![1.0, 1.0]);
    }

    #[test]
    fn star_on_two_atoms() {
        let mu = line(2, 0.5);
        let tree = TreeGraph::star(4).unwrap();
        let p = params(0.5, 0.05);
        let (_, strict) = find_embedding(&mu, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
        assert!(matches!(strict, EmbedOutcome::Absent { .. }));
        let (_, loose) = find_embedding(&mu, &tree, &p, false, DEFAULT_NODE_BUDGET).unwrap();
        let w = loose.witness().unwrap();
        assert!(!w.distinct);
        assert_eq!(w.assignment, vec![0, 1, 1, 1]);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        // dense cloud where distinct embeddings exist but the budget is tiny
        let mu = line(6, 1.0);
        let tree = TreeGraph::path(5).unwrap();
        let p = params(1.0, 0.1);
        let (_, out) = find_embedding(&mu, &tree, &p, true, 2).unwrap();
        assert_eq!(out, EmbedOutcome::BudgetExhausted { nodes: 2 });
        let (_, out) = find_embedding(&mu, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
        assert!(out.witness().is_some());
    }

    #[test]
    fn tampered_witness_is_rejected() {
        let mu = line(3, 1.0);
        let tree = TreeGraph::path(3).unwrap();
        let p = params(1.0, 0.1);
        let (_, out) = find_embedding(&mu, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
        let mut w = out.witness().unwrap().clone();
        verify_witness(&w, &mu, &tree).unwrap();
        w.assignment = vec![0, 1, 0];
        assert!(verify_witness(&w, &mu, &tree).is_err());
        w.distinct = false;
        verify_witness(&w, &mu, &tree).unwrap();
        w.assignment = vec![0, 2, 1];
        assert!(verify_witness(&w, &mu, &tree).is_err());
    }

    #[test]
    fn agrees_with_exhaustive_enumeration() {
        let mut rng = SplitMix64::new(31);
        let (mut found, mut absent) = (0, 0);
        for case in 0..150 {
            let n = 4 + rng.below(22);
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.next_f64()).collect();
            let mu = AtomicMeasure::from_flat(2, coords, vec![1.0 / n as f64; n], "r").unwrap();
            let tree = TreeGraph::random(2 + rng.below(4), case).unwrap();
            let t = rng.uniform(0.2, 0.7);
            let p = params(t, t * rng.uniform(0.02, 0.2));
            for distinct in [true, false] {
                let (tables, out) = find_embedding(&mu, &tree, &p, distinct, DEFAULT_NODE_BUDGET).unwrap();
                let expected = oracle(&mu, &tree, &p, distinct);
                assert!(!matches!(out, EmbedOutcome::BudgetExhausted { .. }));
                assert_eq!(out.witness().is_some(), expected, "case {case} distinct {distinct}");
                if !distinct {
                    assert_eq!(tables.has_homomorphism(), expected);
                }
                if distinct {
                    if expected {
                        found += 1
                    } else {
                        absent += 1
                    }
                }
            }
        }
        assert!(found > 20 && absent > 20, "found {found} absent {absent}");
    }

    #[test]
    fn positive_integral_implies_homomorphism() {
        let mut rng = SplitMix64::new(8);
        for case in 0..60 {
            let n = 5 + rng.below(15);
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.next_f64()).collect();
            let mu = AtomicMeasure::from_flat(2, coords, vec![1.0 / n as f64; n], "r").unwrap();
            let tree = TreeGraph::random(2 + rng.below(4), case).unwrap();
            let t = rng.uniform(0.2, 0.7);
            let p = params(t, t * rng.uniform(0.02, 0.2));
            let ms = vec![&mu; tree.n_vertices()];
            let value = integral_bruteforce(&ms, &tree, &p, u128::MAX).unwrap().value;
            let tables = feasibility_dp(&mu, &tree, &p).unwrap();
            assert_eq!(value > 0.0, tables.has_homomorphism(), "case {case}");
        }
    }

    #[test]
    fn cantor_subsample_matches_oracle() {
        let mu = build_ifs_measure(&IfsSpec::cantor_product(0.3f64, 3), DEFAULT_ATOM_CAP).unwrap();
        let mut rng = SplitMix64::new(4);
        for case in 0..10 {
            let keep = rng.sample_distinct(mu.len(), 25);
            let sub = restrict_measure(&mu, &keep).unwrap();
            let tree = TreeGraph::random(3 + rng.below(4), case).unwrap();
            let p = params(0.5, 0.1);
            let (_, out) = find_embedding(&sub, &tree, &p, true, DEFAULT_NODE_BUDGET).unwrap();
            assert_eq!(out.witness().is_some(), oracle(&sub, &tree, &p, true), "case {case}");
            if let Some(w) = out.witness() {
                verify_witness(w, &sub, &tree).unwrap();
            }
        }
    }

    #[test]
    fn witness_record_json() {
        let mu = line(3, 1.0);
        let tree = TreeGraph::path(3).unwrap();
        let (_, out) = find_embedding(&mu, &tree, &params(1.0, 0.1), true, DEFAULT_NODE_BUDGET).unwrap();
        let json = serde_json::to_value(out.witness().unwrap().record()).unwrap();
        assert_eq!(json["assignment"], serde_json::json!([0, 1, 2]));
        assert_eq!(json["gaps"][0]["edge"], serde_json::json!([0, 1]));
        assert_eq!(json["distinct"], true);
        assert_eq!(json["t"], 1.0);
    }
}
