//! The tree configuration integral
//!
//! ```text
//! T(mu) = ∫…∫ prod_{(i,j) in E(T)} sigma_t^eps(x_i - x_j) dmu_0(x_0) … dmu_k(x_k)
//! ```
//!
//! evaluated two ways: by enumerating every tuple of atoms (the oracle), and by
//! peeling leaves round by round, where each leaf is integrated out into a
//! field at its host, ending with a double integral over the terminal edge.
//! The peeled form is the same finite sum reorganized, so the two agree up to
//! rounding. With a [`GoodSetChain`], each vertex is restricted to the good set
//! of the last round it hosted, and the terminal endpoint reached last is pushed
//! one stage deeper when both endpoints sit at the same depth.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{kernel_between, Convolver, KernelParams};
use crate::measure::AtomicMeasure;
use crate::pigeonhole::{nested_good_sets, GoodSetChain};
use crate::scalar::{KahanSum, Scalar};
use crate::tree::{compute_peel_schedule, PeelSchedule, TreeGraph};

/// Default cap on `prod_v |atoms(mu_v)|` for [`integral_bruteforce`].
pub const DEFAULT_TERM_CAP: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oracle,
    Peel,
}

/// Range of the factors produced in one peeling round (or, for the terminal
/// entry, of the field the inner endpoint induces on the outer one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    /// 1-based round, or `None` for the terminal edge.
    pub round: Option<usize>,
    pub hosts: Vec<usize>,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegralResult<T> {
    pub value: T,
    pub method: Method,
    pub stage_log: Vec<StageStat>,
    pub params: KernelParams<T>,
    pub restricted: bool,
}

/// Exportable form: `{t, eps, tree_label, method, value, stage_log}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralRecord {
    pub t: f64,
    pub eps: f64,
    pub tree_label: String,
    pub method: Method,
    pub restricted: bool,
    pub value: f64,
    pub stage_log: Vec<StageStat>,
}

impl<T: Scalar> IntegralResult<T> {
    pub fn record(&self, tree_label: &str) -> IntegralRecord {
        IntegralRecord {
            t: self.params.t.to_f64_lossy(),
            eps: self.params.eps.to_f64_lossy(),
            tree_label: tree_label.to_string(),
            method: self.method,
            restricted: self.restricted,
            value: self.value.to_f64_lossy(),
            stage_log: self.stage_log.clone(),
        }
    }
}

/// Vertices in BFS order from 0, with each vertex's parent.
fn bfs_order(tree: &TreeGraph) -> (Vec<usize>, Vec<Option<usize>>) {
    let adj = tree.adjacency();
    let mut parent = vec![None; tree.n_vertices()];
    let mut seen = vec![false; tree.n_vertices()];
    let mut order = Vec::with_capacity(tree.n_vertices());
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                parent[u] = Some(v);
                queue.push_back(u);
            }
        }
    }
    (order, parent)
}

/// Sum over every assignment of atoms to tree vertices (vertex `v` drawing from
/// `measures[v]`) of the edge-kernel product times the atom weights. Branches
/// whose partial product is already zero are skipped.
pub fn integral_bruteforce<T: Scalar>(
    measures: &[&AtomicMeasure<T>],
    tree: &TreeGraph,
    params: &KernelParams<T>,
    max_terms: u128,
) -> Result<IntegralResult<T>> {
    let n = tree.n_vertices();
    if measures.len() != n {
        return validation(format!("{} measures for a tree on {n} vertices", measures.len()));
    }
    let d = measures[0].dim();
    if measures.iter().any(|m| m.dim() != d) {
        return validation("all vertex measures must share a dimension");
    }
    let terms = measures
        .iter()
        .try_fold(1u128, |acc, m| acc.checked_mul(m.len() as u128))
        .unwrap_or(u128::MAX);
    if terms > max_terms {
        return Err(Error::Resource {
            what: "brute-force configuration terms".into(),
            needed: terms,
            cap: max_terms,
        });
    }

    let (order, parent) = bfs_order(tree);
    let mut assign = vec![0usize; n];
    let mut acc = KahanSum::new();

    #[allow(clippy::too_many_arguments)]
    fn recurse<T: Scalar>(
        depth: usize,
        partial: T,
        order: &[usize],
        parent: &[Option<usize>],
        measures: &[&AtomicMeasure<T>],
        params: &KernelParams<T>,
        assign: &mut [usize],
        acc: &mut KahanSum<T>,
    ) {
        if depth == order.len() {
            acc.add(partial);
            return;
        }
        let v = order[depth];
        let mu = measures[v];
        for a in 0..mu.len() {
            let w = mu.weights()[a];
            if w == T::zero() {
                continue;
            }
            let k = match parent[v] {
                Some(p) => kernel_between(mu.atom(a), measures[p].atom(assign[p]), params),
                None => T::one(),
            };
            if k == T::zero() {
                continue;
            }
            assign[v] = a;
            recurse(depth + 1, partial * w * k, order, parent, measures, params, assign, acc);
        }
    }
    recurse(0, T::one(), &order, &parent, measures, params, &mut assign, &mut acc);

    Ok(IntegralResult {
        value: acc.value(),
        method: Method::Oracle,
        stage_log: Vec::new(),
        params: *params,
        restricted: false,
    })
}

/// Evaluates the integral by leaf peeling, every vertex on `mu` (or on its
/// good-set restriction when `chain` is given).
pub fn integral_peel<T: Scalar>(
    mu: &AtomicMeasure<T>,
    schedule: &PeelSchedule,
    params: &KernelParams<T>,
    chain: Option<&GoodSetChain<T>>,
) -> Result<IntegralResult<T>> {
    let n = schedule.n_vertices;
    let stages = match chain {
        Some(ch) => {
            if ch.source_len != mu.len() {
                return validation(format!(
                    "good sets built on {} atoms, measure has {}",
                    ch.source_len,
                    mu.len()
                ));
            }
            if ch.params != *params {
                return validation("good sets were built with different kernel parameters");
            }
            if ch.depth() < schedule.required_depth() {
                return validation(format!(
                    "schedule needs {} good-set stages, chain has {}",
                    schedule.required_depth(),
                    ch.depth()
                ));
            }
            if let Some(s) = ch.stages.iter().find(|s| s.indices.is_empty()) {
                return Err(Error::EmptyRestriction(format!(
                    "good set of stage {} is empty",
                    s.stage
                )));
            }
            schedule.restriction_stages()
        }
        None => vec![0; n],
    };
    let support = |j: usize| -> Vec<usize> {
        match chain {
            Some(ch) => ch.stage_indices(j),
            None => (0..mu.len()).collect(),
        }
    };
    let weights_at = |j: usize| -> Vec<T> {
        match chain {
            Some(ch) => ch.stage_weights(mu, j),
            None => mu.weights().to_vec(),
        }
    };

    let conv = Convolver::new(mu);
    let mut msg: Vec<Vec<T>> = vec![vec![T::one(); mu.len()]; n];
    let mut stage_log = Vec::with_capacity(schedule.rounds.len() + 1);

    for (r, round) in schedule.rounds.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for att in &round.hosts {
            let at = support(stages[att.host]);
            let mut factor = vec![T::one(); at.len()];
            for &leaf in &att.leaves {
                let src: Vec<T> = weights_at(stages[leaf])
                    .iter()
                    .zip(&msg[leaf])
                    .map(|(&w, &m)| w * m)
                    .collect();
                let field = conv.field_at(&src, mu, &at, params);
                for (f, v) in factor.iter_mut().zip(field) {
                    *f *= v;
                }
            }
            for (&i, &f) in at.iter().zip(&factor) {
                msg[att.host][i] *= f;
                let f = f.to_f64_lossy();
                lo = lo.min(f);
                hi = hi.max(f);
            }
        }
        stage_log.push(StageStat {
            round: Some(r + 1),
            hosts: round.hosts.iter().map(|h| h.host).collect(),
            min: lo,
            max: hi,
        });
    }

    let (a, b) = schedule.terminal.pair;
    let (inner, outer) = if stages[a] > stages[b] { (b, a) } else { (a, b) };
    let src: Vec<T> = weights_at(stages[inner])
        .iter()
        .zip(&msg[inner])
        .map(|(&w, &m)| w * m)
        .collect();
    let at = support(stages[outer]);
    let field = conv.field_at(&src, mu, &at, params);
    let outer_weights = weights_at(stages[outer]);
    let mut acc = KahanSum::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&i, &f) in at.iter().zip(&field) {
        acc.add(outer_weights[i] * msg[outer][i] * f);
        lo = lo.min(f.to_f64_lossy());
        hi = hi.max(f.to_f64_lossy());
    }
    stage_log.push(StageStat {
        round: None,
        hosts: vec![inner, outer],
        min: lo,
        max: hi,
    });

    Ok(IntegralResult {
        value: acc.value(),
        method: Method::Peel,
        stage_log,
        params: *params,
        restricted: chain.is_some(),
    })
}

/// Integral with every vertex restricted to its good set: builds the schedule
/// and the nested good sets it needs, then peels.
pub fn restricted_integral<T: Scalar>(
    mu: &AtomicMeasure<T>,
    tree: &TreeGraph,
    params: &KernelParams<T>,
) -> Result<(IntegralResult<T>, GoodSetChain<T>)> {
    let schedule = compute_peel_schedule(tree);
    let chain = nested_good_sets(mu, params, schedule.required_depth())?;
    let result = integral_peel(mu, &schedule, params, Some(&chain))?;
    Ok((result, chain))
}

/// Unnormalized product-measure mass of `k`-chains with every gap in
/// `[t - eps, t + eps]`: exactly `(2 eps)^k` times the chain integral.
pub fn chain_neighborhood_mass<T: Scalar>(mu: &AtomicMeasure<T>, k: usize, params: &KernelParams<T>) -> Result<T> {
    if k == 0 {
        return validation("chain length k must be at least 1");
    }
    let chain = TreeGraph::path(k + 1)?;
    let schedule = compute_peel_schedule(&chain);
    let value = integral_peel(mu, &schedule, params, None)?.value;
    let two_eps = params.eps + params.eps;
    Ok(value * two_eps.powi(k as i32))
}
