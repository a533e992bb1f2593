//! Parameter sweeps over `t` and an `eps` ladder.
//!
//! Every `(t, eps)` grid point gets a row: field norms, the nested good sets
//! the tree's peel schedule needs, the restricted integral, whether a
//! homomorphism exists and (at the smallest `eps`) whether an injective
//! embedding was found. The interval `I` is the longest run of consecutive
//! grid values of `t` whose rows succeed at every `eps`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{extract_embedding, feasibility_dp, EmbedOutcome, DEFAULT_NODE_BUDGET};
use crate::error::{validation, Error, Result};
use crate::integral::integral_peel;
use crate::kernel::{convolve_at_atoms, field_norms, KernelParams};
use crate::measure::{
    build_ifs_measure, dyadic_radii, estimate_frostman, read_ifs_spec, read_measure, AtomicMeasure, FrostmanReport,
    DEFAULT_ATOM_CAP,
};
use crate::pigeonhole::{nested_good_sets, StageSummary};
use crate::scalar::Scalar;
use crate::tree::{compute_peel_schedule, read_tree, TreeGraph};

pub const CSV_HEADER: [&str; 9] = [
    "t",
    "eps",
    "l1",
    "l2sq",
    "delta_min",
    "integral_restricted",
    "homomorphism",
    "distinct_witness",
    "status",
];

pub const THREADS_ENV: &str = "TREECONFIG_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureSource {
    /// IFS spec file, built at the depth it names.
    Ifs(PathBuf),
    /// Measure file.
    Measure(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TGrid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl TGrid {
    pub fn values(&self) -> Vec<f64> {
        let span = self.max - self.min;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.max
                } else {
                    self.min + span * (i as f64) / last
                }
            })
            .collect()
    }
}

/// `halvings` values `eps0, eps0/2, ..., eps0/2^(halvings-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsLadder {
    pub eps0: f64,
    pub halvings: usize,
}

impl EpsLadder {
    pub fn values(&self) -> Vec<f64> {
        (0..self.halvings).map(|i| self.eps0 * 0.5f64.powi(i as i32)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanCaps {
    #[serde(default = "default_atom_cap")]
    pub atoms: u64,
    #[serde(default = "default_node_budget")]
    pub node_budget: u64,
}

fn default_atom_cap() -> u64 {
    DEFAULT_ATOM_CAP as u64
}

fn default_node_budget() -> u64 {
    DEFAULT_NODE_BUDGET
}

fn default_ratio_bound() -> f64 {
    8.0
}

impl Default for ScanCaps {
    fn default() -> Self {
        Self {
            atoms: default_atom_cap(),
            node_budget: default_node_budget(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub measure: MeasureSource,
    pub tree: PathBuf,
    pub t_grid: TGrid,
    pub eps_ladder: EpsLadder,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub caps: ScanCaps,
    #[serde(default = "default_ratio_bound")]
    pub ratio_bound: f64,
    /// Good-set stages beyond what the peel schedule requires.
    #[serde(default)]
    pub extra_depth: usize,
}

impl ScanConfig {
    /// Reads a config; relative paths inside it are taken relative to the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ScanConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.measure {
            MeasureSource::Ifs(p) | MeasureSource::Measure(p) => fix(p),
        }
        fix(&mut cfg.tree);
        fix(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let TGrid { min, max, steps } = self.t_grid;
        if !(min > 0.0) || !max.is_finite() || max < min {
            return validation(format!("t_grid needs 0 < min <= max (got [{min}, {max}])"));
        }
        if steps < 2 {
            return validation(format!("t_grid needs at least 2 steps (got {steps})"));
        }
        let EpsLadder { eps0, halvings } = self.eps_ladder;
        if !(eps0 > 0.0) || eps0 >= min {
            return validation(format!("eps0 must lie in (0, t_grid.min) (got {eps0})"));
        }
        if halvings == 0 {
            return validation("eps_ladder needs at least one value");
        }
        if !(self.ratio_bound >= 1.0) {
            return validation(format!("ratio_bound must be >= 1 (got {})", self.ratio_bound));
        }
        Ok(())
    }

    pub fn load_measure(&self) -> Result<AtomicMeasure<f64>> {
        match &self.measure {
            MeasureSource::Ifs(p) => build_ifs_measure(&read_ifs_spec(p)?, self.caps.atoms as u128),
            MeasureSource::Measure(p) => read_measure(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WitnessStatus {
    Found,
    Absent,
    Budget,
    /// Not searched at this `eps`.
    Na,
}

impl WitnessStatus {
    fn as_str(self) -> &'static str {
        match self {
            WitnessStatus::Found => "found",
            WitnessStatus::Absent => "absent",
            WitnessStatus::Budget => "budget",
            WitnessStatus::Na => "na",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    pub eps: f64,
    pub l1: Option<f64>,
    pub l2sq: Option<f64>,
    pub delta_min: Option<f64>,
    pub integral_restricted: Option<f64>,
    pub homomorphism: bool,
    pub distinct_witness: WitnessStatus,
    /// `ok`, `stage<j>_fail`, `zero_integral` or `error`.
    pub status: String,
    /// Stage that failed, if any.
    pub failed_stage: Option<usize>,
    pub stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScanRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub measure_label: String,
    pub atoms: usize,
    pub tree: Vec<(usize, usize)>,
    pub required_depth: usize,
    pub depth: usize,
    pub t_values: Vec<f64>,
    pub eps_values: Vec<f64>,
    pub rows: Vec<ScanRow>,
    /// Grid indices `(lo, hi)` of the detected interval, inclusive.
    pub interval: Option<(usize, usize)>,
    pub i_lo: Option<f64>,
    pub i_hi: Option<f64>,
    pub c_k: Option<f64>,
    #[serde(rename = "C_k")]
    pub big_c_k: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_bound: f64,
    pub uniform_ok: Option<bool>,
    /// Rows inside the interval with a positive integral but no homomorphism.
    pub consistency_violations: usize,
    /// `t` values at which some `eps` failed, keyed by failure status.
    pub failures: BTreeMap<String, Vec<f64>>,
    pub frostman: Option<FrostmanReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frostman_error: Option<String>,
    pub diagnosis: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    #[serde(rename = "I_lo")]
    pub i_lo: Option<f64>,
    #[serde(rename = "I_hi")]
    pub i_hi: Option<f64>,
    pub c_k: Option<f64>,
    #[serde(rename = "C_k")]
    pub big_c_k: Option<f64>,
}

impl ScanReport {
    pub fn interval_record(&self) -> IntervalRecord {
        IntervalRecord {
            i_lo: self.i_lo,
            i_hi: self.i_hi,
            c_k: self.c_k,
            big_c_k: self.big_c_k,
        }
    }

    /// Midpoint of the detected interval, snapped to the nearest grid value.
    pub fn interval_midpoint(&self) -> Option<f64> {
        self.interval.map(|(lo, hi)| self.t_values[(lo + hi) / 2])
    }

    pub fn rows_at(&self, t_index: usize) -> &[ScanRow] {
        let n = self.eps_values.len();
        &self.rows[t_index * n..(t_index + 1) * n]
    }
}

/// Builds a worker pool sized by `TREECONFIG_THREADS` when it is set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Validation(format!("{THREADS_ENV} must be a positive integer (got '{raw}')")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))
}

fn scan_row<T: Scalar>(
    mu: &AtomicMeasure<T>,
    tree: &TreeGraph,
    depth: usize,
    t: f64,
    eps: f64,
    search_witness: bool,
    node_budget: u64,
) -> ScanRow {
    let mut row = ScanRow {
        t,
        eps,
        l1: None,
        l2sq: None,
        delta_min: None,
        integral_restricted: None,
        homomorphism: false,
        distinct_witness: WitnessStatus::Na,
        status: "error".into(),
        failed_stage: None,
        stages: Vec::new(),
        witness: None,
        error: None,
    };
    let params = match KernelParams::new(T::lit(t), T::lit(eps)) {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let norms = convolve_at_atoms(mu, mu, &params).and_then(|f| field_norms(&f, mu.weights()));
    match norms {
        Ok((l1, l2sq)) => {
            row.l1 = Some(l1.to_f64_lossy());
            row.l2sq = Some(l2sq.to_f64_lossy());
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }

    match feasibility_dp(mu, tree, &params) {
        Ok(tables) => {
            row.homomorphism = tables.has_homomorphism();
            if search_witness {
                row.distinct_witness = match extract_embedding(&tables, mu, tree, &params, true, node_budget) {
                    Ok(EmbedOutcome::Found(w)) => {
                        row.witness = Some(w.assignment);
                        WitnessStatus::Found
                    }
                    Ok(EmbedOutcome::Absent { .. }) => WitnessStatus::Absent,
                    Ok(EmbedOutcome::BudgetExhausted { .. }) => WitnessStatus::Budget,
                    Err(e) => {
                        row.error = Some(e.to_string());
                        return row;
                    }
                };
            }
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }

    let chain = match nested_good_sets(mu, &params, depth) {
        Ok(c) => c,
        Err(Error::StageFailure { stage, reason, .. }) => {
            row.status = format!("stage{stage}_fail");
            row.failed_stage = Some(stage);
            row.error = Some(reason);
            return row;
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.stages = chain.summary();
    row.delta_min = Some(chain.min_delta().to_f64_lossy());
    let schedule = compute_peel_schedule(tree);
    match integral_peel(mu, &schedule, &params, Some(&chain)) {
        Ok(res) => {
            let v = res.value.to_f64_lossy();
            row.integral_restricted = Some(v);
            row.status = if v > 0.0 && v.is_finite() {
                "ok".into()
            } else {
                "zero_integral".into()
            };
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Longest run of consecutive `true`; ties go to the lowest start.
fn longest_run(ok: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &b) in ok.iter().chain(std::iter::once(&false)).enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(lo, hi)| i - s > hi + 1 - lo) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Runs the sweep on an already loaded measure and tree. `config.measure`,
/// `config.tree` and `config.output_dir` are not consulted.
pub fn scan_measure<T: Scalar>(mu: &AtomicMeasure<T>, tree: &TreeGraph, config: &ScanConfig) -> Result<ScanReport> {
    config.validate()?;
    let schedule = compute_peel_schedule(tree);
    let required_depth = schedule.required_depth();
    let depth = required_depth + config.extra_depth;
    let t_values = config.t_grid.values();
    let eps_values = config.eps_ladder.values();
    let smallest = eps_values.len() - 1;
    let jobs: Vec<(usize, usize)> = (0..t_values.len())
        .flat_map(|i| (0..eps_values.len()).map(move |j| (i, j)))
        .collect();

    let pool = worker_pool()?;
    let rows: Vec<ScanRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| {
                scan_row(
                    mu,
                    tree,
                    depth,
                    t_values[i],
                    eps_values[j],
                    j == smallest,
                    config.caps.node_budget,
                )
            })
            .collect()
    });

    let per_t_ok: Vec<bool> = (0..t_values.len())
        .map(|i| {
            rows[i * eps_values.len()..(i + 1) * eps_values.len()]
                .iter()
                .all(ScanRow::ok)
        })
        .collect();
    let interval = longest_run(&per_t_ok);

    let mut failures: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, &t) in t_values.iter().enumerate() {
        let mut seen: Vec<&str> = Vec::new();
        for row in &rows[i * eps_values.len()..(i + 1) * eps_values.len()] {
            if !row.ok() && !seen.contains(&row.status.as_str()) {
                seen.push(&row.status);
                failures.entry(row.status.clone()).or_default().push(t);
            }
        }
    }

    let (mut c_k, mut big_c_k, mut consistency_violations) = (None, None, 0);
    if let Some((lo, hi)) = interval {
        let inside = &rows[lo * eps_values.len()..(hi + 1) * eps_values.len()];
        let values: Vec<f64> = inside.iter().filter_map(|r| r.integral_restricted).collect();
        c_k = values.iter().copied().reduce(f64::min);
        big_c_k = values.iter().copied().reduce(f64::max);
        consistency_violations = inside
            .iter()
            .filter(|r| r.integral_restricted.is_some_and(|v| v > 0.0) && !r.homomorphism)
            .count();
    }
    let ratio = c_k.zip(big_c_k).map(|(lo, hi)| hi / lo);
    let uniform_ok = ratio.map(|r| r <= config.ratio_bound);

    let n_centers = mu.len().min(100);
    let radii = dyadic_radii(config.t_grid.min, 5);
    let (frostman, frostman_error) = match estimate_frostman(mu, n_centers, &radii, config.seed) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let diagnosis = match interval {
        Some((lo, hi)) => format!(
            "I = [{}, {}] ({} of {} grid points); max/min restricted integral {} (bound {})",
            t_values[lo],
            t_values[hi],
            hi - lo + 1,
            t_values.len(),
            ratio.map_or("undefined".into(), |r| r.to_string()),
            config.ratio_bound
        ),
        None => {
            let parts: Vec<String> = failures
                .iter()
                .map(|(k, ts)| format!("{k} at {} t values", ts.len()))
                .collect();
            format!("I is empty: no t passed at every eps ({})", parts.join(", "))
        }
    };

    Ok(ScanReport {
        measure_label: mu.label().to_string(),
        atoms: mu.len(),
        tree: tree.edges().to_vec(),
        required_depth,
        depth,
        i_lo: interval.map(|(lo, _)| t_values[lo]),
        i_hi: interval.map(|(_, hi)| t_values[hi]),
        t_values,
        eps_values,
        rows,
        interval,
        c_k,
        big_c_k,
        ratio,
        ratio_bound: config.ratio_bound,
        uniform_ok,
        consistency_violations,
        failures,
        frostman,
        frostman_error,
        diagnosis,
    })
}

/// Loads the measure and tree named by `config` and sweeps.
pub fn scan_interval(config: &ScanConfig) -> Result<ScanReport> {
    config.validate()?;
    let mu = config.load_measure()?;
    let tree = read_tree(&config.tree)?;
    scan_measure(&mu, &tree, config)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

/// Writes `scan.csv`, `report.json` and `interval.json` into `dir`.
pub fn emit_report(report: &ScanReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("scan.csv"))?;
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.t.to_string(),
            r.eps.to_string(),
            opt(r.l1),
            opt(r.l2sq),
            opt(r.delta_min),
            opt(r.integral_restricted),
            r.homomorphism.to_string(),
            r.distinct_witness.as_str().to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(
        dir.join("interval.json"),
        serde_json::to_string_pretty(&report.interval_record())? + "\n",
    )?;
    Ok(())
}
