use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use treeconfig::integral::DEFAULT_TERM_CAP;
use treeconfig::measure::{dyadic_radii, read_ifs_spec, read_measure, write_measure, DEFAULT_ATOM_CAP};
use treeconfig::tree::read_tree;
use treeconfig::{
    build_ifs_measure, compute_peel_schedule, emit_report, estimate_frostman, find_embedding, integral_bruteforce,
    integral_peel, nested_good_sets, restrict_measure, scan_interval, EmbedOutcome, Error, Measure64, Params64,
    ScanConfig, TreeGraph,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RESOURCE: u8 = 3;
const EXIT_EMPTY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "treeconfig",
    version,
    about = "Tree configurations in distance graphs of fractal measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Oracle,
    Peel,
}

#[derive(Subcommand)]
enum Command {
    /// Build an atomic measure from an IFS spec
    Generate {
        #[arg(long)]
        ifs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum number of atoms
        #[arg(long, default_value_t = DEFAULT_ATOM_CAP as u64)]
        cap: u64,
    },
    /// Estimate the ball-growth exponent of a measure
    Frostman {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long, default_value_t = 100)]
        centers: usize,
        /// Comma-separated radii; overrides --r-max/--count
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.25)]
        r_max: f64,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the tree configuration integral
    Integral {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_enum, default_value = "peel")]
        method: MethodArg,
        /// Restrict each vertex to its good set
        #[arg(long)]
        restricted: bool,
        /// Maximum number of product terms for the oracle
        #[arg(long, default_value_t = DEFAULT_TERM_CAP as u64)]
        cap: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build nested good sets
    Pigeonhole {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for an embedding of a tree into the distance graph
    Embed {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        eps: f64,
        /// Allow several vertices on one atom
        #[arg(long)]
        allow_repeats: bool,
        #[arg(long, default_value_t = treeconfig::embed::DEFAULT_NODE_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep t and eps from a config file and write reports
    Scan {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    Empty(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Resource { .. } => EXIT_RESOURCE,
        Error::StageFailure { .. } | Error::EmptyRestriction(_) => EXIT_EMPTY,
        Error::Invariant(_) => 1,
        _ => EXIT_VALIDATION,
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { ifs, out, cap } => {
            let mu = build_ifs_measure(&read_ifs_spec(&ifs)?, cap as u128)?;
            write_measure(&mu, &out)?;
            eprintln!("wrote {} atoms to {}", mu.len(), out.display());
        }
        Command::Frostman {
            measure,
            centers,
            radii,
            r_max,
            count,
            seed,
            out,
        } => {
            let mu: Measure64 = read_measure(&measure)?;
            let radii = radii.unwrap_or_else(|| dyadic_radii(r_max, count));
            let report = estimate_frostman(&mu, centers, &radii, seed)?;
            emit(&serde_json::to_value(report).map_err(Error::from)?, out.as_deref())?;
        }
        Command::Integral {
            measure,
            tree,
            t,
            eps,
            method,
            restricted,
            cap,
            out,
        } => {
            let mu: Measure64 = read_measure(&measure)?;
            let graph = read_tree(&tree)?;
            let params = Params64::new(t, eps)?;
            let schedule = compute_peel_schedule(&graph);
            let chain = if restricted {
                Some(nested_good_sets(&mu, &params, schedule.required_depth())?)
            } else {
                None
            };
            let result = match method {
                MethodArg::Peel => integral_peel(&mu, &schedule, &params, chain.as_ref())?,
                MethodArg::Oracle => {
                    let per_vertex: Vec<Measure64> = match &chain {
                        Some(ch) => schedule
                            .restriction_stages()
                            .iter()
                            .map(|&j| restrict_measure(&mu, &ch.stage_indices(j)))
                            .collect::<Result<_, _>>()?,
                        None => vec![mu.clone(); graph.n_vertices()],
                    };
                    let refs: Vec<&Measure64> = per_vertex.iter().collect();
                    let mut r = integral_bruteforce(&refs, &graph, &params, cap as u128)?;
                    r.restricted = restricted;
                    r
                }
            };
            let record = result.record(&label_of(&tree));
            emit(&serde_json::to_value(record).map_err(Error::from)?, out.as_deref())?;
        }
        Command::Pigeonhole {
            measure,
            t,
            eps,
            depth,
            out,
        } => {
            let mu: Measure64 = read_measure(&measure)?;
            let params = Params64::new(t, eps)?;
            let chain = nested_good_sets(&mu, &params, depth)?;
            let stages: Vec<Value> = chain
                .summary()
                .into_iter()
                .zip(&chain.stages)
                .map(|(s, g)| {
                    let mut v = serde_json::to_value(s).unwrap_or(Value::Null);
                    v["indices"] = json!(g.indices);
                    v
                })
                .collect();
            let doc = json!({
                "t": t,
                "eps": eps,
                "depth": depth,
                "atoms": mu.len(),
                "min_delta": chain.min_delta(),
                "stages": stages,
            });
            emit(&doc, out.as_deref())?;
        }
        Command::Embed {
            measure,
            tree,
            t,
            eps,
            allow_repeats,
            budget,
            out,
        } => {
            let mu: Measure64 = read_measure(&measure)?;
            let graph: TreeGraph = read_tree(&tree)?;
            let params = Params64::new(t, eps)?;
            let (tables, outcome) = find_embedding(&mu, &graph, &params, !allow_repeats, budget)?;
            match outcome {
                EmbedOutcome::Found(w) => {
                    let mut doc = serde_json::to_value(w.record()).map_err(Error::from)?;
                    doc["found"] = json!(true);
                    emit(&doc, out.as_deref())?;
                }
                EmbedOutcome::Absent { nodes } => {
                    let doc = json!({
                        "found": false,
                        "reason": "absent",
                        "homomorphism": tables.has_homomorphism(),
                        "nodes": nodes,
                        "t": t,
                        "eps": eps,
                    });
                    emit(&doc, out.as_deref())?;
                    return Err(Failure::Empty("no embedding exists".into()));
                }
                EmbedOutcome::BudgetExhausted { nodes } => {
                    let doc = json!({
                        "found": false,
                        "reason": "budget",
                        "homomorphism": tables.has_homomorphism(),
                        "nodes": nodes,
                        "t": t,
                        "eps": eps,
                    });
                    emit(&doc, out.as_deref())?;
                    return Err(Failure::Lib(Error::Resource {
                        what: "embedding search nodes".into(),
                        needed: nodes as u128 + 1,
                        cap: budget as u128,
                    }));
                }
            }
        }
        Command::Scan { config } => {
            let cfg = ScanConfig::load(&config)?;
            let report = scan_interval(&cfg)?;
            emit_report(&report, &cfg.output_dir)?;
            emit(
                &serde_json::to_value(report.interval_record()).map_err(Error::from)?,
                None,
            )?;
            eprintln!("{}", report.diagnosis);
            if report.interval.is_none() {
                return Err(Failure::Empty(report.diagnosis));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Empty(msg)) => {
            eprintln!("empty result: {msg}");
            ExitCode::from(EXIT_EMPTY)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
