//! Computational laboratory for tree configurations in distance graphs of
//! fractal sets.
//!
//! Everything is generic over a floating point [`Scalar`] (`f32` or `f64`);
//! the `*64` aliases below are what the CLI and file formats use.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod embed;
pub mod error;
pub mod integral;
pub mod kernel;
pub mod measure;
pub mod pigeonhole;
pub mod rng;
pub mod scalar;
pub mod scan;
pub mod spatial;
pub mod tree;

pub use embed::{
    extract_embedding, feasibility_dp, find_embedding, verify_witness, EmbedOutcome, EmbeddingWitness,
    FeasibilityTables, WitnessRecord,
};
pub use error::{Error, Result};
pub use integral::{
    chain_neighborhood_mass, integral_bruteforce, integral_peel, restricted_integral, IntegralRecord, IntegralResult,
    Method,
};
pub use kernel::{convolve_at_atoms, convolve_field, field_norms, kernel_weight, Convolver, FieldValues, KernelParams};
pub use measure::{
    ball_mass, build_ifs_measure, estimate_frostman, restrict_measure, AtomicMeasure, FrostmanReport, IfsSpec,
    SimilarityMap,
};
pub use pigeonhole::{chebyshev_profile, good_set, nested_good_sets, GoodSet, GoodSetChain, LevelProfile};
pub use rng::SplitMix64;
pub use scalar::Scalar;
pub use scan::{emit_report, scan_interval, scan_measure, ScanConfig, ScanReport, ScanRow};
pub use tree::{compute_peel_schedule, validate_tree, PeelSchedule, TreeGraph};

pub type Measure64 = AtomicMeasure<f64>;
pub type Measure32 = AtomicMeasure<f32>;
pub type Params64 = KernelParams<f64>;
pub type Params32 = KernelParams<f32>;
pub type Witness64 = EmbeddingWitness<f64>;
pub type Chain64 = GoodSetChain<f64>;
