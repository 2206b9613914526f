//! Monthly load-profile analytics for anonymized electricity customers.
//!
//! Customers are grouped into NACE-location pairs; each pair is scored by
//! how closely its members' monthly demand shapes fit a target profile, and
//! acquisition strategies that favour the best pairs are simulated against a
//! random baseline.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI uses.

pub mod cli;
mod csvio;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pairing;
pub mod scalar;
pub mod simulate;
pub mod synth;
pub mod targets;

/// Months per profile.
pub const MONTHS: usize = 12;

pub use error::{Error, Result};
pub use metrics::{
    eid, enhancement_metric, global_distance, median_distance, profile_distance, reduction,
};
pub use model::{load_customers, normalize_profile, MonthIndex};
pub use pairing::{
    aggregate_matrix, attach_kpis, build_pairs, identification_stats, slice_row, CodeMap,
    IdentificationStats, PairKey,
};
pub use scalar::Scalar;
pub use simulate::{
    accumulate_curve, baseline_band, greedy_sequence, power_sequence, random_sequence,
    reduction_curve, AcquisitionSequence, Granularity, PowerKey, Strategy,
};
pub use synth::{generate, GroundTruth, SynthConfig};
pub use targets::{complement_target, flat_target, solar_target, TargetLabel, TargetResolver};

pub type CustomerRecord = model::CustomerRecord<f64>;
pub type CustomerDataset = model::CustomerDataset<f64>;
pub type NormalizedProfile = model::NormalizedProfile<f64>;
pub type TargetProfile = targets::TargetProfile<f64>;
pub type AggregateDemand = targets::AggregateDemand<f64>;
pub type SolarTable = targets::SolarTable<f64>;
pub type Distance = metrics::Distance<f64>;
pub type EnhancementMetric = metrics::EnhancementMetric<f64>;
pub type EnhancementIndicator = metrics::EnhancementIndicator<f64>;
pub type PairRecord = pairing::PairRecord<f64>;
pub type PairTable = pairing::PairTable<f64>;
pub type IndicatorMatrix = pairing::IndicatorMatrix<f64>;
pub type DistanceCurve = simulate::DistanceCurve<f64>;
pub type BaselineCurve = simulate::BaselineCurve<f64>;
