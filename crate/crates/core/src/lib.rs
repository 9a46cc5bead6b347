//! Combinatorial map partitioning for classification-based geolocalization.
//!
//! The pipeline:
//!
//! 1. [`dataset`] bins geotagged feature records into an equirectangular
//!    quadtree of [`cells`] and builds the initial region graph.
//! 2. [`partition`] greedily merges the graph into several coarse geoclass
//!    sets, each with its own scoring weights and feature subspace.
//! 3. [`classify`] produces per-set class scores, either from the built-in
//!    nearest-centroid baseline or from an external score file.
//! 4. [`fusion`] intersects the sets into fine partitions, fuses normalized
//!    scores onto cells and predicts the mean training location of the
//!    best-scoring cells.
//! 5. [`eval`] reports accuracy at distance thresholds.

pub mod cells;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geo;
pub mod hash;
pub mod partition;
pub mod synth;

pub use cells::{cell_at, CellId};
pub use classify::{train_centroid_classifier, CentroidClassifier, Query, ScoreVector};
pub use dataset::{build_base_graph, Dataset, GeoRecord};
pub use error::{Error, Result};
pub use eval::{accuracy_at, EvalReport, DEFAULT_RADII_KM};
pub use fusion::{
    build_fine_index, fuse_scores, predict_location, CellScoreField, FinePartitionIndex,
    FusionMode, PartitionAggregates, Prediction,
};
pub use geo::{geodesic_km, weighted_centroid, GeoPoint};
pub use partition::{generate_geoclass_set, GenParams, GeoclassSet, RegionGraph};
