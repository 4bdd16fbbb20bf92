//! Batch analytics over geotagged photo metadata.
//!
//! The pipeline reads photo records from CSV, assigns each photo to a site of
//! a circular-geofence catalog, and derives:
//!
//! - per-site popularity tables and dwell times ([`site_stats`]),
//! - per-user visit sequences and row-stochastic transition matrices ([`markov`]),
//! - affinity-propagation clusters over image features ([`apcluster`]) with
//!   separation/compactness diagnostics ([`cluster_metrics`]),
//! - scene-site occurrence matrices from per-photo scene labels ([`scene_matrix`]).
//!
//! [`synth`] generates seeded synthetic inputs with known ground truth, and
//! [`report`] renders everything to CSV, JSON and SVG.

pub mod apcluster;
pub mod cluster_metrics;
pub mod geofence;
pub mod ingestion;
pub mod markov;
pub mod report;
pub mod scene_matrix;
pub mod site_stats;
pub mod synth;

pub(crate) mod util;

pub use apcluster::{APConfig, ClusterResult, Clustering, FeatureVector, Preference};
pub use geofence::{haversine_km, AssignedPhoto, LatLon, Site, SiteCatalog, TicketGroup};
pub use ingestion::{Dataset, PhotoRecord};
pub use markov::{SiteSequence, TransitionMatrix, Visit};
