//! Seeded synthetic inputs with known ground truth.
//!
//! Itineraries are sampled from a known transition matrix, photos are
//! scattered uniformly inside each visited site's buffer, and feature
//! vectors come from Gaussian blob mixtures. Each user draws from its own
//! stream, keyed by `(seed, user index)`, so adding users never changes the
//! data of existing ones.

use std::collections::HashMap;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apcluster::FeatureVector;
use crate::geofence::{assign_point, destination, AssignedPhoto, SiteCatalog};
use crate::ingestion::{Dataset, PhotoRecord};
use crate::markov::{SiteSequence, Visit};
use crate::scene_matrix::SceneLabel;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("site {0} has no outgoing probability but the sequence must continue")]
    DegenerateRow(String),
    #[error("site {0} is not in the catalog")]
    UnknownSite(String),
    #[error("no point of site {0}'s buffer maps back to it")]
    UnreachableSite(String),
    #[error("placed {placed} of {requested} blob centers")]
    CenterSamplingFailed { placed: usize, requested: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqLen {
    Fixed(usize),
    /// Length `k >= 1` with probability `(1 - p)^(k - 1) p`.
    Geometric(f64),
}

fn default_photos_per_visit() -> [usize; 2] {
    [1, 4]
}

fn default_intra_gap() -> [i64; 2] {
    [60, 1800]
}

fn default_inter_gap() -> [i64; 2] {
    [3600, 3 * 86400]
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2004, 1, 1, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub seq_len: SeqLen,
    /// Site ids indexing the rows and columns of `true_matrix`.
    pub sites: Vec<String>,
    /// Row-stochastic with a zero diagonal; all-zero rows are allowed and
    /// end a sequence.
    pub true_matrix: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Inclusive range of photos per visit.
    #[serde(default = "default_photos_per_visit")]
    pub photos_per_visit: [usize; 2],
    /// Inclusive range, in seconds, between photos of one visit.
    #[serde(default = "default_intra_gap")]
    pub intra_visit_gap_s: [i64; 2],
    /// Inclusive range, in seconds, from a visit's last photo to the next
    /// visit's first.
    #[serde(default = "default_inter_gap")]
    pub inter_visit_gap_s: [i64; 2],
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    /// Users start uniformly within this many days after `start`.
    #[serde(default)]
    pub start_spread_days: i64,
    #[serde(default)]
    pub seed: u64,
}

const SUM_TOLERANCE: f64 = 1e-9;

impl SynthSpec {
    /// Spec over `n_sites` sites named `S01..` with a random transition
    /// matrix and uniform initial distribution.
    pub fn random(n_sites: usize, n_users: usize, seq_len: SeqLen, seed: u64) -> Self {
        SynthSpec {
            n_users,
            seq_len,
            sites: (1..=n_sites).map(|i| format!("S{i:02}")).collect(),
            true_matrix: random_transition_matrix(n_sites, seed),
            initial: vec![1.0 / n_sites as f64; n_sites],
            photos_per_visit: default_photos_per_visit(),
            intra_visit_gap_s: default_intra_gap(),
            inter_visit_gap_s: default_inter_gap(),
            start: default_start(),
            start_spread_days: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let n = self.sites.len();
        if n == 0 {
            return bad("no sites".into());
        }
        if self.true_matrix.len() != n || self.true_matrix.iter().any(|r| r.len() != n) {
            return bad(format!("true_matrix must be {n}x{n}"));
        }
        for (i, row) in self.true_matrix.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return bad(format!("row {i} has invalid probabilities"));
            }
            if row[i] != 0.0 {
                return bad(format!("row {i} has a self-transition"));
            }
            let sum: f64 = row.iter().sum();
            if sum != 0.0 && (sum - 1.0).abs() > SUM_TOLERANCE {
                return bad(format!("row {i} sums to {sum}"));
            }
        }
        if self.initial.len() != n
            || self.initial.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.initial.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE
        {
            return bad("initial distribution must be a probability vector over the sites".into());
        }
        match self.seq_len {
            SeqLen::Fixed(0) => return bad("sequence length must be positive".into()),
            SeqLen::Geometric(p) if !(p > 0.0 && p <= 1.0) => return bad("geometric p must lie in (0, 1]".into()),
            _ => {}
        }
        let [lo, hi] = self.photos_per_visit;
        if lo == 0 || lo > hi {
            return bad("photos_per_visit must be a range of positive counts".into());
        }
        for (name, [lo, hi]) in [("intra_visit_gap_s", self.intra_visit_gap_s), ("inter_visit_gap_s", self.inter_visit_gap_s)] {
            if lo < 1 || lo > hi {
                return bad(format!("{name} must be a range of positive seconds"));
            }
        }
        if self.start_spread_days < 0 {
            return bad("start_spread_days must be non-negative".into());
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream(seed: u64, index: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index ^ splitmix64(salt))))
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

const ITINERARY: u64 = 1;
const COORDINATES: u64 = 2;

/// Index drawn with probability proportional to `weights`; `None` when all
/// weights are zero.
fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Random row-stochastic matrix with a zero diagonal.
pub fn random_transition_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, u64::MAX, 0x7A11);
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| if i == j || n == 1 { 0.0 } else { -rng.random::<f64>().max(1e-12).ln() })
                .collect();
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
            row
        })
        .collect()
}

pub fn user_id(index: usize) -> String {
    format!("user{index:06}")
}

/// A visit and the timestamps of its photos.
type TimedVisit = (Visit, Vec<DateTime<Utc>>);

fn simulate_user(spec: &SynthSpec, index: usize) -> Result<Vec<TimedVisit>, SynthError> {
    let mut rng = stream(spec.seed, index as u64, ITINERARY);
    let len = match spec.seq_len {
        SeqLen::Fixed(k) => k,
        SeqLen::Geometric(p) => {
            let mut k = 1;
            while rng.random::<f64>() >= p {
                k += 1;
            }
            k
        }
    };
    let user = user_id(index);
    let spread = spec.start_spread_days * 86_400;
    let mut clock = spec.start + TimeDelta::seconds(if spread > 0 { rng.random_range(0..=spread) } else { 0 });
    let mut site = categorical(&mut rng, &spec.initial).ok_or_else(|| SynthError::InvalidSpec("empty initial".into()))?;
    let mut visits = Vec::with_capacity(len);
    for step in 0..len {
        if step > 0 {
            site = categorical(&mut rng, &spec.true_matrix[site])
                .ok_or_else(|| SynthError::DegenerateRow(spec.sites[site].clone()))?;
            let [lo, hi] = spec.inter_visit_gap_s;
            clock += TimeDelta::seconds(rng.random_range(lo..=hi));
        }
        let [lo, hi] = spec.photos_per_visit;
        let n_photos = rng.random_range(lo..=hi);
        let mut stamps = vec![clock];
        for _ in 1..n_photos {
            let [lo, hi] = spec.intra_visit_gap_s;
            clock += TimeDelta::seconds(rng.random_range(lo..=hi));
            stamps.push(clock);
        }
        let visit = Visit {
            user_id: user.clone(),
            site_id: spec.sites[site].clone(),
            first_ts: stamps[0],
            last_ts: clock,
            n_photos,
        };
        visits.push((visit, stamps));
    }
    Ok(visits)
}

pub fn sample_sequences(spec: &SynthSpec) -> Result<Vec<SiteSequence>, SynthError> {
    spec.validate()?;
    (0..spec.n_users)
        .map(|u| {
            Ok(SiteSequence {
                user_id: user_id(u),
                visits: simulate_user(spec, u)?.into_iter().map(|(v, _)| v).collect(),
            })
        })
        .collect()
}

/// A generated dataset together with the itineraries it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub sequences: Vec<SiteSequence>,
}

/// Expands each visit into photos placed uniformly (by area) inside the
/// site's buffer, at points the geofence assigns back to that site.
pub fn generate_dataset(spec: &SynthSpec, catalog: &SiteCatalog) -> Result<Generated, SynthError> {
    spec.validate()?;
    let site_index: Vec<usize> = spec
        .sites
        .iter()
        .map(|s| catalog.index_of(s).ok_or_else(|| SynthError::UnknownSite(s.clone())))
        .collect::<Result<_, _>>()?;
    let by_id: HashMap<&str, usize> = spec.sites.iter().map(String::as_str).zip(site_index).collect();

    let mut records = Vec::new();
    let mut sequences = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let mut rng = stream(spec.seed, u as u64, COORDINATES);
        let user = user_id(u);
        let mut visits = Vec::new();
        let mut k = 0;
        for (visit, stamps) in simulate_user(spec, u)? {
            let ci = by_id[visit.site_id.as_str()];
            for ts in stamps {
                let p = point_in_site(&mut rng, catalog, ci)?;
                records.push(PhotoRecord {
                    photo_id: format!("{user}-{k:05}"),
                    user_id: user.clone(),
                    lat: p.lat,
                    lon: p.lon,
                    timestamp: ts,
                    url: None,
                });
                k += 1;
            }
            visits.push(visit);
        }
        sequences.push(SiteSequence { user_id: user, visits });
    }
    Ok(Generated { dataset: Dataset::from_records(records), sequences })
}

fn point_in_site<R: Rng>(rng: &mut R, catalog: &SiteCatalog, ci: usize) -> Result<crate::LatLon, SynthError> {
    let site = &catalog.sites()[ci];
    for _ in 0..64 {
        let r = site.buffer_km * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let p = destination(site.center(), theta, r);
        if assign_point(p, catalog) == Some(ci) {
            return Ok(p);
        }
    }
    let c = site.center();
    if assign_point(c, catalog) == Some(ci) {
        Ok(c)
    } else {
        Err(SynthError::UnreachableSite(site.site_id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSample {
    pub vectors: Vec<FeatureVector>,
    /// Ground-truth blob index per vector.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

const CENTER_RETRIES: usize = 10_000;

/// Gaussian blobs whose centers are pairwise at least `min_center_gap`
/// apart, drawn by rejection sampling in a cube of side
/// `2 * min_center_gap * max(n_blobs, 1)`.
pub fn sample_blobs(
    n_blobs: usize,
    points_per_blob: usize,
    dim: usize,
    sigma: f64,
    min_center_gap: f64,
    seed: u64,
) -> Result<BlobSample, SynthError> {
    if !(min_center_gap > 0.0 && min_center_gap.is_finite()) {
        return Err(SynthError::InvalidSpec("min_center_gap must be positive".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) || dim == 0 {
        return Err(SynthError::InvalidSpec("need sigma >= 0 and dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2.0 * min_center_gap * n_blobs.max(1) as f64;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let mut placed = false;
        for _ in 0..CENTER_RETRIES {
            let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * side).collect();
            let clear = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_center_gap
            });
            if clear {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::CenterSamplingFailed { placed: centers.len(), requested: n_blobs });
        }
    }
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut vectors = Vec::with_capacity(n_blobs * points_per_blob);
    let mut labels = Vec::with_capacity(n_blobs * points_per_blob);
    for (b, c) in centers.iter().enumerate() {
        for p in 0..points_per_blob {
            let values = c
                .iter()
                .map(|&x| if sigma == 0.0 { x } else { x + noise.sample(&mut rng) })
                .collect();
            vectors.push(FeatureVector::new(format!("b{b}-{p:04}"), values));
            labels.push(b);
        }
    }
    Ok(BlobSample { vectors, labels, centers })
}

/// Feature vectors for assigned photos: each site owns `blobs_per_site`
/// Gaussian themes, and each photo draws one theme. Values depend only on
/// (seed, site id, photo id).
pub fn site_embeddings(assigned: &[AssignedPhoto], dim: usize, blobs_per_site: usize, sigma: f64, seed: u64) -> Vec<FeatureVector> {
    let blobs_per_site = blobs_per_site.max(1);
    let mut themes: HashMap<&str, Vec<Vec<f64>>> = HashMap::new();
    assigned
        .iter()
        .map(|a| {
            let centers = themes.entry(&a.site_id).or_insert_with(|| {
                let mut rng = stream(seed, fnv1a(&a.site_id), 0xB10B);
                (0..blobs_per_site)
                    .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
                    .collect()
            });
            let mut rng = stream(seed, fnv1a(&a.photo.photo_id), 0xF0F0);
            let theme = &centers[rng.random_range(0..blobs_per_site)];
            let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
            let values = theme.iter().map(|&x| if sigma == 0.0 { x } else { x + noise.sample(&mut rng) }).collect();
            FeatureVector::new(a.photo.photo_id.clone(), values)
        })
        .collect()
}

pub const SCENE_VOCABULARY: [&str; 12] = [
    "mountain_path",
    "valley",
    "field_cultivated",
    "amphitheater",
    "archaeological_excavation",
    "ruin",
    "castle",
    "church_outdoor",
    "plaza",
    "street",
    "bazaar_outdoor",
    "medina",
];

/// Top-1 scene labels for assigned photos from site-specific label
/// distributions over [`SCENE_VOCABULARY`]. Confidences are rounded to four
/// decimals.
pub fn site_scene_labels(assigned: &[AssignedPhoto], seed: u64) -> Vec<SceneLabel> {
    let mut weights: HashMap<&str, Vec<f64>> = HashMap::new();
    assigned
        .iter()
        .map(|a| {
            let w = weights.entry(&a.site_id).or_insert_with(|| {
                let mut rng = stream(seed, fnv1a(&a.site_id), 0x5CE7);
                SCENE_VOCABULARY.iter().map(|_| -rng.random::<f64>().max(1e-12).ln().powi(2)).map(f64::abs).collect()
            });
            let mut rng = stream(seed, fnv1a(&a.photo.photo_id), 0x1AB1);
            let idx = categorical(&mut rng, w).unwrap_or(0);
            let confidence = (rng.random_range(0.3..1.0f64) * 1e4).round() / 1e4;
            SceneLabel { photo_id: a.photo.photo_id.clone(), label: SCENE_VOCABULARY[idx].to_owned(), confidence }
        })
        .collect()
}
