//! Visit sequences and first-order transition matrices between sites.
//!
//! A visit is a maximal run of one user's consecutive photos at one site, so
//! consecutive visits never share a site and the count diagonal is always 0.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::geofence::{AssignedPhoto, SiteCatalog};

/// Tolerance on row sums of estimated probabilities.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("unknown site: {0}")]
    UnknownSite(String),
    #[error("window must be positive")]
    InvalidWindow,
    #[error("min_prob must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("smoothing alpha must be non-negative and finite, got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Visit {
    pub user_id: String,
    pub site_id: String,
    pub first_ts: DateTime<Utc>,
    pub last_ts: DateTime<Utc>,
    pub n_photos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteSequence {
    pub user_id: String,
    pub visits: Vec<Visit>,
}

impl SiteSequence {
    pub fn site_ids(&self) -> Vec<&str> {
        self.visits.iter().map(|v| v.site_id.as_str()).collect()
    }
}

/// Groups photos by user, orders each album by (timestamp, photo_id), and
/// collapses runs of same-site photos into visits. Output is sorted by user id.
pub fn build_sequences(assigned: &[AssignedPhoto]) -> Vec<SiteSequence> {
    let mut albums: BTreeMap<&str, Vec<&AssignedPhoto>> = BTreeMap::new();
    for a in assigned {
        albums.entry(&a.photo.user_id).or_default().push(a);
    }
    albums
        .into_iter()
        .map(|(user, mut photos)| {
            photos.sort_by(|a, b| {
                a.photo
                    .timestamp
                    .cmp(&b.photo.timestamp)
                    .then_with(|| a.photo.photo_id.cmp(&b.photo.photo_id))
            });
            let mut visits: Vec<Visit> = Vec::new();
            for p in photos {
                match visits.last_mut() {
                    Some(v) if v.site_id == p.site_id => {
                        v.last_ts = p.photo.timestamp;
                        v.n_photos += 1;
                    }
                    _ => visits.push(Visit {
                        user_id: user.to_owned(),
                        site_id: p.site_id.clone(),
                        first_ts: p.photo.timestamp,
                        last_ts: p.photo.timestamp,
                        n_photos: 1,
                    }),
                }
            }
            SiteSequence { user_id: user.to_owned(), visits }
        })
        .collect()
}

/// Row-stochastic transition matrix with the counts it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    sites: Vec<String>,
    counts: Array2<u64>,
    probs: Array2<f64>,
}

impl TransitionMatrix {
    /// Normalizes each row of `counts` by its sum; zero rows stay zero.
    ///
    /// Panics if `counts` is not `sites.len()` square.
    pub fn from_counts(sites: Vec<String>, counts: Array2<u64>) -> Self {
        let n = sites.len();
        assert_eq!(counts.dim(), (n, n), "counts must be {n}x{n}");
        let mut probs = Array2::zeros((n, n));
        for (i, row) in counts.rows().into_iter().enumerate() {
            let total: u64 = row.sum();
            if total > 0 {
                for (j, &c) in row.iter().enumerate() {
                    probs[[i, j]] = c as f64 / total as f64;
                }
            }
        }
        TransitionMatrix { sites, counts, probs }
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index_of(&self, site_id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s == site_id)
    }

    pub fn prob(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.probs[[self.index_of(from)?, self.index_of(to)?]])
    }

    pub fn count(&self, from: &str, to: &str) -> Option<u64> {
        Some(self.counts[[self.index_of(from)?, self.index_of(to)?]])
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts.row(i).sum()
    }

    pub fn n_transitions(&self) -> u64 {
        self.counts.sum()
    }

    /// Rows without outgoing transitions; their probabilities are all zero.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.row_total(i) == 0).collect()
    }

    /// Add-alpha smoothed probabilities over off-diagonal cells. Meant for
    /// simulation; estimates reported elsewhere stay unsmoothed.
    pub fn smoothed_probs(&self, alpha: f64) -> Result<Array2<f64>, MarkovError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(MarkovError::InvalidAlpha(alpha));
        }
        let n = self.len();
        let mut out = Array2::zeros((n, n));
        if n < 2 {
            return Ok(out);
        }
        for i in 0..n {
            let denom = self.row_total(i) as f64 + alpha * (n - 1) as f64;
            if denom == 0.0 {
                continue;
            }
            for j in (0..n).filter(|&j| j != i) {
                out[[i, j]] = (self.counts[[i, j]] as f64 + alpha) / denom;
            }
        }
        Ok(out)
    }
}

/// Which adjacent visit pairs count as transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TransitionFilter {
    /// Keep pairs whose arrival visit starts at or after this instant.
    pub arrival_from: Option<DateTime<Utc>>,
    /// Keep pairs whose arrival visit starts strictly before this instant.
    pub arrival_before: Option<DateTime<Utc>>,
    /// Keep pairs whose gap (arrival first photo minus departure last photo)
    /// is at most this long.
    #[serde(serialize_with = "serialize_window")]
    pub max_gap: Option<TimeDelta>,
}

fn serialize_window<S: serde::Serializer>(w: &Option<TimeDelta>, s: S) -> Result<S::Ok, S::Error> {
    match w {
        Some(d) => s.serialize_some(&d.num_seconds()),
        None => s.serialize_none(),
    }
}

impl TransitionFilter {
    pub fn accepts(&self, from: &Visit, to: &Visit) -> bool {
        self.arrival_from.is_none_or(|b| to.first_ts >= b)
            && self.arrival_before.is_none_or(|b| to.first_ts < b)
            && self.max_gap.is_none_or(|w| to.first_ts - from.last_ts <= w)
    }
}

pub fn estimate(seqs: &[SiteSequence], catalog: &SiteCatalog) -> Result<TransitionMatrix, MarkovError> {
    estimate_with(seqs, catalog, &TransitionFilter::default())
}

/// Counts adjacent visit pairs accepted by `filter`, indexed by catalog order.
pub fn estimate_with(
    seqs: &[SiteSequence],
    catalog: &SiteCatalog,
    filter: &TransitionFilter,
) -> Result<TransitionMatrix, MarkovError> {
    let n = catalog.len();
    let index: BTreeMap<&str, usize> = catalog
        .sites()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.site_id.as_str(), i))
        .collect();
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| MarkovError::UnknownSite(id.to_owned()));
    let mut counts = Array2::<u64>::zeros((n, n));
    for seq in seqs {
        for v in &seq.visits {
            lookup(&v.site_id)?;
        }
        for pair in seq.visits.windows(2) {
            let (from, to) = (&pair[0], &pair[1]);
            if from.site_id != to.site_id && filter.accepts(from, to) {
                counts[[lookup(&from.site_id)?, lookup(&to.site_id)?]] += 1;
            }
        }
    }
    Ok(TransitionMatrix::from_counts(catalog.site_ids(), counts))
}

/// Default phase boundary: 2008-01-01T00:00:00Z.
pub fn default_phase_boundary() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2008, 1, 1, 0, 0, 0).unwrap()
}

/// Splits transitions by the arrival visit's first photo: strictly before
/// `boundary` is phase A, otherwise phase B.
pub fn split_by_phase(
    seqs: &[SiteSequence],
    catalog: &SiteCatalog,
    boundary: DateTime<Utc>,
) -> Result<(TransitionMatrix, TransitionMatrix), MarkovError> {
    split_by_phase_with(seqs, catalog, boundary, &TransitionFilter::default())
}

/// [`split_by_phase`] on top of an existing filter (e.g. a time window).
pub fn split_by_phase_with(
    seqs: &[SiteSequence],
    catalog: &SiteCatalog,
    boundary: DateTime<Utc>,
    base: &TransitionFilter,
) -> Result<(TransitionMatrix, TransitionMatrix), MarkovError> {
    let a = TransitionFilter { arrival_before: Some(boundary), ..*base };
    let b = TransitionFilter { arrival_from: Some(boundary), ..*base };
    Ok((estimate_with(seqs, catalog, &a)?, estimate_with(seqs, catalog, &b)?))
}

/// Counts only pairs whose inter-visit gap is at most `window`. Pass
/// [`TimeDelta::MAX`] for an unbounded window.
pub fn windowed(seqs: &[SiteSequence], catalog: &SiteCatalog, window: TimeDelta) -> Result<TransitionMatrix, MarkovError> {
    if window <= TimeDelta::zero() {
        return Err(MarkovError::InvalidWindow);
    }
    let filter = TransitionFilter { max_gap: Some(window), ..Default::default() };
    estimate_with(seqs, catalog, &filter)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub prob: f64,
    pub count: u64,
}

/// Entries with probability strictly above `min_prob`, highest first, at
/// most `k` of them. Ties keep (from, to) index order.
pub fn top_transitions(m: &TransitionMatrix, min_prob: f64, k: usize) -> Result<Vec<Transition>, MarkovError> {
    if !(0.0..=1.0).contains(&min_prob) {
        return Err(MarkovError::InvalidProbability(min_prob));
    }
    let mut cells: Vec<(usize, usize, f64)> = m
        .probs
        .indexed_iter()
        .filter(|&(_, &p)| p > min_prob)
        .map(|((i, j), &p)| (i, j, p))
        .collect();
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    Ok(cells
        .into_iter()
        .take(k)
        .map(|(i, j, prob)| Transition {
            from: m.sites[i].clone(),
            to: m.sites[j].clone(),
            prob,
            count: m.counts[[i, j]],
        })
        .collect())
}

/// Restricts counts to `group` x `group` (in the given order) and
/// renormalizes rows.
pub fn group_submatrix(m: &TransitionMatrix, group: &[String]) -> Result<TransitionMatrix, MarkovError> {
    let idx = group
        .iter()
        .map(|id| m.index_of(id).ok_or_else(|| MarkovError::UnknownSite(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let counts = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| m.counts[[idx[a], idx[b]]]);
    Ok(TransitionMatrix::from_counts(group.to_vec(), counts))
}
