//! Separation and compactness of the largest clusters at a site.
//!
//! Separation is the mean Euclidean distance over unordered exemplar pairs;
//! compactness is the mean cluster diameter (largest pairwise member
//! distance, 0 for a singleton). Both are computed on the largest
//! `max(2, ceil(fraction * K))` clusters, capped at `K`.

use serde::Serialize;
use thiserror::Error;

use crate::apcluster::{Cluster, ClusterResult, FeatureVector};
use crate::util::ceil_fraction;

pub const DEFAULT_TOP_FRACTION: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("separation needs at least 2 clusters, got {0}")]
    InsufficientClusters(usize),
    #[error("no clusters to measure")]
    NoClusters,
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("{vectors} vectors for {ids} clustered points")]
    VectorCountMismatch { vectors: usize, ids: usize },
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Number of clusters the metrics use out of `k`.
pub fn n_top_clusters(k: usize, fraction: f64) -> usize {
    ceil_fraction(fraction, k).max(2).min(k)
}

/// Largest clusters first (ties by exemplar photo id).
pub fn top_clusters(r: &ClusterResult, fraction: f64) -> Result<Vec<Cluster>, MetricsError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MetricsError::InvalidFraction(fraction));
    }
    let mut clusters = r.clusters();
    clusters.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then_with(|| r.photo_ids[a.exemplar].cmp(&r.photo_ids[b.exemplar]))
    });
    clusters.truncate(n_top_clusters(clusters.len(), fraction));
    Ok(clusters)
}

pub fn separation(clusters: &[Cluster], vectors: &[FeatureVector]) -> Result<f64, MetricsError> {
    if clusters.len() < 2 {
        return Err(MetricsError::InsufficientClusters(clusters.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in clusters.iter().enumerate() {
        for b in &clusters[i + 1..] {
            sum += euclidean(&vectors[a.exemplar].values, &vectors[b.exemplar].values);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

pub fn diameter(members: &[usize], vectors: &[FeatureVector]) -> f64 {
    let mut best = 0.0f64;
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            best = best.max(euclidean(&vectors[a].values, &vectors[b].values));
        }
    }
    best
}

pub fn compactness(clusters: &[Cluster], vectors: &[FeatureVector]) -> Result<f64, MetricsError> {
    if clusters.is_empty() {
        return Err(MetricsError::NoClusters);
    }
    let total: f64 = clusters.iter().map(|c| diameter(&c.members, vectors)).sum();
    Ok(total / clusters.len() as f64)
}

/// One row of the per-site clustering table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMetrics {
    pub site_id: String,
    pub n_clusters: usize,
    /// `None` when fewer than two clusters exist.
    pub separation: Option<f64>,
    pub compactness: Option<f64>,
    pub n_top_clusters_used: usize,
    /// Singletons among the clusters used; each contributes a diameter of 0.
    pub singleton_clusters_used: usize,
}

impl ClusterMetrics {
    pub fn is_defined(&self) -> bool {
        self.separation.is_some()
    }
}

/// Metrics over the top `fraction` of clusters, or over every cluster when
/// `all_clusters` is set. `vectors` must be aligned with `r.photo_ids`.
pub fn site_metrics(
    site_id: &str,
    r: &ClusterResult,
    vectors: &[FeatureVector],
    fraction: f64,
    all_clusters: bool,
) -> Result<ClusterMetrics, MetricsError> {
    if vectors.len() != r.photo_ids.len() {
        return Err(MetricsError::VectorCountMismatch { vectors: vectors.len(), ids: r.photo_ids.len() });
    }
    let chosen = top_clusters(r, if all_clusters { 1.0 } else { fraction })?;
    let n_clusters = r.n_clusters();
    let defined = n_clusters >= 2;
    Ok(ClusterMetrics {
        site_id: site_id.to_owned(),
        n_clusters,
        separation: if defined { Some(separation(&chosen, vectors)?) } else { None },
        compactness: if defined { Some(compactness(&chosen, vectors)?) } else { None },
        n_top_clusters_used: chosen.len(),
        singleton_clusters_used: chosen.iter().filter(|c| c.members.len() == 1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apcluster::Clustering;

    fn fv(x: &[f64]) -> FeatureVector {
        FeatureVector::new("", x.to_vec())
    }

    fn result_with_sizes(sizes: &[usize]) -> ClusterResult {
        let mut labels = Vec::new();
        let mut exemplars = Vec::new();
        for &s in sizes {
            let e = labels.len();
            exemplars.push(e);
            labels.extend(std::iter::repeat_n(e, s));
        }
        let n = labels.len();
        ClusterResult {
            photo_ids: (0..n).map(|i| format!("p{i:04}")).collect(),
            clustering: Clustering { exemplars, labels, converged: true, iterations: 1 },
        }
    }

    #[test]
    fn top_cluster_counts() {
        let r = result_with_sizes(&[1; 30]);
        assert_eq!(top_clusters(&r, 0.1).unwrap().len(), 3);
        let r = result_with_sizes(&[1; 5]);
        assert_eq!(top_clusters(&r, 0.1).unwrap().len(), 2);
        assert!(top_clusters(&r, 0.0).is_err());
    }

    #[test]
    fn top_clusters_are_the_largest() {
        let r = result_with_sizes(&[2, 5, 1, 5, 3]);
        let top = top_clusters(&r, 0.1).unwrap();
        // Two size-5 clusters; the lower exemplar id comes first.
        assert_eq!(top.iter().map(|c| c.exemplar).collect::<Vec<_>>(), vec![2, 8]);
    }

    #[test]
    fn single_cluster_is_flagged_undefined() {
        let r = result_with_sizes(&[3]);
        let vs = vec![fv(&[0.0]), fv(&[1.0]), fv(&[2.0])];
        let m = site_metrics("A", &r, &vs, 0.1, false).unwrap();
        assert!(!m.is_defined());
        assert_eq!(m.compactness, None);
        assert_eq!(m.n_top_clusters_used, 1);
    }

    #[test]
    fn separation_examples() {
        let vs = vec![fv(&[0.0, 0.0]), fv(&[7.0, 0.0])];
        let c = |e| Cluster { exemplar: e, members: vec![e] };
        assert_eq!(separation(&[c(0), c(1)], &vs).unwrap(), 7.0);

        // 3-4-5 right triangle.
        let vs = vec![fv(&[0.0, 0.0]), fv(&[3.0, 0.0]), fv(&[0.0, 4.0])];
        assert_eq!(separation(&[c(0), c(1), c(2)], &vs).unwrap(), 4.0);
        assert_eq!(separation(&[c(0)], &vs).unwrap_err(), MetricsError::InsufficientClusters(1));
    }

    #[test]
    fn compactness_examples() {
        let vs = vec![fv(&[0.0]), fv(&[3.0]), fv(&[1.0])];
        let line = Cluster { exemplar: 2, members: vec![0, 1, 2] };
        assert_eq!(compactness(std::slice::from_ref(&line), &vs).unwrap(), 3.0);
        let single = Cluster { exemplar: 0, members: vec![0] };
        assert_eq!(compactness(std::slice::from_ref(&single), &vs).unwrap(), 0.0);
        assert_eq!(compactness(&[line, single], &vs).unwrap(), 1.5);
        assert_eq!(compactness(&[], &vs).unwrap_err(), MetricsError::NoClusters);
    }

    #[test]
    fn diameter_is_zero_iff_members_coincide() {
        let vs = vec![fv(&[1.0, 1.0]), fv(&[1.0, 1.0]), fv(&[1.0, 1.0 + 1e-9])];
        assert_eq!(diameter(&[0, 1], &vs), 0.0);
        assert!(diameter(&[0, 1, 2], &vs) > 0.0);
    }

    #[test]
    fn all_clusters_flag_uses_every_cluster() {
        let r = result_with_sizes(&[3, 2, 1, 1]);
        let vs: Vec<FeatureVector> = (0..7).map(|i| fv(&[i as f64])).collect();
        let m = site_metrics("A", &r, &vs, 0.1, true).unwrap();
        assert_eq!(m.n_top_clusters_used, 4);
        assert_eq!(m.singleton_clusters_used, 2);
        let m = site_metrics("A", &r, &vs, 0.1, false).unwrap();
        assert_eq!(m.n_top_clusters_used, 2);
        assert_eq!(m.singleton_clusters_used, 0);
    }
}
