//! Affinity propagation over image-feature vectors.
//!
//! Responsibilities and availabilities are exchanged on a dense `n x n`
//! similarity matrix until the exemplar set stays fixed for
//! `convergence_iter` sweeps. Similarity is the negative squared Euclidean
//! distance; the diagonal holds the preference.
//!
//! Final labels are recomputed from the exemplar set by maximal similarity,
//! so every non-exemplar belongs to its most similar exemplar and every
//! exemplar belongs to itself.

mod embeddings;

pub use embeddings::{
    load_embeddings, read_embeddings_bin, read_embeddings_csv, write_embeddings_bin, write_embeddings_csv,
    EmbeddingRejection, Embeddings, EMB_MAGIC,
};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApError {
    #[error("no feature vectors")]
    EmptyInput,
    #[error("vector {photo_id}: expected dimension {expected}, found {found}")]
    DimensionMismatch { photo_id: String, expected: usize, found: usize },
    #[error("vector {0} has non-finite entries")]
    NonFiniteVector(String),
    #[error("similarity matrix is {rows}x{cols}, expected square")]
    NonSquareMatrix { rows: usize, cols: usize },
    #[error("similarity matrix has non-finite entries")]
    NonFiniteSimilarity,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no exemplar emerged after {iterations} iterations")]
    NoExemplarEmerged { iterations: usize },
    #[error("embeddings: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub photo_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(photo_id: impl Into<String>, values: Vec<f64>) -> Self {
        FeatureVector { photo_id: photo_id.into(), values }
    }
}

/// Diagonal of the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct APConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    pub preference: Preference,
    /// Adds seeded noise of relative size ~1e-16 to the similarities, to
    /// break exact symmetries.
    pub jitter: bool,
}

impl Default for APConfig {
    fn default() -> Self {
        APConfig {
            damping: 0.9,
            max_iter: 1000,
            convergence_iter: 100,
            preference: Preference::Median,
            jitter: false,
        }
    }
}

impl APConfig {
    pub fn validate(&self) -> Result<(), ApError> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(ApError::InvalidConfig(format!("damping {} outside [0.5, 1)", self.damping)));
        }
        if self.convergence_iter == 0 || self.convergence_iter >= self.max_iter {
            return Err(ApError::InvalidConfig(format!(
                "need 0 < convergence_iter ({}) < max_iter ({})",
                self.convergence_iter, self.max_iter
            )));
        }
        if let Preference::Fixed(p) = self.preference {
            if !p.is_finite() {
                return Err(ApError::InvalidConfig("preference must be finite".into()));
            }
        }
        Ok(())
    }
}

/// `s[i][j] = -||v_i - v_j||^2`, with a zero diagonal.
pub fn similarity_matrix(vs: &[FeatureVector]) -> Result<Array2<f64>, ApError> {
    let first = vs.first().ok_or(ApError::EmptyInput)?;
    let d = first.values.len();
    for v in vs {
        if v.values.len() != d {
            return Err(ApError::DimensionMismatch { photo_id: v.photo_id.clone(), expected: d, found: v.values.len() });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(ApError::NonFiniteVector(v.photo_id.clone()));
        }
    }
    let n = vs.len();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = vs[i].values.iter().zip(&vs[j].values).map(|(a, b)| (a - b) * (a - b)).sum();
            s[[i, j]] = -d2;
            s[[j, i]] = -d2;
        }
    }
    Ok(s)
}

/// Median of the off-diagonal entries (mean of the two middle values when
/// their count is even). `None` for `n < 2`.
pub fn median_off_diagonal(s: &Array2<f64>) -> Option<f64> {
    let mut vals: Vec<f64> = s.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, &v)| v).collect();
    if vals.is_empty() {
        return None;
    }
    let len = vals.len();
    let (lo, &mut upper, _) = vals.select_nth_unstable_by(len / 2, f64::total_cmp);
    if len % 2 == 1 {
        return Some(upper);
    }
    let lower = lo.iter().copied().max_by(f64::total_cmp).unwrap_or(upper);
    Some((lower + upper) / 2.0)
}

/// Index-based outcome of one affinity propagation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// Exemplar indices, ascending.
    pub exemplars: Vec<usize>,
    /// `labels[i]` is the exemplar index of point `i`.
    pub labels: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

/// One exemplar and its members (the exemplar included), by point index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub exemplar: usize,
    pub members: Vec<usize>,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    pub fn cluster_sizes(&self) -> BTreeMap<usize, usize> {
        let mut sizes: BTreeMap<usize, usize> = self.exemplars.iter().map(|&e| (e, 0)).collect();
        for &l in &self.labels {
            *sizes.entry(l).or_default() += 1;
        }
        sizes
    }

    /// Clusters in exemplar order; members ascending.
    pub fn clusters(&self) -> Vec<Cluster> {
        let mut members: BTreeMap<usize, Vec<usize>> = self.exemplars.iter().map(|&e| (e, Vec::new())).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            members.entry(l).or_default().push(i);
        }
        members.into_iter().map(|(exemplar, members)| Cluster { exemplar, members }).collect()
    }
}

fn single_cluster(n: usize) -> Clustering {
    Clustering { exemplars: vec![0], labels: vec![0; n], converged: true, iterations: 0 }
}

/// Runs affinity propagation on `s`. Only the off-diagonal part of `s` is
/// read; the diagonal comes from `cfg.preference`.
///
/// `seed` only matters when `cfg.jitter` is set. When every similarity and
/// the preference are all equal, any exemplar choice is equally good and the
/// result is a single cluster around point 0.
pub fn affinity_propagation(s: &Array2<f64>, cfg: &APConfig, seed: u64) -> Result<Clustering, ApError> {
    cfg.validate()?;
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(ApError::NonSquareMatrix { rows, cols });
    }
    let n = rows;
    if n == 0 {
        return Err(ApError::EmptyInput);
    }
    if s.indexed_iter().any(|((i, j), v)| i != j && !v.is_finite()) {
        return Err(ApError::NonFiniteSimilarity);
    }
    if n == 1 {
        return Ok(single_cluster(1));
    }
    let preference = match cfg.preference {
        Preference::Median => median_off_diagonal(s).expect("n >= 2"),
        Preference::Fixed(p) => p,
    };
    if s.indexed_iter().all(|((i, j), &v)| i == j || v == preference) {
        return Ok(single_cluster(n));
    }

    let mut sim: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            sim.push(if i == k { preference } else { s[[i, k]] });
        }
    }
    if cfg.jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in sim.iter_mut() {
            *v += (f64::EPSILON * v.abs() + f64::MIN_POSITIVE * 100.0) * rng.random::<f64>();
        }
    }

    let (exemplars, converged, iterations) = pass_messages(&sim, n, cfg);
    if exemplars.is_empty() {
        return Err(ApError::NoExemplarEmerged { iterations });
    }

    let labels = (0..n)
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                return i;
            }
            let mut best = exemplars[0];
            for &k in &exemplars[1..] {
                if s[[i, k]] > s[[i, best]] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(Clustering { exemplars, labels, converged, iterations })
}

/// Damped message passing on the row-major similarity `sim`. Returns the
/// final exemplar set, whether it converged, and the sweep count.
fn pass_messages(sim: &[f64], n: usize, cfg: &APConfig) -> (Vec<usize>, bool, usize) {
    let lambda = cfg.damping;
    let mut resp = vec![0.0f64; n * n];
    let mut avail = vec![0.0f64; n * n];
    let mut col_sum = vec![0.0f64; n];
    let mut current: Vec<usize> = Vec::new();
    let mut stable = 0usize;

    for it in 0..cfg.max_iter {
        resp.par_chunks_mut(n).zip(avail.par_chunks(n)).enumerate().for_each(|(i, (r_row, a_row))| {
            let s_row = &sim[i * n..(i + 1) * n];
            let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a_row[k] + s_row[k];
                if v > first {
                    second = first;
                    first = v;
                    first_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competing = if k == first_k { second } else { first };
                r_row[k] = lambda * r_row[k] + (1.0 - lambda) * (s_row[k] - competing);
            }
        });

        col_sum.iter_mut().for_each(|c| *c = 0.0);
        for (i, r_row) in resp.chunks(n).enumerate() {
            for (k, (c, &r)) in col_sum.iter_mut().zip(r_row).enumerate() {
                *c += if i == k { r } else { r.max(0.0) };
            }
        }

        avail.par_chunks_mut(n).zip(resp.par_chunks(n)).enumerate().for_each(|(i, (a_row, r_row))| {
            for k in 0..n {
                let new = if i == k {
                    col_sum[k] - r_row[k]
                } else {
                    (col_sum[k] - r_row[k].max(0.0)).min(0.0)
                };
                a_row[k] = lambda * a_row[k] + (1.0 - lambda) * new;
            }
        });

        let exemplars: Vec<usize> = (0..n).filter(|&k| avail[k * n + k] + resp[k * n + k] > 0.0).collect();
        if exemplars == current {
            stable += 1;
        } else {
            current = exemplars;
            stable = 1;
        }
        if stable >= cfg.convergence_iter && !current.is_empty() {
            return (current, true, it + 1);
        }
    }
    (current, false, cfg.max_iter)
}

/// A clustering labelled with the photo ids it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub photo_ids: Vec<String>,
    pub clustering: Clustering,
}

impl ClusterResult {
    pub fn converged(&self) -> bool {
        self.clustering.converged
    }

    pub fn iterations(&self) -> usize {
        self.clustering.iterations
    }

    pub fn n_clusters(&self) -> usize {
        self.clustering.n_clusters()
    }

    pub fn exemplars(&self) -> Vec<&str> {
        self.clustering.exemplars.iter().map(|&e| self.photo_ids[e].as_str()).collect()
    }

    /// photo_id -> exemplar photo_id.
    pub fn assignment(&self) -> BTreeMap<&str, &str> {
        self.clustering
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (self.photo_ids[i].as_str(), self.photo_ids[l].as_str()))
            .collect()
    }

    /// exemplar photo_id -> cluster size.
    pub fn cluster_sizes(&self) -> BTreeMap<&str, usize> {
        self.clustering
            .cluster_sizes()
            .into_iter()
            .map(|(e, c)| (self.photo_ids[e].as_str(), c))
            .collect()
    }

    pub fn clusters(&self) -> Vec<Cluster> {
        self.clustering.clusters()
    }
}

pub fn cluster_vectors(vs: &[FeatureVector], cfg: &APConfig, seed: u64) -> Result<ClusterResult, ApError> {
    let s = similarity_matrix(vs)?;
    let clustering = affinity_propagation(&s, cfg, seed)?;
    Ok(ClusterResult { photo_ids: vs.iter().map(|v| v.photo_id.clone()).collect(), clustering })
}

/// Independent run per site. Sites are processed in parallel; results do
/// not depend on scheduling.
pub fn cluster_per_site(
    embeddings: &BTreeMap<String, Vec<FeatureVector>>,
    cfg: &APConfig,
    seed: u64,
) -> Result<BTreeMap<String, ClusterResult>, ApError> {
    embeddings
        .par_iter()
        .map(|(site, vs)| cluster_vectors(vs, cfg, seed).map(|r| (site.clone(), r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};
    use rand::Rng;

    fn fv(id: &str, values: &[f64]) -> FeatureVector {
        FeatureVector::new(id, values.to_vec())
    }

    fn check_invariants(s: &Array2<f64>, c: &Clustering) {
        for &e in &c.exemplars {
            assert_eq!(c.labels[e], e);
        }
        for (i, &l) in c.labels.iter().enumerate() {
            if c.exemplars.contains(&i) {
                continue;
            }
            let best = c.exemplars.iter().map(|&k| s[[i, k]]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(s[[i, l]], best);
        }
        assert_eq!(c.cluster_sizes().values().sum::<usize>(), c.labels.len());
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&[fv("a", &[1.0, 2.0]), fv("b", &[1.0, 2.0])]).unwrap();
        assert_eq!(s[[0, 1]], 0.0);
        let s = similarity_matrix(&[fv("a", &[0.0, 0.0]), fv("b", &[0.0, 1.0])]).unwrap();
        assert_eq!(s[[0, 1]], -1.0);
        assert_eq!(s[[1, 0]], -1.0);
        assert!(matches!(
            similarity_matrix(&[fv("a", &[0.0]), fv("b", &[0.0, 1.0])]),
            Err(ApError::DimensionMismatch { .. })
        ));
        assert!(matches!(similarity_matrix(&[]), Err(ApError::EmptyInput)));
    }

    #[test]
    fn similarity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vs: Vec<FeatureVector> = (0..10)
            .map(|i| fv(&i.to_string(), &(0..5).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
            .collect();
        let s = similarity_matrix(&vs).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let mut d2 = 0.0;
                for k in 0..5 {
                    d2 += (vs[i].values[k] - vs[j].values[k]).powi(2);
                }
                let expected = if i == j { 0.0 } else { -d2 };
                assert!((s[[i, j]] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn median_of_off_diagonal() {
        let s = ndarray::arr2(&[[9.0, -1.0, -4.0], [-1.0, 9.0, -2.0], [-4.0, -2.0, 9.0]]);
        // off-diagonal: -1,-4,-1,-2,-4,-2 -> sorted -4,-4,-2,-2,-1,-1
        assert_eq!(median_off_diagonal(&s), Some(-2.0));
        let s = ndarray::arr2(&[[0.0, -1.0], [-3.0, 0.0]]);
        assert_eq!(median_off_diagonal(&s), Some(-2.0));
        assert_eq!(median_off_diagonal(&ndarray::arr2(&[[0.0]])), None);
    }

    #[test]
    fn single_point_is_its_own_exemplar() {
        let r = cluster_vectors(&[fv("only", &[1.0, 1.0])], &APConfig::default(), 0).unwrap();
        assert_eq!(r.exemplars(), vec!["only"]);
        assert_eq!(r.assignment()["only"], "only");
    }

    #[test]
    fn identical_pair_is_one_cluster_around_lower_index() {
        let r = cluster_vectors(&[fv("a", &[2.0, 3.0]), fv("b", &[2.0, 3.0])], &APConfig::default(), 0).unwrap();
        assert_eq!(r.clustering.exemplars, vec![0]);
        assert_eq!(r.clustering.labels, vec![0, 0]);
    }

    #[test]
    fn three_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut vs = Vec::new();
        for (b, c) in centers.iter().enumerate() {
            for p in 0..20 {
                let v = c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<_>>();
                vs.push(fv(&format!("{b}-{p}"), &v));
            }
        }
        let s = similarity_matrix(&vs).unwrap();
        let c = affinity_propagation(&s, &APConfig::default(), 0).unwrap();
        assert!(c.converged);
        assert_eq!(c.n_clusters(), 3);
        check_invariants(&s, &c);
        for b in 0..3 {
            let label = c.labels[b * 20];
            assert!((b * 20..b * 20 + 20).all(|i| c.labels[i] == label));
        }
    }

    #[test]
    fn config_validation() {
        let bad = APConfig { damping: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = APConfig { damping: 0.4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = APConfig { max_iter: 10, convergence_iter: 10, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(APConfig::default().validate().is_ok());
    }

    #[test]
    fn non_square_similarity_is_rejected() {
        let s = Array2::zeros((2, 3));
        assert!(matches!(
            affinity_propagation(&s, &APConfig::default(), 0),
            Err(ApError::NonSquareMatrix { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn no_exemplar_is_reported() {
        // A preference far below every similarity keeps all self-evidence negative
        // for the few sweeps allowed.
        let s = ndarray::arr2(&[[0.0, -1.0, -1.5], [-1.0, 0.0, -2.0], [-1.5, -2.0, 0.0]]);
        let cfg = APConfig { max_iter: 3, convergence_iter: 2, preference: Preference::Fixed(-1e6), ..Default::default() };
        assert!(matches!(
            affinity_propagation(&s, &cfg, 0),
            Err(ApError::NoExemplarEmerged { iterations: 3 })
        ));
    }

    #[test]
    fn jitter_is_seeded() {
        let s = similarity_matrix(&[fv("a", &[0.0]), fv("b", &[1.0]), fv("c", &[5.0]), fv("d", &[6.0])]).unwrap();
        let cfg = APConfig { jitter: true, ..Default::default() };
        assert_eq!(affinity_propagation(&s, &cfg, 3).unwrap(), affinity_propagation(&s, &cfg, 3).unwrap());
    }

    #[test]
    fn per_site_runs_are_independent() {
        let a = vec![fv("a1", &[0.0]), fv("a2", &[0.1]), fv("a3", &[9.0])];
        let b = vec![fv("b1", &[4.0])];
        let mut both = BTreeMap::new();
        both.insert("A".to_string(), a.clone());
        both.insert("B".to_string(), b.clone());
        let out = cluster_per_site(&both, &APConfig::default(), 1).unwrap();
        assert_eq!(out["A"], cluster_vectors(&a, &APConfig::default(), 1).unwrap());
        assert_eq!(out["B"].exemplars(), vec!["b1"]);
    }

    fn arb_points() -> impl Strategy<Value = Vec<FeatureVector>> {
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..30)
            .prop_map(|pts| pts.into_iter().enumerate().map(|(i, v)| FeatureVector::new(i.to_string(), v)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn outputs_satisfy_assignment_invariants(vs in arb_points()) {
            let s = similarity_matrix(&vs).unwrap();
            if let Ok(c) = affinity_propagation(&s, &APConfig::default(), 0) {
                check_invariants(&s, &c);
            }
        }

        #[test]
        fn runs_are_deterministic(vs in arb_points()) {
            let s = similarity_matrix(&vs).unwrap();
            let a = affinity_propagation(&s, &APConfig::default(), 9).ok();
            let b = affinity_propagation(&s, &APConfig::default(), 9).ok();
            prop_assert_eq!(a, b);
        }
    }
}
