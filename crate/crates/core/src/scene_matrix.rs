//! Scene-site occurrence matrix from per-photo scene labels.
//!
//! Each photo contributes its top-1 label. A site's representative scenes
//! are its most frequent `max(1, ceil(fraction * distinct))` labels; matrix
//! cells hold the site-relative frequency of each representative label and
//! zero elsewhere. Filtering zeroes cells, it never renormalizes them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::geofence::{AssignedPhoto, SiteCatalog};
use crate::util::ceil_fraction;

pub const DEFAULT_SCENE_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("missing column: {0}")]
    MissingColumn(&'static str),
    #[error("ordering line {line}: {reason}")]
    BadOrdering { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLabel {
    pub photo_id: String,
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneLabels {
    pub labels: Vec<SceneLabel>,
    /// (line, reason) for rows that failed validation.
    pub rejected: Vec<(u64, String)>,
}

pub fn load_scene_labels(path: impl AsRef<Path>) -> Result<SceneLabels, SceneError> {
    read_scene_labels(File::open(path)?)
}

/// Reads `photo_id,label,confidence` CSV. Empty labels and confidences
/// outside [0, 1] are rejected.
pub fn read_scene_labels<R: Read>(reader: R) -> Result<SceneLabels, SceneError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &'static str| {
        header.iter().position(|h| h.trim() == name).ok_or(SceneError::MissingColumn(name))
    };
    let (pid, lab, conf) = (col("photo_id")?, col("label")?, col("confidence")?);
    let mut out = SceneLabels::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| row.get(i).map(str::trim).unwrap_or_default();
        let (photo_id, label) = (get(pid), get(lab));
        let confidence = get(conf).parse::<f64>();
        let reason = match confidence {
            _ if photo_id.is_empty() => Some("empty photo_id"),
            _ if label.is_empty() => Some("empty label"),
            Err(_) => Some("unparseable confidence"),
            Ok(c) if !(0.0..=1.0).contains(&c) => Some("confidence out of range"),
            Ok(_) => None,
        };
        match (reason, confidence) {
            (None, Ok(confidence)) => out.labels.push(SceneLabel {
                photo_id: photo_id.to_owned(),
                label: label.to_owned(),
                confidence,
            }),
            (reason, _) => out.rejected.push((line, reason.unwrap_or("invalid row").to_owned())),
        }
    }
    Ok(out)
}

/// Per-site label counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneCounts {
    /// site -> label -> count.
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    /// Labelled photos without a site assignment.
    pub skipped: usize,
}

impl SceneCounts {
    pub fn get(&self, site: &str, label: &str) -> u64 {
        self.counts.get(site).and_then(|m| m.get(label)).copied().unwrap_or(0)
    }

    pub fn site_total(&self, site: &str) -> u64 {
        self.counts.get(site).map_or(0, |m| m.values().sum())
    }
}

/// photo_id -> site_id lookup for [`aggregate_scene_counts`].
pub fn site_lookup(assigned: &[AssignedPhoto]) -> HashMap<String, String> {
    assigned.iter().map(|a| (a.photo.photo_id.clone(), a.site_id.clone())).collect()
}

/// Counts top-1 labels per (site, label). When a photo has several rows, the
/// highest confidence wins (ties to the alphabetically first label).
pub fn aggregate_scene_counts(labels: &[SceneLabel], assigned: &HashMap<String, String>) -> SceneCounts {
    let mut top: BTreeMap<&str, &SceneLabel> = BTreeMap::new();
    for l in labels {
        top.entry(&l.photo_id)
            .and_modify(|best| {
                let better = l.confidence > best.confidence || (l.confidence == best.confidence && l.label < best.label);
                if better {
                    *best = l;
                }
            })
            .or_insert(l);
    }
    let mut out = SceneCounts::default();
    for (photo, l) in top {
        match assigned.get(photo) {
            Some(site) => *out.counts.entry(site.clone()).or_default().entry(l.label.clone()).or_default() += 1,
            None => out.skipped += 1,
        }
    }
    out
}

/// Most frequent labels at `site` (ties alphabetical), keeping
/// `max(1, ceil(fraction * distinct))` of them.
pub fn representative_scenes(counts: &SceneCounts, site: &str, fraction: f64) -> Result<Vec<String>, SceneError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SceneError::InvalidFraction(fraction));
    }
    let Some(site_counts) = counts.counts.get(site) else {
        return Ok(Vec::new());
    };
    let mut ranked: Vec<(&String, u64)> = site_counts.iter().map(|(l, &c)| (l, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = ceil_fraction(fraction, ranked.len()).max(1);
    Ok(ranked.into_iter().take(keep).map(|(l, _)| l.clone()).collect())
}

/// Label -> naturalness rank (lower is more natural).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneOrdering {
    ranks: HashMap<String, f64>,
}

impl SceneOrdering {
    pub fn new(ranks: impl IntoIterator<Item = (String, f64)>) -> Self {
        SceneOrdering { ranks: ranks.into_iter().collect() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::read(File::open(path)?)
    }

    /// Reads `label,rank` CSV.
    pub fn read<R: Read>(reader: R) -> Result<Self, SceneError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let col = |name: &'static str| header.iter().position(|h| h.trim() == name).ok_or(SceneError::MissingColumn(name));
        let (lab, rank) = (col("label")?, col("rank")?);
        let mut ranks = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let label = row.get(lab).unwrap_or_default().trim().to_owned();
            let r: f64 = row
                .get(rank)
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|_| SceneError::BadOrdering { line, reason: "unparseable rank".into() })?;
            ranks.insert(label, r);
        }
        Ok(SceneOrdering { ranks })
    }

    /// Ranked labels first by rank, then unranked labels alphabetically.
    pub fn sort(&self, labels: &mut [String]) {
        labels.sort_by(|a, b| match (self.ranks.get(a), self.ranks.get(b)) {
            (Some(x), Some(y)) => x.total_cmp(y).then_with(|| a.cmp(b)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.cmp(b),
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSiteMatrix {
    pub sites: Vec<String>,
    pub labels: Vec<String>,
    /// `cells[site][label]`, relative frequency in [0, 1].
    pub cells: Vec<Vec<f64>>,
}

/// Rows follow catalog order; columns are the union of representative labels
/// sorted by `ordering`.
pub fn build_matrix(
    counts: &SceneCounts,
    catalog: &SiteCatalog,
    fraction: f64,
    ordering: &SceneOrdering,
) -> Result<SceneSiteMatrix, SceneError> {
    let sites = catalog.site_ids();
    let reps = sites
        .iter()
        .map(|s| representative_scenes(counts, s, fraction).map(|r| r.into_iter().collect::<BTreeSet<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut labels: Vec<String> = reps.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    ordering.sort(&mut labels);
    let cells = sites
        .iter()
        .zip(&reps)
        .map(|(site, rep)| {
            let total = counts.site_total(site) as f64;
            labels
                .iter()
                .map(|l| if rep.contains(l) { counts.get(site, l) as f64 / total } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(SceneSiteMatrix { sites, labels, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geofence::{Site, TicketGroup};

    fn label(photo: &str, l: &str) -> SceneLabel {
        SceneLabel { photo_id: photo.into(), label: l.into(), confidence: 0.9 }
    }

    fn catalog(ids: &[&str]) -> SiteCatalog {
        SiteCatalog::new(
            ids.iter()
                .map(|id| Site {
                    site_id: id.to_string(),
                    name: id.to_string(),
                    center_lat: 0.0,
                    center_lon: 0.0,
                    buffer_km: 1.0,
                    ticket_group: TicketGroup::None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn counts_for(site: &str, pairs: &[(&str, u64)]) -> SceneCounts {
        let mut c = SceneCounts::default();
        c.counts.insert(site.into(), pairs.iter().map(|&(l, n)| (l.to_string(), n)).collect());
        c
    }

    #[test]
    fn aggregation_examples() {
        let assigned: HashMap<String, String> = ["1", "2", "3", "4"].iter().map(|p| (p.to_string(), "A".to_string())).collect();
        let labels = [label("1", "ruins"), label("2", "ruins"), label("3", "ruins"), label("4", "valley")];
        let c = aggregate_scene_counts(&labels, &assigned);
        assert_eq!(c.get("A", "ruins"), 3);
        assert_eq!(c.get("A", "valley"), 1);
        assert_eq!(c.skipped, 0);

        assert_eq!(aggregate_scene_counts(&[], &assigned), SceneCounts::default());

        let c = aggregate_scene_counts(&[label("zz", "ruins")], &assigned);
        assert_eq!(c.skipped, 1);
        assert!(c.counts.is_empty());
    }

    #[test]
    fn top_label_per_photo_wins() {
        let assigned: HashMap<String, String> = [("1".to_string(), "A".to_string())].into();
        let labels = [
            SceneLabel { photo_id: "1".into(), label: "valley".into(), confidence: 0.4 },
            SceneLabel { photo_id: "1".into(), label: "ruins".into(), confidence: 0.6 },
        ];
        let c = aggregate_scene_counts(&labels, &assigned);
        assert_eq!(c.get("A", "ruins"), 1);
        assert_eq!(c.site_total("A"), 1);
    }

    #[test]
    fn representative_examples() {
        let twenty: Vec<(String, u64)> = (0..20).map(|i| (format!("l{i:02}"), 20 - i)).collect();
        let pairs: Vec<(&str, u64)> = twenty.iter().map(|(l, n)| (l.as_str(), *n)).collect();
        assert_eq!(representative_scenes(&counts_for("A", &pairs), "A", 0.1).unwrap(), vec!["l00", "l01"]);

        let c = counts_for("A", &[("ruins", 6), ("valley", 3), ("bazaar", 1)]);
        assert_eq!(representative_scenes(&c, "A", 0.1).unwrap(), vec!["ruins"]);
        // ceil(0.34 * 3) = ceil(1.02) = 2
        assert_eq!(representative_scenes(&c, "A", 0.34).unwrap(), vec!["ruins", "valley"]);
        assert!(representative_scenes(&c, "A", 0.0).is_err());
    }

    #[test]
    fn representative_ties_are_alphabetical() {
        let c = counts_for("A", &[("valley", 2), ("amphitheater", 2), ("ruins", 2)]);
        assert_eq!(representative_scenes(&c, "A", 0.1).unwrap(), vec!["amphitheater"]);
    }

    #[test]
    fn matrix_examples() {
        let c = counts_for("A", &[("ruins", 4)]);
        let m = build_matrix(&c, &catalog(&["A"]), 0.1, &SceneOrdering::default()).unwrap();
        assert_eq!(m.labels, vec!["ruins"]);
        assert_eq!(m.cells, vec![vec![1.0]]);

        let mut c = counts_for("A", &[("ruins", 3), ("valley", 1)]);
        c.counts.insert("B".into(), [("bazaar".to_string(), 2), ("ruins".to_string(), 1)].into());
        let ordering = SceneOrdering::new([("valley".to_string(), 0.0), ("ruins".to_string(), 1.0)]);
        let m = build_matrix(&c, &catalog(&["A", "B"]), 0.1, &ordering).unwrap();
        assert_eq!(m.labels, vec!["ruins", "bazaar"]);
        assert_eq!(m.cells[0], vec![0.75, 0.0]);
        assert_eq!(m.cells[1], vec![0.0, 2.0 / 3.0]);
    }

    #[test]
    fn ordering_puts_unranked_last() {
        let ordering = SceneOrdering::read("label,rank\nvalley,1\nruins,2\n".as_bytes()).unwrap();
        let mut labels = vec!["bazaar".to_string(), "ruins".to_string(), "alley".to_string(), "valley".to_string()];
        ordering.sort(&mut labels);
        assert_eq!(labels, vec!["valley", "ruins", "alley", "bazaar"]);
    }

    #[test]
    fn label_reader_validates_confidence() {
        let s = read_scene_labels("photo_id,label,confidence\np1,ruins,0.8\np2,ruins,1.2\np3,,0.5\n".as_bytes()).unwrap();
        assert_eq!(s.labels.len(), 1);
        assert_eq!(s.rejected.len(), 2);
        assert_eq!(s.rejected[0].1, "confidence out of range");
    }
}
