//! CSV, JSON and SVG emitters, plus the end-to-end report run.
//!
//! Data files never contain wall-clock content; the only timestamp of a run
//! lives in its manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apcluster::{cluster_vectors, load_embeddings, APConfig, ApError, ClusterResult, FeatureVector};
use crate::cluster_metrics::{site_metrics, ClusterMetrics, MetricsError};
use crate::geofence::{filter_within_buffer, CatalogError, SiteCatalog};
use crate::ingestion::{parse_photo_csv, IngestError};
use crate::markov::{build_sequences, estimate_with, top_transitions, MarkovError, Transition, TransitionFilter, TransitionMatrix};
use crate::scene_matrix::{
    aggregate_scene_counts, build_matrix, load_scene_labels, site_lookup, SceneError, SceneOrdering, SceneSiteMatrix,
};
use crate::site_stats::{dwell_times, mean_dwell_per_site, photos_per_site_year, popularity_table_with_catalog, DwellRecord, PopularityRow, SiteYearCounts};
use crate::util::format_ts;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("matrix has no cells")]
    EmptyMatrix,
    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,
    #[error("{0}")]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Catalog(#[from] CatalogError),
    #[error("{0}")]
    Markov(#[from] MarkovError),
    #[error("{0}")]
    Cluster(#[from] ApError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn opt_fixed(x: Option<f64>) -> String {
    x.map(fixed).unwrap_or_default()
}

/// `year,<site ids...>,total`, newest year first.
pub fn write_year_table<W: Write>(t: &SiteYearCounts, writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["year".to_string()];
    header.extend(t.sites.iter().cloned());
    header.push("total".into());
    w.write_record(&header)?;
    for (yi, year) in t.years.iter().enumerate().rev() {
        let mut row = vec![year.to_string()];
        row.extend(t.counts.iter().map(|r| r[yi].to_string()));
        row.push(t.year_total(yi).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_popularity_table<W: Write>(rows: &[PopularityRow], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site", "n_photos", "n_unique_visitors", "popularity_rank"])?;
    for r in rows {
        w.write_record([r.site_id.clone(), r.n_photos.to_string(), r.n_unique_visitors.to_string(), r.rank.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dwell_records<W: Write>(rows: &[DwellRecord], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "site_id", "day", "first_ts", "last_ts", "duration_s"])?;
    for r in rows {
        w.write_record([
            r.user_id.clone(),
            r.site_id.clone(),
            r.day.map(|d| d.to_string()).unwrap_or_default(),
            format_ts(&r.first_ts),
            format_ts(&r.last_ts),
            r.duration_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mean_dwell<W: Write>(means: &BTreeMap<String, f64>, writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site", "mean_dwell_s"])?;
    for (site, s) in means {
        w.write_record([site.clone(), fixed(*s)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_square<W: Write>(sites: &[String], cell: impl Fn(usize, usize) -> String, writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["site_id".to_string()];
    header.extend(sites.iter().cloned());
    w.write_record(&header)?;
    for (i, s) in sites.iter().enumerate() {
        let mut row = vec![s.clone()];
        row.extend((0..sites.len()).map(|j| cell(i, j)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Row-stochastic probabilities with six decimals.
pub fn write_transition_probs<W: Write>(m: &TransitionMatrix, writer: W) -> Result<(), ReportError> {
    write_square(m.sites(), |i, j| fixed(m.probs()[[i, j]]), writer)
}

pub fn write_transition_counts<W: Write>(m: &TransitionMatrix, writer: W) -> Result<(), ReportError> {
    write_square(m.sites(), |i, j| m.counts()[[i, j]].to_string(), writer)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovSummary {
    pub sites: Vec<String>,
    pub n_transitions: u64,
    /// Sites with no outgoing transitions; their rows are all zero.
    pub zero_rows: Vec<String>,
    pub filter: TransitionFilter,
    pub top_transitions: Vec<Transition>,
}

impl MarkovSummary {
    pub fn new(m: &TransitionMatrix, filter: TransitionFilter, min_prob: f64, top_k: usize) -> Result<Self, ReportError> {
        Ok(MarkovSummary {
            sites: m.sites().to_vec(),
            n_transitions: m.n_transitions(),
            zero_rows: m.zero_rows().into_iter().map(|i| m.sites()[i].clone()).collect(),
            filter,
            top_transitions: top_transitions(m, min_prob, top_k)?,
        })
    }
}

pub fn write_cluster_metrics<W: Write>(rows: &[ClusterMetrics], writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site", "n_clusters", "separation", "compactness", "n_top_clusters_used"])?;
    for r in rows {
        w.write_record([
            r.site_id.clone(),
            r.n_clusters.to_string(),
            opt_fixed(r.separation),
            opt_fixed(r.compactness),
            r.n_top_clusters_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterJson {
    pub exemplar: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteClustersJson {
    pub site_id: String,
    pub converged: bool,
    pub iterations: usize,
    pub clusters: Vec<ClusterJson>,
}

impl SiteClustersJson {
    pub fn new(site_id: &str, r: &ClusterResult) -> Self {
        SiteClustersJson {
            site_id: site_id.to_owned(),
            converged: r.converged(),
            iterations: r.iterations(),
            clusters: r
                .clusters()
                .into_iter()
                .map(|c| ClusterJson {
                    exemplar: r.photo_ids[c.exemplar].clone(),
                    members: c.members.iter().map(|&m| r.photo_ids[m].clone()).collect(),
                })
                .collect(),
        }
    }
}

pub fn write_scene_matrix<W: Write>(m: &SceneSiteMatrix, writer: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["site".to_string()];
    header.extend(m.labels.iter().cloned());
    w.write_record(&header)?;
    for (site, row) in m.sites.iter().zip(&m.cells) {
        let mut rec = vec![site.clone()];
        rec.extend(row.iter().map(|&x| fixed(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear ramp from `low` (at `min`) to `high` (at `max`); values outside
/// are clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub min: f64,
    pub max: f64,
    pub low: [u8; 3],
    pub high: [u8; 3],
}

impl Default for ColorScale {
    fn default() -> Self {
        ColorScale { min: 0.0, max: 1.0, low: [255, 255, 255], high: [8, 48, 107] }
    }
}

impl ColorScale {
    /// Default colors over the observed range of `cells`.
    pub fn fitted(cells: &[Vec<f64>]) -> Self {
        let (lo, hi) = cells
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if lo.is_finite() {
            ColorScale { min: lo, max: hi, ..Default::default() }
        } else {
            ColorScale::default()
        }
    }

    pub fn color(&self, x: f64) -> String {
        let t = if self.max > self.min { ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0) } else { 0.0 };
        let c: Vec<u8> = self
            .low
            .iter()
            .zip(&self.high)
            .map(|(&a, &b)| (a as f64 + t * (b as f64 - a as f64)).round() as u8)
            .collect();
        format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const CELL: usize = 32;
const LABEL_CHARS_PX: usize = 7;

/// SVG 1.1 heatmap. Data cells are the `rect` elements with class `cell`,
/// written row by row; each carries its value in a `title`.
pub fn render_heatmap_svg(
    row_labels: &[String],
    col_labels: &[String],
    cells: &[Vec<f64>],
    scale: &ColorScale,
) -> Result<String, ReportError> {
    if cells.is_empty() || cells.iter().any(|r| r.is_empty()) {
        return Err(ReportError::EmptyMatrix);
    }
    if cells.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ReportError::NonFiniteMatrix);
    }
    let n_cols = cells[0].len();
    let left = 8 + LABEL_CHARS_PX * row_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let top = 8 + LABEL_CHARS_PX * col_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let width = left + CELL * n_cols + 8;
    let height = top + CELL * cells.len() + 8;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    svg.push_str("<g font-family=\"sans-serif\" font-size=\"11\">\n");
    for (j, label) in col_labels.iter().enumerate().take(n_cols) {
        let x = left + CELL * j + CELL / 2;
        let y = top - 4;
        let _ = writeln!(
            svg,
            "<text class=\"col-label\" x=\"{x}\" y=\"{y}\" transform=\"rotate(-90 {x} {y})\">{}</text>",
            xml_escape(label)
        );
    }
    for (i, row) in cells.iter().enumerate() {
        let y = top + CELL * i;
        if let Some(label) = row_labels.get(i) {
            let _ = writeln!(
                svg,
                "<text class=\"row-label\" x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                left - 4,
                y + CELL / 2 + 4,
                xml_escape(label)
            );
        }
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                svg,
                "<rect class=\"cell\" x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"><title>{}</title></rect>",
                left + CELL * j,
                scale.color(v),
                fixed(v)
            );
        }
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, ReportError> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|source| ReportError::File { path: path.to_owned(), source })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        Ok(FileEntry { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub created_at: String,
    pub inputs: Vec<FileEntry>,
    pub catalog: FileEntry,
    pub config: serde_json::Value,
    pub config_sha256: String,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(
        inputs: Vec<FileEntry>,
        catalog: FileEntry,
        config: &impl Serialize,
        created_at: DateTime<Utc>,
    ) -> Result<Self, ReportError> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = sha256_bytes(serde_json::to_string(&config)?.as_bytes());
        Ok(RunManifest {
            tool: "heritage-flow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_at: format_ts(&created_at),
            inputs,
            catalog,
            config,
            config_sha256,
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        let mut f = BufWriter::new(create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<File, ReportError> {
    File::create(path).map_err(|source| ReportError::File { path: path.to_owned(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    pub photos: PathBuf,
    pub catalog: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub scenes: Option<PathBuf>,
    pub ordering: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    /// `None` counts every adjacent visit pair.
    #[serde(serialize_with = "window_seconds")]
    pub window: Option<TimeDelta>,
    pub ap: APConfig,
    pub seed: u64,
    pub cluster_fraction: f64,
    pub all_clusters: bool,
    pub scene_fraction: f64,
    pub svg: bool,
}

fn window_seconds<S: serde::Serializer>(w: &Option<TimeDelta>, s: S) -> Result<S::Ok, S::Error> {
    match w {
        Some(d) => s.serialize_some(&d.num_seconds()),
        None => s.serialize_none(),
    }
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            window: None,
            ap: APConfig::default(),
            seed: 0,
            cluster_fraction: crate::cluster_metrics::DEFAULT_TOP_FRACTION,
            all_clusters: false,
            scene_fraction: crate::scene_matrix::DEFAULT_SCENE_FRACTION,
            svg: false,
        }
    }
}

pub const TABLE_YEARS: &str = "photos_per_site_year.csv";
pub const TABLE_POPULARITY: &str = "popularity.csv";
pub const TABLE_MEAN_DWELL: &str = "mean_dwell.csv";
pub const TABLE_TRANSITIONS: &str = "transition_probs.csv";
pub const TABLE_CLUSTERS: &str = "cluster_metrics.csv";
pub const TABLE_SCENES: &str = "scene_matrix.csv";
pub const MANIFEST: &str = "manifest.json";

/// Groups vectors of geofenced photos by site, each group sorted by photo id.
pub fn vectors_by_site(vectors: Vec<FeatureVector>, lookup: &std::collections::HashMap<String, String>) -> BTreeMap<String, Vec<FeatureVector>> {
    let mut out: BTreeMap<String, Vec<FeatureVector>> = BTreeMap::new();
    for v in vectors {
        if let Some(site) = lookup.get(&v.photo_id) {
            out.entry(site.clone()).or_default().push(v);
        }
    }
    for vs in out.values_mut() {
        vs.sort_by(|a, b| a.photo_id.cmp(&b.photo_id));
    }
    out
}

/// Clusters every site and measures it. A site where no exemplar emerges gets
/// a row with zero clusters and empty metrics.
pub fn cluster_table(
    by_site: &BTreeMap<String, Vec<FeatureVector>>,
    catalog: &SiteCatalog,
    cfg: &ReportConfig,
) -> Result<Vec<ClusterMetrics>, ReportError> {
    let mut rows = Vec::new();
    for site in catalog.site_ids() {
        let Some(vs) = by_site.get(&site) else { continue };
        match cluster_vectors(vs, &cfg.ap, cfg.seed) {
            Ok(r) => rows.push(site_metrics(&site, &r, vs, cfg.cluster_fraction, cfg.all_clusters)?),
            Err(ApError::NoExemplarEmerged { .. }) => rows.push(ClusterMetrics {
                site_id: site.clone(),
                n_clusters: 0,
                separation: None,
                compactness: None,
                n_top_clusters_used: 0,
                singleton_clusters_used: 0,
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

/// Runs the whole pipeline into `out_dir` and writes the manifest last.
pub fn run_report(
    inputs: &ReportInputs,
    cfg: &ReportConfig,
    out_dir: &Path,
    created_at: DateTime<Utc>,
) -> Result<RunManifest, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::File { path: out_dir.to_owned(), source })?;
    let catalog = SiteCatalog::load(&inputs.catalog)?;
    let dataset = parse_photo_csv(&inputs.photos, false)?;
    let assigned = filter_within_buffer(&dataset, &catalog);

    let mut written: Vec<String> = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&mut dyn Write) -> Result<(), ReportError>| -> Result<(), ReportError> {
        let path = out_dir.join(name);
        let mut w = BufWriter::new(create(&path)?);
        f(&mut w)?;
        w.flush()?;
        written.push(name.to_owned());
        Ok(())
    };

    let years = photos_per_site_year(&assigned).aligned_to(&catalog);
    emit(TABLE_YEARS, &|w| write_year_table(&years, w))?;
    let popularity = popularity_table_with_catalog(&assigned, &catalog);
    emit(TABLE_POPULARITY, &|w| write_popularity_table(&popularity, w))?;
    let means = mean_dwell_per_site(&dwell_times(&assigned));
    emit(TABLE_MEAN_DWELL, &|w| write_mean_dwell(&means, w))?;

    let seqs = build_sequences(&assigned);
    let filter = TransitionFilter { max_gap: cfg.window, ..Default::default() };
    let matrix = estimate_with(&seqs, &catalog, &filter)?;
    emit(TABLE_TRANSITIONS, &|w| write_transition_probs(&matrix, w))?;
    if cfg.svg {
        let cells: Vec<Vec<f64>> = matrix.probs().rows().into_iter().map(|r| r.to_vec()).collect();
        let svg = render_heatmap_svg(matrix.sites(), matrix.sites(), &cells, &ColorScale::default())?;
        emit("transition_probs.svg", &|w| Ok(w.write_all(svg.as_bytes())?))?;
    }

    let lookup = site_lookup(&assigned);
    let mut input_files = vec![FileEntry::of(&inputs.photos)?];
    if let Some(path) = &inputs.embeddings {
        input_files.push(FileEntry::of(path)?);
        let by_site = vectors_by_site(load_embeddings(path)?.vectors, &lookup);
        let rows = cluster_table(&by_site, &catalog, cfg)?;
        emit(TABLE_CLUSTERS, &|w| write_cluster_metrics(&rows, w))?;
    }
    if let Some(path) = &inputs.scenes {
        input_files.push(FileEntry::of(path)?);
        let ordering = match &inputs.ordering {
            Some(p) => {
                input_files.push(FileEntry::of(p)?);
                SceneOrdering::load(p)?
            }
            None => SceneOrdering::default(),
        };
        let counts = aggregate_scene_counts(&load_scene_labels(path)?.labels, &lookup);
        let m = build_matrix(&counts, &catalog, cfg.scene_fraction, &ordering)?;
        emit(TABLE_SCENES, &|w| write_scene_matrix(&m, w))?;
        if cfg.svg && !m.labels.is_empty() {
            let svg = render_heatmap_svg(&m.sites, &m.labels, &m.cells, &ColorScale::fitted(&m.cells))?;
            emit("scene_matrix.svg", &|w| Ok(w.write_all(svg.as_bytes())?))?;
        }
    }

    let mut manifest = RunManifest::new(input_files, FileEntry::of(&inputs.catalog)?, cfg, created_at)?;
    manifest.outputs = written
        .iter()
        .map(|name| Ok(FileEntry { path: name.clone(), sha256: sha256_file(out_dir.join(name))? }))
        .collect::<Result<_, ReportError>>()?;
    manifest.write(out_dir.join(MANIFEST))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::TransitionMatrix;
    use ndarray::array;

    fn labels(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn rect_count(svg: &str) -> usize {
        svg.matches("<rect class=\"cell\"").count()
    }

    #[test]
    fn one_by_one_heatmap() {
        let svg = render_heatmap_svg(&labels(&["A"]), &labels(&["A"]), &[vec![0.5]], &ColorScale::default()).unwrap();
        assert_eq!(rect_count(&svg), 1);
        assert!(svg.contains("version=\"1.1\""));
    }

    #[test]
    fn equal_cells_share_a_fill() {
        let cells = vec![vec![0.3; 3]; 3];
        let svg = render_heatmap_svg(&labels(&["a", "b", "c"]), &labels(&["a", "b", "c"]), &cells, &ColorScale::fitted(&cells)).unwrap();
        let fills: std::collections::BTreeSet<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<rect class=\"cell\""))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
    }

    #[test]
    fn twelve_by_twelve_heatmap_keeps_site_order() {
        let ids: Vec<String> = (1..=12).map(|i| format!("S{i:02}")).collect();
        let cells = vec![vec![0.0; 12]; 12];
        let svg = render_heatmap_svg(&ids, &ids, &cells, &ColorScale::default()).unwrap();
        assert_eq!(rect_count(&svg), 144);
        let rows: Vec<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<text class=\"row-label\""))
            .map(|l| l.rsplit_once("\">").unwrap().1.trim_end_matches("</text>"))
            .collect();
        assert_eq!(rows, ids.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn heatmap_errors_and_escaping() {
        assert!(matches!(render_heatmap_svg(&[], &[], &[], &ColorScale::default()), Err(ReportError::EmptyMatrix)));
        assert!(matches!(
            render_heatmap_svg(&labels(&["a"]), &labels(&["a"]), &[vec![f64::NAN]], &ColorScale::default()),
            Err(ReportError::NonFiniteMatrix)
        ));
        let svg = render_heatmap_svg(&labels(&["<a&b>"]), &labels(&["x"]), &[vec![1.0]], &ColorScale::default()).unwrap();
        assert!(svg.contains("&lt;a&amp;b&gt;"));
    }

    #[test]
    fn color_ramp_endpoints() {
        let s = ColorScale::default();
        assert_eq!(s.color(0.0), "#ffffff");
        assert_eq!(s.color(1.0), "#08306b");
        assert_eq!(s.color(7.0), "#08306b");
    }

    #[test]
    fn transition_csv_has_six_decimals() {
        let m = TransitionMatrix::from_counts(labels(&["A", "B"]), array![[0, 3], [0, 0]]);
        let mut buf = Vec::new();
        write_transition_probs(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "site_id,A,B\nA,0.000000,1.000000\nB,0.000000,0.000000\n");
    }

    #[test]
    fn year_table_runs_newest_first() {
        let t = SiteYearCounts { sites: labels(&["A", "B"]), years: vec![2013, 2014], counts: vec![vec![3, 1], vec![0, 2]] };
        let mut buf = Vec::new();
        write_year_table(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "year,A,B,total\n2014,1,2,3\n2013,3,0,3\n");
    }

    #[test]
    fn markov_summary_names_zero_rows() {
        let m = TransitionMatrix::from_counts(labels(&["A", "B", "C"]), array![[0, 2, 1], [1, 0, 0], [0, 0, 0]]);
        let s = MarkovSummary::new(&m, TransitionFilter::default(), 0.0, 2).unwrap();
        assert_eq!(s.zero_rows, vec!["C"]);
        assert_eq!(s.top_transitions.len(), 2);
        assert_eq!((s.top_transitions[0].from.as_str(), s.top_transitions[0].to.as_str()), ("B", "A"));
    }

    #[test]
    fn config_digest_is_stable() {
        let t = DateTime::from_timestamp(0, 0).unwrap();
        let entry = FileEntry { path: "c.json".into(), sha256: sha256_bytes(b"") };
        let a = RunManifest::new(vec![], entry.clone(), &ReportConfig::default(), t).unwrap();
        let b = RunManifest::new(vec![], entry, &ReportConfig::default(), t).unwrap();
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_eq!(sha256_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
