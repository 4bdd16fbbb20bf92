use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use clap::{Args, Parser, Subcommand};

use heritage_flow::apcluster::{cluster_vectors, load_embeddings, write_embeddings_bin, APConfig, ApError, Preference};
use heritage_flow::cluster_metrics::{site_metrics, DEFAULT_TOP_FRACTION};
use heritage_flow::geofence::filter_within_buffer;
use heritage_flow::ingestion::{parse_photo_csv, parse_timestamp, write_photo_csv, write_rejections_csv};
use heritage_flow::markov::{build_sequences, estimate_with, group_submatrix, TransitionFilter, TransitionMatrix};
use heritage_flow::report::{self, ColorScale, MarkovSummary, ReportConfig, ReportInputs, SiteClustersJson};
use heritage_flow::scene_matrix::{aggregate_scene_counts, build_matrix, load_scene_labels, site_lookup, SceneOrdering, DEFAULT_SCENE_FRACTION};
use heritage_flow::site_stats::{dwell_times_with_mode, mean_dwell_per_site, photos_per_site_year, popularity_table_with_catalog, DwellMode};
use heritage_flow::synth::{generate_dataset, site_embeddings, site_scene_labels, SynthSpec};
use heritage_flow::{SiteCatalog, TicketGroup};

#[derive(Parser)]
#[command(name = "heritage-flow", version, about = "Tourist movement and photo-theme analytics over geotagged photos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a photo CSV and write the accepted rows.
    Ingest(IngestArgs),
    /// Photos per site and year, popularity ranking, dwell times.
    Stats(StatsArgs),
    /// Site-to-site transition matrix.
    Markov(MarkovArgs),
    /// Per-site affinity propagation over image feature vectors.
    Cluster(ClusterArgs),
    /// Scene-site occurrence matrix.
    Scenes(ScenesArgs),
    /// Generate a synthetic photo CSV from a spec file.
    Synth(SynthArgs),
    /// Full pipeline with a manifest of hashed outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Inputs {
    /// Photo CSV (photo_id,user_id,lat,lon,timestamp[,url]).
    #[arg(long)]
    input: PathBuf,
    /// Site catalog JSON.
    #[arg(long)]
    catalog: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Fail on the first malformed row instead of recording it.
    #[arg(long)]
    strict: bool,
    /// Where to write the accepted rows.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write rejected rows with reasons.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out_dir: PathBuf,
    /// One dwell record per user, site and UTC day.
    #[arg(long)]
    dwell_per_day: bool,
}

#[derive(Args)]
struct MarkovArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write phase A/B matrices split at this date; 2008-01-01 when
    /// given without a value.
    #[arg(long, value_parser = parse_instant, num_args = 0..=1, default_missing_value = "2008-01-01")]
    phase_boundary: Option<DateTime<Utc>>,
    /// Maximum gap between visits, e.g. 90m, 24h, 2d, or inf.
    #[arg(long, value_parser = parse_window)]
    window: Option<Window>,
    /// Restrict to a ticket group (BTC1, BTC2, BTC3, UNESCO) or to comma-separated site ids.
    #[arg(long)]
    group: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    min_prob: f64,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Also write SVG heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Clone)]
struct ApArgs {
    #[arg(long, default_value_t = 0.9)]
    damping: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 100)]
    convergence_iter: usize,
    /// `median` or a number.
    #[arg(long, default_value = "median", value_parser = parse_preference)]
    preference: Preference,
    /// Add tiny seeded noise to the similarities.
    #[arg(long)]
    jitter: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ApArgs {
    fn config(&self) -> APConfig {
        APConfig {
            damping: self.damping,
            max_iter: self.max_iter,
            convergence_iter: self.convergence_iter,
            preference: self.preference,
            jitter: self.jitter,
        }
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Embeddings file (EMB1 binary or photo_id,v0,... CSV).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    ap: ApArgs,
    /// Share of clusters, largest first, used for the metrics.
    #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
    fraction: f64,
    /// Use every cluster for the metrics.
    #[arg(long)]
    all_clusters: bool,
}

#[derive(Args)]
struct ScenesArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Scene label CSV (photo_id,label,confidence).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SCENE_FRACTION)]
    fraction: f64,
    /// label,rank CSV ordering the matrix columns.
    #[arg(long)]
    ordering: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Output photo CSV.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long, env = "HERITAGE_FLOW_SEED")]
    seed: Option<u64>,
    /// Also write synthetic embeddings (EMB1) for the generated photos.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    themes: usize,
    /// Also write synthetic scene labels for the generated photos.
    #[arg(long)]
    scenes: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    ordering: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_parser = parse_window)]
    window: Option<Window>,
    #[command(flatten)]
    ap: ApArgs,
    #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
    cluster_fraction: f64,
    #[arg(long)]
    all_clusters: bool,
    #[arg(long, default_value_t = DEFAULT_SCENE_FRACTION)]
    scene_fraction: f64,
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Clone, Copy)]
struct Window(Option<TimeDelta>);

fn parse_window(s: &str) -> Result<Window, String> {
    let s = s.trim();
    if matches!(s, "inf" | "none" | "unbounded") {
        return Ok(Window(None));
    }
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: i64 = num.parse().map_err(|_| format!("bad window {s:?}; use e.g. 24h, 2d, 90m, inf"))?;
    let d = match unit {
        "s" => TimeDelta::seconds(n),
        "m" => TimeDelta::minutes(n),
        "h" | "" => TimeDelta::hours(n),
        "d" => TimeDelta::days(n),
        _ => return Err(format!("bad window unit {unit:?}; use s, m, h or d")),
    };
    if n <= 0 {
        return Err("window must be positive".into());
    }
    Ok(Window(Some(d)))
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(d) = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc());
    }
    parse_timestamp(s).ok_or_else(|| format!("bad date {s:?}"))
}

fn parse_preference(s: &str) -> Result<Preference, String> {
    if s.eq_ignore_ascii_case("median") {
        return Ok(Preference::Median);
    }
    s.parse::<f64>()
        .ok()
        .filter(|p| p.is_finite())
        .map(Preference::Fixed)
        .ok_or_else(|| format!("preference must be `median` or a number, got {s:?}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn emit<F>(dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let path = dir.join(name);
    let mut w = create(&path)?;
    f(&mut w)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load(inputs: &Inputs) -> Result<(SiteCatalog, Vec<heritage_flow::AssignedPhoto>)> {
    let catalog = SiteCatalog::load(&inputs.catalog).with_context(|| format!("loading {}", inputs.catalog.display()))?;
    let dataset = parse_photo_csv(&inputs.input, false).with_context(|| format!("reading {}", inputs.input.display()))?;
    if !dataset.rejected.is_empty() {
        eprintln!("skipped {} invalid rows (see `heritage-flow ingest`)", dataset.rejected.len());
    }
    let assigned = filter_within_buffer(&dataset, &catalog);
    Ok((catalog, assigned))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ds = parse_photo_csv(&a.input, a.strict).with_context(|| format!("reading {}", a.input.display()))?;
    println!("rows={} accepted={} rejected={}", ds.row_count(), ds.records.len(), ds.rejected.len());
    if let Some(out) = &a.out {
        write_photo_csv(&ds.records, create(out)?)?;
    }
    if let Some(out) = &a.rejects {
        write_rejections_csv(&ds.rejected, create(out)?)?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let (catalog, assigned) = load(&a.inputs)?;
    let years = photos_per_site_year(&assigned).aligned_to(&catalog);
    emit(&a.out_dir, report::TABLE_YEARS, |w| Ok(report::write_year_table(&years, w)?))?;
    let pop = popularity_table_with_catalog(&assigned, &catalog);
    emit(&a.out_dir, report::TABLE_POPULARITY, |w| Ok(report::write_popularity_table(&pop, w)?))?;
    let mode = if a.dwell_per_day { DwellMode::PerDay } else { DwellMode::Merged };
    let dwells = dwell_times_with_mode(&assigned, mode);
    emit(&a.out_dir, "dwell.csv", |w| Ok(report::write_dwell_records(&dwells, w)?))?;
    let means = mean_dwell_per_site(&dwells);
    emit(&a.out_dir, report::TABLE_MEAN_DWELL, |w| Ok(report::write_mean_dwell(&means, w)?))
}

fn write_matrix(dir: &Path, stem: &str, m: &TransitionMatrix, filter: TransitionFilter, a: &MarkovArgs) -> Result<()> {
    emit(dir, &format!("{stem}_probs.csv"), |w| Ok(report::write_transition_probs(m, w)?))?;
    emit(dir, &format!("{stem}_counts.csv"), |w| Ok(report::write_transition_counts(m, w)?))?;
    let summary = MarkovSummary::new(m, filter, a.min_prob, a.top_k)?;
    emit(dir, &format!("{stem}_summary.json"), |w| serde_json_pretty(w, &summary))?;
    if a.svg && !m.is_empty() {
        let cells: Vec<Vec<f64>> = m.probs().rows().into_iter().map(|r| r.to_vec()).collect();
        let svg = report::render_heatmap_svg(m.sites(), m.sites(), &cells, &ColorScale::default())?;
        emit(dir, &format!("{stem}_probs.svg"), |w| Ok(w.write_all(svg.as_bytes())?))?;
    }
    Ok(())
}

fn serde_json_pretty<T: serde::Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn markov(a: MarkovArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.min_prob) {
        bail!("--min-prob must lie in [0, 1]");
    }
    let (catalog, assigned) = load(&a.inputs)?;
    let seqs = build_sequences(&assigned);
    let group: Option<Vec<String>> = a.group.as_deref().map(|g| match g.parse::<TicketGroup>() {
        Ok(t) => catalog.group_members(t),
        Err(_) => g.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
    });
    let restrict = |m: TransitionMatrix| -> Result<TransitionMatrix> {
        Ok(match &group {
            Some(g) => group_submatrix(&m, g)?,
            None => m,
        })
    };
    let base = TransitionFilter { max_gap: a.window.and_then(|w| w.0), ..Default::default() };
    let m = restrict(estimate_with(&seqs, &catalog, &base)?)?;
    write_matrix(&a.out_dir, "transition", &m, base, &a)?;
    if let Some(boundary) = a.phase_boundary {
        let fa = TransitionFilter { arrival_before: Some(boundary), ..base };
        let fb = TransitionFilter { arrival_from: Some(boundary), ..base };
        write_matrix(&a.out_dir, "phase_a", &restrict(estimate_with(&seqs, &catalog, &fa)?)?, fa, &a)?;
        write_matrix(&a.out_dir, "phase_b", &restrict(estimate_with(&seqs, &catalog, &fb)?)?, fb, &a)?;
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let cfg = a.ap.config();
    cfg.validate()?;
    let (catalog, assigned) = load(&a.inputs)?;
    let emb = load_embeddings(&a.embeddings).with_context(|| format!("reading {}", a.embeddings.display()))?;
    if !emb.rejected.is_empty() {
        eprintln!("skipped {} invalid embedding records", emb.rejected.len());
    }
    let by_site = report::vectors_by_site(emb.vectors, &site_lookup(&assigned));
    let mut rows = Vec::new();
    let mut json = Vec::new();
    for site in catalog.site_ids() {
        let Some(vs) = by_site.get(&site) else { continue };
        match cluster_vectors(vs, &cfg, a.ap.seed) {
            Ok(r) => {
                if !r.converged() {
                    eprintln!("{site}: did not converge in {} iterations", r.iterations());
                }
                rows.push(site_metrics(&site, &r, vs, a.fraction, a.all_clusters)?);
                json.push(SiteClustersJson::new(&site, &r));
            }
            Err(ApError::NoExemplarEmerged { iterations }) => {
                eprintln!("{site}: no exemplar emerged after {iterations} iterations");
            }
            Err(e) => return Err(e).with_context(|| format!("clustering {site}")),
        }
    }
    emit(&a.out_dir, report::TABLE_CLUSTERS, |w| Ok(report::write_cluster_metrics(&rows, w)?))?;
    emit(&a.out_dir, "clusters.json", |w| serde_json_pretty(w, &json))
}

fn scenes(a: ScenesArgs) -> Result<()> {
    let (catalog, assigned) = load(&a.inputs)?;
    let labels = load_scene_labels(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    if !labels.rejected.is_empty() {
        eprintln!("skipped {} invalid scene label rows", labels.rejected.len());
    }
    let ordering = match &a.ordering {
        Some(p) => SceneOrdering::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => SceneOrdering::default(),
    };
    let counts = aggregate_scene_counts(&labels.labels, &site_lookup(&assigned));
    let m = build_matrix(&counts, &catalog, a.fraction, &ordering)?;
    emit(&a.out_dir, report::TABLE_SCENES, |w| Ok(report::write_scene_matrix(&m, w)?))?;
    if a.svg && !m.labels.is_empty() {
        let svg = report::render_heatmap_svg(&m.sites, &m.labels, &m.cells, &ColorScale::fitted(&m.cells))?;
        emit(&a.out_dir, "scene_matrix.svg", |w| Ok(w.write_all(svg.as_bytes())?))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let catalog = SiteCatalog::load(&a.catalog).with_context(|| format!("loading {}", a.catalog.display()))?;
    let g = generate_dataset(&spec, &catalog)?;
    write_photo_csv(&g.dataset.records, create(&a.out)?)?;
    eprintln!("wrote {} photos for {} users to {}", g.dataset.records.len(), spec.n_users, a.out.display());
    if a.embeddings.is_some() || a.scenes.is_some() {
        let assigned = filter_within_buffer(&g.dataset, &catalog);
        if let Some(p) = &a.embeddings {
            let vs = site_embeddings(&assigned, a.dim, a.themes, 0.5, spec.seed);
            write_embeddings_bin(&vs, create(p)?)?;
        }
        if let Some(p) = &a.scenes {
            let mut w = csv::Writer::from_writer(create(p)?);
            w.write_record(["photo_id", "label", "confidence"])?;
            for l in site_scene_labels(&assigned, spec.seed) {
                w.write_record([l.photo_id, l.label, format!("{:.4}", l.confidence)])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let cfg = ReportConfig {
        window: a.window.and_then(|w| w.0),
        ap: a.ap.config(),
        seed: a.ap.seed,
        cluster_fraction: a.cluster_fraction,
        all_clusters: a.all_clusters,
        scene_fraction: a.scene_fraction,
        svg: a.svg,
    };
    cfg.ap.validate()?;
    let inputs = ReportInputs {
        photos: a.inputs.input,
        catalog: a.inputs.catalog,
        embeddings: a.embeddings,
        scenes: a.labels,
        ordering: a.ordering,
    };
    let manifest = report::run_report(&inputs, &cfg, &a.out_dir, Utc::now())?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, o.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats(a),
        Command::Markov(a) => markov(a),
        Command::Cluster(a) => cluster(a),
        Command::Scenes(a) => scenes(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
