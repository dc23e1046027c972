//! The pipeline subcommands. Each reads a [`RunConfig`], writes its artifacts
//! into one output directory and returns that directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mcpm_core::analysis::{
    assign_clusters, cosine_ranking, direction_stats, euclidean_ranking, rank_diff_table, threshold_components,
    word_cloud, ClusterLabeling, DirectionStats,
};
use mcpm_core::ingest::{load_points_3d, load_word2vec_text, normalize_to_unit_cube, pca_project, save_points_3d};
use mcpm_core::mcpm::{convergence_metric, fit_trace, CONVERGENCE_THRESHOLD};
use mcpm_core::probe::{explore, mcpm_similarity_at, Exploration};
use mcpm_core::{EmbeddingSet, Metric, PointCloud, Ranking, RngStreams, ScalarField, TokenId, TrajectorySet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Query, RunConfig, RESOLVED_CONFIG};
use crate::error::{CliError, Result};
use crate::fieldfile::{read_scalar, write_scalar, FieldFile};

pub const POINTS_FILE: &str = "points.tsv";
pub const TRACE_FILE: &str = "trace.field";
pub const DEPOSIT_FILE: &str = "deposit.field";

/// Artifacts of a finished fit.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    /// Normalized positions used by the fit.
    pub cloud: PointCloud,
    pub trace: ScalarField,
    /// Header metadata of `trace.field`.
    pub trace_meta: serde_json::Value,
    pub fit_config: Option<RunConfig>,
}

impl Run {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cloud = load_points_3d(dir.join(POINTS_FILE))?;
        let (trace, trace_meta) = read_scalar(dir.join(TRACE_FILE))?;
        let cfg_path = dir.join(RESOLVED_CONFIG);
        let fit_config = if cfg_path.exists() {
            Some(RunConfig::load(cfg_path)?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            cloud,
            trace,
            trace_meta,
            fit_config,
        })
    }

    pub fn surface(&self, id: TokenId) -> String {
        self.cloud.surface(id).to_string()
    }

    /// Vectors for the Euclidean and cosine baselines: the original vectors
    /// when the fit started from them, the normalized 3D positions otherwise.
    pub fn baseline_vectors(&self, cfg: &RunConfig) -> Result<EmbeddingSet> {
        let path = cfg
            .vectors
            .clone()
            .or_else(|| self.fit_config.as_ref().and_then(|c| c.vectors.clone()));
        match path {
            Some(p) => {
                let set = load_word2vec_text(&p)?;
                if set.len() != self.cloud.len() {
                    return Err(CliError::format(
                        &p,
                        format!("{} vectors for {} tokens in the run", set.len(), self.cloud.len()),
                    ));
                }
                Ok(set)
            }
            None => Ok(EmbeddingSet::from(&self.cloud)),
        }
    }

    /// Token id for `surface`, or an error listing the closest surfaces.
    pub fn token(&self, surface: &str) -> Result<TokenId> {
        self.cloud.find_surface(surface).ok_or_else(|| CliError::UnknownSurface {
            surface: surface.to_string(),
            suggestions: nearest_surfaces(&self.cloud, surface, 5),
        })
    }
}

/// Surfaces by increasing edit distance, ties alphabetical.
pub fn nearest_surfaces(cloud: &PointCloud, surface: &str, n: usize) -> Vec<String> {
    let mut scored: Vec<(usize, &str)> = cloud
        .tokens
        .iter()
        .map(|t| (strsim::levenshtein(surface, &t.surface), t.surface.as_str()))
        .collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, s)| s.to_string()).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    }
}

/// Loads the input named by the config and maps it into the unit cube.
pub fn load_input(cfg: &RunConfig) -> Result<PointCloud> {
    let raw = match (&cfg.points, &cfg.vectors) {
        (Some(p), _) => load_points_3d(p)?,
        (None, Some(v)) => {
            if !cfg.pca {
                return Err(CliError::Config("vector input needs --pca to project to 3D".into()));
            }
            let set = load_word2vec_text(v)?;
            let proj = pca_project(&set, 3)?;
            if proj.degenerate {
                log::warn!("vectors span fewer than 3 dimensions; trailing axes are flat");
            }
            proj.cloud
        }
        (None, None) => return Err(CliError::Config("no input: pass --points or --vectors".into())),
    };
    Ok(normalize_to_unit_cube(&raw, cfg.margin)?)
}

/// Fits the trace network. Writes `trace.field`, `deposit.field`,
/// `convergence.csv`, the normalized `points.tsv` and `resolved-config.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let cloud = load_input(cfg)?;
    let out = cfg.out_or("run");
    create_dir(&out)?;

    log::info!(
        "fitting {} tokens: {} agents x {} steps on {:?}",
        cloud.len(),
        cfg.mcpm.n_agents,
        cfg.mcpm.n_steps,
        cfg.mcpm.grid_res
    );
    let result = with_threads(cfg.threads, || fit_trace(&cloud, &cfg.mcpm, RngStreams::new(seed)))??;
    let metric = convergence_metric(&result);
    match metric {
        Some(m) if m < CONVERGENCE_THRESHOLD => log::info!("converged, final change {m:.5}"),
        Some(m) => log::warn!("not converged: final change {m:.5} >= {CONVERGENCE_THRESHOLD}"),
        None => log::warn!("fewer steps than the trace window; convergence unknown"),
    }

    save_points_3d(&cloud, out.join(POINTS_FILE))?;
    let meta = |kind: &str| {
        json!({
            "kind": kind,
            "steps_run": result.steps_run,
            "trace_window": result.trace_window,
            "convergence": metric,
            "seed": seed,
        })
    };
    write_scalar(out.join(TRACE_FILE), &result.trace, meta("trace"))?;
    write_scalar(out.join(DEPOSIT_FILE), &result.deposit, meta("deposit"))?;

    let path = out.join("convergence.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["step", "change"]).map_err(|e| csv_error(&path, e))?;
    for (t, v) in result.convergence_series.iter().enumerate() {
        w.write_record([(t + 1).to_string(), v.to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let resolved = RunConfig {
        out: Some(out.clone()),
        run_dir: Some(out.clone()),
        ..cfg.clone()
    };
    resolved.save(out.join(RESOLVED_CONFIG))?;
    Ok(out)
}

/// One ranked row as exported to CSV and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub surface: String,
    pub token: TokenId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub metric: Metric,
    pub query: Option<String>,
    pub entries: Vec<RankRow>,
}

impl RankingRecord {
    pub fn new(ranking: &Ranking, surface: impl Fn(TokenId) -> String) -> Self {
        Self {
            metric: ranking.metric,
            query: ranking.query.map(&surface),
            entries: ranking
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| RankRow {
                    rank: i + 1,
                    surface: surface(e.token),
                    token: e.token,
                    score: e.score,
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let name = format!("ranking_{}", self.metric);
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv_writer(&path)?;
        for row in &self.entries {
            w.serialize(row).map_err(|e| csv_error(&path, e))?;
        }
        if self.entries.is_empty() {
            w.write_record(["rank", "surface", "token", "score"])
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        write_json(&dir.join(format!("{name}.json")), self)
    }
}

/// Everything a probe query produces.
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub exploration: Exploration,
    /// Present when the query resolves to a token.
    pub euclidean: Option<Ranking>,
    pub cosine: Option<Ranking>,
    pub direction_stats: DirectionStats,
}

impl ProbeOutcome {
    pub fn query(&self) -> Option<TokenId> {
        self.exploration.ranking.query
    }

    pub fn trajectories(&self) -> &TrajectorySet {
        &self.exploration.trajectories
    }
}

/// Seeds probes for `query`. A token query starts at the token and excludes
/// it; a position query excludes the token nearest the position within the
/// discovery radius, if any.
pub fn explore_query(run: &Run, cfg: &RunConfig, query: &Query) -> Result<Exploration> {
    let streams = RngStreams::new(cfg.seed()?);
    let n = cfg.analysis.n_repeats;
    Ok(match query {
        Query::Token(s) => {
            let id = run.token(s)?;
            let pos = run.cloud.positions[id];
            explore(&run.trace, &run.cloud, pos, Some(id), &cfg.probe, streams, n)?
        }
        Query::Pos(p) => mcpm_similarity_at(&run.trace, &run.cloud, *p, &cfg.probe, streams, n)?,
    })
}

pub fn probe_query(run: &Run, cfg: &RunConfig, query: &Query, baselines: Option<&EmbeddingSet>) -> Result<ProbeOutcome> {
    let exploration = explore_query(run, cfg, query)?;
    let direction_stats = direction_stats(&exploration.trajectories, cfg.analysis.bins)?;
    let (euclidean, cosine) = match (exploration.ranking.query, baselines) {
        (Some(q), Some(set)) => (Some(euclidean_ranking(set, q)?), Some(cosine_ranking(set, q)?)),
        _ => (None, None),
    };
    Ok(ProbeOutcome {
        exploration,
        euclidean,
        cosine,
        direction_stats,
    })
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryHeader {
    n_probes: usize,
    n_steps: usize,
    seed: [f32; 3],
    dtype: &'static str,
    layout: &'static str,
}

/// Writes all probe vertices as a JSON header line followed by f32le xyz
/// triples, probe-major.
pub fn write_trajectories(path: &Path, traj: &TrajectorySet) -> Result<()> {
    let header = TrajectoryHeader {
        n_probes: traj.n_probes,
        n_steps: traj.n_steps,
        seed: traj.seed,
        dtype: "f32le",
        layout: "probe,vertex,xyz",
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.extend(traj.all_points().iter().flatten().flat_map(|v| v.to_le_bytes()));
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

fn probe_query_from(cfg: &RunConfig) -> Result<Query> {
    cfg.query
        .clone()
        .ok_or_else(|| CliError::Config("pass --token or --pos".into()))
}

/// Probes the fitted trace from a token or position. Writes the three
/// rankings, the rank-difference table, direction statistics, word clouds,
/// trajectories and `resolved-config.json`.
pub fn cmd_probe(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let query = probe_query_from(cfg)?;
    let run = Run::load(cfg.run_dir()?)?;
    let baselines = run.baseline_vectors(cfg)?;
    let outcome = with_threads(cfg.threads, || probe_query(&run, cfg, &query, Some(&baselines)))??;
    let out = cfg.out_or(run.dir.join("probe"));
    create_dir(&out)?;
    let surface = |t: TokenId| run.surface(t);

    let mcpm = &outcome.exploration.ranking;
    RankingRecord::new(mcpm, surface).write(&out)?;
    let mut clouds = serde_json::Map::new();
    clouds.insert("mcpm".into(), json!(word_cloud(mcpm, surface)));
    if let (Some(e), Some(c)) = (&outcome.euclidean, &outcome.cosine) {
        RankingRecord::new(e, surface).write(&out)?;
        RankingRecord::new(c, surface).write(&out)?;
        clouds.insert("euclidean".into(), json!(word_cloud(e, surface)));
        clouds.insert("cosine".into(), json!(word_cloud(c, surface)));
        write_diff_table(&out.join("diff_table.csv"), mcpm, e, c, cfg.analysis.top_k, surface)?;
    } else {
        log::warn!("position query matches no token; skipping the Euclidean and cosine baselines");
    }
    write_json(&out.join("wordcloud.json"), &clouds)?;
    write_json(&out.join("direction_stats.json"), &outcome.direction_stats)?;
    write_json(
        &out.join("discovery.json"),
        &json!({
            "seed": outcome.exploration.seed,
            "query": outcome.query().map(surface),
            "discovered": outcome.exploration.counts.discovered(),
            "counts": outcome.exploration.counts.counts,
        }),
    )?;
    write_trajectories(&out.join("trajectories.bin"), outcome.trajectories())?;

    let resolved = RunConfig {
        out: Some(out.clone()),
        query: Some(query),
        ..cfg.clone()
    };
    resolved.save(out.join(RESOLVED_CONFIG))?;
    Ok(out)
}

/// Rows ordered by descending Euclidean minus MCPM rank. Missing ranks are
/// written as `inf`.
fn write_diff_table(
    path: &Path,
    mcpm: &Ranking,
    euclid: &Ranking,
    cosine: &Ranking,
    top_k: usize,
    surface: impl Fn(TokenId) -> String,
) -> Result<()> {
    let rows = rank_diff_table(mcpm, euclid, cosine, top_k, surface)?;
    let rank = |r: Option<usize>| r.map_or_else(|| "inf".to_string(), |v| v.to_string());
    let mut w = csv_writer(path)?;
    w.write_record(["word", "mcpm", "euclid", "cosine", "delta"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.surface,
            rank(r.rank_a),
            rank(r.rank_b),
            rank(r.rank_c),
            r.delta.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One ranking for a token under one metric.
pub fn rank_token(run: &Run, cfg: &RunConfig, surface: &str, metric: Metric) -> Result<Ranking> {
    let id = run.token(surface)?;
    match metric {
        Metric::Mcpm => Ok(explore_query(run, cfg, &Query::Token(surface.to_string()))?.ranking),
        Metric::Euclidean => Ok(euclidean_ranking(&run.baseline_vectors(cfg)?, id)?),
        Metric::Cosine => Ok(cosine_ranking(&run.baseline_vectors(cfg)?, id)?),
    }
}

/// Writes `ranking_<metric>.csv/json` for a token query.
pub fn cmd_rank(cfg: &RunConfig, metric: Metric) -> Result<PathBuf> {
    cfg.validate()?;
    let surface = match probe_query_from(cfg)? {
        Query::Token(s) => s,
        Query::Pos(_) => return Err(CliError::Config("rank needs --token".into())),
    };
    let run = Run::load(cfg.run_dir()?)?;
    let ranking = with_threads(cfg.threads, || rank_token(&run, cfg, &surface, metric))??;
    let out = cfg.out_or(run.dir.join("rank"));
    create_dir(&out)?;
    RankingRecord::new(&ranking, |t| run.surface(t)).write(&out)?;
    cfg.save(out.join(RESOLVED_CONFIG))?;
    Ok(out)
}

/// Summary written to `clusters.json` and served by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub tau: f32,
    pub n_components: usize,
    pub component_mass: Vec<f64>,
    pub component_size: Vec<usize>,
    pub assign_radius: f32,
    pub unassigned: usize,
    /// Component of each token, `null` when unassigned.
    pub token_labels: Vec<Option<u32>>,
}

pub fn cluster_run(run: &Run, cfg: &RunConfig) -> ClusterLabeling {
    let labels = threshold_components(&run.trace, cfg.analysis.threshold);
    assign_clusters(&run.cloud, labels, cfg.analysis.assign_radius)
}

impl ClusterSummary {
    pub fn new(c: &ClusterLabeling, assign_radius: f32) -> Self {
        Self {
            tau: c.voxel_labels.tau,
            n_components: c.n_components(),
            component_mass: c.voxel_labels.component_mass.clone(),
            component_size: c.voxel_labels.component_size.clone(),
            assign_radius,
            unassigned: c.unassigned(),
            token_labels: c.token_labels.clone(),
        }
    }
}

/// Labels the thresholded trace network. Writes `labels.field` (u32 payload,
/// 0 below threshold), `token_clusters.tsv` and `clusters.json`.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let run = Run::load(cfg.run_dir()?)?;
    let clusters = with_threads(cfg.threads, || cluster_run(&run, cfg))?;
    if clusters.n_components() == 0 {
        log::warn!("no voxel reaches tau = {}; 0 components", clusters.voxel_labels.tau);
    }
    let out = cfg.out_or(run.dir.join("cluster"));
    create_dir(&out)?;
    let summary = ClusterSummary::new(&clusters, cfg.analysis.assign_radius);
    FieldFile::from_labels(
        clusters.voxel_labels.dims,
        &clusters.voxel_labels.labels,
        json!({"kind": "labels", "tau": summary.tau, "n_components": summary.n_components}),
    )
    .write(out.join("labels.field"))?;

    let path = out.join("token_clusters.tsv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&path)
        .map_err(|e| csv_error(&path, e))?;
    w.write_record(["surface", "token", "cluster"])
        .map_err(|e| csv_error(&path, e))?;
    for (t, label) in run.cloud.tokens.iter().zip(&clusters.token_labels) {
        let label = label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([t.surface.clone(), t.id.to_string(), label])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    write_json(&out.join("clusters.json"), &summary)?;
    cfg.save(out.join(RESOLVED_CONFIG))?;
    Ok(out)
}

pub fn parse_axis(s: &str) -> std::result::Result<usize, String> {
    match s.to_ascii_lowercase().as_str() {
        "x" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "z" | "2" => Ok(2),
        _ => Err(format!("axis must be x, y or z, got {s:?}")),
    }
}

/// Writes one axis-aligned slice of `trace` or `deposit` as CSV, one row per
/// step along the slower in-plane axis.
pub fn cmd_export(cfg: &RunConfig, field: &str, axis: usize, index: usize) -> Result<PathBuf> {
    let dir = cfg.run_dir()?;
    let file = match field {
        "trace" => TRACE_FILE,
        "deposit" => DEPOSIT_FILE,
        other => return Err(CliError::Config(format!("unknown field {other:?}, expected trace or deposit"))),
    };
    let (values, _) = read_scalar(dir.join(file))?;
    let (slice, [w, _]) = values.slice(axis, index).ok_or_else(|| {
        CliError::Config(format!("slice index {index} out of range for axis {axis} of {:?}", values.dims))
    })?;
    let out = cfg.out_or(dir.join("export"));
    create_dir(&out)?;
    let name = ["x", "y", "z"][axis];
    let path = out.join(format!("slice_{field}_{name}{index}.csv"));
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| csv_error(&path, e))?;
    for row in slice.chunks(w) {
        wtr.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(&path, e))?;
    }
    wtr.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
