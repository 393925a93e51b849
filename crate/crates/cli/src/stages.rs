//! Pipeline stages and their work-dir artifacts.
//!
//! Artifact names are `{stage}-{hash}.{name}` where the hash covers exactly
//! the configuration keys that influence the stage and everything upstream
//! of it. Rerunning a stage whose outputs are already present and match the
//! current configuration is a no-op; `--force` recomputes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use hotspot_core::artifact::ArtifactReader;
use hotspot_core::baselines::{
    kde_density, kde_fit, kde_hotspot_classify, subsample_points, svm_predict, svm_train,
};
use hotspot_core::features::{
    build_dataset, consolidate_rare, load_dataset, save_dataset, stratified_split, NodeDataset,
};
use hotspot_core::gcn::{
    self, load_checkpoint, predict_proba, predictions_from_proba, save_checkpoint,
};
use hotspot_core::geo::GridSpec;
use hotspot_core::graph::{
    build_edges, build_nodes, graph_stats, load_graph, normalize_adjacency, save_graph, CellTable,
    NormalizedAdjacency,
};
use hotspot_core::heatmap::{export_geojson, export_raster, heatmap_layers};
use hotspot_core::ingest::{read_records, Cleaner, RecordParser, RecordsWriter};
use hotspot_core::matrix::Matrix;
use hotspot_core::metrics::{comparison_report, compute_metrics, KdeBinaryRecord, MetricsReport};

use crate::config::{stage_hash, PipelineConfig, TOOL_VERSION};
use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Graph,
    Train,
    BaselineKde,
    BaselineSvm,
    Eval,
    Heatmap,
    Report,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::BaselineKde => "baseline-kde",
            Stage::BaselineSvm => "baseline-svm",
            Stage::Eval => "eval",
            Stage::Heatmap => "heatmap",
            Stage::Report => "report",
        }
    }
}

fn artifact_path(work_dir: &Path, stage: &str, hash: &str, name: &str) -> PathBuf {
    work_dir.join(format!("{stage}-{hash}.{name}"))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        PipelineError::StaleArtifact(format!("{} is not valid JSON: {e}", path.display()))
    })
}

/// Embedded config hash of an existing artifact, by file flavor.
fn embedded_hash(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    if name.ends_with(".bin") {
        let kind = if name.ends_with(".records.bin") {
            "records"
        } else if name.ends_with(".graph.bin") {
            "graph"
        } else if name.ends_with(".dataset.bin") {
            "dataset"
        } else if name.ends_with(".model.bin") {
            "checkpoint"
        } else if name.ends_with(".proba.bin") {
            "proba"
        } else {
            return None;
        };
        let reader = ArtifactReader::open(path, kind).ok()?;
        return reader.header["config_hash"].as_str().map(|s| s.to_string());
    }
    if name.ends_with(".json") || name.ends_with(".geojson") {
        let value = read_json(path).ok()?;
        return value["config_hash"].as_str().map(|s| s.to_string());
    }
    if name.ends_with(".ppm") {
        let bytes = fs::read(path).ok()?;
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]).to_string();
        let line = text.lines().nth(1)?.to_string();
        return line
            .strip_prefix("# config_hash=")
            .map(|s| s.split_whitespace().next().unwrap_or("").to_string());
    }
    if name.ends_with(".csv") || name.ends_with(".txt") {
        let text = fs::read_to_string(path).ok()?;
        let line = text.lines().next()?;
        return line
            .strip_prefix("# config_hash=")
            .map(|s| s.split_whitespace().next().unwrap_or("").to_string());
    }
    None
}

/// True when every output exists and carries the expected hash. An output
/// that exists under a different hash is an error unless forced; `--force`
/// always recomputes.
fn outputs_fresh(paths: &[PathBuf], hash: &str, force: bool) -> Result<bool> {
    if force {
        return Ok(false);
    }
    let mut all_fresh = true;
    for path in paths {
        if !path.exists() {
            all_fresh = false;
            continue;
        }
        match embedded_hash(path) {
            Some(h) if h == hash => {}
            other => {
                return Err(PipelineError::StaleArtifact(format!(
                    "{} exists but was produced under configuration {:?}, expected {hash}",
                    path.display(),
                    other
                )))
            }
        }
    }
    Ok(all_fresh)
}

fn require(path: PathBuf, producer: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact {
            stage: producer,
            path,
        })
    }
}

fn check_hash(header: &Value, expected: &str, path: &Path) -> Result<()> {
    let found = header["config_hash"].as_str().unwrap_or("");
    if found != expected {
        return Err(PipelineError::StaleArtifact(format!(
            "{} carries config hash {found}, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

fn meta(hash: &str) -> Value {
    json!({"config_hash": hash, "tool_version": TOOL_VERSION})
}

/// Run one stage; returns the artifact paths it produced or verified.
pub fn run_stage(
    stage: Stage,
    config: &PipelineConfig,
    work_dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(work_dir)?;
    match stage {
        Stage::Ingest => run_ingest(config, work_dir, force),
        Stage::Graph => run_graph(config, work_dir, force),
        Stage::Train => run_train(config, work_dir, force),
        Stage::BaselineKde => run_baseline_kde(config, work_dir, force),
        Stage::BaselineSvm => run_baseline_svm(config, work_dir, force),
        Stage::Eval => run_eval(config, work_dir, force),
        Stage::Heatmap => run_heatmap(config, work_dir, force),
        Stage::Report => run_report(config, work_dir, force),
    }
}

fn run_ingest(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "ingest");
    let records_path = artifact_path(work_dir, "ingest", &hash, "records.bin");
    let report_path = artifact_path(work_dir, "ingest", &hash, "report.json");
    let outputs = vec![records_path.clone(), report_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("ingest: up to date ({hash})");
        return Ok(outputs);
    }

    if !config.raw_csv.exists() {
        return Err(PipelineError::Config(format!(
            "input CSV not found: {} (set raw_csv, or generate one with `hotspot synth --out {}`)",
            config.raw_csv.display(),
            config.raw_csv.display()
        )));
    }

    let file = fs::File::open(&config.raw_csv)?;
    let mut parser = RecordParser::new(std::io::BufReader::new(file), &config.schema)
        .map_err(PipelineError::Core)?;
    let mut cleaner = Cleaner::new(&config.schema);
    let mut writer = RecordsWriter::create(&records_path)?;
    let mut kept = 0u64;
    while let Some(raw) = parser.next_record()? {
        if let Some(rec) = cleaner.clean_one(&raw) {
            if config.bbox.contains(rec.point()) {
                writer.append(&rec)?;
                kept += 1;
            } else {
                cleaner.record_bbox_drop();
            }
        }
    }
    cleaner.add_parse_errors(parser.parse_errors());
    cleaner.set_bbox_retained(kept);
    let (types, report) = cleaner.finish();
    writer.finish(&types, meta(&hash))?;

    let report_json = json!({
        "config_hash": hash,
        "tool_version": TOOL_VERSION,
        "report": report,
    });
    write_json(&report_path, &report_json)?;
    eprintln!(
        "ingest: {} rows -> {} clean -> {} in box",
        report.total_rows, report.rows_after_null_removal, report.rows_after_bbox
    );
    Ok(outputs)
}

struct GraphArtifacts {
    cells: CellTable,
    adj: NormalizedAdjacency,
    dataset: NodeDataset,
}

fn load_graph_artifacts(config: &PipelineConfig, work_dir: &Path) -> Result<GraphArtifacts> {
    let h_graph = stage_hash(config, "graph");
    let graph_path = require(
        artifact_path(work_dir, "graph", &h_graph, "graph.bin"),
        "graph",
    )?;
    let dataset_path = require(
        artifact_path(work_dir, "graph", &h_graph, "dataset.bin"),
        "graph",
    )?;
    let (cells, _, adj, header) = load_graph(&graph_path)?;
    check_hash(&header, &h_graph, &graph_path)?;
    let (dataset, ds_header) = load_dataset(&dataset_path)?;
    check_hash(&ds_header, &h_graph, &dataset_path)?;
    Ok(GraphArtifacts {
        cells,
        adj,
        dataset,
    })
}

fn run_graph(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "graph");
    let graph_path = artifact_path(work_dir, "graph", &hash, "graph.bin");
    let dataset_path = artifact_path(work_dir, "graph", &hash, "dataset.bin");
    let stats_path = artifact_path(work_dir, "graph", &hash, "stats.json");
    let outputs = vec![graph_path.clone(), dataset_path.clone(), stats_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("graph: up to date ({hash})");
        return Ok(outputs);
    }

    let h_ingest = stage_hash(config, "ingest");
    let records_path = require(
        artifact_path(work_dir, "ingest", &h_ingest, "records.bin"),
        "ingest",
    )?;
    let (records, types, header) = read_records(&records_path)?;
    check_hash(&header, &h_ingest, &records_path)?;

    let grid = GridSpec::from_bbox(config.bbox, config.cell_lat_deg, config.cell_lon_deg)?;
    let cells = build_nodes(records.iter(), &grid, types.names())?;

    let mut type_counts = vec![0u64; types.len()];
    for r in &records {
        type_counts[r.type_id as usize] += 1;
    }
    let label_map = consolidate_rare(types.names(), &type_counts, config.min_class_count)?;

    let mut dataset = build_dataset(&cells, &label_map)?;
    dataset.masks = Some(stratified_split(
        &dataset.labels,
        label_map.n_classes(),
        config.split_ratios,
        config.split_seed,
    )?);

    let graph = build_edges(&cells, config.edge_threshold_km, config.edge_epsilon)?;
    let adj = normalize_adjacency(&graph);
    let stats = graph_stats(&graph);

    save_graph(&graph_path, &cells, &graph, &adj, meta(&hash))?;
    let mut ds_meta = meta(&hash);
    ds_meta["split_seed"] = json!(config.split_seed);
    ds_meta["split_ratios"] = json!([
        config.split_ratios.0,
        config.split_ratios.1,
        config.split_ratios.2
    ]);
    save_dataset(&dataset_path, &dataset, ds_meta)?;
    write_json(
        &stats_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "stats": stats,
            "classes": dataset.class_names,
        }),
    )?;
    eprintln!(
        "graph: {} cells, {} edges, avg degree {:.2}, clustering {:.3}",
        stats.nodes, stats.undirected_edges, stats.average_degree, stats.average_clustering
    );
    Ok(outputs)
}

fn run_train(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "train");
    let model_path = artifact_path(work_dir, "train", &hash, "model.bin");
    let history_path = artifact_path(work_dir, "train", &hash, "history.csv");
    let meta_path = artifact_path(work_dir, "train", &hash, "train_meta.json");
    let outputs = vec![model_path.clone(), history_path.clone(), meta_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("train: up to date ({hash})");
        return Ok(outputs);
    }

    let art = load_graph_artifacts(config, work_dir)?;
    let started = Instant::now();
    let (params, history) = gcn::train(&art.dataset, &art.adj, &config.gcn)?;
    let wall = started.elapsed().as_secs_f64();

    let mut ckpt_meta = meta(&hash);
    ckpt_meta["best_epoch"] = json!(history.best_epoch);
    ckpt_meta["stopped_epoch"] = json!(history.stopped_epoch);
    save_checkpoint(
        &model_path,
        &params,
        &config.gcn,
        &art.dataset.class_names,
        ckpt_meta,
    )?;

    let mut csv = format!("# config_hash={hash} tool_version={TOOL_VERSION}\n");
    csv.push_str(&history.to_csv());
    fs::write(&history_path, csv)?;

    write_json(
        &meta_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "wall_time_seconds": wall,
            "best_epoch": history.best_epoch,
            "stopped_epoch": history.stopped_epoch,
            "parameter_count": params.parameter_count(),
        }),
    )?;
    eprintln!(
        "train: stopped at epoch {} (best {}), val acc {:.3}",
        history.stopped_epoch,
        history.best_epoch,
        history
            .epochs
            .get(history.best_epoch.saturating_sub(1))
            .map_or(0.0, |e| e.val_acc)
    );
    Ok(outputs)
}

fn run_eval(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "eval");
    let metrics_path = artifact_path(work_dir, "eval", &hash, "gcn_metrics.json");
    let proba_path = artifact_path(work_dir, "eval", &hash, "proba.bin");
    let outputs = vec![metrics_path.clone(), proba_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("eval: up to date ({hash})");
        return Ok(outputs);
    }

    let h_train = stage_hash(config, "train");
    let model_path = require(
        artifact_path(work_dir, "train", &h_train, "model.bin"),
        "train",
    )?;
    let meta_path = require(
        artifact_path(work_dir, "train", &h_train, "train_meta.json"),
        "train",
    )?;
    let (params, _, class_names, header) = load_checkpoint(&model_path)?;
    check_hash(&header, &h_train, &model_path)?;
    let train_meta = read_json(&meta_path)?;
    let train_wall = train_meta["wall_time_seconds"].as_f64().unwrap_or(0.0);

    let art = load_graph_artifacts(config, work_dir)?;
    let proba = predict_proba(&params, &art.adj, &art.dataset.features)?;
    let predictions = predictions_from_proba(&proba);
    let masks = art.dataset.masks()?;
    let report = compute_metrics(
        &predictions,
        &art.dataset.labels,
        &masks.test,
        &class_names,
        train_wall,
    )?;

    write_json(
        &metrics_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "method": "gcn",
            "report": report,
        }),
    )?;

    let mut proba_meta = meta(&hash);
    proba_meta["n"] = json!(proba.rows());
    proba_meta["classes"] = json!(proba.cols());
    proba_meta["class_names"] = json!(class_names);
    let mut w = hotspot_core::artifact::ArtifactWriter::create(&proba_path, "proba", proba_meta)?;
    w.write_f64s(proba.data())?;
    w.finish()?;

    eprintln!(
        "eval: test accuracy {:.3}, macro F1 {:.3}",
        report.accuracy, report.macro_f1
    );
    Ok(outputs)
}

fn run_baseline_kde(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "baseline-kde");
    let metrics_path = artifact_path(work_dir, "baseline-kde", &hash, "kde_metrics.json");
    let outputs = vec![metrics_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("baseline-kde: up to date ({hash})");
        return Ok(outputs);
    }

    let h_ingest = stage_hash(config, "ingest");
    let records_path = require(
        artifact_path(work_dir, "ingest", &h_ingest, "records.bin"),
        "ingest",
    )?;
    let (records, _, header) = read_records(&records_path)?;
    check_hash(&header, &h_ingest, &records_path)?;
    let art = load_graph_artifacts(config, work_dir)?;

    let started = Instant::now();
    let points: Vec<_> = records.iter().map(|r| r.point()).collect();
    let sample = subsample_points(&points, config.kde_subsample_cap, config.kde_seed);
    let model = kde_fit(
        &sample,
        &config.kde_bandwidths_km,
        config.kde_cv_folds,
        config.kde_seed,
    )?;
    let density = kde_density(&model, &art.cells);
    let counts: Vec<u32> = art.cells.cells.iter().map(|c| c.crime_count).collect();
    let hotspot = kde_hotspot_classify(&density, &counts, config.hotspot_quantile)?;
    let wall = started.elapsed().as_secs_f64();

    let record = KdeBinaryRecord {
        accuracy: hotspot.accuracy,
        hotspot_quantile: config.hotspot_quantile,
        bandwidth_km: model.bandwidth_km,
        wall_time_seconds: wall,
    };
    write_json(
        &metrics_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "method": "kde",
            "record": record,
            "sample_size": sample.len(),
        }),
    )?;
    eprintln!(
        "baseline-kde: bandwidth {} km, hotspot accuracy {:.3}",
        model.bandwidth_km, hotspot.accuracy
    );
    Ok(outputs)
}

fn run_baseline_svm(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "baseline-svm");
    let metrics_path = artifact_path(work_dir, "baseline-svm", &hash, "svm_metrics.json");
    let outputs = vec![metrics_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("baseline-svm: up to date ({hash})");
        return Ok(outputs);
    }

    let art = load_graph_artifacts(config, work_dir)?;
    let masks = art.dataset.masks()?;
    let n_train = masks.train.iter().filter(|&&b| b).count();

    let started = Instant::now();
    let gamma = config.svm_gamma_for(art.dataset.features.cols());
    let lambda = config.svm_lambda_for(n_train);
    let model = svm_train(
        &art.dataset,
        gamma,
        lambda,
        config.svm_iterations,
        config.svm_seed,
    )?;
    let predictions = svm_predict(&model, &art.dataset.features);
    let wall = started.elapsed().as_secs_f64();

    let report = compute_metrics(
        &predictions,
        &art.dataset.labels,
        &masks.test,
        &art.dataset.class_names,
        wall,
    )?;
    write_json(
        &metrics_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "method": "svm",
            "report": report,
            "gamma": gamma,
            "lambda": lambda,
        }),
    )?;
    eprintln!(
        "baseline-svm: test accuracy {:.3}, macro F1 {:.3}",
        report.accuracy, report.macro_f1
    );
    Ok(outputs)
}

fn class_slug(name: &str) -> String {
    let mut slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    slug.truncate(40);
    if slug.is_empty() {
        slug.push('x');
    }
    slug
}

fn run_heatmap(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "heatmap");
    let proba_path = require(
        artifact_path(work_dir, "eval", &stage_hash(config, "eval"), "proba.bin"),
        "eval",
    )?;
    let mut reader = ArtifactReader::open(&proba_path, "proba")?;
    check_hash(&reader.header, &stage_hash(config, "eval"), &proba_path)?;
    let n = reader.header["n"].as_u64().unwrap_or(0) as usize;
    let c = reader.header["classes"].as_u64().unwrap_or(0) as usize;
    let class_names: Vec<String> = reader.header["class_names"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|v| v.as_str().unwrap_or("").to_string())
                .collect()
        })
        .unwrap_or_default();
    let proba = Matrix::from_vec(n, c, reader.read_f64s(n * c)?);

    let outputs: Vec<PathBuf> = class_names
        .iter()
        .flat_map(|name| {
            let slug = class_slug(name);
            [
                artifact_path(work_dir, "heatmap", &hash, &format!("{slug}.geojson")),
                artifact_path(work_dir, "heatmap", &hash, &format!("{slug}.ppm")),
            ]
        })
        .collect();
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("heatmap: up to date ({hash})");
        return Ok(outputs);
    }

    let art = load_graph_artifacts(config, work_dir)?;
    let layers = heatmap_layers(&proba, &art.cells, &class_names)?;

    // distinct classes should produce distinct surfaces
    if n > 1 {
        for i in 0..layers.len() {
            for j in i + 1..layers.len() {
                if layers[i].values == layers[j].values {
                    eprintln!(
                        "heatmap: warning: layers {} and {} are identical",
                        layers[i].class_name, layers[j].class_name
                    );
                }
            }
        }
    }

    for layer in &layers {
        let slug = class_slug(&layer.class_name);
        let geojson_path = artifact_path(work_dir, "heatmap", &hash, &format!("{slug}.geojson"));
        let ppm_path = artifact_path(work_dir, "heatmap", &hash, &format!("{slug}.ppm"));

        let text = export_geojson(layer, &art.cells)?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| PipelineError::Runtime(e.to_string()))?;
        value["config_hash"] = json!(hash);
        value["tool_version"] = json!(TOOL_VERSION);
        write_json(&geojson_path, &value)?;

        let ppm = export_raster(layer, &art.cells)?;
        let mut stamped = Vec::with_capacity(ppm.len() + 64);
        stamped.extend_from_slice(b"P6\n");
        stamped.extend_from_slice(
            format!("# config_hash={hash} tool_version={TOOL_VERSION}\n").as_bytes(),
        );
        stamped.extend_from_slice(&ppm[3..]); // after the "P6\n" magic
        fs::write(&ppm_path, stamped)?;
    }
    eprintln!("heatmap: wrote {} layers", layers.len());
    Ok(outputs)
}

fn run_report(config: &PipelineConfig, work_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let hash = stage_hash(config, "report");
    let text_path = artifact_path(work_dir, "report", &hash, "comparison.txt");
    let json_path = artifact_path(work_dir, "report", &hash, "comparison.json");
    let outputs = vec![text_path.clone(), json_path.clone()];
    if outputs_fresh(&outputs, &hash, force)? {
        eprintln!("report: up to date ({hash})");
        print!(
            "{}",
            fs::read_to_string(&text_path)?
                .lines()
                .skip(1)
                .collect::<Vec<_>>()
                .join("\n")
        );
        println!();
        return Ok(outputs);
    }

    let gcn_path = require(
        artifact_path(
            work_dir,
            "eval",
            &stage_hash(config, "eval"),
            "gcn_metrics.json",
        ),
        "eval",
    )?;
    let svm_path = require(
        artifact_path(
            work_dir,
            "baseline-svm",
            &stage_hash(config, "baseline-svm"),
            "svm_metrics.json",
        ),
        "baseline-svm",
    )?;
    let kde_path = require(
        artifact_path(
            work_dir,
            "baseline-kde",
            &stage_hash(config, "baseline-kde"),
            "kde_metrics.json",
        ),
        "baseline-kde",
    )?;

    let gcn_json = read_json(&gcn_path)?;
    check_hash(&gcn_json, &stage_hash(config, "eval"), &gcn_path)?;
    let svm_json = read_json(&svm_path)?;
    check_hash(&svm_json, &stage_hash(config, "baseline-svm"), &svm_path)?;
    let kde_json = read_json(&kde_path)?;
    check_hash(&kde_json, &stage_hash(config, "baseline-kde"), &kde_path)?;

    let parse = |v: &Value, what: &str| -> Result<MetricsReport> {
        serde_json::from_value(v["report"].clone())
            .map_err(|e| PipelineError::StaleArtifact(format!("cannot parse {what} metrics: {e}")))
    };
    let gcn_report = parse(&gcn_json, "gcn")?;
    let svm_report = parse(&svm_json, "svm")?;
    let kde_record: KdeBinaryRecord = serde_json::from_value(kde_json["record"].clone())
        .map_err(|e| PipelineError::StaleArtifact(format!("cannot parse kde record: {e}")))?;

    let comparison = comparison_report(&gcn_report, &svm_report, &kde_record)?;
    let mut text = format!("# config_hash={hash} tool_version={TOOL_VERSION}\n");
    text.push_str(&comparison.table);
    fs::write(&text_path, &text)?;
    write_json(
        &json_path,
        &json!({
            "config_hash": hash,
            "tool_version": TOOL_VERSION,
            "comparison": comparison.json,
        }),
    )?;
    print!("{}", comparison.table);
    Ok(outputs)
}
