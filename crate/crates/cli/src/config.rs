//! Flat key = value pipeline configuration.
//!
//! Every tunable has an explicit key so any default can be overridden from
//! the config file or `--set key=value`. Stage hashes cover exactly the
//! keys that influence a stage and its upstream, so changing a training
//! knob never invalidates the graph artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hotspot_core::artifact::fnv1a64;
use hotspot_core::gcn::GcnConfig;
use hotspot_core::geo::BoundingBox;
use hotspot_core::ingest::CsvSchema;

use crate::error::{PipelineError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCenter {
    pub lat: f64,
    pub lon: f64,
    pub sigma_km: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClass {
    pub name: String,
    pub centers: Vec<GaussianCenter>,
}

/// Synthetic event generator settings: per class, a mixture of 2-D
/// Gaussian hotspots.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_events: usize,
    pub classes: Vec<SynthClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub raw_csv: PathBuf,
    pub work_dir: PathBuf,
    pub bbox: BoundingBox,
    pub cell_lat_deg: f64,
    pub cell_lon_deg: f64,
    pub edge_threshold_km: f64,
    pub edge_epsilon: f64,
    pub min_class_count: u64,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub gcn: GcnConfig,
    pub schema: CsvSchema,
    pub kde_bandwidths_km: Vec<f64>,
    pub kde_cv_folds: usize,
    pub kde_subsample_cap: usize,
    pub kde_seed: u64,
    pub hotspot_quantile: f64,
    /// `None` selects 1 / feature_dim at fit time.
    pub svm_gamma: Option<f64>,
    pub svm_c: f64,
    pub svm_iterations: usize,
    pub svm_seed: u64,
    pub synth: SyntheticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            raw_csv: PathBuf::from("events.csv"),
            work_dir: PathBuf::from("work"),
            bbox: BoundingBox::new(41.6, 42.1, -87.9, -87.5).expect("default bbox"),
            cell_lat_deg: 0.02,
            cell_lon_deg: 0.02,
            edge_threshold_km: 3.0,
            edge_epsilon: 1e-6,
            min_class_count: 1000,
            split_ratios: (0.7, 0.1, 0.2),
            split_seed: 42,
            gcn: GcnConfig::default(),
            schema: CsvSchema::default(),
            kde_bandwidths_km: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            kde_cv_folds: 5,
            kde_subsample_cap: 100_000,
            kde_seed: 42,
            hotspot_quantile: 0.2,
            svm_gamma: None,
            svm_c: 1.0,
            svm_iterations: 50_000,
            svm_seed: 42,
            synth: SyntheticConfig {
                seed: 42,
                n_events: 10_000,
                classes: vec![
                    SynthClass {
                        name: "THEFT".into(),
                        centers: vec![GaussianCenter {
                            lat: 41.75,
                            lon: -87.8,
                            sigma_km: 2.0,
                            weight: 1.0,
                        }],
                    },
                    SynthClass {
                        name: "NARCOTICS".into(),
                        centers: vec![GaussianCenter {
                            lat: 41.95,
                            lon: -87.6,
                            sigma_km: 2.0,
                            weight: 1.0,
                        }],
                    },
                ],
            },
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: expected a number, got {value:?}")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: expected an integer, got {value:?}")))
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v)).collect()
}

fn parse_centers(key: &str, value: &str) -> Result<Vec<GaussianCenter>> {
    value
        .split('|')
        .map(|part| {
            let fields = parse_f64_list(key, part)?;
            if fields.len() != 4 {
                return Err(PipelineError::Config(format!(
                    "{key}: each center needs lat,lon,sigma_km,weight, got {part:?}"
                )));
            }
            Ok(GaussianCenter {
                lat: fields[0],
                lon: fields[1],
                sigma_km: fields[2],
                weight: fields[3],
            })
        })
        .collect()
}

impl PipelineConfig {
    /// Parse a config file of `key = value` lines ('#' starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = PipelineConfig::default();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Set one key; unknown keys are config errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(class_name) = key.strip_prefix("synth_class.") {
            let centers = parse_centers(key, value)?;
            let name = class_name.trim().to_string();
            if name.is_empty() {
                return Err(PipelineError::Config(
                    "synth_class. needs a class name".into(),
                ));
            }
            match self.synth.classes.iter_mut().find(|c| c.name == name) {
                Some(existing) => existing.centers = centers,
                None => self.synth.classes.push(SynthClass { name, centers }),
            }
            return Ok(());
        }
        match key {
            "raw_csv" => self.raw_csv = PathBuf::from(value),
            "work_dir" => self.work_dir = PathBuf::from(value),
            "bbox" => {
                let v = parse_f64_list(key, value)?;
                if v.len() != 4 {
                    return Err(PipelineError::Config(
                        "bbox needs min_lat,max_lat,min_lon,max_lon".into(),
                    ));
                }
                self.bbox = BoundingBox::new(v[0], v[1], v[2], v[3])
                    .map_err(|e| PipelineError::Config(format!("bbox: {e}")))?;
            }
            "cell_lat_deg" => self.cell_lat_deg = parse_f64(key, value)?,
            "cell_lon_deg" => self.cell_lon_deg = parse_f64(key, value)?,
            "edge_threshold_km" => self.edge_threshold_km = parse_f64(key, value)?,
            "edge_epsilon" => self.edge_epsilon = parse_f64(key, value)?,
            "min_class_count" => self.min_class_count = parse_u64(key, value)?,
            "split_ratios" => {
                let v = parse_f64_list(key, value)?;
                if v.len() != 3 {
                    return Err(PipelineError::Config(
                        "split_ratios needs train,val,test".into(),
                    ));
                }
                self.split_ratios = (v[0], v[1], v[2]);
            }
            "split_seed" => self.split_seed = parse_u64(key, value)?,
            "gcn_hidden" => {
                self.gcn.hidden_dims = value
                    .split(',')
                    .map(|v| parse_u64(key, v).map(|x| x as usize))
                    .collect::<Result<Vec<_>>>()?;
            }
            "gcn_dropout" => self.gcn.dropout = parse_f64(key, value)?,
            "gcn_learning_rate" => self.gcn.learning_rate = parse_f64(key, value)?,
            "gcn_weight_decay" => self.gcn.weight_decay = parse_f64(key, value)?,
            "gcn_max_epochs" => self.gcn.max_epochs = parse_u64(key, value)? as usize,
            "gcn_patience" => self.gcn.patience = parse_u64(key, value)? as usize,
            "gcn_seed" => self.gcn.seed = parse_u64(key, value)?,
            "csv_date" => self.schema.date = value.to_string(),
            "csv_primary_type" => self.schema.primary_type = value.to_string(),
            "csv_description" => self.schema.description = value.to_string(),
            "csv_latitude" => self.schema.latitude = value.to_string(),
            "csv_longitude" => self.schema.longitude = value.to_string(),
            "csv_arrest" => self.schema.arrest = value.to_string(),
            "csv_beat" => self.schema.beat = value.to_string(),
            "csv_district" => self.schema.district = value.to_string(),
            "csv_ward" => self.schema.ward = value.to_string(),
            "csv_fbi_code" => self.schema.fbi_code = value.to_string(),
            "timestamp_formats" => {
                self.schema.timestamp_formats = value.split('|').map(|s| s.to_string()).collect();
            }
            "kde_bandwidths_km" => self.kde_bandwidths_km = parse_f64_list(key, value)?,
            "kde_cv_folds" => self.kde_cv_folds = parse_u64(key, value)? as usize,
            "kde_subsample_cap" => self.kde_subsample_cap = parse_u64(key, value)? as usize,
            "kde_seed" => self.kde_seed = parse_u64(key, value)?,
            "hotspot_quantile" => self.hotspot_quantile = parse_f64(key, value)?,
            "svm_gamma" => {
                self.svm_gamma = if value.trim() == "auto" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                };
            }
            "svm_c" => self.svm_c = parse_f64(key, value)?,
            "svm_iterations" => self.svm_iterations = parse_u64(key, value)? as usize,
            "svm_seed" => self.svm_seed = parse_u64(key, value)?,
            "synth_seed" => self.synth.seed = parse_u64(key, value)?,
            "synth_events" => self.synth.n_events = parse_u64(key, value)? as usize,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Canonical key/value view, used for stage hashing.
    pub fn canonical_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let f = |v: f64| format!("{v}");
        m.insert("raw_csv".into(), self.raw_csv.display().to_string());
        m.insert(
            "bbox".into(),
            format!(
                "{},{},{},{}",
                f(self.bbox.min_lat),
                f(self.bbox.max_lat),
                f(self.bbox.min_lon),
                f(self.bbox.max_lon)
            ),
        );
        m.insert("cell_lat_deg".into(), f(self.cell_lat_deg));
        m.insert("cell_lon_deg".into(), f(self.cell_lon_deg));
        m.insert("edge_threshold_km".into(), f(self.edge_threshold_km));
        m.insert("edge_epsilon".into(), f(self.edge_epsilon));
        m.insert("min_class_count".into(), self.min_class_count.to_string());
        m.insert(
            "split_ratios".into(),
            format!(
                "{},{},{}",
                f(self.split_ratios.0),
                f(self.split_ratios.1),
                f(self.split_ratios.2)
            ),
        );
        m.insert("split_seed".into(), self.split_seed.to_string());
        m.insert(
            "gcn_hidden".into(),
            self.gcn
                .hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("gcn_dropout".into(), f(self.gcn.dropout));
        m.insert("gcn_learning_rate".into(), f(self.gcn.learning_rate));
        m.insert("gcn_weight_decay".into(), f(self.gcn.weight_decay));
        m.insert("gcn_max_epochs".into(), self.gcn.max_epochs.to_string());
        m.insert("gcn_patience".into(), self.gcn.patience.to_string());
        m.insert("gcn_seed".into(), self.gcn.seed.to_string());
        m.insert("csv_date".into(), self.schema.date.clone());
        m.insert("csv_primary_type".into(), self.schema.primary_type.clone());
        m.insert("csv_description".into(), self.schema.description.clone());
        m.insert("csv_latitude".into(), self.schema.latitude.clone());
        m.insert("csv_longitude".into(), self.schema.longitude.clone());
        m.insert("csv_arrest".into(), self.schema.arrest.clone());
        m.insert("csv_beat".into(), self.schema.beat.clone());
        m.insert("csv_district".into(), self.schema.district.clone());
        m.insert("csv_ward".into(), self.schema.ward.clone());
        m.insert("csv_fbi_code".into(), self.schema.fbi_code.clone());
        m.insert(
            "timestamp_formats".into(),
            self.schema.timestamp_formats.join("|"),
        );
        m.insert(
            "kde_bandwidths_km".into(),
            self.kde_bandwidths_km
                .iter()
                .map(|v| f(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("kde_cv_folds".into(), self.kde_cv_folds.to_string());
        m.insert(
            "kde_subsample_cap".into(),
            self.kde_subsample_cap.to_string(),
        );
        m.insert("kde_seed".into(), self.kde_seed.to_string());
        m.insert("hotspot_quantile".into(), f(self.hotspot_quantile));
        m.insert(
            "svm_gamma".into(),
            self.svm_gamma.map_or_else(|| "auto".to_string(), f),
        );
        m.insert("svm_c".into(), f(self.svm_c));
        m.insert("svm_iterations".into(), self.svm_iterations.to_string());
        m.insert("svm_seed".into(), self.svm_seed.to_string());
        m.insert("synth_seed".into(), self.synth.seed.to_string());
        m.insert("synth_events".into(), self.synth.n_events.to_string());
        for class in &self.synth.classes {
            let centers = class
                .centers
                .iter()
                .map(|c| {
                    format!(
                        "{},{},{},{}",
                        f(c.lat),
                        f(c.lon),
                        f(c.sigma_km),
                        f(c.weight)
                    )
                })
                .collect::<Vec<_>>()
                .join("|");
            m.insert(format!("synth_class.{}", class.name), centers);
        }
        m
    }

    /// Effective SVM kernel width: configured value or 1 / feature_dim.
    pub fn svm_gamma_for(&self, feature_dim: usize) -> f64 {
        self.svm_gamma.unwrap_or(1.0 / feature_dim as f64)
    }

    /// Pegasos regularization: 1 / (C * n_train).
    pub fn svm_lambda_for(&self, n_train: usize) -> f64 {
        1.0 / (self.svm_c * n_train.max(1) as f64)
    }
}

/// Which config keys feed a stage (including its upstream stages).
fn key_relevant(stage: &str, key: &str) -> bool {
    let ingest = |k: &str| {
        k == "raw_csv" || k == "bbox" || k.starts_with("csv_") || k == "timestamp_formats"
    };
    let graph = |k: &str| {
        ingest(k)
            || matches!(
                k,
                "cell_lat_deg"
                    | "cell_lon_deg"
                    | "edge_threshold_km"
                    | "edge_epsilon"
                    | "min_class_count"
                    | "split_ratios"
                    | "split_seed"
            )
    };
    let train = |k: &str| graph(k) || k.starts_with("gcn_");
    let kde = |k: &str| graph(k) || k.starts_with("kde_") || k == "hotspot_quantile";
    let svm = |k: &str| graph(k) || k.starts_with("svm_");
    match stage {
        "ingest" => ingest(key),
        "graph" => graph(key),
        "train" | "eval" | "heatmap" => train(key),
        "baseline-kde" => kde(key),
        "baseline-svm" => svm(key),
        "report" => train(key) || kde(key) || svm(key),
        _ => false,
    }
}

/// 12-hex-digit hash of the stage-relevant configuration.
pub fn stage_hash(config: &PipelineConfig, stage: &str) -> String {
    let mut text = String::new();
    for (k, v) in config.canonical_pairs() {
        if key_relevant(stage, &k) {
            text.push_str(&k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }
    }
    let h = fnv1a64(text.as_bytes());
    format!("{h:016x}")[..12].to_string()
}
