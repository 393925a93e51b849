//! Hyperparameter sweep over {hidden width x depth x dropout x learning
//! rate}, emitting one CSV row per configuration with macro-F1 on the test
//! mask, training time, and parameter count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hotspot_core::features::load_dataset;
use hotspot_core::gcn::{self, predict_proba, predictions_from_proba};
use hotspot_core::graph::load_graph;
use hotspot_core::metrics::compute_metrics;

use crate::config::{stage_hash, PipelineConfig, TOOL_VERSION};
use crate::error::{PipelineError, Result};

#[derive(Clone, Debug)]
pub struct AblateGrid {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

impl Default for AblateGrid {
    fn default() -> Self {
        AblateGrid {
            hidden: vec![64, 128, 256],
            layers: vec![2, 3],
            dropout: vec![0.3, 0.5],
            learning_rate: vec![0.01, 0.001],
        }
    }
}

/// Sweep the grid against the existing graph artifacts.
pub fn run_ablate(
    config: &PipelineConfig,
    work_dir: &Path,
    grid: &AblateGrid,
    out: Option<PathBuf>,
) -> Result<PathBuf> {
    if grid.layers.iter().any(|&l| l < 2) {
        return Err(PipelineError::Config(
            "ablate: layer counts must be at least 2".into(),
        ));
    }
    let h_graph = stage_hash(config, "graph");
    let graph_path = work_dir.join(format!("graph-{h_graph}.graph.bin"));
    let dataset_path = work_dir.join(format!("graph-{h_graph}.dataset.bin"));
    if !graph_path.exists() || !dataset_path.exists() {
        return Err(PipelineError::MissingArtifact {
            stage: "graph",
            path: graph_path,
        });
    }
    let (_, _, adj, _) = load_graph(&graph_path)?;
    let (dataset, _) = load_dataset(&dataset_path)?;
    let masks = dataset.masks()?;

    let out_path = out.unwrap_or_else(|| work_dir.join(format!("ablate-{h_graph}.csv")));
    let mut csv = format!("# config_hash={h_graph} tool_version={TOOL_VERSION}\n");
    csv.push_str("hidden_dim,layers,dropout,learning_rate,macro_f1,train_seconds,parameters\n");

    for &hidden in &grid.hidden {
        for &layers in &grid.layers {
            for &dropout in &grid.dropout {
                for &lr in &grid.learning_rate {
                    let mut gcn_config = config.gcn.clone();
                    gcn_config.hidden_dims = vec![hidden; layers - 1];
                    gcn_config.dropout = dropout;
                    gcn_config.learning_rate = lr;

                    let started = Instant::now();
                    let (params, _) = gcn::train(&dataset, &adj, &gcn_config)?;
                    let secs = started.elapsed().as_secs_f64();
                    let proba = predict_proba(&params, &adj, &dataset.features)?;
                    let preds = predictions_from_proba(&proba);
                    let report = compute_metrics(
                        &preds,
                        &dataset.labels,
                        &masks.test,
                        &dataset.class_names,
                        secs,
                    )?;

                    csv.push_str(&format!(
                        "{hidden},{layers},{dropout},{lr},{:.4},{:.2},{}\n",
                        report.macro_f1,
                        secs,
                        params.parameter_count()
                    ));
                    eprintln!(
                        "ablate: hidden={hidden} layers={layers} dropout={dropout} lr={lr} -> macro F1 {:.4} ({:.1}s)",
                        report.macro_f1, secs
                    );
                }
            }
        }
    }
    fs::write(&out_path, csv)?;
    Ok(out_path)
}
