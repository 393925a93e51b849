//! Classification metrics and the model-comparison report.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::fnv1a64;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Metrics over the masked nodes. `confusion[i][j]` counts true class i
/// predicted as class j; macro-F1 averages classes with support > 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub wall_time_seconds: f64,
    /// Fingerprint of the evaluation mask; reports built on different masks
    /// must never be compared.
    pub mask_hash: String,
}

/// Hash a boolean mask for the comparison guard.
pub fn mask_fingerprint(mask: &[bool]) -> String {
    let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
    format!("{:016x}", fnv1a64(&bytes))
}

pub fn compute_metrics(
    predictions: &[u16],
    labels: &[u16],
    mask: &[bool],
    class_names: &[String],
    wall_time_seconds: f64,
) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || predictions.len() != mask.len() {
        return Err(Error::Domain(
            "predictions, labels, and mask lengths disagree".into(),
        ));
    }
    let c = class_names.len();
    let mut confusion = vec![vec![0u64; c]; c];
    let mut total = 0u64;
    for i in 0..predictions.len() {
        if !mask[i] {
            continue;
        }
        let (t, p) = (labels[i] as usize, predictions[i] as usize);
        if t >= c || p >= c {
            return Err(Error::Domain(format!("class id out of range at node {i}")));
        }
        confusion[t][p] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Domain(
            "metrics need at least one masked node".into(),
        ));
    }

    let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
    let accuracy = trace as f64 / total as f64;

    let mut per_class = Vec::with_capacity(c);
    let mut macro_sum = 0.0;
    let mut macro_n = 0u64;
    let mut weighted_sum = 0.0;
    for k in 0..c {
        let support: u64 = confusion[k].iter().sum();
        let predicted: u64 = (0..c).map(|i| confusion[i][k]).sum();
        let tp = confusion[k][k];
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            macro_sum += f1;
            macro_n += 1;
            weighted_sum += support as f64 * f1;
        }
        per_class.push(ClassMetrics {
            class: class_names[k].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }

    Ok(MetricsReport {
        accuracy,
        macro_f1: if macro_n > 0 {
            macro_sum / macro_n as f64
        } else {
            0.0
        },
        weighted_f1: weighted_sum / total as f64,
        per_class,
        confusion,
        wall_time_seconds,
        mask_hash: mask_fingerprint(mask),
    })
}

/// KDE's binary hotspot result for the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeBinaryRecord {
    pub accuracy: f64,
    pub hotspot_quantile: f64,
    pub bandwidth_km: f64,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub table: String,
    pub json: Value,
}

/// Aligned text table plus the same numbers as JSON. The GCN and SVM rows
/// must come from the identical test mask.
pub fn comparison_report(
    gcn: &MetricsReport,
    svm: &MetricsReport,
    kde: &KdeBinaryRecord,
) -> Result<ComparisonReport> {
    if gcn.mask_hash != svm.mask_hash {
        return Err(Error::Domain(
            "comparison invalid: GCN and SVM metrics were computed on different test masks".into(),
        ));
    }
    let row = |name: &str, acc: f64, f1: Option<f64>, secs: f64| {
        let f1_text = f1.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        format!("{name:<12} {:>9.4} {:>9} {:>12.2}\n", acc, f1_text, secs)
    };
    let mut table = String::new();
    table.push_str(&format!(
        "{:<12} {:>9} {:>9} {:>12}\n",
        "method", "accuracy", "macro_f1", "seconds"
    ));
    table.push_str(&row(
        "gcn",
        gcn.accuracy,
        Some(gcn.macro_f1),
        gcn.wall_time_seconds,
    ));
    table.push_str(&row(
        "svm",
        svm.accuracy,
        Some(svm.macro_f1),
        svm.wall_time_seconds,
    ));
    table.push_str(&row("kde", kde.accuracy, None, kde.wall_time_seconds));

    let json = serde_json::json!({
        "gcn": {"accuracy": gcn.accuracy, "macro_f1": gcn.macro_f1, "wall_time_seconds": gcn.wall_time_seconds},
        "svm": {"accuracy": svm.accuracy, "macro_f1": svm.macro_f1, "wall_time_seconds": svm.wall_time_seconds},
        "kde": {"accuracy": kde.accuracy, "hotspot_quantile": kde.hotspot_quantile,
                 "bandwidth_km": kde.bandwidth_km, "wall_time_seconds": kde.wall_time_seconds},
    });
    Ok(ComparisonReport { table, json })
}
