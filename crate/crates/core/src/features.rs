//! Per-node features, class labels with rare-class consolidation, and
//! stratified train/validation/test masks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::artifact::{header_strings, header_usize, ArtifactReader, ArtifactWriter};
use crate::error::{Error, Result};
use crate::geo::minmax_normalize;
use crate::graph::CellTable;
use crate::matrix::Matrix;

pub const OTHER_CLASS: &str = "OTHER";

/// Mapping from raw event-type ids to dense class ids.
///
/// Class ids are assigned by descending city-wide count (ties by name) and
/// the consolidated "OTHER" class, when present, always comes last.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub class_names: Vec<String>,
    /// Indexed by raw type id.
    pub raw_to_class: Vec<u16>,
    pub min_count: u64,
}

impl LabelMap {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_of(&self, raw_type: u16) -> u16 {
        self.raw_to_class[raw_type as usize]
    }
}

/// Group raw types with fewer than `min_count` instances into "OTHER".
pub fn consolidate_rare(type_names: &[String], counts: &[u64], min_count: u64) -> Result<LabelMap> {
    if type_names.is_empty() || type_names.len() != counts.len() {
        return Err(Error::Domain(
            "consolidate_rare requires matching, non-empty names and counts".into(),
        ));
    }
    let mut kept: Vec<(usize, u64)> = Vec::new();
    let mut any_rare = false;
    for (i, &c) in counts.iter().enumerate() {
        if c < min_count {
            any_rare = true;
        } else {
            kept.push((i, c));
        }
    }
    kept.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| type_names[a.0].cmp(&type_names[b.0]))
    });

    let mut class_names: Vec<String> = kept.iter().map(|&(i, _)| type_names[i].clone()).collect();
    let other_id = class_names.len() as u16;
    if any_rare {
        class_names.push(OTHER_CLASS.to_string());
    }

    let mut raw_to_class = vec![other_id; type_names.len()];
    for (class_id, &(raw_id, _)) in kept.iter().enumerate() {
        raw_to_class[raw_id] = class_id as u16;
    }
    Ok(LabelMap {
        class_names,
        raw_to_class,
        min_count,
    })
}

/// Boolean train/validation/test partition over nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn count(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }
}

/// Node features, labels, and (optionally) split masks.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDataset {
    /// n x 3: normalized latitude, normalized longitude, z-scored count.
    pub features: Matrix,
    pub labels: Vec<u16>,
    pub class_names: Vec<String>,
    pub masks: Option<SplitMasks>,
}

impl NodeDataset {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn masks(&self) -> Result<&SplitMasks> {
        self.masks
            .as_ref()
            .ok_or_else(|| Error::Domain("dataset masks not set; run the split first".into()))
    }
}

/// Population z-score; a constant column maps to all zeros.
fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Build features and labels from occupied cells.
///
/// The node label is the cell's modal class after consolidation; ties break
/// toward the lower class id, i.e. the globally more frequent class.
pub fn build_dataset(cells: &CellTable, labels: &LabelMap) -> Result<NodeDataset> {
    if cells.cells.is_empty() {
        return Err(Error::Domain(
            "cannot build a dataset from an empty cell table".into(),
        ));
    }
    let n = cells.cells.len();
    let lats: Vec<f64> = cells.cells.iter().map(|c| c.centroid.lat).collect();
    let lons: Vec<f64> = cells.cells.iter().map(|c| c.centroid.lon).collect();
    let counts: Vec<f64> = cells.cells.iter().map(|c| c.crime_count as f64).collect();
    let norm_lat = minmax_normalize(&lats)?;
    let norm_lon = minmax_normalize(&lons)?;
    let z_counts = zscore(&counts);

    let mut features = Matrix::zeros(n, 3);
    let mut node_labels = Vec::with_capacity(n);
    for (i, cell) in cells.cells.iter().enumerate() {
        features.set(i, 0, norm_lat[i]);
        features.set(i, 1, norm_lon[i]);
        features.set(i, 2, z_counts[i]);

        let mut per_class = vec![0u32; labels.n_classes()];
        for &(raw, cnt) in &cell.class_counts {
            per_class[labels.class_of(raw) as usize] += cnt;
        }
        let best = per_class
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(id, _)| id as u16)
            .unwrap_or(0);
        node_labels.push(best);
    }

    Ok(NodeDataset {
        features,
        labels: node_labels,
        class_names: labels.class_names.clone(),
        masks: None,
    })
}

/// Stratified split: within each class, nodes are shuffled by a seeded
/// generator and assigned to train/val/test by largest-remainder rounding;
/// every class with at least one node contributes at least one to train.
pub fn stratified_split(
    labels: &[u16],
    n_classes: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitMasks> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 {
        return Err(Error::Domain("split ratios must be positive".into()));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let n = labels.len();
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for class in 0..n_classes as u16 {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), [rt, rv, rs]);
        let (n_train, n_val, _) = (counts[0], counts[1], counts[2]);
        for (pos, &node) in members.iter().enumerate() {
            if pos < n_train {
                masks.train[node] = true;
            } else if pos < n_train + n_val {
                masks.val[node] = true;
            } else {
                masks.test[node] = true;
            }
        }
    }
    Ok(masks)
}

/// Split `total` into three integer parts proportional to `ratios` using
/// largest-remainder rounding (ties toward the earlier part); the first
/// part is forced to at least 1 when `total` >= 1.
fn largest_remainder(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (ideal[b] - counts[b] as f64)
            .partial_cmp(&(ideal[a] - counts[a] as f64))
            .unwrap()
            .then(a.cmp(&b))
    });
    for k in 0..(total - assigned) {
        counts[order[k % 3]] += 1;
    }
    if total >= 1 && counts[0] == 0 {
        let donor = if counts[2] >= counts[1] { 2 } else { 1 };
        counts[donor] -= 1;
        counts[0] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Persist a dataset (features, labels, masks) as JSON header + binary payload.
pub fn save_dataset(path: &Path, ds: &NodeDataset, mut meta: Value) -> Result<()> {
    let masks = ds.masks()?;
    meta["n"] = Value::from(ds.n_nodes() as u64);
    meta["feature_dim"] = Value::from(ds.features.cols() as u64);
    meta["class_names"] = Value::from(ds.class_names.clone());
    let mut w = ArtifactWriter::create(path, "dataset", meta)?;
    w.write_f64s(ds.features.data())?;
    w.write_u16s(&ds.labels)?;
    let mask_bytes: Vec<u8> = (0..ds.n_nodes())
        .map(|i| {
            if masks.train[i] {
                0u8
            } else if masks.val[i] {
                1
            } else {
                2
            }
        })
        .collect();
    w.write_bytes(&mask_bytes)?;
    w.finish()
}

pub fn load_dataset(path: &Path) -> Result<(NodeDataset, Value)> {
    let mut r = ArtifactReader::open(path, "dataset")?;
    let n = header_usize(&r.header, "n")?;
    let dim = header_usize(&r.header, "feature_dim")?;
    let class_names = header_strings(&r.header, "class_names")?;
    let features = Matrix::from_vec(n, dim, r.read_f64s(n * dim)?);
    let labels = r.read_u16s(n)?;
    let mask_bytes = r.read_bytes(n)?;
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (i, &b) in mask_bytes.iter().enumerate() {
        match b {
            0 => masks.train[i] = true,
            1 => masks.val[i] = true,
            2 => masks.test[i] = true,
            other => return Err(Error::Artifact(format!("invalid mask byte {other}"))),
        }
    }
    let header = r.header.clone();
    Ok((
        NodeDataset {
            features,
            labels,
            class_names,
            masks: Some(masks),
        },
        header,
    ))
}
