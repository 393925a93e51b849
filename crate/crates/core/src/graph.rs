//! Spatial graph over occupied grid cells: node aggregation, proximity
//! edges in CSR form, the symmetric renormalized adjacency used by the
//! GCN, and summary statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::{header_strings, header_usize, ArtifactReader, ArtifactWriter};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, CellIndex, GeoPoint, GridSpec};
use crate::ingest::CleanRecord;
use crate::matrix::Matrix;
use crate::spatial_index::KdTree;

/// One occupied grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub index: CellIndex,
    pub centroid: GeoPoint,
    pub crime_count: u32,
    /// (raw type id, count), ascending by type id; sums to `crime_count`.
    pub class_counts: Vec<(u16, u32)>,
}

/// All occupied cells, ordered by (row, col).
#[derive(Clone, Debug, PartialEq)]
pub struct CellTable {
    pub grid: GridSpec,
    pub cells: Vec<CellRecord>,
    /// Raw event-type names indexed by the ids in `class_counts`.
    pub type_names: Vec<String>,
}

/// Aggregate records into occupied cells.
pub fn build_nodes<'a>(
    records: impl IntoIterator<Item = &'a CleanRecord>,
    grid: &GridSpec,
    type_names: &[String],
) -> Result<CellTable> {
    let mut acc: BTreeMap<CellIndex, BTreeMap<u16, u32>> = BTreeMap::new();
    for rec in records {
        let cell = grid.cell_index(rec.point())?;
        *acc.entry(cell).or_default().entry(rec.type_id).or_insert(0) += 1;
    }
    let cells = acc
        .into_iter()
        .map(|(index, counts)| {
            let crime_count = counts.values().sum();
            Ok(CellRecord {
                index,
                centroid: grid.cell_centroid(index)?,
                crime_count,
                class_counts: counts.into_iter().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellTable {
        grid: *grid,
        cells,
        type_names: type_names.to_vec(),
    })
}

/// Undirected weighted proximity graph in CSR form. Row i lists the
/// neighbors of cell i sorted by id; weights are 1/(distance + epsilon).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGraph {
    pub n: usize,
    pub row_offsets: Vec<u32>,
    pub neighbors: Vec<u32>,
    pub weights: Vec<f64>,
    pub threshold_km: f64,
    pub epsilon: f64,
}

impl SpatialGraph {
    pub fn undirected_edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors_of(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_offsets[i] as usize;
        let hi = self.row_offsets[i + 1] as usize;
        (&self.neighbors[lo..hi], &self.weights[lo..hi])
    }

    pub fn degree(&self, i: usize) -> usize {
        (self.row_offsets[i + 1] - self.row_offsets[i]) as usize
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (nbrs, _) = self.neighbors_of(i);
        nbrs.binary_search(&(j as u32)).is_ok()
    }
}

/// Connect every pair of occupied cells whose centroids lie within
/// `threshold_km` (inclusive); candidate pairs come from the KD-tree.
pub fn build_edges(cells: &CellTable, threshold_km: f64, epsilon: f64) -> Result<SpatialGraph> {
    if threshold_km <= 0.0 {
        return Err(Error::Domain("edge threshold must be positive".into()));
    }
    let n = cells.cells.len();
    let centroids: Vec<GeoPoint> = cells.cells.iter().map(|c| c.centroid).collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    row_offsets.push(0u32);

    if n > 0 {
        let tree = KdTree::build(&centroids)?;
        for (i, &centroid) in centroids.iter().enumerate() {
            for j in tree.radius_query(centroid, threshold_km) {
                if j as usize == i {
                    continue;
                }
                let d = haversine_km(centroid, centroids[j as usize]);
                neighbors.push(j);
                weights.push(1.0 / (d + epsilon));
            }
            row_offsets.push(neighbors.len() as u32);
        }
    }

    Ok(SpatialGraph {
        n,
        row_offsets,
        neighbors,
        weights,
        threshold_km,
        epsilon,
    })
}

/// Symmetric renormalized propagation operator: unit self-loops are added
/// to the weighted adjacency and both sides are scaled by the inverse
/// square root of the resulting degree.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub n: usize,
    pub row_offsets: Vec<u32>,
    pub neighbors: Vec<u32>,
    pub values: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Identity operator; turns the GCN into a plain per-node MLP.
    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency {
            n,
            row_offsets: (0..=n as u32).collect(),
            neighbors: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_offsets[i] as usize;
        let hi = self.row_offsets[i + 1] as usize;
        (&self.neighbors[lo..hi], &self.values[lo..hi])
    }

    /// Sparse-dense product `self * x` with a fixed reduction order.
    pub fn mul_dense(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.n, x.rows(), "adjacency/matrix dimension mismatch");
        let cols = x.cols();
        let mut out = Matrix::zeros(self.n, cols);
        for i in 0..self.n {
            let (nbrs, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in nbrs.iter().zip(vals) {
                let x_row = x.row(j as usize);
                for (o, xv) in out_row.iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len());
        (0..self.n)
            .map(|i| {
                let (nbrs, vals) = self.row(i);
                nbrs.iter()
                    .zip(vals)
                    .map(|(&j, &v)| v * x[j as usize])
                    .sum()
            })
            .collect()
    }
}

/// Compute D^(-1/2) (A + I) D^(-1/2) where D is the degree of A + I.
pub fn normalize_adjacency(g: &SpatialGraph) -> NormalizedAdjacency {
    let n = g.n;
    let mut degree = vec![1.0f64; n]; // self-loop weight 1
    for i in 0..n {
        let (_, ws) = g.neighbors_of(i);
        degree[i] += ws.iter().sum::<f64>();
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0u32);
    for i in 0..n {
        let (nbrs, ws) = g.neighbors_of(i);
        // Merge the self-loop into the sorted neighbor list.
        let mut self_written = false;
        for (&j, &w) in nbrs.iter().zip(ws) {
            if !self_written && (j as usize) > i {
                neighbors.push(i as u32);
                values.push(inv_sqrt[i] * inv_sqrt[i]);
                self_written = true;
            }
            neighbors.push(j);
            values.push(inv_sqrt[i] * w * inv_sqrt[j as usize]);
        }
        if !self_written {
            neighbors.push(i as u32);
            values.push(inv_sqrt[i] * inv_sqrt[i]);
        }
        row_offsets.push(neighbors.len() as u32);
    }
    NormalizedAdjacency {
        n,
        row_offsets,
        neighbors,
        values,
    }
}

/// Structural summary of the undirected graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub undirected_edges: usize,
    pub density: f64,
    pub average_degree: f64,
    pub average_clustering: f64,
}

/// Counts, density, mean degree, and the mean local clustering coefficient
/// of the unweighted skeleton (0 for nodes of degree < 2).
pub fn graph_stats(g: &SpatialGraph) -> GraphStats {
    let n = g.n;
    let e = g.undirected_edge_count();
    let density = if n >= 2 {
        2.0 * e as f64 / (n as f64 * (n as f64 - 1.0))
    } else {
        0.0
    };
    let average_degree = if n > 0 {
        2.0 * e as f64 / n as f64
    } else {
        0.0
    };

    let mut clustering_sum = 0.0;
    for i in 0..n {
        let (nbrs, _) = g.neighbors_of(i);
        let deg = nbrs.len();
        if deg < 2 {
            continue;
        }
        let mut closed = 0usize;
        for (a_idx, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[a_idx + 1..] {
                if g.has_edge(a as usize, b as usize) {
                    closed += 1;
                }
            }
        }
        clustering_sum += closed as f64 / (deg * (deg - 1) / 2) as f64;
    }
    let average_clustering = if n > 0 {
        clustering_sum / n as f64
    } else {
        0.0
    };

    GraphStats {
        nodes: n,
        undirected_edges: e,
        density,
        average_degree,
        average_clustering,
    }
}

/// Write cells + raw CSR + normalized CSR into one artifact file.
pub fn save_graph(
    path: &Path,
    cells: &CellTable,
    graph: &SpatialGraph,
    adj: &NormalizedAdjacency,
    mut meta: Value,
) -> Result<()> {
    let n = cells.cells.len();
    let class_entries: usize = cells.cells.iter().map(|c| c.class_counts.len()).sum();
    meta["grid"] = serde_json::to_value(cells.grid).map_err(|e| Error::Artifact(e.to_string()))?;
    meta["type_names"] = Value::from(cells.type_names.clone());
    meta["n"] = Value::from(n as u64);
    meta["class_entries"] = Value::from(class_entries as u64);
    meta["nnz"] = Value::from(graph.neighbors.len() as u64);
    meta["nnz_normalized"] = Value::from(adj.neighbors.len() as u64);
    meta["threshold_km"] = Value::from(graph.threshold_km);
    meta["epsilon"] = Value::from(graph.epsilon);

    let mut w = ArtifactWriter::create(path, "graph", meta)?;
    let rows: Vec<u32> = cells.cells.iter().map(|c| c.index.row).collect();
    let cols: Vec<u32> = cells.cells.iter().map(|c| c.index.col).collect();
    let counts: Vec<u32> = cells.cells.iter().map(|c| c.crime_count).collect();
    w.write_u32s(&rows)?;
    w.write_u32s(&cols)?;
    w.write_u32s(&counts)?;

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0u32);
    let mut class_ids = Vec::with_capacity(class_entries);
    let mut class_counts = Vec::with_capacity(class_entries);
    for c in &cells.cells {
        for &(id, cnt) in &c.class_counts {
            class_ids.push(id);
            class_counts.push(cnt);
        }
        offsets.push(class_ids.len() as u32);
    }
    w.write_u32s(&offsets)?;
    w.write_u16s(&class_ids)?;
    w.write_u32s(&class_counts)?;

    w.write_u32s(&graph.row_offsets)?;
    w.write_u32s(&graph.neighbors)?;
    w.write_f64s(&graph.weights)?;

    w.write_u32s(&adj.row_offsets)?;
    w.write_u32s(&adj.neighbors)?;
    w.write_f64s(&adj.values)?;
    w.finish()
}

pub fn load_graph(path: &Path) -> Result<(CellTable, SpatialGraph, NormalizedAdjacency, Value)> {
    let mut r = ArtifactReader::open(path, "graph")?;
    let grid: GridSpec = serde_json::from_value(r.header["grid"].clone())
        .map_err(|e| Error::Artifact(format!("bad grid spec in graph artifact: {e}")))?;
    let type_names = header_strings(&r.header, "type_names")?;
    let n = header_usize(&r.header, "n")?;
    let class_entries = header_usize(&r.header, "class_entries")?;
    let nnz = header_usize(&r.header, "nnz")?;
    let nnz_norm = header_usize(&r.header, "nnz_normalized")?;
    let threshold_km = r.header["threshold_km"].as_f64().unwrap_or(0.0);
    let epsilon = r.header["epsilon"].as_f64().unwrap_or(0.0);

    let rows = r.read_u32s(n)?;
    let cols = r.read_u32s(n)?;
    let counts = r.read_u32s(n)?;
    let class_offsets = r.read_u32s(n + 1)?;
    let class_ids = r.read_u16s(class_entries)?;
    let class_counts = r.read_u32s(class_entries)?;

    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let index = CellIndex {
            row: rows[i],
            col: cols[i],
        };
        let lo = class_offsets[i] as usize;
        let hi = class_offsets[i + 1] as usize;
        cells.push(CellRecord {
            index,
            centroid: grid.cell_centroid(index)?,
            crime_count: counts[i],
            class_counts: class_ids[lo..hi]
                .iter()
                .cloned()
                .zip(class_counts[lo..hi].iter().cloned())
                .collect(),
        });
    }
    let table = CellTable {
        grid,
        cells,
        type_names,
    };

    let graph = SpatialGraph {
        n,
        row_offsets: r.read_u32s(n + 1)?,
        neighbors: r.read_u32s(nnz)?,
        weights: r.read_f64s(nnz)?,
        threshold_km,
        epsilon,
    };
    let adj = NormalizedAdjacency {
        n,
        row_offsets: r.read_u32s(n + 1)?,
        neighbors: r.read_u32s(nnz_norm)?,
        values: r.read_f64s(nnz_norm)?,
    };
    let header = r.header.clone();
    Ok((table, graph, adj, header))
}
