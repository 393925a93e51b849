//! Per-class probability surfaces and their GeoJSON / raster exports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::CellTable;
use crate::matrix::Matrix;

/// One class's predicted probability per occupied cell, aligned with the
/// cell table ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMapLayer {
    pub class_id: u16,
    pub class_name: String,
    pub values: Vec<f64>,
}

/// Split an n x C probability matrix into one layer per class; values are
/// taken as-is, no renormalization.
pub fn heatmap_layers(
    proba: &Matrix,
    cells: &CellTable,
    class_names: &[String],
) -> Result<Vec<HeatMapLayer>> {
    if proba.rows() != cells.cells.len() {
        return Err(Error::Domain(
            "probability rows do not match cell count".into(),
        ));
    }
    if proba.cols() != class_names.len() {
        return Err(Error::Domain(
            "probability columns do not match class count".into(),
        ));
    }
    Ok(class_names
        .iter()
        .enumerate()
        .map(|(c, name)| HeatMapLayer {
            class_id: c as u16,
            class_name: name.clone(),
            values: (0..proba.rows()).map(|i| proba.get(i, c)).collect(),
        })
        .collect())
}

#[derive(Serialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<Feature>,
}

#[derive(Serialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: Geometry,
    properties: Properties,
}

#[derive(Serialize)]
struct Geometry {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct Properties {
    row: u32,
    col: u32,
    class: String,
    probability: f64,
}

/// One closed counter-clockwise polygon per occupied cell, coordinates as
/// [lon, lat] per RFC 7946.
pub fn export_geojson(layer: &HeatMapLayer, cells: &CellTable) -> Result<String> {
    if layer.values.len() != cells.cells.len() {
        return Err(Error::Domain(
            "layer length does not match cell count".into(),
        ));
    }
    let features = cells
        .cells
        .iter()
        .zip(&layer.values)
        .map(|(cell, &p)| {
            let (south, north, west, east) = cells.grid.cell_bounds(cell.index);
            let ring = vec![
                [west, south],
                [east, south],
                [east, north],
                [west, north],
                [west, south],
            ];
            Feature {
                kind: "Feature",
                geometry: Geometry {
                    kind: "Polygon",
                    coordinates: vec![ring],
                },
                properties: Properties {
                    row: cell.index.row,
                    col: cell.index.col,
                    class: layer.class_name.clone(),
                    probability: p,
                },
            }
        })
        .collect();
    serde_json::to_string(&FeatureCollection {
        kind: "FeatureCollection",
        features,
    })
    .map_err(|e| Error::Artifact(format!("geojson serialization: {e}")))
}

const UNOCCUPIED_GRAY: [u8; 3] = [128, 128, 128];

/// Binary portable pixmap (P6) of the full grid: occupied cells on a linear
/// blue-to-red ramp, unoccupied cells neutral gray, row 0 at the bottom.
pub fn export_raster(layer: &HeatMapLayer, cells: &CellTable) -> Result<Vec<u8>> {
    if layer.values.len() != cells.cells.len() {
        return Err(Error::Domain(
            "layer length does not match cell count".into(),
        ));
    }
    let grid = &cells.grid;
    let (w, h) = (grid.n_cols as usize, grid.n_rows as usize);
    let mut pixels = vec![UNOCCUPIED_GRAY; w * h];
    for (cell, &p) in cells.cells.iter().zip(&layer.values) {
        let image_row = h - 1 - cell.index.row as usize; // north up
        let r = (p.clamp(0.0, 1.0) * 255.0).round() as u8;
        let b = ((1.0 - p.clamp(0.0, 1.0)) * 255.0).round() as u8;
        pixels[image_row * w + cell.index.col as usize] = [r, 0, b];
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in pixels {
        out.extend_from_slice(&px);
    }
    Ok(out)
}
