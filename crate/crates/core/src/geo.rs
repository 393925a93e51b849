//! Geodesic distance, grid discretization, and coordinate normalization.
//!
//! Everything stays in WGS84 degrees; distances are great-circle kilometers
//! on a sphere of mean radius 6371 km. No map projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometers per degree of latitude on the reference sphere.
pub const KM_PER_DEG_LAT: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// A point in WGS84 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Validated constructor: coordinates must be finite and on Earth.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if !p.is_valid() {
            return Err(Error::Domain(format!("invalid coordinates ({lat}, {lon})")));
        }
        Ok(p)
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat.abs() <= 90.0
            && self.lon.abs() <= 180.0
    }
}

/// An inclusive lat/lon rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, max_lat: f64, min_lon: f64, max_lon: f64) -> Result<Self> {
        if !(min_lat.is_finite()
            && max_lat.is_finite()
            && min_lon.is_finite()
            && max_lon.is_finite())
        {
            return Err(Error::Domain(
                "bounding box coordinates must be finite".into(),
            ));
        }
        if min_lat >= max_lat || min_lon >= max_lon {
            return Err(Error::Domain(format!(
                "bounding box min must be < max on both axes, got lat [{min_lat}, {max_lat}] lon [{min_lon}, {max_lon}]"
            )));
        }
        Ok(BoundingBox {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
        })
    }

    /// Inclusive on all four boundaries.
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat
            && p.lat <= self.max_lat
            && p.lon >= self.min_lon
            && p.lon <= self.max_lon
    }

    pub fn min_corner(&self) -> GeoPoint {
        GeoPoint {
            lat: self.min_lat,
            lon: self.min_lon,
        }
    }
}

/// Great-circle distance in kilometers (haversine formula).
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();

    let sin_dphi = (dphi / 2.0).sin();
    let sin_dlambda = (dlambda / 2.0).sin();
    let h = sin_dphi * sin_dphi + phi1.cos() * phi2.cos() * sin_dlambda * sin_dlambda;
    2.0 * EARTH_RADIUS_KM * h.min(1.0).sqrt().asin()
}

/// Zero-based grid cell coordinates, row 0 at the southern edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: u32,
    pub col: u32,
}

/// Discretization of a bounding box into fixed-size lat/lon cells.
///
/// Serialized alongside graph artifacts so downstream stages reproduce the
/// cell geometry exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub cell_lat_deg: f64,
    pub cell_lon_deg: f64,
    pub n_rows: u32,
    pub n_cols: u32,
}

/// Cell count = ceil(span / cell); a tiny relative slack keeps float noise
/// in the quotient from inventing an extra empty row or column.
fn cell_count(span: f64, cell: f64) -> u32 {
    let q = span / cell;
    ((q * (1.0 - 1e-12)).ceil() as u32).max(1)
}

impl GridSpec {
    pub fn from_bbox(bbox: BoundingBox, cell_lat_deg: f64, cell_lon_deg: f64) -> Result<Self> {
        if !(cell_lat_deg > 0.0 && cell_lon_deg > 0.0) {
            return Err(Error::Domain("cell sizes must be positive".into()));
        }
        Ok(GridSpec {
            bbox,
            cell_lat_deg,
            cell_lon_deg,
            n_rows: cell_count(bbox.max_lat - bbox.min_lat, cell_lat_deg),
            n_cols: cell_count(bbox.max_lon - bbox.min_lon, cell_lon_deg),
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.bbox.min_corner()
    }

    pub fn cell_count(&self) -> usize {
        self.n_rows as usize * self.n_cols as usize
    }

    /// Map an in-box point to its cell. Points exactly on the max boundary
    /// clamp to the last row/column.
    pub fn cell_index(&self, p: GeoPoint) -> Result<CellIndex> {
        if !self.bbox.contains(p) {
            return Err(Error::Domain(format!(
                "point ({}, {}) outside grid bounding box",
                p.lat, p.lon
            )));
        }
        let row = ((p.lat - self.bbox.min_lat) / self.cell_lat_deg).floor() as i64;
        let col = ((p.lon - self.bbox.min_lon) / self.cell_lon_deg).floor() as i64;
        Ok(CellIndex {
            row: row.clamp(0, self.n_rows as i64 - 1) as u32,
            col: col.clamp(0, self.n_cols as i64 - 1) as u32,
        })
    }

    /// Geographic center of a cell.
    pub fn cell_centroid(&self, c: CellIndex) -> Result<GeoPoint> {
        if c.row >= self.n_rows || c.col >= self.n_cols {
            return Err(Error::Domain(format!(
                "cell ({}, {}) outside grid of {}x{}",
                c.row, c.col, self.n_rows, self.n_cols
            )));
        }
        Ok(GeoPoint {
            lat: self.bbox.min_lat + (c.row as f64 + 0.5) * self.cell_lat_deg,
            lon: self.bbox.min_lon + (c.col as f64 + 0.5) * self.cell_lon_deg,
        })
    }

    /// Lat/lon rectangle of a cell as (south, north, west, east).
    pub fn cell_bounds(&self, c: CellIndex) -> (f64, f64, f64, f64) {
        let south = self.bbox.min_lat + c.row as f64 * self.cell_lat_deg;
        let west = self.bbox.min_lon + c.col as f64 * self.cell_lon_deg;
        (
            south,
            south + self.cell_lat_deg,
            west,
            west + self.cell_lon_deg,
        )
    }
}

/// Scale values to [0, 1] by (v - min) / (max - min).
///
/// A constant input maps to all zeros so outputs stay in range without a
/// division by zero.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Domain(
            "minmax_normalize requires at least one value".into(),
        ));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / span).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chicago_box() -> BoundingBox {
        BoundingBox::new(41.6, 42.1, -87.9, -87.5).unwrap()
    }

    fn default_grid() -> GridSpec {
        GridSpec::from_bbox(chicago_box(), 0.02, 0.02).unwrap()
    }

    /// Independent great-circle formula (Vincenty special case for a
    /// sphere), used only to cross-check the haversine implementation.
    fn great_circle_oracle_km(a: GeoPoint, b: GeoPoint) -> f64 {
        let phi1 = a.lat.to_radians();
        let phi2 = b.lat.to_radians();
        let dl = (b.lon - a.lon).to_radians();
        let num = ((phi2.cos() * dl.sin()).powi(2)
            + (phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dl.cos()).powi(2))
        .sqrt();
        let den = phi1.sin() * phi2.sin() + phi1.cos() * phi2.cos() * dl.cos();
        EARTH_RADIUS_KM * num.atan2(den)
    }

    #[test]
    fn haversine_identity_is_zero() {
        let p = GeoPoint {
            lat: 41.85,
            lon: -87.65,
        };
        assert_eq!(haversine_km(p, p), 0.0);
    }

    #[test]
    fn haversine_same_longitude_closed_form() {
        let a = GeoPoint {
            lat: 41.85,
            lon: -87.65,
        };
        let b = GeoPoint {
            lat: 41.87,
            lon: -87.65,
        };
        let expected = EARTH_RADIUS_KM * (0.02_f64).to_radians();
        assert!((haversine_km(a, b) - expected).abs() < 1e-9);
        assert!((haversine_km(a, b) - 2.2239).abs() < 1e-4);
    }

    #[test]
    fn haversine_matches_independent_oracle_across_box() {
        let a = GeoPoint {
            lat: 41.6,
            lon: -87.9,
        };
        let b = GeoPoint {
            lat: 42.1,
            lon: -87.5,
        };
        let d = haversine_km(a, b);
        let oracle = great_circle_oracle_km(a, b);
        assert!(
            (d - oracle).abs() < 1e-9,
            "haversine {d} vs oracle {oracle}"
        );
        assert!(
            d > 64.0 && d < 65.0,
            "box diagonal {d} outside expected range"
        );
    }

    #[test]
    fn grid_dimensions_for_default_box() {
        let g = default_grid();
        assert_eq!(g.n_rows, 25);
        assert_eq!(g.n_cols, 20);
        assert_eq!(g.cell_count(), 500);
    }

    #[test]
    fn cell_index_at_origin() {
        let g = default_grid();
        let c = g
            .cell_index(GeoPoint {
                lat: 41.6,
                lon: -87.9,
            })
            .unwrap();
        assert_eq!(c, CellIndex { row: 0, col: 0 });
    }

    #[test]
    fn cell_index_direct_arithmetic() {
        let g = default_grid();
        let c = g
            .cell_index(GeoPoint {
                lat: 41.6305,
                lon: -87.8449,
            })
            .unwrap();
        assert_eq!(c, CellIndex { row: 1, col: 2 });
    }

    #[test]
    fn cell_index_clamps_max_boundary() {
        let g = default_grid();
        let c = g
            .cell_index(GeoPoint {
                lat: 42.1,
                lon: -87.5,
            })
            .unwrap();
        assert_eq!(
            c,
            CellIndex {
                row: g.n_rows - 1,
                col: g.n_cols - 1
            }
        );
    }

    #[test]
    fn cell_index_rejects_outside_box() {
        let g = default_grid();
        assert!(g
            .cell_index(GeoPoint {
                lat: 40.0,
                lon: -87.65
            })
            .is_err());
    }

    #[test]
    fn centroid_direct_arithmetic() {
        let g = default_grid();
        let c0 = g.cell_centroid(CellIndex { row: 0, col: 0 }).unwrap();
        assert!((c0.lat - 41.61).abs() < 1e-12);
        assert!((c0.lon - -87.89).abs() < 1e-12);
        let c12 = g.cell_centroid(CellIndex { row: 1, col: 2 }).unwrap();
        assert!((c12.lat - 41.63).abs() < 1e-12);
        assert!((c12.lon - -87.85).abs() < 1e-12);
    }

    #[test]
    fn centroid_rejects_invalid_index() {
        let g = default_grid();
        assert!(g.cell_centroid(CellIndex { row: 25, col: 0 }).is_err());
    }

    #[test]
    fn centroid_round_trips_to_same_cell() {
        let g = default_grid();
        for row in 0..g.n_rows {
            for col in 0..g.n_cols {
                let c = CellIndex { row, col };
                let p = g.cell_centroid(c).unwrap();
                assert_eq!(g.cell_index(p).unwrap(), c);
            }
        }
    }

    #[test]
    fn minmax_basic() {
        let out = minmax_normalize(&[41.6, 41.85, 42.1]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.5).abs() < 1e-12);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn minmax_constant_input_maps_to_zero() {
        assert_eq!(
            minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn minmax_empty_is_domain_error() {
        assert!(minmax_normalize(&[]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_point() -> impl Strategy<Value = GeoPoint> {
            (40.0..44.0_f64, -90.0..-85.0_f64).prop_map(|(lat, lon)| GeoPoint { lat, lon })
        }

        proptest! {
            #[test]
            fn haversine_symmetric(a in arb_point(), b in arb_point()) {
                prop_assert!((haversine_km(a, b) - haversine_km(b, a)).abs() < 1e-12);
            }

            #[test]
            fn haversine_triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
                let ab = haversine_km(a, b);
                let bc = haversine_km(b, c);
                let ac = haversine_km(a, c);
                prop_assert!(ac <= ab + bc + 1e-9);
            }

            #[test]
            fn haversine_agrees_with_oracle(a in arb_point(), b in arb_point()) {
                let d = haversine_km(a, b);
                let o = super::great_circle_oracle_km(a, b);
                prop_assert!((d - o).abs() < 1e-9);
            }

            #[test]
            fn cell_index_in_bounds(lat in 41.6..42.1_f64, lon in -87.9..-87.5_f64) {
                let g = super::default_grid();
                let c = g.cell_index(GeoPoint { lat, lon }).unwrap();
                prop_assert!(c.row < g.n_rows && c.col < g.n_cols);
            }

            #[test]
            fn centroid_within_half_cell_diagonal(lat in 41.6..42.1_f64, lon in -87.9..-87.5_f64) {
                let g = super::default_grid();
                let p = GeoPoint { lat, lon };
                let centroid = g.cell_centroid(g.cell_index(p).unwrap()).unwrap();
                let half_diag_km = 0.5
                    * ((g.cell_lat_deg * KM_PER_DEG_LAT).powi(2)
                        + (g.cell_lon_deg * KM_PER_DEG_LAT).powi(2))
                    .sqrt();
                prop_assert!(haversine_km(p, centroid) <= half_diag_km + 1e-9);
            }

            #[test]
            fn minmax_output_in_unit_interval(values in proptest::collection::vec(-1e6..1e6_f64, 1..50)) {
                let out = minmax_normalize(&values).unwrap();
                prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
