//! Synthetic event generator: per-class Gaussian hotspot mixtures emitted
//! in the same CSV schema the ingest stage consumes, so every pipeline
//! stage can be exercised without the real export.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hotspot_core::geo::{BoundingBox, KM_PER_DEG_LAT};

use crate::config::{PipelineConfig, SyntheticConfig};
use crate::error::{PipelineError, Result};

fn validate(synth: &SyntheticConfig, bbox: &BoundingBox) -> Result<()> {
    if synth.classes.is_empty() {
        return Err(PipelineError::Config(
            "synthetic config needs at least one class".into(),
        ));
    }
    for class in &synth.classes {
        if class.centers.is_empty() {
            return Err(PipelineError::Config(format!(
                "synth class {} has no centers",
                class.name
            )));
        }
        for c in &class.centers {
            if c.weight <= 0.0 || c.sigma_km <= 0.0 {
                return Err(PipelineError::Config(format!(
                    "synth class {}: weights and sigmas must be positive",
                    class.name
                )));
            }
            if !bbox.contains(hotspot_core::geo::GeoPoint {
                lat: c.lat,
                lon: c.lon,
            }) {
                return Err(PipelineError::Config(format!(
                    "synth class {}: center ({}, {}) outside the bounding box",
                    class.name, c.lat, c.lon
                )));
            }
        }
    }
    Ok(())
}

/// Standard normal via Box-Muller.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Pick an index proportional to `weights`.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Generate the CSV at `path`. Deterministic per seed.
pub fn generate_csv(config: &PipelineConfig, path: &Path) -> Result<usize> {
    let synth = &config.synth;
    validate(synth, &config.bbox)?;

    let center_lat = 0.5 * (config.bbox.min_lat + config.bbox.max_lat);
    let km_per_deg_lon = KM_PER_DEG_LAT * center_lat.to_radians().cos();

    let class_weights: Vec<f64> = synth
        .classes
        .iter()
        .map(|c| c.centers.iter().map(|g| g.weight).sum())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(synth.seed);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "ID,Date,Primary Type,Description,Latitude,Longitude,Arrest,Beat,District,Ward,FBI Code"
    )?;

    for event_id in 0..synth.n_events {
        let class = &synth.classes[weighted_pick(&class_weights, &mut rng)];
        let center_weights: Vec<f64> = class.centers.iter().map(|c| c.weight).collect();
        let center = &class.centers[weighted_pick(&center_weights, &mut rng)];

        let dy_km = standard_normal(&mut rng) * center.sigma_km;
        let dx_km = standard_normal(&mut rng) * center.sigma_km;
        let lat = center.lat + dy_km / KM_PER_DEG_LAT;
        let lon = center.lon + dx_km / km_per_deg_lon;

        let month = rng.gen_range(1..=12u32);
        let day = rng.gen_range(1..=28u32);
        let hour = rng.gen_range(0..24u32);
        let minute = rng.gen_range(0..60u32);

        writeln!(
            out,
            "{},{:02}/{:02}/2023 {:02}:{:02}:00,{},SYNTHETIC,{},{},false,111,1,1,99",
            event_id + 1,
            month,
            day,
            hour,
            minute,
            class.name,
            lat,
            lon,
        )?;
    }
    out.flush()?;
    Ok(synth.n_events)
}
