//! Density files: one JSON header line, then `face,density` CSV rows.
//!
//! Values are cell averages of the density against the model area, faces in
//! row-major order followed by the special faces. When the header carries a
//! closed-form field the loader evaluates it instead of the samples.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thickthin::field::Field;
use thickthin::geometry::MetricModel;
use thickthin::surface::{DensitySource, Exterior, Grid, Involution, MeasuredSurface};

use crate::config::GeneratorSpec;

pub const MAGIC: &str = "# thickthin-density ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityHeader {
    pub schema: u32,
    pub model: MetricModel,
    pub genus: u32,
    pub grid: Grid,
    pub involution: Option<Involution>,
    pub exterior: Option<Exterior>,
    pub units: String,
    pub faces: usize,
    pub field: Option<Field>,
    pub generator: Option<GeneratorSpec>,
}

pub fn encode(surface: &MeasuredSurface, generator: Option<&GeneratorSpec>) -> Result<Vec<u8>> {
    let field = match &surface.density {
        DensitySource::Field { field } => Some(field.clone()),
        DensitySource::Sampled { .. } => None,
    };
    let header = DensityHeader {
        schema: 1,
        model: surface.model.clone(),
        genus: surface.genus,
        grid: surface.grid.clone(),
        involution: surface.involution,
        exterior: surface.exterior.clone(),
        units: "mass per unit model area".into(),
        faces: surface.num_faces(),
        field,
        generator: generator.cloned(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    out.push(b'\n');
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["face", "density"])?;
    for f in 0..surface.num_faces() {
        let a = surface.face_area(f);
        let v = if a > 0.0 { surface.face_mass(f) / a } else { 0.0 };
        w.write_record([f.to_string(), format!("{v:e}")])?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn decode(bytes: &[u8]) -> Result<(DensityHeader, Vec<f64>)> {
    let nl = bytes.iter().position(|&b| b == b'\n').context("density file has no header line")?;
    let line = std::str::from_utf8(&bytes[..nl]).context("density header is not UTF-8")?;
    let json = line.strip_prefix(MAGIC).context("density file does not start with the thickthin-density header")?;
    let header: DensityHeader = serde_json::from_str(json).context("malformed density header")?;
    if header.schema != 1 {
        bail!("density schema {} is not supported", header.schema);
    }
    let mut rdr = csv::Reader::from_reader(&bytes[nl + 1..]);
    let mut values = vec![f64::NAN; header.faces];
    for rec in rdr.records() {
        let rec = rec?;
        let f: usize = rec.get(0).context("missing face")?.trim().parse()?;
        let v: f64 = rec.get(1).context("missing density")?.trim().parse()?;
        if f >= header.faces {
            bail!("face {f} out of range");
        }
        values[f] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        bail!("density file does not cover every face");
    }
    Ok((header, values))
}

pub fn surface(header: &DensityHeader, values: Vec<f64>) -> Result<MeasuredSurface> {
    let density = match &header.field {
        Some(field) => DensitySource::Field { field: field.clone() },
        None => DensitySource::Sampled { values },
    };
    Ok(MeasuredSurface::new(
        header.model.clone(),
        header.genus,
        header.grid.clone(),
        density,
        header.involution,
        header.exterior.clone(),
    )?)
}

pub fn hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read(path: &Path) -> Result<(MeasuredSurface, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading density file {}", path.display()))?;
    let (header, values) = decode(&bytes)?;
    Ok((surface(&header, values)?, bytes))
}
