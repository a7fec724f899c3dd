//! CSV plot data.

use std::path::Path;

use anyhow::Result;
use thickthin::decomposer::Prepared;
use thickthin::surface::MeasuredSurface;
use thickthin::verifier::AdaptednessReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn decay_profiles(path: &Path, report: &AdaptednessReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["thin", "x", "sup_density", "bound"])?;
    for t in &report.thin.rows {
        for r in &t.fit.rows {
            w.write_record([t.index.to_string(), format!("{:e}", r.x), format!("{:e}", r.sup_density), format!("{:e}", r.bound)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn vertex_margins(path: &Path, report: &AdaptednessReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "vertex",
        "genus",
        "boundaries",
        "internal",
        "mass",
        "diameter",
        "scale",
        "load",
        "sup_density",
        "min_injectivity",
        "min_boundary_length",
        "min_boundary_separation",
        "margin_density",
        "margin_injectivity",
        "margin_length",
        "margin_separation",
    ])?;
    for (r, m) in report.thick.iter().zip(&report.margins) {
        w.write_record([
            r.vertex.to_string(),
            r.genus.to_string(),
            r.boundaries.to_string(),
            r.internal.to_string(),
            format!("{:e}", r.mass),
            format!("{:e}", r.diameter),
            format!("{:e}", r.scale),
            format!("{:e}", r.load),
            format!("{:e}", r.sup_density),
            opt(r.min_injectivity),
            opt(r.min_boundary_length),
            opt(r.min_boundary_separation),
            format!("{:e}", m.margins.density),
            opt(m.margins.injectivity),
            opt(m.margins.length),
            opt(m.margins.separation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Boundary circles of the thin annuli as closed polylines in chart coordinates.
pub fn boundaries(path: &Path, prep: &Prepared, report: &AdaptednessReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["thin", "end", "k", "s", "theta"])?;
    for h in &report.graph.half_edges {
        let pts = h.circle.points(prep, 128);
        for (k, p) in pts.iter().chain(pts.first()).enumerate() {
            let end = format!("{:?}", h.end).to_lowercase();
            w.write_record([h.thin.to_string(), end, k.to_string(), format!("{:e}", p.s), format!("{:e}", p.theta)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn density_heatmap(path: &Path, surface: &MeasuredSurface) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "s", "theta", "density"])?;
    let g = &surface.grid;
    for f in 0..surface.num_cells() {
        let c = surface.face_center(f);
        let a = surface.face_area(f);
        let v = if a > 0.0 { surface.face_mass(f) / a } else { 0.0 };
        w.write_record([(f / g.cols).to_string(), (f % g.cols).to_string(), format!("{:e}", c.s), format!("{:e}", c.theta), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
