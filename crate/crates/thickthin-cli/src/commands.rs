//! Command implementations shared by the binary and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use thickthin::axioms::{check_cylinder_inequality, check_gradient_inequality, AxiomReport, ConstantsBundle, SamplePlan};
use thickthin::decomposer::{build_decomposition, prepare, BubbleDecomposition, Prepared};
use thickthin::surface::MeasuredSurface;
use thickthin::tolerances::GENERATOR_MASS_REL;
use thickthin::verifier::{prepare_for, verify_prepared, AdaptednessReport};

use crate::config::{ConstantsConfig, RunConfig};
use crate::{density, export};

pub const EXIT_OK: i32 = 0;
pub const EXIT_AXIOMS: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

/// A loaded configuration with its resolution context.
#[derive(Clone, Debug)]
pub struct Session {
    pub config: RunConfig,
    /// Directory relative density paths resolve against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub force: bool,
}

impl Session {
    pub fn new(config: RunConfig, base: PathBuf, out: Option<PathBuf>, force: bool) -> Session {
        let out = out.or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Session { config, base, out, force }
    }

    /// The surface and the bytes of its density file.
    pub fn surface(&self) -> Result<(MeasuredSurface, Vec<u8>)> {
        let sc = &self.config.surface;
        match (&sc.generator, &sc.density) {
            (_, Some(path)) => density::read(&self.base.join(path)),
            (Some(g), None) => {
                let s = g.build(sc.grid.as_ref())?;
                let bytes = density::encode(&s, Some(g))?;
                Ok((s, bytes))
            }
            (None, None) => bail!("surface needs a generator or a density file"),
        }
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.ensure_out()?;
        let path = self.out.join(name);
        std::fs::write(&path, to_json(value)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn constants(config: Option<&RunConfig>) -> Result<ConstantsBundle> {
    match config {
        Some(c) => c.constants(),
        None => ConstantsConfig::default().bundle(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub faces: usize,
    pub mass: f64,
    pub expected_mass: Option<f64>,
    pub relative_error: Option<f64>,
    pub hash: String,
    pub warning: Option<String>,
}

pub fn generate(session: &Session) -> Result<GenerateSummary> {
    let g = session.config.surface.generator.as_ref().context("generate needs a generator in the config")?;
    let s = g.build(session.config.surface.grid.as_ref())?;
    let bytes = density::encode(&s, Some(g))?;
    session.ensure_out()?;
    let path = session.out.join("density.csv");
    std::fs::write(&path, &bytes)?;
    let mass = s.total_mass();
    let expected = g.expected_mass();
    let rel = expected.map(|e| (mass - e).abs() / e);
    let warning = rel.filter(|r| *r > GENERATOR_MASS_REL).map(|r| {
        format!("mass is off the closed form by {:.2}%: the grid undersamples the concentration, refine it", 100.0 * r)
    });
    Ok(GenerateSummary {
        path,
        faces: s.num_faces(),
        mass,
        expected_mass: expected,
        relative_error: rel,
        hash: density::hash(&bytes),
        warning,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomsOutcome {
    pub gradient: AxiomReport,
    pub cylinder: AxiomReport,
    pub pass: bool,
}

pub fn check_axioms(session: &Session, surface: &MeasuredSurface) -> Result<AxiomsOutcome> {
    let constants = session.config.constants()?;
    let plan = SamplePlan::new(session.config.axioms.samples, session.config.seed);
    // cylinder families are those of the input chart, absent on the sphere
    let families = if surface.genus == 0 {
        Vec::new()
    } else {
        prepare(surface, &constants, &session.config.search_plan()?)?.families
    };
    let gradient = check_gradient_inequality(surface, &constants, &plan);
    let cylinder = check_cylinder_inequality(surface, &constants, &plan, &families);
    let pass = gradient.pass && cylinder.pass;
    Ok(AxiomsOutcome { gradient, cylinder, pass })
}

pub fn verify_axioms(session: &Session) -> Result<(AxiomsOutcome, i32)> {
    let (surface, _) = session.surface()?;
    let out = check_axioms(session, &surface)?;
    session.write_json("axioms.json", &out)?;
    let code = if out.pass { EXIT_OK } else { EXIT_AXIOMS };
    Ok((out, code))
}

#[derive(Clone, Debug)]
pub struct DecomposeOutcome {
    /// `None` when the axioms stopped the run.
    pub decomposition: Option<BubbleDecomposition>,
    pub report: Option<AdaptednessReport>,
    pub axioms: Option<AxiomsOutcome>,
    pub exit: i32,
}

impl DecomposeOutcome {
    /// Reasons for a non-zero exit.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(a) = &self.axioms {
            if !a.pass {
                out.push(format!(
                    "axioms: {} gradient and {} cylinder violations",
                    a.gradient.violations, a.cylinder.violations
                ));
            }
        }
        if let Some(Err(e)) = self.decomposition.as_ref().map(|d| d.ensure_pass()) {
            out.push(e.to_string());
        }
        if let Some(r) = &self.report {
            out.extend(r.failures().into_iter().map(|f| format!("verifier: {f}")));
        }
        out
    }
}

fn write_exports(session: &Session, prep: &Prepared, report: &AdaptednessReport) -> Result<()> {
    session.ensure_out()?;
    export::decay_profiles(&session.out.join("decay_profiles.csv"), report)?;
    export::vertex_margins(&session.out.join("vertex_margins.csv"), report)?;
    export::boundaries(&session.out.join("boundaries.csv"), prep, report)?;
    export::density_heatmap(&session.out.join("density_heatmap.csv"), &prep.surface)?;
    Ok(())
}

/// Build the decomposition in memory.
pub fn build(session: &Session, surface: &MeasuredSurface, bytes: &[u8]) -> Result<(Prepared, BubbleDecomposition)> {
    let constants = session.config.constants()?;
    let plan = session.config.search_plan()?;
    let prep = prepare(surface, &constants, &plan)?;
    let mut d = build_decomposition(&prep, &constants, &plan)?;
    d.surface_hash = Some(density::hash(bytes));
    Ok((prep, d))
}

pub fn decompose(session: &Session) -> Result<DecomposeOutcome> {
    let (surface, bytes) = session.surface()?;
    let axioms = if session.force { None } else { Some(check_axioms(session, &surface)?) };
    if let Some(a) = &axioms {
        session.write_json("axioms.json", a)?;
        if !a.pass {
            return Ok(DecomposeOutcome { decomposition: None, report: None, axioms, exit: EXIT_AXIOMS });
        }
    }
    let (prep, d) = build(session, &surface, &bytes)?;
    session.write_json("decomposition.json", &d)?;
    let report = verify_prepared(&prep, &d)?;
    session.write_json("report.json", &report)?;
    write_exports(session, &prep, &report)?;
    let exit = if d.audits.pass && report.pass { EXIT_OK } else { EXIT_AUDIT };
    Ok(DecomposeOutcome { decomposition: Some(d), report: Some(report), axioms, exit })
}

pub fn read_decomposition(path: &Path) -> Result<BubbleDecomposition> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let d: BubbleDecomposition = serde_json::from_str(&text).context("malformed decomposition file")?;
    if d.schema != 1 {
        bail!("decomposition schema {} is not supported", d.schema);
    }
    Ok(d)
}

pub fn verify(session: &Session, decomposition: &Path) -> Result<(AdaptednessReport, i32)> {
    let d = read_decomposition(decomposition)?;
    let (surface, bytes) = session.surface()?;
    let h = density::hash(&bytes);
    match &d.surface_hash {
        Some(expected) if *expected != h => {
            bail!("surface hash mismatch: decomposition was built on {expected}, the configured surface is {h}")
        }
        _ => {}
    }
    let prep = prepare_for(&surface, &d)?;
    let report = verify_prepared(&prep, &d)?;
    session.write_json("report.json", &report)?;
    write_exports(session, &prep, &report)?;
    let code = if report.pass { EXIT_OK } else { EXIT_AUDIT };
    Ok((report, code))
}

/// Plain-text summary of the artifacts in an output directory.
pub fn report(out: &Path) -> Result<String> {
    let d = read_decomposition(&out.join("decomposition.json"))?;
    let mut s = String::new();
    writeln!(s, "branch: {:?}", d.branch)?;
    if let Some(n) = &d.normalization {
        writeln!(s, "normalization: case {} scale {:.3e} K0 {:.4}", n.case, n.scale, n.k0)?;
    }
    let k = d.constants.derived()?;
    writeln!(s, "constants: K1 {:.6} L0 {:.6} L1 {:.6} neck mass {:.6}", k.k1, k.l0, k.l1, d.constants.neck_mass())?;
    writeln!(s, "long necks: {}  classes: {}  incidents: {}", d.long_necks.len(), d.classes.len(), d.incidents.len())?;
    for t in &d.thin {
        writeln!(
            s,
            "thin {:?} class {:?}: representative Mod {:.4}, thin Mod {:.4}, mass {:.3e}",
            t.provenance,
            t.class,
            t.representative.modulus,
            t.thin.modulus,
            t.thin.mass.unwrap_or(f64::NAN)
        )?;
    }
    for c in &d.thick {
        writeln!(
            s,
            "thick {}: mass {:.6}, genus {}, boundaries {}, stable {}",
            c.index, c.mass, c.genus, c.boundaries, c.stable
        )?;
    }
    let a = &d.audits;
    writeln!(
        s,
        "audits: pass {} (stable {}, maximality {} long necks of {} samples, disjoint {}, conjugation {:?}, transitivity {}/{})",
        a.pass, a.stable, a.maximality.long_necks, a.maximality.samples, a.disjoint, a.conjugation_invariant,
        a.transitivity.violations, a.transitivity.triples
    )?;
    let rp = out.join("report.json");
    if rp.exists() {
        let text = std::fs::read_to_string(&rp)?;
        let r: AdaptednessReport = serde_json::from_str(&text).context("malformed report file")?;
        writeln!(s, "dual graph: {} vertices, {} edges, {} loops", r.graph.vertices.len(), r.graph.edges.len(), r.graph.loops())?;
        for t in &r.thin.rows {
            writeln!(s, "decay {}: exponent {:.4}, {} of {} points above the bound", t.index, t.fit.exponent, t.violations, t.checked)?;
        }
        writeln!(s, "thick constants: a {:.4e} b {:.4}", r.thick_constants.a, r.thick_constants.b)?;
        writeln!(s, "count bound: {} thick, {} thin <= {:.2}", r.counts.thick, r.counts.thin, r.counts.bound)?;
        writeln!(s, "mass partition error {:.2e}, euler {} + {} = {}", r.partition.relative_error, r.euler.thick, r.euler.thin, r.euler.surface)?;
        match r.f1.coefficient {
            Some(f) => writeln!(s, "f1: {:.4} over {} necks (ceiling {:.2})", f, r.f1.used, r.f1.ceiling)?,
            None => writeln!(s, "f1: no data")?,
        }
        writeln!(s, "verifier: pass {} {:?}", r.pass, r.failures())?;
    }
    Ok(s)
}
