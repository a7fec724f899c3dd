//! Run configuration and synthetic density generators.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use thickthin::axioms::ConstantsBundle;
use thickthin::decomposer::{derive_constants_with, SearchPlan};
use thickthin::field::{Field, RationalMap};
use thickthin::geometry::{collar_modulus, MetricModel, Point};
use thickthin::surface::{double, BorderedSurface, DensitySource, Exterior, Grid, MeasuredSurface};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub axioms: AxiomConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Density file, relative paths resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub c1_prime: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub normalized: bool,
    /// Override of the derived `K1`, at least `c2 + pi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig { c1_prime: 1.0, c2: 1.0, c3: 0.5, delta1: 1.0, delta2: 0.4, normalized: true, k1: None }
    }
}

impl ConstantsConfig {
    pub fn bundle(&self) -> Result<ConstantsBundle> {
        let base = ConstantsBundle::new(self.c1_prime, self.c2, self.c3, self.delta1, self.delta2, self.normalized)?;
        Ok(derive_constants_with(&base, self.k1)?)
    }
}

/// Overrides of the search plan; unset fields keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitivity_triples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_necks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_amplitude: Option<f64>,
}

impl PlanConfig {
    pub fn plan(&self, seed: u64) -> Result<SearchPlan> {
        let mut p = SearchPlan::new(seed);
        if let Some(v) = self.stride {
            p.stride = v;
        }
        if let Some(v) = self.sweep_ratio {
            p.sweep_ratio = v;
        }
        if let Some(v) = self.refine_budget {
            p.refine_budget = v;
        }
        if let Some(v) = self.audit_samples {
            p.audit_samples = v;
        }
        if let Some(v) = self.transitivity_triples {
            p.transitivity_triples = v;
        }
        if let Some(v) = self.max_necks {
            p.max_necks = v;
        }
        if let Some(v) = self.decay_amplitude {
            p.decay_amplitude = v;
        }
        if p.stride == 0 || !(p.sweep_ratio > 1.0) || !(p.decay_amplitude > 0.0) {
            bail!("search plan needs stride >= 1, sweep_ratio > 1 and decay_amplitude > 0");
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxiomConfig {
    pub samples: usize,
}

impl Default for AxiomConfig {
    fn default() -> Self {
        AxiomConfig { samples: 500 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BubbleVariant {
    /// Concentration at the interior point `i` of the half plane.
    Interior,
    /// The half bubble `z + eps / z`, concentrating at the boundary point `0`.
    #[default]
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Uniform {
        #[serde(default = "one")]
        value: f64,
    },
    RationalPullback {
        map: RationalMap,
    },
    Bubble {
        eps: f64,
    },
    TwoBubble {
        eps: f64,
        /// Log-scale distance between the bubbles at the two poles; `2 ln(1/eps)` when unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separation: Option<f64>,
    },
    TorusNeck {
        t: f64,
        width: f64,
    },
    CollarModel {
        ell: f64,
        amplitude: f64,
        rate: f64,
        #[serde(default = "one_u32")]
        exterior_genus: u32,
        #[serde(default = "one")]
        exterior_mass: f64,
        #[serde(default = "one")]
        exterior_diameter: f64,
    },
    BoundaryBubble {
        eps: f64,
        #[serde(default)]
        variant: BubbleVariant,
    },
    Bumps {
        background: f64,
        amplitude: f64,
        sigma: f64,
        /// `(s, theta)` chart coordinates.
        centers: Vec<[f64; 2]>,
    },
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

const SPHERE_GRID: (usize, usize, f64, f64) = (800, 32, -40.0, 40.0);

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                bail!("generator parameter {name} must be positive, got {v}");
            }
            Ok(())
        };
        match self {
            GeneratorSpec::Uniform { value } => positive("value", *value),
            GeneratorSpec::RationalPullback { map } => {
                if map.degree() == 0 {
                    bail!("rational map must be non-constant");
                }
                Ok(())
            }
            GeneratorSpec::Bubble { eps } | GeneratorSpec::BoundaryBubble { eps, .. } => positive("eps", *eps),
            GeneratorSpec::TwoBubble { eps, separation } => {
                positive("eps", *eps)?;
                if *eps >= 1.0 {
                    bail!("eps must be below 1");
                }
                if let Some(a) = separation {
                    if !(*a >= -eps.ln()) || !a.is_finite() {
                        bail!("separation must be at least ln(1/eps) = {}", -eps.ln());
                    }
                }
                Ok(())
            }
            GeneratorSpec::TorusNeck { t, width } => {
                positive("t", *t)?;
                positive("width", *width)
            }
            GeneratorSpec::CollarModel { ell, amplitude, rate, exterior_mass, exterior_diameter, .. } => {
                positive("ell", *ell)?;
                positive("amplitude", *amplitude)?;
                positive("exterior_diameter", *exterior_diameter)?;
                if !(*rate >= 0.0) || !(*exterior_mass >= 0.0) {
                    bail!("collar rate and exterior mass must be non-negative");
                }
                Ok(())
            }
            GeneratorSpec::Bumps { background, amplitude, sigma, .. } => {
                positive("sigma", *sigma)?;
                if !(*background >= 0.0) || !(*amplitude >= 0.0) {
                    bail!("bump background and amplitude must be non-negative");
                }
                Ok(())
            }
        }
    }

    fn two_bubble_separation(&self) -> Option<f64> {
        match self {
            GeneratorSpec::TwoBubble { eps, separation } => Some(separation.unwrap_or(-2.0 * eps.ln())),
            _ => None,
        }
    }

    /// Closed-form total mass where one exists.
    pub fn expected_mass(&self) -> Option<f64> {
        match self {
            GeneratorSpec::Uniform { value } => Some(4.0 * PI * value),
            GeneratorSpec::RationalPullback { map } => Some(4.0 * PI * map.degree() as f64),
            GeneratorSpec::Bubble { .. } => Some(8.0 * PI),
            GeneratorSpec::TwoBubble { .. } => Some(12.0 * PI),
            GeneratorSpec::BoundaryBubble { .. } => Some(8.0 * PI),
            GeneratorSpec::TorusNeck { t, width } => Some(2.0 * TAU * (PI * t / width).tanh()),
            GeneratorSpec::CollarModel { ell, amplitude, rate, exterior_mass, .. } => {
                let m = collar_modulus(*ell).ok()?;
                let band = if *rate > 0.0 { 2.0 * (0.5 * rate * m).sinh() / rate } else { m };
                Some(TAU * amplitude * band + exterior_mass)
            }
            GeneratorSpec::Bumps { .. } => None,
        }
    }

    pub fn build(&self, grid: Option<&GridSpec>) -> Result<MeasuredSurface> {
        self.validate()?;
        let sphere_grid = || -> Result<Grid> {
            let (rows, cols, lo, hi) = SPHERE_GRID;
            let g = grid.cloned().unwrap_or(GridSpec { rows, cols, s_min: None, s_max: None });
            Ok(Grid::sphere(g.rows, g.cols, g.s_min.unwrap_or(lo), g.s_max.unwrap_or(hi))?)
        };
        let sphere = |field: Field| -> Result<MeasuredSurface> {
            Ok(MeasuredSurface::new(MetricModel::sphere(), 0, sphere_grid()?, DensitySource::Field { field }, None, None)?)
        };
        let surface = match self {
            GeneratorSpec::Uniform { value } => sphere(Field::Constant { value: *value })?,
            GeneratorSpec::RationalPullback { map } => sphere(Field::RationalPullback { map: map.clone() })?,
            GeneratorSpec::Bubble { eps } => sphere(Field::RationalPullback { map: RationalMap::bubble(*eps) })?,
            GeneratorSpec::TwoBubble { eps, .. } => {
                let sep = self.two_bubble_separation().unwrap_or_default();
                let map = RationalMap::two_bubble(*eps, (-sep).exp() / eps);
                let g = match grid {
                    Some(g) => Grid::sphere(g.rows, g.cols, g.s_min.unwrap_or(-sep - 8.0), g.s_max.unwrap_or(sep + 8.0))?,
                    None => {
                        let h = (sep + 8.0).ceil();
                        Grid::sphere(20 * h as usize, SPHERE_GRID.1, -h, h)?
                    }
                };
                MeasuredSurface::new(MetricModel::sphere(), 0, g, DensitySource::Field { field: Field::RationalPullback { map } }, None, None)?
            }
            GeneratorSpec::Bumps { background, amplitude, sigma, centers } => sphere(Field::SphereBumps {
                background: *background,
                amplitude: *amplitude,
                sigma: *sigma,
                centers: centers.iter().map(|c| Point::new(c[0], c[1])).collect(),
            })?,
            GeneratorSpec::TorusNeck { t, width } => {
                let model = MetricModel::flat_torus(0.0, *t)?;
                let g = grid.cloned().unwrap_or(GridSpec { rows: 1024, cols: 16, s_min: None, s_max: None });
                let grid = Grid::torus(&model, g.rows, g.cols)?;
                MeasuredSurface::new(model, 1, grid, DensitySource::Field { field: Field::TorusBand { width: *width } }, None, None)?
            }
            GeneratorSpec::CollarModel { ell, amplitude, rate, exterior_genus, exterior_mass, exterior_diameter } => {
                let model = MetricModel::collar(*ell)?;
                let g = grid.cloned().unwrap_or(GridSpec { rows: 256, cols: 32, s_min: None, s_max: None });
                let grid = Grid::collar(&model, g.rows, g.cols)?;
                let exterior = Exterior { genus: *exterior_genus, mass: *exterior_mass, diameter: *exterior_diameter };
                MeasuredSurface::new(
                    model,
                    exterior_genus + 1,
                    grid,
                    DensitySource::Field { field: Field::CollarNeck { amplitude: *amplitude, rate: *rate } },
                    None,
                    Some(exterior),
                )?
            }
            GeneratorSpec::BoundaryBubble { eps, variant } => {
                let map = match variant {
                    BubbleVariant::Interior => RationalMap::upper_bubble(*eps),
                    BubbleVariant::Boundary => RationalMap::bubble(*eps),
                };
                let g = sphere_grid()?;
                double(&BorderedSurface::Disk {
                    field: Field::RationalPullback { map },
                    rows: g.rows,
                    cols: g.cols,
                    s_min: g.s0,
                    s_max: g.s_end(),
                })?
            }
        };
        Ok(surface)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).context("config does not match schema 1")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("config schema {} is not supported (expected {SCHEMA})", self.schema);
        }
        match (&self.surface.generator, &self.surface.density) {
            (Some(g), None) => g.validate()?,
            (None, Some(_)) => {}
            _ => bail!("surface needs exactly one of `generator` and `density`"),
        }
        self.constants.bundle()?;
        self.plan.plan(self.seed)?;
        Ok(())
    }

    pub fn constants(&self) -> Result<ConstantsBundle> {
        self.constants.bundle()
    }

    pub fn search_plan(&self) -> Result<SearchPlan> {
        self.plan.plan(self.seed)
    }
}
