//! Procedural blast scenarios: building layouts, sources and charges, plus
//! their rasterization onto the simulation grid.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;

/// Height of the analysis plane, aligned with the blast source.
pub const SOURCE_HEIGHT: f64 = 3.0;
/// Placement attempts allowed per layout before giving up.
pub const LAYOUT_RETRY_BUDGET: usize = 10_000;
/// Charge used by the random-layout and variable-source suites.
pub const DEFAULT_CHARGE_KG: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub width: f64,
    pub height: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            width: 64.0,
            height: 64.0,
        }
    }
}

impl Domain {
    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * self.width, 0.5 * self.height)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

/// Axis-aligned rectangular building footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub height: f64,
}

impl Building {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Euclidean gap between two footprints, zero when they touch or overlap.
    pub fn gap(&self, other: &Building) -> f64 {
        let gx = (self.x_min - other.x_max).max(other.x_min - self.x_max).max(0.0);
        let gy = (self.y_min - other.y_max).max(other.y_min - self.y_max).max(0.0);
        gx.hypot(gy)
    }

    /// Distance from a point to the footprint, zero inside.
    pub fn distance_to_point(&self, x: f64, y: f64) -> f64 {
        let gx = (self.x_min - x).max(x - self.x_max).max(0.0);
        let gy = (self.y_min - y).max(y - self.y_max).max(0.0);
        gx.hypot(gy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlastSource {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub charge_kg: f64,
}

impl BlastSource {
    pub fn new(x: f64, y: f64, charge_kg: f64) -> Self {
        Self {
            x,
            y,
            z: SOURCE_HEIGHT,
            charge_kg,
        }
    }
}

/// Uniform cell-centred grid over the domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub const MIN_CELLS: usize = 16;

    pub fn for_domain(domain: &Domain, nx: usize, ny: usize) -> Result<Self> {
        let grid = Self {
            nx,
            ny,
            dx: domain.width / nx as f64,
            dy: domain.height / ny as f64,
        };
        grid.validate(domain)?;
        Ok(grid)
    }

    /// Square grid of `n × n` cells over the default 64 m domain.
    pub fn square(n: usize) -> Result<Self> {
        Self::for_domain(&Domain::default(), n, n)
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.nx < Self::MIN_CELLS || self.ny < Self::MIN_CELLS {
            return Err(Error::config(format!(
                "grid {}x{} below the minimum of {} cells per side",
                self.nx,
                self.ny,
                Self::MIN_CELLS
            )));
        }
        let tol = 1e-9 * domain.width.max(domain.height);
        if (self.nx as f64 * self.dx - domain.width).abs() > tol
            || (self.ny as f64 * self.dy - domain.height).abs() > tol
        {
            return Err(Error::config(format!(
                "grid {}x{} at ({}, {}) m does not tile the {}x{} m domain",
                self.nx, self.ny, self.dx, self.dy, domain.width, domain.height
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

/// One blast scenario: the unit of data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCase {
    pub case_id: String,
    pub domain: Domain,
    pub buildings: Vec<Building>,
    pub source: BlastSource,
    pub seed: u64,
}

/// Serialized scenario record (`scenario` block of a case manifest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub case_id: String,
    pub domain: Domain,
    pub grid: GridSpec,
    pub buildings: Vec<Building>,
    pub source: BlastSource,
    pub seed: u64,
}

impl ScenarioCase {
    pub fn manifest(&self, grid: &GridSpec) -> ScenarioManifest {
        ScenarioManifest {
            case_id: self.case_id.clone(),
            domain: self.domain,
            grid: *grid,
            buildings: self.buildings.clone(),
            source: self.source,
            seed: self.seed,
        }
    }

    pub fn from_manifest(m: &ScenarioManifest) -> Self {
        Self {
            case_id: m.case_id.clone(),
            domain: m.domain,
            buildings: m.buildings.clone(),
            source: m.source,
            seed: m.seed,
        }
    }

    /// Checks geometry against `params`: footprint bounds, margins,
    /// pairwise clearance and a source outside every building.
    pub fn validate(&self, params: &LayoutParams) -> Result<()> {
        let fail = |msg: String| Err(Error::config(format!("case {}: {msg}", self.case_id)));
        if !self.domain.contains(self.source.x, self.source.y) {
            return fail("source outside the domain".into());
        }
        if self.source.charge_kg <= 0.0 {
            return fail("charge must be positive".into());
        }
        for (k, b) in self.buildings.iter().enumerate() {
            let eps = 1e-9;
            if !(b.width() >= params.min_side - eps && b.width() <= params.max_side + eps)
                || !(b.depth() >= params.min_side - eps && b.depth() <= params.max_side + eps)
            {
                return fail(format!("building {k} footprint out of range"));
            }
            if !(b.height >= params.min_height && b.height <= params.max_height) {
                return fail(format!("building {k} height out of range"));
            }
            if b.x_min < params.clearance - eps
                || b.y_min < params.clearance - eps
                || b.x_max > self.domain.width - params.clearance + eps
                || b.y_max > self.domain.height - params.clearance + eps
            {
                return fail(format!("building {k} violates the boundary margin"));
            }
            if b.contains(self.source.x, self.source.y) {
                return fail(format!("source inside building {k}"));
            }
            for (l, other) in self.buildings.iter().enumerate().skip(k + 1) {
                if b.gap(other) < params.clearance - eps {
                    return fail(format!("buildings {k} and {l} closer than the clearance"));
                }
            }
        }
        Ok(())
    }
}

/// Bounds for procedural layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub domain: Domain,
    pub min_buildings: usize,
    pub max_buildings: usize,
    pub min_side: f64,
    pub max_side: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Minimum gap between buildings, and between buildings and the domain edge.
    pub clearance: f64,
    pub charge_kg: f64,
    /// In-plane source position; the random-layout suite places it at the origin corner.
    pub source_xy: (f64, f64),
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            domain: Domain::default(),
            min_buildings: 6,
            max_buildings: 15,
            min_side: 5.0,
            max_side: 10.0,
            min_height: 1.0,
            max_height: 3.0,
            clearance: 2.0,
            charge_kg: DEFAULT_CHARGE_KG,
            source_xy: (0.0, 0.0),
        }
    }
}

impl LayoutParams {
    fn check(&self) -> Result<()> {
        let d = &self.domain;
        let ok = self.min_buildings <= self.max_buildings
            && self.min_side > 0.0
            && self.min_side <= self.max_side
            && self.min_height > 0.0
            && self.min_height <= self.max_height
            && self.clearance >= 0.0
            && self.charge_kg > 0.0
            && d.width > 2.0 * self.clearance + self.max_side
            && d.height > 2.0 * self.clearance + self.max_side
            && d.contains(self.source_xy.0, self.source_xy.1);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid layout parameters: {self:?}")))
        }
    }
}

fn case_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rejection-samples a layout of non-overlapping buildings.
///
/// The building count is drawn first; each building is then proposed until
/// it clears every placed building and the source. All proposals share one
/// retry budget.
pub fn generate_random_layout(seed: u64, params: &LayoutParams) -> Result<ScenarioCase> {
    params.check()?;
    let mut rng = case_rng(seed);
    let count = rng.gen_range(params.min_buildings..=params.max_buildings);
    let (sx, sy) = params.source_xy;
    let d = params.domain;

    let mut buildings: Vec<Building> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while buildings.len() < count {
        if attempts >= LAYOUT_RETRY_BUDGET {
            return Err(Error::LayoutInfeasible { seed, attempts });
        }
        attempts += 1;
        let w = rng.gen_range(params.min_side..=params.max_side);
        let h = rng.gen_range(params.min_side..=params.max_side);
        let x0 = rng.gen_range(params.clearance..=d.width - params.clearance - w);
        let y0 = rng.gen_range(params.clearance..=d.height - params.clearance - h);
        let height = rng.gen_range(params.min_height..=params.max_height);
        let cand = Building {
            x_min: x0,
            y_min: y0,
            x_max: x0 + w,
            y_max: y0 + h,
            height,
        };
        if cand.distance_to_point(sx, sy) < params.clearance {
            continue;
        }
        if buildings.iter().all(|b| b.gap(&cand) >= params.clearance) {
            buildings.push(cand);
        }
    }

    Ok(ScenarioCase {
        case_id: format!("layout_{seed}"),
        domain: d,
        buildings,
        source: BlastSource::new(sx, sy, params.charge_kg),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    RandomLayout,
    VariableSource,
    VariableCharge,
}

impl SuiteKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteKind::RandomLayout => "random_layout",
            SuiteKind::VariableSource => "variable_source",
            SuiteKind::VariableCharge => "variable_charge",
        }
    }
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_layout" => Ok(SuiteKind::RandomLayout),
            "variable_source" => Ok(SuiteKind::VariableSource),
            "variable_charge" => Ok(SuiteKind::VariableCharge),
            other => Err(Error::config(format!("unknown suite kind `{other}`"))),
        }
    }
}

/// Charge weights of the variable-charge suite: 50 kg in 10 kg increments.
pub fn charge_progression(count: usize) -> Vec<f64> {
    (0..count).map(|i| 50.0 + 10.0 * i as f64).collect()
}

/// Builds a scenario suite. Per-case seeds are derived from `seed` so the
/// whole suite is a pure function of `(kind, count, seed, params)`.
pub fn make_scenario_suite(
    kind: SuiteKind,
    count: usize,
    seed: u64,
    params: &LayoutParams,
) -> Result<Vec<ScenarioCase>> {
    let mut seeder = case_rng(seed);
    match kind {
        SuiteKind::RandomLayout => {
            let mut cases: Vec<ScenarioCase> = Vec::with_capacity(count);
            let mut index = 0;
            while cases.len() < count {
                let case_seed: u64 = seeder.gen();
                let mut case = generate_random_layout(case_seed, params)?;
                if cases.iter().any(|c| c.buildings == case.buildings) {
                    continue;
                }
                case.case_id = format!("{kind}_{index:03}");
                cases.push(case);
                index += 1;
            }
            Ok(cases)
        }
        SuiteKind::VariableSource => {
            let layout_seed: u64 = seeder.gen();
            let base = generate_random_layout(layout_seed, params)?;
            let mut candidates = free_source_cells(&base, params);
            if candidates.len() < count {
                return Err(Error::config(format!(
                    "only {} admissible source cells for {count} cases",
                    candidates.len()
                )));
            }
            let mut cases = Vec::with_capacity(count);
            for index in 0..count {
                let pick = seeder.gen_range(0..candidates.len());
                let (x, y) = candidates.swap_remove(pick);
                cases.push(ScenarioCase {
                    case_id: format!("{kind}_{index:03}"),
                    source: BlastSource::new(x, y, params.charge_kg),
                    ..base.clone()
                });
            }
            Ok(cases)
        }
        SuiteKind::VariableCharge => {
            let centered = LayoutParams {
                source_xy: params.domain.center(),
                ..params.clone()
            };
            let layout_seed: u64 = seeder.gen();
            let base = generate_random_layout(layout_seed, &centered)?;
            Ok(charge_progression(count)
                .into_iter()
                .enumerate()
                .map(|(index, charge)| ScenarioCase {
                    case_id: format!("{kind}_{index:03}"),
                    source: BlastSource::new(base.source.x, base.source.y, charge),
                    ..base.clone()
                })
                .collect())
        }
    }
}

/// Centres of unit cells on a 1 m lattice that lie at least `clearance` from
/// every building.
fn free_source_cells(case: &ScenarioCase, params: &LayoutParams) -> Vec<(f64, f64)> {
    let nx = case.domain.width.floor() as usize;
    let ny = case.domain.height.floor() as usize;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
            if case
                .buildings
                .iter()
                .all(|b| b.distance_to_point(x, y) >= params.clearance)
            {
                out.push((x, y));
            }
        }
    }
    out
}

/// Binary obstacle mask: 1 where a cell centre lies inside any footprint.
///
/// Every building blocks the analysis plane regardless of its height.
pub fn rasterize_layout(case: &ScenarioCase, grid: &GridSpec) -> Field2<f32> {
    Field2::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = grid.center(i, j);
        if case.buildings.iter().any(|b| b.contains(x, y)) {
            1.0
        } else {
            0.0
        }
    })
}

/// Distance from the source to each cell centre, divided by the domain diagonal.
pub fn distance_field(source: &BlastSource, grid: &GridSpec) -> Field2<f32> {
    let diag = (grid.nx as f64 * grid.dx).hypot(grid.ny as f64 * grid.dy);
    Field2::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = grid.center(i, j);
        ((x - source.x).hypot(y - source.y) / diag) as f32
    })
}

/// Unnormalized distance in metres, kept separate for diagnostics.
pub fn distance_meters(source: &BlastSource, grid: &GridSpec) -> Field2<f64> {
    Field2::from_fn(grid.nx, grid.ny, |i, j| {
        let (x, y) = grid.center(i, j);
        (x - source.x).hypot(y - source.y)
    })
}
