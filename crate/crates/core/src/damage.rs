//! Peak overpressure and positive-phase impulse from pressure histories, and
//! pressure-impulse (P-I) damage classification.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::euler2d::FrameSequence;
use crate::field::Field2;

/// Damage levels in increasing severity; the discriminant is the raster code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum DamageLevel {
    None = 0,
    Minor = 1,
    Moderate = 2,
    Severe = 3,
    Total = 4,
}

impl DamageLevel {
    pub const ALL: [DamageLevel; 5] = [Self::None, Self::Minor, Self::Moderate, Self::Severe, Self::Total];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Minor => "minor",
            Self::Moderate => "moderate",
            Self::Severe => "severe",
            Self::Total => "total",
        }
    }
}

/// Raster code for obstacle cells, which are not classified.
pub const OBSTACLE_CODE: u8 = 255;

/// `(Δp₊ − a)(I₊ − b) = c` with Δp₊ in kPa and I₊ in kPa·s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub level: DamageLevel,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Criterion {
    /// Inclusive on the curve itself.
    pub fn satisfied(&self, dp: f64, i: f64) -> bool {
        dp > self.a && i > self.b && (dp - self.a) * (i - self.b) >= self.c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamageConfig {
    /// Ambient pressure in Pa.
    pub p_ambient: f64,
    /// Ordered from the mildest to the most severe level.
    pub criteria: Vec<Criterion>,
}

impl Default for DamageConfig {
    fn default() -> Self {
        let c = |level, a, b, c| Criterion { level, a, b, c };
        Self {
            p_ambient: 102_759.0,
            criteria: vec![
                c(DamageLevel::Minor, 6.205, 0.517, 3.185),
                c(DamageLevel::Moderate, 11.721, 0.931, 10.934),
                c(DamageLevel::Severe, 24.821, 1.827, 45.161),
                c(DamageLevel::Total, 48.263, 3.068, 147.367),
            ],
        }
    }
}

impl DamageConfig {
    /// Checks that the criteria are positive, cover Minor..Total in order and
    /// nest: every point satisfying a level also satisfies all milder ones,
    /// which holds when a, b and c all increase with severity.
    pub fn validate(&self) -> Result<()> {
        if !(self.p_ambient.is_finite() && self.p_ambient > 0.0) {
            return Err(Error::config("ambient pressure must be positive"));
        }
        let levels: Vec<DamageLevel> = self.criteria.iter().map(|c| c.level).collect();
        if levels != DamageLevel::ALL[1..] {
            return Err(Error::config("damage criteria must list minor, moderate, severe, total in order"));
        }
        for c in &self.criteria {
            if !(c.a > 0.0 && c.b > 0.0 && c.c > 0.0) || !(c.a.is_finite() && c.b.is_finite() && c.c.is_finite()) {
                return Err(Error::config(format!("{} criterion constants must be positive", c.level.name())));
            }
        }
        for w in self.criteria.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            if !(hi.a > lo.a && hi.b > lo.b && hi.c >= lo.c) {
                return Err(Error::config(format!(
                    "{} criterion does not nest inside {}",
                    hi.level.name(),
                    lo.level.name()
                )));
            }
        }
        Ok(())
    }
}

/// Highest level whose criterion holds. Assumes a validated (nested) config.
pub fn classify(dp_kpa: f64, i_kpa_s: f64, cfg: &DamageConfig) -> DamageLevel {
    cfg.criteria
        .iter()
        .rev()
        .find(|c| c.satisfied(dp_kpa, i_kpa_s))
        .map_or(DamageLevel::None, |c| c.level)
}

/// Largest excess over ambient, floored at zero, in kPa.
pub fn peak_overpressure(history: &[f64], cfg: &DamageConfig) -> f64 {
    let peak = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ((peak - cfg.p_ambient) / 1000.0).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLoadSummary {
    pub delta_p_plus: f64,
    pub i_plus: f64,
    pub arrival_index: Option<usize>,
}

/// Trapezoidal integral of the overpressure over the first positive phase,
/// in kPa·s, with the arrival index. The phase runs from the first sample
/// above ambient to the next sample at or below it, or to the end of the
/// series. The closing interval stops at the linearly interpolated ambient
/// crossing so an undershoot never subtracts from the impulse.
pub fn positive_impulse(history: &[f64], dt_out: f64, cfg: &DamageConfig) -> (f64, Option<usize>) {
    let Some(start) = history.iter().position(|&p| p > cfg.p_ambient) else {
        return (0.0, None);
    };
    let excess = |k: usize| history[k] - cfg.p_ambient;
    let mut area = 0.0;
    for k in start..history.len() - 1 {
        let (e0, e1) = (excess(k), excess(k + 1));
        if e1 <= 0.0 {
            area += 0.5 * e0 * dt_out * e0 / (e0 - e1);
            break;
        }
        area += 0.5 * (e0 + e1) * dt_out;
    }
    (area / 1000.0, Some(start))
}

pub fn point_load(history: &[f64], dt_out: f64, cfg: &DamageConfig) -> PointLoadSummary {
    let (i_plus, arrival_index) = positive_impulse(history, dt_out, cfg);
    PointLoadSummary {
        delta_p_plus: peak_overpressure(history, cfg),
        i_plus,
        arrival_index,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DamageMap {
    /// `None` for obstacle cells.
    pub levels: Field2<Option<DamageLevel>>,
    pub loads: Field2<Option<PointLoadSummary>>,
    /// Percent of non-obstacle cells per level, indexed by level code.
    pub percentages: [f64; 5],
    pub fluid_cells: usize,
}

impl DamageMap {
    /// Level codes with obstacles as [`OBSTACLE_CODE`].
    pub fn raster(&self) -> Vec<u8> {
        self.levels
            .as_slice()
            .iter()
            .map(|l| l.map_or(OBSTACLE_CODE, DamageLevel::code))
            .collect()
    }
}

/// Classifies every non-obstacle cell from its pressure history (Pa).
/// `layout` is nonzero on obstacle cells.
pub fn damage_map(frames: &FrameSequence, layout: &Field2<f32>, cfg: &DamageConfig) -> Result<DamageMap> {
    cfg.validate()?;
    let (nx, ny) = (frames.grid.nx, frames.grid.ny);
    if layout.nx() != nx || layout.ny() != ny {
        return Err(Error::shape(format!(
            "layout is {}x{}, frames are {nx}x{ny}",
            layout.nx(),
            layout.ny()
        )));
    }
    if let Some(f) = frames.frames.iter().find(|f| f.nx() != nx || f.ny() != ny) {
        return Err(Error::shape(format!("frame is {}x{}, grid is {nx}x{ny}", f.nx(), f.ny())));
    }
    if frames.is_empty() {
        return Err(Error::shape("no frames to assess"));
    }
    let mut levels = Field2::filled(nx, ny, None);
    let mut loads = Field2::filled(nx, ny, None);
    let mut counts = [0usize; 5];
    let mut history = vec![0.0; frames.len()];
    for j in 0..ny {
        for i in 0..nx {
            if layout.get(i, j) != 0.0 {
                continue;
            }
            for (h, f) in history.iter_mut().zip(&frames.frames) {
                *h = f.get(i, j) as f64;
            }
            let load = point_load(&history, frames.dt_out, cfg);
            let level = classify(load.delta_p_plus, load.i_plus, cfg);
            counts[level.code() as usize] += 1;
            levels.set(i, j, Some(level));
            loads.set(i, j, Some(load));
        }
    }
    let fluid: usize = counts.iter().sum();
    let percentages = if fluid == 0 {
        [0.0; 5]
    } else {
        counts.map(|c| 100.0 * c as f64 / fluid as f64)
    };
    Ok(DamageMap {
        levels,
        loads,
        percentages,
        fluid_cells: fluid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageRasterManifest {
    pub nx: usize,
    pub ny: usize,
    pub dtype: String,
    pub legend: Vec<(u8, String)>,
    pub fluid_cells: usize,
    pub percentages: Vec<(String, f64)>,
}

/// Writes `damage.bin` (one byte per cell, y outermost), `damage.json`
/// (legend and area shares) and `damage.txt`.
pub fn write_damage(dir: &Path, map: &DamageMap) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    binio::write_u8(&dir.join("damage.bin"), &map.raster())?;
    let mut legend: Vec<(u8, String)> = DamageLevel::ALL.iter().map(|l| (l.code(), l.name().to_string())).collect();
    legend.push((OBSTACLE_CODE, "obstacle".into()));
    let manifest = DamageRasterManifest {
        nx: map.levels.nx(),
        ny: map.levels.ny(),
        dtype: "u8".into(),
        legend,
        fluid_cells: map.fluid_cells,
        percentages: DamageLevel::ALL
            .iter()
            .map(|l| (l.name().to_string(), map.percentages[l.code() as usize]))
            .collect(),
    };
    binio::write_json(&dir.join("damage.json"), &manifest)?;
    std::fs::write(dir.join("damage.txt"), format_percentages(map))?;
    Ok(())
}

pub fn format_percentages(map: &DamageMap) -> String {
    let mut s = format!("# area share over {} non-obstacle cells\nlevel percent\n", map.fluid_cells);
    for l in DamageLevel::ALL {
        writeln!(s, "{} {:.3}", l.name(), map.percentages[l.code() as usize]).unwrap();
    }
    s
}

/// Color-mapped PNG of the raster, one pixel per cell, north up.
pub fn write_damage_png(path: &Path, map: &DamageMap) -> Result<()> {
    let (nx, ny) = (map.levels.nx() as u32, map.levels.ny() as u32);
    let palette = |l: Option<DamageLevel>| match l {
        None => [40, 40, 40],
        Some(DamageLevel::None) => [235, 235, 235],
        Some(DamageLevel::Minor) => [255, 220, 90],
        Some(DamageLevel::Moderate) => [250, 150, 40],
        Some(DamageLevel::Severe) => [220, 60, 30],
        Some(DamageLevel::Total) => [120, 0, 20],
    };
    let img = image::RgbImage::from_fn(nx, ny, |x, y| {
        image::Rgb(palette(map.levels.get(x as usize, (ny - 1 - y) as usize)))
    });
    img.save(path).map_err(|e| Error::Report(format!("writing {}: {e}", path.display())))
}
