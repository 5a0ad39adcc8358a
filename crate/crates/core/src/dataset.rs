//! Case storage, global min-max normalization and sliding-window samples.
//!
//! A dataset root holds `stats.json` plus one directory per case with
//! `manifest.json`, `frames.bin`, `layout.bin` and `distance.bin`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::euler2d::FrameSequence;
use crate::field::Field2;
use crate::nn::Tensor;
use crate::scenario::{distance_field, rasterize_layout, GridSpec, ScenarioCase, ScenarioManifest};

/// Frame count of a full-length case; the time channel is scaled by it.
pub const NOMINAL_FRAMES: usize = 290;
pub const DEFAULT_WINDOW: usize = 10;
pub const CHANNELS: usize = 4;

pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const LAYOUT_FILE: &str = "layout.bin";
pub const DISTANCE_FILE: &str = "distance.bin";

/// Value of the time channel for absolute step index `step`. Continues
/// linearly past the nominal end.
pub fn time_channel_value(step: usize) -> f32 {
    (step as f64 / (NOMINAL_FRAMES - 1) as f64) as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub p_min: f64,
    pub p_max: f64,
}

impl NormalizationStats {
    pub fn new(p_min: f64, p_max: f64) -> Result<Self> {
        if !(p_min.is_finite() && p_max.is_finite()) {
            return Err(Error::config("normalization bounds must be finite"));
        }
        if p_max <= p_min {
            if p_max == p_min {
                return Err(Error::DegenerateNormalization(p_min));
            }
            return Err(Error::config(format!("p_max {p_max} below p_min {p_min}")));
        }
        Ok(Self { p_min, p_max })
    }

    pub fn normalize(&self, p: f64) -> f64 {
        (p - self.p_min) / (self.p_max - self.p_min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.p_max - self.p_min) + self.p_min
    }

    pub fn normalize_field(&self, f: &Field2<f32>) -> Field2<f32> {
        f.map(|p| self.normalize(p as f64) as f32)
    }

    pub fn denormalize_field(&self, f: &Field2<f32>) -> Field2<f32> {
        f.map(|v| self.denormalize(v as f64) as f32)
    }
}

/// Global min and max over every pressure value of the given cases.
pub fn compute_stats<'a>(cases: impl IntoIterator<Item = &'a FrameSequence>) -> Result<NormalizationStats> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for seq in cases {
        for f in &seq.frames {
            for &v in f.as_slice() {
                any = true;
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
            }
        }
    }
    if !any {
        return Err(Error::config("cannot compute normalization over an empty case set"));
    }
    NormalizationStats::new(lo, hi)
}

/// Distance and layout channels of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseStatics {
    pub distance: Field2<f32>,
    pub layout: Field2<f32>,
}

impl CaseStatics {
    pub fn from_case(case: &ScenarioCase, grid: &GridSpec) -> Self {
        Self {
            distance: distance_field(&case.source, grid),
            layout: rasterize_layout(case, grid),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub grid: GridSpec,
    pub dt_out: f64,
    pub n_frames: usize,
    pub units: String,
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioManifest>,
}

impl CaseManifest {
    pub fn for_sequence(seq: &FrameSequence, scenario: Option<ScenarioManifest>) -> Self {
        Self {
            case_id: seq.case_id.clone(),
            grid: seq.grid,
            dt_out: seq.dt_out,
            n_frames: seq.len(),
            units: "Pa".into(),
            dtype: "f32".into(),
            byte_order: "little".into(),
            scenario,
        }
    }
}

/// A stored case: pressure frames, static channels and manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseData {
    pub manifest: CaseManifest,
    pub sequence: FrameSequence,
    pub statics: CaseStatics,
}

impl CaseData {
    pub fn new(case: &ScenarioCase, sequence: FrameSequence) -> Self {
        let statics = CaseStatics::from_case(case, &sequence.grid);
        let manifest = CaseManifest::for_sequence(&sequence, Some(case.manifest(&sequence.grid)));
        Self {
            manifest,
            sequence,
            statics,
        }
    }
}

pub fn write_frames(dir: &Path, seq: &FrameSequence) -> Result<()> {
    let mut all = Vec::with_capacity(seq.len() * seq.grid.cells());
    for f in &seq.frames {
        all.extend_from_slice(f.as_slice());
    }
    binio::write_f32(&dir.join(FRAMES_FILE), &all)
}

pub fn write_case(dir: &Path, case: &CaseData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if case.manifest.n_frames != case.sequence.len() {
        return Err(Error::shape(format!(
            "manifest declares {} frames, sequence has {}",
            case.manifest.n_frames,
            case.sequence.len()
        )));
    }
    binio::write_json(&dir.join(MANIFEST_FILE), &case.manifest)?;
    write_frames(dir, &case.sequence)?;
    binio::write_f32(&dir.join(LAYOUT_FILE), case.statics.layout.as_slice())?;
    binio::write_f32(&dir.join(DISTANCE_FILE), case.statics.distance.as_slice())?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CaseManifest> {
    let path = dir.join(MANIFEST_FILE);
    let m: CaseManifest = binio::read_json(&path)?;
    if m.byte_order != "little" || m.dtype != "f32" {
        return Err(Error::corrupt(
            &path,
            format!("unsupported payload encoding {} {}", m.dtype, m.byte_order),
        ));
    }
    if m.grid.nx == 0 || m.grid.ny == 0 {
        return Err(Error::corrupt(&path, "empty grid"));
    }
    Ok(m)
}

/// Reads the frames of a manifest-described directory.
pub fn read_frames(dir: &Path, m: &CaseManifest) -> Result<FrameSequence> {
    let (nx, ny) = (m.grid.nx, m.grid.ny);
    let cells = nx * ny;
    let path = dir.join(FRAMES_FILE);
    let data = binio::read_f32(&path, m.n_frames * cells).map_err(|e| match e {
        Error::CorruptDataset { path, reason } => Error::CorruptDataset {
            path,
            reason: format!("{reason}; manifest declares {} frames of {nx}x{ny}", m.n_frames),
        },
        other => other,
    })?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::corrupt(&path, "non-finite pressure value"));
    }
    let frames = data
        .chunks_exact(cells)
        .map(|c| Field2::from_vec(nx, ny, c.to_vec()))
        .collect();
    Ok(FrameSequence {
        case_id: m.case_id.clone(),
        grid: m.grid,
        dt_out: m.dt_out,
        frames,
    })
}

pub fn read_case(dir: &Path) -> Result<CaseData> {
    let manifest = read_manifest(dir)?;
    let sequence = read_frames(dir, &manifest)?;
    let (nx, ny) = (manifest.grid.nx, manifest.grid.ny);
    let layout = binio::read_f32(&dir.join(LAYOUT_FILE), nx * ny)?;
    let distance = binio::read_f32(&dir.join(DISTANCE_FILE), nx * ny)?;
    Ok(CaseData {
        manifest,
        sequence,
        statics: CaseStatics {
            distance: Field2::from_vec(nx, ny, distance),
            layout: Field2::from_vec(nx, ny, layout),
        },
    })
}

/// `stats.json`: normalization bounds plus the case split they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub p_min: f64,
    pub p_max: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetIndex {
    pub fn stats(&self) -> Result<NormalizationStats> {
        NormalizationStats::new(self.p_min, self.p_max)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        binio::write_json(&root.join(STATS_FILE), self)
    }

    pub fn read(root: &Path) -> Result<Self> {
        binio::read_json(&root.join(STATS_FILE))
    }

    pub fn case_dir(root: &Path, case_id: &str) -> PathBuf {
        root.join(case_id)
    }
}

/// Splits case ids into (train, test) by a seeded shuffle. The test share
/// is `round(n · test_fraction)`, leaving at least one training case.
pub fn split_cases(ids: &[String], test_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).min(ids.len().saturating_sub(1));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (
        train.into_iter().map(|i| ids[i].clone()).collect(),
        test.into_iter().map(|i| ids[i].clone()).collect(),
    )
}

/// Start indices of every window: sample `k` reads frames `k..k+T` and
/// targets frame `k + T`.
pub fn window_starts(n_frames: usize, window: usize) -> Result<std::ops::Range<usize>> {
    if n_frames <= window {
        return Err(Error::SequenceTooShort {
            frames: n_frames,
            window,
        });
    }
    Ok(0..n_frames - window)
}

/// Stacks normalized pressure frames with their time, distance and layout
/// channels into one `[1, T·4, H, W]` window. `first_step` is the absolute
/// step index of `frames[0]`.
pub fn build_window(frames: &[&[f32]], first_step: usize, statics: &CaseStatics) -> Tensor<f32> {
    let (nx, ny) = (statics.layout.nx(), statics.layout.ny());
    let cells = nx * ny;
    let t = frames.len();
    let mut data = Vec::with_capacity(t * CHANNELS * cells);
    for (k, f) in frames.iter().enumerate() {
        assert_eq!(f.len(), cells, "frame size");
        data.extend_from_slice(f);
        data.extend(std::iter::repeat_n(time_channel_value(first_step + k), cells));
        data.extend_from_slice(statics.distance.as_slice());
        data.extend_from_slice(statics.layout.as_slice());
    }
    Tensor::from_vec([1, t * CHANNELS, ny, nx], data)
}

/// One frame's input channels `[1, 4, H, W]`.
pub fn build_frame(frame: &[f32], step: usize, statics: &CaseStatics) -> Tensor<f32> {
    build_window(&[frame], step, statics)
}

/// A normalized case held in memory for windowing.
#[derive(Clone, Debug)]
pub struct NormalizedCase {
    pub case_id: String,
    pub frames: Vec<Vec<f32>>,
    pub statics: CaseStatics,
}

impl NormalizedCase {
    pub fn new(case: &CaseData, stats: &NormalizationStats) -> Self {
        Self {
            case_id: case.sequence.case_id.clone(),
            frames: case
                .sequence
                .frames
                .iter()
                .map(|f| stats.normalize_field(f).into_vec())
                .collect(),
            statics: case.statics.clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.statics.layout.nx(), self.statics.layout.ny())
    }
}

/// Reference to one training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub case: usize,
    pub start: usize,
    pub target_step_index: usize,
}

/// All sliding-window samples over a set of normalized cases.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub window: usize,
    pub cases: Vec<NormalizedCase>,
    pub samples: Vec<Sample>,
}

impl WindowSet {
    pub fn new(cases: Vec<NormalizedCase>, window: usize) -> Result<Self> {
        let mut samples = Vec::new();
        let shape = cases.first().map(|c| c.shape());
        for (ci, c) in cases.iter().enumerate() {
            if Some(c.shape()) != shape {
                return Err(Error::shape(format!("case {} grid differs from the first case", c.case_id)));
            }
            for k in window_starts(c.frames.len(), window)? {
                samples.push(Sample {
                    case: ci,
                    start: k,
                    target_step_index: k + window,
                });
            }
        }
        Ok(Self {
            window,
            cases,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input(&self, s: Sample) -> Tensor<f32> {
        let c = &self.cases[s.case];
        let frames: Vec<&[f32]> = c.frames[s.start..s.start + self.window].iter().map(|f| f.as_slice()).collect();
        build_window(&frames, s.start, &c.statics)
    }

    pub fn target(&self, s: Sample) -> &[f32] {
        &self.cases[s.case].frames[s.target_step_index]
    }

    /// Inputs `[B, T·4, H, W]` and targets `[B, 1, H, W]` for sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let inputs: Vec<Tensor<f32>> = indices.iter().map(|&i| self.input(self.samples[i])).collect();
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let x = Tensor::stack_batch(&refs);
        let (nx, ny) = self.cases[0].shape();
        let mut y = Vec::with_capacity(indices.len() * nx * ny);
        for &i in indices {
            y.extend_from_slice(self.target(self.samples[i]));
        }
        (x, Tensor::from_vec([indices.len(), 1, ny, nx], y))
    }
}

/// Reads the named cases of a dataset root.
pub fn load_cases(root: &Path, ids: &[String]) -> Result<Vec<CaseData>> {
    ids.iter().map(|id| read_case(&DatasetIndex::case_dir(root, id))).collect()
}
