//! Sliding-window autoregressive rollout.
//!
//! Every step re-runs the recurrent core from a zero hidden state over the
//! current window. Encoder activations depend only on a single frame, so
//! they are computed once per frame and reused while the frame stays in the
//! window; the result is identical to calling [`Model::predict`] on each
//! window.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dataset::{self, build_frame, build_window, CaseManifest, CaseStatics, NormalizationStats};
use crate::error::{Error, Result};
use crate::euler2d::FrameSequence;
use crate::field::Field2;
use crate::network::{FrameFeatures, Model};
use crate::scenario::GridSpec;

pub const ROLLOUT_FILE: &str = "rollout.json";
/// Wall-clock measurements live apart from the reproducible artifacts.
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The input window still held at least one ground-truth frame.
    Seeded,
    /// The input window held predictions only.
    Autoregressive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    /// Absolute step index of the predicted frame.
    pub step: usize,
    pub provenance: Provenance,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutResult {
    /// Absolute step index of `initial[0]`.
    pub first_step: usize,
    pub window: usize,
    /// Normalized predictions, one per completed step.
    pub normalized: Vec<Vec<f32>>,
    pub steps: Vec<RolloutStep>,
    /// Absolute step whose prediction was non-finite, if the rollout stopped early.
    pub diverged_at: Option<usize>,
}

impl RolloutResult {
    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Absolute step index of the first predicted frame.
    pub fn first_predicted_step(&self) -> usize {
        self.first_step + self.window
    }

    pub fn total_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }

    /// Predicted frames in Pa.
    pub fn denormalized(&self, stats: &NormalizationStats, nx: usize, ny: usize) -> Vec<Field2<f32>> {
        self.normalized
            .iter()
            .map(|f| stats.denormalize_field(&Field2::from_vec(nx, ny, f.clone())))
            .collect()
    }
}

/// Predicts `n_steps` frames after the `T` normalized `initial` frames.
/// A non-finite prediction stops the rollout; the partial result carries
/// the failing step in `diverged_at`.
pub fn rollout(
    model: &Model<f32>,
    initial: &[Vec<f32>],
    first_step: usize,
    statics: &CaseStatics,
    n_steps: usize,
) -> Result<RolloutResult> {
    let t = model.config.window;
    if initial.len() != t {
        return Err(Error::shape(format!("{} initial frames, window is {t}", initial.len())));
    }
    if n_steps == 0 {
        return Err(Error::config("rollout needs at least one step"));
    }
    let cells = statics.layout.len();
    if let Some(f) = initial.iter().find(|f| f.len() != cells) {
        return Err(Error::shape(format!("initial frame has {} cells, statics have {cells}", f.len())));
    }
    model
        .config
        .check_spatial(statics.layout.ny(), statics.layout.nx())?;

    let (nx, ny) = (statics.layout.nx(), statics.layout.ny());
    let mut cache: VecDeque<FrameFeatures<f32>> = initial
        .iter()
        .enumerate()
        .map(|(k, f)| model.encode_frame(&build_frame(f, first_step + k, statics)))
        .collect();
    let mut out = RolloutResult {
        first_step,
        window: t,
        normalized: Vec::with_capacity(n_steps),
        steps: Vec::with_capacity(n_steps),
        diverged_at: None,
    };
    for k in 0..n_steps {
        let step = first_step + t + k;
        let clock = Instant::now();
        let refs: Vec<&FrameFeatures<f32>> = cache.iter().collect();
        let pred = model.predict_from_features(&refs)?;
        debug_assert_eq!(pred.shape(), [1, 1, ny, nx]);
        let frame = pred.into_vec();
        if frame.iter().any(|v| !v.is_finite()) {
            log::warn!("rollout diverged at step {step}");
            out.diverged_at = Some(step);
            break;
        }
        if k + 1 < n_steps {
            cache.pop_front();
            cache.push_back(model.encode_frame(&build_frame(&frame, step, statics)));
        }
        out.steps.push(RolloutStep {
            step,
            provenance: if k < t {
                Provenance::Seeded
            } else {
                Provenance::Autoregressive
            },
            seconds: clock.elapsed().as_secs_f64(),
        });
        out.normalized.push(frame);
    }
    Ok(out)
}

/// Reference rollout that rebuilds and re-encodes the full window each step.
pub fn rollout_uncached(
    model: &Model<f32>,
    initial: &[Vec<f32>],
    first_step: usize,
    statics: &CaseStatics,
    n_steps: usize,
) -> Result<Vec<Vec<f32>>> {
    let t = model.config.window;
    let mut window: VecDeque<Vec<f32>> = initial.iter().cloned().collect();
    let mut out = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let refs: Vec<&[f32]> = window.iter().map(|f| f.as_slice()).collect();
        let x = build_window(&refs, first_step + k, statics);
        let frame = model.predict(&x)?.into_vec();
        if frame.iter().any(|v| !v.is_finite()) {
            break;
        }
        window.pop_front();
        window.push_back(frame.clone());
        out.push(frame);
        debug_assert_eq!(window.len(), t);
    }
    Ok(out)
}

/// `rollout.json` beside the predicted frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutManifest {
    pub source_case: String,
    /// Ground-truth frames `[start, end)` that seeded the rollout.
    pub seed_window: [usize; 2],
    pub first_predicted_step: usize,
    pub n_predicted: usize,
    pub diverged_at: Option<usize>,
    pub p_min: f64,
    pub p_max: f64,
    pub provenance: Vec<Provenance>,
}

/// Writes a rollout as a case directory: `frames.bin` holds the seed frames
/// followed by the predictions (Pa); file frame 0 is absolute step
/// `seed_window[0]`.
pub fn write_rollout(
    dir: &Path,
    source_case: &str,
    grid: GridSpec,
    dt_out: f64,
    seed_frames: &[Field2<f32>],
    result: &RolloutResult,
    stats: &NormalizationStats,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut frames = seed_frames.to_vec();
    frames.extend(result.denormalized(stats, grid.nx, grid.ny));
    let seq = FrameSequence {
        case_id: format!("{source_case}_rollout"),
        grid,
        dt_out,
        frames,
    };
    let manifest = CaseManifest::for_sequence(&seq, None);
    binio::write_json(&dir.join(dataset::MANIFEST_FILE), &manifest)?;
    dataset::write_frames(dir, &seq)?;
    let rm = RolloutManifest {
        source_case: source_case.to_string(),
        seed_window: [result.first_step, result.first_step + result.window],
        first_predicted_step: result.first_predicted_step(),
        n_predicted: result.len(),
        diverged_at: result.diverged_at,
        p_min: stats.p_min,
        p_max: stats.p_max,
        provenance: result.steps.iter().map(|s| s.provenance).collect(),
    };
    binio::write_json(&dir.join(ROLLOUT_FILE), &rm)?;
    let mut timing = String::from("step,seconds\n");
    for s in &result.steps {
        timing.push_str(&format!("{},{:e}\n", s.step, s.seconds));
    }
    std::fs::write(dir.join(TIMING_FILE), timing)?;
    Ok(())
}

pub fn read_rollout(dir: &Path) -> Result<(RolloutManifest, FrameSequence)> {
    let rm: RolloutManifest = binio::read_json(&dir.join(ROLLOUT_FILE))?;
    let m = dataset::read_manifest(dir)?;
    let seq = dataset::read_frames(dir, &m)?;
    if seq.len() != rm.seed_window[1] - rm.seed_window[0] + rm.n_predicted {
        return Err(Error::corrupt(dir, "rollout frame count disagrees with rollout.json"));
    }
    Ok((rm, seq))
}
