//! Synthetic feature streams with known motion, and the end-to-end driver
//! that runs them through pooling, gating, temporal compression and
//! cross-attention while recording per-frame metrics.
//!
//! Streams are drawn from a seeded `Xoshiro256PlusPlus`: one static
//! background texture, then per-frame Gaussian noise, plus a disc-shaped blob
//! that moves over a cell grid with toroidal wrap-around.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::attention::{cross_attend_tokens, AttentionOutput};
use crate::bank::{AdmissionDecision, AdmissionReason, BankState};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::spatial::pool_frame_with;
use crate::temporal::{assemble_memory_with, SelectionResult};
use crate::types::{Anchor, CompressedFrame, EngineConfig, FeatureFrame, MemorySnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    /// Disc radius in cells.
    pub radius: usize,
    /// Cells moved per frame, (rows, cols).
    pub velocity: [i64; 2],
    /// Added to every channel of every pixel the blob covers.
    pub amplitude: f32,
    /// Center cell at frame 0; defaults to the grid center.
    pub start: Option<[usize; 2]>,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            radius: 3,
            velocity: [1, 1],
            amplitude: 1.0,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IouSchedule {
    Constant(f32),
    PerFrame(Vec<f32>),
}

impl Default for IouSchedule {
    fn default() -> Self {
        IouSchedule::Constant(0.9)
    }
}

/// Scenario description. The default is the reference 64×64×16, 40-frame
/// stream with a radius-3 blob moving diagonally at σ = 0.1, seed 42.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_count: usize,
    pub seed: u64,
    /// Pixel extent of one blob cell, (rows, cols).
    pub cell_size: [usize; 2],
    pub blob: BlobSpec,
    /// Std-dev of the per-frame noise.
    pub noise_sigma: f32,
    /// Std-dev of the static background texture shared by every frame.
    pub background_sigma: f32,
    /// Inclusive frame ranges where the object is absent.
    pub occlusion_windows: Vec<[usize; 2]>,
    pub iou_schedule: IouSchedule,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 16,
            frame_count: 40,
            seed: 42,
            cell_size: [2, 2],
            blob: BlobSpec::default(),
            noise_sigma: 0.1,
            background_sigma: 1.0,
            occlusion_windows: Vec::new(),
            iou_schedule: IouSchedule::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn cell_grid(&self) -> (usize, usize) {
        (
            self.height / self.cell_size[0],
            self.width / self.cell_size[1],
        )
    }

    pub fn is_occluded(&self, frame: usize) -> bool {
        self.occlusion_windows
            .iter()
            .any(|&[start, end]| (start..=end).contains(&frame))
    }

    pub fn iou_at(&self, frame: usize) -> f32 {
        match &self.iou_schedule {
            IouSchedule::Constant(v) => *v,
            IouSchedule::PerFrame(v) => v[frame],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [ch, cw] = self.cell_size;
        if self.height == 0 || self.width == 0 || self.channels == 0 || ch == 0 || cw == 0 {
            return Err(Error::InvalidConfig(
                "scenario dims must be positive".into(),
            ));
        }
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig(
                "scenario needs at least one frame".into(),
            ));
        }
        if !self.height.is_multiple_of(ch) || !self.width.is_multiple_of(cw) {
            return Err(Error::InvalidConfig(format!(
                "cell size {ch}x{cw} does not tile {}x{}",
                self.height, self.width
            )));
        }
        let (rows, cols) = self.cell_grid();
        if 2 * self.blob.radius + 1 > rows.min(cols) {
            return Err(Error::BlobTooLarge {
                radius: self.blob.radius,
                rows,
                cols,
            });
        }
        if let IouSchedule::PerFrame(v) = &self.iou_schedule {
            if v.len() < self.frame_count {
                return Err(Error::InvalidConfig(format!(
                    "iou schedule has {} entries for {} frames",
                    v.len(),
                    self.frame_count
                )));
            }
        }
        let bad_iou = match &self.iou_schedule {
            IouSchedule::Constant(v) => !(0.0..=1.0).contains(v),
            IouSchedule::PerFrame(v) => v.iter().any(|x| !(0.0..=1.0).contains(x)),
        };
        if bad_iou {
            return Err(Error::InvalidConfig(
                "iou schedule values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Blob occupancy per frame on the scenario's cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub cell_size: [usize; 2],
    pub cell_rows: usize,
    pub cell_cols: usize,
    pub occupancy: Vec<Vec<bool>>,
    /// Cells whose occupancy differs from the previous stream frame.
    pub moved: Vec<Vec<bool>>,
}

impl GroundTruth {
    /// Marks cells of a `(h/dh) × (w/dw)` grid whose pixels' blob occupancy
    /// differs between frames `a` and `b`.
    pub fn changed_cells(&self, a: usize, b: usize, dh: usize, dw: usize) -> Vec<bool> {
        let (rows, cols) = (self.height / dh, self.width / dw);
        let mut changed = vec![false; rows * cols];
        let (oa, ob) = (&self.occupancy[a], &self.occupancy[b]);
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = (r / self.cell_size[0]) * self.cell_cols + c / self.cell_size[1];
                if oa[cell] != ob[cell] {
                    changed[(r / dh) * cols + c / dw] = true;
                }
            }
        }
        changed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub frames: Vec<FeatureFrame>,
    pub truth: GroundTruth,
}

fn blob_occupancy(spec: &ScenarioSpec, frame: usize) -> Vec<bool> {
    let (rows, cols) = spec.cell_grid();
    let mut occ = vec![false; rows * cols];
    if spec.is_occluded(frame) {
        return occ;
    }
    let [sr, sc] = spec.blob.start.unwrap_or([rows / 2, cols / 2]);
    let t = frame as i64;
    let cr = (sr as i64 + t * spec.blob.velocity[0]).rem_euclid(rows as i64) as usize;
    let cc = (sc as i64 + t * spec.blob.velocity[1]).rem_euclid(cols as i64) as usize;
    let r2 = spec.blob.radius * spec.blob.radius;
    for r in 0..rows {
        let dr = r.abs_diff(cr).min(rows - r.abs_diff(cr));
        for c in 0..cols {
            let dc = c.abs_diff(cc).min(cols - c.abs_diff(cc));
            occ[r * cols + c] = dr * dr + dc * dc <= r2;
        }
    }
    occ
}

/// Generates the stream described by `spec`. Frame 0 is the prompted frame.
pub fn generate_stream(spec: &ScenarioSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let (rows, cols) = spec.cell_grid();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut gaussian = |sigma: f32, len: usize| -> Vec<f32> {
        if sigma == 0.0 {
            return vec![0.0; len];
        }
        (0..len)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * sigma as f64) as f32)
            .collect()
    };
    let background = gaussian(spec.background_sigma, h * w * c);

    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut occupancy = Vec::with_capacity(spec.frame_count);
    for f in 0..spec.frame_count {
        let occ = blob_occupancy(spec, f);
        let mut data = gaussian(spec.noise_sigma, h * w * c);
        for (i, v) in data.iter_mut().enumerate() {
            let px = i / c;
            let cell = (px / w / spec.cell_size[0]) * cols + (px % w) / spec.cell_size[1];
            *v += background[i];
            if occ[cell] {
                *v += spec.blob.amplitude;
            }
        }
        frames.push(FeatureFrame {
            frame_index: f,
            height: h,
            width: w,
            channels: c,
            data,
            predicted_iou: spec.iou_at(f),
            object_present: !spec.is_occluded(f),
            is_prompt: f == 0,
        });
        occupancy.push(occ);
    }
    let moved = (0..spec.frame_count)
        .map(|f| {
            if f == 0 {
                vec![false; rows * cols]
            } else {
                occupancy[f]
                    .iter()
                    .zip(&occupancy[f - 1])
                    .map(|(a, b)| a != b)
                    .collect()
            }
        })
        .collect();
    Ok(SyntheticStream {
        frames,
        truth: GroundTruth {
            height: h,
            width: w,
            cell_size: spec.cell_size,
            cell_rows: rows,
            cell_cols: cols,
            occupancy,
            moved,
        },
    })
}

/// Everything one pipeline step produced.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub frame_index: usize,
    pub decision: AdmissionDecision,
    pub pooled: CompressedFrame,
    pub bank_frames: Vec<CompressedFrame>,
    pub bank_full: bool,
    pub selection: SelectionResult,
    pub attention: AttentionOutput,
}

/// Streaming driver: pool → gate/admit → assemble memory → cross-attend.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: EngineConfig,
    exec: Execution,
    bank: BankState,
    pinned: Option<(usize, usize, usize)>,
}

impl Pipeline {
    pub fn new(config: EngineConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            bank: BankState::from_config(&config),
            config,
            exec,
            pinned: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn bank(&self) -> &BankState {
        &self.bank
    }

    pub fn step(&mut self, frame: &FeatureFrame) -> Result<StepOutput> {
        match self.pinned {
            None => {
                if !frame.is_prompt {
                    return Err(Error::MissingGtFrame);
                }
                self.pinned = Some(frame.dims());
            }
            Some(expected) if expected != frame.dims() => {
                return Err(Error::DimsMismatch {
                    expected,
                    actual: frame.dims(),
                });
            }
            Some(_) => {}
        }
        let pooled = pool_frame_with(frame, &self.config, self.exec)?;
        let decision = self.bank.admit(frame, &pooled, &self.config)?;
        let bank_frames = self.bank.snapshot_frames();
        let selection = assemble_memory_with(&bank_frames, &self.config, self.exec)?;
        let attention = cross_attend_tokens(
            &pooled.to_tokens(),
            &selection.snapshot,
            &self.config,
            self.exec,
        )?;
        Ok(StepOutput {
            frame_index: frame.frame_index,
            decision,
            pooled,
            bank_full: self.bank.is_full(),
            bank_frames,
            selection,
            attention,
        })
    }
}

/// Candidate/motion bookkeeping for one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallSample {
    /// One flag per motion-frame token in bank order: did its cell change
    /// relative to the anchor frame?
    pub candidate_moved: Vec<bool>,
    /// Selected tokens that are motion candidates.
    pub selected_candidates: usize,
    /// Selected candidates whose cell changed.
    pub hits: usize,
}

impl RecallSample {
    pub fn moved_count(&self) -> usize {
        self.candidate_moved.iter().filter(|&&m| m).count()
    }

    /// `hits / max(1, moved ∩ candidates)`.
    pub fn recall(&self) -> f64 {
        self.hits as f64 / self.moved_count().max(1) as f64
    }
}

/// Changed-cell flags of each motion frame against its anchor (predecessor in
/// bank order, or the GT frame).
pub fn recall_sample(
    bank_frames: &[CompressedFrame],
    snapshot: &MemorySnapshot,
    truth: &GroundTruth,
    config: &EngineConfig,
) -> RecallSample {
    let motion_start = usize::from(bank_frames.first().is_some_and(|f| f.is_gt));
    let mut candidate_moved = Vec::new();
    let mut moved_lookup = std::collections::HashMap::new();
    for k in motion_start..bank_frames.len() {
        let frame = &bank_frames[k];
        let anchor = match (config.anchor, k) {
            (_, 0) => continue,
            (Anchor::Previous, _) => &bank_frames[k - 1],
            (Anchor::Gt, _) => &bank_frames[0],
        };
        let changed = truth.changed_cells(
            frame.frame_index,
            anchor.frame_index,
            config.pool_dh,
            config.pool_dw,
        );
        for (cell, &m) in changed.iter().enumerate() {
            moved_lookup.insert(frame.coord_at(cell), m);
        }
        candidate_moved.extend(changed);
    }
    let mut selected_candidates = 0;
    let mut hits = 0;
    for t in &snapshot.selected_tokens {
        if let Some(&m) = moved_lookup.get(&t.coord) {
            selected_candidates += 1;
            hits += usize::from(m);
        }
    }
    RecallSample {
        candidate_moved,
        selected_candidates,
        hits,
    }
}

/// Expected recall of drawing the same number of candidates uniformly at
/// random, estimated from `draws` Monte-Carlo samples.
pub fn uniform_recall_baseline(
    sample: &RecallSample,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> f64 {
    let moved = sample.moved_count();
    let k = sample.selected_candidates.min(sample.candidate_moved.len());
    if draws == 0 || moved == 0 {
        return 0.0;
    }
    let recalls = map_indexed(exec, draws, |d| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(
            seed ^ (d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut pool = sample.candidate_moved.clone();
        let (chosen, _) = pool.partial_shuffle(&mut rng, k);
        chosen.iter().filter(|&&m| m).count() as f64 / moved as f64
    });
    recalls.iter().sum::<f64>() / draws as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_index: usize,
    pub admitted: bool,
    pub reason: AdmissionReason,
    pub memory_tokens: usize,
    pub compression_ratio: f64,
    /// None without ground truth.
    pub motion_recall: Option<f64>,
    pub mac_count: u64,
    #[serde(skip)]
    pub bank_full: bool,
    #[serde(skip)]
    pub moved_candidates: usize,
    #[serde(skip)]
    pub uniform_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub frames: usize,
    pub admitted: usize,
    pub rejected_absent: usize,
    pub rejected_low_iou: usize,
    pub mean_compression_ratio: f64,
    /// Values at the last frame processed with a full bank.
    pub steady_state_memory_tokens: Option<usize>,
    pub steady_state_ratio: Option<f64>,
    /// Mean over frames that had at least one changed candidate cell.
    pub mean_motion_recall: Option<f64>,
    pub uniform_baseline_recall: Option<f64>,
    pub recall_frames: usize,
    pub total_macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub frames: Vec<FrameMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub exec: Execution,
    pub baseline_draws: usize,
    pub baseline_seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            exec: Execution::default(),
            baseline_draws: 1000,
            baseline_seed: 0x5EED,
        }
    }
}

pub fn run_pipeline(
    stream: &[FeatureFrame],
    truth: Option<&GroundTruth>,
    config: &EngineConfig,
    options: RunOptions,
) -> Result<RunMetrics> {
    if stream.is_empty() {
        return Err(Error::InvalidConfig("empty stream".into()));
    }
    let mut pipeline = Pipeline::new(config.clone(), options.exec)?;
    let mut frames = Vec::with_capacity(stream.len());
    for frame in stream {
        let step = pipeline.step(frame)?;
        let snapshot = &step.selection.snapshot;
        let (motion_recall, moved_candidates, uniform_recall) = match truth {
            Some(truth) => {
                let sample = recall_sample(&step.bank_frames, snapshot, truth, config);
                let moved = sample.moved_count();
                let uniform = (moved > 0).then(|| {
                    uniform_recall_baseline(
                        &sample,
                        options.baseline_draws,
                        options.baseline_seed ^ (frame.frame_index as u64) << 32,
                        options.exec,
                    )
                });
                (Some(sample.recall()), moved, uniform)
            }
            None => (None, 0, None),
        };
        frames.push(FrameMetrics {
            frame_index: frame.frame_index,
            admitted: step.decision.admitted,
            reason: step.decision.reason,
            memory_tokens: snapshot.len(),
            compression_ratio: step.attention.cost.compression_ratio,
            motion_recall,
            mac_count: step.attention.cost.mac_count,
            bank_full: step.bank_full,
            moved_candidates,
            uniform_recall,
        });
    }

    let bank = pipeline.bank();
    let steady = frames.iter().rev().find(|f| f.bank_full);
    let recall_frames: Vec<&FrameMetrics> =
        frames.iter().filter(|f| f.moved_candidates > 0).collect();
    let mean = |vals: Vec<f64>| -> Option<f64> {
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let aggregate = AggregateMetrics {
        frames: frames.len(),
        admitted: bank.admitted_count,
        rejected_absent: bank.rejected_absent_count,
        rejected_low_iou: bank.rejected_iou_count,
        mean_compression_ratio: frames.iter().map(|f| f.compression_ratio).sum::<f64>()
            / frames.len() as f64,
        steady_state_memory_tokens: steady.map(|f| f.memory_tokens),
        steady_state_ratio: steady.map(|f| f.compression_ratio),
        mean_motion_recall: mean(
            recall_frames
                .iter()
                .filter_map(|f| f.motion_recall)
                .collect(),
        ),
        uniform_baseline_recall: mean(
            recall_frames
                .iter()
                .filter_map(|f| f.uniform_recall)
                .collect(),
        ),
        recall_frames: recall_frames.len(),
        total_macs: frames.iter().map(|f| f.mac_count).sum(),
    };
    Ok(RunMetrics { frames, aggregate })
}
