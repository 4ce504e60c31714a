//! Shared data model: frames, tokens, memory snapshots and engine config.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One frame's dense feature grid, row-major `(h, w, c)`, plus the quality
/// signals produced upstream by the mask decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub predicted_iou: f32,
    pub object_present: bool,
    /// Set only on the user-prompted (GT) frame, which must open the stream.
    pub is_prompt: bool,
}

impl FeatureFrame {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// A pooled `(ĥ, ŵ, c)` token grid as stored in the memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFrame {
    pub frame_index: usize,
    pub pooled_height: usize,
    pub pooled_width: usize,
    pub channels: usize,
    pub tokens: Vec<f32>,
    pub is_gt: bool,
    /// Pre-pooling extent, kept so cost ratios can be taken against the raw bank.
    pub source_height: usize,
    pub source_width: usize,
}

impl CompressedFrame {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.pooled_height, self.pooled_width, self.channels)
    }

    pub fn token_count(&self) -> usize {
        self.pooled_height * self.pooled_width
    }

    pub fn source_token_count(&self) -> usize {
        self.source_height * self.source_width
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.pooled_width + col) * self.channels;
        &self.tokens[start..start + self.channels]
    }

    /// Token at flat row-major cell index.
    pub fn token_at(&self, cell: usize) -> &[f32] {
        &self.tokens[cell * self.channels..(cell + 1) * self.channels]
    }

    pub fn coord_at(&self, cell: usize) -> TokenCoord {
        TokenCoord {
            frame_index: self.frame_index,
            row: cell / self.pooled_width,
            col: cell % self.pooled_width,
        }
    }

    /// All tokens in row-major order with their provenance.
    pub fn to_tokens(&self) -> Vec<MemoryToken> {
        (0..self.token_count())
            .map(|cell| MemoryToken {
                coord: self.coord_at(cell),
                features: self.token_at(cell).to_vec(),
            })
            .collect()
    }
}

/// Position of a token on the pooled grid of a given frame.
///
/// The derived ordering (frame, row, col) is the selection tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenCoord {
    pub frame_index: usize,
    pub row: usize,
    pub col: usize,
}

impl TokenCoord {
    pub fn new(frame_index: usize, row: usize, col: usize) -> Self {
        Self {
            frame_index,
            row,
            col,
        }
    }
}

/// A motion-frame token with its cosine similarity to the anchor token.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredToken {
    pub coord: TokenCoord,
    pub features: Vec<f32>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryToken {
    pub coord: TokenCoord,
    pub features: Vec<f32>,
}

/// Attention-ready memory: the GT block followed by the selected motion tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySnapshot {
    pub gt_tokens: Vec<MemoryToken>,
    pub selected_tokens: Vec<MemoryToken>,
    pub channels: usize,
    /// Token count of the same bank before any pooling or selection (Σ h·w).
    pub baseline_tokens: usize,
}

impl MemorySnapshot {
    pub fn len(&self) -> usize {
        self.gt_tokens.len() + self.selected_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// GT tokens first, then selected tokens.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryToken> {
        self.gt_tokens.iter().chain(self.selected_tokens.iter())
    }

    /// Checks the structural invariants: no duplicated selected coordinate,
    /// no selected token drawn from the GT frame, channel widths consistent.
    pub fn check_invariants(&self) -> bool {
        let gt_frame = self.gt_tokens.first().map(|t| t.coord.frame_index);
        let mut seen = std::collections::HashSet::with_capacity(self.selected_tokens.len());
        for t in &self.selected_tokens {
            if Some(t.coord.frame_index) == gt_frame || !seen.insert(t.coord) {
                return false;
            }
        }
        self.iter().all(|t| t.features.len() == self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    Average,
    Max,
}

/// Which frame a motion token is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The preceding frame in bank order (GT for the oldest motion frame).
    Previous,
    Gt,
}

/// Where the Top-n budget applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalStrategy {
    /// Similarity scoring plus Top-n selection.
    TopnSelect,
    /// Every token of every banked frame.
    NoTmc,
    GtPlusLast,
    FirstPlusLast,
    /// All banked frames averaged into a single grid.
    MovingAverage,
    RetainGtFirstLast,
}

impl TemporalStrategy {
    pub const ALL: [TemporalStrategy; 6] = [
        TemporalStrategy::TopnSelect,
        TemporalStrategy::NoTmc,
        TemporalStrategy::GtPlusLast,
        TemporalStrategy::FirstPlusLast,
        TemporalStrategy::MovingAverage,
        TemporalStrategy::RetainGtFirstLast,
    ];

    pub fn requires_gt(self) -> bool {
        !matches!(
            self,
            TemporalStrategy::FirstPlusLast | TemporalStrategy::MovingAverage
        )
    }
}

macro_rules! cli_names {
    ($ty:ty, $($variant:path => [$($name:literal),+]),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($($name)|+ => Ok($variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

cli_names!(PoolingKind,
    PoolingKind::Average => ["avg", "average"],
    PoolingKind::Max => ["max"],
);
cli_names!(Anchor,
    Anchor::Previous => ["prev", "previous"],
    Anchor::Gt => ["gt"],
);
cli_names!(Scope,
    Scope::Global => ["global"],
    Scope::PerFrame => ["per-frame", "per_frame", "frame"],
);
cli_names!(TemporalStrategy,
    TemporalStrategy::TopnSelect => ["topn", "topn_select"],
    TemporalStrategy::NoTmc => ["no-tmc", "no_tmc"],
    TemporalStrategy::GtPlusLast => ["gt-last", "gt_plus_last"],
    TemporalStrategy::FirstPlusLast => ["first-last", "first_plus_last"],
    TemporalStrategy::MovingAverage => ["moving-avg", "moving_average"],
    TemporalStrategy::RetainGtFirstLast => ["gt-first-last", "retain_gt_first_last"],
);

/// Top-n selection budget. `Auto` resolves to one pooled frame's worth, ĥ·ŵ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Budget {
    #[default]
    Auto,
    Fixed(usize),
}

impl Budget {
    pub fn resolve(self, pooled_height: usize, pooled_width: usize) -> usize {
        match self {
            Budget::Auto => pooled_height * pooled_width,
            Budget::Fixed(n) => n,
        }
    }
}

impl FromStr for Budget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Budget::Auto);
        }
        s.parse::<usize>().map(Budget::Fixed).map_err(|_| {
            Error::InvalidConfig(format!("budget must be a count or 'auto', got '{s}'"))
        })
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Auto => f.write_str("auto"),
            Budget::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Budget::Auto => s.serialize_str("auto"),
            Budget::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(Budget::Fixed(n)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Engine configuration. Defaults reproduce the headline setup: 2×2 average
/// pooling, a 7-frame bank (GT + 6 recent), AUTO budget, Prev anchor, Global
/// scope, θ = 0.5, both quality gates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub pool_dh: usize,
    pub pool_dw: usize,
    pub pooling_kind: PoolingKind,
    /// Total frames held, GT included.
    pub bank_capacity: usize,
    pub selection_budget: Budget,
    pub anchor: Anchor,
    pub scope: Scope,
    pub temporal_strategy: TemporalStrategy,
    pub iou_threshold: f64,
    pub iou_gate: bool,
    pub absence_filter: bool,
    pub position_encoding: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            pool_dh: 2,
            pool_dw: 2,
            pooling_kind: PoolingKind::Average,
            bank_capacity: 7,
            selection_budget: Budget::Auto,
            anchor: Anchor::Previous,
            scope: Scope::Global,
            temporal_strategy: TemporalStrategy::TopnSelect,
            iou_threshold: 0.5,
            iou_gate: true,
            absence_filter: true,
            position_encoding: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_dh == 0 || self.pool_dw == 0 {
            return Err(Error::InvalidConfig("pool size must be positive".into()));
        }
        if self.bank_capacity == 0 {
            return Err(Error::InvalidConfig(
                "bank capacity must be positive".into(),
            ));
        }
        if self.selection_budget == Budget::Fixed(0) {
            return Err(Error::InvalidConfig(
                "selection budget must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    /// Motion slots in the FIFO part of the bank.
    pub fn motion_capacity(&self) -> usize {
        self.bank_capacity.saturating_sub(1)
    }

    /// Copy with the AUTO budget expanded for frames of the given raw extent.
    pub fn resolved(&self, height: usize, width: usize) -> Result<EngineConfig> {
        check_divisible(height, width, self)?;
        let n = self
            .selection_budget
            .resolve(height / self.pool_dh, width / self.pool_dw);
        Ok(EngineConfig {
            selection_budget: Budget::Fixed(n),
            ..self.clone()
        })
    }
}

pub(crate) fn check_divisible(height: usize, width: usize, config: &EngineConfig) -> Result<()> {
    if config.pool_dh == 0 || config.pool_dw == 0 {
        return Err(Error::InvalidConfig("pool size must be positive".into()));
    }
    if !height.is_multiple_of(config.pool_dh) {
        return Err(Error::PoolingDivisibility {
            axis: "height",
            extent: height,
            window: config.pool_dh,
        });
    }
    if !width.is_multiple_of(config.pool_dw) {
        return Err(Error::PoolingDivisibility {
            axis: "width",
            extent: width,
            window: config.pool_dw,
        });
    }
    Ok(())
}

/// Accepts a frame iff its dims are consistent, the IoU is in range and the
/// pooling window tiles the grid exactly.
pub fn validate_frame(frame: &FeatureFrame, config: &EngineConfig) -> Result<()> {
    let (h, w, c) = frame.dims();
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::ZeroExtent { h, w, c });
    }
    let expected = h * w * c;
    if frame.data.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: frame.data.len(),
        });
    }
    if !(0.0..=1.0).contains(&frame.predicted_iou) {
        return Err(Error::IouOutOfRange(frame.predicted_iou));
    }
    check_divisible(h, w, config)
}
