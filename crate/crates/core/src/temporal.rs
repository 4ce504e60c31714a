//! Cross-frame redundancy removal.
//!
//! Each motion token is scored by cosine similarity against the token at the
//! same pooled cell of its anchor frame; the least similar tokens carry the
//! most motion and are the ones kept. The GT frame is always kept whole.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::types::{
    Anchor, CompressedFrame, EngineConfig, MemorySnapshot, MemoryToken, Scope, ScoredToken,
    TemporalStrategy,
};

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub snapshot: MemorySnapshot,
    /// Every scored candidate, in scoring order. Empty for strategies that do
    /// not score.
    pub scores: Vec<ScoredToken>,
    /// Number of motion-side tokens placed in the snapshot.
    pub budget_used: usize,
}

/// Cosine similarity in f64. A (near) zero vector on either side scores 1.0,
/// so featureless tokens rank as fully redundant.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu.sqrt() < ZERO_NORM || nv.sqrt() < ZERO_NORM {
        return 1.0;
    }
    // sqrt(nu * nv) rather than sqrt(nu) * sqrt(nv): identical inputs then
    // give exactly 1.0.
    (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0)
}

/// Total ranking order used by every selection path: ascending similarity,
/// then ascending (frame, row, col).
pub fn rank_order(a: &ScoredToken, b: &ScoredToken) -> Ordering {
    a.similarity
        .total_cmp(&b.similarity)
        .then_with(|| a.coord.cmp(&b.coord))
}

fn check_shapes(frames: &[CompressedFrame]) -> Result<()> {
    if let Some(first) = frames.first() {
        for f in &frames[1..] {
            if f.dims() != first.dims() {
                return Err(Error::ShapeMismatch {
                    expected: first.dims(),
                    actual: f.dims(),
                });
            }
        }
    }
    Ok(())
}

pub fn similarity_scores(frames: &[CompressedFrame], anchor: Anchor) -> Result<Vec<ScoredToken>> {
    similarity_scores_with(frames, anchor, Execution::default())
}

/// Scores every cell of `frames[1..]` against its anchor. `frames[0]` is the
/// reference (GT) frame; with [`Anchor::Previous`] the oldest motion frame is
/// compared against it and every later frame against its predecessor.
pub fn similarity_scores_with(
    frames: &[CompressedFrame],
    anchor: Anchor,
    exec: Execution,
) -> Result<Vec<ScoredToken>> {
    if frames.len() < 2 {
        return Err(Error::EmptyMotionSet);
    }
    check_shapes(frames)?;
    let cells = frames[0].token_count();
    let motion = frames.len() - 1;
    Ok(map_indexed(exec, motion * cells, |i| {
        let k = 1 + i / cells;
        let cell = i % cells;
        let frame = &frames[k];
        let reference = match anchor {
            Anchor::Previous => &frames[k - 1],
            Anchor::Gt => &frames[0],
        };
        let features = frame.token_at(cell);
        ScoredToken {
            coord: frame.coord_at(cell),
            features: features.to_vec(),
            similarity: cosine_similarity(features, reference.token_at(cell)),
        }
    }))
}

fn to_memory(t: &ScoredToken) -> MemoryToken {
    MemoryToken {
        coord: t.coord,
        features: t.features.clone(),
    }
}

/// Indices of the `n` lowest-ranked candidates, in rank order.
fn lowest_n(scores: &[ScoredToken], mut idx: Vec<usize>, n: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| rank_order(&scores[*a], &scores[*b]);
    if n == 0 {
        return Vec::new();
    }
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, cmp);
        idx.truncate(n);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Per-frame quotas: ⌊n/m⌋ each, the `n mod m` remainder to the most recent
/// frames. A frame short on supply spills its surplus to the newest frames
/// that still have candidates, so quotas sum to `min(n, supply)`.
pub fn per_frame_quotas(supply: &[usize], n: usize) -> Vec<usize> {
    let m = supply.len();
    if m == 0 {
        return Vec::new();
    }
    let total: usize = supply.iter().sum();
    let n = n.min(total);
    let (base, extra) = (n / m, n % m);
    let mut quotas: Vec<usize> = (0..m)
        .map(|k| base + usize::from(k >= m - extra))
        .zip(supply)
        .map(|(q, &s)| q.min(s))
        .collect();
    let mut leftover = n - quotas.iter().sum::<usize>();
    while leftover > 0 {
        for k in (0..m).rev() {
            if leftover == 0 {
                break;
            }
            if quotas[k] < supply[k] {
                quotas[k] += 1;
                leftover -= 1;
            }
        }
    }
    quotas
}

/// Keeps the `n` least similar candidates (Top-n in ascending similarity) and
/// assembles `[GT tokens, selected tokens]`.
///
/// `frames` supplies the GT block: the first frame flagged `is_gt`, emitted in
/// row-major order. Selected tokens follow rank order (global scope) or
/// oldest-to-newest frame order with rank order inside each frame (per-frame
/// scope).
pub fn select_topn(
    scores: Vec<ScoredToken>,
    frames: &[CompressedFrame],
    n: usize,
    scope: Scope,
) -> SelectionResult {
    let chosen: Vec<usize> = match scope {
        Scope::Global => lowest_n(&scores, (0..scores.len()).collect(), n),
        Scope::PerFrame => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, s) in scores.iter().enumerate() {
                groups.entry(s.coord.frame_index).or_default().push(i);
            }
            let supply: Vec<usize> = groups.values().map(Vec::len).collect();
            let quotas = per_frame_quotas(&supply, n);
            groups
                .into_values()
                .zip(quotas)
                .flat_map(|(idx, q)| lowest_n(&scores, idx, q))
                .collect()
        }
    };

    let gt = frames.iter().find(|f| f.is_gt);
    let channels = frames
        .first()
        .map(|f| f.channels)
        .or_else(|| scores.first().map(|s| s.features.len()))
        .unwrap_or(0);
    let snapshot = MemorySnapshot {
        gt_tokens: gt.map(CompressedFrame::to_tokens).unwrap_or_default(),
        selected_tokens: chosen.iter().map(|&i| to_memory(&scores[i])).collect(),
        channels,
        baseline_tokens: frames.iter().map(CompressedFrame::source_token_count).sum(),
    };
    SelectionResult {
        budget_used: snapshot.selected_tokens.len(),
        snapshot,
        scores,
    }
}

pub fn assemble_memory(
    bank_frames: &[CompressedFrame],
    config: &EngineConfig,
) -> Result<SelectionResult> {
    assemble_memory_with(bank_frames, config, Execution::default())
}

/// Builds the attention memory from the bank contents (GT first, then motion
/// frames oldest to newest) according to `config.temporal_strategy`.
pub fn assemble_memory_with(
    bank_frames: &[CompressedFrame],
    config: &EngineConfig,
    exec: Execution,
) -> Result<SelectionResult> {
    check_shapes(bank_frames)?;
    let strategy = config.temporal_strategy;
    let (gt, motion) = match bank_frames.split_first() {
        Some((first, rest)) if first.is_gt => (Some(first), rest),
        _ => (None, bank_frames),
    };
    if gt.is_none() && strategy.requires_gt() {
        return Err(Error::MissingGtFrame);
    }
    if bank_frames.is_empty() {
        return Err(Error::EmptyBank);
    }
    let channels = bank_frames[0].channels;
    let baseline_tokens = bank_frames
        .iter()
        .map(CompressedFrame::source_token_count)
        .sum();
    let whole = |frames: &[&CompressedFrame]| -> Vec<MemoryToken> {
        frames.iter().flat_map(|f| f.to_tokens()).collect()
    };
    let gt_block = || gt.map(CompressedFrame::to_tokens).unwrap_or_default();
    let ends = || -> Vec<&CompressedFrame> {
        match motion {
            [] => vec![],
            [only] => vec![only],
            [first, .., last] => vec![first, last],
        }
    };

    let (gt_tokens, selected_tokens, scores) = match strategy {
        TemporalStrategy::TopnSelect => {
            if motion.is_empty() {
                (gt_block(), Vec::new(), Vec::new())
            } else {
                let scores = similarity_scores_with(bank_frames, config.anchor, exec)?;
                let first = &bank_frames[0];
                let n = config
                    .selection_budget
                    .resolve(first.pooled_height, first.pooled_width);
                let result = select_topn(scores, bank_frames, n, config.scope);
                return Ok(result);
            }
        }
        TemporalStrategy::NoTmc => (
            gt_block(),
            whole(&motion.iter().collect::<Vec<_>>()),
            Vec::new(),
        ),
        TemporalStrategy::GtPlusLast => (
            gt_block(),
            whole(&motion.last().into_iter().collect::<Vec<_>>()),
            Vec::new(),
        ),
        TemporalStrategy::FirstPlusLast => {
            if motion.is_empty() {
                (gt_block(), Vec::new(), Vec::new())
            } else {
                (Vec::new(), whole(&ends()), Vec::new())
            }
        }
        TemporalStrategy::RetainGtFirstLast => (gt_block(), whole(&ends()), Vec::new()),
        TemporalStrategy::MovingAverage => (Vec::new(), temporal_mean(bank_frames), Vec::new()),
    };

    let snapshot = MemorySnapshot {
        gt_tokens,
        selected_tokens,
        channels,
        baseline_tokens,
    };
    Ok(SelectionResult {
        budget_used: snapshot.selected_tokens.len(),
        snapshot,
        scores,
    })
}

/// Collapses all frames into one grid by the per-element arithmetic mean.
/// Tokens are stamped with the newest frame's index.
fn temporal_mean(frames: &[CompressedFrame]) -> Vec<MemoryToken> {
    let newest = frames.last().expect("non-empty bank");
    let count = frames.len() as f64;
    let mut sum = vec![0.0f64; newest.tokens.len()];
    for f in frames {
        for (s, &v) in sum.iter_mut().zip(&f.tokens) {
            *s += v as f64;
        }
    }
    let c = newest.channels;
    sum.chunks_exact(c)
        .enumerate()
        .map(|(cell, acc)| MemoryToken {
            coord: newest.coord_at(cell),
            features: acc.iter().map(|&s| (s / count) as f32).collect(),
        })
        .collect()
}
