//! Reference single-head cross-attention of current-frame tokens over the
//! compressed memory, with sinusoidal (frame, row, col) position codes and
//! exact multiply-accumulate accounting.
//!
//! Q, K and V are the raw features (no learned projections). Position codes
//! are added to Q and K only, so attending to a single key returns that key's
//! features unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::spatial::pooled_token_count;
use crate::types::{
    CompressedFrame, EngineConfig, MemorySnapshot, MemoryToken, TemporalStrategy, TokenCoord,
};

const PE_BASE: f64 = 10_000.0;

/// Token and compute accounting for one cross-attention call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub query_tokens: usize,
    pub memory_tokens: usize,
    pub channels: usize,
    /// 2·N_q·N_kv·c: one MAC per channel for QKᵀ plus one for the weighted sum of V.
    pub mac_count: u64,
    /// Tokens of the same bank with neither pooling nor selection (t·h·w).
    pub baseline_tokens: usize,
    pub compression_ratio: f64,
}

impl CostReport {
    pub fn new(
        query_tokens: usize,
        memory_tokens: usize,
        channels: usize,
        baseline_tokens: usize,
    ) -> Self {
        let compression_ratio = if baseline_tokens == 0 {
            0.0
        } else {
            memory_tokens as f64 / baseline_tokens as f64
        };
        Self {
            query_tokens,
            memory_tokens,
            channels,
            mac_count: 2 * query_tokens as u64 * memory_tokens as u64 * channels as u64,
            baseline_tokens,
            compression_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Row-major `(N_q, c)`.
    pub values: Vec<f32>,
    /// Σ of each query's attention weights (≈ 1).
    pub row_weight_sums: Vec<f64>,
    /// Σ over every attention weight (≈ N_q).
    pub weights_checksum: f64,
    /// MACs tallied inside the kernel loops; always equals `cost.mac_count`.
    pub counted_macs: u64,
    pub cost: CostReport,
}

/// Pair counts (sin, cos) for the frame, row and col groups of a `c`-wide code.
fn pe_groups(channels: usize) -> [usize; 3] {
    let pairs = channels / 2;
    let (base, rem) = (pairs / 3, pairs % 3);
    [0, 1, 2].map(|g| base + usize::from(g < rem))
}

/// Three-axis sinusoidal code. Channels are split into three contiguous even
/// groups for frame index, row and column; each group is a standard
/// interleaved sin/cos code with geometric frequencies of base 10000.
pub fn position_encode(coord: TokenCoord, channels: usize) -> Result<Vec<f32>> {
    if channels < 6 || !channels.is_multiple_of(2) {
        return Err(Error::ChannelsTooSmall(channels));
    }
    let mut out = Vec::with_capacity(channels);
    let positions = [coord.frame_index, coord.row, coord.col];
    for (pairs, pos) in pe_groups(channels).into_iter().zip(positions) {
        let width = (2 * pairs) as f64;
        for j in 0..pairs {
            let angle = pos as f64 * PE_BASE.powf(-((2 * j) as f64) / width);
            out.push(angle.sin() as f32);
            out.push(angle.cos() as f32);
        }
    }
    Ok(out)
}

/// Numerically stable softmax (row max subtracted first). Returns the sum of
/// the normalised weights.
pub fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        denom += *l;
    }
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l /= denom;
        total += *l;
    }
    total
}

fn with_position(token: &MemoryToken, use_pe: bool) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = token.features.iter().map(|&x| x as f64).collect();
    if use_pe {
        let pe = position_encode(token.coord, v.len())?;
        v.iter_mut().zip(pe).for_each(|(a, p)| *a += p as f64);
    }
    Ok(v)
}

/// Attends the pooled tokens of `query` over `memory`.
pub fn cross_attend(
    query: &CompressedFrame,
    memory: &MemorySnapshot,
    config: &EngineConfig,
) -> Result<AttentionOutput> {
    cross_attend_tokens(&query.to_tokens(), memory, config, Execution::default())
}

/// `softmax(QKᵀ/√c)·V` for every query token. Query rows run over `exec`.
pub fn cross_attend_tokens(
    query: &[MemoryToken],
    memory: &MemorySnapshot,
    config: &EngineConfig,
    exec: Execution,
) -> Result<AttentionOutput> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let c = memory.channels;
    if let Some(bad) = query.iter().find(|q| q.features.len() != c) {
        return Err(Error::ChannelMismatch {
            query: bad.features.len(),
            memory: c,
        });
    }
    let use_pe = config.position_encoding;
    let keys = memory
        .iter()
        .map(|t| with_position(t, use_pe))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<&[f32]> = memory.iter().map(|t| t.features.as_slice()).collect();
    let queries = query
        .iter()
        .map(|t| with_position(t, use_pe))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / (c as f64).sqrt();

    let rows = map_indexed(exec, queries.len(), |i| {
        let q = &queries[i];
        let mut macs = 0u64;
        let mut weights: Vec<f64> = keys
            .iter()
            .map(|k| {
                macs += c as u64;
                q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        let row_sum = softmax_in_place(&mut weights);
        let mut acc = vec![0.0f64; c];
        for (w, v) in weights.iter().zip(&values) {
            macs += c as u64;
            for (a, &x) in acc.iter_mut().zip(v.iter()) {
                *a += w * x as f64;
            }
        }
        (
            acc.into_iter().map(|a| a as f32).collect::<Vec<f32>>(),
            row_sum,
            macs,
        )
    });

    let mut out = AttentionOutput {
        values: Vec::with_capacity(query.len() * c),
        row_weight_sums: Vec::with_capacity(query.len()),
        weights_checksum: 0.0,
        counted_macs: 0,
        cost: CostReport::new(query.len(), memory.len(), c, memory.baseline_tokens),
    };
    for (vals, row_sum, macs) in rows {
        out.values.extend(vals);
        out.row_weight_sums.push(row_sum);
        out.weights_checksum += row_sum;
        out.counted_macs += macs;
    }
    Ok(out)
}

/// Closed-form memory size and attention cost of `strategy` for a bank of
/// `t_actual` raw `h × w × c` frames (GT plus `t_actual − 1` motion frames),
/// queried by one pooled frame. No attention is executed.
pub fn cost_of(
    config: &EngineConfig,
    height: usize,
    width: usize,
    channels: usize,
    t_actual: usize,
    strategy: TemporalStrategy,
) -> Result<CostReport> {
    if t_actual == 0 {
        return Err(Error::EmptyBank);
    }
    let per_frame = pooled_token_count(height, width, config)?;
    let motion = t_actual - 1;
    let memory_tokens = match strategy {
        TemporalStrategy::TopnSelect => {
            let n = config
                .selection_budget
                .resolve(height / config.pool_dh, width / config.pool_dw);
            per_frame + n.min(motion * per_frame)
        }
        TemporalStrategy::NoTmc => t_actual * per_frame,
        TemporalStrategy::GtPlusLast => per_frame * (1 + motion.min(1)),
        TemporalStrategy::FirstPlusLast => per_frame * motion.clamp(1, 2),
        TemporalStrategy::MovingAverage => per_frame,
        TemporalStrategy::RetainGtFirstLast => per_frame * (1 + motion.min(2)),
    };
    Ok(CostReport::new(
        per_frame,
        memory_tokens,
        channels,
        t_actual * height * width,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn token(frame: usize, row: usize, col: usize, features: Vec<f32>) -> MemoryToken {
        MemoryToken {
            coord: TokenCoord::new(frame, row, col),
            features,
        }
    }

    fn snapshot(tokens: Vec<MemoryToken>) -> MemorySnapshot {
        let channels = tokens[0].features.len();
        let n = tokens.len();
        MemorySnapshot {
            gt_tokens: Vec::new(),
            selected_tokens: tokens,
            channels,
            baseline_tokens: n,
        }
    }

    #[test]
    fn origin_code_is_sin0_cos1() {
        for c in [6, 8, 12, 14, 64] {
            let pe = position_encode(TokenCoord::new(0, 0, 0), c).unwrap();
            assert_eq!(pe.len(), c);
            for pair in pe.chunks(2) {
                assert_eq!(pair, [0.0, 1.0]);
            }
        }
    }

    #[test]
    fn code_rejects_small_or_odd_width() {
        let at = TokenCoord::new(1, 2, 3);
        assert_eq!(position_encode(at, 4), Err(Error::ChannelsTooSmall(4)));
        assert_eq!(position_encode(at, 7), Err(Error::ChannelsTooSmall(7)));
        assert_eq!(
            position_encode(at, 6).unwrap(),
            position_encode(at, 6).unwrap()
        );
    }

    #[test]
    fn row_and_col_use_disjoint_groups() {
        // c = 12: pairs 2/2/2, so frame -> 0..4, row -> 4..8, col -> 8..12.
        let origin = position_encode(TokenCoord::new(0, 0, 0), 12).unwrap();
        let row = position_encode(TokenCoord::new(0, 1, 0), 12).unwrap();
        let col = position_encode(TokenCoord::new(0, 0, 1), 12).unwrap();
        let diff =
            |a: &[f32], b: &[f32]| -> Vec<usize> { (0..12).filter(|&i| a[i] != b[i]).collect() };
        // cos(1e-2) etc. all differ from 1; sin of nonzero angles differ from 0.
        assert_eq!(diff(&row, &origin), vec![4, 5, 6, 7]);
        assert_eq!(diff(&col, &origin), vec![8, 9, 10, 11]);
        assert_eq!(diff(&row, &col), vec![4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(row[4], 1f64.sin() as f32);
        assert_eq!(row[6], (0.01f64).sin() as f32);
    }

    #[test]
    fn uneven_channel_split() {
        // c = 14 -> 7 pairs -> 3/2/2
        assert_eq!(pe_groups(14), [3, 2, 2]);
        assert_eq!(pe_groups(16), [3, 3, 2]);
    }

    #[test]
    fn single_key_returns_its_value() {
        let mem = snapshot(vec![token(0, 1, 1, vec![0.5, -2.0, 3.0, 1.0, 0.0, 7.0])]);
        let q = vec![token(3, 0, 0, vec![1.0; 6]), token(3, 0, 1, vec![-4.0; 6])];
        for pe in [true, false] {
            let cfg = EngineConfig {
                position_encoding: pe,
                ..Default::default()
            };
            let out = cross_attend_tokens(&q, &mem, &cfg, Execution::Sequential).unwrap();
            assert_eq!(out.values[..6], mem.selected_tokens[0].features[..]);
            assert_eq!(out.values[6..], mem.selected_tokens[0].features[..]);
        }
    }

    #[test]
    fn identical_keys_average_to_value() {
        let v = vec![1.5f32, -0.25, 2.0, 0.0];
        let mem = snapshot((0..5).map(|i| token(1, 0, i, v.clone())).collect());
        let cfg = EngineConfig {
            position_encoding: false,
            ..Default::default()
        };
        let out = cross_attend_tokens(
            &[token(2, 0, 0, vec![3.0, 1.0, -1.0, 2.0])],
            &mem,
            &cfg,
            Execution::Sequential,
        )
        .unwrap();
        for (a, b) in out.values.iter().zip(&v) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_errors() {
        let cfg = EngineConfig::default();
        let empty = MemorySnapshot {
            gt_tokens: vec![],
            selected_tokens: vec![],
            channels: 6,
            baseline_tokens: 0,
        };
        let q = [token(0, 0, 0, vec![0.0; 6])];
        assert_eq!(
            cross_attend_tokens(&q, &empty, &cfg, Execution::Sequential),
            Err(Error::EmptyMemory)
        );
        let mem = snapshot(vec![token(0, 0, 0, vec![0.0; 8])]);
        assert_eq!(
            cross_attend_tokens(&q, &mem, &cfg, Execution::Sequential),
            Err(Error::ChannelMismatch {
                query: 6,
                memory: 8
            })
        );
    }

    #[test]
    fn headline_costs() {
        let cfg = EngineConfig::default();
        let topn = cost_of(&cfg, 64, 64, 16, 7, TemporalStrategy::TopnSelect).unwrap();
        assert_eq!(topn.memory_tokens, 2048);
        assert_eq!(topn.baseline_tokens, 28672);
        assert_eq!(topn.memory_tokens * 14, topn.baseline_tokens);
        assert_eq!(topn.compression_ratio, 1.0 / 14.0);
        let three = cost_of(&cfg, 64, 64, 16, 7, TemporalStrategy::RetainGtFirstLast).unwrap();
        assert_eq!(
            (three.memory_tokens * 28, three.baseline_tokens * 3),
            (86016, 86016)
        );
        let one = cost_of(&cfg, 64, 64, 16, 7, TemporalStrategy::MovingAverage).unwrap();
        assert_eq!(one.memory_tokens * 28, one.baseline_tokens);
        let full = cost_of(&cfg, 64, 64, 16, 7, TemporalStrategy::NoTmc).unwrap();
        assert_eq!(full.memory_tokens * 2, topn.memory_tokens * 7);
        assert_eq!(full.compression_ratio, 0.25);
        assert_eq!(topn.mac_count, 2 * 1024 * 2048 * 16);
    }

    #[test]
    fn shift_invariant_softmax() {
        let mut a = vec![1.0, -3.0, 2.5, 0.0];
        let mut b: Vec<f64> = a.iter().map(|x| x + 1234.5).collect();
        softmax_in_place(&mut a);
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-1e4f64..1e4, 1..300)) {
            let mut l = logits;
            let total = softmax_in_place(&mut l);
            prop_assert!((total - 1.0).abs() <= 1e-6);
            prop_assert!(l.iter().all(|w| w.is_finite() && *w >= 0.0));
        }

        #[test]
        fn memory_order_does_not_matter_without_pe(
            feats in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 6), 2..20),
            q in proptest::collection::vec(-3.0f32..3.0, 6),
            rot in 0usize..20,
        ) {
            let cfg = EngineConfig { position_encoding: false, ..Default::default() };
            let tokens: Vec<_> = feats.iter().enumerate().map(|(i, f)| token(1, 0, i, f.clone())).collect();
            let mut shuffled = tokens.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            let query = [token(9, 0, 0, q)];
            let a = cross_attend_tokens(&query, &snapshot(tokens), &cfg, Execution::Sequential).unwrap();
            let b = cross_attend_tokens(&query, &snapshot(shuffled), &cfg, Execution::Sequential).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }

        #[test]
        fn counted_macs_match_closed_form(nq in 1usize..12, nkv in 1usize..12, half in 3usize..10) {
            let c = half * 2;
            let mem = snapshot((0..nkv).map(|i| token(1, i, 0, vec![0.1 * i as f32; c])).collect());
            let q: Vec<_> = (0..nq).map(|i| token(2, 0, i, vec![0.2; c])).collect();
            let out = cross_attend_tokens(&q, &mem, &EngineConfig::default(), Execution::Parallel).unwrap();
            prop_assert_eq!(out.counted_macs, (2 * nq * nkv * c) as u64);
            prop_assert_eq!(out.counted_macs, out.cost.mac_count);
            prop_assert!((out.weights_checksum - nq as f64).abs() <= nq as f64 * 1e-6);
        }

        #[test]
        fn policies_agree(
            feats in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 6), 1..10),
            qs in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 6), 1..10),
        ) {
            let mem = snapshot(feats.into_iter().enumerate().map(|(i, f)| token(1, i, 0, f)).collect());
            let q: Vec<_> = qs.into_iter().enumerate().map(|(i, f)| token(2, 0, i, f)).collect();
            let cfg = EngineConfig::default();
            prop_assert_eq!(
                cross_attend_tokens(&q, &mem, &cfg, Execution::Sequential).unwrap(),
                cross_attend_tokens(&q, &mem, &cfg, Execution::Parallel).unwrap()
            );
        }
    }
}
