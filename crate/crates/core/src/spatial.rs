//! Per-frame spatial compression: non-overlapping Δh×Δw window pooling from
//! `(h, w, c)` down to `(h/Δh, w/Δw, c)`.

use crate::error::Result;
use crate::exec::{for_each_chunk_mut, Execution};
use crate::types::{
    check_divisible, validate_frame, CompressedFrame, EngineConfig, FeatureFrame, PoolingKind,
};

/// Number of tokens a pooled `h × w` frame keeps: `h·w / (Δh·Δw)`.
pub fn pooled_token_count(height: usize, width: usize, config: &EngineConfig) -> Result<usize> {
    check_divisible(height, width, config)?;
    Ok((height / config.pool_dh) * (width / config.pool_dw))
}

pub fn pool_frame(frame: &FeatureFrame, config: &EngineConfig) -> Result<CompressedFrame> {
    pool_frame_with(frame, config, Execution::default())
}

/// Pools one frame. Output rows are independent and are spread over `exec`.
pub fn pool_frame_with(
    frame: &FeatureFrame,
    config: &EngineConfig,
    exec: Execution,
) -> Result<CompressedFrame> {
    validate_frame(frame, config)?;
    let (h, w, c) = frame.dims();
    let (dh, dw) = (config.pool_dh, config.pool_dw);
    let (ph, pw) = (h / dh, w / dw);
    let window = (dh * dw) as f64;

    let mut tokens = vec![0.0f32; ph * pw * c];
    let kind = config.pooling_kind;
    for_each_chunk_mut(exec, &mut tokens, pw * c, |out_row, row_buf| {
        let mut acc = vec![0.0f64; c];
        let mut best = vec![f32::NEG_INFINITY; c];
        for out_col in 0..pw {
            match kind {
                PoolingKind::Average => acc.iter_mut().for_each(|a| *a = 0.0),
                PoolingKind::Max => best.iter_mut().for_each(|b| *b = f32::NEG_INFINITY),
            }
            for r in out_row * dh..(out_row + 1) * dh {
                let base = (r * w + out_col * dw) * c;
                for px in frame.data[base..base + dw * c].chunks_exact(c) {
                    match kind {
                        PoolingKind::Average => {
                            for (a, &v) in acc.iter_mut().zip(px) {
                                *a += v as f64;
                            }
                        }
                        PoolingKind::Max => {
                            for (b, &v) in best.iter_mut().zip(px) {
                                if v > *b {
                                    *b = v;
                                }
                            }
                        }
                    }
                }
            }
            let dst = &mut row_buf[out_col * c..(out_col + 1) * c];
            match kind {
                PoolingKind::Average => {
                    for (d, a) in dst.iter_mut().zip(&acc) {
                        *d = (*a / window) as f32;
                    }
                }
                PoolingKind::Max => dst.copy_from_slice(&best),
            }
        }
    });

    Ok(CompressedFrame {
        frame_index: frame.frame_index,
        pooled_height: ph,
        pooled_width: pw,
        channels: c,
        tokens,
        is_gt: frame.is_prompt,
        source_height: h,
        source_width: w,
    })
}
