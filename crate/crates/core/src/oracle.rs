//! Brute-force oracles and the randomized suite that checks the production
//! kernels against them. The oracles share no code with the kernels: pooling
//! is a plain window loop, selection a full sort, the bank a `Vec` trimmed
//! from the front, attention a dense two-pass softmax.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::attention::cross_attend_tokens;
use crate::bank::BankState;
use crate::exec::{map_indexed, Execution};
use crate::spatial::pool_frame_with;
use crate::temporal::{assemble_memory_with, select_topn};
use crate::types::{
    EngineConfig, FeatureFrame, PoolingKind, Scope, ScoredToken, TemporalStrategy, TokenCoord,
};

/// Window pooling by direct loops over `(out_row, out_col, channel)`.
pub fn naive_pool(
    data: &[f32],
    (h, w, c): (usize, usize, usize),
    (dh, dw): (usize, usize),
    kind: PoolingKind,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(h / dh * (w / dw) * c);
    for i in 0..h / dh {
        for j in 0..w / dw {
            for k in 0..c {
                let mut vals = Vec::with_capacity(dh * dw);
                for r in i * dh..(i + 1) * dh {
                    for s in j * dw..(j + 1) * dw {
                        vals.push(data[(r * w + s) * c + k] as f64);
                    }
                }
                out.push(match kind {
                    PoolingKind::Average => vals.iter().sum::<f64>() / vals.len() as f64,
                    PoolingKind::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    out
}

/// Selection by fully sorting `(score, coord)` pairs.
pub fn naive_select(pairs: &[(f64, TokenCoord)], n: usize, scope: Scope) -> Vec<TokenCoord> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    match scope {
        Scope::Global => sorted.into_iter().take(n).map(|p| p.1).collect(),
        Scope::PerFrame => {
            let mut frames: Vec<usize> = pairs.iter().map(|p| p.1.frame_index).collect();
            frames.sort();
            frames.dedup();
            let supply: Vec<usize> = frames
                .iter()
                .map(|f| pairs.iter().filter(|p| p.1.frame_index == *f).count())
                .collect();
            let target = n.min(supply.iter().sum());
            let m = frames.len();
            let mut quota: Vec<usize> = (0..m)
                .map(|k| target / m + if k + target % m >= m { 1 } else { 0 })
                .collect();
            // Clip to supply and hand surplus to the newest frames with room.
            let mut surplus = 0;
            for k in 0..m {
                if quota[k] > supply[k] {
                    surplus += quota[k] - supply[k];
                    quota[k] = supply[k];
                }
            }
            while surplus > 0 {
                for k in (0..m).rev() {
                    if surplus > 0 && quota[k] < supply[k] {
                        quota[k] += 1;
                        surplus -= 1;
                    }
                }
            }
            let mut picked = Vec::new();
            for (k, f) in frames.iter().enumerate() {
                picked.extend(
                    sorted
                        .iter()
                        .filter(|p| p.1.frame_index == *f)
                        .take(quota[k])
                        .map(|p| p.1),
                );
            }
            picked
        }
    }
}

/// Dense attention with identity projections and no position codes.
/// `queries` is `(nq, c)`, `memory` is `(nkv, c)`, both row-major.
pub fn naive_attention(queries: &[f32], memory: &[f32], c: usize) -> Vec<f64> {
    let nkv = memory.len() / c;
    let mut out = Vec::with_capacity(queries.len());
    for q in queries.chunks(c) {
        let logits: Vec<f64> = (0..nkv)
            .map(|j| {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += q[k] as f64 * memory[j * c + k] as f64;
                }
                dot / (c as f64).sqrt()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        for k in 0..c {
            out.push((0..nkv).map(|j| e[j] / z * memory[j * c + k] as f64).sum());
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub mismatches: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<CheckReport>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub pooling: usize,
    pub selection: usize,
    pub bank: usize,
    pub attention: usize,
    pub bank_replay_len: usize,
    pub seed: u64,
    /// Perturbs production output before comparison (negative control).
    pub inject_fault: bool,
    pub exec: Execution,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            pooling: 200,
            selection: 500,
            bank: 100,
            attention: 50,
            bank_replay_len: 1000,
            seed: 2024,
            inject_fault: false,
            exec: Execution::default(),
        }
    }
}

impl OracleOptions {
    /// Same instance count for every check.
    pub fn uniform(instances: usize, seed: u64) -> Self {
        Self {
            pooling: instances,
            selection: instances,
            bank: instances,
            attention: instances,
            seed,
            ..Self::default()
        }
    }
}

fn rng_for(seed: u64, check: u64, instance: usize) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(
        seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (check << 56) ^ instance as u64,
    )
}

fn frame(index: usize, (h, w, c): (usize, usize, usize), data: Vec<f32>) -> FeatureFrame {
    FeatureFrame {
        frame_index: index,
        height: h,
        width: w,
        channels: c,
        data,
        predicted_iou: 1.0,
        object_present: true,
        is_prompt: index == 0,
    }
}

/// (max deviation, mismatch) per instance, folded into a report.
fn fold(name: &str, tolerance: f64, results: Vec<(f64, bool)>) -> CheckReport {
    let mismatches = results.iter().filter(|r| r.1).count();
    CheckReport {
        name: name.to_string(),
        instances: results.len(),
        mismatches,
        max_deviation: results.iter().map(|r| r.0).fold(0.0, f64::max),
        tolerance,
        passed: mismatches == 0,
    }
}

fn pooling_check(opts: &OracleOptions) -> Vec<CheckReport> {
    let results = map_indexed(opts.exec, opts.pooling, |i| {
        let mut rng = rng_for(opts.seed, 1, i);
        let (dh, dw) = (rng.random_range(1..=4usize), rng.random_range(1..=4usize));
        let h = dh * rng.random_range(1..=16 / dh);
        let w = dw * rng.random_range(1..=16 / dw);
        let c = rng.random_range(1..=8usize);
        let data: Vec<f32> = (0..h * w * c)
            .map(|_| rng.random_range(-10.0f32..10.0))
            .collect();
        let f = frame(0, (h, w, c), data);
        let mut per_kind = [(0.0f64, false); 2];
        for (slot, kind) in [PoolingKind::Average, PoolingKind::Max]
            .into_iter()
            .enumerate()
        {
            let cfg = EngineConfig {
                pool_dh: dh,
                pool_dw: dw,
                pooling_kind: kind,
                ..Default::default()
            };
            let mut got = pool_frame_with(&f, &cfg, opts.exec)
                .expect("valid frame")
                .tokens;
            if opts.inject_fault && i == 0 {
                got[0] += 1e-3;
            }
            let want = naive_pool(&f.data, (h, w, c), (dh, dw), kind);
            let mut dev = 0.0f64;
            let mut bad = got.len() != want.len();
            for (&g, &e) in got.iter().zip(&want) {
                match kind {
                    PoolingKind::Average => {
                        let rel = (g as f64 - e).abs() / e.abs().max(1e-12);
                        let rel = if e.abs() < 1e-6 {
                            (g as f64 - e).abs()
                        } else {
                            rel
                        };
                        dev = dev.max(rel);
                        bad |= rel > 1e-6;
                    }
                    PoolingKind::Max => {
                        let d = (g as f64 - e).abs();
                        dev = dev.max(d);
                        bad |= d != 0.0;
                    }
                }
            }
            per_kind[slot] = (dev, bad);
        }
        per_kind
    });
    vec![
        fold(
            "pooling/average",
            1e-6,
            results.iter().map(|r| r[0]).collect(),
        ),
        fold("pooling/max", 0.0, results.iter().map(|r| r[1]).collect()),
    ]
}

/// Random scored candidates over 1–6 frames; about half the scores come from
/// a coarse grid so ties are common.
pub fn random_scores(rng: &mut impl Rng) -> Vec<ScoredToken> {
    let frames = rng.random_range(1..=6usize);
    let (rows, cols) = (rng.random_range(1..=6usize), rng.random_range(1..=6usize));
    let mut out = Vec::new();
    for f in 0..frames {
        for r in 0..rows {
            for c in 0..cols {
                let s = if rng.random_bool(0.5) {
                    rng.random_range(-4i32..=4) as f64 / 4.0
                } else {
                    rng.random_range(-1.0f64..1.0)
                };
                out.push(ScoredToken {
                    coord: TokenCoord::new(2 * f + 1, r, c),
                    features: vec![s as f32],
                    similarity: s,
                });
            }
        }
    }
    out
}

fn selection_check(opts: &OracleOptions) -> Vec<CheckReport> {
    let results = map_indexed(opts.exec, opts.selection, |i| {
        let mut rng = rng_for(opts.seed, 2, i);
        let scores = random_scores(&mut rng);
        let n = rng.random_range(0..=scores.len() + 2);
        let pairs: Vec<(f64, TokenCoord)> =
            scores.iter().map(|s| (s.similarity, s.coord)).collect();
        [Scope::Global, Scope::PerFrame].map(|scope| {
            let mut got: Vec<TokenCoord> = select_topn(scores.clone(), &[], n, scope)
                .snapshot
                .selected_tokens
                .iter()
                .map(|t| t.coord)
                .collect();
            if opts.inject_fault && i == 0 && got.pop().is_none() {
                got.push(TokenCoord::new(usize::MAX, 0, 0));
            }
            let mut want = naive_select(&pairs, n, scope);
            got.sort();
            want.sort();
            let bad = got != want;
            (f64::from(u8::from(bad)), bad)
        })
    });
    vec![
        fold(
            "selection/global",
            0.0,
            results.iter().map(|r| r[0]).collect(),
        ),
        fold(
            "selection/per_frame",
            0.0,
            results.iter().map(|r| r[1]).collect(),
        ),
    ]
}

fn bank_check(opts: &OracleOptions) -> Vec<CheckReport> {
    let results = map_indexed(opts.exec, opts.bank, |i| {
        let mut rng = rng_for(opts.seed, 3, i);
        let cfg = EngineConfig {
            bank_capacity: rng.random_range(1..=8usize),
            absence_filter: rng.random_bool(0.8),
            iou_gate: rng.random_bool(0.8),
            iou_threshold: rng.random_range(0.0..=1.0),
            ..Default::default()
        };
        let mut bank = BankState::from_config(&cfg);
        let mut model: Vec<usize> = Vec::new();
        let mut bad = false;
        for idx in 0..opts.bank_replay_len {
            let mut f = frame(idx, (2, 2, 1), vec![idx as f32; 4]);
            f.object_present = rng.random_bool(0.7);
            f.predicted_iou = rng.random_range(0.0f32..=1.0);
            let pooled = pool_frame_with(&f, &cfg, Execution::Sequential).expect("valid frame");
            bank.admit(&f, &pooled, &cfg).expect("ordered stream");
            let keep = idx > 0
                && (!cfg.absence_filter || f.object_present)
                && (!cfg.iou_gate || f.predicted_iou as f64 >= cfg.iou_threshold);
            if keep {
                model.push(idx);
                if model.len() + 1 > cfg.bank_capacity {
                    model.remove(0);
                }
            }
            if opts.inject_fault && i == 0 && idx == 1 {
                model.push(usize::MAX);
            }
            let frames = bank.snapshot_frames();
            let gt_ok = frames
                .first()
                .is_some_and(|g| g.is_gt && g.frame_index == 0);
            let motion: Vec<usize> = frames[1..].iter().map(|f| f.frame_index).collect();
            if !gt_ok || motion != model || motion.len() + 1 > cfg.bank_capacity {
                bad = true;
                break;
            }
        }
        (f64::from(u8::from(bad)), bad)
    });
    vec![fold("bank/list_model", 0.0, results)]
}

fn attention_check(opts: &OracleOptions) -> Vec<CheckReport> {
    let results = map_indexed(opts.exec, opts.attention, |i| {
        let mut rng = rng_for(opts.seed, 4, i);
        let (h, w) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
        let c = rng.random_range(1..=32usize);
        let t = rng.random_range(1..=7usize);
        let cfg = EngineConfig {
            pool_dh: 1,
            pool_dw: 1,
            bank_capacity: t,
            temporal_strategy: TemporalStrategy::NoTmc,
            absence_filter: false,
            iou_gate: false,
            position_encoding: false,
            ..Default::default()
        };
        let frames: Vec<FeatureFrame> = (0..t)
            .map(|k| {
                frame(
                    k,
                    (h, w, c),
                    (0..h * w * c)
                        .map(|_| rng.random_range(-2.0f32..2.0))
                        .collect(),
                )
            })
            .collect();
        let mut bank = BankState::from_config(&cfg);
        let mut raw = Vec::new();
        for f in &frames {
            let pooled = pool_frame_with(f, &cfg, opts.exec).expect("valid frame");
            bank.admit(f, &pooled, &cfg).expect("ordered stream");
            raw.extend_from_slice(&f.data);
        }
        let query = frame(
            t,
            (h, w, c),
            (0..h * w * c)
                .map(|_| rng.random_range(-2.0f32..2.0))
                .collect(),
        );
        let memory =
            assemble_memory_with(&bank.snapshot_frames(), &cfg, opts.exec).expect("bank has GT");
        let pooled_query = pool_frame_with(&query, &cfg, opts.exec).expect("valid frame");
        let out = cross_attend_tokens(&pooled_query.to_tokens(), &memory.snapshot, &cfg, opts.exec)
            .expect("non-empty memory");
        let mut got = out.values;
        if opts.inject_fault && i == 0 {
            got[0] += 1.0;
        }
        let want = naive_attention(&query.data, &raw, c);
        let dev = got
            .iter()
            .zip(&want)
            .map(|(&g, &e)| (g as f64 - e).abs())
            .fold(0.0, f64::max);
        let row_dev = out
            .row_weight_sums
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        (dev, dev > 1e-5 || row_dev > 1e-6 || got.len() != want.len())
    });
    vec![fold("attention/dense", 1e-5, results)]
}

/// Runs every oracle comparison on freshly drawn random instances.
pub fn oracle_suite(opts: &OracleOptions) -> OracleReport {
    let mut checks = pooling_check(opts);
    checks.extend(selection_check(opts));
    checks.extend(bank_check(opts));
    checks.extend(attention_check(opts));
    OracleReport { checks }
}
