//! Brute-force reference models for the integration tests. Written from the
//! contracts alone; nothing here calls into the kernels under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use memshrink::{FeatureFrame, TokenCoord};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_frame<R: Rng>(
    rng: &mut R,
    index: usize,
    h: usize,
    w: usize,
    c: usize,
) -> FeatureFrame {
    FeatureFrame {
        frame_index: index,
        height: h,
        width: w,
        channels: c,
        data: (0..h * w * c)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect(),
        predicted_iou: 1.0,
        object_present: true,
        is_prompt: index == 0,
    }
}

/// Window pooling by direct indexing over every (cell, channel, pixel).
pub fn pool_reference(frame: &FeatureFrame, dh: usize, dw: usize, max: bool) -> Vec<f64> {
    let (ph, pw, c) = (frame.height / dh, frame.width / dw, frame.channels);
    let mut out = Vec::with_capacity(ph * pw * c);
    for i in 0..ph {
        for j in 0..pw {
            for k in 0..c {
                let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
                for a in 0..dh {
                    for b in 0..dw {
                        let v =
                            frame.data[((i * dh + a) * frame.width + j * dw + b) * c + k] as f64;
                        acc = if max { acc.max(v) } else { acc + v };
                    }
                }
                out.push(if max { acc } else { acc / (dh * dw) as f64 });
            }
        }
    }
    out
}

/// Top-n by full sort: ascending score, ties by (frame, row, col).
/// Per-frame scope splits `n` as ⌊n/m⌋ per frame with the remainder on the
/// newest frames, then hands any shortfall of small frames to the newest
/// frames that still have candidates.
pub fn select_reference(
    pairs: &[(f64, TokenCoord)],
    n: usize,
    per_frame: bool,
) -> BTreeSet<TokenCoord> {
    let sorted = |mut v: Vec<(f64, TokenCoord)>| {
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        v
    };
    if !per_frame {
        return sorted(pairs.to_vec())
            .into_iter()
            .take(n)
            .map(|p| p.1)
            .collect();
    }
    let mut by_frame: BTreeMap<usize, Vec<(f64, TokenCoord)>> = BTreeMap::new();
    for &p in pairs {
        by_frame.entry(p.1.frame_index).or_default().push(p);
    }
    let groups: Vec<Vec<(f64, TokenCoord)>> = by_frame.into_values().map(sorted).collect();
    let m = groups.len();
    if m == 0 {
        return BTreeSet::new();
    }
    let budget = n.min(pairs.len());
    let mut quota = vec![budget / m; m];
    for q in quota.iter_mut().rev().take(budget % m) {
        *q += 1;
    }
    let mut spare = 0;
    for (q, g) in quota.iter_mut().zip(&groups) {
        if *q > g.len() {
            spare += *q - g.len();
            *q = g.len();
        }
    }
    // One token per round, newest frame first, until the spare is spent.
    while spare > 0 {
        for k in (0..m).rev() {
            if spare > 0 && quota[k] < groups[k].len() {
                quota[k] += 1;
                spare -= 1;
            }
        }
    }
    groups
        .iter()
        .zip(quota)
        .flat_map(|(g, q)| g.iter().take(q).map(|p| p.1))
        .collect()
}

/// Dense `softmax(QKᵀ/√c)V`; returns (outputs, per-row weight sums).
pub fn attention_reference(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let c = q.first().map_or(0, Vec::len);
    let scale = (c as f64).sqrt();
    let mut outs = Vec::new();
    let mut sums = Vec::new();
    for qi in q {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale)
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let weights: Vec<f64> = e.iter().map(|x| x / z).collect();
        sums.push(weights.iter().sum());
        let mut out = vec![0.0; v[0].len()];
        for (wj, vj) in weights.iter().zip(v) {
            for (o, x) in out.iter_mut().zip(vj) {
                *o += wj * x;
            }
        }
        outs.push(out);
    }
    (outs, sums)
}

/// Additive position code: channels in three contiguous groups (frame, row,
/// col) of `2·p_g` channels, `p = c/2` pairs split as evenly as possible with
/// earlier groups taking the remainder; pair `j` of a group of width `W`
/// holds `sin(x·10000^(−2j/W)), cos(…)`.
pub fn position_reference(coord: TokenCoord, c: usize) -> Vec<f64> {
    let pairs = c / 2;
    let mut out = Vec::new();
    for (g, pos) in [coord.frame_index, coord.row, coord.col]
        .into_iter()
        .enumerate()
    {
        let p = pairs / 3 + usize::from(g < pairs % 3);
        for j in 0..p {
            let freq = 1.0 / 10000f64.powf(2.0 * j as f64 / (2 * p) as f64);
            let x = pos as f64 * freq;
            out.push(x.sin() as f32 as f64);
            out.push(x.cos() as f32 as f64);
        }
    }
    out
}

/// The memory bank as a plain list: optional GT index plus a bounded queue of
/// admitted motion indices, with rejection counters.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct BankModel {
    pub capacity: usize,
    pub gt: Option<usize>,
    pub motion: Vec<usize>,
    pub admitted: usize,
    pub rejected_absent: usize,
    pub rejected_iou: usize,
}

impl BankModel {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    pub fn offer(
        &mut self,
        index: usize,
        prompt: bool,
        present: bool,
        iou: f32,
        gates: (bool, bool, f64),
    ) -> bool {
        let (absence_filter, iou_gate, threshold) = gates;
        if prompt {
            self.gt = Some(index);
            self.admitted += 1;
            return true;
        }
        if absence_filter && !present {
            self.rejected_absent += 1;
            return false;
        }
        if iou_gate && (iou as f64) < threshold {
            self.rejected_iou += 1;
            return false;
        }
        self.admitted += 1;
        if self.capacity > 1 {
            self.motion.push(index);
            if self.motion.len() > self.capacity - 1 {
                self.motion.remove(0);
            }
        }
        true
    }
}
