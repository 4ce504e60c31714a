//! Quality-gated streaming memory bank.
//!
//! The prompted GT frame is kept for the whole stream. Every other frame must
//! pass the absence filter and the IoU gate; admitted frames go into a FIFO of
//! `capacity - 1` motion slots, oldest evicted first. Rejected frames leave
//! the stored frames untouched.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CompressedFrame, EngineConfig, FeatureFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionReason {
    AdmittedGt,
    AdmittedMotion,
    RejectedAbsent,
    RejectedLowIou,
}

impl AdmissionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AdmissionReason::AdmittedGt => "admitted_gt",
            AdmissionReason::AdmittedMotion => "admitted_motion",
            AdmissionReason::RejectedAbsent => "rejected_absent",
            AdmissionReason::RejectedLowIou => "rejected_low_iou",
        }
    }

    pub fn is_admitted(self) -> bool {
        matches!(
            self,
            AdmissionReason::AdmittedGt | AdmissionReason::AdmittedMotion
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdmissionDecision {
    pub admitted: bool,
    pub reason: AdmissionReason,
    /// Set only when an admission pushed the oldest motion frame out.
    pub evicted_frame_index: Option<usize>,
}

impl AdmissionDecision {
    fn from_reason(reason: AdmissionReason) -> Self {
        Self {
            admitted: reason.is_admitted(),
            reason,
            evicted_frame_index: None,
        }
    }
}

/// The decision [`BankState::admit`] would make for `frame`, without touching
/// any state. Absence is checked before confidence; the prompted frame
/// bypasses both. An IoU equal to the threshold passes.
pub fn gate_check(frame: &FeatureFrame, config: &EngineConfig) -> AdmissionDecision {
    let reason = if frame.is_prompt {
        AdmissionReason::AdmittedGt
    } else if config.absence_filter && !frame.object_present {
        AdmissionReason::RejectedAbsent
    } else if config.iou_gate && (frame.predicted_iou as f64) < config.iou_threshold {
        AdmissionReason::RejectedLowIou
    } else {
        AdmissionReason::AdmittedMotion
    };
    AdmissionDecision::from_reason(reason)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankState {
    capacity: usize,
    pinned_dims: Option<(usize, usize, usize)>,
    gt_entry: Option<CompressedFrame>,
    motion_entries: VecDeque<CompressedFrame>,
    pub admitted_count: usize,
    pub rejected_absent_count: usize,
    pub rejected_iou_count: usize,
}

impl BankState {
    /// An empty bank holding at most `capacity` frames, GT included.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            pinned_dims: None,
            gt_entry: None,
            motion_entries: VecDeque::with_capacity(capacity),
            admitted_count: 0,
            rejected_absent_count: 0,
            rejected_iou_count: 0,
        }
    }

    pub fn from_config(config: &EngineConfig) -> Self {
        Self::new(config.bank_capacity)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn motion_capacity(&self) -> usize {
        self.capacity - 1
    }

    pub fn gt_entry(&self) -> Option<&CompressedFrame> {
        self.gt_entry.as_ref()
    }

    pub fn motion_entries(&self) -> impl ExactSizeIterator<Item = &CompressedFrame> {
        self.motion_entries.iter()
    }

    pub fn motion_indices(&self) -> Vec<usize> {
        self.motion_entries.iter().map(|f| f.frame_index).collect()
    }

    /// Frames currently held, GT included.
    pub fn len(&self) -> usize {
        usize::from(self.gt_entry.is_some()) + self.motion_entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.gt_entry.is_some() && self.motion_entries.len() == self.motion_capacity()
    }

    /// Gates `frame` and, if it passes, stores its pooled form.
    pub fn admit(
        &mut self,
        frame: &FeatureFrame,
        pooled: &CompressedFrame,
        config: &EngineConfig,
    ) -> Result<AdmissionDecision> {
        if let Some(expected) = self.pinned_dims {
            if pooled.dims() != expected {
                return Err(Error::DimsMismatch {
                    expected,
                    actual: pooled.dims(),
                });
            }
        }
        if frame.is_prompt {
            if let Some(gt) = &self.gt_entry {
                return Err(Error::GtAlreadySet {
                    existing: gt.frame_index,
                });
            }
            if !self.motion_entries.is_empty() {
                return Err(Error::PromptNotFirst(frame.frame_index));
            }
        } else {
            let latest = self
                .motion_entries
                .back()
                .or(self.gt_entry.as_ref())
                .map(|f| f.frame_index);
            if let Some(latest) = latest {
                if frame.frame_index <= latest {
                    return Err(Error::FrameOrder {
                        latest,
                        got: frame.frame_index,
                    });
                }
            }
        }

        let mut decision = gate_check(frame, config);
        match decision.reason {
            AdmissionReason::RejectedAbsent => self.rejected_absent_count += 1,
            AdmissionReason::RejectedLowIou => self.rejected_iou_count += 1,
            AdmissionReason::AdmittedGt => {
                self.gt_entry = Some(CompressedFrame {
                    is_gt: true,
                    ..pooled.clone()
                });
                self.admitted_count += 1;
            }
            AdmissionReason::AdmittedMotion => {
                if self.motion_capacity() > 0 {
                    if self.motion_entries.len() == self.motion_capacity() {
                        decision.evicted_frame_index =
                            self.motion_entries.pop_front().map(|f| f.frame_index);
                    }
                    self.motion_entries.push_back(CompressedFrame {
                        is_gt: false,
                        ..pooled.clone()
                    });
                }
                self.admitted_count += 1;
            }
        }
        if decision.admitted {
            self.pinned_dims.get_or_insert(pooled.dims());
        }
        Ok(decision)
    }

    /// GT first, then motion frames oldest to newest.
    pub fn snapshot_frames(&self) -> Vec<CompressedFrame> {
        self.gt_entry
            .iter()
            .chain(self.motion_entries.iter())
            .cloned()
            .collect()
    }
}
