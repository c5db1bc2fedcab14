//! Core domain types: frames, masks, background-filtered frames, feature
//! maps, and the pinned-first bounded memory bank both branches read from.

use llb_core::{Tensor, Var};

use crate::dlgm::TargetEncodingPair;
use crate::error::{Error, Result};

/// One RGB video frame, values in [0, 1].
#[derive(Clone)]
pub struct Frame {
    pub pixels: Tensor, // [H, W, 3]
    pub frame_index: usize,
}

impl Frame {
    pub fn new(pixels: Tensor, frame_index: usize) -> Result<Self> {
        if pixels.shape().len() != 3 || pixels.shape()[2] != 3 {
            return Err(Error::RejectedInput(format!(
                "frame must be [H, W, 3], got {:?}",
                pixels.shape()
            )));
        }
        if pixels.shape()[0] == 0 || pixels.shape()[1] == 0 {
            return Err(Error::RejectedInput("frame must be at least 1x1".into()));
        }
        if !pixels.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::RejectedInput("frame pixels must be finite in [0,1]".into()));
        }
        Ok(Frame { pixels, frame_index })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Per-object mask, soft in [0, 1]; ground-truth masks are exactly {0, 1}.
#[derive(Clone)]
pub struct Mask {
    pub values: Tensor, // [H, W]
    pub object_id: u32,
    pub is_ground_truth: bool,
}

impl Mask {
    pub fn new(values: Tensor, object_id: u32, is_ground_truth: bool) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::RejectedInput(format!(
                "mask must be [H, W], got {:?}",
                values.shape()
            )));
        }
        if object_id == 0 {
            return Err(Error::RejectedInput("object_id 0 is the background".into()));
        }
        let ok = values.data().iter().all(|v| {
            v.is_finite()
                && (0.0..=1.0).contains(v)
                && (!is_ground_truth || *v == 0.0 || *v == 1.0)
        });
        if !ok {
            return Err(Error::RejectedInput(
                "mask values must be finite in [0,1]; ground truth must be binary".into(),
            ));
        }
        Ok(Mask { values, object_id, is_ground_truth })
    }

    pub fn area(&self) -> f64 {
        self.values.sum()
    }
}

/// Background-filtered frame: the frame with everything outside the
/// binarized mask zeroed out.
#[derive(Clone)]
pub struct Bff {
    pub pixels: Tensor, // [H, W, 3]
}

/// `output[p,c] = frame[p,c]` where `mask[p] >= threshold`, else exactly 0.
pub fn make_bff(frame: &Frame, mask: &Mask, threshold: f64) -> Result<Bff> {
    let (h, w) = (frame.height(), frame.width());
    if mask.values.shape() != [h, w] {
        return Err(Error::RejectedInput(format!(
            "mask {:?} does not match frame {}x{}",
            mask.values.shape(),
            h,
            w
        )));
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::RejectedInput("threshold must lie in (0,1)".into()));
    }
    let md = mask.values.data();
    let pixels = Tensor::from_fn(frame.pixels.shape(), |i| {
        if md[i / 3] >= threshold {
            frame.pixels.at(i)
        } else {
            0.0
        }
    });
    Ok(Bff { pixels })
}

/// Dense feature grid at a known stride relative to image pixels.
#[derive(Clone)]
pub struct FeatureMap {
    pub data: Var, // [H, W, c]
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(data: Var, stride: usize) -> Self {
        debug_assert_eq!(data.shape().len(), 3);
        FeatureMap { data, stride }
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.data.shape()[0], self.data.shape()[1])
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

pub struct MemoryEntry {
    pub feature: FeatureMap, // C channels, stride 16
    pub bff: Bff,
    pub encodings: Option<TargetEncodingPair>,
    pub frame_index: usize,
}

/// A whole annotated video: frames plus per-object mask tracks. Training
/// data has every frame annotated; inference data may carry only frame 0.
pub struct VideoSequence {
    pub name: String,
    pub frames: Vec<Frame>,
    /// `masks[o][t]`: annotation of object `o` at frame `t`, if present.
    pub masks: Vec<Vec<Option<Mask>>>,
}

impl VideoSequence {
    pub fn num_objects(&self) -> usize {
        self.masks.len()
    }

    pub fn object_ids(&self) -> Vec<u32> {
        self.masks
            .iter()
            .filter_map(|track| track.iter().flatten().next().map(|m| m.object_id))
            .collect()
    }

    pub fn first_masks(&self) -> Vec<Option<&Mask>> {
        self.masks.iter().map(|track| track.first().and_then(|m| m.as_ref())).collect()
    }
}

/// Threshold a soft map into a hard {0,1} mask tensor.
pub fn binarize(t: &Tensor, threshold: f64) -> Tensor {
    t.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Ordered, capacity-bounded store of past-frame samples. The first frame is
/// pinned: it is never evicted while `pinned_first` is set.
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
    capacity: usize,
    pinned_first: bool,
}

impl MemoryBank {
    pub fn new(capacity: usize, pinned_first: bool) -> Self {
        assert!(capacity >= 1);
        MemoryBank { entries: Vec::new(), capacity, pinned_first }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    /// Append an entry; evicts the oldest non-pinned entry when full.
    pub fn insert(&mut self, entry: MemoryEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.frame_index <= last.frame_index {
                return Err(Error::MemoryOrdering {
                    incoming: entry.frame_index,
                    last: last.frame_index,
                });
            }
            let dims = self.entries[0].feature.data.shape();
            if entry.feature.data.shape() != dims {
                return Err(Error::RejectedInput(format!(
                    "memory entry feature {:?} does not match bank {:?}",
                    entry.feature.data.shape(),
                    dims
                )));
            }
        }
        self.entries.push(entry);
        if self.entries.len() > self.capacity {
            let evict_at = if self.pinned_first { 1 } else { 0 };
            self.entries.remove(evict_at);
        }
        Ok(())
    }
}
