//! Multi-object tracking and segmentation metrics.
//!
//! Each hypothesis mask is mapped to the ground-truth mask of largest IoU if
//! that IoU exceeds the threshold. Matched hypotheses are true positives,
//! unmatched ones false positives, unmatched ground truths false negatives.
//! An id switch is counted whenever a matched ground-truth track is covered
//! by a different hypothesis id than at its most recent previous match.
//!
//! * `MOTSP  = soft_tp / tp`
//! * `MOTSA  = (tp − fp − ids) / gt_total`
//! * `sMOTSA = (soft_tp − fp − ids) / gt_total`
//!
//! where `soft_tp` sums the IoUs of the true positives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::labels::InstanceLabelMap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask shapes differ: {0} vs {1} pixels")]
    ShapeMismatch(usize, usize),
    #[error("frame {frame}: {side} masks overlap at pixel {pixel}")]
    Overlap {
        frame: usize,
        side: &'static str,
        pixel: usize,
    },
    #[error("frame {frame}: duplicate {side} id {id}")]
    DuplicateId { frame: usize, side: &'static str, id: u32 },
    #[error("sequence lengths differ: {gt} ground-truth frames vs {hyp} predicted frames")]
    FrameCount { gt: usize, hyp: usize },
    #[error("malformed report: {0}")]
    BadReport(String),
}

/// One object's id and binary mask within a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    pub id: u32,
    pub mask: Vec<bool>,
}

impl ObjectMask {
    pub fn new(id: u32, mask: Vec<bool>) -> Self {
        Self { id, mask }
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// All objects from one side (hypothesis or ground truth) of a frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameObjects {
    pub objects: Vec<ObjectMask>,
}

impl FrameObjects {
    pub fn new(objects: Vec<ObjectMask>) -> Self {
        Self { objects }
    }

    /// One mask per non-zero id, ascending.
    pub fn from_label_map(map: &InstanceLabelMap) -> Self {
        Self {
            objects: map
                .instance_ids()
                .into_iter()
                .map(|id| ObjectMask::new(id, map.mask_of(id)))
                .collect(),
        }
    }

    fn validate(&self, frame: usize, side: &'static str) -> Result<(), MetricsError> {
        let mut ids = BTreeSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id) {
                return Err(MetricsError::DuplicateId { frame, side, id: obj.id });
            }
        }
        let Some(first) = self.objects.first() else {
            return Ok(());
        };
        let mut covered = vec![false; first.mask.len()];
        for obj in &self.objects {
            if obj.mask.len() != covered.len() {
                return Err(MetricsError::ShapeMismatch(covered.len(), obj.mask.len()));
            }
            for (pixel, (&m, c)) in obj.mask.iter().zip(covered.iter_mut()).enumerate() {
                if m {
                    if *c {
                        return Err(MetricsError::Overlap { frame, side, pixel });
                    }
                    *c = true;
                }
            }
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both masks are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(a.len(), b.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Hypothesis-to-ground-truth mapping of one frame: for every hypothesis the
/// index of its argmax-IoU ground truth when that IoU exceeds `threshold`
/// (ties: lower index), otherwise `None`.
pub fn match_frame(
    hyps: &FrameObjects,
    gts: &FrameObjects,
    threshold: f64,
) -> Result<Vec<Option<(usize, f64)>>, MetricsError> {
    hyps.validate(0, "hypothesis")?;
    gts.validate(0, "ground-truth")?;
    match_validated(hyps, gts, threshold)
}

fn match_validated(
    hyps: &FrameObjects,
    gts: &FrameObjects,
    threshold: f64,
) -> Result<Vec<Option<(usize, f64)>>, MetricsError> {
    hyps.objects
        .iter()
        .map(|h| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.objects.iter().enumerate() {
                let iou = mask_iou(&h.mask, &gt.mask)?;
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            Ok(best.filter(|&(_, iou)| iou > threshold))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub soft_tp: f64,
    pub gt_total: usize,
}

impl MotsReport {
    /// `None` when there are no true positives.
    pub fn motsp(&self) -> Option<f64> {
        (self.tp > 0).then(|| self.soft_tp / self.tp as f64)
    }

    /// `None` when there is no ground truth.
    pub fn motsa(&self) -> Option<f64> {
        (self.gt_total > 0).then(|| (self.tp as f64 - self.fp as f64 - self.ids as f64) / self.gt_total as f64)
    }

    pub fn smotsa(&self) -> Option<f64> {
        (self.gt_total > 0).then(|| (self.soft_tp - self.fp as f64 - self.ids as f64) / self.gt_total as f64)
    }

    /// Fixed key order, reals with six decimals, undefined ratios as `null`.
    pub fn to_json(&self) -> String {
        let real = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("{");
        write!(
            s,
            "\"motsa\":{},\"smotsa\":{},\"motsp\":{},\"tp\":{},\"fp\":{},\"fn\":{},\"ids\":{},\"gt_total\":{},\"soft_tp\":{}",
            real(self.motsa()),
            real(self.smotsa()),
            real(self.motsp()),
            self.tp,
            self.fp,
            self.fn_,
            self.ids,
            self.gt_total,
            real(Some(self.soft_tp)),
        )
        .expect("writing to a String");
        s.push('}');
        s
    }

    /// Parses [`MotsReport::to_json`] output. Derived ratios are recomputed
    /// and must agree with the serialised ones.
    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| MetricsError::BadReport(e.to_string()))?;
        let count = |key: &str| -> Result<usize, MetricsError> {
            value[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| MetricsError::BadReport(format!("missing count {key}")))
        };
        let report = Self {
            tp: count("tp")?,
            fp: count("fp")?,
            fn_: count("fn")?,
            ids: count("ids")?,
            gt_total: count("gt_total")?,
            soft_tp: value["soft_tp"]
                .as_f64()
                .ok_or_else(|| MetricsError::BadReport("missing soft_tp".into()))?,
        };
        for (key, derived) in [
            ("motsa", report.motsa()),
            ("smotsa", report.smotsa()),
            ("motsp", report.motsp()),
        ] {
            let stored = value[key].as_f64();
            let agree = match (stored, derived) {
                (None, None) => value[key].is_null(),
                (Some(a), Some(b)) => (a - b).abs() <= 1e-6,
                _ => false,
            };
            if !agree {
                return Err(MetricsError::BadReport(format!("{key} disagrees with the counts")));
            }
        }
        Ok(report)
    }
}

/// One frame of a sequence: hypotheses and ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameData {
    pub hyp: FrameObjects,
    pub gt: FrameObjects,
}

/// Folds per-frame matches over a sequence in frame order.
///
/// With thresholds below one half two hypotheses may pick the same ground
/// truth; only the one with the larger IoU (then lower index) counts as a
/// true positive and the other becomes a false positive.
pub fn accumulate(frames: &[FrameData], threshold: f64) -> Result<MotsReport, MetricsError> {
    let mut report = MotsReport {
        tp: 0,
        fp: 0,
        fn_: 0,
        ids: 0,
        soft_tp: 0.0,
        gt_total: 0,
    };
    let mut last_match: BTreeMap<u32, u32> = BTreeMap::new();
    for (f, frame) in frames.iter().enumerate() {
        frame.hyp.validate(f, "hypothesis")?;
        frame.gt.validate(f, "ground-truth")?;
        if let (Some(h), Some(g)) = (frame.hyp.objects.first(), frame.gt.objects.first()) {
            if h.mask.len() != g.mask.len() {
                return Err(MetricsError::ShapeMismatch(g.mask.len(), h.mask.len()));
            }
        }
        let psi = match_validated(&frame.hyp, &frame.gt, threshold)?;
        let mut owner: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (h, m) in psi.iter().enumerate() {
            if let Some((g, iou)) = *m {
                match owner.get(&g) {
                    Some(&(_, best)) if best >= iou => {}
                    _ => {
                        owner.insert(g, (h, iou));
                    }
                }
            }
        }
        report.gt_total += frame.gt.objects.len();
        report.tp += owner.len();
        report.fp += frame.hyp.objects.len() - owner.len();
        report.fn_ += frame.gt.objects.len() - owner.len();
        for (&g, &(h, iou)) in &owner {
            report.soft_tp += iou;
            let gt_id = frame.gt.objects[g].id;
            let hyp_id = frame.hyp.objects[h].id;
            if let Some(prev) = last_match.insert(gt_id, hyp_id) {
                if prev != hyp_id {
                    report.ids += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Evaluates predicted id maps against ground-truth id maps frame by frame.
pub fn evaluate_label_maps(
    gt: &[InstanceLabelMap],
    pred: &[InstanceLabelMap],
    threshold: f64,
) -> Result<MotsReport, MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::FrameCount {
            gt: gt.len(),
            hyp: pred.len(),
        });
    }
    let frames: Vec<FrameData> = gt
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            if g.ids().len() != p.ids().len() {
                return Err(MetricsError::ShapeMismatch(g.ids().len(), p.ids().len()));
            }
            Ok(FrameData {
                hyp: FrameObjects::from_label_map(p),
                gt: FrameObjects::from_label_map(g),
            })
        })
        .collect::<Result<_, _>>()?;
    accumulate(&frames, threshold)
}

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
