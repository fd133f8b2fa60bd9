//! Localization and detection metrics: CorLoc and VOC average precision.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::seedmine::ImageId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub difficult: bool,
}

/// Ground truth of one image; an empty object list is a negative image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: ImageId,
    pub objects: Vec<GroundTruth>,
}

/// The box an image was localized with for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub image_id: ImageId,
    pub class: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(alias = "score")]
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// VOC2007 11-point interpolation.
    #[default]
    ElevenPoint,
    /// Area under the interpolated precision envelope (VOC2010+).
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Corloc,
    Map,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Corloc => "corloc",
            Metric::Map => "map",
        })
    }
}

pub const NO_GROUND_TRUTH: &str = "no_ground_truth";

#[derive(Debug, Clone, PartialEq)]
pub struct ClassValue {
    /// Fraction in `[0, 1]`.
    pub value: f64,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: Metric,
    pub iou_threshold: f64,
    pub ap_method: Option<ApMethod>,
    pub per_class: BTreeMap<String, ClassValue>,
    /// Mean over unflagged classes.
    pub average: f64,
}

impl EvalReport {
    fn new(
        metric: Metric,
        iou_threshold: f64,
        ap_method: Option<ApMethod>,
        per_class: BTreeMap<String, ClassValue>,
    ) -> Self {
        let counted: Vec<f64> = per_class
            .values()
            .filter(|v| v.flag.is_none())
            .map(|v| v.value)
            .collect();
        let average = if counted.is_empty() {
            0.0
        } else {
            counted.iter().sum::<f64>() / counted.len() as f64
        };
        Self {
            metric,
            iou_threshold,
            ap_method,
            per_class,
            average,
        }
    }

    pub fn value(&self, class: &str) -> Option<f64> {
        self.per_class.get(class).map(|v| v.value)
    }
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::config("iou_threshold", "must lie in (0, 1]"));
    }
    Ok(())
}

/// Correct localization rate per class.
///
/// The denominator of a class counts its positive images plus any image
/// localized for the class without ground truth of it (always a miss).
/// Positive images without a localization are misses.
pub fn corloc(
    selections: &[Localization],
    annotations: &[Annotation],
    iou_threshold: f64,
) -> Result<EvalReport> {
    check_threshold(iou_threshold)?;
    let mut gt: BTreeMap<(&str, &ImageId), Vec<&BBox>> = BTreeMap::new();
    for ann in annotations {
        for obj in &ann.objects {
            gt.entry((obj.class.as_str(), &ann.image_id))
                .or_default()
                .push(&obj.bbox);
        }
    }

    let mut chosen: BTreeMap<(&str, &ImageId), &BBox> = BTreeMap::new();
    for sel in selections {
        if chosen
            .insert((sel.class.as_str(), &sel.image_id), &sel.bbox)
            .is_some()
        {
            return Err(Error::Invariant(format!(
                "more than one localization for image {} class {}",
                sel.image_id, sel.class
            )));
        }
    }

    let classes: BTreeSet<&str> = gt.keys().chain(chosen.keys()).map(|k| k.0).collect();
    let mut per_class = BTreeMap::new();
    for class in classes {
        let positives = gt.keys().filter(|k| k.0 == class).count();
        let stray = chosen
            .keys()
            .filter(|k| k.0 == class && !gt.contains_key(k))
            .count();
        let hits = chosen
            .iter()
            .filter(|(k, _)| k.0 == class)
            .filter(|(k, b)| {
                gt.get(k)
                    .is_some_and(|boxes| boxes.iter().any(|g| iou(g, b) >= iou_threshold))
            })
            .count();
        let total = positives + stray;
        per_class.insert(
            class.to_owned(),
            ClassValue {
                value: hits as f64 / total as f64,
                flag: (positives == 0).then(|| NO_GROUND_TRUTH.to_owned()),
            },
        );
    }
    Ok(EvalReport::new(Metric::Corloc, iou_threshold, None, per_class))
}

/// Keeps the most confident detection per (image, class).
pub fn most_confident(detections: &[Detection]) -> Vec<Localization> {
    let mut best: BTreeMap<(&ImageId, &str), &Detection> = BTreeMap::new();
    for det in detections {
        best.entry((&det.image_id, det.class.as_str()))
            .and_modify(|cur| {
                if rank_detections(det, cur).is_lt() {
                    *cur = det;
                }
            })
            .or_insert(det);
    }
    best.into_values()
        .map(|d| Localization {
            image_id: d.image_id.clone(),
            class: d.class.clone(),
            bbox: d.bbox,
        })
        .collect()
}

/// Descending confidence with a total tie-break so results never depend on
/// input order.
fn rank_detections(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApOutcome {
    pub ap: f64,
    pub num_ground_truth: usize,
    /// One point per non-ignored detection, in rank order.
    pub curve: Vec<PrecisionRecall>,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApOptions {
    pub iou_threshold: f64,
    pub method: ApMethod,
    /// Treat difficult objects as ordinary ground truth.
    pub include_difficult: bool,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            method: ApMethod::ElevenPoint,
            include_difficult: false,
        }
    }
}

/// VOC average precision for one class.
///
/// Detections are visited by descending confidence. Each is matched to the
/// ground-truth box of the same class in its image with the highest IoU; it is
/// a true positive if that IoU passes the threshold and the box is still
/// unmatched, ignored if that box is difficult, and a false positive otherwise.
pub fn voc_ap(
    detections: &[Detection],
    annotations: &[Annotation],
    class: &str,
    options: &ApOptions,
) -> Result<ApOutcome> {
    check_threshold(options.iou_threshold)?;
    let mut gt: BTreeMap<&ImageId, Vec<(&BBox, bool)>> = BTreeMap::new();
    let mut npos = 0;
    for ann in annotations {
        for obj in ann.objects.iter().filter(|o| o.class == class) {
            let difficult = obj.difficult && !options.include_difficult;
            if !difficult {
                npos += 1;
            }
            gt.entry(&ann.image_id).or_default().push((&obj.bbox, difficult));
        }
    }
    let mut matched: BTreeMap<&ImageId, Vec<bool>> =
        gt.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();

    let mut ranked: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| rank_detections(a, b));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ranked.len());
    for det in ranked {
        let best = gt.get(&det.image_id).and_then(|boxes| {
            boxes
                .iter()
                .enumerate()
                .map(|(i, (b, _))| (i, iou(b, &det.bbox)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        });
        match best {
            Some((i, overlap)) if overlap >= options.iou_threshold => {
                if gt[&det.image_id][i].1 {
                    continue;
                }
                let seen = &mut matched.get_mut(&det.image_id).unwrap()[i];
                if *seen {
                    fp += 1;
                } else {
                    *seen = true;
                    tp += 1;
                }
            }
            _ => fp += 1,
        }
        curve.push(PrecisionRecall {
            precision: tp as f64 / (tp + fp) as f64,
            recall: if npos == 0 { 0.0 } else { tp as f64 / npos as f64 },
        });
    }

    let ap = if npos == 0 {
        0.0
    } else {
        average_precision(&curve, options.method)
    };
    Ok(ApOutcome {
        ap,
        num_ground_truth: npos,
        curve,
        true_positives: tp,
        false_positives: fp,
    })
}

/// Integrates a precision/recall curve given in rank order.
pub fn average_precision(curve: &[PrecisionRecall], method: ApMethod) -> f64 {
    match method {
        ApMethod::ElevenPoint => {
            let sum: f64 = (0..=10)
                .map(|step| {
                    let t = step as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|pr| pr.recall >= t)
                        .map(|pr| pr.precision)
                        .fold(0.0, f64::max)
                })
                .sum();
            sum / 11.0
        }
        ApMethod::Continuous => {
            let mut recall = Vec::with_capacity(curve.len() + 2);
            let mut precision = Vec::with_capacity(curve.len() + 2);
            recall.push(0.0);
            precision.push(0.0);
            for pr in curve {
                recall.push(pr.recall);
                precision.push(pr.precision);
            }
            recall.push(1.0);
            precision.push(0.0);
            for i in (0..precision.len() - 1).rev() {
                precision[i] = precision[i].max(precision[i + 1]);
            }
            (1..recall.len())
                .filter(|&i| recall[i] != recall[i - 1])
                .map(|i| (recall[i] - recall[i - 1]) * precision[i])
                .sum()
        }
    }
}

/// Per-class AP and their mean. Classes seen only in detections are
/// reported with AP 0 and the `no_ground_truth` flag and left out of the mean.
pub fn mean_ap(
    detections: &[Detection],
    annotations: &[Annotation],
    options: &ApOptions,
) -> Result<EvalReport> {
    let classes: BTreeSet<&str> = annotations
        .iter()
        .flat_map(|a| a.objects.iter().map(|o| o.class.as_str()))
        .chain(detections.iter().map(|d| d.class.as_str()))
        .collect();
    let mut per_class = BTreeMap::new();
    for class in classes {
        let outcome = voc_ap(detections, annotations, class, options)?;
        per_class.insert(
            class.to_owned(),
            ClassValue {
                value: outcome.ap,
                flag: (outcome.num_ground_truth == 0).then(|| NO_GROUND_TRUTH.to_owned()),
            },
        );
    }
    Ok(EvalReport::new(
        Metric::Map,
        options.iou_threshold,
        Some(options.method),
        per_class,
    ))
}
