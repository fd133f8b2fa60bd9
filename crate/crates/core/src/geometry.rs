//! Axis-aligned box arithmetic.
//!
//! Boxes use continuous, half-open coordinates: a box spans `[x1, x2) x [y1, y2)`
//! and its area is `(x2 - x1) * (y2 - y1)` with no `+1` term. Datasets that
//! store inclusive integer pixel corners can be converted on ingest with
//! [`PixelConvention::InclusivePixels`].

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with strictly positive area and finite corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(invalid("box must have positive width and height"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_array(coords: [f64; 4]) -> Result<Self> {
        Self::new(coords[0], coords[1], coords[2], coords[3])
    }

    /// Reads stored corners under the given pixel convention.
    pub fn with_convention(coords: [f64; 4], convention: PixelConvention) -> Result<Self> {
        match convention {
            PixelConvention::Continuous => Self::from_array(coords),
            PixelConvention::InclusivePixels => {
                Self::new(coords[0], coords[1], coords[2] + 1.0, coords[3] + 1.0)
            }
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let coords = <[f64; 4]>::deserialize(deserializer)?;
        BBox::from_array(coords).map_err(serde::de::Error::custom)
    }
}

/// How stored corner coordinates map onto continuous boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelConvention {
    /// Corners are continuous; area is `w * h`.
    #[default]
    Continuous,
    /// Corners are inclusive integer pixels; `+1` is added to `x2` and `y2`.
    InclusivePixels,
}

/// Threshold comparison used for IoU tests (graph edges, suppression).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `iou >= threshold`
    #[default]
    Inclusive,
    /// `iou > threshold`
    Strict,
}

impl ThresholdMode {
    pub fn passes(self, value: f64, threshold: f64) -> bool {
        match self {
            ThresholdMode::Inclusive => value >= threshold,
            ThresholdMode::Strict => value > threshold,
        }
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union. Symmetric, in `[0, 1]`, and exactly `1.0` for
/// identical boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A box with an identifier and a ranking score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// Descending score, then ascending id.
pub(crate) fn by_score_desc(a: &ScoredBox, b: &ScoredBox) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Greedy non-maximal suppression.
///
/// Repeatedly keeps the best remaining box and drops every remaining box whose
/// IoU with it passes `threshold` under `mode`. Output is in descending score
/// order; equal scores keep the lower id first.
pub fn nms(proposals: &[ScoredBox], threshold: f64, mode: ThresholdMode) -> Vec<ScoredBox> {
    let mut order: Vec<ScoredBox> = proposals.to_vec();
    order.sort_by(by_score_desc);

    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(order[i]);
        for j in (i + 1)..order.len() {
            if !suppressed[j] && mode.passes(iou(&order[i].bbox, &order[j].bbox), threshold) {
                suppressed[j] = true;
            }
        }
    }
    kept
}
