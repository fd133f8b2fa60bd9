use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seedmine::SeedConfig;

/// Version tag of the shipped default parameter file.
pub const SIM_CONFIG_VERSION: u32 = 1;

/// The shipped default simulator parameters.
pub const DEFAULT_SIM_CONFIG_TOML: &str = include_str!("../../configs/sim_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// Tightly covers the object.
    Tight,
    /// Encloses the object with surrounding context.
    Context,
    /// Lies inside the object, covering a discriminative part.
    Part,
    /// Mostly off the object.
    Background,
}

impl ProposalKind {
    pub const ALL: [ProposalKind; 4] = [
        ProposalKind::Tight,
        ProposalKind::Context,
        ProposalKind::Part,
        ProposalKind::Background,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindSpec {
    pub fraction: f64,
    /// Half-open IoU range `[low, high)` with the ground truth.
    pub iou: [f64; 2],
    /// Initial class response range `[low, high]`.
    pub score: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mixture {
    pub tight: KindSpec,
    pub context: KindSpec,
    pub part: KindSpec,
    pub background: KindSpec,
}

impl Mixture {
    pub fn get(&self, kind: ProposalKind) -> &KindSpec {
        match kind {
            ProposalKind::Tight => &self.tight,
            ProposalKind::Context => &self.context,
            ProposalKind::Part => &self.part,
            ProposalKind::Background => &self.background,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityShape {
    #[default]
    Identity,
    /// 1 at or above `step_at`, 0 below.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// Score bump a proposal receives each time it is trained on as a positive.
    pub overfit_gain: f64,
    /// Score per unit of ability per unit of shaped quality.
    pub generalization_gain: f64,
    /// Ability gained per training step per unit of mean shaped quality.
    pub growth_rate: f64,
    /// Early rise per unit ability for proposals with quality >= `rise_min_quality`.
    pub context_rise: f64,
    /// Late fall per unit ability past the threshold for quality < `decay_max_quality`.
    pub context_decay: f64,
    /// Ability at which the early rise stops and the late fall starts.
    pub context_threshold: f64,
    pub rise_min_quality: f64,
    pub decay_max_quality: f64,
    pub noise_sigma: f64,
    pub shape: QualityShape,
    pub step_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub version: u32,
    pub num_images: usize,
    pub proposals_per_image: usize,
    pub class: String,
    /// Default seed when none is given on the command line.
    pub seed: u64,
    /// Image extent `[width, height]`.
    pub image_size: [f64; 2],
    /// Ground-truth side length range.
    pub object_size: [f64; 2],
    pub mixture: Mixture,
    pub dynamics: Dynamics,
    #[serde(default)]
    pub seeding: SeedConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_SIM_CONFIG_TOML).expect("shipped default config is valid")
    }
}

fn range_ok(r: [f64; 2], strict: bool) -> bool {
    let ordered = if strict { r[0] < r[1] } else { r[0] <= r[1] };
    r.iter().all(|v| v.is_finite()) && 0.0 <= r[0] && r[1] <= 1.0 && ordered
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SimConfig =
            toml::from_str(text).map_err(|e| Error::config("sim_config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sim config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SIM_CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("expected {SIM_CONFIG_VERSION}, found {}", self.version),
            ));
        }
        if self.num_images == 0 {
            return Err(Error::config("num_images", "must be at least 1"));
        }
        if self.proposals_per_image == 0 {
            return Err(Error::config("proposals_per_image", "must be at least 1"));
        }
        if self.class.is_empty() {
            return Err(Error::config("class", "must not be empty"));
        }
        let [lo, hi] = self.object_size;
        if !(lo > 0.0 && lo <= hi && hi < self.image_size[0] && hi < self.image_size[1]) {
            return Err(Error::config("object_size", "need 0 < low <= high < image_size"));
        }

        let mut total = 0.0;
        for kind in ProposalKind::ALL {
            let spec = self.mixture.get(kind);
            let name = format!("{kind:?}").to_lowercase();
            if !(spec.fraction >= 0.0 && spec.fraction <= 1.0) {
                return Err(Error::config(
                    format!("mixture.{name}.fraction"),
                    "must lie in [0, 1]",
                ));
            }
            if !range_ok(spec.iou, true) {
                return Err(Error::config(
                    format!("mixture.{name}.iou"),
                    "need 0 <= low < high <= 1",
                ));
            }
            if !range_ok(spec.score, false) {
                return Err(Error::config(
                    format!("mixture.{name}.score"),
                    "need 0 <= low <= high <= 1",
                ));
            }
            total += spec.fraction;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "mixture",
                format!("fractions sum to {total}, not 1"),
            ));
        }
        // Enclosing and inner boxes are built from the target IoU directly.
        for (name, spec) in [
            ("tight", &self.mixture.tight),
            ("context", &self.mixture.context),
            ("part", &self.mixture.part),
        ] {
            if spec.iou[0] <= 0.0 {
                return Err(Error::config(
                    format!("mixture.{name}.iou"),
                    "low must be positive",
                ));
            }
        }

        let d = &self.dynamics;
        for (field, value) in [
            ("dynamics.overfit_gain", d.overfit_gain),
            ("dynamics.generalization_gain", d.generalization_gain),
            ("dynamics.growth_rate", d.growth_rate),
            ("dynamics.context_rise", d.context_rise),
            ("dynamics.context_decay", d.context_decay),
            ("dynamics.context_threshold", d.context_threshold),
            ("dynamics.noise_sigma", d.noise_sigma),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        for (field, value) in [
            ("dynamics.rise_min_quality", d.rise_min_quality),
            ("dynamics.decay_max_quality", d.decay_max_quality),
            ("dynamics.step_at", d.step_at),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        self.seeding.validate()
    }
}
