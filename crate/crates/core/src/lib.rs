//! Sample mining for weakly supervised object localization.
//!
//! * [`geometry`]: boxes, IoU and greedy NMS.
//! * [`seedmine`]: candidate pools, overlap graphs, dense subgraph discovery
//!   and seed selection.
//! * [`ossh`]: score ledger, relative-improvement harvesting, augmentation
//!   labels, negative rejection and the epoch plan.
//! * [`sim`]: deterministic synthetic worlds and detector dynamics.
//! * [`eval`]: CorLoc and VOC average precision.
//! * [`formats`] and [`cli`]: line-delimited JSON files and the command line.

pub mod cli;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod ossh;
pub mod seedmine;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{iou, nms, BBox, PixelConvention, ScoredBox, ThresholdMode};
pub use seedmine::{CandidatePool, ImageId, Proposal, ProposalGraph, ProposalId};
