//! Line-delimited JSON records. One record per line, UTF-8, blank lines
//! skipped on read. Every writer emits records in a fixed order so output
//! bytes depend only on content.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Annotation, ApMethod, ClassValue, EvalReport, GroundTruth, Metric};
use crate::geometry::{BBox, PixelConvention};
use crate::ossh::{HarvestMode, LedgerKey, OsshLedger, Phase};
use crate::seedmine::{ImageId, Proposal, ProposalId};

/// Parses one record per non-blank line. Errors carry the 1-based line number.
pub fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

/// Like [`parse_lines`] but keeps the line number of each record.
pub fn parse_numbered<T: DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::parse(i + 1, e.to_string()))
        })
        .collect()
}

pub fn write_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        // Records are plain data with string keys; serialization cannot fail.
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub image_id: ImageId,
    pub proposal_id: ProposalId,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub scores: BTreeMap<String, f64>,
}

impl ProposalRecord {
    pub fn into_proposal(self, convention: PixelConvention) -> Result<Proposal> {
        let bbox = BBox::with_convention(self.bbox, convention)?;
        Proposal::new(self.image_id, self.proposal_id, bbox, self.scores)
    }

    pub fn from_proposal(p: &Proposal) -> Self {
        Self {
            image_id: p.image_id.clone(),
            proposal_id: p.proposal_id,
            bbox: p.bbox.to_array(),
            scores: p.scores.clone(),
        }
    }
}

/// Reads a proposals file grouped by image, each group in file order.
pub fn read_proposals(text: &str, convention: PixelConvention) -> Result<BTreeMap<ImageId, Vec<Proposal>>> {
    let mut out: BTreeMap<ImageId, Vec<Proposal>> = BTreeMap::new();
    for (line, record) in parse_numbered::<ProposalRecord>(text)? {
        let proposal = record
            .into_proposal(convention)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        out.entry(proposal.image_id.clone()).or_default().push(proposal);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: ImageId,
    pub objects: Vec<ObjectRecord>,
}

impl AnnotationRecord {
    pub fn into_annotation(self, convention: PixelConvention) -> Result<Annotation> {
        let objects = self
            .objects
            .into_iter()
            .map(|o| {
                Ok(GroundTruth {
                    class: o.class,
                    bbox: BBox::with_convention(o.bbox, convention)?,
                    difficult: o.difficult,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Annotation {
            image_id: self.image_id,
            objects,
        })
    }

    pub fn from_annotation(a: &Annotation) -> Self {
        Self {
            image_id: a.image_id.clone(),
            objects: a
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    class: o.class.clone(),
                    bbox: o.bbox.to_array(),
                    difficult: o.difficult,
                })
                .collect(),
        }
    }
}

pub fn read_annotations(text: &str, convention: PixelConvention) -> Result<Vec<Annotation>> {
    let mut seen = BTreeSet::new();
    parse_numbered::<AnnotationRecord>(text)?
        .into_iter()
        .map(|(line, record)| {
            if !seen.insert(record.image_id.clone()) {
                return Err(Error::parse(line, format!("duplicate image {}", record.image_id)));
            }
            record
                .into_annotation(convention)
                .map_err(|e| Error::parse(line, e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub image_id: ImageId,
    pub proposal_id: ProposalId,
    pub epoch: u32,
    pub phase: Phase,
    pub score: f64,
}

pub fn read_ledger(text: &str) -> Result<OsshLedger> {
    let mut ledger = OsshLedger::new();
    for (line, r) in parse_numbered::<LedgerRecord>(text)? {
        let key = LedgerKey {
            image_id: r.image_id,
            proposal_id: r.proposal_id,
            epoch: r.epoch,
            phase: r.phase,
        };
        ledger
            .insert(key, r.score)
            .map_err(|e| Error::parse(line, e.to_string()))?;
    }
    Ok(ledger)
}

/// Entries in key order.
pub fn write_ledger(ledger: &OsshLedger) -> String {
    let mut out = String::with_capacity(ledger.len() * 80);
    for (key, score) in ledger.iter() {
        let record = LedgerRecord {
            image_id: key.image_id,
            proposal_id: key.proposal_id,
            epoch: key.epoch,
            phase: key.phase,
            score,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// One line of a seeds file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedLine {
    Seed(SeedRecord),
    Warning(WarningRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub image_id: ImageId,
    pub class: String,
    pub proposal_id: ProposalId,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    /// Output of dense subgraph discovery, kept for audit.
    pub dsd_nodes: Vec<ProposalId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarningRecord {
    pub warning: String,
    pub image_id: ImageId,
    pub class: String,
}

/// Header line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub metric: Metric,
    pub iou_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_method: Option<ApMethod>,
}

/// A per-class row, or the `avg` row. Values are percentages with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub class: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

pub const AVERAGE_ROW: &str = "avg";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

/// Fraction to percent, rounded to one decimal.
pub fn percent(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

impl ReportFile {
    pub fn from_report(report: &EvalReport) -> Self {
        let mut rows: Vec<ReportRow> = report
            .per_class
            .iter()
            .map(|(class, ClassValue { value, flag })| ReportRow {
                class: class.clone(),
                value: percent(*value),
                flag: flag.clone(),
            })
            .collect();
        rows.push(ReportRow {
            class: AVERAGE_ROW.into(),
            value: percent(report.average),
            flag: None,
        });
        Self {
            meta: ReportMeta {
                metric: report.metric,
                iou_threshold: report.iou_threshold,
                ap_method: report.ap_method,
            },
            rows,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = write_lines(std::slice::from_ref(&self.meta));
        out.push_str(&write_lines(&self.rows));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::parse(1, "empty report"))?;
        let meta: ReportMeta = serde_json::from_str(head).map_err(|e| Error::parse(1, e.to_string()))?;
        let rows = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
            .collect::<Result<Vec<ReportRow>>>()?;
        match rows.last() {
            Some(r) if r.class == AVERAGE_ROW => Ok(Self { meta, rows }),
            _ => Err(Error::parse(
                text.lines().count(),
                "report must end with the avg row",
            )),
        }
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.class.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        for row in &self.rows {
            let _ = write!(out, "{:<width$}  {:>5.1}", row.class, row.value);
            if let Some(flag) = &row.flag {
                let _ = write!(out, "  ({flag})");
            }
            out.push('\n');
        }
        out
    }
}

/// One line of a simulation comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimRow {
    /// A single run.
    Run {
        harvest_epochs: Vec<u32>,
        mode: HarvestMode,
        seed: u64,
        seed_corloc: f64,
        corloc: f64,
    },
    /// Means over all seeds of one setting and mode; `wins` counts seeds
    /// where this mode beat the other one.
    Summary {
        harvest_epochs: Vec<u32>,
        mode: HarvestMode,
        seeds: usize,
        mean_corloc: f64,
        wins: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_name_the_line() {
        let text = "\n{\"image_id\":\"a\",\"proposal_id\":0,\"box\":[0,0,1,1],\"scores\":{}}\n{oops}\n";
        match parse_lines::<ProposalRecord>(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = "{\"image_id\":\"a\",\"proposal_id\":0,\"box\":[0,0,1,1],\"scores\":{},\"extra\":1}";
        assert!(parse_lines::<ProposalRecord>(text).is_err());
    }

    #[test]
    fn inclusive_convention_adds_one() {
        let text = "{\"image_id\":\"a\",\"proposal_id\":0,\"box\":[5,5,5,5],\"scores\":{\"cat\":0.5}}";
        assert!(read_proposals(text, PixelConvention::Continuous).is_err());
        let props = read_proposals(text, PixelConvention::InclusivePixels).unwrap();
        assert_eq!(props[&ImageId::new("a")][0].bbox.area(), 1.0);
    }

    #[test]
    fn report_round_trip() {
        let report = EvalReport {
            metric: Metric::Corloc,
            iou_threshold: 0.5,
            ap_method: None,
            per_class: BTreeMap::from([
                (
                    "cat".into(),
                    ClassValue {
                        value: 0.75,
                        flag: None,
                    },
                ),
                (
                    "dog".into(),
                    ClassValue {
                        value: 0.0,
                        flag: Some("no_ground_truth".into()),
                    },
                ),
            ]),
            average: 0.75,
        };
        let file = ReportFile::from_report(&report);
        let text = file.to_text();
        assert_eq!(
            text,
            "{\"metric\":\"corloc\",\"iou_threshold\":0.5}\n\
             {\"class\":\"cat\",\"value\":75.0}\n\
             {\"class\":\"dog\",\"value\":0.0,\"flag\":\"no_ground_truth\"}\n\
             {\"class\":\"avg\",\"value\":75.0}\n"
        );
        assert_eq!(ReportFile::parse(&text).unwrap(), file);
    }

    #[test]
    fn seed_lines_distinguish_warnings() {
        let lines = vec![
            SeedLine::Seed(SeedRecord {
                image_id: "a".into(),
                class: "cat".into(),
                proposal_id: 3,
                bbox: [0.0, 0.0, 2.0, 2.5],
                score: 0.9,
                dsd_nodes: vec![3, 7],
            }),
            SeedLine::Warning(WarningRecord {
                warning: "no proposals".into(),
                image_id: "b".into(),
                class: "cat".into(),
            }),
        ];
        assert_eq!(parse_lines::<SeedLine>(&write_lines(&lines)).unwrap(), lines);
    }

    #[test]
    fn percent_rounds_to_one_decimal() {
        assert_eq!(percent(0.75), 75.0);
        assert_eq!(percent(2.0 / 3.0), 66.7);
        assert_eq!(percent(0.12345), 12.3);
    }
}
