//! Command line: `seed`, `ossh`, `simulate` and `eval`.
//!
//! Each command has a pure core working on file contents (`*_text`
//! functions) and a thin wrapper that reads and writes paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{corloc, mean_ap, most_confident, ApMethod, ApOptions, Detection, Localization, Metric};
use crate::formats::{
    parse_lines, parse_numbered, percent, read_annotations, read_ledger, read_proposals, write_ledger,
    write_lines, AnnotationRecord, ProposalRecord, ReportFile, SeedLine, SeedRecord, SimRow, WarningRecord,
};
use crate::geometry::{BBox, PixelConvention, ThresholdMode};
use crate::ossh::{replay, HarvestMode, OsshConfig, SelectionRecord};
use crate::seedmine::{mine_seed, top_candidates, ImageId, Proposal, SeedConfig, SubgraphOutput};
use crate::sim::{generate_world, run_experiment, SimConfig};

pub const EXIT_INPUT: u8 = 65;
pub const EXIT_INTERNAL: u8 = 70;
pub const EXIT_IO: u8 = 74;
pub const EXIT_CONFIG: u8 = 78;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Invariant(_) => EXIT_INTERNAL,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wslmine",
    version,
    about = "Seed mining and sample harvesting for weakly supervised localization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick one seed proposal per positive image and class.
    Seed(SeedArgs),
    /// Replay harvesting over a recorded score ledger.
    Ossh(OsshArgs),
    /// Compare relative-improvement and absolute-score harvesting in simulation.
    Simulate(SimulateArgs),
    /// CorLoc or VOC mAP of selections, seeds or detections.
    Eval(EvalArgs),
}

/// Parses a flag value through the serde name of `T`.
fn serde_value<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// A set of harvest epochs on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochList(pub Vec<u32>);

/// `2,3,4`; `none` or an empty string is the empty set.
fn epoch_list(s: &str) -> std::result::Result<EpochList, String> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(EpochList(Vec::new()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(EpochList)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_method: ApMethod,
    pub include_difficult: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            ap_method: ApMethod::ElevenPoint,
            include_difficult: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub num_seeds: u64,
    pub epochs: u32,
    pub harvest_settings: Vec<Vec<u32>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            num_seeds: 1,
            epochs: 5,
            harvest_settings: vec![vec![2], vec![2, 3], vec![2, 3, 4]],
        }
    }
}

/// Parameters shared by all commands, read from TOML. Flags override it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: SeedConfig,
    pub ossh: OsshConfig,
    pub eval: EvalConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config("run_config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&read(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seed.validate()?;
        self.ossh.validate()?;
        let e = &self.eval;
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            return Err(Error::config("eval.iou_threshold", "must lie in (0, 1]"));
        }
        let s = &self.simulate;
        if s.num_seeds == 0 {
            return Err(Error::config("simulate.num_seeds", "must be at least 1"));
        }
        if s.epochs == 0 {
            return Err(Error::config("simulate.epochs", "must be at least 1"));
        }
        if s.harvest_settings.is_empty() {
            return Err(Error::config(
                "simulate.harvest_settings",
                "needs at least one setting",
            ));
        }
        for setting in &s.harvest_settings {
            if setting.iter().any(|&e| e < 2 || e > s.epochs) {
                return Err(Error::config(
                    "simulate.harvest_settings",
                    format!("harvest epochs must lie in [2, {}]", s.epochs),
                ));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[arg(long)]
    pub proposals: PathBuf,
    /// Class to mine; repeat for several. Defaults to every scored class.
    #[arg(long = "class")]
    pub classes: Vec<String>,
    /// Restricts mining to images labelled with the class.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Edge threshold of the overlap graph.
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub min_nodes: Option<usize>,
    /// inclusive | strict
    #[arg(long, value_parser = serde_value::<ThresholdMode>)]
    pub edge: Option<ThresholdMode>,
    /// selected | pruned
    #[arg(long, value_parser = serde_value::<SubgraphOutput>)]
    pub subgraph: Option<SubgraphOutput>,
    /// continuous | inclusive-pixels
    #[arg(long, value_parser = serde_value::<PixelConvention>, default_value = "continuous")]
    pub convention: PixelConvention,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seeds file contents for the given inputs. Images are visited in id order,
/// classes in name order within each image.
pub fn seed_text(
    proposals: &str,
    annotations: Option<&str>,
    classes: &[String],
    config: &SeedConfig,
    convention: PixelConvention,
) -> Result<String> {
    config.validate()?;
    let by_image = read_proposals(proposals, convention)?;
    let labels: Option<BTreeMap<ImageId, BTreeSet<String>>> = annotations
        .map(|text| {
            Ok::<_, Error>(
                read_annotations(text, convention)?
                    .into_iter()
                    .map(|a| (a.image_id, a.objects.into_iter().map(|o| o.class).collect()))
                    .collect(),
            )
        })
        .transpose()?;
    let classes: BTreeSet<String> = if classes.is_empty() {
        by_image
            .values()
            .flatten()
            .flat_map(|p| p.scores.keys().cloned())
            .collect()
    } else {
        classes.iter().cloned().collect()
    };

    let mut images: BTreeSet<&ImageId> = by_image.keys().collect();
    if let Some(labels) = &labels {
        images.extend(labels.keys());
    }
    let mut lines = Vec::new();
    for image in images {
        for class in &classes {
            let positive = match &labels {
                Some(labels) => labels.get(image).is_some_and(|c| c.contains(class)),
                None => true,
            };
            if !positive {
                continue;
            }
            let Some(proposals) = by_image.get(image) else {
                lines.push(SeedLine::Warning(WarningRecord {
                    warning: "no proposals".into(),
                    image_id: image.clone(),
                    class: class.clone(),
                }));
                continue;
            };
            let outcome = mine_seed(proposals, class, config)?;
            lines.push(SeedLine::Seed(SeedRecord {
                image_id: image.clone(),
                class: class.clone(),
                proposal_id: outcome.seed.proposal_id,
                bbox: outcome.seed.bbox.to_array(),
                score: outcome.seed.score(class)?,
                dsd_nodes: outcome.dsd_nodes.into_iter().collect(),
            }));
        }
    }
    Ok(write_lines(&lines))
}

pub fn cmd_seed(args: &SeedArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.as_deref())?.seed;
    config.top_n = args.top_n.unwrap_or(config.top_n);
    config.edge_threshold = args.iou_threshold.unwrap_or(config.edge_threshold);
    config.min_nodes = args.min_nodes.unwrap_or(config.min_nodes);
    config.edge_mode = args.edge.unwrap_or(config.edge_mode);
    config.output = args.subgraph.unwrap_or(config.output);

    let proposals = read(&args.proposals)?;
    if proposals.trim().is_empty() {
        warn(&format!("{} holds no proposals", args.proposals.display()));
    }
    let annotations = args.annotations.as_deref().map(read).transpose()?;
    let text = seed_text(
        &proposals,
        annotations.as_deref(),
        &args.classes,
        &config,
        args.convention,
    )?;
    for (_, w) in parse_numbered::<SeedLine>(&text)? {
        if let SeedLine::Warning(w) = w {
            warn(&format!("image {} class {}: {}", w.image_id, w.class, w.warning));
        }
    }
    emit(args.out.as_deref(), &text)
}

#[derive(Debug, Args)]
pub struct OsshArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    /// Proposals file; each image's pool is its top-N proposals for the class.
    #[arg(long)]
    pub pools: PathBuf,
    /// Needed when the pools file scores more than one class.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// ri | absolute
    #[arg(long, value_parser = serde_value::<HarvestMode>)]
    pub mode: Option<HarvestMode>,
    /// Comma-separated, or `none`.
    #[arg(long, value_parser = epoch_list)]
    pub harvest_epochs: Option<EpochList>,
    #[arg(long)]
    pub nr_fraction: Option<f64>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long, value_parser = serde_value::<PixelConvention>, default_value = "continuous")]
    pub convention: PixelConvention,
    /// Selections; defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub partitions_out: Option<PathBuf>,
    #[arg(long)]
    pub rejected_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectedRecord {
    pub image_id: ImageId,
    /// Epoch after which the image stopped training.
    pub epoch: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsshFiles {
    pub selections: String,
    pub partitions: String,
    pub rejected: String,
}

fn only_class(by_image: &BTreeMap<ImageId, Vec<Proposal>>, class: Option<&str>) -> Result<String> {
    if let Some(class) = class {
        return Ok(class.to_owned());
    }
    let classes: BTreeSet<&String> = by_image
        .values()
        .flatten()
        .flat_map(|p| p.scores.keys())
        .collect();
    match classes.len() {
        1 => Ok(classes.into_iter().next().expect("one class").clone()),
        0 => Err(Error::config("class", "the proposals file scores no class")),
        _ => Err(Error::config(
            "class",
            "the proposals file scores several classes; pass --class",
        )),
    }
}

pub fn ossh_text(
    ledger: &str,
    pools: &str,
    class: Option<&str>,
    top_n: usize,
    config: &OsshConfig,
    convention: PixelConvention,
) -> Result<OsshFiles> {
    config.validate()?;
    let ledger = read_ledger(ledger)?;
    let by_image = read_proposals(pools, convention)?;
    let class = only_class(&by_image, class)?;
    let pools = by_image
        .values()
        .map(|props| top_candidates(props, &class, top_n))
        .collect::<Result<Vec<_>>>()?;
    let out = replay(&ledger, &pools, config)?;
    let nr_epoch = config.nr_epoch().unwrap_or(0);
    let rejected: Vec<RejectedRecord> = out
        .rejected
        .into_iter()
        .map(|image_id| RejectedRecord {
            image_id,
            epoch: nr_epoch,
        })
        .collect();
    Ok(OsshFiles {
        selections: write_lines(&out.selections),
        partitions: write_lines(&out.partitions),
        rejected: write_lines(&rejected),
    })
}

pub fn cmd_ossh(args: &OsshArgs) -> Result<()> {
    let run = RunConfig::load(args.config.as_deref())?;
    let mut config = run.ossh;
    config.mode = args.mode.unwrap_or(config.mode);
    if let Some(epochs) = &args.harvest_epochs {
        config.harvest_epochs = epochs.0.iter().copied().collect();
    }
    config.nr_fraction = args.nr_fraction.unwrap_or(config.nr_fraction);
    let top_n = args.top_n.unwrap_or(run.seed.top_n);
    let files = ossh_text(
        &read(&args.ledger)?,
        &read(&args.pools)?,
        args.class.as_deref(),
        top_n,
        &config,
        args.convention,
    )?;
    emit(args.out.as_deref(), &files.selections)?;
    if let Some(p) = &args.partitions_out {
        write(p, &files.partitions)?;
    }
    if let Some(p) = &args.rejected_out {
        write(p, &files.rejected)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulator TOML; defaults to the shipped configuration.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    /// Run configuration; its `ossh` and `simulate` sections apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First simulator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_seeds: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Harvest epochs of one setting, comma-separated or `none`. Repeatable.
    #[arg(long = "harvest-setting", value_parser = epoch_list)]
    pub harvest_settings: Vec<EpochList>,
    /// Worker threads. Output bytes do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skip the per-run ledger and selection files.
    #[arg(long)]
    pub no_ledgers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatePlan {
    pub sim: SimConfig,
    pub ossh: OsshConfig,
    pub run: SimulateConfig,
    pub threads: usize,
    pub write_ledgers: bool,
}

fn setting_tag(epochs: &[u32]) -> String {
    if epochs.is_empty() {
        return "none".into();
    }
    epochs.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
}

/// Runs every (setting, seed, mode) and writes `report.jsonl`. Unless
/// disabled, `ledgers/` receives one ledger and one selections file per run
/// and the proposals and annotations of each seed's world, enough to replay
/// a run with `ossh` and score it with `eval`.
/// Returns the report rows.
pub fn simulate(plan: &SimulatePlan, out_dir: &Path) -> Result<Vec<SimRow>> {
    plan.sim.validate()?;
    plan.ossh.validate()?;
    let modes = [HarvestMode::Ri, HarvestMode::Absolute];
    let seeds: Vec<u64> = (0..plan.run.num_seeds).map(|i| plan.run.seed + i).collect();
    let jobs: Vec<(&Vec<u32>, u64, HarvestMode)> = plan
        .run
        .harvest_settings
        .iter()
        .flat_map(|s| seeds.iter().flat_map(move |&seed| modes.map(|m| (s, seed, m))))
        .collect();

    let run_job = |&(setting, seed, mode): &(&Vec<u32>, u64, HarvestMode)| -> Result<(f64, f64)> {
        let config = OsshConfig {
            mode,
            harvest_epochs: setting.iter().copied().collect(),
            ..plan.ossh.clone()
        };
        let out = run_experiment(&plan.sim, &config, plan.run.epochs, seed)?;
        if plan.write_ledgers {
            let stem = format!("h{}_{}_s{seed}", setting_tag(setting), mode);
            let dir = out_dir.join("ledgers");
            write(
                &dir.join(format!("{stem}.ledger.jsonl")),
                &write_ledger(&out.ledger),
            )?;
            write(
                &dir.join(format!("{stem}.selections.jsonl")),
                &write_lines(&out.selections),
            )?;
        }
        Ok((out.seed_report.average, out.corloc()))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads.max(1))
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    let results: Vec<(f64, f64)> = pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_>>())?;
    if plan.write_ledgers {
        for &seed in &seeds {
            let world = generate_world(&plan.sim, seed)?;
            let proposals: Vec<ProposalRecord> = (0..world.images.len())
                .flat_map(|i| world.proposals(i))
                .map(|p| ProposalRecord::from_proposal(&p))
                .collect();
            let annotations: Vec<AnnotationRecord> = world
                .annotations()
                .iter()
                .map(AnnotationRecord::from_annotation)
                .collect();
            let dir = out_dir.join("ledgers");
            write(
                &dir.join(format!("world_s{seed}.proposals.jsonl")),
                &write_lines(&proposals),
            )?;
            write(
                &dir.join(format!("world_s{seed}.annotations.jsonl")),
                &write_lines(&annotations),
            )?;
        }
    }

    let mut rows = Vec::new();
    let mut by_job = BTreeMap::new();
    for (&(setting, seed, mode), &(seed_corloc, corloc)) in jobs.iter().zip(&results) {
        by_job.insert((setting.clone(), seed, mode == HarvestMode::Ri), corloc);
        rows.push(SimRow::Run {
            harvest_epochs: setting.clone(),
            mode,
            seed,
            seed_corloc: percent(seed_corloc),
            corloc: percent(corloc),
        });
    }
    for setting in &plan.run.harvest_settings {
        for mode in modes {
            let is_ri = mode == HarvestMode::Ri;
            let mine = |s: u64| by_job[&(setting.clone(), s, is_ri)];
            let other = |s: u64| by_job[&(setting.clone(), s, !is_ri)];
            rows.push(SimRow::Summary {
                harvest_epochs: setting.clone(),
                mode,
                seeds: seeds.len(),
                mean_corloc: percent(seeds.iter().map(|&s| mine(s)).sum::<f64>() / seeds.len() as f64),
                wins: seeds.iter().filter(|&&s| mine(s) > other(s)).count(),
            });
        }
    }
    write(&out_dir.join("report.jsonl"), &write_lines(&rows))?;
    Ok(rows)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let run = RunConfig::load(args.config.as_deref())?;
    let sim = match &args.sim_config {
        Some(p) => SimConfig::from_toml(&read(p)?)?,
        None => SimConfig::default(),
    };
    let mut settings = run.simulate;
    settings.seed = args.seed.unwrap_or(settings.seed);
    settings.num_seeds = args.num_seeds.unwrap_or(settings.num_seeds);
    settings.epochs = args.epochs.unwrap_or(settings.epochs);
    if !args.harvest_settings.is_empty() {
        settings.harvest_settings = args.harvest_settings.iter().map(|e| e.0.clone()).collect();
    }
    RunConfig {
        simulate: settings.clone(),
        ..RunConfig::default()
    }
    .validate()?;
    let plan = SimulatePlan {
        sim,
        ossh: run.ossh,
        run: settings,
        threads: args.threads,
        write_ledgers: !args.no_ledgers,
    };
    let rows = simulate(&plan, &args.out_dir)?;
    for row in rows {
        if let SimRow::Summary {
            harvest_epochs,
            mode,
            seeds,
            mean_corloc,
            wins,
        } = row
        {
            println!(
                "harvest {:<8} {:<8} mean CorLoc {:>5.1}  wins {wins}/{seeds}",
                setting_tag(&harvest_epochs),
                mode.to_string(),
                mean_corloc
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Detections,
    Seeds,
    Selections,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// detections | seeds | selections
    #[arg(long, value_parser = serde_value::<InputKind>, default_value = "detections")]
    pub input_kind: InputKind,
    /// Proposals file resolving selection boxes.
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    /// Class of a selections file; needed when the proposals score several.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub annotations: PathBuf,
    /// corloc | map
    #[arg(long, value_parser = serde_value::<Metric>, default_value = "corloc")]
    pub metric: Metric,
    #[arg(long)]
    pub iou: Option<f64>,
    /// eleven_point | continuous
    #[arg(long, value_parser = serde_value::<ApMethod>)]
    pub ap_method: Option<ApMethod>,
    #[arg(long)]
    pub include_difficult: bool,
    #[arg(long, value_parser = serde_value::<PixelConvention>, default_value = "continuous")]
    pub convention: PixelConvention,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalInput<'a> {
    Detections(&'a str),
    Seeds(&'a str),
    /// Selections with the proposals file and optional class.
    Selections(&'a str, &'a str, Option<&'a str>),
}

fn read_detections(text: &str, convention: PixelConvention) -> Result<Vec<Detection>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        image_id: ImageId,
        class: String,
        #[serde(rename = "box")]
        bbox: [f64; 4],
        #[serde(alias = "score")]
        confidence: f64,
    }
    parse_numbered::<Raw>(text)?
        .into_iter()
        .map(|(line, r)| {
            Ok(Detection {
                image_id: r.image_id,
                class: r.class,
                bbox: BBox::with_convention(r.bbox, convention)
                    .map_err(|e| Error::parse(line, e.to_string()))?,
                confidence: r.confidence,
            })
        })
        .collect()
}

/// The last-epoch selection of each image, boxes resolved from `proposals`.
fn selection_localizations(
    selections: &str,
    proposals: &str,
    class: Option<&str>,
    convention: PixelConvention,
) -> Result<Vec<Localization>> {
    let by_image = read_proposals(proposals, convention)?;
    let class = only_class(&by_image, class)?;
    let mut last: BTreeMap<ImageId, (u32, usize, SelectionRecord)> = BTreeMap::new();
    for (line, record) in parse_numbered::<SelectionRecord>(selections)? {
        match last.get(&record.image_id) {
            Some((epoch, _, _)) if *epoch > record.epoch => {}
            _ => {
                last.insert(record.image_id.clone(), (record.epoch, line, record));
            }
        }
    }
    last.into_iter()
        .map(|(image, (_, line, record))| {
            let bbox = by_image
                .get(&image)
                .and_then(|ps| ps.iter().find(|p| p.proposal_id == record.proposal_id))
                .map(|p| p.bbox)
                .ok_or_else(|| {
                    Error::parse(
                        line,
                        format!(
                            "proposal {} of image {image} is not in the proposals file",
                            record.proposal_id
                        ),
                    )
                })?;
            Ok(Localization {
                image_id: image,
                class: class.clone(),
                bbox,
            })
        })
        .collect()
}

pub fn eval_text(
    input: EvalInput<'_>,
    annotations: &str,
    metric: Metric,
    config: &EvalConfig,
    convention: PixelConvention,
) -> Result<String> {
    let annotations = read_annotations(annotations, convention)?;
    let report = match (metric, input) {
        (Metric::Map, EvalInput::Detections(text)) => {
            let options = ApOptions {
                iou_threshold: config.iou_threshold,
                method: config.ap_method,
                include_difficult: config.include_difficult,
            };
            mean_ap(&read_detections(text, convention)?, &annotations, &options)?
        }
        (Metric::Map, _) => {
            return Err(Error::config("metric", "map needs a detections file"));
        }
        (Metric::Corloc, input) => {
            let localizations = match input {
                EvalInput::Detections(text) => most_confident(&read_detections(text, convention)?),
                EvalInput::Seeds(text) => parse_lines::<SeedLine>(text)?
                    .into_iter()
                    .filter_map(|l| match l {
                        SeedLine::Seed(s) => Some(s),
                        SeedLine::Warning(_) => None,
                    })
                    .map(|s| {
                        Ok(Localization {
                            image_id: s.image_id,
                            class: s.class,
                            bbox: BBox::from_array(s.bbox)?,
                        })
                    })
                    .collect::<Result<_>>()?,
                EvalInput::Selections(sel, props, class) => {
                    selection_localizations(sel, props, class, convention)?
                }
            };
            corloc(&localizations, &annotations, config.iou_threshold)?
        }
    };
    Ok(ReportFile::from_report(&report).to_text())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut config = RunConfig::load(args.config.as_deref())?.eval;
    config.iou_threshold = args.iou.unwrap_or(config.iou_threshold);
    config.ap_method = args.ap_method.unwrap_or(config.ap_method);
    config.include_difficult |= args.include_difficult;
    RunConfig {
        eval: config.clone(),
        ..RunConfig::default()
    }
    .validate()?;

    let input = read(&args.input)?;
    let proposals = args.proposals.as_deref().map(read).transpose()?;
    let input = match args.input_kind {
        InputKind::Detections => EvalInput::Detections(&input),
        InputKind::Seeds => EvalInput::Seeds(&input),
        InputKind::Selections => {
            let proposals = proposals
                .as_deref()
                .ok_or_else(|| Error::config("proposals", "selections need --proposals"))?;
            EvalInput::Selections(&input, proposals, args.class.as_deref())
        }
    };
    let text = eval_text(
        input,
        &read(&args.annotations)?,
        args.metric,
        &config,
        args.convention,
    )?;
    let report = ReportFile::parse(&text)?;
    for row in report.rows.iter().filter(|r| r.flag.is_some()) {
        warn(&format!("class {} has no ground truth", row.class));
    }
    if args.out.is_some() {
        print!("{}", report.to_table());
    }
    emit(args.out.as_deref(), &text)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Seed(a) => cmd_seed(a),
        Command::Ossh(a) => cmd_ossh(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
    }
}
