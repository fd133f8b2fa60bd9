//! Seed positive-sample acquisition.
//!
//! Per image and class: take the proposals with the highest class responses
//! into a candidate pool, connect pool members whose boxes overlap strongly,
//! run the greedy dense subgraph discovery over that graph, and keep the
//! highest-responding member of the discovered node set as the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ThresholdMode};

pub type ProposalId = u32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl ImageId {
    pub fn new(id: impl Into<String>) -> Self {
        ImageId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_owned())
    }
}

/// A candidate box with per-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub image_id: ImageId,
    pub proposal_id: ProposalId,
    pub bbox: BBox,
    pub scores: BTreeMap<String, f64>,
}

impl Proposal {
    pub fn new(
        image_id: ImageId,
        proposal_id: ProposalId,
        bbox: BBox,
        scores: BTreeMap<String, f64>,
    ) -> Result<Self> {
        for (class, &score) in &scores {
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::ScoreOutOfRange {
                    score,
                    context: format!("image {image_id} proposal {proposal_id} class {class}"),
                });
            }
        }
        Ok(Self {
            image_id,
            proposal_id,
            bbox,
            scores,
        })
    }

    pub fn score(&self, class: &str) -> Result<f64> {
        self.scores
            .get(class)
            .copied()
            .ok_or_else(|| Error::MissingScore {
                image: self.image_id.to_string(),
                proposal: self.proposal_id,
                class: class.to_owned(),
            })
    }
}

/// The highest-responding proposals of one image for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub image_id: ImageId,
    pub class: String,
    pub capacity: usize,
    /// Descending response, ties by ascending proposal id.
    pub proposals: Vec<Proposal>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    /// Response of the `i`-th pool member to the pool class.
    pub fn response(&self, i: usize) -> f64 {
        // Presence is checked when the pool is built.
        self.proposals[i].scores[&self.class]
    }

    pub fn get(&self, id: ProposalId) -> Option<&Proposal> {
        self.proposals.iter().find(|p| p.proposal_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ProposalId> + '_ {
        self.proposals.iter().map(|p| p.proposal_id)
    }
}

/// Image-level class score by cross-proposal max-pooling.
pub fn aggregate_image_score(proposals: &[Proposal], class: &str) -> Result<f64> {
    let first = proposals.first().ok_or_else(|| Error::NoProposals {
        image: "<unknown>".into(),
    })?;
    let mut best = first.score(class)?;
    for p in &proposals[1..] {
        best = best.max(p.score(class)?);
    }
    Ok(best)
}

/// The `n` highest-responding proposals for `class`.
pub fn top_candidates(proposals: &[Proposal], class: &str, n: usize) -> Result<CandidatePool> {
    if n == 0 {
        return Err(Error::config("top_n", "must be at least 1"));
    }
    let image_id = proposals
        .first()
        .map(|p| p.image_id.clone())
        .unwrap_or_else(|| ImageId::new(""));

    let mut seen = BTreeSet::new();
    let mut ranked = Vec::with_capacity(proposals.len());
    for p in proposals {
        if !seen.insert(p.proposal_id) {
            return Err(Error::DuplicateProposal {
                image: p.image_id.to_string(),
                proposal: p.proposal_id,
            });
        }
        ranked.push((p.score(class)?, p));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.proposal_id.cmp(&b.1.proposal_id)));
    ranked.truncate(n);

    Ok(CandidatePool {
        image_id,
        class: class.to_owned(),
        capacity: n,
        proposals: ranked.into_iter().map(|(_, p)| p.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: ProposalId,
    pub response: f64,
}

/// Undirected, unweighted overlap graph over a candidate pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalGraph {
    nodes: Vec<GraphNode>,
    adjacency: Vec<Vec<usize>>,
    threshold: Option<f64>,
}

impl ProposalGraph {
    /// Builds a graph from explicit node indices pairs. Self loops and
    /// repeated edges are dropped.
    pub fn from_edges(nodes: Vec<GraphNode>, edges: &[(usize, usize)]) -> Result<Self> {
        let ids: BTreeSet<_> = nodes.iter().map(|n| n.id).collect();
        if ids.len() != nodes.len() {
            return Err(Error::Invariant("graph node ids must be unique".into()));
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
        for &(a, b) in edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::Invariant(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        Ok(Self {
            nodes,
            adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
            threshold: None,
        })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn index_of(&self, id: ProposalId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

/// Connects every pair of pool proposals whose IoU passes `threshold`.
pub fn build_graph(pool: &CandidatePool, threshold: f64, mode: ThresholdMode) -> ProposalGraph {
    let n = pool.len();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let overlap = iou(&pool.proposals[i].bbox, &pool.proposals[j].bbox);
            if mode.passes(overlap, threshold) {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    ProposalGraph {
        nodes: (0..n)
            .map(|i| GraphNode {
                id: pool.proposals[i].proposal_id,
                response: pool.response(i),
            })
            .collect(),
        adjacency,
        threshold: Some(threshold),
    }
}

/// Which node set dense subgraph discovery reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubgraphOutput {
    /// The max-degree node picked in each iteration.
    #[default]
    Selected,
    /// Every node removed during the iterations, picked nodes included.
    Pruned,
}

/// Greedy dense subgraph discovery.
///
/// While more than `k` nodes remain, pick the remaining node with the most
/// remaining neighbours (ties: higher response, then lower id), record it and
/// remove it together with its remaining neighbours.
pub fn dense_subgraph(graph: &ProposalGraph, k: usize, output: SubgraphOutput) -> BTreeSet<ProposalId> {
    let n = graph.len();
    let mut alive = vec![true; n];
    let mut remaining = n;
    let mut degree: Vec<usize> = (0..n).map(|i| graph.neighbors(i).len()).collect();
    let mut selected = BTreeSet::new();
    let mut pruned = BTreeSet::new();

    while remaining > k {
        let best = (0..n)
            .filter(|&i| alive[i])
            .max_by(|&a, &b| {
                let (na, nb) = (&graph.nodes[a], &graph.nodes[b]);
                degree[a]
                    .cmp(&degree[b])
                    .then(na.response.total_cmp(&nb.response))
                    .then(nb.id.cmp(&na.id))
            })
            .expect("remaining > k >= 0 implies a live node");

        selected.insert(graph.nodes[best].id);
        let mut removed: Vec<usize> = graph
            .neighbors(best)
            .iter()
            .copied()
            .filter(|&j| alive[j])
            .collect();
        removed.push(best);
        for &r in &removed {
            alive[r] = false;
            remaining -= 1;
            pruned.insert(graph.nodes[r].id);
        }
        for &r in &removed {
            for &j in graph.neighbors(r) {
                if alive[j] {
                    degree[j] -= 1;
                }
            }
        }
    }

    match output {
        SubgraphOutput::Selected => selected,
        SubgraphOutput::Pruned => pruned,
    }
}

/// Highest-responding pool member among `dsd_nodes`, or the best pool member
/// overall when `dsd_nodes` selects nothing.
pub fn select_seed<'a>(pool: &'a CandidatePool, dsd_nodes: &BTreeSet<ProposalId>) -> Result<&'a Proposal> {
    let best = |filter: &dyn Fn(&Proposal) -> bool| {
        (0..pool.len())
            .filter(|&i| filter(&pool.proposals[i]))
            .max_by(|&a, &b| {
                pool.response(a)
                    .total_cmp(&pool.response(b))
                    .then(pool.proposals[b].proposal_id.cmp(&pool.proposals[a].proposal_id))
            })
    };
    best(&|p| dsd_nodes.contains(&p.proposal_id))
        .or_else(|| best(&|_| true))
        .map(|i| &pool.proposals[i])
        .ok_or_else(|| Error::NoProposals {
            image: pool.image_id.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub top_n: usize,
    pub edge_threshold: f64,
    pub edge_mode: ThresholdMode,
    pub min_nodes: usize,
    pub output: SubgraphOutput,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            top_n: 100,
            edge_threshold: 0.8,
            edge_mode: ThresholdMode::Inclusive,
            min_nodes: 5,
            output: SubgraphOutput::Selected,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::config("top_n", "must be at least 1"));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(Error::config("edge_threshold", "must lie in (0, 1)"));
        }
        if self.min_nodes == 0 {
            return Err(Error::config("min_nodes", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub pool: CandidatePool,
    pub dsd_nodes: BTreeSet<ProposalId>,
    pub seed: Proposal,
}

/// Full seed pipeline for one image and class.
pub fn mine_seed(proposals: &[Proposal], class: &str, config: &SeedConfig) -> Result<SeedOutcome> {
    config.validate()?;
    let pool = top_candidates(proposals, class, config.top_n)?;
    let graph = build_graph(&pool, config.edge_threshold, config.edge_mode);
    let dsd_nodes = dense_subgraph(&graph, config.min_nodes, config.output);
    let seed = select_seed(&pool, &dsd_nodes)?.clone();
    Ok(SeedOutcome {
        pool,
        dsd_nodes,
        seed,
    })
}
