//! Training-example streams.
//!
//! Intra-view examples are skip-gram (center, context) pairs enumerated
//! from node sequences with k negatives per pair drawn from a smoothed
//! unigram noise distribution. Inter-view examples are (item, attribute)
//! links sampled proportionally to observed counts with k attribute
//! negatives. Streams cycle indefinitely; the training loop decides how
//! many batches constitute an epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{CrossViewLinks, ViewGraph};
use crate::types::{Relation, View};

/// Random-walk generation settings for the optional walk-based sequence
/// source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    pub walks_per_node: usize,
    pub walk_length: usize,
}

/// Example-generation settings shared by all tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Skip-gram window: each position pairs with up to `window`
    /// neighbors on each side.
    pub window: usize,
    /// Negatives per positive example.
    pub negatives_k: usize,
    /// Exponent applied to node frequencies in the noise distribution.
    pub noise_power: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sample inter-view positives uniformly over distinct links instead
    /// of proportionally to observed counts.
    pub inter_uniform: bool,
    /// Derive sequences from random walks over the view graphs instead
    /// of consuming sessions directly.
    pub walks: Option<WalkParams>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            window: 9,
            negatives_k: 10,
            noise_power: 0.75,
            batch_size: 2048,
            epochs: 10,
            inter_uniform: false,
            walks: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.negatives_k < 1 {
            return Err(Error::Config("negatives_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_power) {
            return Err(Error::Config("noise_power must be in [0, 1]".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if let Some(w) = self.walks {
            if w.walks_per_node < 1 || w.walk_length < 2 {
                return Err(Error::Config(
                    "walks_per_node must be >= 1 and walk_length >= 2".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Noise distribution over a vocabulary: P(i) proportional to freq(i)
/// raised to `power`. Stored as a cumulative table for inverse-CDF
/// sampling.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
}

/// Build the noise distribution from node frequencies.
pub fn build_noise(freq: &[u64], power: f64) -> Result<NoiseDistribution> {
    if freq.is_empty() {
        return Err(Error::Data("noise distribution over empty vocabulary".into()));
    }
    if freq.iter().any(|&f| f == 0) {
        return Err(Error::Data("zero-frequency node in vocabulary".into()));
    }
    let weights: Vec<f64> = freq.iter().map(|&f| (f as f64).powf(power)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    // Accumulation error must never push the final bucket below 1.
    *cumulative.last_mut().unwrap() = 1.0;
    Ok(NoiseDistribution { cumulative })
}

impl NoiseDistribution {
    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Probability mass of index `i`.
    pub fn prob(&self, i: u32) -> f64 {
        let i = i as usize;
        let lo = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - lo
    }

    /// Draw one index.
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let r: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= r) as u32
    }
}

/// Draw `k` negatives, rejecting any draw equal to `exclude`.
pub fn sample_negatives(
    dist: &NoiseDistribution,
    k: usize,
    exclude: u32,
    rng: &mut impl Rng,
) -> Result<Vec<u32>> {
    if dist.len() < 2 {
        return Err(Error::Data(
            "cannot sample negatives from a vocabulary of size 1".into(),
        ));
    }
    let mut negs = Vec::with_capacity(k);
    while negs.len() < k {
        let i = dist.sample(rng);
        if i != exclude {
            negs.push(i);
        }
    }
    Ok(negs)
}

/// Enumerate skip-gram (center, context) pairs for one node sequence:
/// every position pairs with every in-bounds neighbor within `window`
/// on either side, in position order. A sequence shorter than 2 yields
/// nothing.
pub fn gen_skipgram_pairs(nodes: &[u32], window: usize) -> Vec<(u32, u32)> {
    let n = nodes.len();
    let mut pairs = Vec::new();
    for t in 0..n {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(n - 1);
        for j in lo..=hi {
            if j != t {
                pairs.push((nodes[t], nodes[j]));
            }
        }
    }
    pairs
}

/// One intra-view training example.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraExample {
    pub view: View,
    pub center: u32,
    pub context: u32,
    /// k indices, none equal to `context`.
    pub negatives: Vec<u32>,
}

/// One inter-view training example.
#[derive(Debug, Clone, PartialEq)]
pub struct InterExample {
    pub relation: Relation,
    pub from: u32,
    pub to_pos: u32,
    /// k indices in the to-view vocabulary, none equal to `to_pos`.
    pub to_negs: Vec<u32>,
}

/// Cycling batch stream of intra-view examples. Pairs are enumerated
/// once, then shuffled at every wrap; negatives are drawn as batches
/// are produced. Deterministic for a fixed seed.
pub struct IntraStream {
    view: View,
    pairs: Vec<(u32, u32)>,
    pos: usize,
    dist: NoiseDistribution,
    k: usize,
    rng: ChaCha8Rng,
}

impl IntraStream {
    /// `sequences` are the view's node sequences as vocab indices.
    /// Pairs whose two positions hold the same node are dropped:
    /// a node is never its own context.
    pub fn new(
        view: View,
        sequences: &[Vec<u32>],
        dist: NoiseDistribution,
        config: &SamplerConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if dist.len() < 2 {
            return Err(Error::Data(format!(
                "{view} vocabulary too small for negative sampling"
            )));
        }
        let mut pairs = Vec::new();
        for seq in sequences {
            pairs.extend(
                gen_skipgram_pairs(seq, config.window)
                    .into_iter()
                    .filter(|(c, x)| c != x),
            );
        }
        if pairs.is_empty() {
            return Err(Error::Data(format!(
                "no skip-gram pairs in {view} view (all sessions too short?)"
            )));
        }
        let mut stream = IntraStream {
            view,
            pairs,
            pos: 0,
            dist,
            k: config.negatives_k,
            rng,
        };
        stream.pairs.shuffle(&mut stream.rng);
        Ok(stream)
    }

    /// Total (center, context) pairs per epoch.
    pub fn pairs_per_epoch(&self) -> usize {
        self.pairs.len()
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<Vec<IntraExample>> {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if self.pos == self.pairs.len() {
                self.pairs.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let (center, context) = self.pairs[self.pos];
            self.pos += 1;
            let negatives = sample_negatives(&self.dist, self.k, context, &mut self.rng)?;
            batch.push(IntraExample {
                view: self.view,
                center,
                context,
                negatives,
            });
        }
        Ok(batch)
    }
}

/// Cycling batch stream of inter-view examples. Positives are sampled
/// i.i.d., proportionally to observed link counts (or uniformly over
/// distinct links), with negatives from the to-view noise distribution.
pub struct InterStream {
    relation: Relation,
    /// (from, to) per distinct link, aligned with `cumulative`.
    links: Vec<(u32, u32)>,
    cumulative: Vec<f64>,
    dist_to: NoiseDistribution,
    k: usize,
    rng: ChaCha8Rng,
}

impl InterStream {
    pub fn new(
        links: &CrossViewLinks,
        dist_to: NoiseDistribution,
        config: &SamplerConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if links.observed.is_empty() {
            return Err(Error::Data(format!(
                "no links observed for relation {}",
                links.relation
            )));
        }
        if dist_to.len() < 2 {
            return Err(Error::Data(format!(
                "to-view vocabulary of relation {} too small for negative sampling",
                links.relation
            )));
        }
        let pairs: Vec<(u32, u32)> = links.observed.keys().copied().collect();
        let weights: Vec<f64> = if config.inter_uniform {
            vec![1.0; pairs.len()]
        } else {
            links.observed.values().map(|&c| c as f64).collect()
        };
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(InterStream {
            relation: links.relation,
            links: pairs,
            cumulative,
            dist_to,
            k: config.negatives_k,
            rng,
        })
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<Vec<InterExample>> {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            let r: f64 = self.rng.random();
            let i = self.cumulative.partition_point(|&c| c <= r);
            let (from, to_pos) = self.links[i];
            let to_negs = sample_negatives(&self.dist_to, self.k, to_pos, &mut self.rng)?;
            batch.push(InterExample {
                relation: self.relation,
                from,
                to_pos,
                to_negs,
            });
        }
        Ok(batch)
    }
}

/// Generate weighted random walks over a view graph: `walks_per_node`
/// walks from every node, each up to `walk_length` nodes, transition
/// probability proportional to edge weight. A walk stops early at a
/// node with no outgoing edges.
pub fn random_walks(
    graph: &ViewGraph,
    params: WalkParams,
    rng: &mut impl Rng,
) -> Vec<Vec<u32>> {
    let adj = graph.out_adjacency();
    let totals: Vec<u64> = adj
        .iter()
        .map(|edges| edges.iter().map(|&(_, w)| w).sum())
        .collect();
    let mut walks = Vec::new();
    for start in 0..graph.vocab.len() as u32 {
        for _ in 0..params.walks_per_node {
            let mut walk = vec![start];
            let mut cur = start;
            while walk.len() < params.walk_length {
                let edges = &adj[cur as usize];
                if edges.is_empty() {
                    break;
                }
                let mut pick = rng.random_range(0..totals[cur as usize]);
                let mut next = edges[edges.len() - 1].0;
                for &(dst, w) in edges {
                    if pick < w {
                        next = dst;
                        break;
                    }
                    pick -= w;
                }
                walk.push(next);
                cur = next;
            }
            if walk.len() >= 2 {
                walks.push(walk);
            }
        }
    }
    walks
}
