//! Per-view vocabularies, co-occurrence graphs, and cross-view link tables.
//!
//! Sessions drive training directly; the graphs exist for statistics,
//! inspection dumps, and the optional random-walk sampler. Links are the
//! supervision for the inter-view alignment tasks.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::ingest::{AttributeMap, Session};
use crate::types::{Relation, View};

/// Bijection between node ids and dense indices `[0, V)`, assigned in
/// first-seen order so runs are reproducible.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn get_or_insert(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = u32::try_from(self.ids.len()).expect("vocab exceeds u32 range");
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: u32) -> &str {
        &self.ids[index as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in index order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.ids.iter().enumerate().map(|(i, s)| (i as u32, s.as_str()))
    }
}

/// Weighted co-occurrence graph for one view. An edge a -> b counts how
/// often b directly follows a in a session.
#[derive(Debug, Clone)]
pub struct ViewGraph {
    pub view: View,
    pub vocab: Vocab,
    /// (src, dst) -> co-occurrence count. For undirected graphs the key
    /// is stored with src <= dst.
    pub edges: BTreeMap<(u32, u32), u64>,
    /// Occurrences of each node over all sessions, by vocab index.
    pub node_freq: Vec<u64>,
    pub directed: bool,
}

impl ViewGraph {
    pub fn distinct_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Outgoing adjacency lists in vocab-index order. For undirected
    /// graphs each edge appears in both endpoint lists.
    pub fn out_adjacency(&self) -> Vec<Vec<(u32, u64)>> {
        let mut adj = vec![Vec::new(); self.vocab.len()];
        for (&(a, b), &w) in &self.edges {
            adj[a as usize].push((b, w));
            if !self.directed {
                adj[b as usize].push((a, w));
            }
        }
        adj
    }

    /// `src_id<TAB>dst_id<TAB>weight`, one edge per line, in index order.
    pub fn write_edges(&self, mut w: impl Write) -> Result<()> {
        for (&(a, b), &weight) in &self.edges {
            writeln!(w, "{}\t{}\t{}", self.vocab.id(a), self.vocab.id(b), weight)
                .map_err(|e| Error::io("<graph dump>", e))?;
        }
        Ok(())
    }

    /// `node_id<TAB>index<TAB>freq`, one node per line, in index order.
    pub fn write_vocab(&self, mut w: impl Write) -> Result<()> {
        for (i, id) in self.vocab.iter() {
            writeln!(w, "{}\t{}\t{}", id, i, self.node_freq[i as usize])
                .map_err(|e| Error::io("<vocab dump>", e))?;
        }
        Ok(())
    }
}

/// Build the co-occurrence graph for one view from its sessions.
/// Sessions must be duplicate-collapsed; a consecutive duplicate here
/// means corrupt input and is fatal.
pub fn build_view_graph(view: View, sessions: &[Session], directed: bool) -> Result<ViewGraph> {
    let mut vocab = Vocab::new();
    let mut edges: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut node_freq: Vec<u64> = Vec::new();
    for session in sessions {
        if session.view != view {
            return Err(Error::Data(format!(
                "session of view {} fed to {} graph build",
                session.view, view
            )));
        }
        let mut prev: Option<u32> = None;
        for node in &session.nodes {
            let i = vocab.get_or_insert(node);
            if node_freq.len() <= i as usize {
                node_freq.resize(i as usize + 1, 0);
            }
            node_freq[i as usize] += 1;
            if let Some(p) = prev {
                if p == i {
                    return Err(Error::Data(format!(
                        "consecutive duplicate node {node:?} in {view} session"
                    )));
                }
                let key = if directed || p <= i { (p, i) } else { (i, p) };
                *edges.entry(key).or_insert(0) += 1;
            }
            prev = Some(i);
        }
    }
    Ok(ViewGraph {
        view,
        vocab,
        edges,
        node_freq,
        directed,
    })
}

/// Map sessions of one view to index sequences under its vocabulary.
/// Every node must be present: sequences and vocabulary are expected to
/// come from the same session set.
pub fn index_sequences(sessions: &[Session], vocab: &Vocab) -> Result<Vec<Vec<u32>>> {
    sessions
        .iter()
        .map(|s| {
            s.nodes
                .iter()
                .map(|n| {
                    vocab.get(n).ok_or_else(|| {
                        Error::Data(format!("node {n:?} missing from vocabulary"))
                    })
                })
                .collect()
        })
        .collect()
}

/// The item -> attribute links for one relation, indexed against the two
/// view vocabularies.
#[derive(Debug, Clone)]
pub struct CrossViewLinks {
    pub relation: Relation,
    /// from-index -> to-index; many-to-one.
    pub pairs: BTreeMap<u32, u32>,
    /// (from, to) -> number of observed item occurrences.
    pub observed: BTreeMap<(u32, u32), u64>,
}

impl CrossViewLinks {
    pub fn total_observations(&self) -> u64 {
        self.observed.values().sum()
    }

    /// `from_id<TAB>to_id<TAB>count`, one link per line, in index order.
    pub fn write_links(
        &self,
        from_vocab: &Vocab,
        to_vocab: &Vocab,
        mut w: impl Write,
    ) -> Result<()> {
        for (&(a, b), &count) in &self.observed {
            writeln!(w, "{}\t{}\t{}", from_vocab.id(a), to_vocab.id(b), count)
                .map_err(|e| Error::io("<links dump>", e))?;
        }
        Ok(())
    }
}

/// Build cross-view links by walking the item sessions through the
/// attribute map. Every mapped item occurrence contributes one count.
/// Items absent from the map are skipped (the ingest policy already
/// decided their fate); a mapped attribute missing from the target
/// vocabulary means the inputs are inconsistent.
pub fn build_cross_links(
    item_sessions: &[Session],
    attrs: &AttributeMap,
    item_vocab: &Vocab,
    to_vocab: &Vocab,
) -> Result<CrossViewLinks> {
    let relation = Relation::new(View::Item, attrs.view)?;
    let mut pairs: BTreeMap<u32, u32> = BTreeMap::new();
    let mut observed: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for session in item_sessions {
        for node in &session.nodes {
            let Some(attr) = attrs.get(node) else {
                continue;
            };
            let from = item_vocab.get(node).ok_or_else(|| {
                Error::Data(format!("item {node:?} missing from item vocabulary"))
            })?;
            let to = to_vocab.get(attr).ok_or_else(|| {
                Error::Data(format!(
                    "attribute {attr:?} missing from {} vocabulary",
                    attrs.view
                ))
            })?;
            match pairs.get(&from) {
                Some(&existing) if existing != to => {
                    return Err(Error::Data(format!(
                        "item {node:?} linked to two distinct {} attributes",
                        attrs.view
                    )));
                }
                _ => {
                    pairs.insert(from, to);
                }
            }
            *observed.entry((from, to)).or_insert(0) += 1;
        }
    }
    Ok(CrossViewLinks {
        relation,
        pairs,
        observed,
    })
}
