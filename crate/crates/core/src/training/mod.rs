//! Multi-task training: one skip-gram task per view, one alignment task
//! per relation, advanced round-robin under a shared weighted total.
//!
//! Every scheduling round draws one batch per task, computes all task
//! losses and gradients, combines them through the weighting mode, and
//! applies a single clipped update to every touched parameter including
//! the task log-variances. An epoch is the number of rounds it takes the
//! largest intra-view task to consume its pair list once.

pub mod loss;
pub mod optimizer;
pub mod tables;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{CrossViewLinks, ViewGraph};
use crate::sampler::{
    build_noise, InterExample, InterStream, IntraExample, IntraStream, SamplerConfig,
};
use crate::types::{Relation, TaskId, View};
pub use loss::{inter_loss_grad, intra_loss_grad, weighted_total, InterGrads, WeightMode};
pub use optimizer::{Algorithm, Optimizer, OptimizerConfig};
pub use tables::{
    AlignmentTransform, EmbeddingTable, GradBundle, RowKind, TableGrad, TaskUncertainty,
};

/// Deterministic per-component seed derivation (splitmix64 over the
/// master seed xored with a stream label).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dim: usize,
    /// Dimension of the relational spaces; defaults to `dim`.
    pub relational_dim: Option<usize>,
    pub weighting: WeightMode,
    /// Variance floor for adaptive weighting (weight cap = 1/floor).
    pub floor_var: f64,
    /// Treat alignment scores as logits instead of raw score differences.
    pub inter_log_sigmoid: bool,
    /// Record per-task history every this many rounds.
    pub history_every: usize,
    /// Worker threads for the per-round task computations. Results are
    /// identical for any thread count; this only bounds parallelism.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            relational_dim: None,
            weighting: WeightMode::Adaptive,
            floor_var: 0.05,
            inter_log_sigmoid: false,
            history_every: 10,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.relational_dim == Some(0) {
            return Err(Error::Config("relational_dim must be >= 1".into()));
        }
        if self.floor_var <= 0.0 {
            return Err(Error::Config("floor_var must be positive".into()));
        }
        if self.history_every < 1 {
            return Err(Error::Config("history_every must be >= 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled point of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub step: u64,
    pub task: TaskId,
    pub loss: f64,
    pub sigma2: f64,
    pub weight: f64,
}

/// Everything training produces.
#[derive(Debug)]
pub struct TrainedModel {
    pub tables: BTreeMap<View, EmbeddingTable>,
    pub vocabs: BTreeMap<View, crate::graph::Vocab>,
    pub transforms: BTreeMap<Relation, AlignmentTransform>,
    pub uncertainties: BTreeMap<TaskId, TaskUncertainty>,
    pub history: Vec<HistoryRecord>,
}

/// Model plus divergence flag. On divergence the model holds the last
/// state before the failing round, so it can still be checkpointed.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub diverged: Option<String>,
}

enum TaskBatch {
    Intra {
        view: View,
        batch: Vec<IntraExample>,
    },
    Inter {
        relation: Relation,
        batch: Vec<InterExample>,
    },
}

enum TaskGrads {
    Intra { view: View, grad: TableGrad },
    Inter { relation: Relation, grads: InterGrads },
}

struct TaskResult {
    task: TaskId,
    loss: f64,
    grads: TaskGrads,
}

enum TaskStream {
    Intra { view: View, stream: IntraStream },
    Inter { relation: Relation, stream: InterStream },
}

/// Jointly train all views and relations.
///
/// `sequences` hold each view's node sequences as vocab indices (from
/// sessions or random walks); `graphs` supply vocabularies and node
/// frequencies; `links` one entry per declared relation.
pub fn train(
    sequences: &BTreeMap<View, Vec<Vec<u32>>>,
    graphs: &BTreeMap<View, ViewGraph>,
    links: &BTreeMap<Relation, CrossViewLinks>,
    sampler_cfg: &SamplerConfig,
    train_cfg: &TrainConfig,
    opt_cfg: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    sampler_cfg.validate()?;
    train_cfg.validate()?;
    opt_cfg.validate()?;
    if graphs.is_empty() {
        return Err(Error::Config("no views declared".into()));
    }
    for view in sequences.keys() {
        if !graphs.contains_key(view) {
            return Err(Error::Config(format!("sequences for undeclared view {view}")));
        }
    }
    for relation in links.keys() {
        if !graphs.contains_key(&relation.from) || !graphs.contains_key(&relation.to) {
            return Err(Error::Config(format!(
                "relation {relation} references an undeclared view"
            )));
        }
    }

    let dim = train_cfg.dim;
    let rel_dim = train_cfg.relational_dim.unwrap_or(dim);

    let mut tables: BTreeMap<View, EmbeddingTable> = BTreeMap::new();
    let mut noise: BTreeMap<View, crate::sampler::NoiseDistribution> = BTreeMap::new();
    for (&view, graph) in graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x10 + view as u64));
        tables.insert(
            view,
            EmbeddingTable::init(view, graph.vocab.len(), dim, &mut rng),
        );
        noise.insert(view, build_noise(&graph.node_freq, sampler_cfg.noise_power)?);
    }

    let mut transforms: BTreeMap<Relation, AlignmentTransform> = BTreeMap::new();
    for (i, &relation) in links.keys().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x20 + i as u64));
        transforms.insert(
            relation,
            AlignmentTransform::init(relation, dim, rel_dim, &mut rng),
        );
    }

    let mut streams: Vec<TaskStream> = Vec::new();
    let mut max_intra_pairs = 0usize;
    for &view in graphs.keys() {
        let empty = Vec::new();
        let seqs = sequences.get(&view).unwrap_or(&empty);
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x30 + view as u64));
        let stream = IntraStream::new(view, seqs, noise[&view].clone(), sampler_cfg, rng)?;
        max_intra_pairs = max_intra_pairs.max(stream.pairs_per_epoch());
        streams.push(TaskStream::Intra { view, stream });
    }
    for (i, (&relation, link)) in links.iter().enumerate() {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x40 + i as u64));
        let stream = InterStream::new(link, noise[&relation.to].clone(), sampler_cfg, rng)?;
        streams.push(TaskStream::Inter { relation, stream });
    }

    let mut uncertainties: BTreeMap<TaskId, TaskUncertainty> = BTreeMap::new();
    for stream in &streams {
        let task = match stream {
            TaskStream::Intra { view, .. } => TaskId::Intra(*view),
            TaskStream::Inter { relation, .. } => TaskId::Inter(*relation),
        };
        uncertainties.insert(task, TaskUncertainty::new(task, train_cfg.floor_var));
    }

    let mut optimizer = Optimizer::new(opt_cfg.clone())?;
    let mut history: Vec<HistoryRecord> = Vec::new();
    let mut diverged: Option<String> = None;

    let rounds_per_epoch = max_intra_pairs.div_ceil(sampler_cfg.batch_size).max(1);
    let total_rounds = rounds_per_epoch as u64 * sampler_cfg.epochs as u64;

    let pool = (train_cfg.threads > 1)
        .then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(train_cfg.threads)
                .build()
        })
        .transpose()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    'rounds: for round in 1..=total_rounds {
        // Batches are drawn sequentially so stream RNG state advances
        // deterministically; the loss computations then run in parallel.
        let mut batches = Vec::with_capacity(streams.len());
        for stream in &mut streams {
            batches.push(match stream {
                TaskStream::Intra { view, stream } => TaskBatch::Intra {
                    view: *view,
                    batch: stream.next_batch(sampler_cfg.batch_size)?,
                },
                TaskStream::Inter { relation, stream } => TaskBatch::Inter {
                    relation: *relation,
                    batch: stream.next_batch(sampler_cfg.batch_size)?,
                },
            });
        }

        let compute = |tb: &TaskBatch| -> Result<TaskResult> {
            match tb {
                TaskBatch::Intra { view, batch } => {
                    let (loss, grad) = intra_loss_grad(&tables[view], batch)?;
                    Ok(TaskResult {
                        task: TaskId::Intra(*view),
                        loss,
                        grads: TaskGrads::Intra { view: *view, grad },
                    })
                }
                TaskBatch::Inter { relation, batch } => {
                    let grads = inter_loss_grad(
                        &tables[&relation.from],
                        &tables[&relation.to],
                        &transforms[relation],
                        batch,
                        train_cfg.inter_log_sigmoid,
                    )?;
                    Ok(TaskResult {
                        task: TaskId::Inter(*relation),
                        loss: grads.loss,
                        grads: TaskGrads::Inter {
                            relation: *relation,
                            grads,
                        },
                    })
                }
            }
        };
        let results: Result<Vec<TaskResult>> = match &pool {
            Some(pool) => pool.install(|| batches.par_iter().map(compute).collect()),
            None => batches.iter().map(compute).collect(),
        };
        let results = match results {
            Ok(r) => r,
            Err(e @ Error::Numeric(_)) => {
                diverged = Some(e.to_string());
                break 'rounds;
            }
            Err(e) => return Err(e),
        };

        let losses: BTreeMap<TaskId, f64> = results.iter().map(|r| (r.task, r.loss)).collect();
        let wt = weighted_total(&losses, &uncertainties, &train_cfg.weighting)?;
        if !wt.total.is_finite() {
            diverged = Some(format!("non-finite total loss at round {round}"));
            break 'rounds;
        }

        let mut bundle = GradBundle::new();
        for result in &results {
            let w = wt.weights[&result.task];
            match &result.grads {
                TaskGrads::Intra { view, grad } => bundle.merge_table(*view, grad, w),
                TaskGrads::Inter { relation, grads } => {
                    bundle.merge_table(relation.from, &grads.from, w);
                    bundle.merge_table(relation.to, &grads.to, w);
                    bundle.merge_transform(*relation, &grads.transform, w);
                }
            }
        }
        if matches!(train_cfg.weighting, WeightMode::Adaptive) {
            for (&task, &g) in &wt.log_var_grads {
                bundle.add_log_var(task, g);
            }
        }

        match optimizer.apply(bundle, &mut tables, &mut transforms, &mut uncertainties) {
            Ok(_) => {}
            Err(e @ Error::Numeric(_)) => {
                diverged = Some(e.to_string());
                break 'rounds;
            }
            Err(e) => return Err(e),
        }

        if round == 1 || round == total_rounds || round % train_cfg.history_every as u64 == 0 {
            for result in &results {
                history.push(HistoryRecord {
                    step: round,
                    task: result.task,
                    loss: result.loss,
                    sigma2: wt.sigma2[&result.task],
                    weight: wt.weights[&result.task],
                });
            }
        }
    }

    let vocabs = graphs
        .iter()
        .map(|(&view, g)| (view, g.vocab.clone()))
        .collect();
    Ok(TrainOutcome {
        model: TrainedModel {
            tables,
            vocabs,
            transforms,
            uncertainties,
            history,
        },
        diverged,
    })
}
