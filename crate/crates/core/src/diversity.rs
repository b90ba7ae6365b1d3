//! Mahalanobis-style metric learning over frozen item embeddings.
//!
//! Two metric matrices are learned, one over the item embedding space
//! and one over the item-to-category relational space e_ic = sigmoid(W
//! e_i). Each matrix is parameterized as M = L^T L, so M stays
//! symmetric positive semidefinite no matter what gradient steps do to
//! L. A contrastive loss pulls positive pairs together and pushes
//! negative pairs beyond a margin:
//!
//!   loss = (1/2N) sum_n [ y d^2 + (1-y) max(margin - d, 0)^2 ]
//!
//! with d(a,b) = d_i(a,b) + d_ic(a,b) and d_i = Delta^T M_i Delta.
//! Embeddings are frozen throughout; only the L factors move.
//!
//! Positive pairs are items that co-occur inside a session window but
//! belong to different categories; negatives are uniform random item
//! pairs. The novelty proxy measures how many recommended items fall
//! outside the categories of a user's recent history.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Vocab;
use crate::ingest::{AttributeMap, Session};
use crate::training::loss::sigmoid;
use crate::training::optimizer::Algorithm;
use crate::training::{AlignmentTransform, EmbeddingTable, OptimizerConfig};
use crate::types::View;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub a: u32,
    pub b: u32,
    /// True for positive (should be close) pairs.
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct MetricConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Max in-session distance for positive pair extraction.
    pub window: usize,
    /// Random negatives generated per positive.
    pub negative_ratio: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            margin: 1.0,
            batch_size: 256,
            epochs: 20,
            window: 5,
            negative_ratio: 1,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("metric margin must be > 0".into()));
        }
        if self.batch_size < 1 || self.window < 1 || self.negative_ratio < 1 {
            return Err(Error::Config(
                "metric batch_size, window and negative_ratio must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Factor matrices of the two learned metrics, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub dim: usize,
    pub rel_dim: usize,
    /// d x d factor of the item-space metric.
    pub l_i: Vec<f64>,
    /// rel_dim x rel_dim factor of the relational-space metric.
    pub l_ic: Vec<f64>,
    pub margin: f64,
}

impl MetricModel {
    /// Identity factors: both metrics start as plain squared Euclidean.
    pub fn identity(dim: usize, rel_dim: usize, margin: f64) -> Self {
        let eye = |d: usize| {
            let mut m = vec![0.0; d * d];
            for j in 0..d {
                m[j * d + j] = 1.0;
            }
            m
        };
        MetricModel {
            dim,
            rel_dim,
            l_i: eye(dim),
            l_ic: eye(rel_dim),
            margin,
        }
    }

    /// M_i = L_i^T L_i, row-major.
    pub fn m_i(&self) -> Vec<f64> {
        gram(&self.l_i, self.dim)
    }

    pub fn m_ic(&self) -> Vec<f64> {
        gram(&self.l_ic, self.rel_dim)
    }
}

fn gram(l: &[f64], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            let mut s = 0.0;
            for r in 0..d {
                s += l[r * d + j] * l[r * d + k];
            }
            m[j * d + k] = s;
        }
    }
    m
}

/// Item embeddings plus their relational projections, frozen for
/// metric training.
#[derive(Debug, Clone)]
pub struct FrozenEmbeddings {
    pub n: usize,
    pub dim: usize,
    pub rel_dim: usize,
    e_i: Vec<f64>,
    e_ic: Vec<f64>,
}

impl FrozenEmbeddings {
    pub fn from_model(table: &EmbeddingTable, transform: &AlignmentTransform) -> Result<Self> {
        if transform.in_dim != table.dim {
            return Err(Error::Config(format!(
                "transform expects {}-dim input but item table is {}-dim",
                transform.in_dim, table.dim
            )));
        }
        let n = table.vocab_size();
        let rel_dim = transform.out_dim;
        let mut e_ic = vec![0.0; n * rel_dim];
        for i in 0..n {
            let row = &mut e_ic[i * rel_dim..(i + 1) * rel_dim];
            transform.apply(table.input_row(i as u32), row);
            for v in row.iter_mut() {
                *v = sigmoid(*v);
            }
        }
        Ok(FrozenEmbeddings {
            n,
            dim: table.dim,
            rel_dim,
            e_i: table.input.clone(),
            e_ic,
        })
    }

    pub fn item(&self, i: u32) -> &[f64] {
        &self.e_i[i as usize * self.dim..(i as usize + 1) * self.dim]
    }

    pub fn rel(&self, i: u32) -> &[f64] {
        &self.e_ic[i as usize * self.rel_dim..(i as usize + 1) * self.rel_dim]
    }
}

/// z = L * delta into `z`; returns |z|^2 = delta^T L^T L delta.
fn factored_quad(l: &[f64], d: usize, delta: &[f64], z: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..d {
        let row = &l[j * d..(j + 1) * d];
        let zj: f64 = row.iter().zip(delta).map(|(x, y)| x * y).sum();
        z[j] = zj;
        total += zj * zj;
    }
    total
}

/// Distances (item-space, relational-space, combined) of one pair.
pub fn pair_distance(
    model: &MetricModel,
    e_i_a: &[f64],
    e_i_b: &[f64],
    e_ic_a: &[f64],
    e_ic_b: &[f64],
) -> (f64, f64, f64) {
    let delta_i: Vec<f64> = e_i_a.iter().zip(e_i_b).map(|(a, b)| a - b).collect();
    let delta_ic: Vec<f64> = e_ic_a.iter().zip(e_ic_b).map(|(a, b)| a - b).collect();
    let mut z = vec![0.0; model.dim.max(model.rel_dim)];
    let d_i = factored_quad(&model.l_i, model.dim, &delta_i, &mut z[..model.dim]);
    let d_ic = factored_quad(&model.l_ic, model.rel_dim, &delta_ic, &mut z[..model.rel_dim]);
    (d_i, d_ic, d_i + d_ic)
}

/// Batch loss and gradients w.r.t. the two L factors. Embeddings are
/// inputs only and receive no gradient.
pub fn contrastive_loss_grad(
    model: &MetricModel,
    frozen: &FrozenEmbeddings,
    batch: &[PairExample],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty metric batch".into()));
    }
    let (dim, rel_dim) = (model.dim, model.rel_dim);
    let inv_2n = 1.0 / (2.0 * batch.len() as f64);
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut g_i = vec![0.0; dim * dim];
    let mut g_ic = vec![0.0; rel_dim * rel_dim];
    let mut delta_i = vec![0.0; dim];
    let mut delta_ic = vec![0.0; rel_dim];
    let mut z_i = vec![0.0; dim];
    let mut z_ic = vec![0.0; rel_dim];
    for ex in batch {
        for (d, (a, b)) in delta_i
            .iter_mut()
            .zip(frozen.item(ex.a).iter().zip(frozen.item(ex.b)))
        {
            *d = a - b;
        }
        for (d, (a, b)) in delta_ic
            .iter_mut()
            .zip(frozen.rel(ex.a).iter().zip(frozen.rel(ex.b)))
        {
            *d = a - b;
        }
        let d_i = factored_quad(&model.l_i, dim, &delta_i, &mut z_i);
        let d_ic = factored_quad(&model.l_ic, rel_dim, &delta_ic, &mut z_ic);
        let d = d_i + d_ic;
        // coef = d(loss_n)/dd before the 1/2N scale.
        let coef = if ex.label {
            loss += inv_2n * d * d;
            2.0 * d
        } else {
            let slack = model.margin - d;
            if slack > 0.0 {
                loss += inv_2n * slack * slack;
                -2.0 * slack
            } else {
                0.0
            }
        };
        if coef != 0.0 {
            // d(loss)/dL = (1/2N) * coef * 2 z delta^T = (coef/N) z delta^T
            let c = coef * inv_n;
            for j in 0..dim {
                let zj = c * z_i[j];
                let row = &mut g_i[j * dim..(j + 1) * dim];
                for (g, dl) in row.iter_mut().zip(&delta_i) {
                    *g += zj * dl;
                }
            }
            for j in 0..rel_dim {
                let zj = c * z_ic[j];
                let row = &mut g_ic[j * rel_dim..(j + 1) * rel_dim];
                for (g, dl) in row.iter_mut().zip(&delta_ic) {
                    *g += zj * dl;
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("metric loss diverged: {loss}")));
    }
    Ok((loss, g_i, g_ic))
}

/// Positive pairs: same-session items at distance <= window with
/// different categories. Negatives: uniform random distinct item pairs,
/// `negative_ratio` per positive. Items missing a category never form
/// positives. All sessions must be item-view.
pub fn generate_pairs(
    sessions: &[Session],
    vocab: &Vocab,
    categories: &AttributeMap,
    cfg: &MetricConfig,
    seed: u64,
) -> Result<Vec<PairExample>> {
    cfg.validate()?;
    let mut pairs: Vec<PairExample> = sessions
        .par_iter()
        .map(|s| {
            let mut out = Vec::new();
            if s.view != View::Item {
                return out;
            }
            for i in 0..s.nodes.len() {
                let hi = (i + cfg.window).min(s.nodes.len() - 1);
                for j in i + 1..=hi {
                    let (na, nb) = (&s.nodes[i], &s.nodes[j]);
                    if na == nb {
                        continue;
                    }
                    let (Some(ca), Some(cb)) = (categories.get(na), categories.get(nb)) else {
                        continue;
                    };
                    if ca == cb {
                        continue;
                    }
                    let (Some(a), Some(b)) = (vocab.get(na), vocab.get(nb)) else {
                        continue;
                    };
                    out.push(PairExample { a, b, label: true });
                }
            }
            out
        })
        .flatten()
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(
            "no cross-category co-occurring item pairs; metric training needs sessions \
             spanning at least two categories"
                .into(),
        ));
    }
    if vocab.len() < 2 {
        return Err(Error::Data("need at least 2 items for negative pairs".into()));
    }
    let n_neg = pairs.len() * cfg.negative_ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab.len() as u32;
    for _ in 0..n_neg {
        let a = rng.random_range(0..v);
        let b = loop {
            let b = rng.random_range(0..v);
            if b != a {
                break b;
            }
        };
        pairs.push(PairExample { a, b, label: false });
    }
    Ok(pairs)
}

#[derive(Debug)]
pub struct MetricOutcome {
    pub model: MetricModel,
    /// Per-batch training loss, in step order.
    pub losses: Vec<f64>,
}

/// Train the metric factors on a fixed pair set with frozen
/// embeddings. Pairs are reshuffled every epoch. Divergence aborts
/// with a numeric error; zero epochs or zero pairs return the initial
/// model unchanged.
pub fn train_metric(
    init: MetricModel,
    frozen: &FrozenEmbeddings,
    pairs: &[PairExample],
    cfg: &MetricConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<MetricOutcome> {
    cfg.validate()?;
    opt.validate()?;
    let mut model = init;
    let mut losses = Vec::new();
    if cfg.epochs == 0 || pairs.is_empty() {
        return Ok(MetricOutcome { model, losses });
    }
    let mut order: Vec<PairExample> = pairs.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Adam moments per factor; untouched under SGD.
    let mut m_i = vec![0.0; model.l_i.len()];
    let mut v_i = vec![0.0; model.l_i.len()];
    let mut m_ic = vec![0.0; model.l_ic.len()];
    let mut v_ic = vec![0.0; model.l_ic.len()];
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut g_i, mut g_ic) = contrastive_loss_grad(&model, frozen, batch)?;
            let sq: f64 = g_i.iter().chain(g_ic.iter()).map(|g| g * g).sum();
            let norm = sq.sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "metric gradient norm diverged: {norm}"
                )));
            }
            if norm > opt.clip_norm {
                let scale = opt.clip_norm / norm;
                for g in g_i.iter_mut().chain(g_ic.iter_mut()) {
                    *g *= scale;
                }
            }
            step += 1;
            match opt.algorithm {
                Algorithm::Sgd => {
                    for (p, g) in model.l_i.iter_mut().zip(&g_i) {
                        *p -= opt.learning_rate * g;
                    }
                    for (p, g) in model.l_ic.iter_mut().zip(&g_ic) {
                        *p -= opt.learning_rate * g;
                    }
                }
                Algorithm::Adam => {
                    let bc1 = 1.0 - opt.beta1.powi(step as i32);
                    let bc2 = 1.0 - opt.beta2.powi(step as i32);
                    let adam = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                        for k in 0..p.len() {
                            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
                            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
                            let mh = m[k] / bc1;
                            let vh = v[k] / bc2;
                            p[k] -= opt.learning_rate * mh / (vh.sqrt() + opt.epsilon);
                        }
                    };
                    adam(&mut model.l_i, &g_i, &mut m_i, &mut v_i);
                    adam(&mut model.l_ic, &g_ic, &mut m_ic, &mut v_ic);
                }
            }
            losses.push(loss);
        }
    }
    Ok(MetricOutcome { model, losses })
}

/// The k items nearest to `trigger` under the learned metric, scored
/// by -d(trigger, item), descending, ties broken by ascending index.
/// The trigger itself is always excluded, `exclude` on top of that.
pub fn metric_neighbors(
    model: &MetricModel,
    frozen: &FrozenEmbeddings,
    trigger: u32,
    k: usize,
    exclude: &std::collections::HashSet<u32>,
) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = (0..frozen.n as u32)
        .filter(|&i| i != trigger && !exclude.contains(&i))
        .map(|i| {
            let (_, _, d) = pair_distance(
                model,
                frozen.item(trigger),
                frozen.item(i),
                frozen.rel(trigger),
                frozen.rel(i),
            );
            (i, -d)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Per-user category sets from each user's last `last_n` item-view
/// sessions, in session-file order.
pub fn recent_history_categories(
    sessions: &[Session],
    categories: &AttributeMap,
    last_n: usize,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut by_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for s in sessions.iter().filter(|s| s.view == View::Item) {
        by_user.entry(&s.user_id).or_default().push(s);
    }
    by_user
        .into_iter()
        .map(|(user, sess)| {
            let start = sess.len().saturating_sub(last_n);
            let cats = sess[start..]
                .iter()
                .flat_map(|s| s.nodes.iter())
                .filter_map(|n| categories.get(n))
                .map(String::from)
                .collect();
            (user.to_string(), cats)
        })
        .collect()
}

/// Pooled fraction of recommended items whose category is absent from
/// the user's recent-history category set. Items without a category
/// count as not novel; users without history treat every category as
/// new. Returns 0 when there are no recommendations.
pub fn novelty_at_k(
    recommendations: &BTreeMap<String, Vec<String>>,
    history: &BTreeMap<String, BTreeSet<String>>,
    categories: &AttributeMap,
) -> f64 {
    let empty = BTreeSet::new();
    let mut total = 0usize;
    let mut novel = 0usize;
    for (user, recs) in recommendations {
        let seen = history.get(user).unwrap_or(&empty);
        for item in recs {
            total += 1;
            if let Some(cat) = categories.get(item) {
                if !seen.contains(cat) {
                    novel += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        novel as f64 / total as f64
    }
}
