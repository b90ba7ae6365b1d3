//! Loss and gradient computation for all task types, plus the
//! uncertainty-weighted combination.
//!
//! Sign convention: every objective is expressed as a loss to minimize.
//! The skip-gram likelihood and the alignment score difference are
//! negated accordingly, so the weighted total applies uniformly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sampler::{InterExample, IntraExample};
use crate::training::tables::{
    AlignmentTransform, EmbeddingTable, RowKind, TableGrad, TaskUncertainty,
};
use crate::types::TaskId;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// -log sigmoid(x), computed without cancellation for large |x|.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Skip-gram negative-sampling loss over one batch:
/// mean of -[log sigmoid(ctx . ctr) + sum_neg log sigmoid(-neg . ctr)],
/// with gradients on the touched input rows (centers) and context rows
/// (contexts and negatives) only.
pub fn intra_loss_grad(table: &EmbeddingTable, batch: &[IntraExample]) -> Result<(f64, TableGrad)> {
    if batch.is_empty() {
        return Err(Error::Data("intra loss over empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = TableGrad::new();
    let mut loss_sum = 0.0;
    for ex in batch {
        let ctr = table.input_row(ex.center);
        let ctx = table.context_row(ex.context);
        let s = dot(ctr, ctx);
        loss_sum += neg_log_sigmoid(s);
        let g = (sigmoid(s) - 1.0) * inv_b;
        grad.acc(RowKind::Input, ex.center, ctx, g);
        grad.acc(RowKind::Context, ex.context, ctr, g);
        for &neg in &ex.negatives {
            let nv = table.context_row(neg);
            let sn = dot(ctr, nv);
            loss_sum += neg_log_sigmoid(-sn);
            let gn = sigmoid(sn) * inv_b;
            grad.acc(RowKind::Input, ex.center, nv, gn);
            grad.acc(RowKind::Context, neg, ctr, gn);
        }
    }
    let loss = loss_sum * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite intra loss in {} view",
            table.view
        )));
    }
    Ok((loss, grad))
}

/// Gradients of one inter-view batch.
pub struct InterGrads {
    pub loss: f64,
    /// Gradient on the from-view table (input rows only).
    pub from: TableGrad,
    /// Gradient on the to-view table (input rows only).
    pub to: TableGrad,
    /// Dense gradient on the transform matrix, d' x d row-major.
    pub transform: Vec<f64>,
}

/// Alignment loss over one batch. The score of a pair is
/// sigmoid(W e_a) . sigmoid(W e_b) with element-wise sigmoid, bounded in
/// [0, d']. Raw mode minimizes (mean negative score - mean positive
/// score); the log-sigmoid mode treats the score as a logit instead.
/// Gradients flow to the input vectors of both tables and to W.
pub fn inter_loss_grad(
    from_table: &EmbeddingTable,
    to_table: &EmbeddingTable,
    transform: &AlignmentTransform,
    batch: &[InterExample],
    log_sigmoid: bool,
) -> Result<InterGrads> {
    if batch.is_empty() {
        return Err(Error::Data("inter loss over empty batch".into()));
    }
    let d_out = transform.out_dim;
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut from_grad = TableGrad::new();
    let mut to_grad = TableGrad::new();
    let mut w_grad = vec![0.0; transform.matrix.len()];

    let mut u = vec![0.0; d_out];
    let mut w = vec![0.0; d_out];
    let mut alpha = vec![0.0; d_out];
    let mut beta = vec![0.0; d_out];
    let mut back = vec![0.0; transform.in_dim];

    for ex in batch {
        let e_a = from_table.input_row(ex.from);
        transform.apply(e_a, &mut u);
        let p: Vec<f64> = u.iter().map(|&x| sigmoid(x)).collect();

        let inv_k = inv_b / ex.to_negs.len().max(1) as f64;
        for (ti, &target) in std::iter::once(&ex.to_pos).chain(&ex.to_negs).enumerate() {
            let positive = ti == 0;
            let e_b = to_table.input_row(target);
            transform.apply(e_b, &mut w);
            let score: f64 = u
                .iter()
                .zip(&w)
                .map(|(&um, &wm)| sigmoid(um) * sigmoid(wm))
                .sum();
            // d loss / d score, with the batch averaging folded in.
            let coef = match (log_sigmoid, positive) {
                (false, true) => {
                    loss -= score * inv_b;
                    -inv_b
                }
                (false, false) => {
                    loss += score * inv_k;
                    inv_k
                }
                (true, true) => {
                    loss += neg_log_sigmoid(score) * inv_b;
                    (sigmoid(score) - 1.0) * inv_b
                }
                (true, false) => {
                    loss += neg_log_sigmoid(-score) * inv_b;
                    sigmoid(score) * inv_b
                }
            };
            for m in 0..d_out {
                let q = sigmoid(w[m]);
                alpha[m] = coef * p[m] * (1.0 - p[m]) * q;
                beta[m] = coef * p[m] * q * (1.0 - q);
            }
            // e_a gradient: W^T alpha; e_b gradient: W^T beta.
            back.fill(0.0);
            for m in 0..d_out {
                let row = &transform.matrix[m * transform.in_dim..(m + 1) * transform.in_dim];
                for (bk, &wn) in back.iter_mut().zip(row) {
                    *bk += alpha[m] * wn;
                }
            }
            from_grad.acc(RowKind::Input, ex.from, &back, 1.0);
            back.fill(0.0);
            for m in 0..d_out {
                let row = &transform.matrix[m * transform.in_dim..(m + 1) * transform.in_dim];
                for (bk, &wn) in back.iter_mut().zip(row) {
                    *bk += beta[m] * wn;
                }
            }
            to_grad.acc(RowKind::Input, target, &back, 1.0);
            // W gradient: alpha e_a^T + beta e_b^T.
            for m in 0..d_out {
                let row = &mut w_grad[m * transform.in_dim..(m + 1) * transform.in_dim];
                for n in 0..transform.in_dim {
                    row[n] += alpha[m] * e_a[n] + beta[m] * e_b[n];
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite inter loss for relation {}",
            transform.relation
        )));
    }
    Ok(InterGrads {
        loss,
        from: from_grad,
        to: to_grad,
        transform: w_grad,
    })
}

/// How per-task losses combine into the optimized total.
#[derive(Debug, Clone)]
pub enum WeightMode {
    /// Learned homoscedastic-uncertainty weights: each task contributes
    /// loss / var + log var, with the variance floored.
    Adaptive,
    /// Fixed weights; tasks absent from the map get weight 1.
    Static(BTreeMap<TaskId, f64>),
}

impl WeightMode {
    pub fn uniform() -> Self {
        WeightMode::Static(BTreeMap::new())
    }
}

/// Result of combining per-task losses.
pub struct WeightedTotal {
    pub total: f64,
    /// Effective loss weight per task.
    pub weights: BTreeMap<TaskId, f64>,
    /// Effective variance per task (1/weight).
    pub sigma2: BTreeMap<TaskId, f64>,
    /// d total / d log_var per task; zero through the floor clamp and
    /// in static mode.
    pub log_var_grads: BTreeMap<TaskId, f64>,
}

/// Combine task losses. In adaptive mode the total is
/// sum_t [loss_t / var_t + log var_t] with var_t = max(exp(s_t), floor);
/// the floor is a hard clamp, so a floored task's log_var receives no
/// gradient and its weight is capped at 1/floor.
pub fn weighted_total(
    losses: &BTreeMap<TaskId, f64>,
    uncertainties: &BTreeMap<TaskId, TaskUncertainty>,
    mode: &WeightMode,
) -> Result<WeightedTotal> {
    let mut total = 0.0;
    let mut weights = BTreeMap::new();
    let mut sigma2 = BTreeMap::new();
    let mut log_var_grads = BTreeMap::new();
    for (&task, &loss) in losses {
        match mode {
            WeightMode::Adaptive => {
                let u = uncertainties.get(&task).ok_or_else(|| {
                    Error::Config(format!("no uncertainty entry for task {task}"))
                })?;
                let var = u.effective_var();
                let w = 1.0 / var;
                total += loss * w + var.ln();
                let g = if u.clamped() { 0.0 } else { 1.0 - loss * w };
                weights.insert(task, w);
                sigma2.insert(task, var);
                log_var_grads.insert(task, g);
            }
            WeightMode::Static(map) => {
                let w = map.get(&task).copied().unwrap_or(1.0);
                total += loss * w;
                weights.insert(task, w);
                sigma2.insert(task, 1.0 / w);
                log_var_grads.insert(task, 0.0);
            }
        }
    }
    Ok(WeightedTotal {
        total,
        weights,
        sigma2,
        log_var_grads,
    })
}
