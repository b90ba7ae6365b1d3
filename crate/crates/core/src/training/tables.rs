//! Learnable parameter containers and their sparse gradients.
//!
//! Every parameter is f64: cheap at desk scale and tight enough for
//! finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::types::{Relation, TaskId, View};

/// Per-view embedding table: input vectors (the exported representation)
/// and context vectors, both V x d row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub view: View,
    pub dim: usize,
    pub input: Vec<f64>,
    pub context: Vec<f64>,
}

impl EmbeddingTable {
    /// Input vectors uniform in [-0.5/d, 0.5/d], context vectors zero.
    pub fn init(view: View, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let input = (0..vocab_size * dim)
            .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
            .collect();
        EmbeddingTable {
            view,
            dim,
            input,
            context: vec![0.0; vocab_size * dim],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.input.len() / self.dim
    }

    pub fn input_row(&self, i: u32) -> &[f64] {
        let o = i as usize * self.dim;
        &self.input[o..o + self.dim]
    }

    pub fn context_row(&self, i: u32) -> &[f64] {
        let o = i as usize * self.dim;
        &self.context[o..o + self.dim]
    }

    pub fn row_mut(&mut self, kind: RowKind, i: u32) -> &mut [f64] {
        let o = i as usize * self.dim;
        match kind {
            RowKind::Input => &mut self.input[o..o + self.dim],
            RowKind::Context => &mut self.context[o..o + self.dim],
        }
    }
}

/// Dense transform from a view embedding (dim d) into the relational
/// space of one cross-view relation (dim d'), stored d' x d row-major.
#[derive(Debug, Clone)]
pub struct AlignmentTransform {
    pub relation: Relation,
    pub in_dim: usize,
    pub out_dim: usize,
    pub matrix: Vec<f64>,
}

impl AlignmentTransform {
    /// Fan-in scaled uniform init: entries in [-1/sqrt(d), 1/sqrt(d)].
    pub fn init(relation: Relation, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let matrix = (0..out_dim * in_dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        AlignmentTransform {
            relation,
            in_dim,
            out_dim,
            matrix,
        }
    }

    /// out = W x.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for m in 0..self.out_dim {
            let row = &self.matrix[m * self.in_dim..(m + 1) * self.in_dim];
            out[m] = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
        }
    }
}

/// Learned log-variance of one task's homoscedastic noise. The task's
/// loss weight is the inverse of the floored variance, so the weight can
/// never exceed 1/floor_var.
#[derive(Debug, Clone, Copy)]
pub struct TaskUncertainty {
    pub task: TaskId,
    /// s_t = log of the task variance; learned, init 0.
    pub log_var: f64,
    pub floor_var: f64,
}

impl TaskUncertainty {
    pub fn new(task: TaskId, floor_var: f64) -> Self {
        TaskUncertainty {
            task,
            log_var: 0.0,
            floor_var,
        }
    }

    /// Floored variance actually used in the loss.
    pub fn effective_var(&self) -> f64 {
        self.log_var.exp().max(self.floor_var)
    }

    /// Whether the floor is active (no gradient flows to log_var then).
    pub fn clamped(&self) -> bool {
        self.log_var.exp() < self.floor_var
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.effective_var()
    }
}

/// Which half of an embedding table a row lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowKind {
    Input,
    Context,
}

/// Sparse gradient of one embedding table: only rows touched by the
/// batch. Ordered keys keep float accumulation deterministic.
#[derive(Debug, Clone, Default)]
pub struct TableGrad {
    pub rows: BTreeMap<(RowKind, u32), Vec<f64>>,
}

impl TableGrad {
    pub fn new() -> Self {
        TableGrad::default()
    }

    /// row += scale * src.
    pub fn acc(&mut self, kind: RowKind, row: u32, src: &[f64], scale: f64) {
        let g = self
            .rows
            .entry((kind, row))
            .or_insert_with(|| vec![0.0; src.len()]);
        for (gi, si) in g.iter_mut().zip(src) {
            *gi += scale * si;
        }
    }

    pub fn merge_scaled(&mut self, other: &TableGrad, scale: f64) {
        for (&key, src) in &other.rows {
            self.acc(key.0, key.1, src, scale);
        }
    }
}

/// All gradients of one scheduling round, merged across tasks and
/// already scaled by the task weights. Applied atomically by the
/// optimizer after global-norm clipping.
#[derive(Debug, Clone, Default)]
pub struct GradBundle {
    pub tables: BTreeMap<View, TableGrad>,
    pub transforms: BTreeMap<Relation, Vec<f64>>,
    pub log_vars: BTreeMap<TaskId, f64>,
}

impl GradBundle {
    pub fn new() -> Self {
        GradBundle::default()
    }

    pub fn merge_table(&mut self, view: View, grad: &TableGrad, scale: f64) {
        self.tables.entry(view).or_default().merge_scaled(grad, scale);
    }

    pub fn merge_transform(&mut self, relation: Relation, grad: &[f64], scale: f64) {
        let dst = self
            .transforms
            .entry(relation)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (d, s) in dst.iter_mut().zip(grad) {
            *d += scale * s;
        }
    }

    pub fn add_log_var(&mut self, task: TaskId, grad: f64) {
        *self.log_vars.entry(task).or_insert(0.0) += grad;
    }

    /// L2 norm over every gradient entry in the bundle.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for table in self.tables.values() {
            for row in table.rows.values() {
                for g in row {
                    sq += g * g;
                }
            }
        }
        for t in self.transforms.values() {
            for g in t {
                sq += g * g;
            }
        }
        for g in self.log_vars.values() {
            sq += g * g;
        }
        sq.sqrt()
    }

    pub fn scale_all(&mut self, scale: f64) {
        for table in self.tables.values_mut() {
            for row in table.rows.values_mut() {
                for g in row {
                    *g *= scale;
                }
            }
        }
        for t in self.transforms.values_mut() {
            for g in t {
                *g *= scale;
            }
        }
        for g in self.log_vars.values_mut() {
            *g *= scale;
        }
    }
}
