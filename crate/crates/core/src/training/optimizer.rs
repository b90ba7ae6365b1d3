//! Gradient application: global-norm clipping followed by SGD or Adam.
//!
//! Adam keeps first/second-moment state lazily, only for parameter rows
//! a batch has actually touched; bias correction uses the global step
//! count.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::training::tables::{
    AlignmentTransform, EmbeddingTable, GradBundle, RowKind, TaskUncertainty,
};
use crate::types::{Relation, TaskId, View};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Gradients are scaled down when their global norm exceeds this.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            learning_rate: 0.01,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MomentKey {
    TableRow(View, RowKind, u32),
    Transform(Relation),
    LogVar(TaskId),
}

struct Moment {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Owns optimizer state and applies gradient bundles to the parameters.
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    moments: HashMap<MomentKey, Moment>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step: 0,
            moments: HashMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Clip the bundle to the configured global norm, then update every
    /// referenced parameter. Returns the pre-clip gradient norm.
    pub fn apply(
        &mut self,
        mut bundle: GradBundle,
        tables: &mut BTreeMap<View, EmbeddingTable>,
        transforms: &mut BTreeMap<Relation, AlignmentTransform>,
        uncertainties: &mut BTreeMap<TaskId, TaskUncertainty>,
    ) -> Result<f64> {
        let norm = bundle.global_norm();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient norm ({norm})"
            )));
        }
        if norm > self.config.clip_norm {
            bundle.scale_all(self.config.clip_norm / norm);
        }
        self.step += 1;
        let bc1 = 1.0 - self.config.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.config.beta2.powi(self.step as i32);

        for (view, table_grad) in &bundle.tables {
            let table = tables.get_mut(view).ok_or_else(|| {
                Error::Config(format!("gradient for undeclared view {view}"))
            })?;
            for (&(kind, row), grad) in &table_grad.rows {
                let key = MomentKey::TableRow(*view, kind, row);
                let param = table.row_mut(kind, row);
                self.update_slice(key, param, grad, bc1, bc2);
            }
        }
        for (relation, grad) in &bundle.transforms {
            let transform = transforms.get_mut(relation).ok_or_else(|| {
                Error::Config(format!("gradient for undeclared relation {relation}"))
            })?;
            let key = MomentKey::Transform(*relation);
            self.update_slice(key, &mut transform.matrix, grad, bc1, bc2);
        }
        for (task, &grad) in &bundle.log_vars {
            let u = uncertainties.get_mut(task).ok_or_else(|| {
                Error::Config(format!("gradient for undeclared task {task}"))
            })?;
            let key = MomentKey::LogVar(*task);
            let mut param = [u.log_var];
            self.update_slice(key, &mut param, &[grad], bc1, bc2);
            u.log_var = param[0];
        }
        Ok(norm)
    }

    fn update_slice(&mut self, key: MomentKey, param: &mut [f64], grad: &[f64], bc1: f64, bc2: f64) {
        let lr = self.config.learning_rate;
        match self.config.algorithm {
            Algorithm::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Algorithm::Adam => {
                let beta1 = self.config.beta1;
                let beta2 = self.config.beta2;
                let eps = self.config.epsilon;
                let moment = self.moments.entry(key).or_insert_with(|| Moment {
                    m: vec![0.0; param.len()],
                    v: vec![0.0; param.len()],
                });
                for i in 0..param.len() {
                    let g = grad[i];
                    moment.m[i] = beta1 * moment.m[i] + (1.0 - beta1) * g;
                    moment.v[i] = beta2 * moment.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = moment.m[i] / bc1;
                    let v_hat = moment.v[i] / bc2;
                    param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
