//! Neural-network feedback policies trained on the simulated cost.

mod loss;
mod net;
mod optim;

pub use loss::{
    draw_samples, loss, loss_grad, open_loop_gradient, path_loss, BatchConfig, Objective, PolicyObjective, Sample,
};
pub use net::{read_checkpoint, write_checkpoint, NetParams, NetPolicy, NetSpec, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam, conjugate_gradient, AdamSettings, CgSettings, IterRecord, TrainResult};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Everything needed to train a network policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    /// Inputs are fed as `X / x_scale`.
    pub x_scale: f64,
    pub init_seed: u64,
    pub batches: BatchConfig,
    pub adam: AdamSettings,
    pub cg: CgSettings,
}

impl TrainConfig {
    pub fn new(hidden: Vec<usize>) -> Self {
        Self {
            hidden,
            x_scale: 3.0,
            init_seed: 1,
            batches: BatchConfig::default(),
            adam: AdamSettings::default(),
            cg: CgSettings::default(),
        }
    }

    pub fn spec(&self, cfg: &ModelConfig) -> Result<NetSpec> {
        NetSpec::new(cfg.d, &self.hidden, cfg.u_min, cfg.u_max, self.x_scale, cfg.horizon)
    }
}

/// A trained policy and the optimizer log.
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: NetPolicy,
    pub result: TrainResult,
}

/// Minibatch ADAM on the simulated cost.
pub fn train_adam(cfg: &ModelConfig, tc: &TrainConfig) -> Result<Trained> {
    let spec = tc.spec(cfg)?;
    let obj = PolicyObjective::new(cfg.clone(), spec.clone(), tc.batches.clone())?;
    let theta0 = spec.init(tc.init_seed).data;
    let result = adam(&obj, &theta0, &tc.adam)?;
    let policy = NetPolicy::new(spec, NetParams { data: result.theta.clone() })?;
    Ok(Trained { policy, result })
}

/// Full-batch conjugate gradient; only for a single hidden layer.
pub fn train_cg(cfg: &ModelConfig, tc: &TrainConfig) -> Result<Trained> {
    if tc.hidden.len() != 1 {
        return Err(Error::invalid("conjugate-gradient training needs exactly one hidden layer"));
    }
    let spec = tc.spec(cfg)?;
    let batches = BatchConfig {
        fixed: true,
        ..tc.batches.clone()
    };
    let obj = PolicyObjective::new(cfg.clone(), spec.clone(), batches)?;
    let theta0 = spec.init(tc.init_seed).data;
    let result = conjugate_gradient(&obj, &theta0, &tc.cg)?;
    let policy = NetPolicy::new(spec, NetParams { data: result.theta.clone() })?;
    Ok(Trained { policy, result })
}
