//! Policies named on the command line: `const:<u>`, `sdp:<file>`,
//! `hjb:<file>`, `nn:<file>` and `oracle:<spec>`, the last lifting a
//! scalar policy through the model's interaction matrix.

use std::sync::Arc;

use crate::assess::{lift_policy, OracleSpec};
use crate::error::{Error, Result};
use crate::grid::{GridKind, GridPolicy};
use crate::model::ModelConfig;
use crate::nn::NetPolicy;
use crate::policy::{ConstantPolicy, Policy};

/// Loads a policy for `cfg` from its textual description.
pub fn load_policy(spec: &str, cfg: &ModelConfig) -> Result<Arc<dyn Policy>> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("policy `{spec}` is not of the form kind:argument")))?;
    let policy: Arc<dyn Policy> = match kind {
        "const" => {
            let u: f64 = arg
                .parse()
                .map_err(|_| Error::invalid(format!("bad constant control `{arg}`")))?;
            Arc::new(ConstantPolicy::new(cfg.d, u, cfg.u_min, cfg.u_max))
        }
        "sdp" | "hjb" => {
            let g = GridPolicy::load(arg)?;
            let want = if kind == "sdp" { GridKind::Sdp } else { GridKind::Hjb };
            if g.kind != want {
                log::warn!("{arg} holds a {:?} policy, loaded as given", g.kind);
            }
            Arc::new(g)
        }
        "nn" => Arc::new(NetPolicy::load(arg)?),
        "oracle" => {
            let inner = load_policy(arg, &reference_dims(cfg))?;
            let spec = OracleSpec::new(cfg.kappa.clone(), inner, 1.0, true)?;
            Arc::new(lift_policy(&spec))
        }
        other => return Err(Error::invalid(format!("unknown policy kind `{other}`"))),
    };
    if policy.dim() != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            got: policy.dim(),
        });
    }
    Ok(policy)
}

fn reference_dims(cfg: &ModelConfig) -> ModelConfig {
    crate::assess::reference_config(cfg, 1.0)
}
