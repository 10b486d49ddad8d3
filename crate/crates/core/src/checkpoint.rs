//! Versioned JSON model checkpoints.
//!
//! ```json
//! {
//!   "format": "neurocep-checkpoint",
//!   "version": 1,
//!   "model": "hybrid" | "purenn",
//!   "dim": D, "hidden": H, "classes": C, "seed": 1,
//!   "window": null | w,
//!   "frame": { "hidden": Linear, "output": Linear },
//!   "head": null | { "hidden": Linear, "output": Linear }
//! }
//! ```
//!
//! `Linear` is `{inputs, outputs, weight, bias}` with `weight` row-major
//! `outputs x inputs`. Floats are written in shortest round-trip form and
//! parsed with exact rounding, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Mlp;
use crate::purenn::PureNnParams;
use crate::training::ModelKind;

pub const FORMAT: &str = "neurocep-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub seed: u64,
    pub window: Option<usize>,
    pub frame: Mlp,
    pub head: Option<Mlp>,
}

impl Checkpoint {
    pub fn hybrid(params: &Mlp, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model: ModelKind::Hybrid,
            dim: params.input_dim(),
            hidden: params.hidden_dim(),
            classes: params.output_dim(),
            seed,
            window: None,
            frame: params.clone(),
            head: None,
        }
    }

    pub fn purenn(params: &PureNnParams, seed: u64) -> Self {
        Self {
            model: ModelKind::Purenn,
            window: Some(params.window),
            head: Some(params.head.clone()),
            ..Self::hybrid(&params.frame, seed)
        }
    }

    pub fn purenn_params(&self) -> Option<PureNnParams> {
        Some(PureNnParams { frame: self.frame.clone(), head: self.head.clone()?, window: self.window? })
    }

    fn check(&self) -> Result<(), CheckpointError> {
        let bad = |m: String| Err(CheckpointError::Unsupported(m));
        if self.format != FORMAT {
            return bad(format!("format `{}`", self.format));
        }
        if self.version != VERSION {
            return bad(format!("version {}", self.version));
        }
        let f = &self.frame;
        let shapes_ok = f.input_dim() == self.dim
            && f.hidden_dim() == self.hidden
            && f.output_dim() == self.classes
            && f.output.inputs == f.hidden_dim()
            && f.hidden.weight.len() == self.dim * self.hidden
            && f.output.weight.len() == self.hidden * self.classes
            && f.hidden.bias.len() == self.hidden
            && f.output.bias.len() == self.classes;
        if !shapes_ok {
            return bad("frame classifier shapes disagree with dim/hidden/classes".into());
        }
        if self.model == ModelKind::Purenn && self.purenn_params().is_none() {
            return bad("purenn checkpoint without head or window".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.check()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_json()? + "\n")?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6) {
            let mut p = Mlp::init(3, 5, 4, seed);
            p.output.bias[0] *= scale;
            p.hidden.weight[2] = scale.recip();
            let ck = Checkpoint::hybrid(&p, seed);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let bits = |m: &Mlp| m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.frame), bits(&p));
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn purenn_round_trip() {
        let p = PureNnParams::init(3, 4, 4, 2, 3, 4, 1, 2);
        let ck = Checkpoint::purenn(&p, 1);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.purenn_params().unwrap(), p);
    }

    #[test]
    fn rejects_wrong_format_and_shapes() {
        let mut ck = Checkpoint::hybrid(&Mlp::zeros(2, 3, 4), 0);
        ck.version = 9;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        let mut ck = Checkpoint::hybrid(&Mlp::zeros(2, 3, 4), 0);
        ck.dim = 5;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
