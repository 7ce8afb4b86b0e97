use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs to [`netscore`]: accuracy in `[0, 1]`, size in millions of
/// parameters and seconds per forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetScoreInputs {
    pub map: f64,
    pub mparams: f64,
    pub inference_seconds: f64,
}

impl NetScoreInputs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.map) {
            return Err(Error::Contract(format!("netscore: mAP must be in [0, 1], got {}", self.map)));
        }
        if !(self.mparams > 0.0 && self.mparams.is_finite()) {
            return Err(Error::Contract(format!("netscore: parameter count must be positive, got {}", self.mparams)));
        }
        if !(self.inference_seconds > 0.0 && self.inference_seconds.is_finite()) {
            return Err(Error::Contract(format!("netscore: inference time must be positive, got {}", self.inference_seconds)));
        }
        Ok(())
    }

    pub fn score(&self) -> Result<f64> {
        self.validate()?;
        Ok((self.map * 100.0).powi(2) / (self.mparams * self.inference_seconds))
    }
}

/// `(100 mAP)^2 / (MParams * seconds)`.
pub fn netscore(map: f64, mparams: f64, inference_seconds: f64) -> Result<f64> {
    NetScoreInputs { map, mparams, inference_seconds }.score()
}
