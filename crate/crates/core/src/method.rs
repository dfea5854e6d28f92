use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attrib::{AttributionMap, Objective};
use crate::enhancer::{baseline_pipeline, mmel_pipeline, EnhancerParams};
use crate::error::{Error, Result};
use crate::eval::random_attribution;
use crate::model::{Tokens, Weights};
use crate::tensor::Tensor;

/// Attribution method selectable from the command line and evaluation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GradEclip,
    Mmel,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GradEclip => "grad-eclip",
            Method::Mmel => "mmel",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad-eclip" => Ok(Method::GradEclip),
            "mmel" => Ok(Method::Mmel),
            "random" => Ok(Method::Random),
            other => Err(Error::Parameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Inputs shared by every method. `enhancer` is required for MMEL and
/// `seed` drives the random control.
#[derive(Debug, Clone, Copy)]
pub struct AttributionRequest<'a> {
    pub weights: &'a Weights,
    pub enhancer: Option<&'a EnhancerParams>,
    pub objective: Objective,
    pub seed: u64,
}

impl AttributionRequest<'_> {
    /// Patch-grid attribution of `image` against `tokens`.
    pub fn attribute(
        &self,
        method: Method,
        image: &Tensor,
        tokens: &Tokens,
    ) -> Result<AttributionMap> {
        match method {
            Method::GradEclip => {
                Ok(baseline_pipeline(self.weights, image, tokens, self.objective)?.base)
            }
            Method::Mmel => {
                let p = self
                    .enhancer
                    .ok_or_else(|| Error::Parameter("mmel needs enhancer parameters".into()))?;
                Ok(mmel_pipeline(self.weights, p, image, tokens, self.objective)?.enhanced)
            }
            Method::Random => random_attribution(self.seed, self.weights.config().grid_side()),
        }
    }
}
