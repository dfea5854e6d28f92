use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the dual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_v: usize,
    pub n_layers_t: usize,
    pub mlp_ratio: usize,
    pub d_shared: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            d_model: 32,
            n_heads: 4,
            n_layers_v: 4,
            n_layers_t: 4,
            mlp_ratio: 4,
            d_shared: 16,
            vocab_size: 64,
            max_text_len: 8,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers_v", self.n_layers_v),
            ("n_layers_t", self.n_layers_t),
            ("mlp_ratio", self.mlp_ratio),
            ("d_shared", self.d_shared),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be positive")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Parameter(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Parameter(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= 3 {
            return Err(Error::Parameter(
                "vocab_size must exceed the three special tokens".into(),
            ));
        }
        if self.max_text_len < 2 {
            return Err(Error::Parameter("max_text_len must be at least 2".into()));
        }
        if !(self.ln_eps >= 0.0) || !self.ln_eps.is_finite() {
            return Err(Error::Parameter(
                "ln_eps must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn n_tokens_v(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn n_tokens_t(&self) -> usize {
        self.max_text_len
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_mlp(&self) -> usize {
        self.mlp_ratio * self.d_model
    }

    pub fn n_layers(&self, modality: Modality) -> usize {
        match modality {
            Modality::Vision => self.n_layers_v,
            Modality::Text => self.n_layers_t,
        }
    }

    pub fn n_tokens(&self, modality: Modality) -> usize {
        match modality {
            Modality::Vision => self.n_tokens_v(),
            Modality::Text => self.n_tokens_t(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Text => "text",
        }
    }
}

/// Per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter("channel std must be positive".into()));
        }
        Ok(())
    }
}
