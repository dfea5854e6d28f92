use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Modality;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    GradEclip,
    Mmel,
    Random,
}

/// Non-negative importance field: an `H_p x W_p` patch grid for images, one
/// score per position for text (special positions hold zero and are masked).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    values: Tensor,
    modality: Modality,
    provenance: Provenance,
    /// Text only: which positions carry content tokens.
    content_mask: Option<Vec<bool>>,
}

impl AttributionMap {
    pub fn grid(values: Tensor, provenance: Provenance) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::Dimension(format!(
                "patch grid must be 2-D, got {:?}",
                values.shape()
            )));
        }
        check_non_negative(&values)?;
        Ok(Self {
            values,
            modality: Modality::Vision,
            provenance,
            content_mask: None,
        })
    }

    pub fn tokens(
        scores: Vec<f64>,
        content_mask: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self> {
        if scores.len() != content_mask.len() {
            return Err(Error::Dimension("score and mask lengths differ".into()));
        }
        if scores
            .iter()
            .zip(&content_mask)
            .any(|(s, m)| !m && *s != 0.0)
        {
            return Err(Error::Consistency(
                "masked position with non-zero score".into(),
            ));
        }
        let values = Tensor::vector(scores)?;
        check_non_negative(&values)?;
        Ok(Self {
            values,
            modality: Modality::Text,
            provenance,
            content_mask: Some(content_mask),
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn content_mask(&self) -> Option<&[bool]> {
        self.content_mask.as_deref()
    }

    /// `(rows, cols)` of a patch grid.
    pub fn extents(&self) -> Option<(usize, usize)> {
        (self.modality == Modality::Vision)
            .then(|| (self.values.shape()[0], self.values.shape()[1]))
    }

    pub(crate) fn with_values(&self, values: Tensor, provenance: Provenance) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Dimension("replacement values change shape".into()));
        }
        check_non_negative(&values)?;
        Ok(Self {
            values,
            modality: self.modality,
            provenance,
            content_mask: self.content_mask.clone(),
        })
    }
}

fn check_non_negative(t: &Tensor) -> Result<()> {
    if t.data().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Consistency(
            "attribution values must be non-negative".into(),
        ));
    }
    Ok(())
}
