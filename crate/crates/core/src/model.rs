//! Records stored in a patch database.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rect::Rect;
use crate::vector::EmbeddingVector;

pub type VectorId = u64;
pub type ImageId = u64;

/// Box in base-image pixel coordinates.
pub type PatchBox = Rect<f64>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub uri: String,
}

impl ImageRecord {
    pub fn new(image_id: ImageId, width: u32, height: u32, uri: impl Into<String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!("image {image_id} has zero size {width}x{height}")));
        }
        Ok(Self { image_id, width, height, uri: uri.into() })
    }

    pub fn contains(&self, rect: &PatchBox) -> bool {
        rect.within(self.width as f64, self.height as f64)
    }

    pub fn check_box(&self, rect: &PatchBox) -> Result<()> {
        if self.contains(rect) {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds {
                image_id: self.image_id,
                width: self.width,
                height: self.height,
                x1: rect.x1,
                y1: rect.y1,
                x2: rect.x2,
                y2: rect.y2,
            })
        }
    }
}

/// Where a patch sits: its id, pyramid level and base-image box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchGeometry {
    pub vector_id: VectorId,
    pub level: u32,
    pub rect: PatchBox,
}

/// One stored embedding with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub vector_id: VectorId,
    pub image_id: ImageId,
    pub level: u32,
    pub rect: PatchBox,
    pub embedding: EmbeddingVector<f32>,
}

impl PatchRecord {
    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry { vector_id: self.vector_id, level: self.level, rect: self.rect }
    }
}
