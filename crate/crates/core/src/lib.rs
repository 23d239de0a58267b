//! Interactive image retrieval over multi-scale patch embeddings.
//!
//! Images are represented by a pyramid of square tiles, each embedded as a
//! unit vector. A search scores tiles against a query vector, regroups them
//! per image, and refines the query from box feedback between batches.

pub mod error;
pub mod eval;
pub mod model;
pub mod pyramid;
pub mod rect;
pub mod refine;
pub mod rerank;
pub mod scalar;
pub mod session;
pub mod store;
pub mod vector;

pub use error::{Error, Result};
pub use model::{ImageId, ImageRecord, PatchBox, PatchGeometry, PatchRecord, VectorId};
pub use pyramid::PyramidSpec;
pub use rect::Rect;
pub use refine::{ExampleSet, RefinementConfig};
pub use rerank::{RankedImage, RerankConfig, ScoringMode};
pub use scalar::Scalar;
pub use session::{FeedbackEvent, SessionConfig, SessionState};
pub use store::{ExactScan, PatchSearch, ScoredPatch, VectorDatabase};
pub use vector::EmbeddingVector;

/// Store-width embedding.
pub type Embedding = EmbeddingVector<f32>;
/// Double-precision embedding, used by the oracle-style checks.
pub type Embedding64 = EmbeddingVector<f64>;
pub type Examples = ExampleSet<f32>;
pub type Examples64 = ExampleSet<f64>;
