//! Patch shortlist → image ranking.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageId, PatchBox, VectorId};
use crate::store::{ExactScan, PatchSearch, VectorDatabase};
use crate::vector::EmbeddingVector;

static SHORTLIST_STARVATION: AtomicU64 = AtomicU64::new(0);

/// Number of rankings so far whose shortlist held fewer than `k` distinct
/// images although more were available.
pub fn shortlist_starvation_count() -> u64 {
    SHORTLIST_STARVATION.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// One vector per image; scores are raw dot products.
    SingleVectorBaseline,
    /// Raw dot product of each shortlisted patch.
    PyramidMax,
    /// Each shortlisted patch scored by the mean over its cross-level
    /// overlap set.
    PyramidMultiscale,
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "single-vector-baseline" => Ok(Self::SingleVectorBaseline),
            "pyramid-max" | "max" => Ok(Self::PyramidMax),
            "pyramid" | "pyramid-multiscale" | "multiscale" => Ok(Self::PyramidMultiscale),
            other => Err(Error::InvalidConfig(format!("unknown scoring mode {other:?}"))),
        }
    }
}

/// How adjusted patch scores combine into an image score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageAggregate {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    /// Images per batch.
    pub k: usize,
    /// Shortlist size as a multiple of `k`.
    pub shortlist_factor: usize,
    pub mode: ScoringMode,
    #[serde(default)]
    pub aggregate: ImageAggregate,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self { k: 10, shortlist_factor: 10, mode: ScoringMode::PyramidMultiscale, aggregate: ImageAggregate::Max }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.shortlist_factor == 0 {
            return Err(Error::InvalidConfig("k and shortlist_factor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn shortlist_len(&self) -> usize {
        self.k * self.shortlist_factor
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image_id: ImageId,
    pub adjusted_score: f64,
    pub best_vector: VectorId,
    pub best_box: PatchBox,
}

/// Mean score over the overlap set of `vector_id`.
pub fn multiscale_score(db: &VectorDatabase, w: &EmbeddingVector<f32>, vector_id: VectorId) -> Result<f64> {
    db.multiscale_score(w, vector_id)
}

pub fn rank_images(
    db: &VectorDatabase,
    w: &EmbeddingVector<f32>,
    cfg: &RerankConfig,
    exclude: &HashSet<ImageId>,
) -> Result<Vec<RankedImage>> {
    rank_images_with(&ExactScan, db, w, cfg, exclude)
}

/// Top `k` unseen images: fetch `k · shortlist_factor` patches, score each
/// per `cfg.mode`, aggregate per image, sort descending (ties to the lower
/// image id).
pub fn rank_images_with(
    search: &dyn PatchSearch,
    db: &VectorDatabase,
    w: &EmbeddingVector<f32>,
    cfg: &RerankConfig,
    exclude: &HashSet<ImageId>,
) -> Result<Vec<RankedImage>> {
    cfg.validate()?;
    w.check_dim(db.dim())?;
    if db.patch_count() == 0 {
        return Ok(Vec::new());
    }
    let shortlist = search.top_l(db, w, cfg.shortlist_len(), exclude)?;

    struct Acc {
        best: (f64, VectorId),
        sum: f64,
        n: usize,
    }
    let mut per_image: HashMap<ImageId, Acc> = HashMap::new();
    for hit in &shortlist {
        let score = match cfg.mode {
            ScoringMode::PyramidMultiscale => db.multiscale_score(w, hit.vector_id)?,
            ScoringMode::PyramidMax | ScoringMode::SingleVectorBaseline => hit.score,
        };
        let acc = per_image.entry(hit.image_id).or_insert(Acc { best: (score, hit.vector_id), sum: 0.0, n: 0 });
        if score > acc.best.0 || (score == acc.best.0 && hit.vector_id < acc.best.1) {
            acc.best = (score, hit.vector_id);
        }
        acc.sum += score;
        acc.n += 1;
    }

    let mut ranked = per_image
        .into_iter()
        .map(|(image_id, acc)| {
            let adjusted_score = match cfg.aggregate {
                ImageAggregate::Max => acc.best.0,
                ImageAggregate::Mean => acc.sum / acc.n as f64,
            };
            Ok(RankedImage {
                image_id,
                adjusted_score,
                best_vector: acc.best.1,
                best_box: db.patch(acc.best.1)?.rect,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.adjusted_score.total_cmp(&a.adjusted_score).then(a.image_id.cmp(&b.image_id)));
    ranked.truncate(cfg.k);

    let available = db.images().iter().filter(|i| !exclude.contains(&i.image_id)).count();
    if ranked.len() < cfg.k && available > ranked.len() {
        SHORTLIST_STARVATION.fetch_add(1, Ordering::Relaxed);
        log::warn!(
            "shortlist of {} patches yielded {} of {} requested images ({} unseen available)",
            shortlist.len(),
            ranked.len(),
            cfg.k,
            available
        );
    }
    Ok(ranked)
}
