//! One interactive search: batches, box feedback, refinement.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageId, PatchBox, VectorId};
use crate::pyramid::best_per_level;
use crate::refine::{refine_step, ExampleSet, RefinementConfig};
use crate::rerank::{rank_images_with, RankedImage, RerankConfig};
use crate::store::{ExactScan, PatchSearch, VectorDatabase};
use crate::vector::EmbeddingVector;

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub refine: RefinementConfig,
    pub rerank: RerankConfig,
    /// A per-level best-overlap patch counts as positive only above this IoU.
    pub positive_iou: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { refine: RefinementConfig::default(), rerank: RerankConfig::default(), positive_iou: 0.1 }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.refine.validate()?;
        self.rerank.validate()?;
        if !(0.0..1.0).contains(&self.positive_iou) {
            return Err(Error::InvalidConfig(format!("positive_iou {} must lie in [0, 1)", self.positive_iou)));
        }
        Ok(())
    }
}

/// User judgment on one shown image. No boxes marks the whole image negative.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub image_id: ImageId,
    #[serde(default)]
    pub boxes: Vec<PatchBox>,
}

impl FeedbackEvent {
    pub fn negative(image_id: ImageId) -> Self {
        Self { image_id, boxes: Vec::new() }
    }

    pub fn positive(image_id: ImageId, boxes: Vec<PatchBox>) -> Self {
        Self { image_id, boxes }
    }
}

/// Examples added by one feedback submission.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub positives: usize,
    pub negatives: usize,
}

/// Positive and negative vector ids derived from one event.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLabels {
    pub positives: Vec<VectorId>,
    pub negatives: Vec<VectorId>,
}

/// Maps one feedback event onto patch ids of the image.
///
/// For each box and each pyramid level, the patch with the highest IoU is
/// positive if that IoU exceeds `positive_iou`. Patches that overlap no box
/// at all are negative; the rest stay unlabelled.
pub fn labels_for_event(db: &VectorDatabase, event: &FeedbackEvent, positive_iou: f64) -> Result<EventLabels> {
    let image = db.image(event.image_id).ok_or(Error::UnknownImage(event.image_id))?;
    for b in &event.boxes {
        image.check_box(b)?;
    }
    let geoms = db.image_geometry(event.image_id)?;
    let mut positives: Vec<VectorId> = Vec::new();
    for b in &event.boxes {
        for (_, id, iou) in best_per_level(b, &geoms) {
            if iou > positive_iou && !positives.contains(&id) {
                positives.push(id);
            }
        }
    }
    let negatives = geoms
        .iter()
        .filter(|g| event.boxes.iter().all(|b| b.iou(&g.rect) == 0.0))
        .map(|g| g.vector_id)
        .collect();
    Ok(EventLabels { positives, negatives })
}

#[derive(Clone, Debug)]
pub struct SessionState {
    pub session_id: String,
    /// Current query vector.
    pub w: EmbeddingVector<f32>,
    /// Initial query vector.
    pub w_s: EmbeddingVector<f32>,
    seen: Vec<ImageId>,
    seen_set: HashSet<ImageId>,
    /// Images never shown, on top of the seen ones.
    hidden: HashSet<ImageId>,
    /// Shown images that have not received feedback yet.
    pending: Vec<ImageId>,
    labelled: HashSet<VectorId>,
    pub examples: ExampleSet<f32>,
    pub round: usize,
    pub config: SessionConfig,
}

impl SessionState {
    /// Starts a session; `w_s` is normalized on entry.
    pub fn start(db: &VectorDatabase, w_s: &EmbeddingVector<f32>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        w_s.check_dim(db.dim())?;
        let w_s = w_s.normalize()?;
        Ok(Self {
            session_id: format!("s{}", NEXT_SESSION.fetch_add(1, Ordering::Relaxed)),
            w: w_s.clone(),
            w_s,
            seen: Vec::new(),
            seen_set: HashSet::new(),
            hidden: HashSet::new(),
            pending: Vec::new(),
            labelled: HashSet::new(),
            examples: ExampleSet::default(),
            round: 0,
            config,
        })
    }

    pub fn seen_images(&self) -> &[ImageId] {
        &self.seen
    }

    pub fn has_seen(&self, image_id: ImageId) -> bool {
        self.seen_set.contains(&image_id)
    }

    /// Keeps `images` out of every later batch.
    pub fn hide_images(&mut self, images: impl IntoIterator<Item = ImageId>) {
        self.hidden.extend(images);
    }

    pub fn next_batch(&mut self, db: &VectorDatabase) -> Result<Vec<RankedImage>> {
        self.next_batch_with(&ExactScan, db)
    }

    /// Ranks unseen images with the current query and records them as shown.
    pub fn next_batch_with(&mut self, search: &dyn PatchSearch, db: &VectorDatabase) -> Result<Vec<RankedImage>> {
        let batch = if self.hidden.is_empty() {
            rank_images_with(search, db, &self.w, &self.config.rerank, &self.seen_set)?
        } else {
            let exclude: HashSet<ImageId> = self.seen_set.union(&self.hidden).copied().collect();
            rank_images_with(search, db, &self.w, &self.config.rerank, &exclude)?
        };
        for r in &batch {
            if self.seen_set.insert(r.image_id) {
                self.seen.push(r.image_id);
                self.pending.push(r.image_id);
            }
        }
        self.round += 1;
        Ok(batch)
    }

    /// Adds the examples implied by `events` and runs one refinement round
    /// over everything observed so far.
    ///
    /// Shown images that received no event are treated as negative. An empty
    /// submission changes nothing.
    pub fn apply_feedback(&mut self, db: &VectorDatabase, events: &[FeedbackEvent]) -> Result<FeedbackSummary> {
        if events.is_empty() {
            return Ok(FeedbackSummary::default());
        }
        let mut labels = Vec::with_capacity(events.len());
        for ev in events {
            if !self.seen_set.contains(&ev.image_id) {
                return Err(if db.image(ev.image_id).is_none() {
                    Error::UnknownImage(ev.image_id)
                } else {
                    Error::UnseenImage(ev.image_id)
                });
            }
            labels.push(labels_for_event(db, ev, self.config.positive_iou)?);
        }
        let mentioned: HashSet<ImageId> = events.iter().map(|e| e.image_id).collect();
        for &img in self.pending.iter().filter(|i| !mentioned.contains(i)) {
            labels.push(labels_for_event(db, &FeedbackEvent::negative(img), self.config.positive_iou)?);
        }
        self.pending.clear();

        let mut summary = FeedbackSummary::default();
        for l in labels {
            for id in l.positives {
                if self.labelled.insert(id) {
                    self.examples.positives.push(db.embedding(id)?);
                    summary.positives += 1;
                }
            }
            for id in l.negatives {
                if self.labelled.insert(id) {
                    self.examples.negatives.push(db.embedding(id)?);
                    summary.negatives += 1;
                }
            }
        }
        self.w = refine_step(&self.w, &self.examples, &self.config.refine)?;
        Ok(summary)
    }
}
