//! Patch-vector database: ingestion, persistence and top-l retrieval.

mod format;
mod ivf;
mod scan;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageId, ImageRecord, PatchGeometry, PatchRecord, VectorId};
use crate::pyramid::{self, PyramidSpec};
use crate::vector::{dot_slices, EmbeddingVector};

pub use format::{
    read_jsonl, read_meta, read_vectors, write_jsonl, write_meta, write_vectors, MetaRecord, OverlapRecord,
    PatchMeta, VectorMatrix, FORMAT_VERSION, MAGIC, META_FILE, OVERLAPS_FILE, VECTORS_FILE,
};
pub use ivf::{IvfConfig, IvfIndex};

/// Tolerance on `|‖v‖ - 1|` for stored embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// One retrieval hit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatch {
    pub vector_id: VectorId,
    pub image_id: ImageId,
    pub score: f64,
}

/// A source of top-l patch lookups.
pub trait PatchSearch: Send + Sync {
    fn top_l(
        &self,
        db: &VectorDatabase,
        query: &EmbeddingVector<f32>,
        l: usize,
        exclude: &HashSet<ImageId>,
    ) -> Result<Vec<ScoredPatch>>;
}

/// Full scan; the reference backend.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactScan;

impl PatchSearch for ExactScan {
    fn top_l(
        &self,
        db: &VectorDatabase,
        query: &EmbeddingVector<f32>,
        l: usize,
        exclude: &HashSet<ImageId>,
    ) -> Result<Vec<ScoredPatch>> {
        db.top_l(query, l, exclude)
    }
}

/// Immutable, in-memory patch database.
#[derive(Clone, Debug)]
pub struct VectorDatabase {
    dim: usize,
    vectors: Vec<f32>,
    patches: Vec<PatchMeta>,
    /// Dense image index of each row.
    row_image: Vec<u32>,
    images: Vec<ImageRecord>,
    image_index: HashMap<ImageId, u32>,
    image_rows: Vec<Vec<u32>>,
    row_of: HashMap<VectorId, u32>,
    overlap_offsets: Vec<u32>,
    overlap_rows: Vec<u32>,
    max_row_norm: f64,
    sketch: scan::Sketch,
}

fn ingest_err(record: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ingest { record: record.into(), reason: reason.into() }
}

/// Builds a database from per-image patch lists, computing overlap sets
/// from the patch boxes.
pub fn ingest<I>(records: I, spec: &PyramidSpec) -> Result<VectorDatabase>
where
    I: IntoIterator<Item = (ImageRecord, Vec<PatchRecord>)>,
{
    ingest_with_dim(None, records, spec)
}

/// As [`ingest`], with the dimension fixed up front (needed for an empty
/// database to carry a dimension).
pub fn ingest_with_dim<I>(dim: Option<usize>, records: I, spec: &PyramidSpec) -> Result<VectorDatabase>
where
    I: IntoIterator<Item = (ImageRecord, Vec<PatchRecord>)>,
{
    spec.validate()?;
    let mut dim = dim;
    let mut vectors = Vec::new();
    let mut patches = Vec::new();
    let mut images = Vec::new();
    let mut seen_images = HashSet::new();
    let mut seen_vectors = HashSet::new();

    for (image, image_patches) in records {
        if image.width == 0 || image.height == 0 {
            return Err(ingest_err(format!("image {}", image.image_id), "zero width or height"));
        }
        if !seen_images.insert(image.image_id) {
            return Err(ingest_err(format!("image {}", image.image_id), "duplicate image_id"));
        }
        let n_levels = pyramid::levels(&image, spec).len() as u32;
        for p in image_patches {
            let name = format!("patch {}", p.vector_id);
            if p.image_id != image.image_id {
                return Err(ingest_err(
                    name,
                    format!("dangling image_id {} (listed under image {})", p.image_id, image.image_id),
                ));
            }
            let d = *dim.get_or_insert(p.embedding.dim());
            if p.embedding.dim() != d {
                return Err(ingest_err(name, format!("dimension {} differs from database dimension {d}", p.embedding.dim())));
            }
            if !seen_vectors.insert(p.vector_id) {
                return Err(ingest_err(name, "duplicate vector_id"));
            }
            if p.level >= n_levels {
                return Err(ingest_err(name, format!("level {} but the image has {n_levels} pyramid levels", p.level)));
            }
            if !image.contains(&p.rect) {
                return Err(ingest_err(name, format!("box {:?} outside {}x{}", p.rect.to_array(), image.width, image.height)));
            }
            let norm = p.embedding.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(ingest_err(name, format!("embedding norm {norm} is not 1")));
            }
            vectors.extend_from_slice(p.embedding.as_slice());
            patches.push(PatchMeta { vector_id: p.vector_id, image_id: p.image_id, level: p.level, rect: p.rect });
        }
        images.push(image);
    }
    VectorDatabase::assemble(dim.unwrap_or(0), vectors, patches, images, None)
}

impl VectorDatabase {
    /// Validates the pieces and builds indexes. When `overlaps` is `None`
    /// the overlap sets are computed from geometry.
    fn assemble(
        dim: usize,
        vectors: Vec<f32>,
        patches: Vec<PatchMeta>,
        images: Vec<ImageRecord>,
        overlaps: Option<Vec<OverlapRecord>>,
    ) -> Result<Self> {
        if dim == 0 && !patches.is_empty() {
            return Err(ingest_err("database", "patches present but dimension is 0"));
        }
        if vectors.len() != patches.len() * dim {
            return Err(ingest_err(
                "database",
                format!("{} vector rows but {} patch records", vectors.len() / dim.max(1), patches.len()),
            ));
        }
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.image_id, i as u32).is_some() {
                return Err(ingest_err(format!("image {}", img.image_id), "duplicate image_id"));
            }
        }
        let mut row_of = HashMap::with_capacity(patches.len());
        let mut row_image = Vec::with_capacity(patches.len());
        let mut image_rows = vec![Vec::new(); images.len()];
        for (r, p) in patches.iter().enumerate() {
            let Some(&ii) = image_index.get(&p.image_id) else {
                return Err(ingest_err(format!("patch {}", p.vector_id), format!("dangling image_id {}", p.image_id)));
            };
            if row_of.insert(p.vector_id, r as u32).is_some() {
                return Err(ingest_err(format!("patch {}", p.vector_id), "duplicate vector_id"));
            }
            row_image.push(ii);
            image_rows[ii as usize].push(r as u32);
        }

        let mut max_row_norm: f64 = 0.0;
        if dim > 0 {
            for (r, row) in vectors.chunks_exact(dim).enumerate() {
                let norm = dot_slices(row, row).sqrt();
                if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                    return Err(Error::NotUnitNorm { row: r, vector_id: patches[r].vector_id, norm });
                }
                max_row_norm = max_row_norm.max(norm);
            }
        }

        let sketch = scan::Sketch::build(&vectors, dim);
        let mut db = Self {
            dim,
            vectors,
            patches,
            row_image,
            images,
            image_index,
            image_rows,
            row_of,
            overlap_offsets: vec![0],
            overlap_rows: Vec::new(),
            max_row_norm,
            sketch,
        };
        match overlaps {
            Some(recs) => db.attach_overlaps(recs)?,
            None => db.compute_overlaps(),
        }
        Ok(db)
    }

    fn compute_overlaps(&mut self) {
        let mut per_row: Vec<Vec<u32>> = vec![Vec::new(); self.patches.len()];
        for rows in &self.image_rows {
            let geoms: Vec<PatchGeometry> = rows.iter().map(|&r| self.geometry(r as usize)).collect();
            for (g, &r) in geoms.iter().zip(rows) {
                per_row[r as usize] =
                    pyramid::overlap_set(g, &geoms).into_iter().map(|id| self.row_of[&id]).collect();
            }
        }
        self.set_overlaps(per_row);
    }

    fn attach_overlaps(&mut self, recs: Vec<OverlapRecord>) -> Result<()> {
        let mut per_row: Vec<Option<Vec<u32>>> = vec![None; self.patches.len()];
        for rec in recs {
            let name = format!("overlap entry {}", rec.vector_id);
            let &r = self.row_of.get(&rec.vector_id).ok_or_else(|| ingest_err(&name, "unknown vector_id"))?;
            if !rec.overlaps.contains(&rec.vector_id) {
                return Err(ingest_err(name, "overlap set does not contain its own key"));
            }
            let image = self.row_image[r as usize];
            let mut rows = Vec::with_capacity(rec.overlaps.len());
            for id in &rec.overlaps {
                let &o = self.row_of.get(id).ok_or_else(|| ingest_err(&name, format!("unknown vector_id {id}")))?;
                if self.row_image[o as usize] != image {
                    return Err(ingest_err(&name, format!("vector {id} belongs to another image")));
                }
                rows.push(o);
            }
            per_row[r as usize] = Some(rows);
        }
        let per_row = per_row
            .into_iter()
            .enumerate()
            .map(|(r, o)| o.ok_or_else(|| ingest_err(format!("patch {}", self.patches[r].vector_id), "missing overlap entry")))
            .collect::<Result<Vec<_>>>()?;
        self.set_overlaps(per_row);
        Ok(())
    }

    fn set_overlaps(&mut self, per_row: Vec<Vec<u32>>) {
        self.overlap_offsets = Vec::with_capacity(per_row.len() + 1);
        self.overlap_offsets.push(0);
        self.overlap_rows.clear();
        for rows in per_row {
            self.overlap_rows.extend(rows);
            self.overlap_offsets.push(self.overlap_rows.len() as u32);
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self::assemble(dim, Vec::new(), Vec::new(), Vec::new(), None).expect("empty database is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn patches(&self) -> &[PatchMeta] {
        &self.patches
    }

    pub fn image(&self, image_id: ImageId) -> Option<&ImageRecord> {
        self.image_index.get(&image_id).map(|&i| &self.images[i as usize])
    }

    pub fn contains_vector(&self, vector_id: VectorId) -> bool {
        self.row_of.contains_key(&vector_id)
    }

    fn row(&self, vector_id: VectorId) -> Result<usize> {
        self.row_of.get(&vector_id).map(|&r| r as usize).ok_or(Error::UnknownVector(vector_id))
    }

    #[inline]
    fn row_slice(&self, r: usize) -> &[f32] {
        &self.vectors[r * self.dim..(r + 1) * self.dim]
    }

    fn geometry(&self, r: usize) -> PatchGeometry {
        let p = &self.patches[r];
        PatchGeometry { vector_id: p.vector_id, level: p.level, rect: p.rect }
    }

    pub fn patch(&self, vector_id: VectorId) -> Result<&PatchMeta> {
        Ok(&self.patches[self.row(vector_id)?])
    }

    pub fn embedding(&self, vector_id: VectorId) -> Result<EmbeddingVector<f32>> {
        Ok(EmbeddingVector::new(self.row_slice(self.row(vector_id)?).to_vec()))
    }

    /// Patches of an image in row order.
    pub fn image_patches(&self, image_id: ImageId) -> Result<Vec<&PatchMeta>> {
        let &i = self.image_index.get(&image_id).ok_or(Error::UnknownImage(image_id))?;
        Ok(self.image_rows[i as usize].iter().map(|&r| &self.patches[r as usize]).collect())
    }

    pub fn image_geometry(&self, image_id: ImageId) -> Result<Vec<PatchGeometry>> {
        let &i = self.image_index.get(&image_id).ok_or(Error::UnknownImage(image_id))?;
        Ok(self.image_rows[i as usize].iter().map(|&r| self.geometry(r as usize)).collect())
    }

    pub fn overlaps(&self, vector_id: VectorId) -> Result<Vec<VectorId>> {
        let r = self.row(vector_id)?;
        Ok(self.overlap_rows_of(r).iter().map(|&o| self.patches[o as usize].vector_id).collect())
    }

    fn overlap_rows_of(&self, r: usize) -> &[u32] {
        &self.overlap_rows[self.overlap_offsets[r] as usize..self.overlap_offsets[r + 1] as usize]
    }

    /// Canonical `f64` score of one stored vector against `query`.
    pub fn score(&self, query: &EmbeddingVector<f32>, vector_id: VectorId) -> Result<f64> {
        query.check_dim(self.dim)?;
        Ok(dot_slices(self.row_slice(self.row(vector_id)?), query.as_slice()))
    }

    /// Mean score over the overlap set of `vector_id`.
    pub fn multiscale_score(&self, query: &EmbeddingVector<f32>, vector_id: VectorId) -> Result<f64> {
        query.check_dim(self.dim)?;
        let rows = self.overlap_rows_of(self.row(vector_id)?);
        let sum: f64 = rows.iter().map(|&o| dot_slices(self.row_slice(o as usize), query.as_slice())).sum();
        Ok(sum / rows.len() as f64)
    }

    fn exclusion_mask(&self, exclude: &HashSet<ImageId>) -> Vec<bool> {
        let mut mask = vec![false; self.images.len()];
        for id in exclude {
            if let Some(&i) = self.image_index.get(id) {
                mask[i as usize] = true;
            }
        }
        mask
    }

    /// The `l` highest-scoring patches outside `exclude`, by descending
    /// score with ties to the lower vector id.
    pub fn top_l(&self, query: &EmbeddingVector<f32>, l: usize, exclude: &HashSet<ImageId>) -> Result<Vec<ScoredPatch>> {
        query.check_dim(self.dim)?;
        if l == 0 {
            return Err(Error::InvalidConfig("l must be at least 1".into()));
        }
        let mask = self.exclusion_mask(exclude);
        let allowed = |r: usize| !mask[self.row_image[r] as usize];
        let hits = scan::exact_top_l(
            &self.vectors,
            &self.sketch,
            self.dim,
            query.as_slice(),
            l,
            self.max_row_norm.max(1.0),
            allowed,
            |r| self.patches[r].vector_id,
        );
        Ok(hits.into_iter().map(|(r, score)| self.hit(r, score)).collect())
    }

    fn hit(&self, r: usize, score: f64) -> ScoredPatch {
        let p = &self.patches[r];
        ScoredPatch { vector_id: p.vector_id, image_id: p.image_id, score }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vectors(&dir.join(VECTORS_FILE), self.dim, &self.vectors)?;
        write_meta(&dir.join(META_FILE), &self.patches, &self.images)?;
        let overlaps = (0..self.patches.len()).map(|r| OverlapRecord {
            vector_id: self.patches[r].vector_id,
            overlaps: self.overlap_rows_of(r).iter().map(|&o| self.patches[o as usize].vector_id).collect(),
        });
        write_jsonl(&dir.join(OVERLAPS_FILE), overlaps)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_vectors(&dir.join(VECTORS_FILE))?;
        let (patches, images) = read_meta(&dir.join(META_FILE))?;
        let overlaps = read_jsonl::<OverlapRecord>(&dir.join(OVERLAPS_FILE))?;
        Self::assemble(m.dim, m.data, patches, images, Some(overlaps))
    }

    /// Ingests a raw vectors file plus metadata file (no overlap file); the
    /// overlap index is computed here.
    pub fn ingest_files(vectors: &Path, meta: &Path, spec: &PyramidSpec) -> Result<Self> {
        let m = read_vectors(vectors)?;
        let (patches, images) = read_meta(meta)?;
        if patches.len() != m.rows {
            return Err(ingest_err(
                meta.display().to_string(),
                format!("{} patch records but {} vector rows", patches.len(), m.rows),
            ));
        }
        Self::from_matrix(m, patches, images, spec)
    }

    /// Builds a database from a row-major matrix whose row `i` belongs to
    /// `patches[i]`, without copying the rows. Applies the same checks as
    /// [`ingest`].
    pub fn from_matrix(
        matrix: VectorMatrix,
        patches: Vec<PatchMeta>,
        images: Vec<ImageRecord>,
        spec: &PyramidSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if matrix.data.len() != matrix.rows * matrix.dim {
            return Err(ingest_err("matrix", format!("{} values for {}x{}", matrix.data.len(), matrix.rows, matrix.dim)));
        }
        let mut n_levels: HashMap<ImageId, (u32, &ImageRecord)> = HashMap::with_capacity(images.len());
        for image in &images {
            if image.width == 0 || image.height == 0 {
                return Err(ingest_err(format!("image {}", image.image_id), "zero width or height"));
            }
            n_levels.insert(image.image_id, (pyramid::levels(image, spec).len() as u32, image));
        }
        for p in &patches {
            let name = format!("patch {}", p.vector_id);
            let Some(&(levels, image)) = n_levels.get(&p.image_id) else {
                return Err(ingest_err(name, format!("dangling image_id {}", p.image_id)));
            };
            if p.level >= levels {
                return Err(ingest_err(name, format!("level {} but the image has {levels} pyramid levels", p.level)));
            }
            if !image.contains(&p.rect) {
                return Err(ingest_err(name, format!("box {:?} outside {}x{}", p.rect.to_array(), image.width, image.height)));
            }
        }
        Self::assemble(matrix.dim, matrix.data, patches, images, None)
    }

    pub(crate) fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub(crate) fn row_vector_id(&self, r: usize) -> VectorId {
        self.patches[r].vector_id
    }

    pub(crate) fn row_allowed_mask(&self, exclude: &HashSet<ImageId>) -> Vec<bool> {
        let mask = self.exclusion_mask(exclude);
        self.row_image.iter().map(|&i| !mask[i as usize]).collect()
    }

    pub(crate) fn hit_for_row(&self, r: usize, score: f64) -> ScoredPatch {
        self.hit(r, score)
    }
}
