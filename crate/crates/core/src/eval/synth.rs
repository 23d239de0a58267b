//! Seeded synthetic image collections for benchmarking.
//!
//! Each image gets a scene vector and a set of object instances with boxes.
//! A tile's embedding mixes the scene, per-tile noise, and the directions of
//! the objects it sees, weighted by how much of the object falls inside the
//! tile and how much of the tile the object fills. "Lookalike" instances
//! only register on fine tiles (side below `lookalike_max_side`), so they
//! fool base-level scoring but fade under cross-scale averaging.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::baseline::baseline_storage_vector;
use crate::error::{Error, Result};
use crate::model::{ImageId, ImageRecord, PatchBox, PatchRecord};
use crate::pyramid::{pyramid_tiles, strided_row, PyramidSpec};
use crate::vector::EmbeddingVector;

/// A query with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuery {
    pub name: String,
    pub w_s: EmbeddingVector<f32>,
    pub relevant_images: BTreeSet<ImageId>,
    /// Object boxes used to simulate box feedback.
    pub truth_boxes: BTreeMap<ImageId, Vec<PatchBox>>,
    /// Restricts the search to these images when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe: Option<BTreeSet<ImageId>>,
}

impl BenchmarkQuery {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.truth_boxes.keys().find(|k| !self.relevant_images.contains(k)) {
            return Err(Error::InvalidConfig(format!("query {}: truth boxes for non-relevant image {k}", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub n_concepts: usize,
    pub dim: usize,
    /// Norm of the per-tile noise added to every tile.
    pub noise_sigma: f64,
    /// Norm of the noise added to the concept to form the initial query.
    pub query_noise: f64,
    /// Weight of the concept's lookalike offset inside the initial query.
    pub query_bias: f64,
    /// Mean fraction of images containing a given concept.
    pub rare_fraction: f64,
    /// Lookalike images per relevant image.
    pub lookalike_ratio: f64,
    pub scene_strength: f64,
    pub object_strength: f64,
    pub lookalike_strength: f64,
    /// Tiles wider than this (base pixels) do not see lookalikes.
    pub lookalike_max_side: f64,
    pub n_scenes: usize,
    /// Object side as a fraction of the image's shorter side.
    pub object_scale: (f64, f64),
    pub image_sizes: Vec<(u32, u32)>,
    pub spec: PyramidSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_images: 1500,
            n_concepts: 32,
            dim: 64,
            noise_sigma: 0.6,
            query_noise: 0.9,
            query_bias: 0.5,
            rare_fraction: 0.015,
            lookalike_ratio: 2.0,
            scene_strength: 1.0,
            object_strength: 1.6,
            lookalike_strength: 1.6,
            lookalike_max_side: 300.0,
            n_scenes: 12,
            object_scale: (0.12, 0.6),
            image_sizes: vec![(1280, 720), (800, 600), (640, 480), (1024, 768), (448, 448), (224, 224)],
            spec: PyramidSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 || self.n_images == 0 || self.n_scenes == 0 || self.image_sizes.is_empty() {
            return bad("dim, n_images, n_scenes and image_sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.rare_fraction) {
            return bad("rare_fraction must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.query_noise < 0.0 || self.lookalike_ratio < 0.0 {
            return bad("noise levels and lookalike_ratio must be non-negative");
        }
        let (lo, hi) = self.object_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("object_scale must satisfy 0 < lo <= hi <= 1");
        }
        Ok(())
    }
}

type ImageStream = Vec<(ImageRecord, Vec<PatchRecord>)>;

/// Ingestion streams for both representations plus the queries.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub pyramid: ImageStream,
    /// One whole-image vector per image, for the baseline mode.
    pub baseline: ImageStream,
    pub queries: Vec<BenchmarkQuery>,
}

#[derive(Clone, Debug)]
struct Instance {
    rect: PatchBox,
    direction: Vec<f64>,
    strength: f64,
    fine_only: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let scale = norm / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn add_scaled(acc: &mut [f64], v: &[f64], s: f64) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
}

fn place_box(rng: &mut ChaCha8Rng, w: u32, h: u32, side: f64) -> PatchBox {
    let aspect: f64 = rng.random_range(0.7..1.4);
    let bw = (side * aspect).clamp(8.0, w as f64);
    let bh = (side / aspect).clamp(8.0, h as f64);
    let x1 = rng.random_range(0.0..=(w as f64 - bw));
    let y1 = rng.random_range(0.0..=(h as f64 - bh));
    PatchBox { x1, y1, x2: x1 + bw, y2: y1 + bh }
}

/// How strongly an instance registers in a tile: the fraction of the object
/// inside the tile times the square root of the fraction of the tile it
/// fills.
fn visibility(obj: &PatchBox, tile: &PatchBox) -> f64 {
    let inter = obj.intersection_area(tile);
    if inter == 0.0 {
        return 0.0;
    }
    (inter / obj.area()) * (inter / tile.area()).sqrt()
}

fn tile_embedding(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    scene: &[f64],
    instances: &[Instance],
    tile: &PatchBox,
) -> EmbeddingVector<f32> {
    let mut raw = gaussian(rng, cfg.dim, cfg.noise_sigma);
    add_scaled(&mut raw, scene, cfg.scene_strength);
    for inst in instances {
        if inst.fine_only && tile.width() > cfg.lookalike_max_side {
            continue;
        }
        let vis = visibility(&inst.rect, tile);
        if vis > 0.0 {
            add_scaled(&mut raw, &inst.direction, inst.strength * vis);
        }
    }
    EmbeddingVector::<f64>::new(raw).normalize().map(|v| v.cast()).unwrap_or_else(|_| {
        let mut e = vec![0.0f32; cfg.dim];
        e[0] = 1.0;
        EmbeddingVector::new(e)
    })
}

/// Generates a collection and its queries. Identical configs give identical
/// output.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;

    let concepts: Vec<Vec<f64>> = (0..cfg.n_concepts).map(|_| unit(gaussian(&mut rng, dim, 1.0))).collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.n_concepts).map(|_| unit(gaussian(&mut rng, dim, 1.0))).collect();
    let scenes: Vec<Vec<f64>> = (0..cfg.n_scenes).map(|_| unit(gaussian(&mut rng, dim, 1.0))).collect();

    let sizes: Vec<(u32, u32)> =
        (0..cfg.n_images).map(|_| cfg.image_sizes[rng.random_range(0..cfg.image_sizes.len())]).collect();
    let image_scene: Vec<usize> = (0..cfg.n_images).map(|_| rng.random_range(0..cfg.n_scenes)).collect();
    let mut instances: Vec<Vec<Instance>> = vec![Vec::new(); cfg.n_images];

    let mut queries = Vec::with_capacity(cfg.n_concepts);
    for c in 0..cfg.n_concepts {
        let (lo, hi) = cfg.object_scale;
        let rel_size = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        let prevalence = rng.random_range(0.5..1.5);
        let mut n_rel = (cfg.n_images as f64 * cfg.rare_fraction * prevalence).round() as usize;
        if cfg.rare_fraction > 0.0 {
            n_rel = n_rel.max(1);
        }
        let n_look = (n_rel as f64 * cfg.lookalike_ratio).round() as usize;
        let n_rel = n_rel.min(cfg.n_images);
        let n_look = n_look.min(cfg.n_images - n_rel);
        let picked = sample(&mut rng, cfg.n_images, n_rel + n_look).into_vec();

        let look_dir = unit(concepts[c].iter().zip(&offsets[c]).map(|(a, b)| 0.75 * a + b).collect());
        let mut relevant = BTreeSet::new();
        let mut truth: BTreeMap<ImageId, Vec<PatchBox>> = BTreeMap::new();
        for (j, &img) in picked.iter().enumerate() {
            let (w, h) = sizes[img];
            let side = rel_size * w.min(h) as f64 * rng.random_range(0.8..1.25);
            let rect = place_box(&mut rng, w, h, side);
            if j < n_rel {
                // each instance is a slightly different view of the concept
                let mut dir = concepts[c].clone();
                add_scaled(&mut dir, &gaussian(&mut rng, dim, 0.5 * cfg.noise_sigma), 1.0);
                instances[img].push(Instance { rect, direction: unit(dir), strength: cfg.object_strength, fine_only: false });
                relevant.insert(img as ImageId);
                truth.entry(img as ImageId).or_default().push(rect);
            } else {
                let rect = place_box(&mut rng, w, h, side.min(cfg.lookalike_max_side * 0.6));
                instances[img].push(Instance {
                    rect,
                    direction: look_dir.clone(),
                    strength: cfg.lookalike_strength,
                    fine_only: true,
                });
            }
        }
        let mut w_s = concepts[c].clone();
        add_scaled(&mut w_s, &offsets[c], cfg.query_bias);
        add_scaled(&mut w_s, &gaussian(&mut rng, dim, cfg.query_noise), 1.0);
        queries.push(BenchmarkQuery {
            name: format!("concept-{c:03}"),
            w_s: EmbeddingVector::<f64>::new(unit(w_s)).cast(),
            relevant_images: relevant,
            truth_boxes: truth,
            universe: None,
        });
    }

    let mut pyramid = Vec::with_capacity(cfg.n_images);
    let mut baseline = Vec::with_capacity(cfg.n_images);
    let mut next_vector = 0u64;
    for img in 0..cfg.n_images {
        let (w, h) = sizes[img];
        let record = ImageRecord::new(img as ImageId, w, h, format!("synthetic://{img}"))?;
        let scene = &scenes[image_scene[img]];
        let patches = pyramid_tiles(w, h, &cfg.spec)
            .into_iter()
            .map(|(level, rect)| {
                let embedding = tile_embedding(&mut rng, cfg, scene, &instances[img], &rect);
                next_vector += 1;
                PatchRecord { vector_id: next_vector - 1, image_id: img as ImageId, level, rect, embedding }
            })
            .collect();
        pyramid.push((record.clone(), patches));

        let row: Vec<EmbeddingVector<f32>> = strided_row(w, h, &cfg.spec)
            .iter()
            .map(|rect| tile_embedding(&mut rng, cfg, scene, &instances[img], rect))
            .collect();
        let embedding = baseline_storage_vector(&row)?;
        let whole = PatchBox { x1: 0.0, y1: 0.0, x2: w as f64, y2: h as f64 };
        baseline.push((
            record,
            vec![PatchRecord { vector_id: img as u64, image_id: img as ImageId, level: 0, rect: whole, embedding }],
        ));
    }
    Ok(SyntheticDataset { pyramid, baseline, queries })
}
