//! Inverted-file approximate backend.
//!
//! Rows are clustered with spherical k-means; a query scans only the rows of
//! the `probes` lists whose centroids score highest. Recall is a measured
//! property, not a per-call guarantee.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PatchSearch, ScoredPatch, VectorDatabase};
use crate::error::{Error, Result};
use crate::model::ImageId;
use crate::vector::{dot_slices, EmbeddingVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvfConfig {
    pub lists: usize,
    pub probes: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for IvfConfig {
    fn default() -> Self {
        Self { lists: 64, probes: 48, iterations: 8, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct IvfIndex {
    config: IvfConfig,
    dim: usize,
    rows: usize,
    centroids: Vec<f64>,
    lists: Vec<Vec<u32>>,
}

fn nearest(centroids: &[f64], dim: usize, row: &[f32]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let s: f64 = cent.iter().zip(row).map(|(a, b)| a * *b as f64).sum();
        if s > best.0 {
            best = (s, c);
        }
    }
    best.1
}

impl IvfIndex {
    pub fn build(db: &VectorDatabase, config: IvfConfig) -> Result<Self> {
        if config.lists == 0 || config.probes == 0 {
            return Err(Error::InvalidConfig("IVF lists and probes must be positive".into()));
        }
        let dim = db.dim();
        let data = db.raw_vectors();
        let n = db.patch_count();
        let k = config.lists.min(n.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
        if n > 0 {
            for r in sample(&mut rng, n, k).iter() {
                centroids.extend(data[r * dim..(r + 1) * dim].iter().map(|&v| v as f64));
            }
        }
        let mut assign = vec![0usize; n];
        for _ in 0..config.iterations.max(1) {
            for (r, row) in data.chunks_exact(dim.max(1)).enumerate() {
                assign[r] = nearest(&centroids, dim, row);
            }
            let mut sums = vec![0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (r, row) in data.chunks_exact(dim.max(1)).enumerate() {
                let c = assign[r];
                counts[c] += 1;
                for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                    *s += *v as f64;
                }
            }
            for c in 0..k {
                let cent = &mut sums[c * dim..(c + 1) * dim];
                let norm = cent.iter().map(|v| v * v).sum::<f64>().sqrt();
                if counts[c] == 0 || norm == 0.0 {
                    // reseed an empty list from a random row
                    let r = sample(&mut rng, n, 1).index(0);
                    for (s, v) in cent.iter_mut().zip(&data[r * dim..(r + 1) * dim]) {
                        *s = *v as f64;
                    }
                } else {
                    cent.iter_mut().for_each(|v| *v /= norm);
                }
            }
            centroids = sums;
        }
        let mut lists = vec![Vec::new(); k];
        for (r, row) in data.chunks_exact(dim.max(1)).enumerate() {
            lists[nearest(&centroids, dim, row)].push(r as u32);
        }
        Ok(Self { config, dim, rows: n, centroids, lists })
    }

    pub fn config(&self) -> &IvfConfig {
        &self.config
    }

    pub fn with_probes(mut self, probes: usize) -> Self {
        self.config.probes = probes.max(1);
        self
    }
}

impl PatchSearch for IvfIndex {
    fn top_l(
        &self,
        db: &VectorDatabase,
        query: &EmbeddingVector<f32>,
        l: usize,
        exclude: &HashSet<ImageId>,
    ) -> Result<Vec<ScoredPatch>> {
        query.check_dim(db.dim())?;
        if db.dim() != self.dim || db.patch_count() != self.rows {
            return Err(Error::InvalidConfig("IVF index was built for a different database".into()));
        }
        if l == 0 {
            return Err(Error::InvalidConfig("l must be at least 1".into()));
        }
        let q = query.as_slice();
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim.max(1))
            .enumerate()
            .map(|(c, cent)| (cent.iter().zip(q).map(|(a, b)| a * *b as f64).sum(), c))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let allowed = db.row_allowed_mask(exclude);
        let data = db.raw_vectors();
        let mut hits: Vec<(usize, f64)> = order
            .iter()
            .take(self.config.probes)
            .flat_map(|&(_, c)| self.lists[c].iter().map(|&r| r as usize))
            .filter(|&r| allowed[r])
            .map(|r| (r, dot_slices(&data[r * self.dim..(r + 1) * self.dim], q)))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(db.row_vector_id(a.0).cmp(&db.row_vector_id(b.0))));
        hits.truncate(l);
        Ok(hits.into_iter().map(|(r, s)| db.hit_for_row(r, s)).collect())
    }
}
