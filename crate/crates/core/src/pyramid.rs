//! Pyramid level and tile geometry.
//!
//! An image of size `W × H` is represented by square tiles of side `z` cut at
//! a fixed stride from successively downscaled copies `I_0, I_1, …`. Only the
//! arithmetic lives here; no pixels are touched. Boxes are reported in base
//! image (`I_0`) coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, PatchBox, PatchGeometry, VectorId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    /// Per-level downscale factor, in `(0, 1)`.
    pub downscale: f64,
    /// Tile side in level pixels.
    pub tile: u32,
    /// Step between tile starts in level pixels.
    pub stride: u32,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { downscale: 0.5, tile: 224, stride: 112 }
    }
}

impl PyramidSpec {
    pub fn new(downscale: f64, tile: u32) -> Result<Self> {
        let spec = Self { downscale, tile, stride: (tile / 2).max(1) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_stride(mut self, stride: u32) -> Result<Self> {
        self.stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.downscale > 0.0 && self.downscale < 1.0) {
            return Err(Error::InvalidConfig(format!("downscale {} must lie in (0, 1)", self.downscale)));
        }
        if self.tile == 0 {
            return Err(Error::InvalidConfig("tile size must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.tile {
            return Err(Error::InvalidConfig(format!("stride {} must lie in [1, {}]", self.stride, self.tile)));
        }
        Ok(())
    }
}

/// One image of the pyramid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidLevel {
    pub level: u32,
    pub scaled_w: u32,
    pub scaled_h: u32,
    /// Level pixels per base pixel.
    pub scale: f64,
    pub base_w: u32,
    pub base_h: u32,
    /// `scale` as a ratio `num / den`, kept separate so integer ratios map
    /// back without an extra rounding.
    ratio: (f64, f64),
}

impl PyramidLevel {
    /// Maps a level-pixel box to base coordinates, clamped to the image. A
    /// tile touching the far edge of the level ends at the image edge.
    fn to_base(&self, x: u32, y: u32, side: u32) -> PatchBox {
        let (w, h) = (self.base_w as f64, self.base_h as f64);
        let (num, den) = self.ratio;
        let map = |v: u32, edge: u32, full: f64| if v >= edge { full } else { (v as f64 * den / num).min(full) };
        PatchBox {
            x1: map(x, self.scaled_w, w),
            y1: map(y, self.scaled_h, h),
            x2: map(x + side, self.scaled_w, w),
            y2: map(y + side, self.scaled_h, h),
        }
    }
}

/// Tile start offsets along an axis: `0, stride, 2·stride, …` while the tile
/// fits, plus one tile flush with the far edge if the regular ones fall short.
pub fn tile_starts(axis: u32, tile: u32, stride: u32) -> Vec<u32> {
    if axis <= tile {
        return vec![0];
    }
    let mut starts: Vec<u32> = (0..).map(|i| i * stride).take_while(|s| s + tile <= axis).collect();
    let last = *starts.last().unwrap_or(&0);
    if last + tile < axis {
        starts.push(axis - tile);
    }
    starts
}

fn tile_count(axis: u32, tile: u32, stride: u32) -> usize {
    if axis <= tile {
        return 1;
    }
    let regular = ((axis - tile) / stride + 1) as usize;
    let reaches = (regular as u32 - 1) * stride + tile == axis;
    regular + usize::from(!reaches)
}

/// Pyramid levels for a `width × height` image.
///
/// Images whose shorter side is below the tile size are treated as if
/// upscaled so the shorter side equals the tile size, which always yields a
/// single level.
pub fn levels_for(width: u32, height: u32, spec: &PyramidSpec) -> Vec<PyramidLevel> {
    let z = spec.tile;
    let short = width.min(height).max(1);
    if short < z {
        let scale = z as f64 / short as f64;
        let (scaled_w, scaled_h) = if width <= height {
            (z, ((height as f64 * scale).floor() as u32).max(z))
        } else {
            (((width as f64 * scale).floor() as u32).max(z), z)
        };
        let ratio = (z as f64, short as f64);
        return vec![PyramidLevel { level: 0, scaled_w, scaled_h, scale, base_w: width, base_h: height, ratio }];
    }

    let mut out = Vec::new();
    for level in 0u32.. {
        let scale = spec.downscale.powi(level as i32);
        // The epsilon keeps exact products such as 0.5 * 1280 from flooring low.
        let scaled_w = (width as f64 * scale + 1e-9).floor() as u32;
        let scaled_h = (height as f64 * scale + 1e-9).floor() as u32;
        if scaled_w.min(scaled_h) < z {
            break;
        }
        out.push(PyramidLevel { level, scaled_w, scaled_h, scale, base_w: width, base_h: height, ratio: (scale, 1.0) });
    }
    out
}

pub fn levels(image: &ImageRecord, spec: &PyramidSpec) -> Vec<PyramidLevel> {
    levels_for(image.width, image.height, spec)
}

/// Tile boxes of one level in base-image coordinates, row-major.
pub fn tiles(level: &PyramidLevel, spec: &PyramidSpec) -> Vec<PatchBox> {
    let z = spec.tile;
    let xs = tile_starts(level.scaled_w, z, spec.stride);
    let ys = tile_starts(level.scaled_h, z, spec.stride);
    let mut boxes = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            boxes.push(level.to_base(x, y, z));
        }
    }
    boxes
}

/// All `(level, box)` pairs of an image, levels in increasing order.
pub fn pyramid_tiles(width: u32, height: u32, spec: &PyramidSpec) -> Vec<(u32, PatchBox)> {
    levels_for(width, height, spec)
        .iter()
        .flat_map(|lvl| tiles(lvl, spec).into_iter().map(move |b| (lvl.level, b)))
        .collect()
}

/// Exact number of vectors the pyramid of an image produces.
pub fn vector_count_estimate(image: &ImageRecord, spec: &PyramidSpec) -> usize {
    levels(image, spec)
        .iter()
        .map(|l| tile_count(l.scaled_w, spec.tile, spec.stride) * tile_count(l.scaled_h, spec.tile, spec.stride))
        .sum()
}

/// The single-row tiling used for one-vector-per-image representations: the
/// image is rescaled so its shorter side equals the tile size and tiles are
/// strided along the longer side.
pub fn strided_row(width: u32, height: u32, spec: &PyramidSpec) -> Vec<PatchBox> {
    let z = spec.tile;
    let short = width.min(height).max(1);
    let scale = z as f64 / short as f64;
    let (scaled_w, scaled_h) = if width <= height {
        (z, ((height as f64 * scale + 1e-9).floor() as u32).max(z))
    } else {
        (((width as f64 * scale + 1e-9).floor() as u32).max(z), z)
    };
    let ratio = (z as f64, short as f64);
    let level = PyramidLevel { level: 0, scaled_w, scaled_h, scale, base_w: width, base_h: height, ratio };
    tiles(&level, spec)
}

/// For every level present in `patches`, the patch with the largest IoU
/// against `query`, ties going to the lower vector id. Levels where nothing
/// overlaps are omitted. Returned in increasing level order.
pub fn best_per_level(query: &PatchBox, patches: &[PatchGeometry]) -> Vec<(u32, VectorId, f64)> {
    let mut best: Vec<(u32, VectorId, f64)> = Vec::new();
    for p in patches {
        let iou = query.iou(&p.rect);
        if iou <= 0.0 {
            continue;
        }
        match best.iter_mut().find(|(lvl, _, _)| *lvl == p.level) {
            Some(slot) => {
                if iou > slot.2 || (iou == slot.2 && p.vector_id < slot.1) {
                    *slot = (p.level, p.vector_id, iou);
                }
            }
            None => best.push((p.level, p.vector_id, iou)),
        }
    }
    best.sort_by_key(|(lvl, _, _)| *lvl);
    best
}

/// The target plus, for every other level of its image, the patch that
/// overlaps it most.
pub fn overlap_set(target: &PatchGeometry, image_patches: &[PatchGeometry]) -> Vec<VectorId> {
    let mut out: Vec<(u32, VectorId)> = best_per_level(&target.rect, image_patches)
        .into_iter()
        .filter(|(lvl, _, _)| *lvl != target.level)
        .map(|(lvl, id, _)| (lvl, id))
        .collect();
    out.push((target.level, target.vector_id));
    out.sort_by_key(|(lvl, _)| *lvl);
    out.into_iter().map(|(_, id)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> PyramidSpec {
        PyramidSpec::default()
    }

    fn dims(levels: &[PyramidLevel]) -> Vec<(u32, u32)> {
        levels.iter().map(|l| (l.scaled_w, l.scaled_h)).collect()
    }

    #[test]
    fn level_examples() {
        assert_eq!(dims(&levels_for(224, 224, &spec())), vec![(224, 224)]);
        assert_eq!(dims(&levels_for(1280, 720, &spec())), vec![(1280, 720), (640, 360)]);
        let small = levels_for(100, 100, &spec());
        assert_eq!(dims(&small), vec![(224, 224)]);
        let t = tiles(&small[0], &spec());
        assert_eq!(t, vec![PatchBox { x1: 0.0, y1: 0.0, x2: 100.0, y2: 100.0 }]);
    }

    #[test]
    fn small_rectangular_image_tiles_along_long_side() {
        let lv = levels_for(100, 300, &spec());
        assert_eq!(dims(&lv), vec![(224, 672)]);
        let t = tiles(&lv[0], &spec());
        // starts 0,112,...,448 on the long axis
        assert_eq!(t.len(), 5);
        for b in &t {
            assert!((b.width() - 100.0).abs() < 1e-9);
            assert!((b.height() - 100.0).abs() < 1e-9);
            assert!(b.within(100.0, 300.0));
        }
    }

    #[test]
    fn tile_start_examples() {
        assert_eq!(tile_starts(224, 224, 112), vec![0]);
        assert_eq!(tile_starts(560, 224, 112), vec![0, 112, 224, 336]);
        assert_eq!(tile_starts(600, 224, 112), vec![0, 112, 224, 336, 376]);
        for axis in 1..2000 {
            assert_eq!(tile_starts(axis, 224, 112).len(), tile_count(axis, 224, 112), "axis {axis}");
        }
    }

    #[test]
    fn single_tile_level() {
        let lv = levels_for(224, 224, &spec());
        assert_eq!(tiles(&lv[0], &spec()), vec![PatchBox { x1: 0.0, y1: 0.0, x2: 224.0, y2: 224.0 }]);
    }

    #[test]
    fn level_one_boxes_map_to_double_size() {
        let lv = levels_for(1280, 720, &spec());
        for b in tiles(&lv[1], &spec()) {
            assert!((b.width() - 448.0).abs() < 1e-9);
            assert!((b.height() - 448.0).abs() < 1e-9);
        }
    }

    #[test]
    fn count_examples() {
        let img = |w, h| ImageRecord::new(1, w, h, "").unwrap();
        assert_eq!(vector_count_estimate(&img(224, 224), &spec()), 1);
        // level 0: 10 x 7, level 1 (600x400): 5 x 3
        assert_eq!(vector_count_estimate(&img(1200, 800), &spec()), 85);
        // level 0: 11 x 6, level 1 (640x360): 5 x 3
        assert_eq!(vector_count_estimate(&img(1280, 720), &spec()), 81);
        assert_eq!(pyramid_tiles(1280, 720, &spec()).len(), 81);
    }

    #[test]
    fn strided_row_covers_long_side() {
        let row = strided_row(1280, 720, &spec());
        // rescaled to 398x224, starts 0,112 + flush 174
        assert_eq!(row.len(), 3);
        assert_eq!(row.last().unwrap().x2, 1280.0);
        assert_eq!(strided_row(224, 224, &spec()).len(), 1);
    }

    fn geom(id: u64, level: u32, r: (f64, f64, f64, f64)) -> PatchGeometry {
        PatchGeometry { vector_id: id, level, rect: PatchBox::new(r.0, r.1, r.2, r.3).unwrap() }
    }

    #[test]
    fn overlap_single_patch() {
        let t = geom(7, 0, (0.0, 0.0, 224.0, 224.0));
        assert_eq!(overlap_set(&t, &[t]), vec![7]);
    }

    #[test]
    fn overlap_matches_brute_force_on_real_pyramid() {
        let patches: Vec<PatchGeometry> = pyramid_tiles(1280, 720, &spec())
            .into_iter()
            .enumerate()
            .map(|(i, (lvl, r))| PatchGeometry { vector_id: i as u64, level: lvl, rect: r })
            .collect();
        for t in &patches {
            let got = overlap_set(t, &patches);
            assert!(got.contains(&t.vector_id));
            assert_eq!(got.len(), 2);
            // brute force: per other level, max IoU then min id
            for other in [0u32, 1] {
                if other == t.level {
                    continue;
                }
                let cands: Vec<_> = patches.iter().filter(|p| p.level == other).collect();
                let best = cands.iter().map(|p| t.rect.iou(&p.rect)).fold(f64::MIN, f64::max);
                let id = cands.iter().filter(|p| t.rect.iou(&p.rect) == best).map(|p| p.vector_id).min().unwrap();
                assert!(got.contains(&id));
            }
        }
    }

    #[test]
    fn overlap_tie_prefers_lower_id() {
        // target centred between two equal candidates at level 0
        let t = geom(10, 1, (56.0, 0.0, 280.0, 224.0));
        let a = geom(4, 0, (0.0, 0.0, 224.0, 224.0));
        let b = geom(3, 0, (112.0, 0.0, 336.0, 224.0));
        let c = geom(5, 0, (0.0, 0.0, 224.0, 224.0));
        // a and c tie exactly; b differs
        let got = overlap_set(&t, &[t, a, b, c]);
        let iou_a = t.rect.iou(&a.rect);
        let iou_b = t.rect.iou(&b.rect);
        assert_eq!(iou_a, iou_b);
        assert_eq!(got, vec![3, 10]);
    }

    #[test]
    fn spec_validation() {
        assert!(PyramidSpec::new(1.0, 224).is_err());
        assert!(PyramidSpec::new(0.0, 224).is_err());
        assert!(PyramidSpec::new(0.5, 0).is_err());
        assert!(PyramidSpec::default().with_stride(300).is_err());
        assert!(PyramidSpec::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn tiles_stay_inside_and_keep_size(w in 1u32..3000, h in 1u32..3000) {
            let s = spec();
            let lv = levels_for(w, h, &s);
            prop_assert!(!lv.is_empty());
            for l in &lv {
                let side = s.tile as f64 / l.scale;
                // edge tiles may stretch by the pixel lost when flooring the level size
                let slack = 1.0 / l.scale + 1e-9;
                for b in tiles(l, &s) {
                    prop_assert!(b.within(w as f64, h as f64), "{b:?} outside {w}x{h}");
                    prop_assert!((b.width() - side).abs() <= slack);
                    prop_assert!((b.height() - side).abs() <= slack);
                }
            }
        }

        #[test]
        fn geometry_is_deterministic(w in 1u32..3000, h in 1u32..3000) {
            prop_assert_eq!(pyramid_tiles(w, h, &spec()), pyramid_tiles(w, h, &spec()));
        }

        #[test]
        fn count_tracks_approximation(w in 448u32..4000, h in 448u32..4000) {
            let img = ImageRecord::new(1, w, h, "").unwrap();
            let exact = vector_count_estimate(&img, &spec()) as f64;
            let approx = ((w as f64 / 112.0).ceil() * (h as f64 / 112.0).ceil()) as f64;
            let ratio = exact / approx;
            prop_assert!((0.5..=2.0).contains(&ratio), "{w}x{h}: {exact} vs {approx}");
        }
    }
}
