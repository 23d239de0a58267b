//! Axis-aligned pixel boxes in base-image coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A box `(x1, y1, x2, y2)` with `x1 < x2` and `y1 < y2`.
///
/// Coordinates are fractional because tiles cut from a downscaled pyramid
/// level map back to non-integer base-image positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 4]", into = "[T; 4]")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Rect<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> Rect<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|c| c.is_finite());
        if !finite || !(x1 < x2) || !(y1 < y2) {
            return Err(Error::InvalidBox { x1: x1.widen(), y1: y1.widen(), x2: x2.widen(), y2: y2.widen() });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2.widen() - self.x1.widen()
    }

    pub fn height(&self) -> f64 {
        self.y2.widen() - self.y1.widen()
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x2.min(other.x2).widen() - self.x1.max(other.x1).widen();
        let h = self.y2.min(other.y2).widen() - self.y1.max(other.y1).widen();
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// Whether the box lies inside `[0, width] × [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1.widen() >= 0.0 && self.y1.widen() >= 0.0 && self.x2.widen() <= width && self.y2.widen() <= height
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1.widen() && x <= self.x2.widen() && y >= self.y1.widen() && y <= self.y2.widen()
    }

    pub fn cast<U: Scalar>(&self) -> Rect<U> {
        Rect {
            x1: U::from_f64_lossy(self.x1.widen()),
            y1: U::from_f64_lossy(self.y1.widen()),
            x2: U::from_f64_lossy(self.x2.widen()),
            y2: U::from_f64_lossy(self.y2.widen()),
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl<T: Scalar> TryFrom<[T; 4]> for Rect<T> {
    type Error = Error;

    fn try_from([x1, y1, x2, y2]: [T; 4]) -> Result<Self> {
        Rect::new(x1, y1, x2, y2)
    }
}

impl<T: Scalar> From<Rect<T>> for [T; 4] {
    fn from(r: Rect<T>) -> Self {
        r.to_array()
    }
}
