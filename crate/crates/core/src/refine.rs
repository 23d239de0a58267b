//! Query refinement from ranked feedback.
//!
//! The query `w` is moved by gradient steps on the pairwise hinge loss
//! `L(w) = Σ_{v ∈ P, v' ∈ N} relu(w·v' − w·v)`. The gradient has a closed
//! form: each positive is pulled in with weight equal to the number of
//! negatives scoring at or above it, and each negative is pushed away with
//! weight equal to the number of positives scoring at or below it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{dot_slices, EmbeddingVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// Learning rate.
    pub eta: f64,
    /// Gradient steps per feedback round.
    pub steps_per_round: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { eta: 0.005, steps_per_round: 1 }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta {} must be positive", self.eta)));
        }
        if self.steps_per_round == 0 {
            return Err(Error::InvalidConfig("steps_per_round must be at least 1".into()));
        }
        Ok(())
    }
}

/// Labelled vectors observed so far in a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ExampleSet<T> {
    pub positives: Vec<EmbeddingVector<T>>,
    pub negatives: Vec<EmbeddingVector<T>>,
}

impl<T> Default for ExampleSet<T> {
    fn default() -> Self {
        Self { positives: Vec::new(), negatives: Vec::new() }
    }
}

impl<T: Scalar> ExampleSet<T> {
    pub fn new(positives: Vec<EmbeddingVector<T>>, negatives: Vec<EmbeddingVector<T>>) -> Self {
        Self { positives, negatives }
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    pub fn has_pairs(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        self.positives.iter().chain(&self.negatives).try_for_each(|v| v.check_dim(dim))
    }
}

struct Ranked {
    pos: Vec<f64>,
    neg: Vec<f64>,
    pos_sorted: Vec<f64>,
    neg_sorted: Vec<f64>,
}

fn rank<T: Scalar>(w: &EmbeddingVector<T>, ex: &ExampleSet<T>) -> Result<Ranked> {
    ex.check_dim(w.dim())?;
    let score = |v: &EmbeddingVector<T>| dot_slices(w.as_slice(), v.as_slice());
    let pos: Vec<f64> = ex.positives.iter().map(score).collect();
    let neg: Vec<f64> = ex.negatives.iter().map(score).collect();
    let mut pos_sorted = pos.clone();
    let mut neg_sorted = neg.clone();
    pos_sorted.sort_by(f64::total_cmp);
    neg_sorted.sort_by(f64::total_cmp);
    Ok(Ranked { pos, neg, pos_sorted, neg_sorted })
}

impl Ranked {
    /// Negatives scoring at or above `s`.
    fn negatives_at_or_above(&self, s: f64) -> usize {
        self.neg_sorted.len() - self.neg_sorted.partition_point(|&x| x < s)
    }

    /// Positives scoring at or below `s`.
    fn positives_at_or_below(&self, s: f64) -> usize {
        self.pos_sorted.partition_point(|&x| x <= s)
    }
}

/// Per-example update weights: for each positive the number of negatives
/// ranked at or above it, for each negative the number of positives ranked
/// at or below it.
pub fn example_weights<T: Scalar>(w: &EmbeddingVector<T>, ex: &ExampleSet<T>) -> Result<(Vec<usize>, Vec<usize>)> {
    let r = rank(w, ex)?;
    let pos_w = r.pos.iter().map(|&s| r.negatives_at_or_above(s)).collect();
    let neg_w = r.neg.iter().map(|&s| r.positives_at_or_below(s)).collect();
    Ok((pos_w, neg_w))
}

/// Number of (positive, negative) pairs with `w·v ≤ w·v'`.
pub fn inversion_count<T: Scalar>(w: &EmbeddingVector<T>, ex: &ExampleSet<T>) -> Result<usize> {
    let r = rank(w, ex)?;
    Ok(r.pos.iter().map(|&s| r.negatives_at_or_above(s)).sum())
}

/// `Σ relu(w·v' − w·v)` over all (positive, negative) pairs.
pub fn hinge_loss<T: Scalar>(w: &EmbeddingVector<T>, ex: &ExampleSet<T>) -> Result<f64> {
    let r = rank(w, ex)?;
    // suffix[i] = sum of neg_sorted[i..]
    let mut suffix = vec![0.0; r.neg_sorted.len() + 1];
    for i in (0..r.neg_sorted.len()).rev() {
        suffix[i] = suffix[i + 1] + r.neg_sorted[i];
    }
    Ok(r.pos
        .iter()
        .map(|&s| {
            let first = r.neg_sorted.partition_point(|&x| x <= s);
            let above = (r.neg_sorted.len() - first) as f64;
            suffix[first] - above * s
        })
        .sum())
}

/// Subgradient of [`hinge_loss`], counting ties as inversions.
pub fn gradient<T: Scalar>(w: &EmbeddingVector<T>, ex: &ExampleSet<T>) -> Result<Vec<f64>> {
    let (pos_w, neg_w) = example_weights(w, ex)?;
    let mut g = vec![0.0; w.dim()];
    for (v, &c) in ex.negatives.iter().zip(&neg_w) {
        if c > 0 {
            g.iter_mut().zip(v.as_slice()).for_each(|(gi, x)| *gi += c as f64 * x.widen());
        }
    }
    for (v, &c) in ex.positives.iter().zip(&pos_w) {
        if c > 0 {
            g.iter_mut().zip(v.as_slice()).for_each(|(gi, x)| *gi -= c as f64 * x.widen());
        }
    }
    Ok(g)
}

/// Applies `cfg.steps_per_round` gradient steps `w ← w − η∇L`.
///
/// `w` is not renormalized. When no pair is inverted the input is returned
/// bit-for-bit.
pub fn refine_step<T: Scalar>(
    w: &EmbeddingVector<T>,
    ex: &ExampleSet<T>,
    cfg: &RefinementConfig,
) -> Result<EmbeddingVector<T>> {
    cfg.validate()?;
    ex.check_dim(w.dim())?;
    let mut current = w.clone();
    if !ex.has_pairs() {
        return Ok(current);
    }
    for _ in 0..cfg.steps_per_round {
        let (pos_w, neg_w) = example_weights(&current, ex)?;
        if pos_w.iter().all(|&c| c == 0) && neg_w.iter().all(|&c| c == 0) {
            break;
        }
        let g = gradient(&current, ex)?;
        let next: Vec<T> = current
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(&wi, &gi)| T::from_f64_lossy(wi.widen() - cfg.eta * gi))
            .collect();
        current = EmbeddingVector::new(next);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type V = EmbeddingVector<f64>;

    fn v(xs: &[f64]) -> V {
        EmbeddingVector::from_f64(xs)
    }

    // Pairwise transcriptions used as oracles.
    fn pairwise_loss(w: &V, ex: &ExampleSet<f64>) -> f64 {
        let mut total = 0.0;
        for p in &ex.positives {
            for n in &ex.negatives {
                total += (w.dot(n).unwrap() - w.dot(p).unwrap()).max(0.0);
            }
        }
        total
    }

    fn pairwise_inversions(w: &V, ex: &ExampleSet<f64>) -> usize {
        let mut n_inv = 0;
        for p in &ex.positives {
            for n in &ex.negatives {
                if w.dot(p).unwrap() <= w.dot(n).unwrap() {
                    n_inv += 1;
                }
            }
        }
        n_inv
    }

    #[test]
    fn inversion_examples() {
        let w = v(&[1.0, 0.0]);
        assert_eq!(inversion_count(&w, &ExampleSet::new(vec![], vec![v(&[0.0, 1.0])])).unwrap(), 0);
        assert_eq!(inversion_count(&w, &ExampleSet::new(vec![v(&[1.0, 0.0])], vec![])).unwrap(), 0);
        assert_eq!(inversion_count(&w, &ExampleSet::new(vec![v(&[1.0, 0.0])], vec![v(&[0.0, 1.0])])).unwrap(), 0);
        assert_eq!(inversion_count(&w, &ExampleSet::new(vec![v(&[0.0, 1.0])], vec![v(&[1.0, 0.0])])).unwrap(), 1);
        // a tie counts
        assert_eq!(inversion_count(&w, &ExampleSet::new(vec![v(&[0.0, 1.0])], vec![v(&[0.0, -1.0])])).unwrap(), 1);
    }

    #[test]
    fn hinge_examples() {
        let w = v(&[1.0, 0.0]);
        let ordered = ExampleSet::new(vec![v(&[1.0, 0.0])], vec![v(&[0.0, 1.0])]);
        assert_eq!(hinge_loss(&w, &ordered).unwrap(), 0.0);
        let inverted = ExampleSet::new(vec![v(&[0.0, 1.0])], vec![v(&[1.0, 0.0])]);
        assert_eq!(hinge_loss(&w, &inverted).unwrap(), 1.0);
    }

    #[test]
    fn hand_derived_update() {
        let ex = ExampleSet::new(vec![v(&[0.0, 1.0])], vec![v(&[1.0, 0.0])]);
        let out = refine_step(&v(&[1.0, 0.0]), &ex, &RefinementConfig::default()).unwrap();
        assert_eq!(out.as_slice(), &[0.995, 0.005]);

        let ex32 = ExampleSet::new(
            vec![EmbeddingVector::<f32>::new(vec![0.0, 1.0])],
            vec![EmbeddingVector::<f32>::new(vec![1.0, 0.0])],
        );
        let out32 = refine_step(&EmbeddingVector::new(vec![1.0f32, 0.0]), &ex32, &RefinementConfig::default()).unwrap();
        assert_eq!(out32.as_slice(), &[0.995f32, 0.005f32]);
    }

    #[test]
    fn empty_feedback_is_identity() {
        let w = v(&[0.3, -0.2]);
        let cfg = RefinementConfig::default();
        assert_eq!(refine_step(&w, &ExampleSet::default(), &cfg).unwrap(), w);
        assert_eq!(refine_step(&w, &ExampleSet::new(vec![v(&[1.0, 0.0])], vec![]), &cfg).unwrap(), w);
    }

    #[test]
    fn perfectly_ranked_is_identity() {
        let w = v(&[1.0, 0.0]);
        let ex = ExampleSet::new(vec![v(&[0.9, 0.1]), v(&[0.8, 0.6])], vec![v(&[0.1, 0.9]), v(&[-1.0, 0.0])]);
        let out = refine_step(&w, &ex, &RefinementConfig { eta: 0.005, steps_per_round: 3 }).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn buried_positive_gets_more_weight() {
        let w = v(&[1.0, 0.0]);
        // positive a outranks one negative; b sits below both
        let ex = ExampleSet::new(
            vec![v(&[0.5, 0.5]), v(&[-0.5, 0.5])],
            vec![v(&[0.9, 0.0]), v(&[0.0, 1.0])],
        );
        let (pos_w, neg_w) = example_weights(&w, &ex).unwrap();
        assert_eq!(pos_w, vec![1, 2]);
        assert_eq!(neg_w, vec![2, 1]);
        assert!(pos_w[1] > pos_w[0]);
    }

    #[test]
    fn dimension_errors() {
        let ex = ExampleSet::new(vec![v(&[1.0, 0.0, 0.0])], vec![v(&[0.0, 1.0])]);
        assert!(matches!(
            refine_step(&v(&[1.0, 0.0]), &ex, &RefinementConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(RefinementConfig { eta: 0.0, steps_per_round: 1 }.validate().is_err());
        assert!(RefinementConfig { eta: 0.1, steps_per_round: 0 }.validate().is_err());
    }

    fn arb_instance() -> impl Strategy<Value = (V, ExampleSet<f64>)> {
        let vecs = |n: std::ops::Range<usize>| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), n);
        (prop::collection::vec(-1.0f64..1.0, 6), vecs(0..6), vecs(0..8)).prop_map(|(w, p, n)| {
            let norm = |x: Vec<f64>| EmbeddingVector::from_f64(&x).normalize().unwrap_or_else(|_| v(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
            (v(&w), ExampleSet::new(p.into_iter().map(norm).collect(), n.into_iter().map(norm).collect()))
        })
    }

    proptest! {
        #[test]
        fn loss_and_inversions_match_pairwise((w, ex) in arb_instance()) {
            prop_assert!((hinge_loss(&w, &ex).unwrap() - pairwise_loss(&w, &ex)).abs() < 1e-9);
            prop_assert_eq!(inversion_count(&w, &ex).unwrap(), pairwise_inversions(&w, &ex));
        }

        #[test]
        fn small_step_does_not_increase_loss((w, ex) in arb_instance()) {
            let wr = &w;
            let min_gap = ex.positives.iter().flat_map(|p| ex.negatives.iter().map(move |n| (wr.dot(n).unwrap() - wr.dot(p).unwrap()).abs()))
                .fold(f64::INFINITY, f64::min);
            let cfg = RefinementConfig { eta: 1e-4, steps_per_round: 1 };
            // a step that cannot flip any pair stays on one linear piece
            let g_norm = gradient(&w, &ex).unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(min_gap > 2.0 * cfg.eta * g_norm + 1e-12);
            let next = refine_step(&w, &ex, &cfg).unwrap();
            prop_assert!(hinge_loss(&next, &ex).unwrap() <= hinge_loss(&w, &ex).unwrap() + 1e-12);
        }
    }
}
