//! Binary-relevance NDCG.

/// `DCG / IDCG` at cutoff `k` for 0/1 relevance in rank order.
///
/// `DCG = Σ rel_i / log2(i + 1)` over 1-based ranks; the ideal ranking
/// places `min(total_relevant, k)` relevant items first. Zero relevant items
/// in the database scores 0.
pub fn ndcg_at_k(relevance: &[bool], total_relevant: usize, k: usize) -> f64 {
    let ideal_hits = total_relevant.min(k);
    if ideal_hits == 0 {
        return 0.0;
    }
    let discount = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = relevance.iter().take(k).enumerate().filter(|(_, &r)| r).map(|(i, _)| discount(i)).sum();
    let idcg: f64 = (0..ideal_hits).map(discount).sum();
    (dcg / idcg).clamp(0.0, 1.0)
}
