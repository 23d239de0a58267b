//! Simulated interaction loop and the ablation report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ndcg::ndcg_at_k;
use super::synth::BenchmarkQuery;
use crate::error::{Error, Result};
use crate::model::ImageId;
use crate::rerank::{RerankConfig, ScoringMode};
use crate::session::{FeedbackEvent, SessionConfig, SessionState};
use crate::store::VectorDatabase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// One averaged vector per image.
    Baseline,
    /// Pyramid patches, best raw patch score per image.
    PyramidMax,
    /// Pyramid patches with multiscale averaging.
    Pyramid,
    /// Multiscale averaging plus query refinement from simulated feedback.
    Full,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [BenchMode::Baseline, BenchMode::PyramidMax, BenchMode::Pyramid, BenchMode::Full];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Baseline => "baseline",
            BenchMode::PyramidMax => "pyramid-max",
            BenchMode::Pyramid => "pyramid",
            BenchMode::Full => "full",
        }
    }

    fn scoring(self) -> ScoringMode {
        match self {
            BenchMode::Baseline => ScoringMode::SingleVectorBaseline,
            BenchMode::PyramidMax => ScoringMode::PyramidMax,
            BenchMode::Pyramid | BenchMode::Full => ScoringMode::PyramidMultiscale,
        }
    }

    fn refines(self) -> bool {
        self == BenchMode::Full
    }
}

impl std::str::FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown benchmark mode {s:?}")))
    }
}

/// The two representations a benchmark needs.
#[derive(Clone, Copy, Debug)]
pub struct BenchDatabases<'a> {
    pub pyramid: &'a VectorDatabase,
    /// Single-vector database; required only for [`BenchMode::Baseline`].
    pub baseline: Option<&'a VectorDatabase>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub iterations: usize,
    pub k: usize,
    pub session: SessionConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { iterations: 10, k: 10, session: SessionConfig::default() }
    }
}

impl SimulationConfig {
    pub fn cutoff(&self) -> usize {
        self.iterations * self.k
    }
}

/// Relevant images the query can reach, after its universe restriction.
pub fn reachable_relevant(query: &BenchmarkQuery) -> usize {
    match &query.universe {
        Some(u) => query.relevant_images.intersection(u).count(),
        None => query.relevant_images.len(),
    }
}

/// Runs the simulated search and returns relevance flags in display order.
///
/// Every round shows `k` unseen images. In [`BenchMode::Full`] the simulated
/// user then marks relevant images with their truth boxes and every other
/// shown image as boxless negative; the other modes never send feedback.
pub fn simulate_search(
    dbs: BenchDatabases<'_>,
    query: &BenchmarkQuery,
    mode: BenchMode,
    cfg: &SimulationConfig,
) -> Result<Vec<bool>> {
    let db = match mode {
        BenchMode::Baseline => {
            dbs.baseline.ok_or_else(|| Error::InvalidConfig("baseline mode needs a baseline database".into()))?
        }
        _ => dbs.pyramid,
    };
    let session_cfg = SessionConfig {
        rerank: RerankConfig { k: cfg.k, mode: mode.scoring(), ..cfg.session.rerank },
        ..cfg.session
    };
    let mut session = SessionState::start(db, &query.w_s, session_cfg)?;
    if let Some(universe) = &query.universe {
        let outside: Vec<ImageId> =
            db.images().iter().map(|i| i.image_id).filter(|id| !universe.contains(id)).collect();
        session.hide_images(outside);
    }

    let mut relevance = Vec::with_capacity(cfg.cutoff());
    for _ in 0..cfg.iterations {
        let batch = session.next_batch(db)?;
        if batch.is_empty() {
            break;
        }
        relevance.extend(batch.iter().map(|r| query.relevant_images.contains(&r.image_id)));
        if mode.refines() {
            let events: Vec<FeedbackEvent> = batch
                .iter()
                .map(|r| match query.truth_boxes.get(&r.image_id) {
                    Some(boxes) if query.relevant_images.contains(&r.image_id) => {
                        FeedbackEvent::positive(r.image_id, boxes.clone())
                    }
                    _ => FeedbackEvent::negative(r.image_id),
                })
                .collect();
            session.apply_feedback(db, &events)?;
        }
    }
    Ok(relevance)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Medium, Tier::High];

    /// Buckets a query by its baseline score: below 0.1, up to 0.3, above.
    pub fn of(baseline_ndcg: f64) -> Tier {
        if baseline_ndcg < 0.1 {
            Tier::Low
        } else if baseline_ndcg <= 0.3 {
            Tier::Medium
        } else {
            Tier::High
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub name: String,
    pub relevant: usize,
    /// Present when the baseline mode was run.
    pub tier: Option<Tier>,
    pub ndcg: BTreeMap<BenchMode, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub modes: Vec<BenchMode>,
    pub cutoff: usize,
    /// Sorted by query name.
    pub queries: Vec<QueryResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl BenchmarkReport {
    /// Mean NDCG of `mode` over all queries.
    pub fn mean(&self, mode: BenchMode) -> Option<f64> {
        mean(self.queries.iter().filter_map(|q| q.ndcg.get(&mode).copied()))
    }

    pub fn tier_mean(&self, tier: Tier, mode: BenchMode) -> Option<f64> {
        mean(self.queries.iter().filter(|q| q.tier == Some(tier)).filter_map(|q| q.ndcg.get(&mode).copied()))
    }

    pub fn tier_count(&self, tier: Tier) -> usize {
        self.queries.iter().filter(|q| q.tier == Some(tier)).count()
    }

    /// Plain-text table: one row per mode, columns per tier plus overall,
    /// then ratio rows against the first mode and step deltas between
    /// consecutive modes.
    pub fn to_table(&self) -> String {
        let has_tiers = self.queries.iter().any(|q| q.tier.is_some());
        let mut cols: Vec<(String, Option<Tier>)> = Vec::new();
        if has_tiers {
            for t in Tier::ALL {
                cols.push((format!("{} (n={})", t.name(), self.tier_count(t)), Some(t)));
            }
        }
        cols.push((format!("all (n={})", self.queries.len()), None));
        let cell = |mode: BenchMode, tier: Option<Tier>| match tier {
            Some(t) => self.tier_mean(t, mode),
            None => self.mean(mode),
        };
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));

        let mut out = String::new();
        let _ = write!(out, "{:<22}", format!("NDCG@{}", self.cutoff));
        for (c, _) in &cols {
            let _ = write!(out, " {c:>14}");
        }
        out.push('\n');
        for &m in &self.modes {
            let _ = write!(out, "{:<22}", m.name());
            for &(_, t) in &cols {
                let _ = write!(out, " {:>14}", fmt(cell(m, t)));
            }
            out.push('\n');
        }
        if let Some(&first) = self.modes.first() {
            for &m in &self.modes[1..] {
                let _ = write!(out, "{:<22}", format!("ratio {}/{}", m.name(), first.name()));
                for &(_, t) in &cols {
                    let r = match (cell(m, t), cell(first, t)) {
                        (Some(a), Some(b)) if b > 0.0 => format!("{:.2}x", a / b),
                        _ => "-".to_string(),
                    };
                    let _ = write!(out, " {r:>14}");
                }
                out.push('\n');
            }
            for pair in self.modes.windows(2) {
                let _ = write!(out, "{:<22}", format!("delta +{}", pair[1].name()));
                for &(_, t) in &cols {
                    let d = match (cell(pair[1], t), cell(pair[0], t)) {
                        (Some(a), Some(b)) => format!("{:+.3}", a - b),
                        _ => "-".to_string(),
                    };
                    let _ = write!(out, " {d:>14}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Runs every query under every mode. Queries run in parallel; the report
/// is ordered by query name.
pub fn run_benchmark(
    dbs: BenchDatabases<'_>,
    queries: &[BenchmarkQuery],
    modes: &[BenchMode],
    cfg: &SimulationConfig,
) -> Result<BenchmarkReport> {
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no benchmark modes given".into()));
    }
    let mut names = HashSet::new();
    for q in queries {
        q.validate()?;
        if !names.insert(q.name.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate query name {:?}", q.name)));
        }
    }
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();

    let mut results = queries
        .par_iter()
        .map(|q| {
            let total = reachable_relevant(q);
            let mut ndcg = BTreeMap::new();
            for &m in &modes {
                let rel = simulate_search(dbs, q, m, cfg)?;
                ndcg.insert(m, ndcg_at_k(&rel, total, cfg.cutoff()));
            }
            let tier = ndcg.get(&BenchMode::Baseline).map(|&b| Tier::of(b));
            Ok(QueryResult { name: q.name.clone(), relevant: total, tier, ndcg })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(BenchmarkReport { modes, cutoff: cfg.cutoff(), queries: results })
}
