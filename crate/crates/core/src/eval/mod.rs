//! Offline evaluation: NDCG, the single-vector baseline, synthetic data and
//! the simulated interaction benchmark.

pub mod baseline;
pub mod harness;
pub mod ndcg;
pub mod synth;

pub use baseline::{baseline_image_vector, baseline_storage_vector};
pub use harness::{
    run_benchmark, simulate_search, BenchDatabases, BenchMode, BenchmarkReport, QueryResult, SimulationConfig, Tier,
};
pub use ndcg::ndcg_at_k;
pub use synth::{generate_synthetic, BenchmarkQuery, SynthConfig, SyntheticDataset};
