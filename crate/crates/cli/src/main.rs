use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use patchscope_core::eval::{
    generate_synthetic, run_benchmark, BenchDatabases, BenchMode, BenchmarkQuery, SimulationConfig, SynthConfig,
};
use patchscope_core::store::{ingest, IvfConfig, IvfIndex};
use patchscope_core::{PatchSearch, PyramidSpec, ScoringMode, SessionConfig, VectorDatabase};
use patchscope_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "patchscope", version, about = "Interactive multi-scale image search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct SpecArgs {
    /// Tile side in level pixels.
    #[arg(long, default_value_t = 224)]
    tile: u32,
    /// Tile stride in level pixels; half the tile when omitted.
    #[arg(long)]
    stride: Option<u32>,
    /// Per-level downscale factor.
    #[arg(long, default_value_t = 0.5)]
    downscale: f64,
}

impl SpecArgs {
    fn spec(self) -> Result<PyramidSpec> {
        let spec = PyramidSpec::new(self.downscale, self.tile)?;
        Ok(match self.stride {
            Some(s) => spec.with_stride(s)?,
            None => spec,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a database directory from a vectors file and a metadata file.
    Ingest {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Print a summary of a database directory.
    Inspect { db: PathBuf },
    /// Generate a synthetic benchmark: pyramid and baseline databases plus
    /// queries.json.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1500)]
        images: usize,
        #[arg(long, default_value_t = 32)]
        concepts: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        rare_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulated interaction benchmark.
    Bench {
        #[arg(long)]
        db: PathBuf,
        /// Single-vector database, needed for the baseline mode.
        #[arg(long)]
        baseline_db: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        /// Comma-separated: baseline, pyramid-max, pyramid, full.
        #[arg(long, value_delimiter = ',', default_value = "baseline,pyramid,full")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, env = "PATCHSCOPE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "PATCHSCOPE_HOST", default_value = "127.0.0.1")]
        host: IpAddr,
        /// Base URL of the text-embedding bridge.
        #[arg(long, env = "PATCHSCOPE_BRIDGE_URL")]
        bridge_url: Option<String>,
        /// Idle seconds before a session is dropped.
        #[arg(long, env = "PATCHSCOPE_SESSION_TIMEOUT", default_value_t = 3600)]
        session_timeout: u64,
        /// Default scoring mode for new sessions.
        #[arg(long, default_value = "pyramid")]
        mode: String,
        /// Use an approximate inverted-file index with this many lists
        /// instead of the exact scan.
        #[arg(long)]
        ivf_lists: Option<usize>,
        /// Lists scanned per query.
        #[arg(long, default_value_t = 48)]
        ivf_probes: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { vectors, meta, out, spec } => {
            let t = Instant::now();
            let db = VectorDatabase::ingest_files(&vectors, &meta, &spec.spec()?)?;
            db.save(&out)?;
            println!(
                "ingested {} images, {} patches (d={}) into {} in {:.1?}",
                db.image_count(),
                db.patch_count(),
                db.dim(),
                out.display(),
                t.elapsed()
            );
        }
        Command::Inspect { db } => inspect(&db)?,
        Command::Synth { seed, images, concepts, dim, rare_fraction, out } => {
            let mut cfg = SynthConfig { seed, n_images: images, n_concepts: concepts, dim, ..SynthConfig::default() };
            if let Some(r) = rare_fraction {
                cfg.rare_fraction = r;
            }
            synth(&cfg, &out)?;
        }
        Command::Bench { db, baseline_db, queries, modes, iterations, k, out } => {
            let modes = modes.iter().map(|m| m.parse::<BenchMode>()).collect::<Result<Vec<_>, _>>()?;
            bench(&db, baseline_db.as_deref(), &queries, &modes, iterations, k, out.as_deref())?;
        }
        Command::Serve { db, port, host, bridge_url, session_timeout, mode, ivf_lists, ivf_probes } => {
            let db = Arc::new(VectorDatabase::load(&db).with_context(|| format!("loading {}", db.display()))?);
            let mut session = SessionConfig::default();
            session.rerank.mode = mode.parse::<ScoringMode>()?;
            let search: Arc<dyn PatchSearch> = match ivf_lists {
                Some(lists) => {
                    let t = Instant::now();
                    let index = IvfIndex::build(&db, IvfConfig { lists, probes: ivf_probes, ..IvfConfig::default() })?;
                    log::info!("built {lists}-list index in {:.1?}", t.elapsed());
                    Arc::new(index)
                }
                None => Arc::new(patchscope_core::ExactScan),
            };
            let config = ServiceConfig {
                idle_timeout: Duration::from_secs(session_timeout),
                session,
                bridge_url,
                ..ServiceConfig::default()
            };
            let state = Arc::new(AppState::with_search(db, search, config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(patchscope_service::serve(state, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}

fn inspect(dir: &Path) -> Result<()> {
    let db = VectorDatabase::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    let mut per_level: BTreeMap<u32, usize> = BTreeMap::new();
    for p in db.patches() {
        *per_level.entry(p.level).or_default() += 1;
    }
    println!("dim: {}", db.dim());
    println!("images: {}", db.image_count());
    println!("patches: {}", db.patch_count());
    for (level, n) in per_level {
        println!("  level {level}: {n}");
    }
    Ok(())
}

fn synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let t = Instant::now();
    let data = generate_synthetic(cfg)?;
    let pyramid = ingest(data.pyramid, &cfg.spec)?;
    let baseline = ingest(data.baseline, &cfg.spec)?;
    pyramid.save(&out.join("pyramid"))?;
    baseline.save(&out.join("baseline"))?;
    let queries = out.join("queries.json");
    fs::write(&queries, serde_json::to_string_pretty(&data.queries)?)
        .with_context(|| format!("writing {}", queries.display()))?;
    println!(
        "wrote {} images ({} patches), {} queries to {} in {:.1?}",
        pyramid.image_count(),
        pyramid.patch_count(),
        data.queries.len(),
        out.display(),
        t.elapsed()
    );
    Ok(())
}

fn bench(
    db: &Path,
    baseline_db: Option<&Path>,
    queries: &Path,
    modes: &[BenchMode],
    iterations: usize,
    k: usize,
    out: Option<&Path>,
) -> Result<()> {
    if modes.contains(&BenchMode::Baseline) && baseline_db.is_none() {
        bail!("the baseline mode needs --baseline-db");
    }
    let pyramid = VectorDatabase::load(db).with_context(|| format!("loading {}", db.display()))?;
    let baseline = match baseline_db {
        Some(p) => Some(VectorDatabase::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let text = fs::read_to_string(queries).with_context(|| format!("reading {}", queries.display()))?;
    let queries: Vec<BenchmarkQuery> = serde_json::from_str(&text).context("parsing queries")?;
    let cfg = SimulationConfig { iterations, k, ..SimulationConfig::default() };
    let t = Instant::now();
    let report =
        run_benchmark(BenchDatabases { pyramid: &pyramid, baseline: baseline.as_ref() }, &queries, modes, &cfg)?;
    print!("{}", report.to_table());
    log::info!("{} queries x {} modes in {:.1?}", queries.len(), report.modes.len(), t.elapsed());
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
