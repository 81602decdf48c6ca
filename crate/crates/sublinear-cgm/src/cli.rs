//! Command-line front end: dataset generation, index building, solver runs,
//! benchmark comparisons, and bound certification.
//!
//! All commands are deterministic under a fixed seed, and every output file
//! carries the hash of the configuration that produced it. Traces are JSON
//! Lines (header line, one record per iteration, footer line); summaries and
//! benchmark reports are plain JSON. Thread count for any parallel backend
//! is taken from the conventional `RAYON_NUM_THREADS`-style environment of
//! the host; the solvers themselves are sequential by design.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acmdp::{self, Acmdp, SfwpoConfig, SfwpoIterRecord, SfwpoSearch};
use crate::error::{Error, Result};
use crate::fw::{
    self, certify_convergence, ConvergenceCertificate, DistanceObjective, FwConfig, FwIterRecord,
    FwStatus, FwTrace, HerdingConvention, InitPoint, Objective, QuadraticObjective, SearchMode,
    StepRule,
};
use crate::lsh::{HashFamily, HashFamilyConfig};
use crate::maxip::{DxMode, FallbackPolicy, MaxIpIndex, MaxIpParams};
use crate::vecspace::{Dataset, DenseVector, Rng};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Schema document the bench report is validated against.
pub const BENCH_REPORT_SCHEMA: &str = include_str!("../schemas/bench-report.schema.json");

#[derive(Parser, Debug)]
#[command(
    name = "sublinear-cgm",
    about = "Conditional gradient solvers with LSH-backed sublinear direction search",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate datasets and MDP instances.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Build a MaxIP index over a dataset and save it.
    BuildIndex(BuildIndexArgs),
    /// Run a solver from a JSON config.
    #[command(subcommand)]
    Run(RunCommand),
    /// Run the exact and LSH arms on the same instance and compare.
    Bench(BenchArgs),
    /// Check a trace against the convergence bound.
    Certify(CertifyArgs),
}

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// Uniform points on the unit sphere.
    UniformSphere {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniform distractors plus one planted high-inner-product point for a
    /// recorded query.
    PlantedMaxip {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Inner product between the recorded query and the planted point.
        #[arg(long)]
        ip: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic gridworld MDP with eight compass actions.
    Gridworld {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    /// Dataset CSV (one point per row).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub c: f64,
    /// Bits per table; defaults to the suggested value for (c, tau, n).
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of tables; defaults to the suggested value.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value = "srp")]
    pub family: String,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long, default_value = "linear_scan")]
    pub fallback: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum RunCommand {
    Fw {
        #[arg(long)]
        config: PathBuf,
    },
    Herding {
        #[arg(long)]
        config: PathBuf,
    },
    Sfwpo {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    /// Trace JSONL produced by `run fw` / `run herding`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Reference optimum (from a long exact run).
    #[arg(long)]
    pub g_star: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub d_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Check the relaxed (factor 4) adaptive-quantization bound.
    #[arg(long, default_value_t = false)]
    pub adaptive: bool,
    /// Write two-column `t h_t` text for plotting.
    #[arg(long)]
    pub gnuplot: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Run configuration files
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Csv { path: PathBuf },
    Raw { bin: PathBuf, meta: PathBuf },
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Csv { path } => Dataset::from_csv(path),
            DataSpec::Raw { bin, meta } => Dataset::from_raw(bin, meta),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Explicit coordinates.
    Coords { coords: Vec<f64> },
    /// Random hull point of the dataset.
    RandomHull { seed: u64 },
}

impl TargetSpec {
    pub fn resolve(&self, ds: &Dataset) -> Result<DenseVector> {
        match self {
            TargetSpec::Coords { coords } => {
                let v = DenseVector::new(coords.clone())?;
                if v.dim() != ds.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: ds.dim(),
                        got: v.dim(),
                    });
                }
                Ok(v)
            }
            TargetSpec::RandomHull { seed } => {
                Ok(crate::vecspace::random_hull_point(ds, &mut Rng::new(*seed)))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `scale/2 * ||w - target||^2`.
    Distance { target: TargetSpec, scale: f64 },
    /// Random PSD quadratic with spectrum in `[beta_min, beta_max]`.
    RandomQuadratic {
        target: TargetSpec,
        beta_min: f64,
        beta_max: f64,
        seed: u64,
    },
}

impl ObjectiveSpec {
    pub fn build(&self, ds: &Dataset) -> Result<(Box<dyn Objective>, f64)> {
        match self {
            ObjectiveSpec::Distance { target, scale } => {
                let obj = DistanceObjective::new(target.resolve(ds)?, *scale);
                let beta = obj.beta();
                Ok((Box::new(obj), beta))
            }
            ObjectiveSpec::RandomQuadratic {
                target,
                beta_min,
                beta_max,
                seed,
            } => {
                let obj =
                    QuadraticObjective::random(target.resolve(ds)?, *beta_min, *beta_max, *seed)?;
                let beta = obj.beta();
                Ok((Box::new(obj), beta))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRuleSpec {
    #[default]
    ClassicSchedule,
    Fixed {
        eta: f64,
    },
}

impl StepRuleSpec {
    fn to_rule(self) -> StepRule {
        match self {
            StepRuleSpec::ClassicSchedule => StepRule::ClassicSchedule,
            StepRuleSpec::Fixed { eta } => StepRule::Fixed(eta),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    RandomHull,
    RandomVertex,
    Coords {
        coords: Vec<f64>,
    },
}

impl InitSpec {
    fn to_init(&self) -> Result<InitPoint> {
        Ok(match self {
            InitSpec::RandomHull => InitPoint::RandomHull,
            InitSpec::RandomVertex => InitPoint::RandomVertex,
            InitSpec::Coords { coords } => InitPoint::Given(DenseVector::new(coords.clone())?),
        })
    }
}

fn default_family() -> String {
    "srp".into()
}

fn default_fallback() -> String {
    "linear_scan".into()
}

fn default_dx() -> String {
    "per_query".into()
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LshSpec {
    pub tau: f64,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub hash_seed: u64,
    /// `srp` or `rotation`.
    #[serde(default = "default_family")]
    pub family: String,
    /// `linear_scan`, `declare_converged`, or `fail`.
    #[serde(default = "default_fallback")]
    pub fallback: String,
    /// `per_query` or a fixed positive number (as a string is not accepted;
    /// use `dx_fixed`).
    #[serde(default = "default_dx")]
    pub dx: String,
    #[serde(default)]
    pub dx_fixed: Option<f64>,
    /// Load a prebuilt index instead of building.
    #[serde(default)]
    pub index_file: Option<PathBuf>,
}

fn parse_family(name: &str) -> Result<HashFamily> {
    match name {
        "srp" | "signed_random_projection" => Ok(HashFamily::SignedRandomProjection),
        "rotation" | "random_rotation_bucket" => Ok(HashFamily::RandomRotationBucket),
        other => Err(Error::Config(format!("unknown hash family `{other}`"))),
    }
}

fn parse_fallback(name: &str) -> Result<FallbackPolicy> {
    match name {
        "linear_scan" => Ok(FallbackPolicy::LinearScan),
        "declare_converged" => Ok(FallbackPolicy::DeclareConverged),
        "fail" => Ok(FallbackPolicy::Fail),
        other => Err(Error::Config(format!("unknown fallback `{other}`"))),
    }
}

impl LshSpec {
    pub fn build_index(&self, ds: &Dataset, c: f64) -> Result<MaxIpIndex> {
        if let Some(path) = &self.index_file {
            let idx = MaxIpIndex::load(path)?;
            idx.validate_dataset(ds)?;
            return Ok(idx);
        }
        let suggested = HashFamilyConfig::suggested(c, self.tau, ds.len(), self.hash_seed)?;
        let hash = HashFamilyConfig {
            family: parse_family(&self.family)?,
            bits_per_table: self.k.unwrap_or(suggested.bits_per_table),
            num_tables: self.l.unwrap_or(suggested.num_tables),
            repetitions: self.repetitions,
            seed: self.hash_seed,
        };
        let mut params = MaxIpParams::new(self.tau, c, hash);
        params.fallback = parse_fallback(&self.fallback)?;
        params.dx = match (self.dx.as_str(), self.dx_fixed) {
            ("per_query", None) => DxMode::PerQuery,
            ("fixed", Some(v)) => DxMode::Fixed(v),
            ("per_query", Some(_)) => {
                return Err(Error::Config("dx_fixed set but dx is per_query".into()))
            }
            ("fixed", None) => return Err(Error::Config("dx=fixed requires dx_fixed".into())),
            (other, _) => return Err(Error::Config(format!("unknown dx mode `{other}`"))),
        };
        MaxIpIndex::build(ds, params)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchSpec {
    Exact,
    Lsh(LshSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwRunConfig {
    pub data: DataSpec,
    pub objective: ObjectiveSpec,
    pub epsilon: f64,
    pub c: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub step_rule: StepRuleSpec,
    pub search: SearchSpec,
    #[serde(default)]
    pub adaptive_lambda: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub early_stop_gap: bool,
    #[serde(default)]
    pub audit: bool,
    pub out_trace: PathBuf,
    pub out_summary: PathBuf,
}

impl FwRunConfig {
    fn to_fw_config(&self, ds: &Dataset) -> Result<FwConfig> {
        let search = match &self.search {
            SearchSpec::Exact => SearchMode::Exact,
            SearchSpec::Lsh(spec) => SearchMode::Lsh(spec.build_index(ds, self.c)?),
        };
        Ok(FwConfig {
            epsilon: self.epsilon,
            c: self.c,
            max_iters: self.max_iters,
            step_rule: self.step_rule.to_rule(),
            search,
            adaptive_quantization: self.adaptive_lambda,
            seed: self.seed,
            init: self.init.to_init()?,
            early_stop_gap: self.early_stop_gap,
            audit: self.audit,
            flip_direction: false,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HerdingRunConfig {
    pub data: DataSpec,
    /// Mean embedding; `random_hull` draws convex weights, which keeps it
    /// inside the feature hull.
    pub mu: TargetSpec,
    pub epsilon: f64,
    pub c: f64,
    pub max_iters: usize,
    pub search: SearchSpec,
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub audit: bool,
    /// `gradient_argmin` (default) or `flipped_argmax` (comparison mode).
    #[serde(default)]
    pub convention: Option<String>,
    pub out_trace: PathBuf,
    pub out_summary: PathBuf,
    #[serde(default)]
    pub out_samples: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SfwpoSearchSpec {
    Exact,
    Lsh {
        k: usize,
        l: usize,
        #[serde(default)]
        hash_seed: u64,
        #[serde(default = "default_fallback")]
        fallback: String,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfwpoRunConfig {
    pub mdp: PathBuf,
    pub iters: usize,
    pub c: f64,
    pub tau: f64,
    pub search: SfwpoSearchSpec,
    pub seed: u64,
    #[serde(default)]
    pub audit: bool,
    #[serde(default)]
    pub l_smooth: Option<f64>,
    #[serde(default)]
    pub mu_min: Option<f64>,
    pub out_trace: PathBuf,
    pub out_summary: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataSpec,
    pub objective: ObjectiveSpec,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
    /// Second arm; `null` degenerates the comparison to exact-vs-exact.
    #[serde(default)]
    pub lsh: Option<LshSpec>,
    /// Approximation factor of the LSH arm (1.0 when the second arm is
    /// exact).
    pub c: f64,
    /// Known optimum; when absent a reference exact run of
    /// `ref_multiplier * max_iters` iterations estimates it.
    #[serde(default)]
    pub g_star: Option<f64>,
    #[serde(default = "default_ref_multiplier")]
    pub ref_multiplier: usize,
    #[serde(default)]
    pub audit: bool,
    pub out_report: PathBuf,
    #[serde(default)]
    pub out_trace_exact: Option<PathBuf>,
    #[serde(default)]
    pub out_trace_lsh: Option<PathBuf>,
}

fn default_ref_multiplier() -> usize {
    10
}

/// Benchmark comparison between the exact and LSH arms; serialized as the
/// report JSON and validated against [`BENCH_REPORT_SCHEMA`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub g_star: f64,
    pub iterations_exact: Option<usize>,
    pub iterations_lsh: Option<usize>,
    pub iteration_inflation: Option<f64>,
    pub mean_candidates_exact: f64,
    pub mean_candidates_lsh: f64,
    pub candidates_fraction_lsh: f64,
    pub fallback_fraction_lsh: f64,
    pub direction_nanos_exact: u64,
    pub direction_nanos_lsh: u64,
    pub direction_speedup: f64,
    pub status_exact: FwStatus,
    pub status_lsh: FwStatus,
    pub certification_exact: ConvergenceCertificate,
    pub certification_lsh: ConvergenceCertificate,
    pub empirical_c_min: Option<f64>,
}

// ---------------------------------------------------------------------------
// Trace I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    schema_version: u32,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct TraceFooter {
    status: FwStatus,
    /// `null` when the run aborted on a non-finite value (JSON has no NaN).
    final_objective: Option<f64>,
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn write_fw_trace(path: &Path, config_hash: &str, trace: &FwTrace) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = TraceHeader {
        kind: "fw_trace".into(),
        schema_version: TRACE_SCHEMA_VERSION,
        config_hash: config_hash.into(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for r in &trace.records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    let footer = TraceFooter {
        status: trace.status,
        final_objective: finite_or_none(trace.final_objective),
    };
    writeln!(out, "{}", serde_json::to_string(&footer)?)?;
    out.flush()?;
    Ok(())
}

pub fn read_fw_trace(path: &Path) -> Result<(FwTrace, String)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: TraceHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Config("empty trace file".into()))?,
    )?;
    if header.kind != "fw_trace" || header.schema_version != TRACE_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported trace header: kind={} version={}",
            header.kind, header.schema_version
        )));
    }
    let body: Vec<&str> = lines.collect();
    let (footer_line, record_lines) = body
        .split_last()
        .ok_or_else(|| Error::Config("trace missing footer".into()))?;
    let records: Vec<FwIterRecord> = record_lines
        .iter()
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<_>>()?;
    let footer: TraceFooter = serde_json::from_str(footer_line)?;
    Ok((
        FwTrace {
            records,
            status: footer.status,
            final_objective: footer.final_objective.unwrap_or(f64::NAN),
        },
        header.config_hash,
    ))
}

fn write_sfwpo_trace(
    path: &Path,
    config_hash: &str,
    records: &[SfwpoIterRecord],
    final_j: f64,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = TraceHeader {
        kind: "sfwpo_trace".into(),
        schema_version: TRACE_SCHEMA_VERSION,
        config_hash: config_hash.into(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    writeln!(out, "{}", serde_json::json!({ "final_j": final_j }))?;
    out.flush()?;
    Ok(())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(hash_bytes(&std::fs::read(path)?))
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(cmd) => cmd_gen(cmd),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Run(cmd) => match cmd {
            RunCommand::Fw { config } => cmd_run_fw(&config),
            RunCommand::Herding { config } => cmd_run_herding(&config),
            RunCommand::Sfwpo { config } => cmd_run_sfwpo(&config),
        },
        Command::Bench(args) => cmd_bench(&args.config),
        Command::Certify(args) => cmd_certify(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

pub fn cmd_gen(cmd: GenCommand) -> Result<()> {
    match cmd {
        GenCommand::UniformSphere { n, d, seed, out } => {
            if n == 0 {
                return Err(Error::param("n", "n must be >= 1"));
            }
            if d == 0 {
                return Err(Error::param("d", "d must be >= 1"));
            }
            ensure_dir(&out)?;
            let mut rng = Rng::new(seed);
            let ds = Dataset::new((0..n).map(|_| rng.unit_vector(d)).collect())?;
            let csv = out.join("dataset.csv");
            ds.to_csv(&csv)?;
            let manifest = serde_json::json!({
                "kind": "uniform_sphere",
                "n": n,
                "d": d,
                "seed": seed,
                "files": { "dataset": "dataset.csv" },
                "config_hash": hash_bytes(format!("uniform_sphere n={n} d={d} seed={seed}").as_bytes()),
            });
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!("wrote {} points to {}", n, csv.display());
            Ok(())
        }
        GenCommand::PlantedMaxip {
            n,
            d,
            ip,
            seed,
            out,
        } => {
            if n < 2 {
                return Err(Error::param("n", "n must be >= 2"));
            }
            if !(0.0 < ip && ip < 1.0) {
                return Err(Error::param("ip", "planted inner product must be in (0,1)"));
            }
            ensure_dir(&out)?;
            let mut rng = Rng::new(seed);
            let query = rng.unit_vector(d);
            let mut points: Vec<DenseVector> = (0..n - 1).map(|_| rng.unit_vector(d)).collect();
            // Planted point: ip * query + sqrt(1 - ip^2) * orthogonal unit.
            let planted = loop {
                let noise = rng.unit_vector(d);
                let orth = noise.sub(&query.scale(noise.dot(&query)));
                if orth.norm() > 1e-9 {
                    break query
                        .scale(ip)
                        .add(&orth.scale((1.0 - ip * ip).sqrt() / orth.norm()));
                }
            };
            let planted_index = rng.next_index(n);
            points.insert(planted_index, planted);
            let ds = Dataset::new(points)?;
            let csv = out.join("dataset.csv");
            ds.to_csv(&csv)?;
            let manifest = serde_json::json!({
                "kind": "planted_maxip",
                "n": n,
                "d": d,
                "ip": ip,
                "seed": seed,
                "planted_index": planted_index,
                "query": query.as_slice(),
                "files": { "dataset": "dataset.csv" },
                "config_hash": hash_bytes(format!("planted_maxip n={n} d={d} ip={ip} seed={seed}").as_bytes()),
            });
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "wrote {} points (planted index {}) to {}",
                n,
                planted_index,
                csv.display()
            );
            Ok(())
        }
        GenCommand::Gridworld {
            rows,
            cols,
            gamma,
            out,
        } => {
            ensure_dir(&out)?;
            let mdp = acmdp::gridworld(rows, cols, gamma)?;
            let path = out.join("mdp.json");
            mdp.to_json(&path)?;
            let manifest = serde_json::json!({
                "kind": "gridworld",
                "rows": rows,
                "cols": cols,
                "gamma": gamma,
                "files": { "mdp": "mdp.json" },
                "config_hash": hash_bytes(format!("gridworld rows={rows} cols={cols} gamma={gamma}").as_bytes()),
            });
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "wrote {}-state gridworld to {}",
                mdp.num_states(),
                path.display()
            );
            Ok(())
        }
    }
}

pub fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    let ds = Dataset::from_csv(&args.data)?;
    let spec = LshSpec {
        tau: args.tau,
        k: args.k,
        l: args.l,
        repetitions: args.repetitions,
        hash_seed: args.hash_seed,
        family: args.family.clone(),
        fallback: args.fallback.clone(),
        dx: "per_query".into(),
        dx_fixed: None,
        index_file: None,
    };
    let idx = spec.build_index(&ds, args.c)?;
    idx.save(&args.out)?;
    let rho = crate::lsh::theoretical_rho(args.c, args.tau)?;
    println!(
        "indexed n={} d={} with K={} L={} repetitions={} (theoretical rho = {rho:.4}) -> {}",
        ds.len(),
        ds.dim(),
        idx.hash_config().bits_per_table,
        idx.hash_config().num_tables,
        idx.hash_config().repetitions,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FwSummary<'a> {
    kind: &'a str,
    schema_version: u32,
    config_hash: &'a str,
    n: usize,
    dim: usize,
    iterations: usize,
    status: FwStatus,
    final_objective: Option<f64>,
    final_gap_estimate: Option<f64>,
    mean_candidates_touched: f64,
    fallback_fraction: f64,
    empirical_c_min: Option<f64>,
    wall_nanos: u64,
}

fn write_fw_outputs(
    cfg_hash: &str,
    ds: &Dataset,
    trace: &FwTrace,
    wall_nanos: u64,
    out_trace: &Path,
    out_summary: &Path,
) -> Result<()> {
    write_fw_trace(out_trace, cfg_hash, trace)?;
    let summary = FwSummary {
        kind: "fw_summary",
        schema_version: TRACE_SCHEMA_VERSION,
        config_hash: cfg_hash,
        n: ds.len(),
        dim: ds.dim(),
        iterations: trace.records.len(),
        status: trace.status,
        final_objective: finite_or_none(trace.final_objective),
        final_gap_estimate: trace.records.last().map(|r| r.gap_estimate),
        mean_candidates_touched: trace.mean_candidates_touched(),
        fallback_fraction: trace.fallback_fraction(),
        empirical_c_min: trace.empirical_c_min(),
        wall_nanos,
    };
    std::fs::write(out_summary, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn cmd_run_fw(config_path: &Path) -> Result<()> {
    let cfg_hash = hash_file(config_path)?;
    let cfg: FwRunConfig = serde_json::from_reader(std::fs::File::open(config_path)?)?;
    let ds = cfg.data.load()?;
    let (obj, _) = cfg.objective.build(&ds)?;
    let fw_cfg = cfg.to_fw_config(&ds)?;
    let started = std::time::Instant::now();
    let run = fw::frank_wolfe(&ds, obj.as_ref(), fw_cfg)?;
    let wall = started.elapsed().as_nanos() as u64;
    write_fw_outputs(
        &cfg_hash,
        &ds,
        &run.trace,
        wall,
        &cfg.out_trace,
        &cfg.out_summary,
    )?;
    println!(
        "fw: {} iterations, status {:?}, final objective {:.6e}",
        run.trace.records.len(),
        run.trace.status,
        run.trace.final_objective
    );
    Ok(())
}

pub fn cmd_run_herding(config_path: &Path) -> Result<()> {
    let cfg_hash = hash_file(config_path)?;
    let cfg: HerdingRunConfig = serde_json::from_reader(std::fs::File::open(config_path)?)?;
    let ds = cfg.data.load()?;
    let mu = cfg.mu.resolve(&ds)?;
    let convention = match cfg.convention.as_deref() {
        None | Some("gradient_argmin") => HerdingConvention::GradientArgmin,
        Some("flipped_argmax") => HerdingConvention::FlippedArgmax,
        Some(other) => return Err(Error::Config(format!("unknown convention `{other}`"))),
    };
    let search = match &cfg.search {
        SearchSpec::Exact => SearchMode::Exact,
        SearchSpec::Lsh(spec) => SearchMode::Lsh(spec.build_index(&ds, cfg.c)?),
    };
    let fw_cfg = FwConfig {
        epsilon: cfg.epsilon,
        c: cfg.c,
        max_iters: cfg.max_iters,
        step_rule: StepRule::ClassicSchedule,
        search,
        adaptive_quantization: None,
        seed: cfg.seed,
        init: cfg.init.to_init()?,
        early_stop_gap: false,
        audit: cfg.audit,
        flip_direction: false,
    };
    let started = std::time::Instant::now();
    let run = fw::herding(&ds, &mu, fw_cfg, convention)?;
    let wall = started.elapsed().as_nanos() as u64;
    write_fw_outputs(
        &cfg_hash,
        &ds,
        &run.trace,
        wall,
        &cfg.out_trace,
        &cfg.out_summary,
    )?;
    if let Some(path) = &cfg.out_samples {
        std::fs::write(path, serde_json::to_string(&run.samples)?)?;
    }
    println!(
        "herding: {} samples, final 0.5||w - mu||^2 = {:.6e}",
        run.samples.len(),
        run.trace.final_objective
    );
    Ok(())
}

pub fn cmd_run_sfwpo(config_path: &Path) -> Result<()> {
    let cfg_hash = hash_file(config_path)?;
    let cfg: SfwpoRunConfig = serde_json::from_reader(std::fs::File::open(config_path)?)?;
    let mdp = Acmdp::from_json(&cfg.mdp)?;
    let search = match &cfg.search {
        SfwpoSearchSpec::Exact => SfwpoSearch::Exact,
        SfwpoSearchSpec::Lsh {
            k,
            l,
            hash_seed,
            fallback,
        } => SfwpoSearch::Lsh {
            hash: HashFamilyConfig::new(*k, *l, *hash_seed),
            fallback: parse_fallback(fallback)?,
        },
    };
    let run_cfg = SfwpoConfig {
        iters: cfg.iters,
        c: cfg.c,
        tau: cfg.tau,
        search,
        seed: cfg.seed,
        audit: cfg.audit,
        l_smooth_override: cfg.l_smooth,
        mu_min_override: cfg.mu_min,
        init: None,
    };
    let started = std::time::Instant::now();
    let run = acmdp::sfwpo(&mdp, &run_cfg)?;
    let wall = started.elapsed().as_nanos() as u64;
    let final_j = run.trace.last().map_or(0.0, |r| r.j_mu);
    write_sfwpo_trace(&cfg.out_trace, &cfg_hash, &run.trace, final_j)?;
    let final_gap = run.trace.last().map(SfwpoIterRecord::average_gap);
    let summary = serde_json::json!({
        "kind": "sfwpo_summary",
        "schema_version": TRACE_SCHEMA_VERSION,
        "config_hash": cfg_hash,
        "states": mdp.num_states(),
        "actions_per_state": mdp.num_actions(),
        "iterations": run.trace.len(),
        "final_j": final_j,
        "final_average_gap": final_gap,
        "l_smooth": run.l_smooth,
        "d_max": run.d_max,
        "mu_min": run.mu_min,
        "policy": run.policy,
        "wall_nanos": wall,
    });
    std::fs::write(&cfg.out_summary, serde_json::to_string_pretty(&summary)?)?;
    println!(
        "sfwpo: {} iterations, final J = {:.6}, final average gap = {:.3e}",
        run.trace.len(),
        final_j,
        final_gap.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Validates a bench report value against the published JSON schema
/// (required keys and primitive types).
pub fn validate_bench_report(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(BENCH_REPORT_SCHEMA)?;
    let required = schema["required"]
        .as_array()
        .ok_or_else(|| Error::Config("schema missing required list".into()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("report is not an object".into()))?;
    for key in required {
        let key = key.as_str().unwrap_or_default();
        if !obj.contains_key(key) {
            return Err(Error::Config(format!(
                "report missing required key `{key}`"
            )));
        }
    }
    if let Some(props) = schema["properties"].as_object() {
        for (key, spec) in props {
            let Some(val) = obj.get(key) else { continue };
            let Some(ty) = spec["type"].as_str() else {
                continue;
            };
            let ok = match ty {
                "integer" => val.is_i64() || val.is_u64(),
                "number" => val.is_number(),
                "string" => val.is_string(),
                "boolean" => val.is_boolean(),
                "object" => val.is_object(),
                "array" => val.is_array(),
                _ => true,
            };
            // Nullable fields are encoded as ["type", "null"] in the schema.
            let nullable = spec["type"].is_array();
            if !ok && !(nullable || val.is_null()) {
                return Err(Error::Config(format!(
                    "report key `{key}` has wrong type (expected {ty})"
                )));
            }
        }
    }
    Ok(())
}

pub fn cmd_bench(config_path: &Path) -> Result<()> {
    let cfg_hash = hash_file(config_path)?;
    let cfg: BenchConfig = serde_json::from_reader(std::fs::File::open(config_path)?)?;
    let ds = cfg.data.load()?;
    let (obj, beta) = cfg.objective.build(&ds)?;

    // Reference optimum.
    let g_star = match cfg.g_star {
        Some(v) => v,
        None => {
            let mut ref_cfg =
                FwConfig::exact(cfg.epsilon, cfg.max_iters * cfg.ref_multiplier, cfg.seed);
            ref_cfg.init = cfg.init.to_init()?;
            fw::frank_wolfe(&ds, obj.as_ref(), ref_cfg)?
                .trace
                .final_objective
        }
    };

    // Exact arm.
    let mut exact_cfg = FwConfig::exact(cfg.epsilon, cfg.max_iters, cfg.seed);
    exact_cfg.init = cfg.init.to_init()?;
    let exact_run = fw::frank_wolfe(&ds, obj.as_ref(), exact_cfg)?;

    // Second arm on the identical instance.
    let (arm_b_search, arm_b_c) = match &cfg.lsh {
        Some(spec) => (SearchMode::Lsh(spec.build_index(&ds, cfg.c)?), cfg.c),
        None => (SearchMode::Exact, 1.0),
    };
    let lsh_cfg = FwConfig {
        epsilon: cfg.epsilon,
        c: arm_b_c,
        max_iters: cfg.max_iters,
        step_rule: StepRule::ClassicSchedule,
        search: arm_b_search,
        adaptive_quantization: None,
        seed: cfg.seed,
        init: cfg.init.to_init()?,
        early_stop_gap: false,
        audit: cfg.audit,
        flip_direction: false,
    };
    let lsh_run = fw::frank_wolfe(&ds, obj.as_ref(), lsh_cfg)?;

    let d_max = ds.max_diameter();
    let iterations_exact = exact_run.trace.first_iteration_below(g_star, cfg.epsilon);
    let iterations_lsh = lsh_run.trace.first_iteration_below(g_star, cfg.epsilon);
    let dir_exact: u128 = exact_run.trace.records.iter().map(|r| r.dir_nanos).sum();
    let dir_lsh: u128 = lsh_run.trace.records.iter().map(|r| r.dir_nanos).sum();
    let empirical_c_min = lsh_run.trace.empirical_c_min();
    let cert_c_lsh = empirical_c_min.unwrap_or(arm_b_c).clamp(1e-6, 1.0);

    let report = BenchReport {
        schema_version: 1,
        config_hash: cfg_hash.clone(),
        n: ds.len(),
        dim: ds.dim(),
        epsilon: cfg.epsilon,
        g_star,
        iterations_exact,
        iterations_lsh,
        iteration_inflation: match (iterations_exact, iterations_lsh) {
            (Some(a), Some(b)) if a > 0 => Some(b as f64 / a as f64),
            _ => None,
        },
        mean_candidates_exact: ds.len() as f64,
        mean_candidates_lsh: lsh_run.trace.mean_candidates_touched(),
        candidates_fraction_lsh: lsh_run.trace.mean_candidates_touched() / ds.len() as f64,
        fallback_fraction_lsh: lsh_run.trace.fallback_fraction(),
        direction_nanos_exact: dir_exact as u64,
        direction_nanos_lsh: dir_lsh as u64,
        direction_speedup: if dir_lsh > 0 {
            dir_exact as f64 / dir_lsh as f64
        } else {
            f64::INFINITY
        },
        status_exact: exact_run.trace.status,
        status_lsh: lsh_run.trace.status,
        certification_exact: certify_convergence(&exact_run.trace, g_star, beta, d_max, 1.0, false),
        certification_lsh: certify_convergence(
            &lsh_run.trace,
            g_star,
            beta,
            d_max,
            cert_c_lsh,
            false,
        ),
        empirical_c_min,
    };
    let value = serde_json::to_value(&report)?;
    validate_bench_report(&value)?;
    std::fs::write(&cfg.out_report, serde_json::to_string_pretty(&value)?)?;

    if let Some(path) = &cfg.out_trace_exact {
        write_fw_trace(path, &cfg_hash, &exact_run.trace)?;
    }
    if let Some(path) = &cfg.out_trace_lsh {
        write_fw_trace(path, &cfg_hash, &lsh_run.trace)?;
    }
    println!(
        "bench: exact {:?} iters vs lsh {:?} iters to eps={}, lsh candidates/iter = {:.1} ({:.3} of n)",
        iterations_exact,
        iterations_lsh,
        cfg.epsilon,
        report.mean_candidates_lsh,
        report.candidates_fraction_lsh,
    );
    Ok(())
}

pub fn cmd_certify(args: CertifyArgs) -> Result<()> {
    let (trace, _) = read_fw_trace(&args.trace)?;
    let cert = certify_convergence(
        &trace,
        args.g_star,
        args.beta,
        args.d_max,
        args.c,
        args.adaptive,
    );
    if let Some(path) = &args.gnuplot {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &trace.records {
            writeln!(out, "{} {}", r.t, r.objective - args.g_star)?;
        }
        out.flush()?;
    }
    match &cert.first_violation {
        None => {
            println!(
                "PASS: {} bounds checked (factor {})",
                cert.checked, cert.factor
            );
            Ok(())
        }
        Some(v) => {
            println!(
                "FAIL: h_{} = {:.6e} exceeds bound {:.6e} (factor {})",
                v.t, v.h, v.bound, cert.factor
            );
            Err(Error::Config(format!(
                "convergence bound violated at t = {}",
                v.t
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_parses_and_report_validates() {
        let report = BenchReport {
            schema_version: 1,
            config_hash: "abc".into(),
            n: 10,
            dim: 3,
            epsilon: 0.01,
            g_star: 0.0,
            iterations_exact: Some(5),
            iterations_lsh: Some(7),
            iteration_inflation: Some(1.4),
            mean_candidates_exact: 10.0,
            mean_candidates_lsh: 3.0,
            candidates_fraction_lsh: 0.3,
            fallback_fraction_lsh: 0.0,
            direction_nanos_exact: 100,
            direction_nanos_lsh: 50,
            direction_speedup: 2.0,
            status_exact: FwStatus::CompletedMaxIters,
            status_lsh: FwStatus::CompletedMaxIters,
            certification_exact: certify_convergence(
                &FwTrace {
                    records: vec![],
                    status: FwStatus::CompletedMaxIters,
                    final_objective: 0.0,
                },
                0.0,
                1.0,
                1.0,
                1.0,
                false,
            ),
            certification_lsh: certify_convergence(
                &FwTrace {
                    records: vec![],
                    status: FwStatus::CompletedMaxIters,
                    final_objective: 0.0,
                },
                0.0,
                1.0,
                1.0,
                1.0,
                false,
            ),
            empirical_c_min: None,
        };
        let value = serde_json::to_value(&report).unwrap();
        validate_bench_report(&value).unwrap();

        let mut broken = value.clone();
        broken.as_object_mut().unwrap().remove("g_star");
        assert!(validate_bench_report(&broken).is_err());
    }
}
