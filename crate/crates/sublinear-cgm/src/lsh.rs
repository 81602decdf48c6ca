//! Multi-table locality-sensitive hashing over unit vectors.
//!
//! The index answers approximate nearest neighbor queries on the sphere and
//! is the engine beneath the MaxIP reduction in [`crate::maxip`]. Two hash
//! families are provided:
//!
//! * signed random projections (default): each of the `K` bits per table is
//!   the sign of a Gaussian hyperplane projection;
//! * random-rotation bucketing: each table concatenates a few codes of the
//!   form `argmax_i |(Rv)_i|` plus sign for independent random rotations `R`.
//!
//! Retrieval quality is measured empirically (recall harnesses live in the
//! tests); [`theoretical_rho`] reports the closed-form query exponent for a
//! `(c, tau)` operating point and is used only for parameter suggestion and
//! reporting.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecspace::{DenseVector, Rng};

const MAGIC: &[u8; 4] = b"SLSH";
const FORMAT_VERSION: u32 = 1;

/// Guardrail on `bits_per_table * num_tables * repetitions`.
pub const MAX_TOTAL_BITS: usize = 4096;

/// Unit-norm tolerance for indexed vectors and queries.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashFamily {
    SignedRandomProjection,
    RandomRotationBucket,
}

/// Parameters of the multi-table index.
///
/// `repetitions` multiplies the table count; it realizes the repetition
/// factor that amplifies success probability across the `T` adaptive queries
/// of a solver run (default 1, see [`HashFamilyConfig::repetitions_for`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashFamilyConfig {
    pub family: HashFamily,
    pub bits_per_table: usize,
    pub num_tables: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub seed: u64,
}

fn default_repetitions() -> usize {
    1
}

impl HashFamilyConfig {
    pub fn new(bits_per_table: usize, num_tables: usize, seed: u64) -> Self {
        Self {
            family: HashFamily::SignedRandomProjection,
            bits_per_table,
            num_tables,
            repetitions: 1,
            seed,
        }
    }

    pub fn with_family(mut self, family: HashFamily) -> Self {
        self.family = family;
        self
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions;
        self
    }

    /// Heuristic defaults for an `n`-point `(c, tau)` workload:
    /// `K = ceil(log2 n)` and `L = ceil(n^rho)` capped at 128.
    pub fn suggested(c: f64, tau: f64, n: usize, seed: u64) -> Result<Self> {
        let rho = theoretical_rho(c, tau)?;
        let k = if n <= 1 {
            1
        } else {
            (n as f64).log2().ceil() as usize
        };
        let l = if n == 0 {
            1
        } else {
            ((n as f64).powf(rho).ceil() as usize).clamp(1, 128)
        };
        Ok(Self::new(k.clamp(1, 64), l, seed))
    }

    /// Repetition factor covering `t` adaptive queries at failure budget
    /// `delta`: `ceil(log2(t / delta))`.
    pub fn repetitions_for(t: usize, delta: f64) -> usize {
        let t = t.max(1) as f64;
        let delta = delta.clamp(1e-12, 1.0);
        (t / delta).log2().ceil().max(1.0) as usize
    }

    pub fn total_tables(&self) -> usize {
        self.num_tables * self.repetitions
    }

    fn validate(&self) -> Result<()> {
        if self.bits_per_table == 0 {
            return Err(Error::param("bits_per_table", "must be >= 1"));
        }
        if self.bits_per_table > 64 {
            return Err(Error::param(
                "bits_per_table",
                "bucket keys are packed into 64-bit integers; K <= 64",
            ));
        }
        if self.num_tables == 0 {
            return Err(Error::param("num_tables", "must be >= 1"));
        }
        if self.repetitions == 0 {
            return Err(Error::param("repetitions", "must be >= 1"));
        }
        let total = self.bits_per_table * self.num_tables * self.repetitions;
        if total > MAX_TOTAL_BITS {
            return Err(Error::param(
                "num_tables",
                format!("K*L*repetitions = {total} exceeds the {MAX_TOTAL_BITS} guardrail"),
            ));
        }
        Ok(())
    }
}

/// Closed-form LSH query exponent for `(c, tau)`-MaxIP on the unit sphere
/// (the `o(1)` term is dropped):
/// `rho = 2(1-tau)^2/(1-c*tau)^2 - (1-tau)^4/(1-c*tau)^4`.
pub fn theoretical_rho(c: f64, tau: f64) -> Result<f64> {
    if !(0.0 < c && c < 1.0) {
        return Err(Error::param("c", format!("must be in (0,1), got {c}")));
    }
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::param("tau", format!("must be in (0,1), got {tau}")));
    }
    let ratio = (1.0 - tau) / (1.0 - c * tau);
    Ok(2.0 * ratio * ratio - ratio.powi(4))
}

/// One hash table: projection data plus bucket map.
#[derive(Clone, Debug)]
struct Table {
    /// SRP: `K * dim` hyperplane normals, row-major.
    /// Rotation family: `rounds * dim * dim` rotation matrices, row-major.
    projections: Vec<f64>,
    buckets: HashMap<u64, Vec<u32>>,
}

/// Multi-table LSH index over unit vectors.
#[derive(Clone, Debug)]
pub struct LshIndex {
    config: HashFamilyConfig,
    dim: usize,
    tables: Vec<Table>,
    data: Vec<DenseVector>,
}

/// Number of key bits one rotation code occupies for dimension `dim`
/// (`2 * dim` possible (coordinate, sign) outcomes).
fn rotation_code_bits(dim: usize) -> u32 {
    let outcomes = (2 * dim).max(2) as u64;
    64 - (outcomes - 1).leading_zeros()
}

fn rotation_rounds(bits_per_table: usize, dim: usize) -> usize {
    (bits_per_table as u32 / rotation_code_bits(dim)).max(1) as usize
}

fn generate_projections(cfg: &HashFamilyConfig, dim: usize, table_idx: usize) -> Vec<f64> {
    let mut rng = Rng::new(cfg.seed).fork(table_idx as u64);
    match cfg.family {
        HashFamily::SignedRandomProjection => (0..cfg.bits_per_table * dim)
            .map(|_| rng.next_gaussian())
            .collect(),
        HashFamily::RandomRotationBucket => {
            let rounds = rotation_rounds(cfg.bits_per_table, dim);
            let mut out = Vec::with_capacity(rounds * dim * dim);
            for _ in 0..rounds {
                out.extend_from_slice(&crate::vecspace::random_orthonormal(dim, &mut rng));
            }
            out
        }
    }
}

fn hash_key(cfg: &HashFamilyConfig, projections: &[f64], dim: usize, v: &[f64]) -> u64 {
    match cfg.family {
        HashFamily::SignedRandomProjection => {
            let mut key = 0u64;
            for k in 0..cfg.bits_per_table {
                let row = &projections[k * dim..(k + 1) * dim];
                let mut dot = 0.0;
                for (a, b) in row.iter().zip(v) {
                    dot += a * b;
                }
                key = (key << 1) | u64::from(dot >= 0.0);
            }
            key
        }
        HashFamily::RandomRotationBucket => {
            let rounds = rotation_rounds(cfg.bits_per_table, dim);
            let code_bits = rotation_code_bits(dim);
            let mut key = 0u64;
            for r in 0..rounds {
                let mat = &projections[r * dim * dim..(r + 1) * dim * dim];
                let mut best_idx = 0usize;
                let mut best_abs = f64::NEG_INFINITY;
                let mut best_sign = 0u64;
                for i in 0..dim {
                    let row = &mat[i * dim..(i + 1) * dim];
                    let mut dot = 0.0;
                    for (a, b) in row.iter().zip(v) {
                        dot += a * b;
                    }
                    if dot.abs() > best_abs {
                        best_abs = dot.abs();
                        best_idx = i;
                        best_sign = u64::from(dot >= 0.0);
                    }
                }
                let code = (best_idx as u64) << 1 | best_sign;
                key = (key << code_bits) | code;
            }
            key
        }
    }
}

impl LshIndex {
    /// Builds the index over unit vectors (norm within [`UNIT_NORM_TOLERANCE`]
    /// of 1). Deterministic given the config seed.
    pub fn build(points: &[DenseVector], cfg: &HashFamilyConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = points.first().map_or(0, DenseVector::dim);
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
            let norm = p.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { index: i, norm });
            }
        }
        let mut tables = Vec::with_capacity(cfg.total_tables());
        for t in 0..cfg.total_tables() {
            let projections = generate_projections(cfg, dim, t);
            let mut buckets: HashMap<u64, Vec<u32>> = HashMap::new();
            for (i, p) in points.iter().enumerate() {
                let key = hash_key(cfg, &projections, dim, p.as_slice());
                buckets.entry(key).or_default().push(i as u32);
            }
            tables.push(Table {
                projections,
                buckets,
            });
        }
        Ok(Self {
            config: *cfg,
            dim,
            tables,
            data: points.to_vec(),
        })
    }

    pub fn config(&self) -> &HashFamilyConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The indexed unit vectors, in insertion order.
    pub fn data(&self) -> &[DenseVector] {
        &self.data
    }

    /// Deduplicated, ascending union of bucket contents across all tables.
    /// May be empty. Read-only and safe for concurrent callers.
    pub fn candidates(&self, q: &DenseVector) -> Result<Vec<u32>> {
        if self.data.is_empty() {
            return Ok(Vec::new());
        }
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.dim(),
            });
        }
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { index: 0, norm });
        }
        let mut out = Vec::new();
        for table in &self.tables {
            let key = hash_key(&self.config, &table.projections, self.dim, q.as_slice());
            if let Some(bucket) = table.buckets.get(&key) {
                out.extend_from_slice(bucket);
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Writes the versioned binary format: magic, version, config, data
    /// vectors, and per-table buckets with sorted keys. Byte-identical for
    /// identical (data, config).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let family: u8 = match self.config.family {
            HashFamily::SignedRandomProjection => 0,
            HashFamily::RandomRotationBucket => 1,
        };
        w.write_all(&[family])?;
        w.write_all(&(self.config.bits_per_table as u32).to_le_bytes())?;
        w.write_all(&(self.config.num_tables as u32).to_le_bytes())?;
        w.write_all(&(self.config.repetitions as u32).to_le_bytes())?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.data.len() as u32).to_le_bytes())?;
        for p in &self.data {
            for c in p.as_slice() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.write_all(&(self.tables.len() as u32).to_le_bytes())?;
        for table in &self.tables {
            let mut keys: Vec<&u64> = table.buckets.keys().collect();
            keys.sort_unstable();
            w.write_all(&(keys.len() as u32).to_le_bytes())?;
            for key in keys {
                let bucket = &table.buckets[key];
                w.write_all(&key.to_le_bytes())?;
                w.write_all(&(bucket.len() as u32).to_le_bytes())?;
                for idx in bucket {
                    w.write_all(&idx.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Loads an index written by [`LshIndex::save`]; validates magic and
    /// version and regenerates projections from the stored config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        fn read_u32(r: &mut impl Read) -> Result<u32> {
            Ok(u32::from_le_bytes(read_exact::<4>(r)?))
        }

        let magic = read_exact::<4>(r)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let family = match read_exact::<1>(r)?[0] {
            0 => HashFamily::SignedRandomProjection,
            1 => HashFamily::RandomRotationBucket,
            other => return Err(Error::IndexFormat(format!("unknown hash family {other}"))),
        };
        let bits_per_table = read_u32(r)? as usize;
        let num_tables = read_u32(r)? as usize;
        let repetitions = read_u32(r)? as usize;
        let seed = u64::from_le_bytes(read_exact::<8>(r)?);
        let config = HashFamilyConfig {
            family,
            bits_per_table,
            num_tables,
            repetitions,
            seed,
        };
        config
            .validate()
            .map_err(|e| Error::IndexFormat(format!("stored config fails validation: {e}")))?;
        let dim = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut coords = Vec::with_capacity(dim);
            for _ in 0..dim {
                coords.push(f64::from_le_bytes(read_exact::<8>(r)?));
            }
            data.push(
                DenseVector::new(coords)
                    .map_err(|e| Error::IndexFormat(format!("stored vector invalid: {e}")))?,
            );
        }
        let num_stored_tables = read_u32(r)? as usize;
        if num_stored_tables != config.total_tables() {
            return Err(Error::IndexFormat(format!(
                "table count {num_stored_tables} does not match config ({})",
                config.total_tables()
            )));
        }
        let mut tables = Vec::with_capacity(num_stored_tables);
        for t in 0..num_stored_tables {
            let projections = generate_projections(&config, dim, t);
            let n_buckets = read_u32(r)? as usize;
            let mut buckets = HashMap::with_capacity(n_buckets);
            for _ in 0..n_buckets {
                let key = u64::from_le_bytes(read_exact::<8>(r)?);
                let len = read_u32(r)? as usize;
                let mut bucket = Vec::with_capacity(len);
                for _ in 0..len {
                    let idx = read_u32(r)?;
                    if idx as usize >= n {
                        return Err(Error::IndexFormat(format!(
                            "bucket entry {idx} out of range (n = {n})"
                        )));
                    }
                    bucket.push(idx);
                }
                buckets.insert(key, bucket);
            }
            tables.push(Table {
                projections,
                buckets,
            });
        }
        Ok(Self {
            config,
            dim,
            tables,
            data,
        })
    }
}
