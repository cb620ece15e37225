//! Datasets, run configuration and artifact persistence.
//!
//! The text dataset format is one example per line:
//!
//! ```text
//! # comments start with '#'
//! # groups: 1-3 4-5
//! 1.5 1:0.2 3:0.7
//! -0.25 2:1e-3
//! ```
//!
//! Feature indices are 1-based, unlisted entries are zero. The optional
//! `groups:` comment names descriptor blocks as 1-based inclusive column
//! ranges and `dim: m` fixes the number of columns. Files ending in `.csv`
//! are read as dense rows with the target in the first column.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{BaseSample, KernelFamily, KernelSpec, DEFAULT_SKEW_OFFSET};
use crate::mkl::{GmklOptions, GroupLassoOptions, GroupedLinearModel, GroupedModelRecord, KernelBlock, LossSpec};
use crate::skl::{RidgeModel, RidgeModelRecord, SklOptions, DEFAULT_LAMBDA, DEFAULT_RHO};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Column ranges of descriptor blocks, if annotated.
    pub groups: Option<Vec<Range<usize>>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, groups: Option<Vec<Range<usize>>>) -> Result<Self> {
        let ds = Dataset { x, y, groups };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::Dimension("dataset has no examples".into()));
        }
        if self.x.nrows() != self.y.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} targets",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        if let Some(groups) = &self.groups {
            check_partition(groups, self.x.ncols())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
            groups: self.groups.clone(),
        }
    }
}

fn check_partition(groups: &[Range<usize>], m: usize) -> Result<()> {
    let mut next = 0;
    for g in groups {
        if g.start != next || g.end <= g.start {
            return Err(Error::Dimension(format!(
                "feature groups must partition the {m} columns in order, got {groups:?}"
            )));
        }
        next = g.end;
    }
    if next != m {
        return Err(Error::Dimension(format!("feature groups cover {next} of {m} columns")));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Reads a dataset, choosing the parser from the file extension.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset_with_dim(path, None)
}

/// Like [`parse_dataset`] but with the input dimension fixed instead of
/// inferred from the largest index.
pub fn parse_dataset_with_dim(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let ds = parse_csv(path)?;
        if let Some(m) = dim {
            if m != ds.dim() {
                return Err(Error::Dimension(format!(
                    "{} has {} columns, configured dimension is {m}",
                    path.display(),
                    ds.dim()
                )));
            }
        }
        return Ok(ds);
    }
    let file = File::open(path).map_err(io_err(path))?;
    parse_sparse(BufReader::new(file), &path.display().to_string(), dim)
}

struct SparseRow {
    line: usize,
    target: f64,
    entries: Vec<(usize, f64)>,
}

/// Parses the sparse text format from any reader. `source` only labels errors.
pub fn parse_sparse<R: BufRead>(reader: R, source: &str, dim: Option<usize>) -> Result<Dataset> {
    let perr = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut groups = None;
    let mut dim_hint = None;
    let mut max_index = 0;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| perr(lineno, e.to_string()))?;
        let (body, comment) = match line.find('#') {
            Some(p) => (&line[..p], Some(line[p + 1..].trim())),
            None => (line.as_str(), None),
        };
        if let Some(spec) = comment.and_then(|c| c.strip_prefix("groups:")) {
            if groups.is_some() {
                return Err(perr(lineno, "duplicate groups annotation".into()));
            }
            groups = Some(parse_groups(spec).map_err(|m| perr(lineno, m))?);
        }
        if let Some(spec) = comment.and_then(|c| c.strip_prefix("dim:")) {
            let m: usize = spec
                .trim()
                .parse()
                .map_err(|_| perr(lineno, format!("invalid dimension {spec:?}")))?;
            dim_hint = Some(m);
        }
        let mut tokens = body.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let target = parse_finite(first).map_err(|m| perr(lineno, format!("target: {m}")))?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| perr(lineno, format!("invalid feature index {idx:?}")))?;
            if idx <= 0 {
                return Err(perr(lineno, format!("feature index must be at least 1, got {idx}")));
            }
            let idx = idx as usize;
            if entries.iter().any(|&(j, _)| j == idx - 1) {
                return Err(perr(lineno, format!("feature index {idx} repeated")));
            }
            let val = parse_finite(val).map_err(|m| perr(lineno, format!("feature {idx}: {m}")))?;
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        rows.push(SparseRow {
            line: lineno,
            target,
            entries,
        });
    }
    if rows.is_empty() {
        return Err(perr(0, "no examples".into()));
    }
    let m = match dim.or(dim_hint) {
        Some(m) => {
            if let Some(row) = rows.iter().find(|r| r.entries.iter().any(|&(j, _)| j >= m)) {
                return Err(perr(
                    row.line,
                    format!("feature index exceeds configured dimension {m}"),
                ));
            }
            m
        }
        None => max_index,
    };
    if m == 0 {
        return Err(perr(0, "no feature columns".into()));
    }
    let mut x = Array2::zeros((rows.len(), m));
    let mut y = Array1::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        y[i] = row.target;
        for &(j, v) in &row.entries {
            x[[i, j]] = v;
        }
    }
    Dataset::new(x, y, groups).map_err(|e| perr(0, e.to_string()))
}

fn parse_finite(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    Ok(v)
}

fn parse_groups(spec: &str) -> std::result::Result<Vec<Range<usize>>, String> {
    spec.split_whitespace()
        .map(|tok| {
            let (a, b) = tok.split_once('-').unwrap_or((tok, tok));
            let a: usize = a.parse().map_err(|_| format!("invalid group {tok:?}"))?;
            let b: usize = b.parse().map_err(|_| format!("invalid group {tok:?}"))?;
            if a == 0 || b < a {
                return Err(format!("invalid group {tok:?}"));
            }
            Ok(a - 1..b)
        })
        .collect()
}

fn parse_csv(path: &Path) -> Result<Dataset> {
    let source = path.display().to_string();
    let perr = |line: usize, message: String| Error::Parse {
        path: source.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => perr(0, format!("{other:?}")),
        })?;
    let mut values = Vec::new();
    let mut width = None;
    let mut n = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(k + 1, |p| p.line() as usize);
            perr(line, e.to_string())
        })?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, String> = record.iter().map(parse_finite).collect();
        let row = match parsed {
            Ok(row) => row,
            // A leading header row is skipped.
            Err(_) if n == 0 && width.is_none() => {
                width = Some(record.len());
                continue;
            }
            Err(m) => return Err(perr(line, m)),
        };
        let w = *width.get_or_insert(row.len());
        if row.len() != w || w < 2 {
            return Err(perr(line, format!("expected {} columns, got {}", w.max(2), row.len())));
        }
        values.extend(row);
        n += 1;
    }
    if n == 0 {
        return Err(perr(0, "no examples".into()));
    }
    let w = width.unwrap_or(0);
    let table = Array2::from_shape_vec((n, w), values).map_err(|e| perr(0, e.to_string()))?;
    let y = table.column(0).to_owned();
    let x = table.slice(ndarray::s![.., 1..]).to_owned();
    Dataset::new(x, y, None)
}

/// Writes the sparse text format. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let text = format_dataset(ds);
    out.write_all(text.as_bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut s = String::new();
    if let Some(groups) = &ds.groups {
        s.push_str("# groups:");
        for g in groups {
            let _ = write!(s, " {}-{}", g.start + 1, g.end);
        }
        s.push('\n');
    }
    for (row, y) in ds.x.rows().into_iter().zip(ds.y.iter()) {
        let _ = write!(s, "{y:?}");
        for (j, v) in row.iter().enumerate() {
            if v.to_bits() != 0 {
                let _ = write!(s, " {}:{v:?}", j + 1);
            }
        }
        s.push('\n');
    }
    // Keep the width when trailing columns are all zero.
    if ds.x.column(ds.dim() - 1).iter().all(|v| v.to_bits() == 0) {
        let _ = writeln!(s, "# dim: {}", ds.dim());
    }
    s
}

/// Seeded shuffle split; `fraction` of the rows go to the validation set.
pub fn split_train_validation(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::Parameter(format!("cannot split {n} example(s)")));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at(n_val);
    Ok((ds.select(train), ds.select(val)))
}

/// Initial hyperparameters: one value for every input dimension, or one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaInit {
    Isotropic(f64),
    PerDimension(Vec<f64>),
}

impl SigmaInit {
    pub fn expand(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            SigmaInit::Isotropic(s) => Ok(vec![*s; m]),
            SigmaInit::PerDimension(v) if v.len() == m => Ok(v.clone()),
            SigmaInit::PerDimension(v) => Err(Error::Dimension(format!(
                "{} initial sigmas for {m} input dimensions",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    #[serde(default = "default_sigma")]
    pub sigma_init: SigmaInit,
    #[serde(default = "default_skew_offset")]
    pub c: f64,
    /// Input columns the kernel reads; all columns if absent.
    #[serde(default)]
    pub columns: Option<Range<usize>>,
}

impl KernelConfig {
    pub fn new(family: KernelFamily, sigma: f64) -> Self {
        KernelConfig {
            family,
            sigma_init: SigmaInit::Isotropic(sigma),
            c: DEFAULT_SKEW_OFFSET,
            columns: None,
        }
    }

    /// Kernel spec for data with `m` input columns.
    pub fn spec(&self, m: usize) -> Result<KernelSpec> {
        let width = match &self.columns {
            Some(r) if r.end <= m && r.start < r.end => r.len(),
            Some(r) => {
                return Err(Error::Dimension(format!(
                    "kernel columns {r:?} do not fit {m} input columns"
                )))
            }
            None => m,
        };
        KernelSpec::new(self.family, self.sigma_init.expand(width)?, self.c)
    }

    pub fn block(&self, m: usize) -> Result<KernelBlock> {
        let block = KernelBlock::new(self.spec(m)?);
        Ok(match &self.columns {
            Some(r) => block.with_columns(r.clone()),
            None => block,
        })
    }
}

fn default_sigma() -> SigmaInit {
    SigmaInit::Isotropic(1.0)
}

fn default_skew_offset() -> f64 {
    DEFAULT_SKEW_OFFSET
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_grid: Vec<usize>,
    pub gmkl_grid: Vec<usize>,
    pub input_dim: usize,
    /// Random features per kernel block.
    pub d_per_kernel: usize,
    pub kernels: usize,
    pub repeats: usize,
    pub noise_std: f64,
    pub lambda_fraction: f64,
    /// Proximal iterations per run.
    pub mkl_iterations: usize,
    /// Alternations per reference run.
    pub gmkl_iterations: usize,
    /// Descent iterations per SKL run; zero skips SKL.
    pub skl_iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_grid: vec![1_000, 3_000, 10_000, 30_000],
            gmkl_grid: vec![200, 400, 800],
            input_dim: 5,
            d_per_kernel: 250,
            kernels: 2,
            repeats: 3,
            noise_std: 0.1,
            lambda_fraction: 0.05,
            mkl_iterations: 30,
            gmkl_iterations: 5,
            skl_iterations: 2,
        }
    }
}

/// Full description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernels: Vec<KernelConfig>,
    /// Random features per kernel.
    pub d: usize,
    /// Ridge penalty of the single-kernel model.
    pub lambda: f64,
    /// Hyperparameter penalty of the validation objective.
    pub rho: f64,
    /// Group-Lasso penalty; when absent, `lambda_fraction * lambda_max` is used.
    pub mkl_lambda: Option<f64>,
    pub lambda_fraction: f64,
    pub loss: LossSpec,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Input dimension; inferred from the data when absent.
    pub input_dim: Option<usize>,
    pub skl: SklOptions,
    pub group_lasso: GroupLassoOptions,
    pub gmkl: GmklOptions,
    /// Relative tolerance used by `verify-equivalence`.
    pub tolerance: f64,
    pub paths: PathConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernels: KernelFamily::ALL.iter().map(|&f| KernelConfig::new(f, 1.0)).collect(),
            d: 200,
            lambda: DEFAULT_LAMBDA,
            rho: DEFAULT_RHO,
            mkl_lambda: None,
            lambda_fraction: 0.1,
            loss: LossSpec::default(),
            seed: 0,
            validation_fraction: 0.25,
            input_dim: None,
            skl: SklOptions::default(),
            group_lasso: GroupLassoOptions::default(),
            gmkl: GmklOptions::default(),
            tolerance: 1e-3,
            paths: PathConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.kernels.is_empty() {
            return bad("at least one kernel is required".into());
        }
        for k in &self.kernels {
            let sig: &[f64] = match &k.sigma_init {
                SigmaInit::Isotropic(s) => std::slice::from_ref(s),
                SigmaInit::PerDimension(v) => v,
            };
            if sig.is_empty() || sig.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad(format!("sigma_init must be positive, got {:?}", k.sigma_init));
            }
            if !(k.c > 0.0 && k.c.is_finite()) {
                return bad(format!("skew offset c must be positive, got {}", k.c));
            }
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be non-negative, got {}", self.rho));
        }
        if let Some(l) = self.mkl_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("mkl_lambda must be positive, got {l}"));
            }
        }
        if !(self.lambda_fraction > 0.0 && self.lambda_fraction.is_finite()) {
            return bad(format!(
                "lambda_fraction must be positive, got {}",
                self.lambda_fraction
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance must be non-negative, got {}", self.tolerance));
        }
        if self.input_dim == Some(0) {
            return bad("input_dim must be at least 1".into());
        }
        let b = &self.bench;
        if b.input_dim == 0 || b.d_per_kernel == 0 || b.kernels == 0 || b.repeats == 0 {
            return bad("bench sizes must be positive".into());
        }
        if b.kernels > KernelFamily::ALL.len() {
            return bad(format!("bench supports at most {} kernels", KernelFamily::ALL.len()));
        }
        if !(b.noise_std >= 0.0) || !(b.lambda_fraction > 0.0) {
            return bad("bench noise must be non-negative and lambda_fraction positive".into());
        }
        self.loss.validate()
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn save_config(config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    save_json(config, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct BaseSampleRecord {
    seed: u64,
    d: usize,
    m: usize,
    /// Row-major `d x m`.
    omega: Vec<f64>,
    phase: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 4] = b"RFFB";
const BINARY_VERSION: u32 = 1;

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Saves a base sample as JSON, or as a little-endian binary payload when
/// the path ends in `.bin`.
pub fn save_base_sample(base: &BaseSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !is_binary(path) {
        let record = BaseSampleRecord {
            seed: base.seed(),
            d: base.feature_count(),
            m: base.input_dim(),
            omega: base.omega().iter().copied().collect(),
            phase: base.phase().to_vec(),
        };
        return save_json(&record, path);
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_u32::<LittleEndian>(BINARY_VERSION)?;
        out.write_u64::<LittleEndian>(base.seed())?;
        out.write_u64::<LittleEndian>(base.feature_count() as u64)?;
        out.write_u64::<LittleEndian>(base.input_dim() as u64)?;
        for v in base.omega().iter().chain(base.phase().iter()) {
            out.write_f64::<LittleEndian>(*v)?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

pub fn load_base_sample(path: impl AsRef<Path>) -> Result<BaseSample> {
    let path = path.as_ref();
    let bad = |m: String| Error::Artifact(format!("{}: {m}", path.display()));
    let record = if is_binary(path) {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != BINARY_MAGIC {
            return Err(bad("not a base-sample file".into()));
        }
        let header = (|| -> std::io::Result<(u32, u64, u64, u64)> {
            Ok((
                r.read_u32::<LittleEndian>()?,
                r.read_u64::<LittleEndian>()?,
                r.read_u64::<LittleEndian>()?,
                r.read_u64::<LittleEndian>()?,
            ))
        })();
        let (version, seed, d, m) = header.map_err(|_| bad("truncated header".into()))?;
        if version != BINARY_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = d
            .checked_mul(m)
            .and_then(|v| v.checked_add(d))
            .filter(|&c| c.checked_mul(8) == Some(r.len() as u64))
            .ok_or_else(|| bad(format!("payload size does not match d = {d}, m = {m}")))?;
        let mut values = vec![0.0; count as usize];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(|_| bad("truncated payload".into()))?;
        let phase = values.split_off((d * m) as usize);
        BaseSampleRecord {
            seed,
            d: d as usize,
            m: m as usize,
            omega: values,
            phase,
        }
    } else {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    let omega = Array2::from_shape_vec((record.d, record.m), record.omega).map_err(|e| bad(e.to_string()))?;
    if record.phase.len() != record.d {
        return Err(bad(format!("{} phases for d = {}", record.phase.len(), record.d)));
    }
    BaseSample::from_parts(record.seed, omega, Array1::from(record.phase)).map_err(|e| bad(e.to_string()))
}

/// On-disk model, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelArtifact {
    Ridge(RidgeModelRecord),
    GroupLasso(GroupedModelRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ridge(RidgeModel),
    GroupLasso(GroupedLinearModel),
}

impl Model {
    pub fn to_artifact(&self) -> ModelArtifact {
        match self {
            Model::Ridge(m) => ModelArtifact::Ridge(m.to_record()),
            Model::GroupLasso(m) => ModelArtifact::GroupLasso(m.to_record()),
        }
    }

    pub fn from_artifact(artifact: ModelArtifact) -> Result<Self> {
        Ok(match artifact {
            ModelArtifact::Ridge(r) => Model::Ridge(RidgeModel::from_record(r)?),
            ModelArtifact::GroupLasso(r) => Model::GroupLasso(GroupedLinearModel::from_record(r)?),
        })
    }

    /// Input columns the model expects.
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Ridge(m) => m.spec.input_dim(),
            Model::GroupLasso(m) => m
                .blocks
                .iter()
                .map(|b| b.columns.as_ref().map_or(b.spec.input_dim(), |r| r.end))
                .max()
                .unwrap_or(0),
        }
    }

    pub fn predict(&self, x: ndarray::ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self {
            Model::Ridge(m) => m.predict(x, &m.base()?),
            Model::GroupLasso(m) => m.predict(x),
        }
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    save_json(&model.to_artifact(), path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let artifact: ModelArtifact =
        serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    Model::from_artifact(artifact).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}
