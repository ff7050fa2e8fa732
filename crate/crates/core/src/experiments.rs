//! Sweep engine: Monte Carlo ensembles against the large-intensity limits.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{asphericity_quadrature, closed_form, shape_stats, DEFAULT_TOL};
use crate::geometry::{
    align, estimate_ensemble, gyration_tensor, kde_grid, DensityGrid, GridSpec, GyrationTensor,
};
use crate::kernel::{Family, Kernel, KernelSpec};
use crate::rng::{mix_seed, RngStream};
use crate::sampler::sample_tracked_bridge;
use crate::{Error, Result};

/// Default intensities and ensemble size.
pub const DEFAULT_INTENSITIES: [f64; 3] = [20.0, 100.0, 1000.0];
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10_000;
pub const MIN_ENSEMBLE_SIZE: usize = 100;
/// Quadrature and closed form disagreeing by more than this flags a row.
pub const DISCREPANCY_FLAG: f64 = 1e-6;

/// Parses a parameter list: a single value (`5`), a comma list (`1,2,5`),
/// an inclusive range `start:stop:step` (`1:20:1`), or a mix (`0.1,1:3:1`).
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(Error::Parse(format!("empty entry in `{text}`")));
        }
        let num = |s: &str| -> Result<f64> {
            let v = s
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{s}`: {e}")))?;
            if v.is_nan() {
                return Err(Error::Parse(format!("`{s}` is not a number")));
            }
            Ok(v)
        };
        let fields: Vec<&str> = part.split(':').collect();
        match fields.as_slice() {
            [v] => out.push(num(v)?),
            [a, b, step] => {
                let (start, stop, step) = (num(a)?, num(b)?, num(step)?);
                if !(start.is_finite() && stop.is_finite() && step.is_finite())
                    || step <= 0.0
                    || stop < start
                {
                    return Err(Error::Parse(format!("bad range `{part}`")));
                }
                let count = ((stop - start) / step + 1e-9).floor();
                if count > 1e6 {
                    return Err(Error::Parse(format!("range `{part}` is too long")));
                }
                out.extend((0..=count as usize).map(|i| start + i as f64 * step));
            }
            _ => return Err(Error::Parse(format!("bad entry `{part}`"))),
        }
        if out.len() > 1_000_000 {
            return Err(Error::Parse("too many values".into()));
        }
    }
    Ok(out)
}

/// Output format for tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Kernel selection inside a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelGrid {
    pub family: Family,
    /// Family parameters; ignored for tabulated kernels.
    #[serde(default)]
    pub params: Vec<f64>,
    /// CSV with header `t,mu`, for tabulated kernels. Relative paths resolve
    /// against the config file's directory.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

/// Experiment configuration as written in a TOML file.
///
/// ```toml
/// seed = 7
/// ensemble_size = 10000
/// intensities = [20, 100, 1000]
///
/// [kernel]
/// family = "exponential"
/// params = [1, 2, 5, 10, 20]
///
/// [output]
/// path = "sweep.csv"
/// format = "csv"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub kernel: KernelGrid,
    #[serde(default = "default_intensities")]
    pub intensities: Vec<f64>,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub quadrature_tol: f64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_intensities() -> Vec<f64> {
    DEFAULT_INTENSITIES.to_vec()
}

fn default_ensemble_size() -> usize {
    DEFAULT_ENSEMBLE_SIZE
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl ConfigFile {
    /// Parses and checks everything that does not need the filesystem.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.kernel.family == Family::Tabulated {
            if cfg.kernel.file.is_none() {
                return Err(Error::Config("tabulated kernels need `kernel.file`".into()));
            }
        } else {
            if cfg.kernel.params.is_empty() {
                return Err(Error::Config("`kernel.params` must not be empty".into()));
            }
            for &p in &cfg.kernel.params {
                cfg.kernel
                    .family
                    .with_param(p)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        validate_run(
            &cfg.intensities,
            cfg.ensemble_size,
            cfg.quadrature_tol,
            cfg.threads,
        )?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text)?.resolve(base)
    }

    /// Builds the kernel list, reading a tabulated kernel file if needed.
    pub fn resolve(self, base_dir: &Path) -> Result<ExperimentConfig> {
        let kernels = match (self.kernel.family, &self.kernel.file) {
            (Family::Tabulated, Some(file)) => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base_dir.join(file)
                };
                let f = std::fs::File::open(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                vec![KernelSpec::tabulated_from_csv(f)?]
            }
            (family, _) => self
                .kernel
                .params
                .iter()
                .map(|&p| family.with_param(p))
                .collect::<Result<_>>()?,
        };
        let config = ExperimentConfig {
            kernels,
            intensities: self.intensities,
            ensemble_size: self.ensemble_size,
            seed: self.seed,
            quadrature_tol: self.quadrature_tol,
            threads: self.threads,
            output: self.output,
        };
        config.validate()?;
        Ok(config)
    }
}

fn validate_run(intensities: &[f64], n: usize, tol: f64, threads: Option<usize>) -> Result<()> {
    if intensities.is_empty() {
        return Err(Error::Config("`intensities` must not be empty".into()));
    }
    if let Some(c) = intensities.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::Config(format!(
            "intensity {c} is not finite and nonnegative"
        )));
    }
    if n < MIN_ENSEMBLE_SIZE {
        return Err(Error::Config(format!(
            "ensemble size must be at least {MIN_ENSEMBLE_SIZE}, got {n}"
        )));
    }
    if !(tol > 1e-14 && tol < 1e-3) {
        return Err(Error::Config(format!(
            "quadrature tolerance {tol} outside (1e-14, 1e-3)"
        )));
    }
    if threads == Some(0) {
        return Err(Error::Config("`threads` must be at least 1".into()));
    }
    Ok(())
}

/// A resolved, validated sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kernels: Vec<KernelSpec>,
    pub intensities: Vec<f64>,
    pub ensemble_size: usize,
    pub seed: u64,
    pub quadrature_tol: f64,
    /// Worker count; all cores when absent.
    pub threads: Option<usize>,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(
        kernels: Vec<KernelSpec>,
        intensities: Vec<f64>,
        ensemble_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = ExperimentConfig {
            kernels,
            intensities,
            ensemble_size,
            seed,
            quadrature_tol: DEFAULT_TOL,
            threads: None,
            output: OutputConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::Config("no kernels to run".into()));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        validate_run(
            &self.intensities,
            self.ensemble_size,
            self.quadrature_tol,
            self.threads,
        )
    }
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Intensity column value; infinite for analytic rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intensity {
    Finite(f64),
    Infinite,
}

impl std::fmt::Display for Intensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Intensity::Finite(c) => write!(f, "{c:?}"),
            Intensity::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Intensity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Intensity::Finite(c) => s.serialize_f64(*c),
            Intensity::Infinite => s.serialize_str("inf"),
        }
    }
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub param: Option<f64>,
    pub c: Intensity,
    pub a_analytic: f64,
    pub a_hat: Option<f64>,
    pub a_stderr: Option<f64>,
    pub r2_analytic: f64,
    pub r2_hat: Option<f64>,
    pub r2_stderr: Option<f64>,
    pub n: Option<usize>,
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "family",
    "param",
    "c",
    "a_analytic",
    "a_hat",
    "a_stderr",
    "r2_analytic",
    "r2_hat",
    "r2_stderr",
    "n",
];

/// Shortest round-trip form; switches to exponent notation for very small
/// or large magnitudes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl SweepRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.family.clone(),
            opt(self.param),
            self.c.to_string(),
            num(self.a_analytic),
            opt(self.a_hat),
            opt(self.a_stderr),
            num(self.r2_analytic),
            opt(self.r2_hat),
            opt(self.r2_stderr),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
        ]
    }
}

/// Writes rows as CSV with the [`SWEEP_COLUMNS`] header.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

fn cell_seed(seed: u64, spec: &KernelSpec, c: f64) -> u64 {
    let param = spec.param().unwrap_or(f64::NAN).to_bits();
    let family = spec.family() as u64;
    mix_seed(mix_seed(mix_seed(seed, family), param), c.to_bits())
}

/// Gyration tensors of `n` independent tracked bridges. Replicate `i` uses
/// stream `i`, and the output is in replicate order.
pub fn ensemble_tensors(
    kernel: &Kernel,
    c: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<GyrationTensor>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i);
            sample_tracked_bridge(kernel, c, &mut rng).map(|b| gyration_tensor(&b))
        })
        .collect()
}

/// Monte Carlo estimates for every `(kernel, c)` cell, paired with the
/// large-intensity values.
///
/// Each cell draws from its own seed derived from the config seed, the
/// kernel and `c`, so a cell's numbers do not depend on what else is in the
/// sweep or on the worker count.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    with_threads(config.threads, || {
        let mut rows = Vec::with_capacity(config.kernels.len() * config.intensities.len());
        for spec in &config.kernels {
            let where_ = |c: Option<f64>| {
                format!(
                    "{} param {} c {}",
                    spec.family(),
                    opt(spec.param()),
                    c.map(|c| format!("{c:?}")).unwrap_or_else(|| "inf".into())
                )
            };
            let kernel = Kernel::new(spec.clone()).map_err(|e| e.annotate(where_(None)))?;
            let limit = shape_stats(&kernel, config.quadrature_tol)
                .map_err(|e| e.annotate(where_(None)))?;
            for &c in &config.intensities {
                let tensors = ensemble_tensors(
                    &kernel,
                    c,
                    config.ensemble_size,
                    cell_seed(config.seed, spec, c),
                )
                .map_err(|e| e.annotate(where_(Some(c))))?;
                let est = estimate_ensemble(&tensors).map_err(|e| e.annotate(where_(Some(c))))?;
                rows.push(SweepRow {
                    family: spec.family().to_string(),
                    param: spec.param(),
                    c: Intensity::Finite(c),
                    a_analytic: limit.asphericity,
                    a_hat: Some(est.a_hat),
                    a_stderr: Some(est.a_stderr),
                    r2_analytic: limit.r2,
                    r2_hat: Some(est.r2_hat),
                    r2_stderr: Some(est.r2_stderr),
                    n: Some(est.n),
                });
            }
        }
        Ok(rows)
    })?
}

/// A `c = inf` row with the quadrature cross-check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticRow {
    #[serde(flatten)]
    pub row: SweepRow,
    /// Asphericity by quadrature.
    pub a_quadrature: Option<f64>,
    /// `max(|A_closed - A_quad|, |r2_closed - r2_quad|)` when both exist.
    pub discrepancy: Option<f64>,
    pub flagged: bool,
    pub note: Option<String>,
}

pub const ANALYTIC_EXTRA_COLUMNS: [&str; 4] = ["a_quadrature", "discrepancy", "flagged", "note"];

/// Large-intensity table. A quadrature failure is recorded in its row and
/// the table carries on.
pub fn run_analytic_table(kernels: &[KernelSpec], tol: f64) -> Vec<AnalyticRow> {
    kernels
        .iter()
        .map(|spec| {
            let row = |a: f64, r2: f64| SweepRow {
                family: spec.family().to_string(),
                param: spec.param(),
                c: Intensity::Infinite,
                a_analytic: a,
                a_hat: None,
                a_stderr: None,
                r2_analytic: r2,
                r2_hat: None,
                r2_stderr: None,
                n: None,
            };
            let quad = Kernel::new(spec.clone()).and_then(|k| asphericity_quadrature(&k, tol));
            match (closed_form(spec), quad) {
                (Some(exact), Ok(q)) => {
                    let d = (exact.asphericity - q.asphericity)
                        .abs()
                        .max((exact.r2 - q.r2).abs());
                    AnalyticRow {
                        row: row(exact.asphericity, exact.r2),
                        a_quadrature: Some(q.asphericity),
                        discrepancy: Some(d),
                        flagged: !(d <= DISCREPANCY_FLAG),
                        note: None,
                    }
                }
                (Some(exact), Err(e)) => AnalyticRow {
                    row: row(exact.asphericity, exact.r2),
                    a_quadrature: None,
                    discrepancy: None,
                    flagged: true,
                    note: Some(e.to_string()),
                },
                (None, Ok(q)) => AnalyticRow {
                    row: row(q.asphericity, q.r2),
                    a_quadrature: Some(q.asphericity),
                    discrepancy: None,
                    flagged: false,
                    note: None,
                },
                (None, Err(e)) => AnalyticRow {
                    row: row(f64::NAN, f64::NAN),
                    a_quadrature: None,
                    discrepancy: None,
                    flagged: true,
                    note: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Writes analytic rows as CSV: the sweep columns followed by
/// [`ANALYTIC_EXTRA_COLUMNS`].
pub fn write_analytic_csv<W: Write>(rows: &[AnalyticRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_COLUMNS.iter().chain(&ANALYTIC_EXTRA_COLUMNS))?;
    for r in rows {
        let mut fields = r.row.fields();
        fields.push(opt(r.a_quadrature));
        fields.push(opt(r.discrepancy));
        fields.push(r.flagged.to_string());
        fields.push(r.note.clone().unwrap_or_default());
        w.write_record(fields)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON array of rows. Non-finite numbers become `null`.
pub fn to_json<T: Serialize>(rows: &[T]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

/// Settings for an aligned-ensemble density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    pub kernel: KernelSpec,
    pub c: f64,
    pub bridges: usize,
    pub seed: u64,
    pub bandwidth: f64,
    /// Fixed grid; when absent the pooled points' bounding box is padded by
    /// `5 * bandwidth` and covered with `resolution` nodes per axis.
    pub grid: Option<GridSpec>,
    pub resolution: usize,
    pub threads: Option<usize>,
}

impl DensityConfig {
    pub fn new(kernel: KernelSpec, c: f64) -> Self {
        DensityConfig {
            kernel,
            c,
            bridges: 400,
            seed: 0,
            bandwidth: 0.05,
            grid: None,
            resolution: 201,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOutput {
    pub grid: DensityGrid,
    /// Bridges that contributed points.
    pub used: usize,
    /// Bridges that could not be aligned (no displaced interior points).
    pub skipped: usize,
    pub points: usize,
}

/// Generates bridges, aligns each one, pools their interior points and
/// estimates the density on a grid.
pub fn run_density(config: &DensityConfig) -> Result<DensityOutput> {
    let kernel = Kernel::new(config.kernel.clone())?;
    if config.bridges == 0 {
        return Err(Error::Config("need at least one bridge".into()));
    }
    let seed = cell_seed(config.seed, &config.kernel, config.c);
    with_threads(config.threads, || {
        let aligned: Vec<Option<Vec<[f64; 2]>>> = (0..config.bridges as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(seed, i);
                let bridge = sample_tracked_bridge(&kernel, config.c, &mut rng)?;
                Ok(align(&bridge).ok().map(|b| b.interior_points().collect()))
            })
            .collect::<Result<_>>()?;
        let skipped = aligned.iter().filter(|a| a.is_none()).count();
        let points: Vec<[f64; 2]> = aligned.into_iter().flatten().flatten().collect();
        if points.is_empty() {
            return Err(Error::DegenerateEnsemble(format!(
                "all {} bridges are degenerate at c = {}",
                config.bridges, config.c
            )));
        }
        let grid = match config.grid {
            Some(g) => g,
            None => GridSpec::around(
                &points,
                5.0 * config.bandwidth,
                config.resolution,
                config.resolution,
            )?,
        };
        let grid = kde_grid(&points, config.bandwidth, grid)?;
        Ok(DensityOutput {
            grid,
            used: config.bridges - skipped,
            skipped,
            points: points.len(),
        })
    })?
}

/// Human-readable summary line for a sweep row.
pub fn describe(row: &SweepRow) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{} {} c={} A={:.6}",
        row.family,
        opt(row.param),
        row.c,
        row.a_analytic
    );
    if let (Some(a), Some(se)) = (row.a_hat, row.a_stderr) {
        let _ = write!(s, " A_hat={a:.6}±{se:.6}");
    }
    s
}
