use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tracked_bridge::experiments::{
    parse_values, run_analytic_table, run_density, run_sweep, to_json, write_analytic_csv,
    write_sweep_csv, ConfigFile, DensityConfig, ExperimentConfig, Format, DEFAULT_ENSEMBLE_SIZE,
    MIN_ENSEMBLE_SIZE,
};
use tracked_bridge::geometry::GridSpec;
use tracked_bridge::kernel::{Family, Kernel, KernelSpec};
use tracked_bridge::rng::RngStream;
use tracked_bridge::sampler::sample_tracked_bridge;

#[derive(Parser)]
#[command(
    name = "tbridge",
    version,
    about = "Shape statistics of tracked Brownian bridges"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Large-intensity table from closed forms, cross-checked by quadrature.
    Analytic(AnalyticArgs),
    /// Emit one tracked bridge.
    Sample(SampleArgs),
    /// Monte Carlo estimates against the large-intensity values.
    Sweep(SweepArgs),
    /// Aligned-ensemble kernel density grid.
    Density(DensityArgs),
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel family: uniform, exponential, triangular, inverted-triangular, u-shaped, tabulated.
    #[arg(long)]
    kernel: Option<Family>,
    /// Parameter value, list `1,2,5` or inclusive range `start:stop:step`.
    #[arg(long, allow_hyphen_values = true)]
    param: Option<String>,
    /// CSV file with header `t,mu` for a tabulated kernel.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
}

impl KernelArgs {
    fn specs(&self) -> Result<Vec<KernelSpec>> {
        let family = match (self.kernel, &self.kernel_file) {
            (None, Some(_)) | (Some(Family::Tabulated), _) => Family::Tabulated,
            (Some(f), _) => f,
            (None, None) => bail!("--kernel is required"),
        };
        if family == Family::Tabulated {
            let path = self
                .kernel_file
                .as_ref()
                .context("tabulated kernels need --kernel-file")?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            return Ok(vec![KernelSpec::tabulated_from_csv(file)?]);
        }
        let text = self.param.as_deref().context("--param is required")?;
        let specs = parse_values(text)?
            .into_iter()
            .map(|p| family.with_param(p))
            .collect::<tracked_bridge::Result<Vec<_>>>()?;
        Ok(specs)
    }

    fn single(&self) -> Result<KernelSpec> {
        let mut specs = self.specs()?;
        if specs.len() != 1 {
            bail!("expected a single kernel parameter, got {}", specs.len());
        }
        Ok(specs.remove(0))
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<TableFormat>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

impl From<TableFormat> for Format {
    fn from(f: TableFormat) -> Self {
        match f {
            TableFormat::Csv => Format::Csv,
            TableFormat::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Absolute tolerance for the quadrature cross-check.
    #[arg(long, default_value_t = tracked_bridge::analytic::DEFAULT_TOL)]
    tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Observation intensity.
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate index within the seed's family of streams.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML experiment file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Intensities, e.g. `20,100,1000`.
    #[arg(long)]
    c: Option<String>,
    /// Bridges per (parameter, intensity) cell.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    c: f64,
    /// Number of bridges.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    bandwidth: f64,
    /// Fixed grid bounds `x_min,x_max,y_min,y_max`; fitted to the data when omitted.
    #[arg(long, allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Grid nodes per axis.
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` (x,y,density rows), `json`, or `bin` (little-endian grid file).
    #[arg(long, value_enum, default_value_t = GridFormat::Csv)]
    format: GridFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridFormat {
    Csv,
    Json,
    Bin,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn analytic(args: AnalyticArgs) -> Result<()> {
    let specs = args.kernel.specs()?;
    let rows = run_analytic_table(&specs, args.tol);
    let mut out = open_out(args.output.out.as_deref())?;
    match args.output.format.unwrap_or(TableFormat::Csv) {
        TableFormat::Csv => write_analytic_csv(&rows, &mut out)?,
        TableFormat::Json => writeln!(out, "{}", to_json(&rows)?)?,
    }
    out.flush()?;
    for r in rows.iter().filter(|r| r.flagged) {
        eprintln!(
            "warning: {} {} flagged: {}",
            r.row.family,
            r.row.param.map(|p| p.to_string()).unwrap_or_default(),
            r.note
                .as_deref()
                .unwrap_or("closed form and quadrature disagree")
        );
    }
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let kernel = Kernel::new(args.kernel.single()?)?;
    let mut rng = RngStream::new(args.seed, args.stream);
    let bridge = sample_tracked_bridge(&kernel, args.c, &mut rng)?;
    let mut out = open_out(args.output.out.as_deref())?;
    match args.output.format.unwrap_or(TableFormat::Csv) {
        TableFormat::Csv => bridge.write_csv(&mut out)?,
        TableFormat::Json => writeln!(out, "{}", bridge.to_json()?)?,
    }
    out.flush()?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            ConfigFile::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => {
            let kernels = args.kernel.specs()?;
            let intensities = match &args.c {
                Some(c) => parse_values(c)?,
                None => tracked_bridge::experiments::DEFAULT_INTENSITIES.to_vec(),
            };
            ExperimentConfig::new(
                kernels,
                intensities,
                args.n.unwrap_or(DEFAULT_ENSEMBLE_SIZE),
                0,
            )?
        }
    };
    if args.config.is_some() && (args.kernel.kernel.is_some() || args.kernel.kernel_file.is_some())
    {
        config.kernels = args.kernel.specs()?;
    }
    if args.config.is_some() {
        if let Some(c) = &args.c {
            config.intensities = parse_values(c)?;
        }
        if let Some(n) = args.n {
            config.ensemble_size = n;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(tol) = args.tol {
        config.quadrature_tol = tol;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    if let Some(out) = args.output.out {
        config.output.path = Some(out);
    }
    if let Some(f) = args.output.format {
        config.output.format = f.into();
    }
    if config.ensemble_size < MIN_ENSEMBLE_SIZE {
        bail!("--n must be at least {MIN_ENSEMBLE_SIZE}");
    }
    config.validate()?;

    let rows = run_sweep(&config)?;
    let mut out = open_out(config.output.path.as_deref())?;
    match config.output.format {
        Format::Csv => write_sweep_csv(&rows, &mut out)?,
        Format::Json => writeln!(out, "{}", to_json(&rows)?)?,
    }
    out.flush()?;
    Ok(())
}

fn parse_bounds(text: &str, resolution: usize) -> Result<GridSpec> {
    let v = parse_values(text)?;
    let [x_min, x_max, y_min, y_max] = v[..] else {
        bail!("--bounds needs four numbers, got {}", v.len());
    };
    let grid = GridSpec {
        x_min,
        x_max,
        y_min,
        y_max,
        nx: resolution,
        ny: resolution,
    };
    grid.validate()?;
    Ok(grid)
}

fn density(args: DensityArgs) -> Result<()> {
    let mut config = DensityConfig::new(args.kernel.single()?, args.c);
    config.bridges = args.n;
    config.seed = args.seed;
    config.bandwidth = args.bandwidth;
    config.resolution = args.resolution;
    config.threads = args.threads;
    config.grid = args
        .bounds
        .as_deref()
        .map(|b| parse_bounds(b, args.resolution))
        .transpose()?;

    let result = run_density(&config)?;
    eprintln!(
        "pooled {} points from {} bridges ({} degenerate bridges skipped)",
        result.points, result.used, result.skipped
    );
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        GridFormat::Csv => result.grid.write_csv(&mut out)?,
        GridFormat::Json => {
            let g = &result.grid;
            let json = serde_json::json!({
                "grid": g.grid,
                "values": g.values,
                "bridges": result.used,
                "skipped": result.skipped,
                "points": result.points,
            });
            writeln!(out, "{json}")?;
        }
        GridFormat::Bin => {
            if args.out.is_none() {
                bail!("--format bin needs --out");
            }
            out.write_all(&result.grid.to_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Analytic(a) => analytic(a),
        Command::Sample(a) => sample(a),
        Command::Sweep(a) => sweep(a),
        Command::Density(a) => density(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
