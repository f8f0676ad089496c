use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsm_access::config::{parse_scenario, SimConfig, TruncationVariant};
use gsm_access::output::{run_summary, write_class_csv, write_histogram_csv};
use gsm_access::recipes::{mean_curve, reproduce, Figure, RecipeOptions};
use gsm_access::sweep::{parse_axis_values, sweep, write_csv, SweepAxis};
use gsm_access::{run, Error, Result, Scenario, Variant};

#[derive(Parser)]
#[command(name = "sim", version, about = "GSM/GPRS machine-type access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run(RunArgs),
    /// Run one simulation per axis value, variant and seed.
    Sweep(SweepArgs),
    /// Run a pinned figure recipe (fig4, fig6a, fig6b, fig6c).
    Reproduce(ReproduceArgs),
}

/// Flags that override config-file settings.
#[derive(Args)]
struct Overrides {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// legacy, agch or agch+eusf.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    warmup_s: Option<f64>,
    #[arg(long)]
    measure_s: Option<f64>,
    /// eUSF validity X in multiframes.
    #[arg(long)]
    eusf_x: Option<u32>,
    /// eUSF gap M_gap in multiframes.
    #[arg(long)]
    eusf_mgap: Option<u32>,
    #[arg(long)]
    separate_rach: bool,
    #[arg(long)]
    retain_on_usf_block: bool,
    /// mass_at_cap or renormalized.
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    frames_per_multiframe: Option<u32>,
    #[arg(long)]
    n_pdch: Option<u8>,
    #[arg(long)]
    agch_blocks: Option<u32>,
    #[arg(long)]
    rach_slots_per_frame: Option<u32>,
    /// Backoff window T in frames.
    #[arg(long)]
    backoff_window: Option<u32>,
    /// Response window S in frames.
    #[arg(long)]
    response_window: Option<u32>,
    /// RACH attempts per report.
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Bytes per radio block.
    #[arg(long)]
    block_payload: Option<u32>,
}

impl Overrides {
    fn build(&self) -> Result<SimConfig> {
        let mut c = match &self.config {
            Some(p) => SimConfig::load(p).map_err(|e| match e {
                Error::Io(io) => Error::config(format!("cannot read config `{}`: {io}", p.display())),
                other => other,
            })?,
            None => SimConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.variant {
            c.variant = v.parse()?;
        }
        if let Some(v) = self.warmup_s {
            c.warmup_s = v;
        }
        if let Some(v) = self.measure_s {
            c.measure_s = v;
        }
        if let Some(v) = self.eusf_x {
            c.eusf.valid_multiframes = v;
        }
        if let Some(v) = self.eusf_mgap {
            c.eusf.gap_multiframes = v;
        }
        c.separate_rach |= self.separate_rach;
        c.retain_on_usf_block |= self.retain_on_usf_block;
        if let Some(v) = &self.truncation {
            c.truncation = match v.as_str() {
                "mass_at_cap" => TruncationVariant::MassAtCap,
                "renormalized" => TruncationVariant::Renormalized,
                other => return Err(Error::config(format!("unknown truncation `{other}`"))),
            };
        }
        if let Some(v) = self.frames_per_multiframe {
            c.geometry.frames_per_multiframe = v;
        }
        if let Some(v) = self.n_pdch {
            c.geometry.n_pdch = v;
        }
        if let Some(v) = self.agch_blocks {
            c.geometry.agch_blocks = v;
        }
        if let Some(v) = self.rach_slots_per_frame {
            c.geometry.rach_slots_per_frame = v;
        }
        if let Some(v) = self.backoff_window {
            c.access.backoff_window = v;
        }
        if let Some(v) = self.response_window {
            c.access.response_window = v;
        }
        if let Some(v) = self.max_attempts {
            c.access.max_attempts = v;
        }
        if let Some(v) = self.block_payload {
            c.coding.block_payload = v;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Scenario file or built-in name (table1, table1_async).
    #[arg(long, default_value = "table1")]
    scenario: String,
    /// Rescale the asynchronous classes to this aggregate rate (per second).
    #[arg(long)]
    arrival_rate: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "table1")]
    scenario: String,
    /// arrival_rate, alarm_count or variant.
    #[arg(long)]
    axis: String,
    /// Comma-separated values or start:stop:step.
    #[arg(long)]
    values: String,
    #[arg(long, default_value = "legacy,agch,agch+eusf")]
    variants: String,
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    figure: String,
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long)]
    warmup_s: Option<f64>,
    #[arg(long)]
    measure_s: Option<f64>,
    /// Measurement window of the alarm recipe.
    #[arg(long)]
    alarm_measure_s: Option<f64>,
    /// λ grid for fig6a/fig6b, as a list or start:stop:step.
    #[arg(long)]
    rates: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::config(format!("bad seed `{s}`"))))
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    Ok(seeds)
}

fn parse_variants(text: &str) -> Result<Vec<Variant>> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

fn load(overrides: &Overrides, scenario: &str) -> Result<(SimConfig, Scenario, Vec<String>)> {
    let config = overrides.build()?;
    let warnings = config.validate()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let scenario = parse_scenario(scenario, &config.geometry()).map_err(|e| match e {
        Error::Io(io) => Error::config(format!("cannot read scenario `{scenario}`: {io}")),
        other => other,
    })?;
    Ok((config, scenario, warnings))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let (config, mut scenario, warnings) = load(&a.overrides, &a.scenario)?;
    if let Some(l) = a.arrival_rate {
        scenario.scale_async_rate(l)?;
    }
    let report = run(&config, &scenario)?;
    fs::create_dir_all(&a.out)?;
    write_class_csv(&report, create(&a.out, "run_classes.csv")?)?;
    write_histogram_csv(&report, create(&a.out, "run_histograms.csv")?)?;
    let summary = run_summary(&config, &report, &warnings);
    fs::write(a.out.join("run_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let (config, scenario, _) = load(&a.overrides, &a.scenario)?;
    let axis: SweepAxis = a.axis.parse()?;
    let values = parse_axis_values(axis, &a.values)?;
    let variants = parse_variants(&a.variants)?;
    let seeds = parse_seeds(&a.seeds)?;
    let rows = sweep(&config, &scenario, axis, &values, &variants, &seeds)?;
    fs::create_dir_all(&a.out)?;
    write_csv(axis, &rows, create(&a.out, "sweep.csv")?)?;

    let mut summary = format!("sweep over {axis}: {} points, {} rows\n", values.len(), rows.len());
    if axis != SweepAxis::Variant {
        summary.push_str("mean outage per point\n");
        for v in &variants {
            let curve = mean_curve(&rows, *v, |r| r.report.blocking.outage);
            let cells: Vec<String> = curve
                .iter()
                .map(|(x, y)| format!("{x}: {}", y.map_or("n/a".into(), |y| format!("{:.4}", y))))
                .collect();
            summary.push_str(&format!("  {v:<10} {}\n", cells.join("  ")));
        }
    }
    fs::write(a.out.join("sweep_summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {}", a.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_reproduce(a: &ReproduceArgs) -> Result<()> {
    let figure: Figure = a.figure.parse()?;
    let mut options = RecipeOptions {
        seeds: parse_seeds(&a.seeds)?,
        ..RecipeOptions::default()
    };
    if let Some(v) = a.warmup_s {
        options.warmup_s = v;
    }
    if let Some(v) = a.measure_s {
        options.measure_s = v;
    }
    if let Some(v) = a.alarm_measure_s {
        options.alarm_measure_s = v;
    }
    if let Some(r) = &a.rates {
        options.rates = parse_axis_values(SweepAxis::ArrivalRate, r)?
            .into_iter()
            .filter_map(|v| match v {
                gsm_access::sweep::AxisValue::Number(x) => Some(x),
                _ => None,
            })
            .collect();
    }
    if !(options.measure_s > 0.0 && options.warmup_s >= 0.0 && options.alarm_measure_s > 0.0) {
        return Err(Error::config("durations must be positive"));
    }
    let output = reproduce(figure, &options)?;
    let written = output.write(&a.out, &options)?;
    print!("{}", output.summary(&options));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
