//! Command-line front end: synthesize profiles, freeze plans, simulate
//! scenarios, compare strategies, and re-render saved results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eclip_sim::allocator::SlowdownMode;
use eclip_sim::metrics::normalize;
use eclip_sim::output;
use eclip_sim::profiles::{
    synthesize_profile, write_profiles, HardwareSpec, KneeDistribution, ModelProfile,
    SynthesisParams,
};
use eclip_sim::scenario::{
    load_mix, plan_for_mode, run_mix, run_scenario, MixSpec, PartitioningMode, ScenarioSpec,
};

#[derive(Parser)]
#[command(name = "eclip-sim", version, about = "Energy-aware co-location simulator for a CU-partitioned accelerator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kernel profile tooling.
    Profile {
        #[command(subcommand)]
        cmd: ProfileCmd,
    },
    /// Freeze per-kernel CU configs for one strategy and write the lookup table.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategy to plan for.
        #[arg(long, value_parser = parse_mode, default_value = "eclip")]
        mode: PartitioningMode,
    },
    /// Simulate one strategy and write its artifacts.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategy to simulate.
        #[arg(long, value_parser = parse_mode)]
        mode: PartitioningMode,
        /// Table format for the metrics artifact.
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
    },
    /// Simulate every strategy in the config and write the comparison report.
    Mix {
        #[command(flatten)]
        common: CommonArgs,
        /// Table format for the report artifact.
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
    },
    /// Re-render saved results into a normalized report.
    Report {
        /// A results.json produced by `run` or `mix`.
        results: PathBuf,
        /// Scenario to normalize against.
        #[arg(long, default_value = "baseline")]
        baseline: String,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
        /// Output directory. ECLIP_SIM_OUT overrides this.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Generate synthetic kernel profiles and write them as one profile file.
    Synth {
        /// Model to generate, as NAME:KERNEL_COUNT. Repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        /// Base seed; model i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Knee placement: uniform, fixed:CUS, or weighted:W15,W30,W45,W60.
        #[arg(long, default_value = "uniform")]
        knees: String,
        /// Shortest largest-config kernel time, in microseconds.
        #[arg(long, default_value_t = 2.0)]
        base_min_us: f64,
        /// Longest largest-config kernel time, in microseconds.
        #[arg(long, default_value_t = 200.0)]
        base_max_us: f64,
        /// Slowdown growth below the knee.
        #[arg(long, default_value_t = 1.0)]
        decay: f64,
        /// Residual slope above the knee; 0 gives flat plateaus.
        #[arg(long, default_value_t = 0.0)]
        plateau_variation: f64,
        /// Output profile file. ECLIP_SIM_OUT/<file name> overrides the directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Knobs shared by plan, run, and mix.
#[derive(Args)]
struct CommonArgs {
    /// Mix description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's repartitioning budget.
    #[arg(long)]
    switch_max: Option<u32>,
    /// Override the config's slowdown attribution.
    #[arg(long, value_parser = parse_slowdown)]
    slowdown_mode: Option<SlowdownMode>,
    /// Keep only the first N workers of the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory. ECLIP_SIM_OUT overrides this.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

fn parse_mode(s: &str) -> Result<PartitioningMode, String> {
    s.parse()
}

fn parse_slowdown(s: &str) -> Result<SlowdownMode, String> {
    s.parse()
}

fn parse_knees(s: &str) -> Result<KneeDistribution, String> {
    if s == "uniform" {
        return Ok(KneeDistribution::Uniform);
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        let cus: u32 = rest
            .parse()
            .map_err(|_| format!("fixed knee {rest:?} is not a CU count"))?;
        return Ok(KneeDistribution::Fixed(cus));
    }
    if let Some(rest) = s.strip_prefix("weighted:") {
        let weights: Result<Vec<f64>, _> = rest.split(',').map(str::parse).collect();
        return weights
            .map(KneeDistribution::Weighted)
            .map_err(|_| format!("weights {rest:?} must be comma-separated numbers"));
    }
    if let Some(rest) = s.strip_prefix("phased:") {
        let (len, jitter) = rest
            .split_once(':')
            .ok_or_else(|| format!("phased knees {rest:?} are not LEN:JITTER"))?;
        let phase_len: usize = len
            .parse()
            .map_err(|_| format!("phase length {len:?} is not a number"))?;
        let jitter: f64 = jitter
            .parse()
            .map_err(|_| format!("jitter {jitter:?} is not a number"))?;
        return Ok(KneeDistribution::Phased { phase_len, jitter });
    }
    Err(format!(
        "unknown knee distribution {s:?} (expected uniform, fixed:CUS, weighted:W,W,W,W, or phased:LEN:JITTER)"
    ))
}

/// The output directory: ECLIP_SIM_OUT wins over the flag.
fn resolve_out(flag: &PathBuf) -> PathBuf {
    match std::env::var("ECLIP_SIM_OUT") {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.clone(),
    }
}

/// Load the config and apply the shared overrides.
fn load_with_overrides(common: &CommonArgs) -> Result<MixSpec, String> {
    let mut mix = load_mix(&common.config).map_err(|e| e.to_string())?;
    if let Some(seed) = common.seed {
        mix.scenario.seed = seed;
    }
    if let Some(sm) = common.switch_max {
        mix.scenario.switch_max = sm;
    }
    if let Some(mode) = common.slowdown_mode {
        mix.scenario.slowdown_mode = mode;
    }
    if let Some(n) = common.workers {
        if n == 0 || n > mix.scenario.workers.len() {
            return Err(format!(
                "--workers {n} is outside 1..={}",
                mix.scenario.workers.len()
            ));
        }
        mix.scenario.workers.truncate(n);
    }
    Ok(mix)
}

fn scenario_for(mix: &MixSpec, mode: PartitioningMode) -> ScenarioSpec {
    ScenarioSpec {
        name: mode.as_str().to_string(),
        mode,
        ..mix.scenario.clone()
    }
}

fn write(path: &std::path::Path, text: &str) -> Result<(), String> {
    output::write_text(path, text).map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth(
    models: &[String],
    seed: u64,
    knees: &str,
    base: (f64, f64),
    decay: f64,
    plateau_variation: f64,
    out: &PathBuf,
) -> Result<(), String> {
    let knees = parse_knees(knees)?;
    let hardware = HardwareSpec::default();
    let mut profiles: Vec<ModelProfile> = Vec::new();
    for (i, spec) in models.iter().enumerate() {
        let (name, count) = spec
            .split_once(':')
            .ok_or_else(|| format!("model spec {spec:?} is not NAME:KERNEL_COUNT"))?;
        let count: usize = count
            .parse()
            .map_err(|_| format!("kernel count in {spec:?} is not a number"))?;
        let params = SynthesisParams {
            name: name.to_string(),
            knees: knees.clone(),
            base_time_us: base,
            decay,
            plateau_variation,
            hardware: hardware.clone(),
        };
        let profile =
            synthesize_profile(count, &params, seed.wrapping_add(i as u64)).map_err(|e| e.to_string())?;
        profiles.push(profile);
    }
    let out = match std::env::var("ECLIP_SIM_OUT") {
        Ok(v) if !v.is_empty() => {
            let name = out.file_name().ok_or("--out needs a file name")?;
            PathBuf::from(v).join(name)
        }
        _ => out.clone(),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
    }
    write_profiles(&out, &profiles, &hardware).map_err(|e| e.to_string())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_plan(common: &CommonArgs, mode: PartitioningMode) -> Result<(), String> {
    let mix = load_with_overrides(common)?;
    let spec = scenario_for(&mix, mode);
    let table = plan_for_mode(&spec).map_err(|e| e.to_string())?;
    let out = resolve_out(&common.out);
    write(&out.join(format!("table-{mode}.json")), &table.to_json())
}

fn cmd_run(common: &CommonArgs, mode: PartitioningMode, format: OutFormat) -> Result<(), String> {
    let mix = load_with_overrides(common)?;
    let spec = scenario_for(&mix, mode);
    let (table, timeline, result) = run_scenario(&spec).map_err(|e| e.to_string())?;
    let out = resolve_out(&common.out);
    write(&out.join(format!("table-{mode}.json")), &table.to_json())?;
    let results = vec![result];
    match format {
        OutFormat::Csv => write(
            &out.join(format!("metrics-{mode}.csv")),
            &output::results_csv(&results),
        )?,
        OutFormat::Json => write(
            &out.join(format!("metrics-{mode}.json")),
            &output::results_json(&results).map_err(|e| e.to_string())?,
        )?,
    }
    write(
        &out.join(format!("results-{mode}.json")),
        &output::results_json(&results).map_err(|e| e.to_string())?,
    )?;
    write(
        &out.join(format!("requests-{mode}.csv")),
        &output::requests_csv(&timeline),
    )?;
    write(
        &out.join(format!("events-{mode}.ndjson")),
        &output::events_ndjson(&timeline).map_err(|e| e.to_string())?,
    )?;
    write(
        &out.join(format!("busy-{mode}.ndjson")),
        &output::busy_ndjson(&timeline).map_err(|e| e.to_string())?,
    )
}

fn cmd_mix(common: &CommonArgs, format: OutFormat) -> Result<(), String> {
    let mix = load_with_overrides(common)?;
    let outcome = run_mix(&mix).map_err(|e| e.to_string())?;
    let out = resolve_out(&common.out);
    for (name, table) in &outcome.tables {
        write(&out.join(format!("table-{name}.json")), &table.to_json())?;
    }
    write(
        &out.join("results.json"),
        &output::results_json(&outcome.results).map_err(|e| e.to_string())?,
    )?;
    write(&out.join("switches.csv"), &output::switches_csv(&outcome.switches))?;
    match format {
        OutFormat::Csv => write(&out.join("report.csv"), &output::report_csv(&outcome.report))?,
        OutFormat::Json => write(
            &out.join("report.json"),
            &output::report_json(&outcome.report).map_err(|e| e.to_string())?,
        )?,
    }
    for row in &outcome.report.rows {
        if row.worker.is_none() {
            println!(
                "{}: norm_throughput={:.4} norm_p95={:.4} norm_energy={:.4} norm_efficiency={:.4}",
                row.scenario, row.norm_throughput, row.norm_p95, row.norm_energy, row.norm_efficiency
            );
        }
    }
    Ok(())
}

fn cmd_report(
    results: &PathBuf,
    baseline: &str,
    format: OutFormat,
    out: &PathBuf,
) -> Result<(), String> {
    let loaded = output::read_results(results).map_err(|e| e.to_string())?;
    let report = normalize(&loaded, baseline).map_err(|e| e.to_string())?;
    let out = resolve_out(out);
    match format {
        OutFormat::Csv => write(&out.join("report.csv"), &output::report_csv(&report)),
        OutFormat::Json => write(
            &out.join("report.json"),
            &output::report_json(&report).map_err(|e| e.to_string())?,
        ),
    }
}

fn real_main() -> Result<(), String> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Profile {
            cmd:
                ProfileCmd::Synth {
                    models,
                    seed,
                    knees,
                    base_min_us,
                    base_max_us,
                    decay,
                    plateau_variation,
                    out,
                },
        } => cmd_synth(
            models,
            *seed,
            knees,
            (*base_min_us, *base_max_us),
            *decay,
            *plateau_variation,
            out,
        ),
        Cmd::Plan { common, mode } => cmd_plan(common, *mode),
        Cmd::Run {
            common,
            mode,
            format,
        } => cmd_run(common, *mode, *format),
        Cmd::Mix { common, format } => cmd_mix(common, *format),
        Cmd::Report {
            results,
            baseline,
            format,
            out,
        } => cmd_report(results, baseline, *format, out),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
