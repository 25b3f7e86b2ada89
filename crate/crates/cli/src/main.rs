use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fdf_core::design::{design_filter, verify_design};
use fdf_core::engine::{self, run_observer, Decoupler, EventOutcome, Verdict};
use fdf_core::io::{self, RunConfig, Table};
use fdf_core::model::{build_single_section, discretize_foh, PuBases};
use fdf_core::sim::{self, HEALTHY_WINDOW};
use fdf_core::FilterDesign;

#[derive(Parser)]
#[command(name = "fdf", version, about = "Fault detection filter for a four-conductor transmission line")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesise the filter and print its verification report.
    Design {
        #[arg(short, long, default_value = "configs/table1.cfg")]
        config: PathBuf,
        /// Where to write the design JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle over the configured event table and write waveform CSV.
    Simulate {
        #[arg(short, long, default_value = "configs/table1.cfg")]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Override the configured noise amplitude (pu).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Run the observer over a waveform file and write diagnoses.
    Diagnose {
        #[arg(short, long)]
        waveforms: PathBuf,
        #[arg(short, long)]
        design: PathBuf,
        #[arg(short, long, default_value = "configs/table1.cfg")]
        config: PathBuf,
        /// Diagnoses as JSON lines (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Per-sample residual CSV.
        #[arg(long)]
        residuals: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Full event-table pipeline with a pass/fail summary against ground truth.
    E2e {
        #[arg(short, long, default_value = "configs/table1.cfg")]
        config: PathBuf,
        /// Directory for waveforms, design, diagnoses and residuals.
        #[arg(short, long)]
        out_dir: Option<PathBuf>,
    },
    /// Slice a residual CSV for external plotting.
    PlotData {
        #[arg(short, long)]
        residuals: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        t1: f64,
        /// Comma-separated columns, e.g. r1,r5.
        #[arg(long, value_delimiter = ',', default_value = "r1,r2,r3,r4,r5,r6,r7,r8")]
        channels: Vec<String>,
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    io::load_config(path).with_context(|| format!("config {}", path.display()))
}

fn build_design(cfg: &RunConfig) -> Result<FilterDesign> {
    let cont = build_single_section::<f64>(&cfg.line)?;
    let model = discretize_foh(&cont, cfg.sim.dt)?;
    Ok(design_filter(&model, cfg.mapping, &cfg.eigenvalues)?)
}

fn simulate(cfg: &RunConfig, noise: f64) -> Result<sim::Waveforms> {
    let w = sim::simulate(&cfg.events, &cfg.line, &cfg.sources, &cfg.sim)?;
    Ok(sim::add_noise(&w, noise, &cfg.line.bases(), cfg.seed)?)
}

fn bases_for(path: &Path, cfg: &RunConfig) -> PuBases {
    fs::read_to_string(io::meta_path(path))
        .ok()
        .and_then(|t| serde_json::from_str::<io::WaveformMeta>(&t).ok())
        .map(|m| PuBases { v_base: m.v_base, i_base: m.i_base })
        .unwrap_or_else(|| cfg.line.bases())
}

fn cmd_design(config: &Path, out: Option<&Path>) -> Result<bool> {
    let cfg = load_config(config)?;
    let t = Instant::now();
    let d = build_design(&cfg)?;
    let report = verify_design(&d);
    println!("{report}");
    println!("design time: {:.3} s", t.elapsed().as_secs_f64());
    if let Some(p) = out {
        io::write_design(&d, p)?;
        println!("wrote {}", p.display());
    }
    Ok(report.passed())
}

fn cmd_simulate(config: &Path, out: &Path, noise: Option<f64>) -> Result<bool> {
    let cfg = load_config(config)?;
    let t = Instant::now();
    let w = simulate(&cfg, noise.unwrap_or(cfg.noise_pu))?;
    io::write_waveforms(&w, out, &cfg.line.bases())?;
    println!("{} samples at dt = {} s in {:.2} s -> {}", w.len(), w.dt, t.elapsed().as_secs_f64(), out.display());
    Ok(true)
}

fn cmd_diagnose(
    waveforms: &Path,
    design: &Path,
    config: &Path,
    out: Option<&Path>,
    residuals: Option<&Path>,
    threshold: Option<f64>,
) -> Result<bool> {
    let cfg = load_config(config)?;
    let w = io::read_waveforms(waveforms)?;
    let d = io::read_design(design)?;
    let ddt = d.model.dt().unwrap_or(f64::NAN);
    if (ddt - w.dt).abs() > 1e-9 * w.dt {
        bail!("design dt {ddt} does not match waveform dt {}", w.dt);
    }
    let mut stream = cfg.stream;
    if let Some(t) = threshold {
        stream.threshold_pu = t;
    }
    let (u, y) = w.to_pu(&bases_for(waveforms, &cfg));
    let res = engine::run_stream(&u, &y, &d, &stream)?;
    for warn in &res.warnings {
        eprintln!("warning: {warn}");
    }
    match out {
        Some(p) => {
            io::write_diagnoses(&res.diagnoses, p)?;
            println!("{} diagnoses -> {}", res.diagnoses.len(), p.display());
        }
        None => {
            for dg in &res.diagnoses {
                println!("{}", io::diagnosis_line(dg)?);
            }
        }
    }
    if let Some(p) = residuals {
        let frames = run_observer(&d, stream.hold, &u, &y)?;
        io::write_residuals(&frames, p)?;
    }
    Ok(true)
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or("-".into(), |v| format!("{v:.prec$}"))
}

fn print_outcomes(outcomes: &[EventOutcome]) {
    println!(
        "{:>3}  {:<14} {:<14} {:>6}  {:>8} {:>9} {:>9} {:>7} {:>6}  result",
        "id", "expected", "verdict", "votes", "true km", "km", "raw km", "err %", "tol %"
    );
    for o in outcomes {
        println!(
            "{:>3}  {:<14} {:<14} {:>6}  {:>8} {:>9} {:>9} {:>7} {:>6}  {}",
            o.event_id,
            o.expected.label(),
            o.got.map_or("-".into(), |v| v.label()),
            format!("{}/{}", o.votes, o.total),
            fmt_opt(o.true_km, 3),
            fmt_opt(o.location_km, 3),
            fmt_opt(o.location_uncorrected_km, 3),
            fmt_opt(o.error_pct, 3),
            fmt_opt(o.tolerance_pct, 1),
            if o.pass() { "PASS" } else { "FAIL" }
        );
    }
}

fn cmd_e2e(config: &Path, out_dir: Option<&Path>) -> Result<bool> {
    let cfg = load_config(config)?;
    let t = Instant::now();
    let d = build_design(&cfg)?;
    let report = verify_design(&d);
    let w = simulate(&cfg, cfg.noise_pu)?;
    let t_sim = t.elapsed().as_secs_f64();
    let (u, y) = w.to_pu(&cfg.line.bases());
    let frames = run_observer(&d, cfg.stream.hold, &u, &y)?;
    let windows = engine::window_diagnoses(&frames, cfg.sim.dt, &Decoupler::new(&d)?, &cfg.stream);
    let windows: Vec<_> = windows.into_iter().filter(|x| x.t0 >= cfg.stream.startup_s - 1e-12).collect();
    let diagnoses = engine::merge_windows(&windows, cfg.line.length_km);
    let outcomes = engine::evaluate_events(&windows, &cfg.events, cfg.line.length_km);
    let alarms = engine::false_alarms(&windows, HEALTHY_WINDOW.0, HEALTHY_WINDOW.1);
    let elapsed = t.elapsed().as_secs_f64();

    println!("design checks: {}", if report.passed() { "PASS" } else { "FAIL" });
    println!(
        "healthy window {:.1}-{:.1} s: {} false verdict(s)",
        HEALTHY_WINDOW.0,
        HEALTHY_WINDOW.1,
        alarms.len()
    );
    print_outcomes(&outcomes);
    let merged_events = diagnoses.iter().filter(|x| x.verdict != Verdict::None).count();
    println!("{} merged diagnoses ({} not none)", diagnoses.len(), merged_events);
    println!("simulation {:.2} s, total {:.2} s", t_sim, elapsed);

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        io::write_waveforms(&w, &dir.join("waveforms.csv"), &cfg.line.bases())?;
        io::write_design(&d, &dir.join("design.json"))?;
        io::write_diagnoses(&diagnoses, &dir.join("diagnoses.jsonl"))?;
        io::write_residuals(&frames, &dir.join("residuals.csv"))?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&outcomes)?)?;
        println!("outputs in {}", dir.display());
    }
    Ok(report.passed() && alarms.is_empty() && outcomes.iter().all(EventOutcome::pass))
}

fn cmd_plot(residuals: &Path, t0: f64, t1: f64, channels: &[String], every: usize, out: &Path) -> Result<bool> {
    let table: Table = io::read_table(residuals).with_context(|| format!("reading {}", residuals.display()))?;
    let slice = io::slice_table(&table, t0, t1, channels, every)?;
    io::write_table(&slice, out)?;
    println!("{} rows x {} columns -> {}", slice.rows.len(), slice.columns.len(), out.display());
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Design { config, out } => cmd_design(&config, out.as_deref()),
        Cmd::Simulate { config, out, noise } => cmd_simulate(&config, &out, noise),
        Cmd::Diagnose { waveforms, design, config, out, residuals, threshold } => {
            cmd_diagnose(&waveforms, &design, &config, out.as_deref(), residuals.as_deref(), threshold)
        }
        Cmd::E2e { config, out_dir } => cmd_e2e(&config, out_dir.as_deref()),
        Cmd::PlotData { residuals, t0, t1, channels, every, out } => cmd_plot(&residuals, t0, t1, &channels, every, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
