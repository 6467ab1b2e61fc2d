//! Command-line front end: configuration loading, experiment orchestration and output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assess::assess;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{homogeneous_medium, Medium};
use crate::inversion::{evaluate_model, layer_peeling_inversion};
use crate::io;
use crate::objective::{camembert_family, Acquisition, ObjectiveContext, ObjectiveKind};
use crate::passive::{calibration_factor, empirical_cross_correlation, passive_data_series};
use crate::passive::record_noise_traces;
use crate::rom::{build_rom, verify_data_fit};
use crate::wave::ResponseRecord;

#[derive(Debug, Parser)]
#[command(name = "wrom", version, about = "Data-driven reduced order models for waveform inversion")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named parameter set applied before the configuration file.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override as `section.key=value`; repeatable.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded run with byte-identical outputs.
    #[arg(long, global = true)]
    pub reference_mode: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Array response of the configured medium.
    Simulate,
    /// Data series `D_j`, `D̈_j` from array traces.
    Transform {
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Reduced order model and data-fit report.
    Rom {
        /// Data series stem written by `transform`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Objective values over a two-parameter sweep.
    Landscape {
        /// Also write log-objective PGM images.
        #[arg(long)]
        pgm: bool,
    },
    /// Layer-peeling Gauss-Newton inversion.
    Invert {
        /// Measured traces; simulated from the configured medium when absent.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Passive acquisition: noise correlations and the data series they yield.
    Passive,
    /// Correlation of an estimate with the true medium over the inversion region.
    Assess {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Time-reversal refocusing in the true, estimated and reference media.
    TimeReversal {
        /// True medium; the configured medium when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Prints the effective configuration.
    ShowConfig,
    /// Lists the named parameter sets.
    Presets,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.preset {
        Some(name) => Config::preset(name)?,
        None => Config::default(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        config.merge(&Config::parse(&text)?);
    }
    for assignment in &cli.overrides {
        config.set_assignment(assignment)?;
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let threads = if cli.reference_mode { Some(1) } else { cli.threads };
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(cli))
    } else {
        dispatch(cli)
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Presets = cli.command {
        for name in Config::preset_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let config = load_config(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", config.serialize());
        return Ok(());
    }
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => cmd_simulate(&config, out),
        Command::Transform { traces } => cmd_transform(&config, out, traces.as_deref()),
        Command::Rom { data } => cmd_rom(&config, out, data.as_deref()),
        Command::Landscape { pgm } => cmd_landscape(&config, out, *pgm),
        Command::Invert { traces } => cmd_invert(&config, out, traces.as_deref()),
        Command::Passive => cmd_passive(&config, out),
        Command::Assess { truth, estimate } => cmd_assess(&config, out, truth, estimate),
        Command::TimeReversal { truth, estimate } => {
            cmd_time_reversal(&config, out, truth.as_deref(), estimate)
        }
        Command::ShowConfig | Command::Presets => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn report(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn setup(config: &Config) -> Result<(Medium, Acquisition)> {
    let grid = config.grid()?;
    Ok((config.medium(&grid)?, config.acquisition(&grid)?))
}

fn load_traces(config: &Config, out: &Path, traces: Option<&Path>) -> Result<(ResponseRecord, Acquisition)> {
    let grid = config.grid()?;
    let acq = config.acquisition(&grid)?;
    let path = traces.map_or_else(|| out.join("traces.wromseq"), Path::to_path_buf);
    Ok((io::read_record(&path)?, acq))
}

pub fn cmd_simulate(config: &Config, out: &Path) -> Result<()> {
    let (truth, acq) = setup(config)?;
    let record = acq.simulate(&truth, acq.n)?;
    io::write_grid(&out.join("medium.wromgrid"), &truth)?;
    io::write_medium_pgm(&out.join("medium.pgm"), &truth)?;
    io::write_record(&out.join("traces.wromseq"), &record)?;
    write_text(&out.join("config.ini"), &config.serialize())
}

pub fn cmd_transform(config: &Config, out: &Path, traces: Option<&Path>) -> Result<()> {
    let (record, acq) = load_traces(config, out, traces)?;
    let series = acq.series(&record, acq.n)?;
    io::write_data_series(&out.join("data"), &series)
}

pub fn cmd_rom(config: &Config, out: &Path, data: Option<&Path>) -> Result<()> {
    let grid = config.grid()?;
    let acq = config.acquisition(&grid)?;
    let stem = data.map_or_else(|| out.join("data"), Path::to_path_buf);
    let series = io::read_data_series(&stem)?;
    let rom = build_rom(&series, acq.trunc_tol)?;
    let fit = verify_data_fit(&rom, &series);
    io::write_rom_pair(&out.join("rom"), &rom, series.tau())?;
    write_text(
        &out.join("rom_report.txt"),
        &report(&[
            ("tau_s", series.tau().to_string()),
            ("n", series.n().to_string()),
            ("m", series.m().to_string()),
            ("truncation_rank", fit.truncation_rank.to_string()),
            ("dim", fit.dim.to_string()),
            ("family1", format!("{:e}", fit.family1)),
            ("family2", format!("{:e}", fit.family2)),
            ("propagated", format!("{:e}", fit.propagated)),
            ("mass_residual", format!("{:e}", fit.mass_residual)),
        ]),
    )
}

/// Objective values of a sweep, row-major over `(p1, p2)`; failed points hold NaN.
pub fn sweep_values(
    ctx: &ObjectiveContext,
    kinds: &[ObjectiveKind],
    points: &[(f64, f64)],
    medium_at: impl Fn(f64, f64) -> Result<Medium> + Sync,
) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|&(a, b)| {
            medium_at(a, b)
                .and_then(|w| ctx.evaluate(kinds, &w))
                .unwrap_or_else(|_| vec![f64::NAN; kinds.len()])
        })
        .collect()
}

pub fn cmd_landscape(config: &Config, out: &Path, pgm: bool) -> Result<()> {
    let (truth, acq) = setup(config)?;
    let kinds = config.objectives()?;
    let (p1, p2) = config.sweep_axes()?;
    let family: String = config.get("sweep", "family")?;
    let ctx = ObjectiveContext::from_medium(acq, &truth)?;
    let points: Vec<(f64, f64)> = p1.iter().flat_map(|&a| p2.iter().map(move |&b| (a, b))).collect();
    let grid = *truth.grid();
    let c_ref = config.c_ref()?;
    let (names, values) = match family.as_str() {
        "layered" => {
            let base = config.layer()?;
            let values = sweep_values(&ctx, &kinds, &points, |depth, contrast| {
                let mut layer = base;
                layer.interface_depth = depth;
                layer.contrast = contrast;
                layer.medium(&grid, c_ref)
            });
            (("interface_depth_m", "contrast"), values)
        }
        "camembert" => {
            let path: PathBuf = config.get("sweep", "c_fwi_file")?;
            let c_fwi = io::read_grid(&path, c_ref)?;
            let values = sweep_values(&ctx, &kinds, &points, |alpha, beta| {
                camembert_family(&truth, &c_fwi, alpha, beta)
            });
            (("alpha", "beta"), values)
        }
        other => return Err(Error::Config(format!("unknown sweep family '{other}'"))),
    };
    let mut csv = format!("{},{}", names.0, names.1);
    for k in &kinds {
        csv.push(',');
        csv.push_str(k.name());
    }
    csv.push('\n');
    for (&(a, b), row) in points.iter().zip(&values) {
        csv.push_str(&format!("{a},{b}"));
        for v in row {
            csv.push_str(&format!(",{v:e}"));
        }
        csv.push('\n');
    }
    write_text(&out.join("landscape.csv"), &csv)?;
    if pgm {
        for (i, k) in kinds.iter().enumerate() {
            let logs: Vec<f64> = values.iter().map(|row| row[i].max(f64::MIN_POSITIVE).log10()).collect();
            io::write_pgm(&out.join(format!("landscape_{}.pgm", k.name())), p2.len(), p1.len(), &logs)?;
        }
    }
    Ok(())
}

pub fn cmd_invert(config: &Config, out: &Path, traces: Option<&Path>) -> Result<()> {
    let grid = config.grid()?;
    let acq = config.acquisition(&grid)?;
    let truth = match traces {
        Some(_) => None,
        None => Some(config.medium(&grid)?),
    };
    let ctx = match (traces, &truth) {
        (Some(path), _) => ObjectiveContext::from_record(acq, io::read_record(path)?)?,
        (None, Some(t)) => ObjectiveContext::from_medium(acq, t)?,
        (None, None) => unreachable!("a medium is built whenever traces are absent"),
    };
    let start = config.search_model()?;
    let gn = config.gauss_newton()?;
    let mut log = fs::File::create(out.join("inversion_log.csv"))?;
    writeln!(log, "window,iter,objective,mu,step_norm,wall_ms")?;
    let mut failure = None;
    let result = layer_peeling_inversion(&ctx, &start, &grid, &gn, |r, eta| {
        let line = writeln!(
            log,
            "{},{},{:e},{:e},{:e},{}",
            r.window, r.iter, r.objective, r.mu, r.step_norm, r.wall_ms
        );
        let checkpoint = DMatrix::from_column_slice(eta.len(), 1, eta.as_slice());
        let saved = io::write_mat(&out.join(format!("eta_window{}.wrommat", r.window)), &checkpoint);
        if let Err(e) = line.map_err(Error::from).and(saved) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (estimate, _) = evaluate_model(&result.model, &grid)?;
    io::write_grid(&out.join("estimate.wromgrid"), &estimate)?;
    io::write_medium_pgm(&out.join("estimate.pgm"), &estimate)?;
    let mut pairs = vec![
        ("objective", gn.objective.name().to_owned()),
        ("initial_objective", format!("{:e}", result.initial_objective)),
        ("final_objective", format!("{:e}", result.final_objective)),
        ("iterations", result.log.len().to_string()),
    ];
    if let (Some(t), Ok(region)) = (&truth, config.region()) {
        pairs.push(("corr2", assess(t, &estimate, &region)?.to_string()));
    }
    write_text(&out.join("invert_report.txt"), &report(&pairs))?;
    match result.diverged_window() {
        Some(q) => Err(Error::Divergence(format!(
            "objective increased over window {q} despite regularization increases"
        ))),
        None => Ok(()),
    }
}

pub fn cmd_passive(config: &Config, out: &Path) -> Result<()> {
    let (truth, acq) = setup(config)?;
    let grid = *truth.grid();
    let dt = acq.dt();
    let model = config.noise_model(&grid, acq.spec)?;
    let averaging: f64 = config.get("passive", "averaging_t_seconds")?;
    let burn_in: f64 = config.get_or("passive", "burn_in_seconds", 10.0 * model.attenuation_time)?;
    let samples = (averaging / dt).round() as usize;
    let lags = acq.options.fine_count(acq.n);
    let traces = record_noise_traces(
        &model,
        &truth,
        &acq.array,
        dt,
        (burn_in / dt).round() as usize,
        samples + lags,
    )?;
    let corr = empirical_cross_correlation(&traces, dt, samples, lags - 1)?;
    io::write_seq(
        &out.join("correlation.wromseq"),
        &io::MatrixSequence {
            dt,
            matrices: corr.values.clone(),
        },
    )?;
    let series = passive_data_series(&corr, model.attenuation_time, &acq.spec, acq.tau, acq.n, &acq.options)?;
    io::write_data_series(&out.join("passive_data"), &series)?;
    let active = acq.series(&acq.simulate(&truth, acq.n)?, acq.n)?;
    let num: f64 = series.d().iter().zip(active.d()).map(|(p, a)| (p - a).norm_squared()).sum();
    let den: f64 = active.d().iter().map(|a| a.norm_squared()).sum();
    write_text(
        &out.join("passive_report.txt"),
        &report(&[
            ("t_a_seconds", model.attenuation_time.to_string()),
            ("averaging_t_seconds", averaging.to_string()),
            ("relative_difference", format!("{:e}", (num / den).sqrt())),
            ("calibration_factor", format!("{:e}", calibration_factor(&series, &active))),
        ]),
    )
}

pub fn cmd_assess(config: &Config, out: &Path, truth: &Path, estimate: &Path) -> Result<()> {
    let c_ref = config.get_or("medium", "c_ref_m_per_s", 1.0)?;
    let t = io::read_grid(truth, c_ref)?;
    let e = io::read_grid(estimate, c_ref)?;
    let c = assess(&t, &e, &config.region()?)?;
    println!("corr2={c}");
    write_text(&out.join("assess.txt"), &report(&[("corr2", c.to_string())]))
}

pub fn cmd_time_reversal(config: &Config, out: &Path, truth: Option<&Path>, estimate: &Path) -> Result<()> {
    let grid = config.grid()?;
    let c_ref = config.c_ref()?;
    let truth = match truth {
        Some(p) => io::read_grid(p, c_ref)?,
        None => config.medium(&grid)?,
    };
    let estimate = io::read_grid(estimate, c_ref)?;
    let acq = config.acquisition(truth.grid())?;
    let tr = config.time_reversal(acq.spec, acq.dt())?;
    let traces = tr.record(&truth, &acq.array)?;
    let reference = homogeneous_medium(*truth.grid(), c_ref)?;
    let mut pairs = Vec::new();
    for (name, medium) in [("true", &truth), ("estimate", &estimate), ("reference", &reference)] {
        let r = tr.refocus(medium, &acq.array, &traces)?;
        let field = Medium::new(*medium.grid(), r.field.iter().map(|v| v.abs().max(f64::MIN_POSITIVE)).collect(), c_ref)?;
        io::write_grid(&out.join(format!("tr_{name}.wromgrid")), &field)?;
        io::write_medium_pgm(&out.join(format!("tr_{name}.pgm")), &field)?;
        pairs.push((name, format!("{:e}", r.focal_metric)));
    }
    let text: String = pairs.iter().map(|(k, v)| format!("focal_metric_{k}={v}\n")).collect();
    print!("{text}");
    write_text(&out.join("time_reversal.txt"), &text)
}
