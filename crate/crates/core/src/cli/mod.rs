//! Command-line front end. Every command writes CSV files plus a manifest into
//! the output directory.

pub mod config;
pub mod csv;
pub mod manifest;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::esr::{branch_esr_frequencies, esr_contrast_vs_temperature, exchange_lineshape, EsrError, ExchangeModel};
use crate::fit::{fit, FitError, FitModel, FitOptions, FitResult};
use crate::model::{zero_strain_levels, ModelError, StrainVector, SymmetryLabel, GHZ_PER_GPA};
use crate::photo::{
    excitation_spectrum, find_peaks, fit_oscillation_period, rabi_trace, strongest_line, transition_lines, GroundSublevel,
    PhotoError,
};
use crate::sweep::{averaged_splitting, detect_crossings, linear_grid, sweep, SweepError};
use config::{Config, ConfigError};
use csv::{format_number, parse_lines_csv, write_csv, Field, InputError};
use manifest::{file_digest, RunManifest};

pub const CONFIG_ENV: &str = "NVSIM_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}: {source}")]
    Input { path: String, source: InputError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Numerical(String),
    #[error("fit did not converge; results written but not trusted")]
    NotConverged,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Input { .. } | CliError::Io { .. } => 1,
            CliError::Numerical(_) | CliError::NotConverged => 2,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical_from!(ModelError, SweepError, PhotoError, EsrError);

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Model(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvsim", version, about = "NV- excited-state fine structure under transverse strain")]
struct Cli {
    /// Config file (flat key = value); falls back to $NVSIM_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct StrainArgs {
    /// Transverse strain, GHz.
    #[arg(long, value_name = "GHZ", conflicts_with = "gpa")]
    strain: Option<f64>,
    /// Transverse stress, GPa (10³ GHz per GPa).
    #[arg(long, value_name = "GPA")]
    gpa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Readout {
    Sz,
    Sxy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Zero-strain excited-state levels.
    Levels,
    /// Levels, characters and crossings along a strain sweep.
    Sweep,
    /// Optical transition table at one strain.
    Lines(StrainArgs),
    /// Photoluminescence excitation spectrum.
    Excitation {
        #[command(flatten)]
        strain: StrainArgs,
        /// Microwave mixing of the ground sublevels on (default).
        #[arg(long, conflicts_with = "mw_off")]
        mw_on: bool,
        #[arg(long)]
        mw_off: bool,
    },
    /// Rabi nutation read out on one optical line.
    Rabi {
        #[command(flatten)]
        strain: StrainArgs,
        #[arg(long, value_enum, default_value = "sz")]
        readout: Readout,
    },
    /// Motionally averaged ESR lineshape, or contrast against temperature.
    Odmr {
        #[arg(long)]
        temperature_scan: bool,
    },
    /// Branch-averaged ESR splitting against strain.
    Avg {
        #[arg(long, value_name = "GHZ")]
        max_strain: Option<f64>,
    },
    /// Fit fine-structure parameters to a `defect_id,line_ghz` CSV.
    Fit {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
}

/// Runs the command line; `argv[0]` is the program name. Returns the exit
/// code: 0 success, 1 usage or input error, 2 numerical failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let words: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &words) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match &path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            })?;
            Config::parse(&text).map_err(|source| CliError::Config {
                path: p.display().to_string(),
                source,
            })?
        }
        None => Config::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|source| CliError::Config {
            path: "--set".into(),
            source,
        })?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|source| CliError::Config {
        path: "resolved".into(),
        source,
    })?;
    Ok(cfg)
}

fn resolve_strain(cfg: &Config, a: &StrainArgs) -> Result<f64, CliError> {
    let s = match (a.strain, a.gpa) {
        (Some(s), _) => s,
        (None, Some(g)) => g * GHZ_PER_GPA,
        (None, None) => cfg.strain,
    };
    if !(s >= 0.0) || !s.is_finite() {
        return Err(CliError::Usage(format!("strain must be finite and >= 0, got {s}")));
    }
    Ok(s)
}

/// Collects output files and writes them with the manifest.
struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn io(&self, name: &str) -> impl Fn(std::io::Error) -> CliError {
        let path = self.dir.join(name).display().to_string();
        move |source| CliError::Io { path: path.clone(), source }
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Field>]) -> Result<(), CliError> {
        write_csv(&self.dir.join(name), header, rows).map_err(self.io(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), body).map_err(self.io(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, stem: &str, words: &[String], cfg: &Config, inputs: Vec<(String, String)>) -> Result<(), CliError> {
        let mut outputs = Vec::new();
        for f in &self.files {
            outputs.push((f.clone(), file_digest(&self.dir.join(f)).map_err(self.io(f))?));
        }
        let m = RunManifest {
            command: words.to_vec(),
            config: cfg.dump(),
            inputs,
            outputs,
        };
        let name = format!("{stem}.manifest.txt");
        m.write(&self.dir.join(&name)).map_err(self.io(&name))
    }
}

fn execute(cli: Cli, words: &[String]) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let mut out = Outputs::new(&cfg.output_dir)?;
    let mut inputs = Vec::new();
    let stem = match &cli.command {
        Command::Levels => {
            levels(&cfg, &mut out)?;
            "levels".to_string()
        }
        Command::Sweep => {
            sweep_cmd(&cfg, &mut out)?;
            "sweep".to_string()
        }
        Command::Lines(a) => {
            lines(&cfg, resolve_strain(&cfg, a)?, &mut out)?;
            "lines".to_string()
        }
        Command::Excitation { strain, mw_off, .. } => {
            let on = !*mw_off;
            excitation(&cfg, resolve_strain(&cfg, strain)?, on, &mut out)?;
            format!("excitation_mw_{}", if on { "on" } else { "off" })
        }
        Command::Rabi { strain, readout } => {
            rabi(&cfg, resolve_strain(&cfg, strain)?, *readout, &mut out)?;
            format!("rabi_{}", if *readout == Readout::Sz { "sz" } else { "sxy" })
        }
        Command::Odmr { temperature_scan } => {
            odmr(&cfg, *temperature_scan, &mut out)?;
            if *temperature_scan { "odmr_temperature" } else { "odmr" }.to_string()
        }
        Command::Avg { max_strain } => {
            avg(&cfg, max_strain.unwrap_or(cfg.sweep_max), &mut out)?;
            "avg".to_string()
        }
        Command::Fit { input } => {
            let text = fs::read_to_string(input).map_err(|source| CliError::Io {
                path: input.display().to_string(),
                source,
            })?;
            inputs.push((input.display().to_string(), manifest::sha256_hex(text.as_bytes())));
            let converged = fit_cmd(&cfg, input, &text, &mut out)?;
            out.finish("fit", words, &cfg, inputs)?;
            return if converged { Ok(()) } else { Err(CliError::NotConverged) };
        }
        Command::Config => unreachable!("handled above"),
    };
    out.finish(&stem, words, &cfg, inputs)
}

fn levels(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let lv = zero_strain_levels(&cfg.fine)?;
    let rows: Vec<Vec<Field>> = lv
        .iter()
        .map(|l| vec![l.label.name().into(), l.energy.into()])
        .collect();
    out.csv("levels.csv", &["label", "energy_ghz"], &rows)?;
    let at = |lab: SymmetryLabel| lv.iter().find(|l| l.label == lab).map(|l| l.energy).unwrap_or(f64::NAN);
    for l in &lv {
        println!("{:<4} {:>14}", l.label.name(), format_number(l.energy));
    }
    println!("A2 - A1 = {} GHz", format_number(at(SymmetryLabel::A2) - at(SymmetryLabel::A1)));
    Ok(())
}

fn sweep_cmd(cfg: &Config, out: &mut Outputs) -> Result<(), CliError> {
    let grid = linear_grid(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points);
    let sr = sweep(&cfg.fine, &grid, cfg.strain_angle())?;
    let mut rows = Vec::with_capacity(grid.len() * 6);
    for (i, &d) in sr.grid.iter().enumerate() {
        for k in 0..6 {
            let t = sr.track_at(i, k);
            let c = sr.tracks[t][i].character;
            rows.push(vec![
                d.into(),
                k.into(),
                t.into(),
                sr.levels[i][k].into(),
                c.p_sx.into(),
                c.p_sy.into(),
                c.p_sz.into(),
                sr.ambiguous[i].into(),
            ]);
        }
    }
    out.csv(
        "sweep.csv",
        &["delta_perp_ghz", "level", "track", "energy_ghz", "p_sx", "p_sy", "p_sz", "ambiguous"],
        &rows,
    )?;
    let crossings = detect_crossings(&sr, cfg.crossing_threshold)?;
    let rows: Vec<Vec<Field>> = crossings
        .iter()
        .map(|c| {
            vec![
                c.strain_at_min_gap.into(),
                c.lower_level.into(),
                c.track_a.into(),
                c.track_b.into(),
                c.min_gap.into(),
                c.avoided.into(),
                c.involves_ms0.into(),
            ]
        })
        .collect();
    out.csv(
        "crossings.csv",
        &["delta_perp_ghz", "lower_level", "track_a", "track_b", "min_gap_ghz", "avoided", "involves_ms0"],
        &rows,
    )?;
    for c in &crossings {
        println!(
            "gap minimum {} GHz at {} GHz (levels {}-{}, avoided {}, ms0 {})",
            format_number(c.min_gap),
            format_number(c.strain_at_min_gap),
            c.lower_level,
            c.lower_level + 1,
            c.avoided,
            c.involves_ms0
        );
    }
    Ok(())
}

fn strain_vector(cfg: &Config, perp: f64) -> StrainVector {
    StrainVector::from_polar(perp, cfg.strain_angle())
}

fn lines(cfg: &Config, perp: f64, out: &mut Outputs) -> Result<(), CliError> {
    let ls = transition_lines(&cfg.fine, &strain_vector(cfg, perp))?;
    let rows: Vec<Vec<Field>> = ls
        .iter()
        .map(|l| {
            vec![
                l.ground_sublevel.name().into(),
                l.excited_index.into(),
                l.detuning.into(),
                l.strength.into(),
                l.spin_conserving.into(),
                l.weak.into(),
            ]
        })
        .collect();
    out.csv(
        "lines.csv",
        &["ground", "excited_index", "detuning_ghz", "strength", "spin_conserving", "weak"],
        &rows,
    )
}

fn excitation(cfg: &Config, perp: f64, mw_on: bool, out: &mut Outputs) -> Result<(), CliError> {
    let s = strain_vector(cfg, perp);
    let ls = transition_lines(&cfg.fine, &s)?;
    let lo = ls.iter().map(|l| l.detuning).fold(f64::INFINITY, f64::min) - 1.0;
    let hi = ls.iter().map(|l| l.detuning).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let points = ((hi - lo) / cfg.excitation_step).ceil() as usize + 1;
    let grid = linear_grid(lo, hi, points);
    let spec = excitation_spectrum(&cfg.fine, &s, &cfg.rates, &grid, mw_on)?;
    let rows: Vec<Vec<Field>> = spec.iter().map(|&(x, y)| vec![x.into(), y.into()]).collect();
    let name = format!("excitation_mw_{}.csv", if mw_on { "on" } else { "off" });
    out.csv(&name, &["detuning_ghz", "pl_rate_per_ns"], &rows)?;
    for p in find_peaks(&spec, 0.05) {
        println!("peak {} GHz height {}", format_number(p.position), format_number(p.height));
    }
    Ok(())
}

fn rabi(cfg: &Config, perp: f64, readout: Readout, out: &mut Outputs) -> Result<(), CliError> {
    let s = strain_vector(cfg, perp);
    let ls = transition_lines(&cfg.fine, &s)?;
    let ground = match readout {
        Readout::Sz => GroundSublevel::Sz,
        Readout::Sxy => GroundSublevel::Sx,
    };
    let line = strongest_line(&ls, ground, true)
        .ok_or_else(|| CliError::Numerical(format!("no spin-conserving upper-branch line from {}", ground.name())))?;
    let taus = linear_grid(0.0, cfg.rabi_max_ns, cfg.rabi_points);
    let trace = rabi_trace(&cfg.fine, &s, &cfg.rates, cfg.rabi_omega, &line, &taus)?;
    let rows: Vec<Vec<Field>> = trace.iter().map(|&(t, c)| vec![t.into(), c.into()]).collect();
    let name = format!("rabi_{}.csv", if readout == Readout::Sz { "sz" } else { "sxy" });
    out.csv(&name, &["tau_ns", "counts"], &rows)?;
    println!("readout line {} -> level {} at {} GHz", ground.name(), line.excited_index, format_number(line.detuning));
    if let Some(period) = fit_oscillation_period(&trace) {
        println!("fitted period {} ns (2π/Ω = {} ns)", format_number(period), format_number(std::f64::consts::TAU / cfg.rabi_omega));
    }
    Ok(())
}

fn odmr(cfg: &Config, temperature_scan: bool, out: &mut Outputs) -> Result<(), CliError> {
    let s = strain_vector(cfg, cfg.esr_strain);
    if temperature_scan {
        let temps = linear_grid(cfg.temperature_min, cfg.temperature_max, cfg.temperature_points);
        let curve = esr_contrast_vs_temperature(&cfg.temperature_map, &cfg.fine, &s, cfg.esr_linewidth, &temps)?;
        let rows: Vec<Vec<Field>> = curve
            .iter()
            .map(|&(t, c)| vec![t.into(), cfg.temperature_map.hop_rate(t).into(), c.into()])
            .collect();
        return out.csv("odmr_temperature.csv", &["temperature_k", "hop_rate_per_ns", "contrast"], &rows);
    }
    let b = branch_esr_frequencies(&cfg.fine, &s)?;
    let m = ExchangeModel {
        freq_a: b.freq_a,
        freq_b: b.freq_b,
        linewidth_0: cfg.esr_linewidth,
        hop_rate: cfg.temperature_map.hop_rate(cfg.temperature),
        weight_a: 0.5,
    };
    let grid = linear_grid(cfg.odmr_min, cfg.odmr_max, cfg.odmr_points);
    let shape = exchange_lineshape(&m, &grid)?;
    let rows: Vec<Vec<Field>> = grid.iter().zip(&shape).map(|(&f, &i)| vec![f.into(), i.into()]).collect();
    println!(
        "branch frequencies {} / {} GHz, hop rate {} /ns at {} K",
        format_number(b.freq_a),
        format_number(b.freq_b),
        format_number(m.hop_rate),
        format_number(cfg.temperature)
    );
    out.csv("odmr.csv", &["frequency_ghz", "intensity"], &rows)
}

fn avg(cfg: &Config, max_strain: f64, out: &mut Outputs) -> Result<(), CliError> {
    if !(max_strain > 0.0) || !max_strain.is_finite() {
        return Err(CliError::Usage(format!("--max-strain must be > 0, got {max_strain}")));
    }
    let grid = linear_grid(0.0, max_strain, cfg.avg_points);
    let mut rows = Vec::with_capacity(grid.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &d in &grid {
        let a = averaged_splitting(&cfg.fine, &strain_vector(cfg, d))?;
        lo = lo.min(a);
        hi = hi.max(a);
        rows.push(vec![d.into(), a.into()]);
    }
    out.csv("avg.csv", &["delta_perp_ghz", "averaged_splitting_ghz"], &rows)?;
    println!("averaged splitting range [{}, {}] GHz", format_number(lo), format_number(hi));
    Ok(())
}

fn fit_cmd(cfg: &Config, input: &Path, text: &str, out: &mut Outputs) -> Result<bool, CliError> {
    let data = parse_lines_csv(text).map_err(|source| CliError::Input {
        path: input.display().to_string(),
        source,
    })?;
    let mut init = FitModel::new(&cfg.fine, data.len());
    init.strain_angle = cfg.strain_angle();
    if cfg.fit_free_lambda_perp {
        init = init.with_free_lambda_perp(2.0);
    }
    let r = fit(&data, &init, &FitOptions::default())?;
    let rows: Vec<Vec<Field>> = r
        .model
        .defects
        .iter()
        .zip(&data)
        .map(|(p, d)| vec![d.id.clone().into(), p.delta_perp.into(), p.offset.into(), d.lines.len().into()])
        .collect();
    out.csv("fit_strains.csv", &["defect_id", "delta_perp_ghz", "offset_ghz", "n_lines"], &rows)?;
    let report = fit_report(&r);
    out.text("fit_report.txt", &report)?;
    print!("{report}");
    Ok(r.converged)
}

fn fit_report(r: &FitResult) -> String {
    let mut s = String::new();
    let w = &mut s;
    let names = ["lambda_z", "d_es", "delta_cap", "lambda_perp"];
    for (name, g) in names.iter().zip(r.model.globals()) {
        let tag = if g.free { "free" } else { "fixed" };
        writeln!(w, "{name:<12} = {} GHz ({tag})", format_number(g.value)).unwrap();
    }
    writeln!(w, "rms          = {} GHz", format_number(r.rms)).unwrap();
    writeln!(w, "chi2         = {}", format_number(r.chi2)).unwrap();
    writeln!(w, "defects      = {}", r.model.defects.len()).unwrap();
    writeln!(w, "iterations   = {}", r.iterations).unwrap();
    writeln!(w, "evaluations  = {}", r.evaluations).unwrap();
    writeln!(w, "restarts     = {}", r.restarts).unwrap();
    writeln!(w, "simplex_size = {}", format_number(r.final_simplex_size)).unwrap();
    writeln!(w, "converged    = {}", r.converged).unwrap();
    writeln!(w, "[assignments] measured line -> predicted level (1-based)").unwrap();
    for a in &r.assignments {
        let pairs: Vec<String> = a.pairs.iter().map(|(m, p)| format!("{}->{}", m + 1, p + 1)).collect();
        writeln!(w, "{} {}", a.id, pairs.join(" ")).unwrap();
    }
    s
}
