//! Command-line front end: feeder validation, synthetic data generation,
//! batch optimization, controller training, closed-loop simulation, and
//! report merging.
//!
//! Exit codes: 0 success, 1 domain error (bad data, infeasible setup,
//! validation findings), 2 I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use voltvar_core::conic::IpmOptions;
use voltvar_core::control::{
    gap_report, simulate, ControllerSpec, LtcConfig, SimulationReport,
};
use voltvar_core::feeder::{parse_feeder, serialize_feeder, FeederModel};
use voltvar_core::opf::{solve_opf_batch, OpfConfig};
use voltvar_core::powerflow::SweepOptions;
use voltvar_core::regression::{train_models, ModelSet, StepwiseConfig};
use voltvar_core::report::{model_table, opf_csv, report_csv, summary_text};
use voltvar_core::scenario::{
    generate_synthetic, load_scenarios, serialize_scenarios, ScenarioSet, SynthConfig,
    TIMESTAMP_FMT,
};
use voltvar_core::synth::{generate_feeder, SynthFeederConfig};
use voltvar_core::{Error, Result};

const DEFAULT_PF: f64 = 0.92;

#[derive(Parser)]
#[command(
    name = "voltvar",
    version,
    about = "Radial feeder toolkit: validate models, synthesize data, optimize reactive dispatch, train local controllers, and compare control approaches"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a feeder file for structural problems
    Validate {
        /// Feeder description file
        feeder: PathBuf,
    },
    /// Generate a synthetic feeder and matching scenario data
    Synth(SynthArgs),
    /// Solve per-step optimal reactive dispatch over a scenario window
    Opf(RunArgs),
    /// Fit per-inverter controllers from optimal dispatch
    Train(RunArgs),
    /// Run control approaches in closed loop and report gaps
    Simulate(RunArgs),
    /// Merge simulation report files into one summary
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Total bus count including the substation
    #[arg(long, default_value_t = 129)]
    buses: usize,
    /// Number of days to generate
    #[arg(long, default_value_t = 28)]
    days: u32,
    /// Seed for every random draw
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Mean per-bus peak apparent power, kVA
    #[arg(long, default_value_t = 26.0)]
    peak_kva: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by the data-processing commands. Any of them may instead
/// come from a JSON config file; explicit flags win.
#[derive(Args, Default)]
struct RunArgs {
    /// Feeder description file
    #[arg(long)]
    feeder: Option<PathBuf>,
    /// Scenario CSV
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Trained model file (simulate)
    #[arg(long)]
    models: Option<PathBuf>,
    /// Voltage-deviation weight in the objective
    #[arg(long)]
    gamma: Option<f64>,
    /// Lower squared-voltage bound
    #[arg(long)]
    vmin: Option<f64>,
    /// Upper squared-voltage bound
    #[arg(long)]
    vmax: Option<f64>,
    /// Window start timestamp, inclusive (e.g. 2014-07-04T00:00:00)
    #[arg(long)]
    from: Option<String>,
    /// Window end timestamp, exclusive
    #[arg(long)]
    to: Option<String>,
    /// Control approach (repeatable): none, constpf, regression, regression-ltc
    #[arg(long)]
    approach: Vec<String>,
    /// Power factor for the constpf approach
    #[arg(long)]
    pf: Option<f64>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON config file supplying defaults for any flag
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report CSV files to merge
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write the merged summary here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

/// File-supplied counterpart of RunArgs.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    feeder: Option<PathBuf>,
    scenarios: Option<PathBuf>,
    models: Option<PathBuf>,
    gamma: Option<f64>,
    vmin: Option<f64>,
    vmax: Option<f64>,
    from: Option<String>,
    to: Option<String>,
    approach: Option<Vec<String>>,
    pf: Option<f64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
}

/// Effective settings after merging flags over the config file.
struct Run {
    feeder: PathBuf,
    scenarios: PathBuf,
    models: Option<PathBuf>,
    cfg: OpfConfig,
    from: Option<NaiveDateTime>,
    to: Option<NaiveDateTime>,
    approaches: Vec<String>,
    pf: f64,
    out: Option<PathBuf>,
}

fn parse_stamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FMT)
        .map_err(|e| Error::Config(format!("bad timestamp {s}: {e}")))
}

impl RunArgs {
    fn resolve(self) -> Result<Run> {
        let file: FileConfig = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => FileConfig::default(),
        };
        let feeder = self
            .feeder
            .or(file.feeder)
            .ok_or_else(|| Error::Config("no feeder file given (--feeder)".into()))?;
        let scenarios = self
            .scenarios
            .or(file.scenarios)
            .ok_or_else(|| Error::Config("no scenario file given (--scenarios)".into()))?;

        let mut cfg = OpfConfig::default();
        if let Some(g) = self.gamma.or(file.gamma) {
            cfg.gamma = g;
        }
        if let Some(v) = self.vmin.or(file.vmin) {
            cfg.v_min = v;
        }
        if let Some(v) = self.vmax.or(file.vmax) {
            cfg.v_max = v;
        }
        cfg.validate()?;

        if let Some(jobs) = self.jobs.or(file.jobs) {
            // a pool may already exist (tests, repeated calls); that's fine
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }

        let approaches = if self.approach.is_empty() {
            file.approach.unwrap_or_default()
        } else {
            self.approach
        };
        let pf = self.pf.or(file.pf).unwrap_or(0.9);
        if !(pf > 0.0 && pf <= 1.0) {
            return Err(Error::Config(format!(
                "power factor must lie in (0, 1], got {pf}"
            )));
        }

        Ok(Run {
            feeder,
            scenarios,
            models: self.models.or(file.models),
            cfg,
            from: self
                .from
                .or(file.from)
                .as_deref()
                .map(parse_stamp)
                .transpose()?,
            to: self.to.or(file.to).as_deref().map(parse_stamp).transpose()?,
            approaches,
            pf,
            out: self.out.or(file.out),
        })
    }
}

impl Run {
    fn load_feeder(&self) -> Result<FeederModel> {
        parse_feeder(&fs::read_to_string(&self.feeder)?)
    }

    fn load_window(&self, model: &FeederModel) -> Result<ScenarioSet> {
        let scen = load_scenarios(&fs::read_to_string(&self.scenarios)?, model, DEFAULT_PF)?;
        let scen = scen.slice(self.from, self.to);
        if scen.is_empty() {
            return Err(Error::Config(
                "selected scenario window is empty".into(),
            ));
        }
        Ok(scen)
    }

    fn out_path(&self, what: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config(format!("no output path for {what} (--out)")))
    }
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    buses: usize,
    days: u32,
    peak_kva: f64,
    start: &'a str,
    resolution_minutes: i64,
    feeder_file: &'a str,
    scenario_file: &'a str,
}

fn cmd_validate(path: &Path) -> Result<i32> {
    // parsing runs the structural checks; unwrap their report here so the
    // findings print as a list rather than a single error line
    match parse_feeder(&fs::read_to_string(path)?) {
        Ok(model) => {
            println!(
                "ok: {} buses, {} lines, {} inverters",
                model.buses.len(),
                model.lines.len(),
                model.inverters.len()
            );
            Ok(0)
        }
        Err(Error::InvalidFeeder(report)) => {
            println!("{report}");
            Ok(1)
        }
        Err(e) => Err(e),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let feeder_cfg = SynthFeederConfig {
        n_buses: args.buses,
        seed: args.seed,
        ..SynthFeederConfig::default()
    };
    let model = generate_feeder(&feeder_cfg)?;
    let scen_cfg = SynthConfig {
        days: args.days,
        seed: args.seed,
        peak_kva: args.peak_kva,
        ..SynthConfig::default()
    };
    let scen = generate_synthetic(&model, &scen_cfg)?;

    fs::create_dir_all(&args.out)?;
    let feeder_path = args.out.join("feeder.json");
    let scen_path = args.out.join("scenarios.csv");
    fs::write(&feeder_path, serialize_feeder(&model))?;
    fs::write(&scen_path, serialize_scenarios(&scen))?;
    let start = scen_cfg.start.format("%Y-%m-%d").to_string();
    let manifest = SynthManifest {
        seed: args.seed,
        buses: args.buses,
        days: args.days,
        peak_kva: args.peak_kva,
        start: &start,
        resolution_minutes: scen_cfg.resolution_minutes,
        feeder_file: "feeder.json",
        scenario_file: "scenarios.csv",
    };
    fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
    )?;
    println!(
        "wrote {} buses, {} inverters, {} timesteps to {}",
        model.buses.len(),
        model.inverters.len(),
        scen.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_opf(run: &Run) -> Result<i32> {
    let model = run.load_feeder()?;
    let scen = run.load_window(&model)?;
    let sols = solve_opf_batch(&model, &scen, &run.cfg, &IpmOptions::default())?;
    let solved = sols.iter().filter(|r| r.is_ok()).count();
    let exact = sols
        .iter()
        .filter(|r| r.as_ref().map(|s| s.exact).unwrap_or(false))
        .count();
    println!(
        "solved {solved}/{} steps, exact {exact}/{solved} ({:.1}%)",
        sols.len(),
        if solved > 0 {
            100.0 * exact as f64 / solved as f64
        } else {
            0.0
        }
    );
    for (t, res) in sols.iter().enumerate().filter(|(_, r)| r.is_err()).take(5) {
        println!("  step {t}: {}", res.as_ref().unwrap_err());
    }
    if solved == 0 {
        return Err(Error::Config(
            "every step failed to solve; review bounds and input data".into(),
        ));
    }
    fs::write(run.out_path("the solution csv")?, opf_csv(&model, &sols)?)?;
    Ok(0)
}

fn cmd_train(run: &Run) -> Result<i32> {
    let model = run.load_feeder()?;
    let scen = run.load_window(&model)?;
    let sols = solve_opf_batch(&model, &scen, &run.cfg, &IpmOptions::default())?;
    let set = train_models(&model, &scen, &sols, &run.cfg, &StepwiseConfig::default()).map_err(
        |e| match e {
            Error::Regression(msg) if msg.contains("no usable training samples") => {
                Error::Regression(format!(
                    "{msg}; review gamma and the voltage bounds, only exact optimizations yield training targets"
                ))
            }
            other => other,
        },
    )?;
    fs::write(run.out_path("the model file")?, set.to_json())?;
    print!("{}", model_table(&set));
    Ok(0)
}

fn spec_for(
    approach: &str,
    model: &FeederModel,
    models: &Option<ModelSet>,
    pf: f64,
) -> Result<(Vec<ControllerSpec>, bool)> {
    let regression_specs = || -> Result<Vec<ControllerSpec>> {
        let set = models.as_ref().ok_or_else(|| {
            Error::Config(format!("approach {approach} needs a model file (--models)"))
        })?;
        model
            .inverters
            .iter()
            .map(|inv| {
                let m = set.model_for(&inv.bus).ok_or_else(|| {
                    Error::Config(format!("model file has no entry for inverter {}", inv.bus))
                })?;
                Ok(ControllerSpec::regression(m.clone()))
            })
            .collect()
    };
    match approach {
        "none" => Ok((vec![ControllerSpec::none(); model.inverters.len()], false)),
        "constpf" => Ok((
            vec![ControllerSpec::const_pf(pf)?; model.inverters.len()],
            false,
        )),
        "regression" => Ok((regression_specs()?, false)),
        "regression-ltc" => Ok((regression_specs()?, true)),
        other => Err(Error::Config(format!(
            "unknown approach {other}; expected none, constpf, regression, or regression-ltc"
        ))),
    }
}

fn cmd_simulate(run: &Run) -> Result<i32> {
    if run.approaches.is_empty() {
        return Err(Error::Config(
            "no approaches requested (--approach)".into(),
        ));
    }
    let model = run.load_feeder()?;
    let scen = run.load_window(&model)?;
    let models: Option<ModelSet> = match &run.models {
        Some(path) => Some(ModelSet::from_json(&fs::read_to_string(path)?)?),
        None => None,
    };
    let sols = solve_opf_batch(&model, &scen, &run.cfg, &IpmOptions::default())?;
    let sweep = SweepOptions::default();
    let ltc = LtcConfig::default();

    let mut report: Option<SimulationReport> = None;
    for approach in &run.approaches {
        let (specs, use_ltc) = spec_for(approach, &model, &models, run.pf)?;
        let part = simulate(
            &model,
            &scen,
            &specs,
            use_ltc.then_some(&ltc),
            &run.cfg,
            &sweep,
        )?;
        match &mut report {
            Some(r) => r.merge(part)?,
            None => report = Some(part),
        }
    }
    let report = report.expect("at least one approach");
    let gaps = gap_report(&report, &sols)?;
    fs::write(
        run.out_path("the report csv")?,
        report_csv(&report, &gaps, scen.base_mva)?,
    )?;
    print!("{}", summary_text(&gaps, scen.base_mva));
    Ok(0)
}

#[derive(Default)]
struct MergedApproach {
    rows: usize,
    gaps: Vec<f64>,
    v_min: f64,
    v_max: f64,
    sub_p: (f64, f64),
    sub_q: (f64, f64),
    taps: Vec<i32>,
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let mut merged: BTreeMap<String, MergedApproach> = BTreeMap::new();
    for path in &args.reports {
        let text = fs::read_to_string(path)?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let head = rdr
            .headers()
            .map_err(|e| Error::ScenarioData(format!("{}: {e}", path.display())))?
            .clone();
        let col = |name: &str| -> Result<usize> {
            head.iter().position(|h| h == name).ok_or_else(|| {
                Error::ScenarioData(format!("{}: missing column {name}", path.display()))
            })
        };
        let (c_app, c_gap) = (col("approach")?, col("gap")?);
        let (c_vmin, c_vmax) = (col("v_min")?, col("v_max")?);
        let (c_p, c_q, c_tap) = (col("sub_p_kw")?, col("sub_q_kvar")?, col("tap")?);
        for record in rdr.records() {
            let rec = record.map_err(|e| Error::ScenarioData(format!("{}: {e}", path.display())))?;
            let entry = merged.entry(rec[c_app].to_string()).or_insert_with(|| {
                MergedApproach {
                    v_min: f64::INFINITY,
                    v_max: f64::NEG_INFINITY,
                    sub_p: (f64::INFINITY, f64::NEG_INFINITY),
                    sub_q: (f64::INFINITY, f64::NEG_INFINITY),
                    ..Default::default()
                }
            });
            let num = |field: &str| -> Result<f64> {
                field.parse().map_err(|_| {
                    Error::ScenarioData(format!("{}: bad number {field}", path.display()))
                })
            };
            entry.rows += 1;
            if !rec[c_gap].is_empty() {
                entry.gaps.push(num(&rec[c_gap])?);
            }
            entry.v_min = entry.v_min.min(num(&rec[c_vmin])?);
            entry.v_max = entry.v_max.max(num(&rec[c_vmax])?);
            let p = num(&rec[c_p])?;
            let q = num(&rec[c_q])?;
            entry.sub_p = (entry.sub_p.0.min(p), entry.sub_p.1.max(p));
            entry.sub_q = (entry.sub_q.0.min(q), entry.sub_q.1.max(q));
            if !rec[c_tap].is_empty() {
                entry.taps.push(rec[c_tap].parse().map_err(|_| {
                    Error::ScenarioData(format!("{}: bad tap {}", path.display(), &rec[c_tap]))
                })?);
            }
        }
    }
    if merged.is_empty() {
        return Err(Error::ScenarioData("no report rows found".into()));
    }

    let mut out = String::new();
    use std::fmt::Write as _;
    for (label, m) in &merged {
        let _ = writeln!(out, "approach {label}: {} rows", m.rows);
        if !m.gaps.is_empty() {
            let mut sorted = m.gaps.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
            let pick = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
            let _ = writeln!(
                out,
                "  gap vs optimum: mean {:.4}%  p50 {:.4}%  p90 {:.4}%  max {:.4}%",
                mean * 100.0,
                pick(0.5) * 100.0,
                pick(0.9) * 100.0,
                sorted.last().unwrap() * 100.0
            );
        }
        let _ = writeln!(out, "  voltage envelope: [{:.6}, {:.6}] p.u.^2", m.v_min, m.v_max);
        let _ = writeln!(
            out,
            "  substation P: [{:.1}, {:.1}] kW  Q: [{:.1}, {:.1}] kvar",
            m.sub_p.0, m.sub_p.1, m.sub_q.0, m.sub_q.1
        );
        if !m.taps.is_empty() {
            let _ = writeln!(
                out,
                "  taps used: {} .. {}",
                m.taps.iter().min().unwrap(),
                m.taps.iter().max().unwrap()
            );
        }
    }
    match &args.out {
        Some(path) => fs::write(path, &out)?,
        None => print!("{out}"),
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Validate { feeder } => cmd_validate(&feeder),
        Cmd::Synth(args) => cmd_synth(&args),
        Cmd::Opf(args) => cmd_opf(&args.resolve()?),
        Cmd::Train(args) => cmd_train(&args.resolve()?),
        Cmd::Simulate(args) => cmd_simulate(&args.resolve()?),
        Cmd::Compare(args) => cmd_compare(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests land here too; keep their exit at 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

