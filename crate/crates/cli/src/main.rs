//! `pvchp`: closed-loop simulations, scenario sweeps, the conventional
//! reference cost and single horizon optimizations.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 configuration or
//! input error, 3 solver or simulated-plant failure.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvchp_core::config::{parse_config, ConfigFile};
use pvchp_core::kpi::conventional_baseline;
use pvchp_core::profiles::{make_forecast, DayType};
use pvchp_core::scheduler::{optimize_horizon, write_schedule_csv, HorizonProblem};
use pvchp_core::simloop::{
    build_tariffs, run_closed_loop, run_sweep, write_run_meta, write_steps_csv, write_summary_header,
    write_summary_row, IncentiveOption, Mode, RunLabel, ScenarioSource, SimError, SimulationConfig,
    SimulationResult,
};

#[derive(Parser)]
#[command(name = "pvchp", version, about = "Two-level controller simulator for PV-CHP homes with storage")]
struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created atomically.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the synthetic day profiles.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run: steps.csv, summary.csv and run_meta.txt.
    Simulate(RunArgs),
    /// All combinations of sweep.options, sweep.modes and sweep.day_types.
    Sweep {
        /// Run the cells one after another instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Cost of covering the given demand from the grid and a gas heater.
    Baseline {
        #[arg(long)]
        el_kwh: f64,
        #[arg(long)]
        th_kwh: f64,
    },
    /// One horizon optimization from the initial state; writes the schedule
    /// to `<out>/schedule.csv`, or to stdout without `--out`.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Steps after the start of the simulated span at which the horizon begins.
        #[arg(long, default_value_t = 0)]
        start_step: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Incentive option, 1 to 5.
    #[arg(long)]
    option: Option<IncentiveOption>,
    /// A (perfect forecasts) or B (persistence forecasts).
    #[arg(long)]
    mode: Option<Mode>,
    /// Bundled synthetic day: winter, transition or summer.
    #[arg(long)]
    day_type: Option<DayType>,
    /// Profile CSV used instead of a bundled day.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    horizon_steps: Option<usize>,
    /// Export cap of option 3, kW.
    #[arg(long)]
    export_cap_kw: Option<f64>,
}

enum Failure {
    Config(String),
    Solver(String),
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Output(_) => 1,
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Output(m) => m,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_solver_failure() || matches!(e, SimError::Kpi(_)) {
            Failure::Solver(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn output_error(path: &Path, e: io::Error) -> Failure {
    Failure::Output(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pvchp: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut file = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        file.sim.seed = seed;
    }
    match &cli.command {
        Command::Simulate(args) => {
            args.apply(&mut file.sim);
            simulate(&file.sim, require_out(cli)?, cli.force)
        }
        Command::Sweep { serial } => sweep(&file, require_out(cli)?, cli.force, !serial),
        Command::Baseline { el_kwh, th_kwh } => baseline(&file.sim, *el_kwh, *th_kwh),
        Command::Optimize { run, start_step } => {
            run.apply(&mut file.sim);
            optimize(&file.sim, *start_step, cli.out.as_deref(), cli.force)
        }
    }
}

impl RunArgs {
    fn apply(&self, sim: &mut SimulationConfig) {
        if let Some(o) = self.option {
            sim.option = o;
        }
        if let Some(m) = self.mode {
            sim.mode = m;
        }
        if let Some(d) = self.day_type {
            sim.scenario = ScenarioSource::DayType(d);
        }
        if let Some(p) = &self.profiles {
            sim.scenario = ScenarioSource::File(p.clone());
        }
        if let Some(h) = self.horizon_steps {
            sim.horizon_steps = h;
        }
        if let Some(c) = self.export_cap_kw {
            sim.tariff.export_cap_kw = Some(c);
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn require_out(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Config("--out is required for this command".into()))
}

/// Fills a fresh directory next to `out` and renames it into place, so a
/// failed run never leaves a half-written `out` behind.
fn publish(out: &Path, force: bool, fill: impl FnOnce(&Path) -> Result<(), Failure>) -> Result<(), Failure> {
    if out.exists() && !force {
        return Err(Failure::Config(format!(
            "output directory {} exists; pass --force to replace it",
            out.display()
        )));
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| output_error(&parent, e))?;
    let name = out
        .file_name()
        .ok_or_else(|| Failure::Config(format!("bad output directory {}", out.display())))?;
    let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| output_error(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| output_error(&staging, e))?;
    if let Err(f) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(f);
    }
    if out.is_dir() {
        fs::remove_dir_all(out).map_err(|e| output_error(out, e))?;
    } else if out.exists() {
        fs::remove_file(out).map_err(|e| output_error(out, e))?;
    }
    fs::rename(&staging, out).map_err(|e| output_error(out, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), Failure> {
    let f = fs::File::create(path).map_err(|e| output_error(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| output_error(path, e))
}

fn write_run(dir: &Path, label: &RunLabel, result: &SimulationResult) -> Result<(), Failure> {
    write_file(&dir.join("steps.csv"), |w| write_steps_csv(result, w))?;
    write_file(&dir.join("summary.csv"), |w| {
        write_summary_header(&mut *w)?;
        write_summary_row(label, Ok(result), w)
    })?;
    write_file(&dir.join("run_meta.txt"), |w| write_run_meta(result, w))
}

fn simulate(sim: &SimulationConfig, out: &Path, force: bool) -> Result<(), Failure> {
    if out.exists() && !force {
        return publish(out, force, |_| Ok(()));
    }
    let profiles = sim.load_profiles()?;
    let result = run_closed_loop(sim, &profiles)?;
    let label = RunLabel::of(sim);
    publish(out, force, |dir| write_run(dir, &label, &result))
}

fn cell_name(label: &RunLabel) -> String {
    format!("{}_option{}_mode{}", label.scenario, label.option, label.mode)
}

fn sweep(file: &ConfigFile, out: &Path, force: bool, parallel: bool) -> Result<(), Failure> {
    if out.exists() && !force {
        return publish(out, force, |_| Ok(()));
    }
    file.sim.validate()?;
    let configs = file.sweep.configs(&file.sim);
    let results = run_sweep(&configs, parallel);
    let mut worst: Option<Failure> = None;
    publish(out, force, |dir| {
        write_file(&dir.join("summary.csv"), |w| {
            write_summary_header(&mut *w)?;
            for (cfg, res) in configs.iter().zip(&results) {
                let label = RunLabel::of(cfg);
                match res {
                    Ok(r) => write_summary_row(&label, Ok(r), &mut *w)?,
                    Err(e) => write_summary_row(&label, Err(&e.to_string()), &mut *w)?,
                }
            }
            Ok(())
        })?;
        for (cfg, res) in configs.iter().zip(&results) {
            let label = RunLabel::of(cfg);
            match res {
                Ok(r) => {
                    let cell = dir.join(cell_name(&label));
                    fs::create_dir(&cell).map_err(|e| output_error(&cell, e))?;
                    write_run(&cell, &label, r)?;
                }
                Err(e) => {
                    eprintln!("pvchp: run {} failed: {e}", cell_name(&label));
                    let is_solver = e.is_solver_failure();
                    if is_solver || worst.is_none() {
                        worst = Some(if is_solver {
                            Failure::Solver(format!("run {} failed", cell_name(&label)))
                        } else {
                            Failure::Config(format!("run {} failed", cell_name(&label)))
                        });
                    }
                }
            }
        }
        Ok(())
    })?;
    match worst {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

fn baseline(sim: &SimulationConfig, el_kwh: f64, th_kwh: f64) -> Result<(), Failure> {
    if !(el_kwh >= 0.0 && th_kwh >= 0.0 && el_kwh.is_finite() && th_kwh.is_finite()) {
        return Err(Failure::Config(format!("energies must be finite and >= 0, got {el_kwh} and {th_kwh}")));
    }
    let b = conventional_baseline(el_kwh, th_kwh, &sim.tariff.base_step());
    let mut o = io::stdout().lock();
    writeln!(o, "electricity_eur,heat_eur,total_eur")
        .and_then(|_| writeln!(o, "{:.6},{:.6},{:.6}", b.electricity_eur, b.heat_eur, b.total_eur))
        .map_err(|e| Failure::Output(format!("stdout: {e}")))
}

fn optimize(sim: &SimulationConfig, start_step: usize, out: Option<&Path>, force: bool) -> Result<(), Failure> {
    if let Some(out) = out {
        if out.exists() && !force {
            return publish(out, force, |_| Ok(()));
        }
    }
    sim.validate()?;
    let profiles = sim.load_profiles()?;
    let k = sim.effective_warmup() + start_step;
    if k >= profiles.len() {
        return Err(Failure::Config(format!(
            "--start-step {start_step} is beyond the {} simulated steps",
            profiles.len().saturating_sub(sim.effective_warmup())
        )));
    }
    let h = sim.horizon_steps.min(profiles.len() - k);
    let tariffs = build_tariffs(sim.option, &sim.tariff, &profiles, sim.plant.pv_peak_kw)?;
    let forecast = make_forecast(sim.forecast_method(), &profiles, profiles.time_at(k), h)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let state = sim.initial_state(profiles.time_at(k));
    let mut problem = HorizonProblem::new(forecast, tariffs.slice(k, h), state);
    problem.options = sim.model.clone();
    let schedule = optimize_horizon(&problem, &sim.plant, &sim.solver).map_err(|e| Failure::Solver(e.to_string()))?;
    match out {
        Some(out) => publish(out, force, |dir| {
            write_file(&dir.join("schedule.csv"), |w| write_schedule_csv(&schedule, w))?;
            write_file(&dir.join("run_meta.txt"), |w| {
                write!(w, "{}", pvchp_core::config::to_config_text(sim))?;
                writeln!(w, "# start_step = {start_step}")?;
                writeln!(w, "# planned_objective_eur = {:.6}", schedule.planned_objective_eur)?;
                writeln!(w, "# nodes_explored = {}", schedule.nodes_explored)
            })
        }),
        None => {
            let stdout = io::stdout().lock();
            write_schedule_csv(&schedule, stdout).map_err(|e| Failure::Output(format!("stdout: {e}")))
        }
    }
}
