//! Closed-loop simulation: forecast, optimize the horizon, apply the first
//! set values through the secondary controller with measured data, advance
//! the plant state.

use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use chrono::{NaiveDateTime, Timelike};
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{DispatchSetpoint, PlantParameters, PlantState};
use crate::kpi::{accumulate, conventional_baseline, step_costs, BaselineCost, KpiError, KpiOptions, KpiReport, StepCosts};
use crate::milp::BnbConfig;
use crate::profiles::{
    generate_with_warmup, load_profiles_csv, make_forecast, synthetic_spot_price, DayType, ForecastMethod,
    ProfileError, ScenarioProfiles, DEFAULT_STEP_MINUTES,
};
use crate::scheduler::{
    optimize_horizon_with_hint, AvoidedGridBasis, HorizonProblem, HorizonSchedule, ModelOptions, SchedulerError,
    TariffSchedule, TariffStep, DEFAULT_HORIZON_STEPS,
};
use crate::secondary::{apply_secondary, CorrectionOutcome, SecondaryConfig, SecondaryError};

/// Forecast regime of the primary controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Perfect forecasts.
    A,
    /// Forecasts from past measurements.
    B,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::A => "A",
            Mode::B => "B",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Mode::A),
            "B" | "b" => Ok(Mode::B),
            other => Err(format!("unknown mode '{other}' (expected A or B)")),
        }
    }
}

/// Incentive schemes, numbered 1 to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IncentiveOption {
    /// Fixed feed-in tariffs and prices.
    FixedTariffs = 1,
    /// No feed-in revenue of any kind.
    NoFeedIn = 2,
    /// Export capped at the grid connection.
    ExportCap = 3,
    /// Import price from a spot-market series.
    SpotPrice = 4,
    /// No PV feed-in tariff around midday.
    MiddayZeroFeedIn = 5,
}

impl IncentiveOption {
    pub const ALL: [IncentiveOption; 5] = [
        IncentiveOption::FixedTariffs,
        IncentiveOption::NoFeedIn,
        IncentiveOption::ExportCap,
        IncentiveOption::SpotPrice,
        IncentiveOption::MiddayZeroFeedIn,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for IncentiveOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for IncentiveOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.number().to_string() == s.trim())
            .ok_or_else(|| format!("unknown option '{s}' (expected 1 to 5)"))
    }
}

/// Where the import price series of option 4 comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceSource {
    /// The `price_import` column of the scenario; bundled day types carry
    /// the synthetic series.
    Profile,
    /// Always the synthetic series.
    Synthetic,
}

impl fmt::Display for PriceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriceSource::Profile => "profile",
            PriceSource::Synthetic => "synthetic",
        })
    }
}

impl FromStr for PriceSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "profile" => Ok(PriceSource::Profile),
            "synthetic" => Ok(PriceSource::Synthetic),
            other => Err(format!("unknown price source '{other}'")),
        }
    }
}

/// Base prices and the parameters of the incentive options.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffConfig {
    pub price_import: f64,
    pub feedin_pv: f64,
    pub feedin_chp: f64,
    pub avoided_grid_credit: f64,
    pub gas_price: f64,
    pub chp_start_cost: f64,
    pub avoided_grid_basis: AvoidedGridBasis,
    /// Option 3 cap as a fraction of the PV peak power.
    pub curtail_fraction: f64,
    /// Explicit option 3 cap, overriding `curtail_fraction`.
    pub export_cap_kw: Option<f64>,
    /// Option 5 window in local hours, `[start, end)`.
    pub window_start_hour: u32,
    pub window_end_hour: u32,
    /// Optimizer-only charge on PV export inside the option 5 window.
    pub unpaid_export_tiebreak: f64,
    pub price_source: PriceSource,
}

impl Default for TariffConfig {
    fn default() -> Self {
        Self {
            price_import: 0.2838,
            feedin_pv: 0.1256,
            feedin_chp: 0.09392,
            avoided_grid_credit: 0.005,
            gas_price: 0.0652,
            chp_start_cost: 0.02,
            avoided_grid_basis: AvoidedGridBasis::Exported,
            curtail_fraction: 0.5,
            export_cap_kw: None,
            window_start_hour: 10,
            window_end_hour: 14,
            unpaid_export_tiebreak: 1e-4,
            price_source: PriceSource::Profile,
        }
    }
}

impl TariffConfig {
    pub fn base_step(&self) -> TariffStep {
        TariffStep {
            price_import: self.price_import,
            feedin_pv: self.feedin_pv,
            feedin_chp: self.feedin_chp,
            avoided_grid_credit: self.avoided_grid_credit,
            gas_price: self.gas_price,
            chp_start_cost: self.chp_start_cost,
            pcc_export_cap_kw: None,
            pv_export_tiebreak: 0.0,
        }
    }

    pub fn option3_cap_kw(&self, pv_peak_kw: f64) -> f64 {
        self.export_cap_kw.unwrap_or(self.curtail_fraction * pv_peak_kw)
    }

    fn in_window(&self, t: NaiveDateTime) -> bool {
        (self.window_start_hour..self.window_end_hour).contains(&t.hour())
    }
}

/// The reference prices: gas, electricity, cold start, PV feed-in, CHP
/// feed-in and avoided grid costs.
pub fn table2_tariff() -> TariffStep {
    TariffConfig::default().base_step()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("option 4 needs an import price series: the scenario has no price_import column")]
    MissingPriceSeries,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("primary controller failed at step {step}: {source}")]
    Solver {
        step: usize,
        #[source]
        source: SchedulerError,
    },
    #[error("secondary controller failed at step {step}: {source}")]
    Secondary {
        step: usize,
        #[source]
        source: SecondaryError,
    },
    #[error("{count} thermally infeasible steps by step {step}, tolerance {tolerance}")]
    ThermalInfeasible {
        step: usize,
        count: usize,
        tolerance: usize,
    },
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

impl SimError {
    /// Failures of the optimizer and of the simulated plant, as opposed to
    /// bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            SimError::Solver { .. } | SimError::Secondary { .. } | SimError::ThermalInfeasible { .. }
        )
    }
}

/// Per-step prices for `option` over the time axis of `profiles`.
pub fn build_tariffs(
    option: IncentiveOption,
    base: &TariffConfig,
    profiles: &ScenarioProfiles,
    pv_peak_kw: f64,
) -> Result<TariffSchedule, SimError> {
    let n = profiles.len();
    let price_series = match (option, base.price_source) {
        (IncentiveOption::SpotPrice, PriceSource::Profile) => {
            Some(profiles.price_import.clone().ok_or(SimError::MissingPriceSeries)?.values)
        }
        (IncentiveOption::SpotPrice, PriceSource::Synthetic) => {
            Some(synthetic_spot_price(profiles.start_time(), profiles.step_minutes(), n).values)
        }
        _ => None,
    };
    let cap = base.option3_cap_kw(pv_peak_kw);
    if option == IncentiveOption::ExportCap && !(cap >= 0.0) {
        return Err(SimError::Config(format!("export cap {cap} kW")));
    }
    let steps = (0..n)
        .map(|i| {
            let mut s = base.base_step();
            if let Some(feedin) = &profiles.feedin_pv {
                s.feedin_pv = feedin.values[i];
            }
            match option {
                IncentiveOption::FixedTariffs => {}
                IncentiveOption::NoFeedIn => {
                    s.feedin_pv = 0.0;
                    s.feedin_chp = 0.0;
                    s.avoided_grid_credit = 0.0;
                }
                IncentiveOption::ExportCap => s.pcc_export_cap_kw = Some(cap),
                IncentiveOption::SpotPrice => {
                    s.price_import = price_series.as_ref().expect("series resolved above")[i];
                }
                IncentiveOption::MiddayZeroFeedIn => {
                    if base.in_window(profiles.time_at(i)) {
                        s.feedin_pv = 0.0;
                        s.pv_export_tiebreak = base.unpaid_export_tiebreak;
                    }
                }
            }
            s
        })
        .collect();
    let schedule = TariffSchedule {
        steps,
        avoided_grid_basis: base.avoided_grid_basis,
    };
    schedule.validate().map_err(|e| SimError::Config(e.to_string()))?;
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    /// Bundled synthetic day with a warm-up day in front.
    DayType(DayType),
    /// Profile CSV file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    /// Battery content as a fraction of usable capacity.
    pub batt_soc_fraction: f64,
    /// TES content as a fraction of nominal capacity.
    pub tes_soc_fraction: f64,
    pub chp_on: bool,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            batt_soc_fraction: 0.5,
            tes_soc_fraction: 0.5,
            chp_on: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub mode: Mode,
    pub option: IncentiveOption,
    pub horizon_steps: usize,
    pub step_minutes: u32,
    pub reoptimize_every_steps: usize,
    pub scenario: ScenarioSource,
    pub seed: u64,
    /// Steps at the start of the profiles used only as forecast history.
    /// `None` picks 144 for bundled days and the forecast history otherwise.
    pub warmup_steps: Option<usize>,
    /// Forecast method of mode B.
    pub forecast_b: ForecastMethod,
    /// Re-run the horizon search from the previous plan's commitments.
    pub warm_start: bool,
    /// Thermally infeasible steps tolerated before the run is aborted.
    pub thermal_infeasible_tolerance: usize,
    pub initial: InitialConditions,
    pub plant: PlantParameters,
    pub tariff: TariffConfig,
    pub model: ModelOptions,
    pub solver: BnbConfig,
    pub secondary: SecondaryConfig,
    pub kpi: KpiOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mode: Mode::A,
            option: IncentiveOption::FixedTariffs,
            horizon_steps: DEFAULT_HORIZON_STEPS,
            step_minutes: DEFAULT_STEP_MINUTES,
            reoptimize_every_steps: 1,
            scenario: ScenarioSource::DayType(DayType::Summer),
            seed: 1,
            warmup_steps: None,
            forecast_b: ForecastMethod::Persistence,
            warm_start: true,
            thermal_infeasible_tolerance: 0,
            initial: InitialConditions::default(),
            plant: PlantParameters::default(),
            tariff: TariffConfig::default(),
            model: ModelOptions::default(),
            solver: BnbConfig::default(),
            secondary: SecondaryConfig::default(),
            kpi: KpiOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.horizon_steps == 0 {
            return bad("sim.horizon_steps must be at least 1".into());
        }
        if self.reoptimize_every_steps == 0 {
            return bad("sim.reoptimize_every_steps must be at least 1".into());
        }
        if self.step_minutes == 0 || 1440 % self.step_minutes != 0 {
            return bad(format!("sim.step_minutes = {} does not divide a day", self.step_minutes));
        }
        if self.reoptimize_every_steps > self.horizon_steps {
            return bad("sim.reoptimize_every_steps exceeds sim.horizon_steps".into());
        }
        for (k, v) in [
            ("sim.initial_batt_soc_fraction", self.initial.batt_soc_fraction),
            ("sim.initial_tes_soc_fraction", self.initial.tes_soc_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{k} = {v} outside [0, 1]"));
            }
        }
        if self.tariff.window_start_hour > 24 || self.tariff.window_end_hour > 24 {
            return bad("tariff window hours must lie in 0..=24".into());
        }
        if !(self.solver.absolute_gap >= 0.0) || self.solver.node_limit == 0 {
            return bad("solver.absolute_gap must be >= 0 and solver.node_limit >= 1".into());
        }
        self.plant.validate().map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn forecast_method(&self) -> ForecastMethod {
        match self.mode {
            Mode::A => ForecastMethod::Perfect,
            Mode::B => self.forecast_b,
        }
    }

    /// Profiles of the configured scenario.
    pub fn load_profiles(&self) -> Result<ScenarioProfiles, SimError> {
        match &self.scenario {
            ScenarioSource::DayType(d) => {
                if self.step_minutes != DEFAULT_STEP_MINUTES {
                    return Err(SimError::Config(format!(
                        "bundled day types use {DEFAULT_STEP_MINUTES}-minute steps, sim.step_minutes = {}",
                        self.step_minutes
                    )));
                }
                let mut p = generate_with_warmup(*d, self.seed, self.plant.pv_peak_kw);
                p.price_import = Some(synthetic_spot_price(p.start_time(), p.step_minutes(), p.len()));
                Ok(p)
            }
            ScenarioSource::File(path) => Ok(load_profiles_csv(path, self.step_minutes)?),
        }
    }

    pub fn effective_warmup(&self) -> usize {
        let spd = (1440 / self.step_minutes) as usize;
        match (self.warmup_steps, &self.scenario) {
            (Some(w), _) => w,
            (None, ScenarioSource::DayType(_)) => spd,
            (None, ScenarioSource::File(_)) => self.forecast_method().history_days() * spd,
        }
    }

    /// Plant state at the start of the simulated span, with dwell times
    /// already satisfied.
    pub fn initial_state(&self, at: NaiveDateTime) -> PlantState {
        let p = &self.plant;
        PlantState {
            batt_soc_kwh: self.initial.batt_soc_fraction * p.batt_usable_kwh(),
            tes_soc_kwh: self.initial.tes_soc_fraction * p.tes_capacity_kwh(),
            chp_on: self.initial.chp_on,
            chp_steps_in_current_mode: p.chp_min_on_steps.max(p.chp_min_off_steps),
            sim_time: at,
        }
    }
}

/// Everything that happened in one simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub time: NaiveDateTime,
    pub dt_h: f64,
    pub forecast_el_load: f64,
    pub forecast_th_load: f64,
    pub forecast_pv: f64,
    pub actual_el_load: f64,
    pub actual_th_load: f64,
    pub actual_pv: f64,
    pub setpoint: DispatchSetpoint,
    pub state_before: PlantState,
    pub outcome: CorrectionOutcome,
    pub costs: StepCosts,
    /// Whether the horizon was re-optimized at this step.
    pub reoptimized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub config_echo: String,
    pub version: &'static str,
    pub wall_time_s: f64,
    pub solves: usize,
    pub nodes_explored: usize,
    pub lp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub records: Vec<StepRecord>,
    /// Prices of the simulated span, aligned with `records`.
    pub tariffs: TariffSchedule,
    pub kpi: KpiReport,
    /// Grid and gas heater supplying the same realized demand.
    pub baseline: BaselineCost,
    /// First plan of the run.
    pub first_plan: Option<HorizonSchedule>,
    pub meta: RunMeta,
}

impl SimulationResult {
    /// The set values applied during the run as one schedule. Planned
    /// trajectories are left empty.
    pub fn realized_schedule(&self) -> HorizonSchedule {
        let first = self.records.first();
        HorizonSchedule {
            start_time: first.map(|r| r.time).unwrap_or_default(),
            dt_h: first.map_or(0.0, |r| r.dt_h),
            setpoints: self.records.iter().map(|r| r.setpoint.clone()).collect(),
            planned_export_pv_kw: Vec::new(),
            planned_export_chp_kw: Vec::new(),
            planned_soc_batt_kwh: Vec::new(),
            planned_soc_tes_kwh: Vec::new(),
            planned_objective_eur: self.kpi.total_cost_eur,
            nodes_explored: 0,
            lp_iterations: 0,
            incumbent_node: 0,
        }
    }
}

/// Runs the configured closed loop over `profiles`.
pub fn run_closed_loop(cfg: &SimulationConfig, profiles: &ScenarioProfiles) -> Result<SimulationResult, SimError> {
    simulate(cfg, profiles, None)
}

/// Drives the plant through the secondary controller with the set values of
/// a fixed `plan` covering the whole simulated span; nothing is re-optimized.
pub fn execute_plan(
    cfg: &SimulationConfig,
    profiles: &ScenarioProfiles,
    plan: &HorizonSchedule,
) -> Result<SimulationResult, SimError> {
    simulate(cfg, profiles, Some(plan))
}

fn simulate(
    cfg: &SimulationConfig,
    profiles: &ScenarioProfiles,
    fixed: Option<&HorizonSchedule>,
) -> Result<SimulationResult, SimError> {
    let clock = Instant::now();
    cfg.validate()?;
    if profiles.step_minutes() != cfg.step_minutes {
        return Err(SimError::Config(format!(
            "profiles use {}-minute steps, sim.step_minutes = {}",
            profiles.step_minutes(),
            cfg.step_minutes
        )));
    }
    let warmup = cfg.effective_warmup();
    let n = profiles.len();
    if warmup >= n {
        return Err(SimError::Config(format!("warm-up of {warmup} steps leaves nothing of {n} to simulate")));
    }
    let tariffs = build_tariffs(cfg.option, &cfg.tariff, profiles, cfg.plant.pv_peak_kw)?;
    let dt = profiles.dt_hours();
    let method = cfg.forecast_method();
    let mut state = cfg.initial_state(profiles.time_at(warmup));
    let mut records = Vec::with_capacity(n - warmup);
    let mut first_plan_init: Option<HorizonSchedule> = None;
    let mut plan: Option<(HorizonSchedule, ScenarioProfiles)> = None;
    if let Some(f) = fixed {
        if f.len() != n - warmup || f.start_time != profiles.time_at(warmup) {
            return Err(SimError::Config(format!(
                "plan of {} steps from {} does not cover the {} simulated steps from {}",
                f.len(),
                f.start_time,
                n - warmup,
                profiles.time_at(warmup)
            )));
        }
        let forecast = make_forecast(method, profiles, profiles.time_at(warmup), n - warmup)?;
        plan = Some((f.clone(), forecast));
        first_plan_init = Some(f.clone());
    }
    let mut first_plan = first_plan_init;
    let mut offset = 0;
    let (mut solves, mut nodes, mut iterations, mut infeasible) = (0, 0, 0, 0);

    for k in warmup..n {
        let i = k - warmup;
        let due = fixed.is_none()
            && (i % cfg.reoptimize_every_steps == 0 || plan.as_ref().map_or(true, |(s, _)| offset >= s.len()));
        if due {
            let h = cfg.horizon_steps.min(n - k);
            let forecast = make_forecast(method, profiles, profiles.time_at(k), h)?;
            let mut problem = HorizonProblem::new(forecast.clone(), tariffs.slice(k, h), state.clone());
            problem.options = cfg.model.clone();
            let previous = plan.as_ref().filter(|_| cfg.warm_start).map(|(s, _)| s);
            let schedule = optimize_horizon_with_hint(&problem, &cfg.plant, &cfg.solver, previous)
                .map_err(|source| SimError::Solver { step: i, source })?;
            solves += 1;
            nodes += schedule.nodes_explored;
            iterations += schedule.lp_iterations;
            if first_plan.is_none() {
                first_plan = Some(schedule.clone());
            }
            plan = Some((schedule, forecast));
            offset = 0;
        }
        let (schedule, forecast) = plan.as_ref().expect("plan made above");
        let setpoint = schedule.setpoints[offset].clone();
        let tariff = &tariffs.steps[k];
        let (pv, el, th) = (profiles.pv.values[k], profiles.el_load.values[k], profiles.th_load.values[k]);
        let outcome = apply_secondary(
            &state,
            &setpoint,
            pv,
            el,
            th,
            &cfg.plant,
            tariff,
            tariffs.avoided_grid_basis,
            dt,
            &cfg.secondary,
        )
        .map_err(|source| SimError::Secondary { step: i, source })?;
        if outcome.thermal_infeasible {
            infeasible += 1;
            if infeasible > cfg.thermal_infeasible_tolerance {
                return Err(SimError::ThermalInfeasible {
                    step: i,
                    count: infeasible,
                    tolerance: cfg.thermal_infeasible_tolerance,
                });
            }
        }
        let costs = step_costs(&outcome, tariff, &cfg.plant, tariffs.avoided_grid_basis, dt);
        let next = outcome.updated_state.clone();
        records.push(StepRecord {
            index: i,
            time: profiles.time_at(k),
            dt_h: dt,
            forecast_el_load: forecast.el_load.values[offset],
            forecast_th_load: forecast.th_load.values[offset],
            forecast_pv: forecast.pv.values[offset],
            actual_el_load: el,
            actual_th_load: th,
            actual_pv: pv,
            setpoint,
            state_before: std::mem::replace(&mut state, next),
            outcome,
            costs,
            reoptimized: due,
        });
        offset += 1;
    }

    let span = tariffs.slice(warmup, n - warmup);
    let kpi = accumulate(&records, &span, &cfg.plant, cfg.kpi)?;
    let mut baseline = BaselineCost {
        electricity_eur: 0.0,
        heat_eur: 0.0,
        total_eur: 0.0,
    };
    for (r, t) in records.iter().zip(&span.steps) {
        let b = conventional_baseline(r.actual_el_load * r.dt_h, r.actual_th_load * r.dt_h, t);
        baseline.electricity_eur += b.electricity_eur;
        baseline.heat_eur += b.heat_eur;
        baseline.total_eur += b.total_eur;
    }
    Ok(SimulationResult {
        records,
        tariffs: span,
        kpi,
        baseline,
        first_plan,
        meta: RunMeta {
            config_echo: crate::config::to_config_text(cfg),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: clock.elapsed().as_secs_f64(),
            solves,
            nodes_explored: nodes,
            lp_iterations: iterations,
        },
    })
}

/// Plan over the whole simulated span from the initial state, using the
/// forecasts of the configured mode. `hint` seeds the search with the CHP
/// commitments of an earlier schedule over the same span, such as
/// [`SimulationResult::realized_schedule`].
pub fn one_shot_plan(
    cfg: &SimulationConfig,
    profiles: &ScenarioProfiles,
    hint: Option<&HorizonSchedule>,
) -> Result<HorizonSchedule, SimError> {
    cfg.validate()?;
    let warmup = cfg.effective_warmup();
    let n = profiles.len();
    if warmup >= n {
        return Err(SimError::Config(format!("warm-up of {warmup} steps leaves nothing of {n} to plan")));
    }
    let tariffs = build_tariffs(cfg.option, &cfg.tariff, profiles, cfg.plant.pv_peak_kw)?;
    let forecast = make_forecast(cfg.forecast_method(), profiles, profiles.time_at(warmup), n - warmup)?;
    let mut problem = HorizonProblem::new(
        forecast,
        tariffs.slice(warmup, n - warmup),
        cfg.initial_state(profiles.time_at(warmup)),
    );
    problem.options = cfg.model.clone();
    optimize_horizon_with_hint(&problem, &cfg.plant, &cfg.solver, hint).map_err(|source| SimError::Solver { step: 0, source })
}

/// Rounds `values` to six decimals so that the rounded values sum to the
/// rounded total. Each result stays within 1e-6 of its input.
pub fn consistent_round(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let (mut sum, mut prev) = (0.0, 0i64);
    for v in values {
        sum += v;
        let cur = (sum * 1e6).round() as i64;
        out.push((cur - prev) as f64 / 1e6);
        prev = cur;
    }
    out
}

fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Column names of `steps.csv`.
pub const STEPS_CSV_COLUMNS: &[&str] = &[
    "step",
    "timestamp",
    "reoptimized",
    "forecast_el_load_kw",
    "forecast_th_load_kw",
    "forecast_pv_kw",
    "actual_th_load_kw",
    "sp_chp_on",
    "sp_boiler_th_kw",
    "sp_batt_charge_kw",
    "sp_batt_discharge_kw",
    "sp_pv_curtail_kw",
    "sp_grid_import_kw",
    "sp_grid_export_kw",
    "chp_el_kw",
    "pv_kw",
    "pv_curtailed_kw",
    "el_load_kw",
    "batt_discharge_kw",
    "batt_charge_kw",
    "grid_import_kw",
    "pv_export_kw",
    "chp_export_kw",
    "batt_export_kw",
    "grid_export_kw",
    "chp_th_kw",
    "boiler_th_kw",
    "chp_fuel_kw",
    "unmet_heat_kwh",
    "chp_cold_start",
    "correction_kw",
    "soc_batt_start_kwh",
    "soc_batt_end_kwh",
    "soc_tes_start_kwh",
    "soc_tes_end_kwh",
    "price_import_eur_kwh",
    "feedin_pv_eur_kwh",
    "feedin_chp_eur_kwh",
    "avoided_grid_eur_kwh",
    "gas_eur_kwh",
    "export_cap_kw",
    "cost_gas_eur",
    "cost_import_eur",
    "cost_chp_start_eur",
    "revenue_pv_feedin_eur",
    "revenue_chp_feedin_eur",
    "revenue_avoided_grid_eur",
    "cost_total_eur",
];

/// Writes one row per simulated step.
///
/// The electrical flows of a row (`chp_el_kw` through `batt_export_kw`) are
/// rounded jointly so the printed row balances exactly, and every cost
/// column is rounded along its running sum so the printed steps add up to
/// the printed run totals.
pub fn write_steps_csv<W: Write>(result: &SimulationResult, mut w: W) -> io::Result<()> {
    writeln!(w, "{}", STEPS_CSV_COLUMNS.join(","))?;
    let mut cost_sum = [0.0f64; 7];
    let mut cost_prev = [0i64; 7];
    for (r, t) in result.records.iter().zip(&result.tariffs.steps) {
        let o = &r.outcome;
        let sp = &r.setpoint;
        let flows = consistent_round(&[
            o.chp_el,
            r.actual_pv,
            -o.pv_curtailed,
            -r.actual_el_load,
            o.batt_discharge,
            -o.batt_charge,
            o.grid_import,
            -o.pv_export,
            -o.chp_export,
            -o.batt_export,
        ]);
        let c = &r.costs;
        let costs = [c.gas, c.electricity_import, c.chp_start, c.pv_feedin, c.chp_feedin, c.avoided_grid, c.total()];
        let mut printed_costs = [0.0; 7];
        for j in 0..7 {
            cost_sum[j] += costs[j];
            let cur = (cost_sum[j] * 1e6).round() as i64;
            printed_costs[j] = (cur - cost_prev[j]) as f64 / 1e6;
            cost_prev[j] = cur;
        }
        let mut row: Vec<String> = vec![
            r.index.to_string(),
            r.time.format("%Y-%m-%dT%H:%M:%S").to_string(),
            u8::from(r.reoptimized).to_string(),
            fmt6(r.forecast_el_load),
            fmt6(r.forecast_th_load),
            fmt6(r.forecast_pv),
            fmt6(r.actual_th_load),
            u8::from(sp.chp_on).to_string(),
            fmt6(sp.boiler_th_kw),
            fmt6(sp.batt_charge_kw),
            fmt6(sp.batt_discharge_kw),
            fmt6(sp.pv_curtail_kw),
            fmt6(sp.planned_import_kw),
            fmt6(sp.planned_export_kw),
        ];
        row.extend(flows.iter().enumerate().map(|(j, v)| fmt6(if j == 0 || j == 1 || j == 4 || j == 6 { *v } else { -*v })));
        row.push(fmt6(-(flows[7] + flows[8] + flows[9])));
        row.extend([
            fmt6(o.chp_th),
            fmt6(o.boiler_th),
            fmt6(o.chp_fuel),
            fmt6(o.unmet_heat_kwh),
            u8::from(o.chp_cold_start).to_string(),
            fmt6(o.correction_magnitude_kw),
            fmt6(r.state_before.batt_soc_kwh),
            fmt6(o.updated_state.batt_soc_kwh),
            fmt6(r.state_before.tes_soc_kwh),
            fmt6(o.updated_state.tes_soc_kwh),
            fmt6(t.price_import),
            fmt6(t.feedin_pv),
            fmt6(t.feedin_chp),
            fmt6(t.avoided_grid_credit),
            fmt6(t.gas_price),
            t.pcc_export_cap_kw.map(fmt6).unwrap_or_default(),
        ]);
        row.extend(printed_costs.iter().map(|v| fmt6(*v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Identifies one run in a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub option: IncentiveOption,
    pub mode: Mode,
    pub scenario: String,
    pub seed: u64,
}

impl RunLabel {
    pub fn of(cfg: &SimulationConfig) -> Self {
        Self {
            option: cfg.option,
            mode: cfg.mode,
            scenario: match &cfg.scenario {
                ScenarioSource::DayType(d) => d.name().to_string(),
                ScenarioSource::File(p) => p.display().to_string(),
            },
            seed: cfg.seed,
        }
    }
}

pub const SUMMARY_CSV_COLUMNS: &[&str] = &[
    "option",
    "mode",
    "scenario",
    "seed",
    "status",
    "steps",
    "gas_cost_eur",
    "import_cost_eur",
    "chp_start_cost_eur",
    "pv_feedin_revenue_eur",
    "chp_feedin_revenue_eur",
    "avoided_grid_revenue_eur",
    "total_cost_eur",
    "baseline_cost_eur",
    "savings_vs_baseline",
    "pv_self_consumption_rate",
    "pv_rate_defined",
    "chp_self_consumption_rate",
    "chp_rate_defined",
    "battery_full_cycles",
    "chp_runtime_h",
    "chp_starts",
    "peak_export_kw",
    "peak_import_kw",
    "el_load_kwh",
    "th_load_kwh",
    "pv_generation_kwh",
    "pv_curtailed_kwh",
    "pv_export_kwh",
    "chp_el_kwh",
    "chp_export_kwh",
    "grid_import_kwh",
    "grid_export_kwh",
    "unmet_heat_kwh",
    "correction_total_kw",
];

pub fn write_summary_header<W: Write>(mut w: W) -> io::Result<()> {
    writeln!(w, "{}", SUMMARY_CSV_COLUMNS.join(","))
}

/// One summary row. Failed runs keep their label and status and leave the
/// numeric columns empty.
pub fn write_summary_row<W: Write>(label: &RunLabel, outcome: Result<&SimulationResult, &str>, mut w: W) -> io::Result<()> {
    let mut row = vec![
        label.option.to_string(),
        label.mode.to_string(),
        label.scenario.clone(),
        label.seed.to_string(),
    ];
    match outcome {
        Ok(res) => {
            let k = &res.kpi;
            let savings = if res.baseline.total_eur != 0.0 {
                1.0 - k.total_cost_eur / res.baseline.total_eur
            } else {
                0.0
            };
            row.push("ok".into());
            row.push(k.steps.to_string());
            row.extend(
                [
                    k.gas_cost_eur,
                    k.import_cost_eur,
                    k.chp_start_cost_eur,
                    k.pv_feedin_revenue_eur,
                    k.chp_feedin_revenue_eur,
                    k.avoided_grid_revenue_eur,
                    k.total_cost_eur,
                    res.baseline.total_eur,
                    savings,
                    k.pv_self_consumption_rate,
                ]
                .map(fmt6),
            );
            row.push(u8::from(k.pv_rate_defined).to_string());
            row.push(fmt6(k.chp_self_consumption_rate));
            row.push(u8::from(k.chp_rate_defined).to_string());
            row.push(fmt6(k.battery_full_cycles));
            row.push(fmt6(k.chp_runtime_h));
            row.push(k.chp_starts.to_string());
            row.extend(
                [
                    k.peak_export_kw,
                    k.peak_import_kw,
                    k.el_load_kwh,
                    k.th_load_kwh,
                    k.pv_generation_kwh,
                    k.pv_curtailed_kwh,
                    k.pv_export_kwh,
                    k.chp_el_kwh,
                    k.chp_export_kwh,
                    k.grid_import_kwh,
                    k.grid_export_kwh,
                    k.unmet_heat_kwh,
                    k.correction_total_kw,
                ]
                .map(fmt6),
            );
        }
        Err(msg) => {
            let status = format!("failed: {}", msg.replace([',', '\n', '\r'], ";"));
            row.push(status);
            row.extend(std::iter::repeat(String::new()).take(SUMMARY_CSV_COLUMNS.len() - 5));
        }
    }
    writeln!(w, "{}", row.join(","))
}

/// Configuration echo followed by run statistics. Wall time is the only
/// value that varies between identical runs.
pub fn write_run_meta<W: Write>(result: &SimulationResult, mut w: W) -> io::Result<()> {
    write!(w, "{}", result.meta.config_echo)?;
    writeln!(w, "# version = {}", result.meta.version)?;
    writeln!(w, "# solves = {}", result.meta.solves)?;
    writeln!(w, "# nodes_explored = {}", result.meta.nodes_explored)?;
    writeln!(w, "# lp_iterations = {}", result.meta.lp_iterations)?;
    writeln!(w, "# wall_time_s = {:.3}", result.meta.wall_time_s)
}

/// Grid of runs sharing one base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub options: Vec<IncentiveOption>,
    pub modes: Vec<Mode>,
    pub day_types: Vec<DayType>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            options: vec![IncentiveOption::FixedTariffs, IncentiveOption::NoFeedIn],
            modes: vec![Mode::A],
            day_types: DayType::ALL.to_vec(),
        }
    }
}

impl SweepSpec {
    /// Configurations in row order: day type, then option, then mode.
    pub fn configs(&self, base: &SimulationConfig) -> Vec<SimulationConfig> {
        let mut out = Vec::new();
        for &d in &self.day_types {
            for &o in &self.options {
                for &m in &self.modes {
                    let mut c = base.clone();
                    c.scenario = ScenarioSource::DayType(d);
                    c.option = o;
                    c.mode = m;
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Runs every configuration; results come back in input order whatever the
/// execution order.
pub fn run_sweep(configs: &[SimulationConfig], parallel: bool) -> Vec<Result<SimulationResult, SimError>> {
    let run = |c: &SimulationConfig| c.load_profiles().and_then(|p| run_closed_loop(c, &p));
    if parallel {
        configs.par_iter().map(run).collect()
    } else {
        configs.iter().map(run).collect()
    }
}
