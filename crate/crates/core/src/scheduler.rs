//! Rolling-horizon dispatch problem: MILP construction, solution extraction
//! and schedule export.

use std::io::{self, Write};

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::domain::{storage_step_unchecked, DispatchSetpoint, PlantParameters, PlantState};
use crate::lp::{LinearProgram, Relation};
use crate::milp::{solve_milp_with_hint, BnbConfig, MilpError, MilpSolution, MilpStatus, MixedIntegerProgram};
use crate::profiles::ScenarioProfiles;

pub const DEFAULT_HORIZON_STEPS: usize = 36;

/// Values below this magnitude in a solver result are treated as zero.
const SNAP_TOL: f64 = 1e-9;

/// Which CHP electricity earns the avoided-grid credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvoidedGridBasis {
    #[default]
    Exported,
    SelfConsumed,
}

/// Prices in force during one step. Energy prices in EUR/kWh, start cost in
/// EUR per cold start.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffStep {
    pub price_import: f64,
    pub feedin_pv: f64,
    pub feedin_chp: f64,
    pub avoided_grid_credit: f64,
    pub gas_price: f64,
    pub chp_start_cost: f64,
    pub pcc_export_cap_kw: Option<f64>,
    /// Small optimizer-only charge on PV export, used to prefer curtailment
    /// over unpaid export. Never part of realized costs.
    pub pv_export_tiebreak: f64,
}

impl TariffStep {
    /// Credit per kWh of exported CHP electricity.
    pub fn chp_export_credit(&self, basis: AvoidedGridBasis) -> f64 {
        match basis {
            AvoidedGridBasis::Exported => self.feedin_chp + self.avoided_grid_credit,
            AvoidedGridBasis::SelfConsumed => self.feedin_chp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    pub steps: Vec<TariffStep>,
    pub avoided_grid_basis: AvoidedGridBasis,
}

impl TariffSchedule {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn slice(&self, from: usize, len: usize) -> Self {
        Self {
            steps: self.steps[from..from + len].to_vec(),
            avoided_grid_basis: self.avoided_grid_basis,
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        for (t, s) in self.steps.iter().enumerate() {
            let prices = [
                s.price_import,
                s.feedin_pv,
                s.feedin_chp,
                s.avoided_grid_credit,
                s.gas_price,
                s.chp_start_cost,
                s.pv_export_tiebreak,
            ];
            if prices.iter().any(|p| !p.is_finite()) {
                return Err(SchedulerError::InvalidTariff(format!("non-finite price at step {t}")));
            }
            if s.gas_price < 0.0 {
                return Err(SchedulerError::InvalidTariff(format!("negative gas price at step {t}")));
            }
            if let Some(cap) = s.pcc_export_cap_kw {
                if !(cap >= 0.0) {
                    return Err(SchedulerError::InvalidTariff(format!("bad export cap {cap} at step {t}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("infeasible initial state: {0}")]
    InfeasibleInitialState(String),
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
    #[error("horizon problem is infeasible")]
    ScheduleInfeasible,
    #[error("node limit reached without a feasible schedule")]
    NoIncumbent,
    #[error(transparent)]
    Solver(#[from] MilpError),
}

/// Modelling switches that change the MILP structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    /// Boiler restricted to {0} ∪ [boiler_min_kw, boiler_max_kw] (one binary per step).
    pub semicontinuous_boiler: bool,
    /// One binary per step forbidding simultaneous import and export.
    pub exclusive_grid_flow: bool,
    /// Value credited for battery energy left at the end of the horizon, EUR/kWh.
    pub terminal_value_batt: f64,
    /// Value credited for TES energy left at the end of the horizon, EUR/kWh.
    pub terminal_value_tes: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            semicontinuous_boiler: false,
            exclusive_grid_flow: false,
            terminal_value_batt: 0.0,
            terminal_value_tes: 0.0,
        }
    }
}

/// Continuous and binary quantities defined for every horizon step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    ChpOn,
    ChpStart,
    BoilerTh,
    BattCharge,
    BattDischarge,
    SocBatt,
    SocTes,
    GridImport,
    ExportPv,
    ExportChp,
    PvCurtail,
}

impl Quantity {
    pub const ALL: [Quantity; 11] = [
        Quantity::ChpOn,
        Quantity::ChpStart,
        Quantity::BoilerTh,
        Quantity::BattCharge,
        Quantity::BattDischarge,
        Quantity::SocBatt,
        Quantity::SocTes,
        Quantity::GridImport,
        Quantity::ExportPv,
        Quantity::ExportChp,
        Quantity::PvCurtail,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn name(self) -> &'static str {
        match self {
            Quantity::ChpOn => "chp_on",
            Quantity::ChpStart => "chp_start",
            Quantity::BoilerTh => "boiler_th",
            Quantity::BattCharge => "batt_ch",
            Quantity::BattDischarge => "batt_dis",
            Quantity::SocBatt => "soc_b",
            Quantity::SocTes => "soc_t",
            Quantity::GridImport => "grid_imp",
            Quantity::ExportPv => "export_pv",
            Quantity::ExportChp => "export_chp",
            Quantity::PvCurtail => "pv_curtail",
        }
    }
}

/// Column layout of the horizon MILP: step-major blocks of
/// [`Quantity::COUNT`] columns, followed by the optional extra binaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarIndex {
    pub steps: usize,
    boiler_on_base: Option<usize>,
    grid_dir_base: Option<usize>,
}

impl VarIndex {
    fn new(steps: usize, opts: &ModelOptions) -> Self {
        let mut next = steps * Quantity::COUNT;
        let mut take = |on: bool| {
            on.then(|| {
                let base = next;
                next += steps;
                base
            })
        };
        let boiler_on_base = take(opts.semicontinuous_boiler);
        let grid_dir_base = take(opts.exclusive_grid_flow);
        Self {
            steps,
            boiler_on_base,
            grid_dir_base,
        }
    }

    pub fn var(&self, q: Quantity, t: usize) -> usize {
        debug_assert!(t < self.steps);
        t * Quantity::COUNT + q as usize
    }

    pub fn boiler_on(&self, t: usize) -> Option<usize> {
        self.boiler_on_base.map(|b| b + t)
    }

    /// Binary that is 1 when the step may import and 0 when it may export.
    pub fn grid_direction(&self, t: usize) -> Option<usize> {
        self.grid_dir_base.map(|b| b + t)
    }

    pub fn num_vars(&self) -> usize {
        self.steps * Quantity::COUNT
            + self.steps * (self.boiler_on_base.is_some() as usize + self.grid_dir_base.is_some() as usize)
    }
}

/// One horizon optimization: forecasts and prices for `steps` steps starting
/// at the current plant state.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    pub steps: usize,
    pub dt_h: f64,
    pub forecasts: ScenarioProfiles,
    pub tariffs: TariffSchedule,
    pub initial_state: PlantState,
    pub options: ModelOptions,
    /// Forces the CHP commitment over the whole horizon when set.
    pub chp_lock: Option<bool>,
}

impl HorizonProblem {
    pub fn new(
        forecasts: ScenarioProfiles,
        tariffs: TariffSchedule,
        initial_state: PlantState,
    ) -> Self {
        Self {
            steps: forecasts.len(),
            dt_h: forecasts.dt_hours(),
            forecasts,
            tariffs,
            initial_state,
            options: ModelOptions::default(),
            chp_lock: None,
        }
    }

    pub fn var_index(&self) -> VarIndex {
        VarIndex::new(self.steps, &self.options)
    }

    fn check(&self, params: &PlantParameters) -> Result<(), SchedulerError> {
        if self.steps == 0 {
            return Err(SchedulerError::DimensionMismatch("horizon has no steps".into()));
        }
        if !(self.dt_h > 0.0) {
            return Err(SchedulerError::DimensionMismatch(format!("dt_h = {}", self.dt_h)));
        }
        if self.forecasts.len() != self.steps || self.tariffs.len() != self.steps {
            return Err(SchedulerError::DimensionMismatch(format!(
                "{} steps, {} forecast values, {} tariff steps",
                self.steps,
                self.forecasts.len(),
                self.tariffs.len()
            )));
        }
        self.tariffs.validate()?;
        let s = &self.initial_state;
        let usable = params.batt_usable_kwh();
        if !(s.batt_soc_kwh >= -SNAP_TOL && s.batt_soc_kwh <= usable + SNAP_TOL) {
            return Err(SchedulerError::InfeasibleInitialState(format!(
                "battery SOC {} outside [0, {usable}]",
                s.batt_soc_kwh
            )));
        }
        if !(s.tes_soc_kwh >= -SNAP_TOL) || !s.tes_soc_kwh.is_finite() {
            return Err(SchedulerError::InfeasibleInitialState(format!(
                "TES SOC {} below zero",
                s.tes_soc_kwh
            )));
        }
        Ok(())
    }
}

/// Encodes the horizon dispatch problem as a MILP.
///
/// Per step the model has the electrical bus balance, export attribution
/// caps, TES and battery dynamics with end-of-step SOC variables, start
/// detection and an optional export cap at the grid connection. The
/// objective is the operating cost: fuel, imports and cold starts minus
/// feed-in revenues and the avoided-grid credit.
pub fn build_horizon_milp(
    p: &HorizonProblem,
    params: &PlantParameters,
) -> Result<MixedIntegerProgram, SchedulerError> {
    params
        .validate()
        .map_err(|e| SchedulerError::DimensionMismatch(e.to_string()))?;
    p.check(params)?;
    let idx = p.var_index();
    let n = idx.num_vars();
    let dt = p.dt_h;
    let batt = params.battery_efficiencies();
    let tes = params.tes_efficiencies();
    let rho_b = batt.retention(dt);
    let rho_t = tes.retention(dt);
    let usable = params.batt_usable_kwh();
    let tes_cap = params.tes_capacity_kwh().max(p.initial_state.tes_soc_kwh);
    let soc_b0 = p.initial_state.batt_soc_kwh.clamp(0.0, usable);
    let soc_t0 = p.initial_state.tes_soc_kwh.max(0.0);
    let chp_el = params.chp_el_kw;
    let chp_th = params.chp_th_kw;
    let fuel_per_on = params.chp_el_kw / params.chp_eta_el;
    let basis = p.tariffs.avoided_grid_basis;

    let mut objective = vec![0.0; n];
    let mut lp_bounds = vec![(0.0, f64::INFINITY); n];
    let mut binaries = Vec::new();
    for t in 0..p.steps {
        let tariff = &p.tariffs.steps[t];
        let pv = p.forecasts.pv.values[t];
        let v = |q| idx.var(q, t);

        let (on_lo, on_hi) = match p.chp_lock {
            Some(true) => (1.0, 1.0),
            Some(false) => (0.0, 0.0),
            None => (0.0, 1.0),
        };
        lp_bounds[v(Quantity::ChpOn)] = (on_lo, on_hi);
        lp_bounds[v(Quantity::ChpStart)] = (0.0, 1.0);
        lp_bounds[v(Quantity::BoilerTh)] = (0.0, params.boiler_max_kw);
        lp_bounds[v(Quantity::BattCharge)] = (0.0, params.batt_max_charge_kw);
        lp_bounds[v(Quantity::BattDischarge)] = (0.0, params.batt_max_discharge_kw);
        lp_bounds[v(Quantity::SocBatt)] = (0.0, usable);
        lp_bounds[v(Quantity::SocTes)] = (0.0, tes_cap);
        lp_bounds[v(Quantity::PvCurtail)] = (0.0, pv);
        binaries.push(v(Quantity::ChpOn));

        let mut chp_on_cost = tariff.gas_price * fuel_per_on * dt;
        if basis == AvoidedGridBasis::SelfConsumed {
            chp_on_cost -= tariff.avoided_grid_credit * chp_el * dt;
            objective[v(Quantity::ExportChp)] += tariff.avoided_grid_credit * dt;
        }
        objective[v(Quantity::ChpOn)] += chp_on_cost;
        objective[v(Quantity::ChpStart)] += tariff.chp_start_cost;
        objective[v(Quantity::BoilerTh)] += tariff.gas_price / params.boiler_eta * dt;
        objective[v(Quantity::GridImport)] += tariff.price_import * dt;
        objective[v(Quantity::ExportPv)] += (tariff.pv_export_tiebreak - tariff.feedin_pv) * dt;
        objective[v(Quantity::ExportChp)] -= tariff.chp_export_credit(basis) * dt;
        if let Some(b) = idx.boiler_on(t) {
            lp_bounds[b] = (0.0, 1.0);
            binaries.push(b);
        }
        if let Some(g) = idx.grid_direction(t) {
            lp_bounds[g] = (0.0, 1.0);
            binaries.push(g);
        }
    }
    let last = p.steps - 1;
    objective[idx.var(Quantity::SocBatt, last)] -= p.options.terminal_value_batt;
    objective[idx.var(Quantity::SocTes, last)] -= p.options.terminal_value_tes;

    let mut lp = LinearProgram::new(objective);
    for (j, (lo, hi)) in lp_bounds.into_iter().enumerate() {
        lp.set_bounds(j, lo, hi);
    }

    for t in 0..p.steps {
        let v = |q| idx.var(q, t);
        let pv = p.forecasts.pv.values[t];
        let el = p.forecasts.el_load.values[t];
        let th = p.forecasts.th_load.values[t];
        let tariff = &p.tariffs.steps[t];

        // (a) electrical bus balance
        lp.add_sparse(
            &[
                (v(Quantity::PvCurtail), -1.0),
                (v(Quantity::ChpOn), chp_el),
                (v(Quantity::BattDischarge), 1.0),
                (v(Quantity::GridImport), 1.0),
                (v(Quantity::BattCharge), -1.0),
                (v(Quantity::ExportPv), -1.0),
                (v(Quantity::ExportChp), -1.0),
            ],
            Relation::Eq,
            el - pv,
        );
        // (b) export attribution
        lp.add_sparse(
            &[(v(Quantity::ExportPv), 1.0), (v(Quantity::PvCurtail), 1.0)],
            Relation::Le,
            pv,
        );
        lp.add_sparse(
            &[(v(Quantity::ExportChp), 1.0), (v(Quantity::ChpOn), -chp_el)],
            Relation::Le,
            0.0,
        );
        // (c) TES dynamics
        let mut terms = vec![
            (v(Quantity::SocTes), 1.0),
            (v(Quantity::ChpOn), -tes.charge * chp_th * dt),
            (v(Quantity::BoilerTh), -tes.charge * dt),
        ];
        let mut rhs = -th * dt / tes.discharge;
        if t == 0 {
            rhs += rho_t * soc_t0;
        } else {
            terms.push((idx.var(Quantity::SocTes, t - 1), -rho_t));
        }
        lp.add_sparse(&terms, Relation::Eq, rhs);
        // (d) battery dynamics
        let mut terms = vec![
            (v(Quantity::SocBatt), 1.0),
            (v(Quantity::BattCharge), -batt.charge * dt),
            (v(Quantity::BattDischarge), dt / batt.discharge),
        ];
        let mut rhs = 0.0;
        if t == 0 {
            rhs += rho_b * soc_b0;
        } else {
            terms.push((idx.var(Quantity::SocBatt, t - 1), -rho_b));
        }
        lp.add_sparse(&terms, Relation::Eq, rhs);
        // (e) start detection
        let mut terms = vec![(v(Quantity::ChpStart), 1.0), (v(Quantity::ChpOn), -1.0)];
        let mut rhs = 0.0;
        if t == 0 {
            rhs -= f64::from(u8::from(p.initial_state.chp_on));
        } else {
            terms.push((idx.var(Quantity::ChpOn, t - 1), 1.0));
        }
        lp.add_sparse(&terms, Relation::Ge, rhs);
        // (f) export cap at the grid connection
        if let Some(cap) = tariff.pcc_export_cap_kw {
            lp.add_sparse(
                &[(v(Quantity::ExportPv), 1.0), (v(Quantity::ExportChp), 1.0)],
                Relation::Le,
                cap,
            );
        }
        if let Some(b) = idx.boiler_on(t) {
            lp.add_sparse(&[(v(Quantity::BoilerTh), 1.0), (b, -params.boiler_max_kw)], Relation::Le, 0.0);
            lp.add_sparse(&[(v(Quantity::BoilerTh), 1.0), (b, -params.boiler_min_kw)], Relation::Ge, 0.0);
        }
        if let Some(g) = idx.grid_direction(t) {
            let big_m = el + pv + chp_el + params.batt_max_charge_kw + params.batt_max_discharge_kw;
            lp.add_sparse(&[(v(Quantity::GridImport), 1.0), (g, -big_m)], Relation::Le, 0.0);
            lp.add_sparse(
                &[(v(Quantity::ExportPv), 1.0), (v(Quantity::ExportChp), 1.0), (g, big_m)],
                Relation::Le,
                big_m,
            );
        }
    }
    add_dwell_constraints(&mut lp, p, params, &idx);
    Ok(MixedIntegerProgram::new(lp, binaries))
}

/// Minimum up and down times, including the time already spent in the
/// current mode before the horizon starts.
fn add_dwell_constraints(lp: &mut LinearProgram, p: &HorizonProblem, params: &PlantParameters, idx: &VarIndex) {
    let on = |t| idx.var(Quantity::ChpOn, t);
    let min_on = params.chp_min_on_steps as usize;
    let min_off = params.chp_min_off_steps as usize;
    let s = &p.initial_state;
    let elapsed = s.chp_steps_in_current_mode as usize;
    if s.chp_on && min_on > elapsed {
        for t in 0..(min_on - elapsed).min(p.steps) {
            let (_, hi) = lp.bounds[on(t)];
            lp.set_bounds(on(t), hi, hi);
        }
    }
    if !s.chp_on && min_off > elapsed {
        for t in 0..(min_off - elapsed).min(p.steps) {
            let (lo, _) = lp.bounds[on(t)];
            lp.set_bounds(on(t), lo, lo);
        }
    }
    for t in 0..p.steps {
        // switch at t: on[t] - on[t-1]; the previous value is a constant at t = 0.
        let prev = (t > 0).then(|| on(t - 1));
        let prev_const = f64::from(u8::from(s.chp_on));
        for tau in t + 1..(t + min_on).min(p.steps) {
            // on[tau] >= on[t] - on[t-1]
            let mut terms = vec![(on(tau), 1.0), (on(t), -1.0)];
            let mut rhs = 0.0;
            match prev {
                Some(pv) => terms.push((pv, 1.0)),
                None => rhs -= prev_const,
            }
            lp.add_sparse(&terms, Relation::Ge, rhs);
        }
        for tau in t + 1..(t + min_off).min(p.steps) {
            // on[tau] <= 1 - (on[t-1] - on[t])
            let mut terms = vec![(on(tau), 1.0), (on(t), -1.0)];
            let mut rhs = 1.0;
            match prev {
                Some(pv) => terms.push((pv, 1.0)),
                None => rhs -= prev_const,
            }
            lp.add_sparse(&terms, Relation::Le, rhs);
        }
    }
}

/// Optimized plan over one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSchedule {
    pub start_time: NaiveDateTime,
    pub dt_h: f64,
    pub setpoints: Vec<DispatchSetpoint>,
    pub planned_export_pv_kw: Vec<f64>,
    pub planned_export_chp_kw: Vec<f64>,
    pub planned_soc_batt_kwh: Vec<f64>,
    pub planned_soc_tes_kwh: Vec<f64>,
    pub planned_objective_eur: f64,
    pub nodes_explored: usize,
    pub lp_iterations: usize,
    pub incumbent_node: usize,
}

impl HorizonSchedule {
    pub fn len(&self) -> usize {
        self.setpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.setpoints.is_empty()
    }
}

fn snap(v: f64, lo: f64, hi: f64) -> f64 {
    let v = v.clamp(lo, hi);
    if v.abs() < SNAP_TOL {
        0.0
    } else {
        v
    }
}

/// Solves the horizon MILP and extracts setpoints.
///
/// The raw solver values are cleaned before use: binaries are rounded,
/// near-zero flows snapped, simultaneous battery charge and discharge netted
/// out with the SOC effect kept, and the small remaining bus residual booked
/// on the grid flows so every planned step balances exactly. SOC
/// trajectories are recomputed from the cleaned flows.
pub fn optimize_horizon(
    p: &HorizonProblem,
    params: &PlantParameters,
    cfg: &BnbConfig,
) -> Result<HorizonSchedule, SchedulerError> {
    optimize_horizon_with_hint(p, params, cfg, None)
}

/// [`optimize_horizon`] warm-started from an earlier plan: its binary
/// decisions, shifted to this horizon's start and extended with the last
/// planned step, seed the branch-and-bound incumbent.
pub fn optimize_horizon_with_hint(
    p: &HorizonProblem,
    params: &PlantParameters,
    cfg: &BnbConfig,
    previous: Option<&HorizonSchedule>,
) -> Result<HorizonSchedule, SchedulerError> {
    let mip = build_horizon_milp(p, params)?;
    let hint = previous.and_then(|prev| binary_hint(p, prev));
    let sol = solve_milp_with_hint(&mip, cfg, hint.as_deref())?;
    extract_schedule(p, params, &sol)
}

/// Binary values of `prev` mapped onto the columns of `p`, in the order the
/// binaries are registered by [`build_horizon_milp`].
fn binary_hint(p: &HorizonProblem, prev: &HorizonSchedule) -> Option<Vec<bool>> {
    if prev.is_empty() || (prev.dt_h - p.dt_h).abs() > 1e-12 {
        return None;
    }
    let offset_s = (p.initial_state.sim_time - prev.start_time).num_seconds() as f64;
    let shift = (offset_s / (p.dt_h * 3600.0)).round();
    if shift < 0.0 {
        return None;
    }
    let shift = shift as usize;
    let idx = p.var_index();
    let mut hint = Vec::new();
    for t in 0..p.steps {
        let k = (t + shift).min(prev.len() - 1);
        let sp = &prev.setpoints[k];
        hint.push(sp.chp_on);
        if idx.boiler_on(t).is_some() {
            hint.push(sp.boiler_th_kw > 0.0);
        }
        if idx.grid_direction(t).is_some() {
            hint.push(sp.planned_export_kw <= 0.0);
        }
    }
    Some(hint)
}

fn extract_schedule(
    p: &HorizonProblem,
    params: &PlantParameters,
    sol: &MilpSolution,
) -> Result<HorizonSchedule, SchedulerError> {
    match sol.status {
        MilpStatus::Optimal => {}
        MilpStatus::Infeasible => return Err(SchedulerError::ScheduleInfeasible),
        MilpStatus::NodeLimit if sol.x.is_empty() => return Err(SchedulerError::NoIncumbent),
        MilpStatus::NodeLimit => {}
    }
    let idx = p.var_index();
    let dt = p.dt_h;
    let batt = params.battery_efficiencies();
    let tes = params.tes_efficiencies();
    let round_trip = batt.charge * batt.discharge;
    let mut out = HorizonSchedule {
        start_time: p.initial_state.sim_time,
        dt_h: dt,
        setpoints: Vec::with_capacity(p.steps),
        planned_export_pv_kw: Vec::with_capacity(p.steps),
        planned_export_chp_kw: Vec::with_capacity(p.steps),
        planned_soc_batt_kwh: Vec::with_capacity(p.steps),
        planned_soc_tes_kwh: Vec::with_capacity(p.steps),
        planned_objective_eur: sol.objective_value,
        nodes_explored: sol.nodes_explored,
        lp_iterations: sol.lp_iterations,
        incumbent_node: sol.incumbent_node,
    };
    let mut soc_b = p.initial_state.batt_soc_kwh.clamp(0.0, params.batt_usable_kwh());
    let mut soc_t = p.initial_state.tes_soc_kwh.max(0.0);
    for t in 0..p.steps {
        let x = |q| sol.x[idx.var(q, t)];
        let pv = p.forecasts.pv.values[t];
        let el = p.forecasts.el_load.values[t];
        let chp_on = x(Quantity::ChpOn) > 0.5;
        let chp_el = if chp_on { params.chp_el_kw } else { 0.0 };
        let mut ch = snap(x(Quantity::BattCharge), 0.0, params.batt_max_charge_kw);
        let mut dis = snap(x(Quantity::BattDischarge), 0.0, params.batt_max_discharge_kw);
        let mut imp = snap(x(Quantity::GridImport), 0.0, f64::INFINITY);
        let mut curt = snap(x(Quantity::PvCurtail), 0.0, pv);
        let mut exp_pv = snap(x(Quantity::ExportPv), 0.0, pv - curt);
        let mut exp_chp = snap(x(Quantity::ExportChp), 0.0, chp_el);
        let boiler = snap(x(Quantity::BoilerTh), 0.0, params.boiler_max_kw);

        if ch > 0.0 && dis > 0.0 {
            // Same SOC change with only one of the two flows.
            let net_soc = batt.charge * ch - dis / batt.discharge;
            let (new_ch, new_dis) = if net_soc >= 0.0 {
                (net_soc / batt.charge, 0.0)
            } else {
                (0.0, -net_soc * batt.discharge)
            };
            let mut surplus = (dis - new_dis) - (ch - new_ch);
            ch = new_ch;
            dis = new_dis;
            debug_assert!(surplus <= SNAP_TOL || round_trip < 1.0);
            let cut = surplus.min(imp);
            imp -= cut;
            surplus -= cut;
            let cut = surplus.min(pv - curt - exp_pv).max(0.0);
            curt += cut;
            surplus -= cut;
            exp_pv += surplus.max(0.0);
        }

        // Book the residual of the cleaned values on the grid flows.
        let residual = (pv - curt) + chp_el + dis + imp - (el + ch + exp_pv + exp_chp);
        if residual > 0.0 {
            let cut = residual.min(imp);
            imp -= cut;
            let rest = residual - cut;
            if exp_pv + rest <= pv - curt || chp_el == 0.0 {
                exp_pv += rest;
            } else {
                exp_chp += rest;
            }
        } else if residual < 0.0 {
            let need = -residual;
            let cut = need.min(exp_pv + exp_chp);
            let from_chp = cut.min(exp_chp);
            exp_chp -= from_chp;
            exp_pv -= cut - from_chp;
            imp += need - cut;
        }

        soc_b = storage_step_unchecked(soc_b, ch, dis, dt, batt);
        let th_in = if chp_on { params.chp_th_kw } else { 0.0 } + boiler;
        soc_t = storage_step_unchecked(soc_t, th_in, p.forecasts.th_load.values[t], dt, tes);
        out.planned_soc_batt_kwh.push(soc_b);
        out.planned_soc_tes_kwh.push(soc_t);
        out.planned_export_pv_kw.push(exp_pv);
        out.planned_export_chp_kw.push(exp_chp);
        out.setpoints.push(DispatchSetpoint {
            chp_on,
            boiler_th_kw: boiler,
            batt_charge_kw: ch,
            batt_discharge_kw: dis,
            pv_curtail_kw: curt,
            planned_import_kw: imp,
            planned_export_kw: exp_pv + exp_chp,
        });
    }
    Ok(out)
}

/// Header of the schedule CSV written by [`write_schedule_csv`].
pub const SCHEDULE_CSV_HEADER: &str = "step,timestamp,chp_on,boiler_th_kw,batt_charge_kw,batt_discharge_kw,pv_curtail_kw,grid_import_kw,export_pv_kw,export_chp_kw,soc_batt_kwh,soc_tes_kwh";

/// One row per step, numbers with six decimals.
pub fn write_schedule_csv<W: Write>(s: &HorizonSchedule, mut w: W) -> io::Result<()> {
    writeln!(w, "{SCHEDULE_CSV_HEADER}")?;
    let step = chrono::Duration::seconds((s.dt_h * 3600.0).round() as i64);
    for (t, sp) in s.setpoints.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            t,
            (s.start_time + step * t as i32).format("%Y-%m-%dT%H:%M:%S"),
            u8::from(sp.chp_on),
            sp.boiler_th_kw,
            sp.batt_charge_kw,
            sp.batt_discharge_kw,
            sp.pv_curtail_kw,
            sp.planned_import_kw,
            s.planned_export_pv_kw[t],
            s.planned_export_chp_kw[t],
            s.planned_soc_batt_kwh[t],
            s.planned_soc_tes_kwh[t],
        )?;
    }
    Ok(())
}
