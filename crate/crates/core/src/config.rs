//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are grouped by
//! prefix (`sim.`, `plant.`, `tariff.`, `solver.`, `secondary.`, `kpi.`,
//! `sweep.`); unknown keys are rejected. [`to_config_text`] writes every key
//! and parses back to the same configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::milp::Branching;
use crate::profiles::{DayType, ForecastMethod};
use crate::scheduler::AvoidedGridBasis;
use crate::simloop::{IncentiveOption, Mode, PriceSource, ScenarioSource, SimulationConfig, SweepSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub sim: SimulationConfig,
    pub sweep: SweepSpec,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, String> = v.split(',').map(|s| parse(s.trim())).collect();
    match items {
        Ok(list) if !list.is_empty() => Ok(list),
        Ok(_) => Err("empty list".into()),
        Err(e) => Err(e),
    }
}

fn parse_optional_f64(v: &str) -> Result<Option<f64>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn parse_basis(v: &str) -> Result<AvoidedGridBasis, String> {
    match v {
        "exported" => Ok(AvoidedGridBasis::Exported),
        "self_consumed" => Ok(AvoidedGridBasis::SelfConsumed),
        _ => Err("expected exported or self_consumed".into()),
    }
}

fn basis_name(b: AvoidedGridBasis) -> &'static str {
    match b {
        AvoidedGridBasis::Exported => "exported",
        AvoidedGridBasis::SelfConsumed => "self_consumed",
    }
}

fn parse_branching(v: &str) -> Result<Branching, String> {
    match v {
        "most_fractional" => Ok(Branching::MostFractional),
        "first_fractional" => Ok(Branching::FirstFractional),
        _ => Err("expected most_fractional or first_fractional".into()),
    }
}

fn branching_name(b: Branching) -> &'static str {
    match b {
        Branching::MostFractional => "most_fractional",
        Branching::FirstFractional => "first_fractional",
    }
}

fn set(cfg: &mut ConfigFile, key: &str, v: &str) -> Result<bool, String> {
    let s = &mut cfg.sim;
    let p = &mut s.plant;
    let t = &mut s.tariff;
    match key {
        "sim.mode" => s.mode = parse::<Mode>(v)?,
        "sim.option" => s.option = parse::<IncentiveOption>(v)?,
        "sim.horizon_steps" => s.horizon_steps = parse(v)?,
        "sim.step_minutes" => s.step_minutes = parse(v)?,
        "sim.reoptimize_every_steps" => s.reoptimize_every_steps = parse(v)?,
        "sim.day_type" => {
            if !matches!(s.scenario, ScenarioSource::File(_)) {
                s.scenario = ScenarioSource::DayType(parse::<DayType>(v)?);
            } else {
                parse::<DayType>(v)?;
            }
        }
        "sim.profile_path" => {
            if v != "none" {
                s.scenario = ScenarioSource::File(PathBuf::from(v));
            }
        }
        "sim.seed" => s.seed = parse(v)?,
        "sim.warmup_steps" => {
            s.warmup_steps = if v == "auto" { None } else { Some(parse(v)?) };
        }
        "sim.forecast_b" => s.forecast_b = parse::<ForecastMethod>(v)?,
        "sim.warm_start" => s.warm_start = parse_bool(v)?,
        "sim.thermal_infeasible_tolerance" => s.thermal_infeasible_tolerance = parse(v)?,
        "sim.initial_batt_soc_fraction" => s.initial.batt_soc_fraction = parse(v)?,
        "sim.initial_tes_soc_fraction" => s.initial.tes_soc_fraction = parse(v)?,
        "sim.initial_chp_on" => s.initial.chp_on = parse_bool(v)?,

        "plant.pv_peak_kw" => p.pv_peak_kw = parse(v)?,
        "plant.chp_el_kw" => p.chp_el_kw = parse(v)?,
        "plant.chp_th_kw" => p.chp_th_kw = parse(v)?,
        "plant.chp_eta_el" => p.chp_eta_el = parse(v)?,
        "plant.chp_eta_th" => p.chp_eta_th = parse(v)?,
        "plant.boiler_min_kw" => p.boiler_min_kw = parse(v)?,
        "plant.boiler_max_kw" => p.boiler_max_kw = parse(v)?,
        "plant.boiler_eta" => p.boiler_eta = parse(v)?,
        "plant.batt_capacity_kwh" => p.batt_capacity_kwh = parse(v)?,
        "plant.batt_usable_fraction" => p.batt_usable_fraction = parse(v)?,
        "plant.batt_eta_charge" => p.batt_eta_charge = parse(v)?,
        "plant.batt_eta_discharge" => p.batt_eta_discharge = parse(v)?,
        "plant.batt_standing_retention_per_day" => p.batt_standing_retention_per_day = parse(v)?,
        "plant.batt_max_charge_kw" => p.batt_max_charge_kw = parse(v)?,
        "plant.batt_max_discharge_kw" => p.batt_max_discharge_kw = parse(v)?,
        "plant.tes_volume_l" => p.tes_volume_l = parse(v)?,
        "plant.tes_delta_t_k" => p.tes_delta_t_k = parse(v)?,
        "plant.tes_eta_charge" => p.tes_eta_charge = parse(v)?,
        "plant.tes_eta_discharge" => p.tes_eta_discharge = parse(v)?,
        "plant.tes_standing_retention_per_day" => p.tes_standing_retention_per_day = parse(v)?,
        "plant.chp_min_on_steps" => p.chp_min_on_steps = parse(v)?,
        "plant.chp_min_off_steps" => p.chp_min_off_steps = parse(v)?,

        "tariff.price_import" => t.price_import = parse(v)?,
        "tariff.feedin_pv" => t.feedin_pv = parse(v)?,
        "tariff.feedin_chp" => t.feedin_chp = parse(v)?,
        "tariff.avoided_grid_credit" => t.avoided_grid_credit = parse(v)?,
        "tariff.gas_price" => t.gas_price = parse(v)?,
        "tariff.chp_start_cost" => t.chp_start_cost = parse(v)?,
        "tariff.avoided_grid_basis" => t.avoided_grid_basis = parse_basis(v)?,
        "tariff.curtail_fraction" => t.curtail_fraction = parse(v)?,
        "tariff.export_cap_kw" => t.export_cap_kw = parse_optional_f64(v)?,
        "tariff.window_start_hour" => t.window_start_hour = parse(v)?,
        "tariff.window_end_hour" => t.window_end_hour = parse(v)?,
        "tariff.unpaid_export_tiebreak" => t.unpaid_export_tiebreak = parse(v)?,
        "tariff.price_source" => t.price_source = parse::<PriceSource>(v)?,

        "solver.absolute_gap" => s.solver.absolute_gap = parse(v)?,
        "solver.node_limit" => s.solver.node_limit = parse(v)?,
        "solver.branching" => s.solver.branching = parse_branching(v)?,
        "solver.semicontinuous_boiler" => s.model.semicontinuous_boiler = parse_bool(v)?,
        "solver.exclusive_grid_flow" => s.model.exclusive_grid_flow = parse_bool(v)?,
        "solver.terminal_value_batt" => s.model.terminal_value_batt = parse(v)?,
        "solver.terminal_value_tes" => s.model.terminal_value_tes = parse(v)?,

        "secondary.tes_safety_limit" => s.secondary.tes_safety_limit = parse(v)?,
        "kpi.exclude_curtailed" => s.kpi.exclude_curtailed = parse_bool(v)?,

        "sweep.options" => cfg.sweep.options = parse_list(v)?,
        "sweep.modes" => cfg.sweep.modes = parse_list(v)?,
        "sweep.day_types" => cfg.sweep.day_types = parse_list(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses configuration text on top of the defaults.
pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut cfg = ConfigFile::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
        match set(&mut cfg, key, value) {
            Ok(true) => {}
            Ok(false) => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
            Err(reason) => {
                return Err(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                    reason,
                })
            }
        }
    }
    Ok(cfg)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Every simulation key with its current value, one per line.
pub fn to_config_text(s: &SimulationConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    let p = &s.plant;
    let t = &s.tariff;
    kv("sim.mode", s.mode.to_string());
    kv("sim.option", s.option.to_string());
    kv("sim.horizon_steps", s.horizon_steps.to_string());
    kv("sim.step_minutes", s.step_minutes.to_string());
    kv("sim.reoptimize_every_steps", s.reoptimize_every_steps.to_string());
    match &s.scenario {
        ScenarioSource::DayType(d) => kv("sim.day_type", d.to_string()),
        ScenarioSource::File(path) => kv("sim.profile_path", path.display().to_string()),
    }
    kv("sim.seed", s.seed.to_string());
    kv(
        "sim.warmup_steps",
        s.warmup_steps.map_or("auto".into(), |w| w.to_string()),
    );
    kv("sim.forecast_b", s.forecast_b.to_string());
    kv("sim.warm_start", s.warm_start.to_string());
    kv("sim.thermal_infeasible_tolerance", s.thermal_infeasible_tolerance.to_string());
    kv("sim.initial_batt_soc_fraction", s.initial.batt_soc_fraction.to_string());
    kv("sim.initial_tes_soc_fraction", s.initial.tes_soc_fraction.to_string());
    kv("sim.initial_chp_on", s.initial.chp_on.to_string());
    for (k, v) in [
        ("plant.pv_peak_kw", p.pv_peak_kw),
        ("plant.chp_el_kw", p.chp_el_kw),
        ("plant.chp_th_kw", p.chp_th_kw),
        ("plant.chp_eta_el", p.chp_eta_el),
        ("plant.chp_eta_th", p.chp_eta_th),
        ("plant.boiler_min_kw", p.boiler_min_kw),
        ("plant.boiler_max_kw", p.boiler_max_kw),
        ("plant.boiler_eta", p.boiler_eta),
        ("plant.batt_capacity_kwh", p.batt_capacity_kwh),
        ("plant.batt_usable_fraction", p.batt_usable_fraction),
        ("plant.batt_eta_charge", p.batt_eta_charge),
        ("plant.batt_eta_discharge", p.batt_eta_discharge),
        ("plant.batt_standing_retention_per_day", p.batt_standing_retention_per_day),
        ("plant.batt_max_charge_kw", p.batt_max_charge_kw),
        ("plant.batt_max_discharge_kw", p.batt_max_discharge_kw),
        ("plant.tes_volume_l", p.tes_volume_l),
        ("plant.tes_delta_t_k", p.tes_delta_t_k),
        ("plant.tes_eta_charge", p.tes_eta_charge),
        ("plant.tes_eta_discharge", p.tes_eta_discharge),
        ("plant.tes_standing_retention_per_day", p.tes_standing_retention_per_day),
    ] {
        kv(k, v.to_string());
    }
    kv("plant.chp_min_on_steps", p.chp_min_on_steps.to_string());
    kv("plant.chp_min_off_steps", p.chp_min_off_steps.to_string());
    for (k, v) in [
        ("tariff.price_import", t.price_import),
        ("tariff.feedin_pv", t.feedin_pv),
        ("tariff.feedin_chp", t.feedin_chp),
        ("tariff.avoided_grid_credit", t.avoided_grid_credit),
        ("tariff.gas_price", t.gas_price),
        ("tariff.chp_start_cost", t.chp_start_cost),
    ] {
        kv(k, v.to_string());
    }
    kv("tariff.avoided_grid_basis", basis_name(t.avoided_grid_basis).into());
    kv("tariff.curtail_fraction", t.curtail_fraction.to_string());
    kv(
        "tariff.export_cap_kw",
        t.export_cap_kw.map_or("none".into(), |c| c.to_string()),
    );
    kv("tariff.window_start_hour", t.window_start_hour.to_string());
    kv("tariff.window_end_hour", t.window_end_hour.to_string());
    kv("tariff.unpaid_export_tiebreak", t.unpaid_export_tiebreak.to_string());
    kv("tariff.price_source", t.price_source.to_string());
    kv("solver.absolute_gap", s.solver.absolute_gap.to_string());
    kv("solver.node_limit", s.solver.node_limit.to_string());
    kv("solver.branching", branching_name(s.solver.branching).into());
    kv("solver.semicontinuous_boiler", s.model.semicontinuous_boiler.to_string());
    kv("solver.exclusive_grid_flow", s.model.exclusive_grid_flow.to_string());
    kv("solver.terminal_value_batt", s.model.terminal_value_batt.to_string());
    kv("solver.terminal_value_tes", s.model.terminal_value_tes.to_string());
    kv("secondary.tes_safety_limit", s.secondary.tes_safety_limit.to_string());
    kv("kpi.exclude_curtailed", s.kpi.exclude_curtailed.to_string());
    out
}

/// [`to_config_text`] plus the sweep grid.
pub fn to_config_file_text(c: &ConfigFile) -> String {
    let mut out = to_config_text(&c.sim);
    let _ = writeln!(out, "sweep.options = {}", join(&c.sweep.options));
    let _ = writeln!(out, "sweep.modes = {}", join(&c.sweep.modes));
    let _ = writeln!(out, "sweep.day_types = {}", join(&c.sweep.day_types));
    out
}
