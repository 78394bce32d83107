//! Cost accounting, performance indicators and the grid-plus-gas-heater
//! reference system.

use thiserror::Error;

use crate::domain::PlantParameters;
use crate::scheduler::{AvoidedGridBasis, TariffSchedule, TariffStep};
use crate::secondary::CorrectionOutcome;
use crate::simloop::StepRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpiError {
    #[error("{records} step records but {tariffs} tariff steps")]
    AlignmentMismatch { records: usize, tariffs: usize },
}

/// Cost (positive) and revenue (positive) components of one step, EUR.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCosts {
    pub gas: f64,
    pub electricity_import: f64,
    pub chp_start: f64,
    pub pv_feedin: f64,
    pub chp_feedin: f64,
    pub avoided_grid: f64,
}

impl StepCosts {
    pub fn total(&self) -> f64 {
        self.gas + self.electricity_import + self.chp_start
            - self.pv_feedin
            - self.chp_feedin
            - self.avoided_grid
    }
}

/// Prices the realized flows of one step.
pub fn step_costs(
    o: &CorrectionOutcome,
    tariff: &TariffStep,
    params: &PlantParameters,
    basis: AvoidedGridBasis,
    dt_h: f64,
) -> StepCosts {
    let credited_chp = match basis {
        AvoidedGridBasis::Exported => o.chp_export,
        AvoidedGridBasis::SelfConsumed => o.chp_el - o.chp_export,
    };
    StepCosts {
        gas: tariff.gas_price * (o.chp_fuel + o.boiler_th / params.boiler_eta) * dt_h,
        electricity_import: tariff.price_import * o.grid_import * dt_h,
        chp_start: if o.chp_cold_start {
            tariff.chp_start_cost
        } else {
            0.0
        },
        pv_feedin: tariff.feedin_pv * o.pv_export * dt_h,
        chp_feedin: tariff.feedin_chp * o.chp_export * dt_h,
        avoided_grid: tariff.avoided_grid_credit * credited_chp * dt_h,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KpiOptions {
    /// Leave curtailed PV out of the self-consumption denominator.
    pub exclude_curtailed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KpiReport {
    pub steps: usize,
    pub span_h: f64,
    pub gas_cost_eur: f64,
    pub import_cost_eur: f64,
    pub chp_start_cost_eur: f64,
    pub pv_feedin_revenue_eur: f64,
    pub chp_feedin_revenue_eur: f64,
    pub avoided_grid_revenue_eur: f64,
    pub total_cost_eur: f64,
    pub pv_self_consumption_rate: f64,
    /// False when no PV was generated; the rate is then reported as 1.
    pub pv_rate_defined: bool,
    pub chp_self_consumption_rate: f64,
    pub chp_rate_defined: bool,
    pub battery_full_cycles: f64,
    pub chp_runtime_h: f64,
    pub chp_starts: usize,
    pub peak_export_kw: f64,
    pub peak_import_kw: f64,
    pub el_load_kwh: f64,
    pub th_load_kwh: f64,
    pub pv_generation_kwh: f64,
    pub pv_curtailed_kwh: f64,
    pub pv_export_kwh: f64,
    pub chp_el_kwh: f64,
    pub chp_export_kwh: f64,
    pub grid_import_kwh: f64,
    pub grid_export_kwh: f64,
    pub batt_discharge_kwh: f64,
    pub boiler_th_kwh: f64,
    pub unmet_heat_kwh: f64,
    pub correction_total_kw: f64,
    pub thermal_infeasible_steps: usize,
}

fn rate(used: f64, total: f64) -> (f64, bool) {
    if total > 0.0 {
        ((used / total).clamp(0.0, 1.0), true)
    } else {
        (1.0, false)
    }
}

/// Aggregates step records into run totals. Costs are recomputed from the
/// realized flows and `tariffs`, which must be aligned with `records`.
pub fn accumulate(
    records: &[StepRecord],
    tariffs: &TariffSchedule,
    params: &PlantParameters,
    opts: KpiOptions,
) -> Result<KpiReport, KpiError> {
    if records.len() != tariffs.len() {
        return Err(KpiError::AlignmentMismatch {
            records: records.len(),
            tariffs: tariffs.len(),
        });
    }
    let mut r = KpiReport {
        steps: records.len(),
        ..Default::default()
    };
    for (rec, tariff) in records.iter().zip(&tariffs.steps) {
        let dt = rec.dt_h;
        let o = &rec.outcome;
        let c = step_costs(o, tariff, params, tariffs.avoided_grid_basis, dt);
        r.span_h += dt;
        r.gas_cost_eur += c.gas;
        r.import_cost_eur += c.electricity_import;
        r.chp_start_cost_eur += c.chp_start;
        r.pv_feedin_revenue_eur += c.pv_feedin;
        r.chp_feedin_revenue_eur += c.chp_feedin;
        r.avoided_grid_revenue_eur += c.avoided_grid;
        r.el_load_kwh += rec.actual_el_load * dt;
        r.th_load_kwh += rec.actual_th_load * dt;
        r.pv_generation_kwh += o.pv_available * dt;
        r.pv_curtailed_kwh += o.pv_curtailed * dt;
        r.pv_export_kwh += o.pv_export * dt;
        r.chp_el_kwh += o.chp_el * dt;
        r.chp_export_kwh += o.chp_export * dt;
        r.grid_import_kwh += o.grid_import * dt;
        r.grid_export_kwh += o.grid_export() * dt;
        r.batt_discharge_kwh += o.batt_discharge * dt;
        r.boiler_th_kwh += o.boiler_th * dt;
        r.unmet_heat_kwh += o.unmet_heat_kwh;
        r.correction_total_kw += o.correction_magnitude_kw;
        r.peak_export_kw = r.peak_export_kw.max(o.grid_export());
        r.peak_import_kw = r.peak_import_kw.max(o.grid_import);
        if o.chp_el > 0.0 {
            r.chp_runtime_h += dt;
        }
        r.chp_starts += usize::from(o.chp_cold_start);
        r.thermal_infeasible_steps += usize::from(o.thermal_infeasible);
    }
    r.total_cost_eur = r.gas_cost_eur + r.import_cost_eur + r.chp_start_cost_eur
        - r.pv_feedin_revenue_eur
        - r.chp_feedin_revenue_eur
        - r.avoided_grid_revenue_eur;
    let pv_base = if opts.exclude_curtailed {
        r.pv_generation_kwh - r.pv_curtailed_kwh
    } else {
        r.pv_generation_kwh
    };
    let pv_used = r.pv_generation_kwh - r.pv_export_kwh - r.pv_curtailed_kwh;
    (r.pv_self_consumption_rate, r.pv_rate_defined) = rate(pv_used, pv_base);
    (r.chp_self_consumption_rate, r.chp_rate_defined) =
        rate(r.chp_el_kwh - r.chp_export_kwh, r.chp_el_kwh);
    r.battery_full_cycles = r.batt_discharge_kwh / params.batt_usable_kwh();
    Ok(r)
}

/// Energy cost of supplying the same demand from the grid and an ideal gas
/// heater, without any storage or conversion losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineCost {
    pub electricity_eur: f64,
    pub heat_eur: f64,
    pub total_eur: f64,
}

pub fn conventional_baseline(el_kwh: f64, th_kwh: f64, tariff: &TariffStep) -> BaselineCost {
    const HEATER_EFFICIENCY: f64 = 1.0;
    let electricity_eur = el_kwh * tariff.price_import;
    let heat_eur = th_kwh * tariff.gas_price / HEATER_EFFICIENCY;
    BaselineCost {
        electricity_eur,
        heat_eur,
        total_eur: electricity_eur + heat_eur,
    }
}
