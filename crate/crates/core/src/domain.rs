//! Plant parameters, plant state, dispatch setpoints and the component
//! transfer equations shared by the optimizer, the secondary controller and
//! the simulator.

use chrono::NaiveDateTime;
use thiserror::Error;

/// Specific heat capacity of water in kJ/(kg K).
pub const WATER_CP_KJ_PER_KG_K: f64 = 4.186;

/// Slack allowed below zero before a storage update is reported infeasible.
pub const STORAGE_TOLERANCE_KWH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid plant parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("storage discharge exceeds stored energy: soc would become {soc_kwh} kWh")]
    InfeasibleDischarge { soc_kwh: f64 },
}

/// Physical and efficiency parameters of the PV, CHP, boiler, battery and
/// thermal storage.
///
/// Efficiency triples of both storages are stored as (charge, discharge,
/// standing retention per day).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParameters {
    pub pv_peak_kw: f64,
    pub chp_el_kw: f64,
    pub chp_th_kw: f64,
    pub chp_eta_el: f64,
    pub chp_eta_th: f64,
    pub boiler_min_kw: f64,
    pub boiler_max_kw: f64,
    pub boiler_eta: f64,
    pub batt_capacity_kwh: f64,
    pub batt_usable_fraction: f64,
    pub batt_eta_charge: f64,
    pub batt_eta_discharge: f64,
    pub batt_standing_retention_per_day: f64,
    pub batt_max_charge_kw: f64,
    pub batt_max_discharge_kw: f64,
    pub tes_volume_l: f64,
    pub tes_delta_t_k: f64,
    pub tes_eta_charge: f64,
    pub tes_eta_discharge: f64,
    pub tes_standing_retention_per_day: f64,
    pub chp_min_off_steps: u32,
    pub chp_min_on_steps: u32,
}

impl Default for PlantParameters {
    /// Single-family house reference system: 3.2 kWp PV, 1 kW_el micro-CHP,
    /// 4 kWh battery (60 % usable), 300 l hot-water tank, 2.4-30 kW boiler.
    fn default() -> Self {
        Self {
            pv_peak_kw: 3.2,
            chp_el_kw: 1.0,
            chp_th_kw: 2.4,
            chp_eta_el: 0.263,
            chp_eta_th: 0.657,
            boiler_min_kw: 2.4,
            boiler_max_kw: 30.0,
            boiler_eta: 1.0,
            batt_capacity_kwh: 4.0,
            batt_usable_fraction: 0.6,
            batt_eta_charge: 0.99,
            batt_eta_discharge: 0.9,
            batt_standing_retention_per_day: 0.92,
            batt_max_charge_kw: 4.0,
            batt_max_discharge_kw: 4.0,
            tes_volume_l: 300.0,
            tes_delta_t_k: 35.0,
            tes_eta_charge: 0.98,
            tes_eta_discharge: 0.9,
            tes_standing_retention_per_day: 0.92,
            chp_min_off_steps: 1,
            chp_min_on_steps: 1,
        }
    }
}

impl PlantParameters {
    /// Checks every invariant of the parameter set.
    pub fn validate(&self) -> Result<(), DomainError> {
        let positive = [
            ("pv_peak_kw", self.pv_peak_kw),
            ("chp_el_kw", self.chp_el_kw),
            ("chp_th_kw", self.chp_th_kw),
            ("boiler_max_kw", self.boiler_max_kw),
            ("batt_capacity_kwh", self.batt_capacity_kwh),
            ("batt_max_charge_kw", self.batt_max_charge_kw),
            ("batt_max_discharge_kw", self.batt_max_discharge_kw),
            ("tes_volume_l", self.tes_volume_l),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DomainError::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive and finite",
                });
            }
        }
        let fractions = [
            ("chp_eta_el", self.chp_eta_el),
            ("chp_eta_th", self.chp_eta_th),
            ("boiler_eta", self.boiler_eta),
            ("batt_usable_fraction", self.batt_usable_fraction),
            ("batt_eta_charge", self.batt_eta_charge),
            ("batt_eta_discharge", self.batt_eta_discharge),
            (
                "batt_standing_retention_per_day",
                self.batt_standing_retention_per_day,
            ),
            ("tes_eta_charge", self.tes_eta_charge),
            ("tes_eta_discharge", self.tes_eta_discharge),
            (
                "tes_standing_retention_per_day",
                self.tes_standing_retention_per_day,
            ),
        ];
        for (name, value) in fractions {
            if !(value > 0.0 && value <= 1.0) {
                return Err(DomainError::InvalidParameter {
                    name,
                    value,
                    reason: "must lie in (0, 1]",
                });
            }
        }
        if !(self.boiler_min_kw >= 0.0 && self.boiler_min_kw <= self.boiler_max_kw) {
            return Err(DomainError::InvalidParameter {
                name: "boiler_min_kw",
                value: self.boiler_min_kw,
                reason: "must lie in [0, boiler_max_kw]",
            });
        }
        if !(self.tes_delta_t_k >= 0.0 && self.tes_delta_t_k.is_finite()) {
            return Err(DomainError::InvalidParameter {
                name: "tes_delta_t_k",
                value: self.tes_delta_t_k,
                reason: "must be non-negative",
            });
        }
        if self.chp_min_on_steps == 0 || self.chp_min_off_steps == 0 {
            return Err(DomainError::InvalidParameter {
                name: "chp_min_on_steps/chp_min_off_steps",
                value: 0.0,
                reason: "dwell counts start at 1",
            });
        }
        Ok(())
    }

    pub fn batt_usable_kwh(&self) -> f64 {
        self.batt_capacity_kwh * self.batt_usable_fraction
    }

    pub fn tes_capacity_kwh(&self) -> f64 {
        tes_capacity_kwh(self)
    }

    pub fn battery_efficiencies(&self) -> StorageEfficiencies {
        StorageEfficiencies {
            charge: self.batt_eta_charge,
            discharge: self.batt_eta_discharge,
            retention_per_day: self.batt_standing_retention_per_day,
        }
    }

    pub fn tes_efficiencies(&self) -> StorageEfficiencies {
        StorageEfficiencies {
            charge: self.tes_eta_charge,
            discharge: self.tes_eta_discharge,
            retention_per_day: self.tes_standing_retention_per_day,
        }
    }
}

/// Charge efficiency, discharge efficiency and standing retention per day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageEfficiencies {
    pub charge: f64,
    pub discharge: f64,
    pub retention_per_day: f64,
}

impl StorageEfficiencies {
    pub const LOSSLESS: Self = Self {
        charge: 1.0,
        discharge: 1.0,
        retention_per_day: 1.0,
    };

    /// Retention factor applied to the stored energy over a step of `dt_h` hours.
    pub fn retention(&self, dt_h: f64) -> f64 {
        self.retention_per_day.powf(dt_h / 24.0)
    }
}

/// Storage and commitment state of the plant at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlantState {
    pub batt_soc_kwh: f64,
    pub tes_soc_kwh: f64,
    pub chp_on: bool,
    pub chp_steps_in_current_mode: u32,
    pub sim_time: NaiveDateTime,
}

/// Set values for one step, handed from the horizon optimizer to the
/// secondary controller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchSetpoint {
    pub chp_on: bool,
    pub boiler_th_kw: f64,
    pub batt_charge_kw: f64,
    pub batt_discharge_kw: f64,
    pub pv_curtail_kw: f64,
    pub planned_import_kw: f64,
    pub planned_export_kw: f64,
}

impl DispatchSetpoint {
    /// Signed battery power, positive when charging.
    pub fn battery_net_kw(&self) -> f64 {
        self.batt_charge_kw - self.batt_discharge_kw
    }
}

/// Tank capacity in kWh for water (1 kg/l) over the usable temperature band.
pub fn tes_capacity_kwh(params: &PlantParameters) -> f64 {
    params.tes_volume_l * WATER_CP_KJ_PER_KG_K * params.tes_delta_t_k / 3600.0
}

/// Power flows of the CHP unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChpOutput {
    pub fuel_kw: f64,
    pub el_kw: f64,
    pub th_kw: f64,
}

/// On/off CHP transfer: rated electrical and thermal output when on, fuel
/// input derived from the electrical efficiency.
pub fn chp_transfer(on: bool, params: &PlantParameters) -> ChpOutput {
    if on {
        ChpOutput {
            fuel_kw: params.chp_el_kw / params.chp_eta_el,
            el_kw: params.chp_el_kw,
            th_kw: params.chp_th_kw,
        }
    } else {
        ChpOutput {
            fuel_kw: 0.0,
            el_kw: 0.0,
            th_kw: 0.0,
        }
    }
}

/// Energy bookkeeping of a storage over one step. The result is not clamped
/// to the storage capacity; callers enforce upper bounds.
pub fn storage_step(
    soc_kwh: f64,
    charge_kw: f64,
    discharge_kw: f64,
    dt_h: f64,
    etas: StorageEfficiencies,
) -> Result<f64, DomainError> {
    let next = storage_step_unchecked(soc_kwh, charge_kw, discharge_kw, dt_h, etas);
    if next < -STORAGE_TOLERANCE_KWH {
        return Err(DomainError::InfeasibleDischarge { soc_kwh: next });
    }
    Ok(next)
}

/// Same update as [`storage_step`] without the feasibility check.
pub fn storage_step_unchecked(
    soc_kwh: f64,
    charge_kw: f64,
    discharge_kw: f64,
    dt_h: f64,
    etas: StorageEfficiencies,
) -> f64 {
    soc_kwh * etas.retention(dt_h) + etas.charge * charge_kw * dt_h
        - discharge_kw * dt_h / etas.discharge
}
