//! Rule-based correction of one scheduled step against realized PV and loads.
//!
//! The corrector works in four stages: guard the thermal store, absorb the
//! electrical forecast error with the battery, settle the rest with the
//! grid (respecting the export cap), and attribute the resulting flows to
//! their sources. The CHP commitment is taken from the schedule unchanged.

use chrono::Duration;
use thiserror::Error;

use crate::domain::{
    chp_transfer, storage_step_unchecked, DispatchSetpoint, PlantParameters, PlantState,
};
use crate::scheduler::{AvoidedGridBasis, TariffStep};

/// Deviations and limit violations below this are ignored.
pub const DEADBAND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryConfig {
    /// TES content, as a multiple of nominal capacity, above which an
    /// overcharge is reported as thermally infeasible.
    pub tes_safety_limit: f64,
}

impl Default for SecondaryConfig {
    fn default() -> Self {
        Self {
            tes_safety_limit: 1.2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SecondaryError {
    #[error("invalid input {name} = {value}")]
    InvalidInput { name: &'static str, value: f64 },
}

/// Realized flows of one step (kW) and the state it ends in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrectionOutcome {
    pub pv_available: f64,
    pub pv_to_load: f64,
    pub pv_to_batt: f64,
    pub pv_export: f64,
    pub pv_curtailed: f64,
    pub chp_el: f64,
    pub chp_el_to_load: f64,
    pub chp_el_to_batt: f64,
    pub chp_export: f64,
    pub chp_fuel: f64,
    pub batt_charge: f64,
    pub batt_discharge: f64,
    pub batt_to_load: f64,
    /// Battery energy exported beyond what PV and CHP output can be credited for.
    pub batt_export: f64,
    pub grid_import: f64,
    pub grid_to_load: f64,
    pub grid_to_batt: f64,
    pub boiler_th: f64,
    pub chp_th: f64,
    pub tes_charge: f64,
    pub tes_discharge: f64,
    /// Heat demand that could not be served, kWh.
    pub unmet_heat_kwh: f64,
    /// TES content above nominal capacity at the end of the step, kWh.
    pub tes_overcharge_kwh: f64,
    /// Unmet heat, or TES content above the safety limit.
    pub thermal_infeasible: bool,
    /// Export above the cap that could not be removed (CHP output alone).
    pub cap_excess_kw: f64,
    pub chp_cold_start: bool,
    /// L1 distance between scheduled and realized battery and grid flows.
    pub correction_magnitude_kw: f64,
    pub updated_state: PlantState,
}

impl CorrectionOutcome {
    pub fn grid_export(&self) -> f64 {
        self.pv_export + self.chp_export + self.batt_export
    }

    /// Signed electrical balance residual: sources minus sinks.
    pub fn balance_residual(&self, el_load: f64) -> f64 {
        (self.pv_available - self.pv_curtailed) + self.chp_el + self.batt_discharge + self.grid_import
            - (el_load + self.batt_charge + self.grid_export())
    }
}

fn check(name: &'static str, value: f64) -> Result<(), SecondaryError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(SecondaryError::InvalidInput { name, value })
    }
}

/// Reconciles `setpoint` with the realized inputs of one step.
#[allow(clippy::too_many_arguments)]
pub fn apply_secondary(
    state: &PlantState,
    setpoint: &DispatchSetpoint,
    actual_pv: f64,
    actual_el_load: f64,
    actual_th_load: f64,
    params: &PlantParameters,
    tariff: &TariffStep,
    basis: AvoidedGridBasis,
    dt_h: f64,
    cfg: &SecondaryConfig,
) -> Result<CorrectionOutcome, SecondaryError> {
    check("actual_pv", actual_pv)?;
    check("actual_el_load", actual_el_load)?;
    check("actual_th_load", actual_th_load)?;
    if !(dt_h > 0.0) {
        return Err(SecondaryError::InvalidInput { name: "dt_h", value: dt_h });
    }
    let mut out = CorrectionOutcome::default();
    let chp = chp_transfer(setpoint.chp_on, params);
    out.chp_el = chp.el_kw;
    out.chp_th = chp.th_kw;
    out.chp_fuel = chp.fuel_kw;
    out.chp_cold_start = setpoint.chp_on && !state.chp_on;

    // 1. Thermal store guard.
    let tes = params.tes_efficiencies();
    let cap = params.tes_capacity_kwh();
    let kept = state.tes_soc_kwh * tes.retention(dt_h);
    let project = |boiler: f64, served: f64| {
        storage_step_unchecked(state.tes_soc_kwh, chp.th_kw + boiler, served, dt_h, tes)
    };
    let mut boiler = setpoint.boiler_th_kw.clamp(0.0, params.boiler_max_kw);
    let mut served = actual_th_load;
    let mut soc_t = project(boiler, served);
    if soc_t < -DEADBAND {
        boiler = (boiler - soc_t / (tes.charge * dt_h)).min(params.boiler_max_kw);
        soc_t = project(boiler, served);
        if soc_t < -DEADBAND {
            // Serve what the store can give and book the rest as unmet.
            let available = kept + tes.charge * (chp.th_kw + boiler) * dt_h;
            served = (available * tes.discharge / dt_h).max(0.0);
            out.unmet_heat_kwh = (actual_th_load - served) * dt_h;
            out.thermal_infeasible = true;
            soc_t = 0.0;
        }
    } else if soc_t > cap + DEADBAND && boiler > 0.0 {
        let excess = soc_t - cap;
        boiler = (boiler - excess / (tes.charge * dt_h)).max(0.0);
        soc_t = project(boiler, served);
    }
    if soc_t < 0.0 {
        soc_t = 0.0;
    }
    out.tes_overcharge_kwh = (soc_t - cap).max(0.0);
    if soc_t > cfg.tes_safety_limit * cap {
        out.thermal_infeasible = true;
    }
    out.boiler_th = boiler;
    out.tes_charge = chp.th_kw + boiler;
    out.tes_discharge = served;

    // 2. Battery absorbs the electrical forecast error.
    let batt = params.battery_efficiencies();
    let usable = params.batt_usable_kwh();
    let kept_b = state.batt_soc_kwh * batt.retention(dt_h);
    let max_ch = params
        .batt_max_charge_kw
        .min(((usable - kept_b) / (batt.charge * dt_h)).max(0.0));
    let max_dis = params
        .batt_max_discharge_kw
        .min((kept_b * batt.discharge / dt_h).max(0.0));
    let mut curtail = setpoint.pv_curtail_kw.clamp(0.0, actual_pv);
    let surplus = (actual_pv - curtail) + chp.el_kw - actual_el_load;
    let b_sp = setpoint.battery_net_kw();
    let planned_surplus = b_sp + setpoint.planned_export_kw - setpoint.planned_import_kw;
    let mut delta = surplus - planned_surplus;
    if delta.abs() <= DEADBAND {
        delta = 0.0;
    }
    let mut b = b_sp + delta;
    if b > max_ch + DEADBAND {
        b = max_ch;
    } else if -b > max_dis + DEADBAND {
        b = -max_dis;
    }
    // Without a deviation the scheduled flows are kept verbatim.
    let (mut ch, mut dis, imp, mut exp) = if delta == 0.0 && b == b_sp {
        (
            setpoint.batt_charge_kw,
            setpoint.batt_discharge_kw,
            setpoint.planned_import_kw,
            setpoint.planned_export_kw,
        )
    } else {
        let g = surplus - b;
        (b.max(0.0), (-b).max(0.0), (-g).max(0.0), g.max(0.0))
    };

    // 3. Export cap: less discharge or more charging first, then curtail PV.
    // Enforced without deadband so rounding noise in the schedule never
    // lands above the cap.
    if let Some(cap_kw) = tariff.pcc_export_cap_kw {
        if exp > cap_kw {
            let mut excess = exp - cap_kw;
            let less = excess.min(dis);
            dis -= less;
            excess -= less;
            if dis == 0.0 {
                let extra = excess.min((max_ch - ch).max(0.0));
                ch += extra;
                excess -= extra;
            }
            let extra = excess.min(actual_pv - curtail);
            curtail += extra;
            excess -= extra;
            exp = cap_kw + excess;
            if excess > DEADBAND {
                out.cap_excess_kw = excess;
            }
        }
    }

    // 4. Attribution: exports are credited to the better-paid source first.
    let pv_used = actual_pv - curtail;
    let credit_pv = tariff.feedin_pv;
    let credit_chp = tariff.chp_export_credit(basis);
    let (exp_pv, exp_chp) = if credit_pv >= credit_chp {
        let p = exp.min(pv_used);
        (p, (exp - p).min(chp.el_kw))
    } else {
        let c = exp.min(chp.el_kw);
        ((exp - c).min(pv_used), c)
    };
    out.pv_available = actual_pv;
    out.pv_curtailed = curtail;
    out.pv_export = exp_pv;
    out.chp_export = exp_chp;
    out.batt_export = (exp - exp_pv - exp_chp).max(0.0);
    out.batt_charge = ch;
    out.batt_discharge = dis;
    out.grid_import = imp;

    let pv_self = (pv_used - exp_pv).max(0.0);
    let chp_self = (chp.el_kw - exp_chp).max(0.0);
    out.pv_to_batt = pv_self.min(ch);
    out.pv_to_load = pv_self - out.pv_to_batt;
    out.chp_el_to_batt = chp_self.min(ch - out.pv_to_batt);
    out.chp_el_to_load = chp_self - out.chp_el_to_batt;
    out.grid_to_batt = (ch - out.pv_to_batt - out.chp_el_to_batt).max(0.0);
    out.grid_to_load = (imp - out.grid_to_batt).max(0.0);
    out.batt_to_load = (dis - out.batt_export).max(0.0);

    let mut correction = (ch - setpoint.batt_charge_kw).abs()
        + (dis - setpoint.batt_discharge_kw).abs()
        + (imp - setpoint.planned_import_kw).abs()
        + (exp - setpoint.planned_export_kw).abs();
    if correction <= DEADBAND {
        correction = 0.0;
    }
    out.correction_magnitude_kw = correction;

    let mut soc_b = storage_step_unchecked(state.batt_soc_kwh, ch, dis, dt_h, batt);
    soc_b = soc_b.clamp(0.0, usable);
    let same_mode = setpoint.chp_on == state.chp_on;
    out.updated_state = PlantState {
        batt_soc_kwh: soc_b,
        tes_soc_kwh: soc_t,
        chp_on: setpoint.chp_on,
        chp_steps_in_current_mode: if same_mode {
            state.chp_steps_in_current_mode.saturating_add(1)
        } else {
            1
        },
        sim_time: state.sim_time + Duration::seconds((dt_h * 3600.0).round() as i64),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    const DT: f64 = 1.0 / 6.0;

    fn table2() -> TariffStep {
        TariffStep {
            price_import: 0.2838,
            feedin_pv: 0.1256,
            feedin_chp: 0.09392,
            avoided_grid_credit: 0.005,
            gas_price: 0.0652,
            chp_start_cost: 0.02,
            pcc_export_cap_kw: None,
            pv_export_tiebreak: 0.0,
        }
    }

    fn state(batt: f64, tes: f64, on: bool) -> PlantState {
        PlantState {
            batt_soc_kwh: batt,
            tes_soc_kwh: tes,
            chp_on: on,
            chp_steps_in_current_mode: 3,
            sim_time: NaiveDate::from_ymd_opt(2013, 7, 17).unwrap().and_hms_opt(12, 0, 0).unwrap(),
        }
    }

    fn run(s: &PlantState, sp: &DispatchSetpoint, pv: f64, el: f64, th: f64, t: &TariffStep) -> CorrectionOutcome {
        apply_secondary(s, sp, pv, el, th, &PlantParameters::default(), t, AvoidedGridBasis::Exported, DT, &SecondaryConfig::default())
            .unwrap()
    }

    #[test]
    fn matching_forecast_keeps_schedule() {
        // pv 2.0, load 0.6: charge 0.5, export 0.9.
        let sp = DispatchSetpoint {
            chp_on: false,
            boiler_th_kw: 0.0,
            batt_charge_kw: 0.5,
            batt_discharge_kw: 0.0,
            pv_curtail_kw: 0.0,
            planned_import_kw: 0.0,
            planned_export_kw: 0.9,
        };
        let o = run(&state(1.0, 5.0, false), &sp, 2.0, 0.6, 1.0, &table2());
        assert_eq!(o.correction_magnitude_kw, 0.0);
        assert_eq!(o.batt_charge, 0.5);
        assert_eq!(o.grid_export(), 0.9);
        assert_eq!(o.pv_export, 0.9);
        assert!(o.balance_residual(0.6).abs() < 1e-12);
    }

    #[test]
    fn pv_shortfall_reverses_charging() {
        // Planned: pv 1.5, load 1.0, charge 0.5. Realized pv is 1.0 lower.
        let sp = DispatchSetpoint {
            batt_charge_kw: 0.5,
            ..Default::default()
        };
        let s = state(1.0, 5.0, false);
        let o = run(&s, &sp, 0.5, 1.0, 0.0, &table2());
        assert_eq!(o.batt_charge, 0.0);
        assert!((o.batt_discharge - 0.5).abs() < 1e-12);
        assert_eq!(o.grid_import, 0.0);
        assert!((o.correction_magnitude_kw - 1.0).abs() < 1e-12);
        let etas = PlantParameters::default().battery_efficiencies();
        let expected = 1.0 * etas.retention(DT) - 0.5 * DT / 0.9;
        assert!((o.updated_state.batt_soc_kwh - expected).abs() < 1e-12);
        assert!(o.balance_residual(1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_battery_leaves_deficit_to_grid() {
        let sp = DispatchSetpoint::default();
        let o = run(&state(0.0, 5.0, false), &sp, 0.0, 1.2, 0.0, &table2());
        assert_eq!(o.batt_discharge, 0.0);
        assert!((o.grid_import - 1.2).abs() < 1e-12);
        assert!((o.grid_to_load - 1.2).abs() < 1e-12);
    }

    #[test]
    fn chp_stays_on_without_heat_demand() {
        let sp = DispatchSetpoint {
            chp_on: true,
            planned_export_kw: 0.5,
            ..Default::default()
        };
        let p = PlantParameters::default();
        let s = state(1.0, 5.0, true);
        let o = run(&s, &sp, 0.0, 0.5, 0.0, &table2());
        assert!(o.updated_state.chp_on);
        let tes = p.tes_efficiencies();
        let expected = 5.0 * tes.retention(DT) + tes.charge * 2.4 * DT;
        assert!((o.updated_state.tes_soc_kwh - expected).abs() < 1e-12);
        assert_eq!(o.chp_export, 0.5);
    }

    #[test]
    fn tes_overcharge_is_recorded() {
        let p = PlantParameters::default();
        let cap = p.tes_capacity_kwh();
        let sp = DispatchSetpoint {
            chp_on: true,
            boiler_th_kw: 3.0,
            ..Default::default()
        };
        let o = run(&state(1.0, cap, true), &sp, 0.0, 1.0, 0.0, &table2());
        assert_eq!(o.boiler_th, 0.0);
        assert!(o.tes_overcharge_kwh > 0.0);
        assert!(!o.thermal_infeasible);
        let o = run(&state(1.0, 1.25 * cap, true), &sp, 0.0, 1.0, 0.0, &table2());
        assert!(o.thermal_infeasible);
    }

    #[test]
    fn empty_tes_raises_boiler() {
        let sp = DispatchSetpoint::default();
        let o = run(&state(1.0, 0.0, false), &sp, 0.0, 0.0, 6.0, &table2());
        let tes = PlantParameters::default().tes_efficiencies();
        assert!((o.boiler_th - 6.0 / (tes.charge * tes.discharge)).abs() < 1e-9);
        assert!(o.updated_state.tes_soc_kwh.abs() < 1e-9);
        assert_eq!(o.unmet_heat_kwh, 0.0);
        let o = run(&state(1.0, 0.0, false), &sp, 0.0, 0.0, 40.0, &table2());
        assert_eq!(o.boiler_th, 30.0);
        assert!(o.unmet_heat_kwh > 0.0 && o.thermal_infeasible);
        assert_eq!(o.updated_state.tes_soc_kwh, 0.0);
    }

    #[test]
    fn export_cap_curtails_after_battery() {
        let mut t = table2();
        t.pcc_export_cap_kw = Some(1.0);
        let sp = DispatchSetpoint {
            planned_export_kw: 1.0,
            ..Default::default()
        };
        // Full battery: excess 1.0 above the plan can only be curtailed.
        let usable = PlantParameters::default().batt_usable_kwh();
        let o = run(&state(usable, 5.0, false), &sp, 3.0, 1.0, 0.0, &t);
        assert!(o.grid_export() <= 1.0 + 1e-12);
        // Standing losses free a little headroom in the full battery.
        let etas = PlantParameters::default().battery_efficiencies();
        let headroom = usable * (1.0 - etas.retention(DT)) / (etas.charge * DT);
        assert!((o.batt_charge - headroom).abs() < 1e-9);
        assert!((o.pv_curtailed - (1.0 - headroom)).abs() < 1e-9);
        assert!(o.balance_residual(1.0).abs() < 1e-12);
        // Empty battery takes the excess instead.
        let o = run(&state(0.0, 5.0, false), &sp, 3.0, 1.0, 0.0, &t);
        assert!((o.batt_charge - 1.0).abs() < 1e-12);
        assert_eq!(o.pv_curtailed, 0.0);
    }

    #[test]
    fn export_cap_holds_against_rounding_noise() {
        let mut t = table2();
        t.pcc_export_cap_kw = Some(1.92);
        let exp = 1.92 + 4.0 * f64::EPSILON;
        let sp = DispatchSetpoint {
            planned_export_kw: exp,
            ..Default::default()
        };
        let o = run(&state(1.0, 5.0, false), &sp, exp + 0.5, 0.5, 0.0, &t);
        assert!(o.grid_export() <= 1.92);
        assert_eq!(o.correction_magnitude_kw, 0.0);
        assert!(o.balance_residual(0.5).abs() < 1e-12);
    }

    #[test]
    fn cold_start_detected() {
        let sp = DispatchSetpoint {
            chp_on: true,
            planned_export_kw: 1.0,
            ..Default::default()
        };
        let o = run(&state(1.0, 5.0, false), &sp, 0.0, 0.0, 2.0, &table2());
        assert!(o.chp_cold_start);
        assert_eq!(o.updated_state.chp_steps_in_current_mode, 1);
    }

    proptest! {
        #[test]
        fn invariants_hold_for_any_inputs(
            batt in 0.0f64..2.4, tes in 0.0f64..12.0, was_on: bool, on: bool,
            boiler in 0.0f64..5.0, ch in 0.0f64..2.0, dis in 0.0f64..2.0, curt in 0.0f64..1.0,
            imp in 0.0f64..2.0, exp in 0.0f64..2.0,
            pv in 0.0f64..3.2, el in 0.0f64..4.0, th in 0.0f64..8.0, cap in proptest::option::of(0.0f64..3.0),
        ) {
            let mut t = table2();
            t.pcc_export_cap_kw = cap;
            let (ch, dis) = if ch > dis { (ch - dis, 0.0) } else { (0.0, dis - ch) };
            let sp = DispatchSetpoint {
                chp_on: on, boiler_th_kw: boiler, batt_charge_kw: ch, batt_discharge_kw: dis,
                pv_curtail_kw: curt, planned_import_kw: imp, planned_export_kw: exp,
            };
            let o = run(&state(batt, tes, was_on), &sp, pv, el, th, &t);
            prop_assert!(o.balance_residual(el).abs() <= 1e-9);
            prop_assert_eq!(o.updated_state.chp_on, on);
            let usable = PlantParameters::default().batt_usable_kwh();
            prop_assert!(o.updated_state.batt_soc_kwh >= 0.0 && o.updated_state.batt_soc_kwh <= usable);
            prop_assert!(o.updated_state.tes_soc_kwh >= 0.0);
            if let Some(c) = cap {
                // Only CHP output that cannot be switched off may exceed the cap.
                prop_assert!(o.grid_export() <= c + o.cap_excess_kw + 1e-9);
                prop_assert!(o.cap_excess_kw <= o.chp_el + 1e-9);
            }
            for v in [o.pv_to_load, o.pv_to_batt, o.pv_export, o.pv_curtailed, o.chp_el_to_load,
                      o.chp_el_to_batt, o.chp_export, o.batt_to_load, o.batt_export, o.grid_import,
                      o.grid_to_load, o.grid_to_batt, o.boiler_th, o.tes_discharge] {
                prop_assert!(v >= 0.0);
            }
        }
    }
}
