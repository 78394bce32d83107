//! Independent oracles shared by the integration tests. The LP oracle never
//! calls the simplex code; the MILP oracle only uses it for plain LPs, which
//! the LP oracle covers.

#![allow(dead_code)]

use pvchp_core::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use pvchp_core::milp::MixedIntegerProgram;
use rand::Rng;

/// Random LP with at most 6 variables and 6 rows. Every variable has finite
/// bounds, so a feasible instance always has an optimal vertex.
pub fn random_small_lp<R: Rng>(rng: &mut R) -> LinearProgram {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let objective = (0..n).map(|_| coarse(rng, -5.0, 5.0)).collect();
    let mut lp = LinearProgram::new(objective);
    for j in 0..n {
        let lo = coarse(rng, -3.0, 0.0);
        let hi = lo + coarse(rng, 0.5, 6.0);
        lp.set_bounds(j, lo, hi);
    }
    for _ in 0..m {
        let coeffs = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    coarse(rng, -5.0, 5.0)
                }
            })
            .collect();
        let relation = match rng.gen_range(0..10) {
            0 | 1 => Relation::Eq,
            2..=5 => Relation::Le,
            _ => Relation::Ge,
        };
        lp.add_constraint(coeffs, relation, coarse(rng, -6.0, 6.0));
    }
    lp
}

/// Uniform draw rounded to one decimal, which produces plenty of ties and
/// degenerate vertices.
fn coarse<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 10.0).round() / 10.0
}

/// Minimum objective over all vertices of a bounded LP, by enumerating every
/// choice of `n` active hyperplanes (rows taken as equalities plus bound
/// planes). `None` when no vertex is feasible.
pub fn vertex_enumeration_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut equalities: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.constraints {
        match row.relation {
            Relation::Eq => equalities.push((row.coeffs.clone(), row.rhs)),
            _ => planes.push((row.coeffs.clone(), row.rhs)),
        }
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lo));
        planes.push((e, hi));
    }
    let mut best: Option<f64> = None;
    let free = n.checked_sub(equalities.len());
    let mut try_system = |rows: Vec<&(Vec<f64>, f64)>| {
        if let Some(x) = solve_square(&rows, n) {
            if violation(lp, &x) <= 1e-9 {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
    };
    match free {
        Some(k) => {
            for subset in combinations(planes.len(), k) {
                let mut rows: Vec<&(Vec<f64>, f64)> = equalities.iter().collect();
                rows.extend(subset.iter().map(|&i| &planes[i]));
                try_system(rows);
            }
        }
        None => {
            // More equalities than variables: any vertex is fixed by some n of them.
            for subset in combinations(equalities.len(), n) {
                try_system(subset.iter().map(|&i| &equalities[i]).collect());
            }
        }
    }
    best
}

fn violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for row in &lp.constraints {
        let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        worst = worst.max(match row.relation {
            Relation::Le => lhs - row.rhs,
            Relation::Ge => row.rhs - lhs,
            Relation::Eq => (lhs - row.rhs).abs(),
        });
    }
    for (&(lo, hi), &v) in lp.bounds.iter().zip(x) {
        worst = worst.max(lo - v).max(v - hi);
    }
    worst
}

/// Gaussian elimination with partial pivoting; `None` for singular systems.
fn solve_square(rows: &[&(Vec<f64>, f64)], n: usize) -> Option<Vec<f64>> {
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|(r, b)| {
            let mut v = r.clone();
            v.push(*b);
            v
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        for i in 0..n {
            if i != c {
                let f = a[i][c] / a[c][c];
                if f != 0.0 {
                    for k in c..=n {
                        a[i][k] -= f * a[c][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            if n - i < k - current.len() {
                break;
            }
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// Random horizon dispatch problem around the reference tariffs. Loads, PV,
/// initial storage contents, prices, an optional export cap and the dwell
/// times are all drawn at random.
pub fn random_horizon_problem<R: Rng>(
    rng: &mut R,
    steps: usize,
) -> (pvchp_core::scheduler::HorizonProblem, pvchp_core::domain::PlantParameters) {
    use chrono::NaiveDate;
    use pvchp_core::domain::{PlantParameters, PlantState};
    use pvchp_core::profiles::{ScenarioProfiles, TimeSeriesProfile};
    use pvchp_core::scheduler::{AvoidedGridBasis, HorizonProblem, TariffSchedule, TariffStep};

    let mut params = PlantParameters::default();
    if rng.gen_bool(0.3) {
        params.chp_min_on_steps = rng.gen_range(1..=3);
        params.chp_min_off_steps = rng.gen_range(1..=3);
    }
    let start = NaiveDate::from_ymd_opt(2013, 4, 17)
        .unwrap()
        .and_hms_opt(rng.gen_range(0..24), 0, 0)
        .unwrap();
    let mut series = |lo: f64, hi: f64| {
        let v = (0..steps).map(|_| rng.gen_range(lo..hi)).collect();
        TimeSeriesProfile::new(start, 10, v).unwrap()
    };
    let el = series(0.0, 2.0);
    let th = series(0.0, 5.0);
    let pv = series(0.0, 3.2);
    let forecasts = ScenarioProfiles::new(el, th, pv).unwrap();
    let scale = rng.gen_range(0.5..1.5);
    let cap = rng.gen_bool(0.3).then(|| rng.gen_range(0.0..2.0));
    let basis = if rng.gen_bool(0.2) {
        AvoidedGridBasis::SelfConsumed
    } else {
        AvoidedGridBasis::Exported
    };
    let tariffs = TariffSchedule {
        steps: (0..steps)
            .map(|_| TariffStep {
                price_import: 0.2838 * rng.gen_range(0.7..1.3),
                feedin_pv: if rng.gen_bool(0.2) { 0.0 } else { 0.1256 },
                feedin_chp: 0.09392,
                avoided_grid_credit: 0.005,
                gas_price: 0.0652 * scale,
                chp_start_cost: rng.gen_range(0.0..0.2),
                pcc_export_cap_kw: cap,
                pv_export_tiebreak: 0.0,
            })
            .collect(),
        avoided_grid_basis: basis,
    };
    let chp_on = rng.gen_bool(0.5);
    let state = PlantState {
        batt_soc_kwh: rng.gen_range(0.0..params.batt_usable_kwh()),
        tes_soc_kwh: rng.gen_range(0.0..params.tes_capacity_kwh()),
        chp_on,
        chp_steps_in_current_mode: rng.gen_range(0..4),
        sim_time: start,
    };
    (HorizonProblem::new(forecasts, tariffs, state), params)
}

/// Best objective over every assignment of the binaries, each solved as a
/// plain LP.
pub fn enumeration_optimum(mip: &MixedIntegerProgram) -> Option<f64> {
    let k = mip.binary_indices.len();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << k) {
        let mut lp = mip.lp.clone();
        let mut admissible = true;
        for (bit, &j) in mip.binary_indices.iter().enumerate() {
            let v = ((mask >> bit) & 1) as f64;
            let (lo, hi) = lp.bounds[j];
            if v < lo || v > hi {
                admissible = false;
                break;
            }
            lp.set_bounds(j, v, v);
        }
        if !admissible {
            continue;
        }
        let sol = solve_lp(&lp).unwrap();
        if sol.status == LpStatus::Optimal {
            best = Some(best.map_or(sol.objective_value, |b: f64| b.min(sol.objective_value)));
        }
    }
    best
}
