//! Depth-first branch-and-bound over binary variables.
//!
//! Every node re-solves the LP relaxation on one shared [`Simplex`]
//! tableau, starting from the basis left by the previously solved node.
//! Children are visited floor branch first. Once an incumbent exists,
//! binaries whose reduced cost rules out the opposite bound are fixed for
//! the whole subtree.

use thiserror::Error;

use crate::lp::{LinearProgram, LpError, LpStatus, Simplex, SimplexOptions};

/// Distance from {0, 1} tolerated for a binary coordinate.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Slack added before a reduced-cost argument fixes a binary, covering the
/// simplex optimality tolerance.
const FIX_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    pub binary_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branching {
    MostFractional,
    FirstFractional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    pub absolute_gap: f64,
    pub node_limit: usize,
    pub branching: Branching,
    pub simplex: SimplexOptions,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            absolute_gap: 1e-6,
            node_limit: 100_000,
            branching: Branching::MostFractional,
            simplex: SimplexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Best incumbent; empty when none was found.
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub nodes_explored: usize,
    /// Objective of the root relaxation (`-inf` if the root was not solved).
    pub root_bound: f64,
    pub lp_iterations: usize,
    /// Node at which the returned incumbent was found (0 when none).
    pub incumbent_node: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("malformed mixed-integer program: {0}")]
    Malformed(String),
    #[error("LP relaxation unbounded at node {node}")]
    Unbounded { node: usize },
    #[error("LP failure at node {node}: {source}")]
    Lp {
        node: usize,
        #[source]
        source: LpError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Free,
    Zero,
    One,
}

impl MixedIntegerProgram {
    pub fn new(lp: LinearProgram, binary_indices: Vec<usize>) -> Self {
        Self { lp, binary_indices }
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        self.lp
            .validate()
            .map_err(|e| MilpError::Malformed(e.to_string()))?;
        let n = self.lp.num_vars();
        let mut seen = vec![false; n];
        for &j in &self.binary_indices {
            if j >= n {
                return Err(MilpError::Malformed(format!(
                    "binary index {j} outside {n} variables"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(MilpError::Malformed(format!("binary index {j} repeated")));
            }
            let (lo, hi) = self.lp.bounds[j];
            if lo < 0.0 || hi > 1.0 {
                return Err(MilpError::Malformed(format!(
                    "binary variable {j} has bounds [{lo}, {hi}] outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

pub fn solve_milp(mip: &MixedIntegerProgram, cfg: &BnbConfig) -> Result<MilpSolution, MilpError> {
    solve_milp_with_hint(mip, cfg, None)
}

/// Like [`solve_milp`], seeded with a candidate assignment of the binaries
/// (one value per entry of `binary_indices`). The candidate is evaluated by
/// one LP solve with all binaries fixed; if that LP is feasible its solution
/// becomes the initial incumbent. The search itself is unchanged, so the
/// result is optimal within the gap whether or not the hint was any good.
pub fn solve_milp_with_hint(
    mip: &MixedIntegerProgram,
    cfg: &BnbConfig,
    hint: Option<&[bool]>,
) -> Result<MilpSolution, MilpError> {
    mip.validate()?;
    if let Some(h) = hint {
        if h.len() != mip.binary_indices.len() {
            return Err(MilpError::Malformed(format!(
                "hint has {} values for {} binaries",
                h.len(),
                mip.binary_indices.len()
            )));
        }
    }
    if cfg.absolute_gap < 0.0 || cfg.node_limit == 0 {
        return Err(MilpError::Malformed(
            "absolute_gap must be >= 0 and node_limit >= 1".into(),
        ));
    }
    let binaries = &mip.binary_indices;
    // Tighten fractional bounds of binaries to the integers they admit.
    let mut root_lp = mip.lp.clone();
    let mut root_fix = Vec::with_capacity(binaries.len());
    for &j in binaries {
        let (lo, hi) = root_lp.bounds[j];
        let (lo, hi) = (lo.ceil(), hi.floor());
        if lo > hi {
            return Ok(infeasible(0, f64::NEG_INFINITY, 0));
        }
        root_lp.bounds[j] = (lo, hi);
        root_fix.push(match (lo as i8, hi as i8) {
            (0, 0) => Fix::Zero,
            (1, 1) => Fix::One,
            _ => Fix::Free,
        });
    }

    let mut simplex =
        Simplex::new(&root_lp, cfg.simplex.clone()).map_err(|source| MilpError::Lp {
            node: 0,
            source,
        })?;
    let mut applied = root_fix.clone();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut lp_iterations = 0usize;
    if let Some(h) = hint {
        let admissible = h.iter().zip(&root_fix).all(|(&v, f)| match f {
            Fix::Free => true,
            Fix::Zero => !v,
            Fix::One => v,
        });
        if admissible {
            for (k, &j) in binaries.iter().enumerate() {
                let (fix, v) = if h[k] { (Fix::One, 1.0) } else { (Fix::Zero, 0.0) };
                simplex.set_bounds(j, v, v);
                applied[k] = fix;
            }
            let trial = simplex
                .solve()
                .map_err(|source| MilpError::Lp { node: 0, source })?;
            lp_iterations += trial.iterations;
            if trial.status == LpStatus::Optimal {
                incumbent = Some((trial.objective_value, trial.x));
            }
        }
    }
    // Each open node carries the relaxation bound of its parent.
    let mut stack = vec![(root_fix, f64::NEG_INFINITY)];
    let mut incumbent_node = 0usize;
    let mut nodes = 0usize;
    let mut root_bound = f64::NEG_INFINITY;
    let mut hit_limit = false;

    while let Some((fixes, parent_bound)) = stack.pop() {
        if let Some((best, _)) = &incumbent {
            if parent_bound >= best - cfg.absolute_gap {
                continue;
            }
        }
        if nodes >= cfg.node_limit {
            hit_limit = true;
            break;
        }
        nodes += 1;
        for (k, &j) in binaries.iter().enumerate() {
            if applied[k] != fixes[k] {
                let (lo, hi) = match fixes[k] {
                    Fix::Free => (0.0, 1.0),
                    Fix::Zero => (0.0, 0.0),
                    Fix::One => (1.0, 1.0),
                };
                simplex.set_bounds(j, lo, hi);
                applied[k] = fixes[k];
            }
        }
        let relaxation = simplex.solve().map_err(|source| MilpError::Lp {
            node: nodes,
            source,
        })?;
        lp_iterations += relaxation.iterations;
        match relaxation.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(MilpError::Unbounded { node: nodes }),
            LpStatus::Optimal => {}
        }
        if nodes == 1 {
            root_bound = relaxation.objective_value;
        }
        if let Some((best, _)) = &incumbent {
            if relaxation.objective_value >= best - cfg.absolute_gap {
                continue;
            }
        }
        match select_branch(&relaxation.x, binaries, &fixes, cfg.branching) {
            None => {
                let better = incumbent
                    .as_ref()
                    .is_none_or(|(best, _)| relaxation.objective_value < *best);
                if better {
                    incumbent = Some((relaxation.objective_value, relaxation.x));
                    incumbent_node = nodes;
                }
            }
            Some(k) => {
                let mut fixes = fixes;
                if let (Some((best, _)), Some(d)) = (&incumbent, simplex.reduced_costs()) {
                    let room = best - cfg.absolute_gap - relaxation.objective_value + FIX_MARGIN;
                    fix_by_reduced_cost(&relaxation.x, d, room, binaries, &mut fixes);
                }
                let mut up = fixes.clone();
                up[k] = Fix::One;
                let mut down = fixes;
                down[k] = Fix::Zero;
                stack.push((up, relaxation.objective_value));
                stack.push((down, relaxation.objective_value));
            }
        }
    }

    Ok(match incumbent {
        Some((objective_value, x)) => MilpSolution {
            status: if hit_limit {
                MilpStatus::NodeLimit
            } else {
                MilpStatus::Optimal
            },
            x,
            objective_value,
            nodes_explored: nodes,
            root_bound,
            lp_iterations,
            incumbent_node,
        },
        None if hit_limit => MilpSolution {
            status: MilpStatus::NodeLimit,
            x: Vec::new(),
            objective_value: f64::INFINITY,
            nodes_explored: nodes,
            root_bound,
            lp_iterations,
            incumbent_node,
        },
        None => infeasible(nodes, root_bound, lp_iterations),
    })
}

fn infeasible(nodes: usize, root_bound: f64, lp_iterations: usize) -> MilpSolution {
    MilpSolution {
        status: MilpStatus::Infeasible,
        x: Vec::new(),
        objective_value: f64::INFINITY,
        nodes_explored: nodes,
        root_bound,
        lp_iterations,
        incumbent_node: 0,
    }
}

/// Fixes free binaries resting at a bound whose reduced cost shows that
/// moving them to the other bound cannot beat the incumbent: the
/// relaxation bound would rise by more than `room`.
fn fix_by_reduced_cost(x: &[f64], d: &[f64], room: f64, binaries: &[usize], fixes: &mut [Fix]) {
    for (k, &j) in binaries.iter().enumerate() {
        if fixes[k] != Fix::Free {
            continue;
        }
        if x[j] <= INTEGRALITY_TOL && d[j] > room {
            fixes[k] = Fix::Zero;
        } else if x[j] >= 1.0 - INTEGRALITY_TOL && -d[j] > room {
            fixes[k] = Fix::One;
        }
    }
}

/// Position in `binaries` of the variable to branch on, or `None` when all
/// free binaries are integral. Ties go to the lowest position.
fn select_branch(x: &[f64], binaries: &[usize], fixes: &[Fix], rule: Branching) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &j) in binaries.iter().enumerate() {
        if fixes[k] != Fix::Free {
            continue;
        }
        let frac = x[j] - x[j].floor();
        let dist = frac.min(1.0 - frac);
        if dist <= INTEGRALITY_TOL {
            continue;
        }
        match rule {
            Branching::FirstFractional => return Some(k),
            Branching::MostFractional => {
                if best.is_none_or(|(_, d)| dist > d) {
                    best = Some((k, dist));
                }
            }
        }
    }
    best.map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, Relation};

    fn knapsack() -> MixedIntegerProgram {
        // max 5a + 4b + 3c + 7d + 2e + 6f s.t. 2a + 3b + c + 4d + 2e + 3f <= 8
        let values = [5.0, 4.0, 3.0, 7.0, 2.0, 6.0];
        let weights = [2.0, 3.0, 1.0, 4.0, 2.0, 3.0];
        let mut lp = LinearProgram::new(values.iter().map(|v| -v).collect());
        for j in 0..6 {
            lp.set_bounds(j, 0.0, 1.0);
        }
        lp.add_constraint(weights.to_vec(), Relation::Le, 8.0);
        MixedIntegerProgram::new(lp, (0..6).collect())
    }

    #[test]
    fn integral_root_needs_one_node() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.set_bounds(0, 0.0, 1.0);
        lp.set_bounds(1, 0.0, 1.0);
        lp.add_constraint(vec![1.0, 1.0], Relation::Ge, 1.0);
        let sol = solve_milp(&MixedIntegerProgram::new(lp, vec![0, 1]), &BnbConfig::default())
            .unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert_eq!(sol.nodes_explored, 1);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let mip = knapsack();
        let sol = solve_milp(&mip, &BnbConfig::default()).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0u32..64 {
            let mut lp = mip.lp.clone();
            for j in 0..6 {
                let v = f64::from((mask >> j) & 1);
                lp.set_bounds(j, v, v);
            }
            let s = solve_lp(&lp).unwrap();
            if s.status == LpStatus::Optimal {
                best = best.min(s.objective_value);
            }
        }
        // Best subsets by hand enumeration: {a, c, e, f} and {c, d, f}, value 16.
        assert!((best + 16.0).abs() < 1e-9);
        assert!((sol.objective_value - best).abs() < 1e-6);
        assert!(sol.root_bound <= sol.objective_value + 1e-9);
    }

    #[test]
    fn hints_never_change_the_optimum() {
        let mip = knapsack();
        let cfg = BnbConfig::default();
        let plain = solve_milp(&mip, &cfg).unwrap();
        let optimal = [false, false, true, true, false, true];
        let seeded = solve_milp_with_hint(&mip, &cfg, Some(&optimal)).unwrap();
        assert!((seeded.objective_value - plain.objective_value).abs() < 1e-9);
        assert!(seeded.nodes_explored <= plain.nodes_explored);
        assert_eq!(seeded.incumbent_node, 0);
        // Overweight candidate: the fixed LP is infeasible and is ignored.
        let heavy = solve_milp_with_hint(&mip, &cfg, Some(&[true; 6])).unwrap();
        assert!((heavy.objective_value - plain.objective_value).abs() < 1e-9);
        assert!(matches!(
            solve_milp_with_hint(&mip, &cfg, Some(&[true; 2])),
            Err(MilpError::Malformed(_))
        ));
    }

    #[test]
    fn parity_contradiction_infeasible() {
        let mut lp = LinearProgram::new(vec![0.0, 0.0]);
        lp.set_bounds(0, 0.0, 1.0);
        lp.set_bounds(1, 0.0, 1.0);
        lp.add_constraint(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_constraint(vec![1.0, -1.0], Relation::Eq, 0.0);
        let sol = solve_milp(&MixedIntegerProgram::new(lp, vec![0, 1]), &BnbConfig::default())
            .unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
        assert!(sol.x.is_empty());
    }

    #[test]
    fn node_limit_returns_incumbent_status() {
        let cfg = BnbConfig {
            node_limit: 1,
            ..Default::default()
        };
        let sol = solve_milp(&knapsack(), &cfg).unwrap();
        assert_eq!(sol.status, MilpStatus::NodeLimit);
        assert_eq!(sol.nodes_explored, 1);
    }

    #[test]
    fn deterministic_node_count() {
        let a = solve_milp(&knapsack(), &BnbConfig::default()).unwrap();
        let b = solve_milp(&knapsack(), &BnbConfig::default()).unwrap();
        assert_eq!(a, b);
        let first = solve_milp(
            &knapsack(),
            &BnbConfig {
                branching: Branching::FirstFractional,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((first.objective_value - a.objective_value).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_binary_bounds() {
        let mut mip = knapsack();
        mip.lp.set_bounds(2, 0.0, 3.0);
        assert!(matches!(
            solve_milp(&mip, &BnbConfig::default()),
            Err(MilpError::Malformed(_))
        ));
        let mut mip = knapsack();
        mip.binary_indices.push(9);
        assert!(solve_milp(&mip, &BnbConfig::default()).is_err());
    }
}
