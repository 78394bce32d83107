//! Dense bounded-variable primal simplex.
//!
//! Variable bounds are handled directly by the pivoting rules instead of
//! being turned into rows. Every row gets a logical variable whose bounds
//! encode the relation (`<=` gives `[0, inf)`, `>=` gives `(-inf, 0]`, `=`
//! gives `[0, 0]`), so the all-logical basis is always available as a start.
//! Phase 1 minimizes the sum of bound violations from *any* basis, which lets
//! [`Simplex`] be re-solved after bound changes without rebuilding the
//! tableau. Branch-and-bound relies on that.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize c^T x` subject to row relations and per-variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("simplex iteration limit of {limit} exceeded")]
    IterationLimitExceeded { limit: usize },
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

impl LinearProgram {
    /// New program over `objective.len()` variables, all bounded to `[0, inf)`.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Adds a row from `(variable, coefficient)` pairs; repeated variables
    /// accumulate.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, relation, rhs);
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(LpError::Malformed(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
            {
                return Err(LpError::Malformed(format!(
                    "variable {j} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(LpError::Malformed(format!(
                    "row {i} has width {}, expected {n}",
                    row.coeffs.len()
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(LpError::Malformed(format!("row {i} has non-finite entries")));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient".into()));
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row relation or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (&(lo, hi), &v) in self.bounds.iter().zip(x) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    /// Plain-text matrix listing: objective, one line per row, then a bounds
    /// appendix.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# {} variables, {} rows", self.num_vars(), self.num_rows())?;
        write!(w, "min")?;
        for c in &self.objective {
            write!(w, " {c:.9}")?;
        }
        writeln!(w)?;
        for (i, row) in self.constraints.iter().enumerate() {
            write!(w, "r{i}:")?;
            for a in &row.coeffs {
                write!(w, " {a:.9}")?;
            }
            writeln!(w, " {} {:.9}", row.relation.symbol(), row.rhs)?;
        }
        writeln!(w, "bounds")?;
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            writeln!(w, "x{j}: [{lo}, {hi}]")?;
        }
        Ok(())
    }
}

impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// Maximum bound or row violation accepted in a reported solution.
    pub feasibility_tol: f64,
    /// Pivot elements below this magnitude are never selected.
    pub pivot_tol: f64,
    /// Reduced costs within this band count as non-improving.
    pub optimality_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub stall_threshold: usize,
    /// Pivots between tableau refactorizations from the original rows.
    pub refactor_interval: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            pivot_tol: 1e-9,
            optimality_tol: 1e-8,
            max_iterations: 100_000,
            stall_threshold: 50,
            refactor_interval: 400,
        }
    }
}

/// Violations below this are treated as exact feasibility while pivoting.
const PRIMAL_TOL: f64 = 1e-9;
/// Row residual that triggers a refactorization before reporting.
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

/// Solves `lp` from the all-logical basis.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &SimplexOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    let mut simplex = Simplex::new(lp, opts.clone())?;
    simplex.solve()
}

/// A dense simplex tableau that can be re-solved after bound changes.
#[derive(Debug, Clone)]
pub struct Simplex {
    opts: SimplexOptions,
    m: usize,
    n: usize,
    ncols: usize,
    /// Original `[A | I]`, row-major.
    orig: Vec<f64>,
    rhs: Vec<f64>,
    /// Current `B^-1 [A | I]`, row-major.
    tab: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    cost: Vec<f64>,
    since_refactor: usize,
    /// Reduced costs; phase-2 values are kept up to date across pivots
    /// while `d_phase2` is set.
    d: Vec<f64>,
    d_phase2: bool,
    /// Phase-2 reduced costs were computed from scratch since the last pivot.
    d_fresh: bool,
    /// Scratch: entering column.
    col: Vec<f64>,
    /// Scratch: nonzero positions of the pivot row.
    nz: Vec<usize>,
}

impl Simplex {
    pub fn new(lp: &LinearProgram, opts: SimplexOptions) -> Result<Self, LpError> {
        lp.validate()?;
        let m = lp.num_rows();
        let n = lp.num_vars();
        let ncols = n + m;
        let mut orig = vec![0.0; m * ncols];
        let mut rhs = Vec::with_capacity(m);
        let mut lower = Vec::with_capacity(ncols);
        let mut upper = Vec::with_capacity(ncols);
        for &(lo, hi) in &lp.bounds {
            lower.push(lo);
            upper.push(hi);
        }
        for (i, row) in lp.constraints.iter().enumerate() {
            orig[i * ncols..i * ncols + n].copy_from_slice(&row.coeffs);
            orig[i * ncols + n + i] = 1.0;
            rhs.push(row.rhs);
            let (lo, hi) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut cost = lp.objective.clone();
        cost.resize(ncols, 0.0);

        let mut state = vec![VarState::AtLower; ncols];
        let mut x = vec![0.0; ncols];
        for j in 0..n {
            let (s, v) = resting_point(lower[j], upper[j]);
            state[j] = s;
            x[j] = v;
        }
        let basis: Vec<usize> = (n..ncols).collect();
        for &b in &basis {
            state[b] = VarState::Basic;
        }
        let mut simplex = Self {
            opts,
            m,
            n,
            ncols,
            tab: orig.clone(),
            orig,
            rhs,
            basis,
            state,
            lower,
            upper,
            x,
            cost,
            since_refactor: 0,
            d: vec![0.0; ncols],
            d_phase2: false,
            d_fresh: false,
            col: vec![0.0; m],
            nz: Vec::with_capacity(ncols),
        };
        simplex.recompute_basic_values();
        Ok(simplex)
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    /// Changes the bounds of structural variable `var`, keeping the basis.
    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        assert!(var < self.n, "set_bounds on logical variable");
        self.lower[var] = lower;
        self.upper[var] = upper;
        if self.state[var] == VarState::Basic {
            return;
        }
        let (state, value) = match self.state[var] {
            VarState::AtUpper if upper.is_finite() => (VarState::AtUpper, upper),
            _ => resting_point(lower, upper),
        };
        self.state[var] = state;
        let delta = value - self.x[var];
        if delta != 0.0 {
            self.x[var] = value;
            let ncols = self.ncols;
            for i in 0..self.m {
                let a = self.tab[i * ncols + var];
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= a * delta;
                }
            }
        }
    }

    /// Phase-2 reduced costs of the structural variables, available right
    /// after a solve that ended optimal.
    pub fn reduced_costs(&self) -> Option<&[f64]> {
        self.d_fresh.then(|| &self.d[..self.n])
    }

    /// Runs phase 1 (if the current basis is infeasible) and phase 2.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        let mut iterations = 0usize;
        let mut degenerate_run = 0usize;
        let mut polished = false;
        let mut relaxed = false;
        loop {
            if iterations >= self.opts.max_iterations {
                return Err(LpError::IterationLimitExceeded {
                    limit: self.opts.max_iterations,
                });
            }
            if self.since_refactor >= self.opts.refactor_interval {
                self.refactor()?;
            }
            let tol = if relaxed {
                self.opts.feasibility_tol
            } else {
                PRIMAL_TOL
            };
            let phase1 = self.phase1_costs(tol);
            if !phase1 && !self.d_phase2 {
                self.phase2_costs();
            }
            let bland = degenerate_run > self.opts.stall_threshold;
            let Some((q, dir)) = self.choose_entering(bland) else {
                if phase1 {
                    if !polished {
                        polished = true;
                        self.refactor()?;
                        continue;
                    }
                    if !relaxed && self.max_infeasibility() <= self.opts.feasibility_tol {
                        relaxed = true;
                        continue;
                    }
                    return Ok(self.solution(LpStatus::Infeasible, iterations));
                }
                if self.max_residual() > RESIDUAL_TOL && !polished {
                    polished = true;
                    self.refactor()?;
                    continue;
                }
                if !self.d_fresh {
                    self.phase2_costs();
                    continue;
                }
                return Ok(self.solution(LpStatus::Optimal, iterations));
            };
            let step = self.ratio_test(q, dir, phase1, tol, bland);
            iterations += 1;
            match step {
                Step::Unlimited => {
                    if phase1 {
                        return Err(LpError::NumericalBreakdown(
                            "phase 1 direction without breakpoint".into(),
                        ));
                    }
                    return Ok(self.solution(LpStatus::Unbounded, iterations));
                }
                Step::Flip(t) => {
                    self.move_along(q, dir, t);
                    self.state[q] = if dir > 0.0 {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                    self.x[q] = if dir > 0.0 {
                        self.upper[q]
                    } else {
                        self.lower[q]
                    };
                    degenerate_run = if t <= 1e-12 { degenerate_run + 1 } else { 0 };
                }
                Step::Pivot { row, t, to_upper } => {
                    self.move_along(q, dir, t);
                    let leaving = self.basis[row];
                    self.pivot(row, q);
                    self.state[q] = VarState::Basic;
                    if to_upper {
                        self.state[leaving] = VarState::AtUpper;
                        self.x[leaving] = self.upper[leaving];
                    } else {
                        self.state[leaving] = VarState::AtLower;
                        self.x[leaving] = self.lower[leaving];
                    }
                    degenerate_run = if t <= 1e-12 { degenerate_run + 1 } else { 0 };
                }
            }
        }
    }

    fn solution(&self, status: LpStatus, iterations: usize) -> LpSolution {
        let x = self.x[..self.n].to_vec();
        let objective_value = match status {
            LpStatus::Optimal => self.cost[..self.n]
                .iter()
                .zip(&x)
                .map(|(c, v)| c * v)
                .sum(),
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
        };
        LpSolution {
            status,
            x,
            objective_value,
            iterations,
        }
    }

    /// Fills `self.d` with phase-1 reduced costs; returns false when the
    /// basis is feasible within `tol`.
    fn phase1_costs(&mut self, tol: f64) -> bool {
        let ncols = self.ncols;
        let infeasible = self.basis.iter().any(|&b| {
            let v = self.x[b];
            v < self.lower[b] - tol || v > self.upper[b] + tol
        });
        if !infeasible {
            return false;
        }
        self.d_phase2 = false;
        self.d_fresh = false;
        let mut any = false;
        self.d.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.m {
            let b = self.basis[i];
            let v = self.x[b];
            let sigma = if v < self.lower[b] - tol {
                -1.0
            } else if v > self.upper[b] + tol {
                1.0
            } else {
                continue;
            };
            any = true;
            let row = &self.tab[i * ncols..(i + 1) * ncols];
            for (d, a) in self.d.iter_mut().zip(row) {
                *d -= sigma * a;
            }
        }
        any
    }

    fn phase2_costs(&mut self) {
        let ncols = self.ncols;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.tab[i * ncols..(i + 1) * ncols];
            for (d, a) in self.d.iter_mut().zip(row) {
                *d -= cb * a;
            }
        }
        self.d_phase2 = true;
        self.d_fresh = true;
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let tol = self.opts.optimality_tol;
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            let dir = match self.state[j] {
                VarState::Basic => continue,
                _ if self.lower[j] == self.upper[j] => continue,
                VarState::AtLower if self.d[j] < -tol => 1.0,
                VarState::AtUpper if self.d[j] > tol => -1.0,
                VarState::Free if self.d[j] < -tol => 1.0,
                VarState::Free if self.d[j] > tol => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = self.d[j].abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&mut self, q: usize, dir: f64, phase1: bool, tol: f64, bland: bool) -> Step {
        let ncols = self.ncols;
        for i in 0..self.m {
            self.col[i] = self.tab[i * ncols + q];
        }
        let mut best_t = f64::INFINITY;
        let mut best_row: Option<(usize, bool)> = None;
        let mut best_alpha = 0.0;
        for i in 0..self.m {
            let alpha = self.col[i];
            if alpha.abs() <= self.opts.pivot_tol {
                continue;
            }
            let rate = -alpha * dir;
            let b = self.basis[i];
            let (v, lo, hi) = (self.x[b], self.lower[b], self.upper[b]);
            let below = phase1 && v < lo - tol;
            let above = phase1 && v > hi + tol;
            let limit = if rate > 0.0 {
                if below {
                    Some(((lo - v) / rate, false))
                } else if above || hi == f64::INFINITY {
                    None
                } else {
                    Some(((hi - v) / rate, true))
                }
            } else if above {
                Some(((hi - v) / rate, true))
            } else if below || lo == f64::NEG_INFINITY {
                None
            } else {
                Some(((lo - v) / rate, false))
            };
            let Some((t, to_upper)) = limit else { continue };
            let t = t.max(0.0);
            let replace = match best_row {
                None => true,
                Some(_) if t < best_t - 1e-12 => true,
                Some((r, _)) if t <= best_t + 1e-12 => {
                    if bland {
                        b < self.basis[r]
                    } else {
                        alpha.abs() > best_alpha
                    }
                }
                Some(_) => false,
            };
            if replace {
                best_t = best_t.min(t);
                best_row = Some((i, to_upper));
                best_alpha = alpha.abs();
            }
        }
        let span = self.upper[q] - self.lower[q];
        if span.is_finite() && span <= best_t {
            return Step::Flip(span);
        }
        match best_row {
            Some((row, to_upper)) => Step::Pivot {
                row,
                t: best_t,
                to_upper,
            },
            None => Step::Unlimited,
        }
    }

    fn move_along(&mut self, q: usize, dir: f64, t: f64) {
        if t == 0.0 {
            return;
        }
        self.x[q] += dir * t;
        for i in 0..self.m {
            let a = self.col[i];
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= a * dir * t;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let ncols = self.ncols;
        let p = self.tab[r * ncols + q];
        let inv = 1.0 / p;
        self.nz.clear();
        {
            let row = &mut self.tab[r * ncols..(r + 1) * ncols];
            for (j, a) in row.iter_mut().enumerate() {
                if *a != 0.0 {
                    *a *= inv;
                    self.nz.push(j);
                }
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.tab.split_at_mut(r * ncols);
        let (pivot_row, after) = rest.split_at_mut(ncols);
        for chunk in before
            .chunks_exact_mut(ncols)
            .chain(after.chunks_exact_mut(ncols))
        {
            let f = chunk[q];
            if f == 0.0 {
                continue;
            }
            for &j in &self.nz {
                chunk[j] -= f * pivot_row[j];
            }
            chunk[q] = 0.0;
        }
        if self.d_phase2 {
            let f = self.d[q];
            if f != 0.0 {
                for &j in &self.nz {
                    self.d[j] -= f * pivot_row[j];
                }
            }
            self.d[q] = 0.0;
            self.d_fresh = false;
        }
        self.basis[r] = q;
        self.since_refactor += 1;
    }

    /// Rebuilds `B^-1 [A | I]` from the original rows for the current basic
    /// set, then recomputes the basic values.
    fn refactor(&mut self) -> Result<(), LpError> {
        let ncols = self.ncols;
        let m = self.m;
        self.d_phase2 = false;
        self.d_fresh = false;
        self.tab.copy_from_slice(&self.orig);
        let mut basic: Vec<usize> = (0..ncols)
            .filter(|&j| self.state[j] == VarState::Basic)
            .collect();
        basic.sort_unstable();
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        for &c in &basic {
            let mut best = None;
            let mut best_abs = 1e-11;
            for i in 0..m {
                if !assigned[i] {
                    let a = self.tab[i * ncols + c].abs();
                    if a > best_abs {
                        best_abs = a;
                        best = Some(i);
                    }
                }
            }
            match best {
                Some(r) => {
                    self.eliminate(r, c);
                    assigned[r] = true;
                    new_basis[r] = c;
                }
                None => {
                    // Dependent column: drop it from the basis.
                    let (s, v) = nearest_bound(self.lower[c], self.upper[c], self.x[c]);
                    self.state[c] = s;
                    self.x[c] = v;
                }
            }
        }
        for r in 0..m {
            if assigned[r] {
                continue;
            }
            let mut best = None;
            let mut best_abs = 1e-11;
            for j in 0..ncols {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                let a = self.tab[r * ncols + j].abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(j);
                }
            }
            let Some(c) = best else {
                return Err(LpError::NumericalBreakdown(format!(
                    "singular basis: row {r} has no usable pivot"
                )));
            };
            self.eliminate(r, c);
            assigned[r] = true;
            new_basis[r] = c;
            self.state[c] = VarState::Basic;
        }
        self.basis = new_basis;
        self.since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn eliminate(&mut self, r: usize, c: usize) {
        let saved = self.since_refactor;
        self.pivot(r, c);
        self.since_refactor = saved;
    }

    /// `x_B = B^-1 b - B^-1 N x_N`, evaluated via the logical identity
    /// columns of the tableau.
    fn recompute_basic_values(&mut self) {
        let ncols = self.ncols;
        let n = self.n;
        for i in 0..self.m {
            let row = &self.tab[i * ncols..(i + 1) * ncols];
            // B^-1 b is the logical part of the tableau applied to b.
            let mut v: f64 = row[n..].iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
            for (j, a) in row.iter().enumerate() {
                if *a != 0.0 && self.state[j] != VarState::Basic {
                    v -= a * self.x[j];
                }
            }
            let b = self.basis[i];
            self.x[b] = v;
        }
    }

    fn max_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lower[b] - self.x[b]).max(self.x[b] - self.upper[b]))
            .fold(0.0, f64::max)
    }

    /// Largest mismatch of `A x + r = b` over the original rows.
    fn max_residual(&self) -> f64 {
        let ncols = self.ncols;
        let mut worst: f64 = 0.0;
        for i in 0..self.m {
            let row = &self.orig[i * ncols..(i + 1) * ncols];
            let lhs: f64 = row.iter().zip(&self.x).map(|(a, v)| a * v).sum();
            worst = worst.max((lhs - self.rhs[i]).abs());
        }
        worst
    }
}

enum Step {
    Unlimited,
    Flip(f64),
    Pivot { row: usize, t: f64, to_upper: bool },
}

fn resting_point(lower: f64, upper: f64) -> (VarState, f64) {
    if lower.is_finite() {
        (VarState::AtLower, lower)
    } else if upper.is_finite() {
        (VarState::AtUpper, upper)
    } else {
        (VarState::Free, 0.0)
    }
}

fn nearest_bound(lower: f64, upper: f64, v: f64) -> (VarState, f64) {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => {
            if (v - lower).abs() <= (upper - v).abs() {
                (VarState::AtLower, lower)
            } else {
                (VarState::AtUpper, upper)
            }
        }
        _ => resting_point(lower, upper),
    }
}
