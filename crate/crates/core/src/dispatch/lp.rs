//! Solver-independent LP representation and the solver backends.

use std::fmt;

use crate::error::{Error, Result};

/// Default primal feasibility tolerance, relative to each row's scale.
pub const DEFAULT_TOL: f64 = 1e-7;

/// What a column stands for. Indices are window-local.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Charging power of window session `session` at step offset `k`, in kW.
    Power { session: usize, k: usize },
    /// SOC in percent after step offset `k` (so `k >= 1`).
    Soc { session: usize, k: usize },
    Alpha { session: usize },
    /// Power bought in tariff band `band` at step offset `k`, in kW.
    Band { k: usize, band: usize },
    /// Net discharge at the transformer, kW, non-positive.
    Discharge { k: usize },
}

/// Constraint families, used to report and relax infeasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowClass {
    SocUpdate,
    DepartureSoc,
    InterimSoc,
    BandBalance,
    Transformer,
    LineCurrent,
    Voltage,
}

impl RowClass {
    pub const ALL: [RowClass; 7] = [
        RowClass::LineCurrent,
        RowClass::Voltage,
        RowClass::Transformer,
        RowClass::BandBalance,
        RowClass::DepartureSoc,
        RowClass::InterimSoc,
        RowClass::SocUpdate,
    ];
}

impl fmt::Display for RowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RowClass::SocUpdate => "soc-update",
            RowClass::DepartureSoc => "departure-soc",
            RowClass::InterimSoc => "interim-soc",
            RowClass::BandBalance => "band-balance",
            RowClass::Transformer => "transformer",
            RowClass::LineCurrent => "line-current",
            RowClass::Voltage => "voltage",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub class: RowClass,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kinds: Vec<VarKind>,
    pub rows: Vec<Row>,
    /// Constant part of the objective (not seen by the solver).
    pub objective_offset: f64,
}

impl LpProblem {
    pub fn new() -> Self {
        LpProblem {
            cost: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            kinds: Vec::new(),
            rows: Vec::new(),
            objective_offset: 0.0,
        }
    }

    pub fn add_var(&mut self, kind: VarKind, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.kinds.push(kind);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, class: RowClass, coeffs: Vec<(usize, f64)>, lower: f64, upper: f64) {
        self.rows.push(Row {
            coeffs,
            lower,
            upper,
            class,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn rows_of(&self, class: RowClass) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(move |r| r.class == class)
    }

    pub fn has_class(&self, class: RowClass) -> bool {
        self.rows.iter().any(|r| r.class == class)
    }

    /// Copy without the rows of `class`.
    pub fn without(&self, class: RowClass) -> LpProblem {
        let mut lp = self.clone();
        lp.rows.retain(|r| r.class != class);
        lp
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation at `x`, scaled by `max(1, |bound|)`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let scaled = |excess: f64, bound: f64| (excess / bound.abs().max(1.0)).max(0.0);
        let mut worst: f64 = 0.0;
        for j in 0..x.len() {
            worst = worst
                .max(scaled(self.lower[j] - x[j], self.lower[j]))
                .max(scaled(x[j] - self.upper[j], self.upper[j]));
        }
        for row in &self.rows {
            let a = row.activity(x);
            worst = worst
                .max(scaled(row.lower - a, row.lower))
                .max(scaled(a - row.upper, row.upper));
        }
        worst
    }

    /// Every column must carry finite bounds.
    pub fn check_bounded(&self) -> Result<()> {
        if let Some(j) = (0..self.num_vars()).find(|&j| !self.lower[j].is_finite() || !self.upper[j].is_finite()) {
            return Err(Error::InconsistentMode(format!(
                "variable {:?} is unbounded",
                self.kinds[j]
            )));
        }
        if let Some(c) = self.cost.iter().find(|c| !c.is_finite()) {
            return Err(Error::InconsistentMode(format!("non-finite objective coefficient {c}")));
        }
        Ok(())
    }
}

impl Default for LpProblem {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Which LP engine to use. Both are deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// HiGHS dual simplex (native builds).
    #[cfg(feature = "highs")]
    Highs,
    /// Pure-Rust sparse simplex; also used in the browser build.
    MiniLp,
}

impl Default for Backend {
    fn default() -> Self {
        #[cfg(feature = "highs")]
        {
            Backend::Highs
        }
        #[cfg(not(feature = "highs"))]
        {
            Backend::MiniLp
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub max_violation: f64,
}

/// Solve `lp` to optimality. Infeasible problems are diagnosed by dropping
/// constraint classes one at a time; the first class whose removal restores
/// feasibility is reported.
pub fn solve_lp(lp: &LpProblem, tol: f64, backend: Backend) -> Result<LpSolution> {
    lp.check_bounded()?;
    match raw_solve(lp, backend)? {
        RawOutcome::Optimal(x) => {
            let max_violation = lp.max_violation(&x);
            if max_violation > tol {
                return Err(Error::Residual {
                    residual: max_violation,
                    tol,
                });
            }
            Ok(LpSolution {
                objective: lp.objective(&x),
                x,
                status: SolveStatus::Optimal,
                max_violation,
            })
        }
        RawOutcome::Unbounded => Err(Error::Unbounded),
        RawOutcome::Infeasible => Err(Error::Infeasible {
            class: diagnose(lp, backend),
        }),
    }
}

fn diagnose(lp: &LpProblem, backend: Backend) -> String {
    for class in RowClass::ALL {
        if !lp.has_class(class) {
            continue;
        }
        if let Ok(RawOutcome::Optimal(_)) = raw_solve(&lp.without(class), backend) {
            return class.to_string();
        }
    }
    "bounds".into()
}

enum RawOutcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

fn raw_solve(lp: &LpProblem, backend: Backend) -> Result<RawOutcome> {
    match backend {
        #[cfg(feature = "highs")]
        Backend::Highs => solve_highs(lp),
        Backend::MiniLp => solve_minilp(lp),
    }
}

#[cfg(feature = "highs")]
fn solve_highs(lp: &LpProblem) -> Result<RawOutcome> {
    use highs::{HighsModelStatus, RowProblem, Sense};

    let mut pb = RowProblem::default();
    let cols: Vec<_> = (0..lp.num_vars())
        .map(|j| pb.add_column(lp.cost[j], lp.lower[j]..=lp.upper[j]))
        .collect();
    for row in &lp.rows {
        let coeffs: Vec<_> = row.coeffs.iter().map(|&(j, a)| (cols[j], a)).collect();
        match (row.lower.is_finite(), row.upper.is_finite()) {
            (true, true) => pb.add_row(row.lower..=row.upper, &coeffs),
            (true, false) => pb.add_row(row.lower.., &coeffs),
            (false, true) => pb.add_row(..=row.upper, &coeffs),
            (false, false) => continue,
        }
    }
    let mut model = pb.optimise(Sense::Minimise);
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    model.set_option("primal_feasibility_tolerance", 1e-9);
    model.set_option("dual_feasibility_tolerance", 1e-9);
    let solved = model
        .try_solve()
        .map_err(|s| Error::InconsistentMode(format!("HiGHS failed: {s:?}")))?;
    match solved.status() {
        HighsModelStatus::Optimal => Ok(RawOutcome::Optimal(solved.get_solution().columns().to_vec())),
        HighsModelStatus::Infeasible => Ok(RawOutcome::Infeasible),
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => Ok(RawOutcome::Unbounded),
        other => Err(Error::InconsistentMode(format!("HiGHS stopped with status {other:?}"))),
    }
}

fn solve_minilp(lp: &LpProblem) -> Result<RawOutcome> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};

    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..lp.num_vars())
        .map(|j| pb.add_var(lp.cost[j], (lp.lower[j], lp.upper[j])))
        .collect();
    for row in &lp.rows {
        let coeffs: Vec<_> = row.coeffs.iter().map(|&(j, a)| (vars[j], a)).collect();
        if row.lower == row.upper {
            pb.add_constraint(coeffs.as_slice(), ComparisonOp::Eq, row.lower);
            continue;
        }
        if row.lower.is_finite() {
            pb.add_constraint(coeffs.as_slice(), ComparisonOp::Ge, row.lower);
        }
        if row.upper.is_finite() {
            pb.add_constraint(coeffs.as_slice(), ComparisonOp::Le, row.upper);
        }
    }
    match pb.solve() {
        Ok(sol) => Ok(RawOutcome::Optimal(vars.iter().map(|&v| sol[v]).collect())),
        Err(minilp::Error::Infeasible) => Ok(RawOutcome::Infeasible),
        Err(minilp::Error::Unbounded) => Ok(RawOutcome::Unbounded),
    }
}
