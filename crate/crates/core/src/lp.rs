//! Thin sparse-LP layer over the interior-point solver: triplet-style model
//! building, frozen CSC structure with mutable right-hand sides (so bound
//! rows can be retargeted cheaply between re-solves), and status mapping.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use thiserror::Error;

/// Identifies an inequality row (`a.x <= b`) whose right-hand side may be
/// updated after the model is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeRow(usize);

#[derive(Debug, Error)]
pub enum LpError {
    #[error("lp solve failed: {0}")]
    SolveFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// Reduced-accuracy optimum; values usable, tolerances not fully met.
    AlmostOptimal,
    Infeasible,
    Unbounded,
    /// Iteration/time limit or numerical trouble; values unusable.
    Failed,
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Objective of the returned primal point (minimization form).
    pub primal_obj: f64,
    /// Dual objective: a certified lower bound on the minimum.
    pub dual_obj: f64,
}

impl LpOutcome {
    pub fn usable(&self) -> bool {
        matches!(self.status, LpStatus::Optimal | LpStatus::AlmostOptimal)
    }
}

/// Solver tolerances (duality gap, feasibility, KKT refinement effort).
#[derive(Debug, Clone, Copy)]
pub struct LpTols {
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub feas: f64,
    pub max_iter: u32,
    pub refine_reltol: f64,
    pub refine_max_iter: u32,
}

impl Default for LpTols {
    fn default() -> Self {
        Self {
            gap_abs: 1e-7,
            gap_rel: 1e-5,
            feas: 1e-6,
            max_iter: 200,
            refine_reltol: 1e-10,
            refine_max_iter: 4,
        }
    }
}

impl LpTols {
    /// Tight settings for polish solves whose values feed reported numbers.
    pub fn tight() -> Self {
        Self {
            gap_abs: 1e-9,
            gap_rel: 1e-9,
            feas: 1e-9,
            max_iter: 400,
            refine_reltol: 1e-12,
            refine_max_iter: 8,
        }
    }
}

/// Incremental LP builder. Rows are `a.x = b` (added via [`LpBuilder::add_eq`])
/// or `a.x <= b` ([`LpBuilder::add_le`]); the objective is minimized.
#[derive(Debug, Default)]
pub struct LpBuilder {
    ncols: usize,
    cost: Vec<f64>,
    eq_coeffs: Vec<Vec<(usize, f64)>>,
    eq_rhs: Vec<f64>,
    le_coeffs: Vec<Vec<(usize, f64)>>,
    le_rhs: Vec<f64>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_cols(&mut self, n: usize) -> usize {
        let first = self.ncols;
        self.ncols += n;
        self.cost.resize(self.ncols, 0.0);
        first
    }

    pub fn set_cost(&mut self, col: usize, cost: f64) {
        self.cost[col] = cost;
    }

    pub fn add_to_cost(&mut self, col: usize, cost: f64) {
        self.cost[col] += cost;
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq_coeffs.push(coeffs);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> LeRow {
        self.le_coeffs.push(coeffs);
        self.le_rhs.push(rhs);
        LeRow(self.le_coeffs.len() - 1)
    }

    /// Freeze into CSC form. Panics on out-of-range column indices.
    pub fn build(self) -> LpModel {
        let m_eq = self.eq_coeffs.len();
        let m_le = self.le_coeffs.len();
        let m = m_eq + m_le;
        let n = self.ncols;

        let nnz: usize = self
            .eq_coeffs
            .iter()
            .chain(self.le_coeffs.iter())
            .map(Vec::len)
            .sum();
        let mut col_counts = vec![0usize; n + 1];
        for row in self.eq_coeffs.iter().chain(self.le_coeffs.iter()) {
            for &(c, _) in row {
                assert!(c < n, "column {c} out of range ({n})");
                col_counts[c + 1] += 1;
            }
        }
        let mut colptr = col_counts;
        for j in 0..n {
            colptr[j + 1] += colptr[j];
        }
        let mut rowidx = vec![0usize; nnz];
        let mut vals = vec![0.0f64; nnz];
        let mut cursor = colptr.clone();
        // Rows are visited in ascending order, so entries within each column
        // come out sorted by row as CSC requires.
        for (r, row) in self
            .eq_coeffs
            .iter()
            .chain(self.le_coeffs.iter())
            .enumerate()
        {
            for &(c, v) in row {
                let k = cursor[c];
                rowidx[k] = r;
                vals[k] = v;
                cursor[c] += 1;
            }
        }

        let mut b = self.eq_rhs;
        b.extend_from_slice(&self.le_rhs);
        debug_assert_eq!(b.len(), m);

        LpModel {
            n,
            m_eq,
            m_le,
            colptr,
            rowidx,
            vals,
            b,
            cost: self.cost,
        }
    }
}

/// Frozen LP with updatable right-hand sides.
#[derive(Debug, Clone)]
pub struct LpModel {
    n: usize,
    m_eq: usize,
    m_le: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
}

impl LpModel {
    pub fn n_cols(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.m_eq + self.m_le
    }

    pub fn set_le_rhs(&mut self, row: LeRow, rhs: f64) {
        self.b[self.m_eq + row.0] = rhs;
    }

    pub fn le_rhs(&self, row: LeRow) -> f64 {
        self.b[self.m_eq + row.0]
    }

    pub fn solve(&self, tols: LpTols) -> Result<LpOutcome, LpError> {
        let a = CscMatrix::new(
            self.m_eq + self.m_le,
            self.n,
            self.colptr.clone(),
            self.rowidx.clone(),
            self.vals.clone(),
        );
        let p = CscMatrix::zeros((self.n, self.n));
        let cones: [SupportedConeT<f64>; 2] = [ZeroConeT(self.m_eq), NonnegativeConeT(self.m_le)];
        let settings = DefaultSettings {
            verbose: std::env::var("FLEXBID_LP_VERBOSE").is_ok(),
            max_iter: tols.max_iter,
            max_threads: 1,
            tol_gap_abs: tols.gap_abs,
            tol_gap_rel: tols.gap_rel,
            tol_feas: tols.feas,
            iterative_refinement_reltol: tols.refine_reltol,
            iterative_refinement_abstol: tols.refine_reltol * 0.1,
            iterative_refinement_max_iter: tols.refine_max_iter,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &self.cost, &a, &self.b, &cones, settings)
            .map_err(|e| LpError::SolveFailed(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => LpStatus::Optimal,
            SolverStatus::AlmostSolved => LpStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                LpStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                LpStatus::Unbounded
            }
            _ => LpStatus::Failed,
        };
        Ok(LpOutcome {
            status,
            x: sol.x.clone(),
            primal_obj: sol.obj_val,
            dual_obj: sol.obj_val_dual,
        })
    }
}
