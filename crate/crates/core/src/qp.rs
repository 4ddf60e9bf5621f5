//! Dense convex QP: minimize `½ xᵀHx − gᵀx` subject to `L x ≤ rhs`.
//!
//! Primal active-set method in range-space form. `H` is factored once; each
//! pivot only refactors the small Schur complement `L_W H⁻¹ L_Wᵀ` of the
//! working set. Rows violated at the start point are handled elastically:
//! they are charged the exact L1 penalty `ρ · max(0, L_i x − rhs_i)` and
//! leave the elastic set as soon as a step makes them tight. With `ρ` above
//! the largest optimal multiplier the penalty minimizer is the constrained
//! optimum whenever the rows are consistent; otherwise the solution keeps
//! some slack and is reported as [`QpStatus::RelaxedWithSlack`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CctoError, Result};
use crate::linalg::{all_finite_mat, all_finite_vec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Pivot budget; `None` picks `10 (d + r) + 50`.
    pub max_iterations: Option<usize>,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    /// L1 penalty on row violations; `None` picks `1e6 · max(max|g|, max|H|)` (or `1e6` for a zero problem).
    pub slack_penalty: Option<f64>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: None,
            primal_tolerance: 1e-8,
            dual_tolerance: 1e-8,
            slack_penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub l: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub warm_start: Option<DVector<f64>>,
    pub settings: QpSettings,
}

impl QuadraticProgram {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, l: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let qp = Self {
            h,
            g,
            l,
            rhs,
            warm_start: None,
            settings: QpSettings::default(),
        };
        qp.validate()?;
        Ok(qp)
    }

    /// Unconstrained problem.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        let d = g.len();
        Self::new(h, g, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn with_warm_start(mut self, x0: DVector<f64>) -> Self {
        self.warm_start = Some(x0);
        self
    }

    pub fn with_settings(mut self, settings: QpSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.g.len();
        if self.h.shape() != (d, d) || self.l.ncols() != d || self.l.nrows() != self.rhs.len() {
            return Err(CctoError::Dimension(format!(
                "QP with d = {d}: H is {:?}, L is {:?}, rhs has {}",
                self.h.shape(),
                self.l.shape(),
                self.rhs.len()
            )));
        }
        if let Some(x0) = &self.warm_start {
            if x0.len() != d {
                return Err(CctoError::Dimension("warm start has the wrong length".into()));
            }
            if !all_finite_vec(x0) {
                return Err(CctoError::NonFinite("QP warm start".into()));
            }
        }
        if !all_finite_mat(&self.h) || !all_finite_vec(&self.g) || !all_finite_mat(&self.l) || !all_finite_vec(&self.rhs) {
            return Err(CctoError::NonFinite("QP data".into()));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * self.h.amax().max(1.0) {
            return Err(CctoError::InvalidInput(format!("QP Hessian is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(())
    }

    /// `½ xᵀHx − gᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.g.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    RelaxedWithSlack,
    MaxIterations,
    Unbounded,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::RelaxedWithSlack => "relaxed_with_slack",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::Unbounded => "unbounded",
        }
    }
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖Hx − g + Lᵀλ‖∞`.
    pub stationarity: f64,
    /// `‖max(0, Lx − rhs)‖∞`.
    pub primal: f64,
    /// `max |λ_i (Lx − rhs)_i|`.
    pub complementarity: f64,
    /// `max(0, −min λ_i)`.
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Rows held with equality at the solution, ascending.
    pub active_set: Vec<usize>,
    pub multipliers: DVector<f64>,
    pub kkt: KktResiduals,
    pub slack_used: DVector<f64>,
    pub iterations: usize,
    /// Penalized objective at the start point and after every step.
    pub objective_history: Vec<f64>,
    /// Diagonal shift applied to `H` when it could not be factored.
    pub jitter: f64,
}

impl QpSolution {
    pub fn objective(&self, qp: &QuadraticProgram) -> f64 {
        qp.objective(&self.x)
    }
}

pub fn kkt_residual(qp: &QuadraticProgram, x: &DVector<f64>, multipliers: &DVector<f64>) -> KktResiduals {
    let viol = &qp.l * x - &qp.rhs;
    let stationarity = (&qp.h * x - &qp.g + qp.l.transpose() * multipliers).amax();
    let primal = viol.iter().fold(0.0f64, |acc, v| acc.max(*v));
    let complementarity = viol
        .iter()
        .zip(multipliers.iter())
        .fold(0.0f64, |acc, (v, l)| acc.max((v * l).abs()));
    let dual = multipliers.iter().fold(0.0f64, |acc, l| acc.max(-l));
    KktResiduals {
        stationarity,
        primal,
        complementarity,
        dual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowState {
    Inactive,
    Working,
    Elastic,
}

/// Jittered Cholesky of `H` and the jitter used.
fn factor_hessian(h: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Ok((ch, 0.0));
    }
    let d = h.nrows();
    let trace = h.trace();
    let base = if trace > 0.0 { 1e-10 * trace / d as f64 } else { 1e-10 };
    let mut jitter = base;
    for _ in 0..12 {
        let shifted = h + DMatrix::identity(d, d) * jitter;
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(CctoError::NotPsd("QP Hessian stays indefinite after jitter".into()))
}

pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution> {
    qp.validate()?;
    let d = qp.dim();
    let r = qp.rows();
    let set = qp.settings;
    let ptol = set.primal_tolerance;
    let dtol = set.dual_tolerance;
    let max_iter = set.max_iterations.unwrap_or(10 * (d + r) + 50);
    let rho = set.slack_penalty.unwrap_or_else(|| {
        let scale = qp.g.amax().max(qp.h.amax());
        1e6 * if scale > 0.0 { scale } else { 1.0 }
    });

    let (chol, jitter) = factor_hessian(&qp.h)?;
    // Z = H⁻¹ Lᵀ and the full Schur matrix L H⁻¹ Lᵀ; the working-set blocks are sliced out.
    let z = chol.solve(&qp.l.transpose());
    let schur_full = &qp.l * &z;
    let base = chol.solve(&qp.g);

    let mut x = qp.warm_start.clone().unwrap_or_else(|| DVector::zeros(d));
    let mut lx = &qp.l * &x;
    let mut state: Vec<RowState> = (0..r)
        .map(|i| if lx[i] - qp.rhs[i] > ptol { RowState::Elastic } else { RowState::Inactive })
        .collect();
    // Rounding-level violations of tight rows are not charged.
    let merit = |x: &DVector<f64>, lx: &DVector<f64>, state: &[RowState]| -> f64 {
        let penalty: f64 = (0..r)
            .filter(|&i| state[i] == RowState::Elastic)
            .map(|i| (lx[i] - qp.rhs[i]).max(0.0))
            .sum();
        qp.objective(x) + rho * penalty
    };
    let mut history = vec![merit(&x, &lx, &state)];
    let mut working: Vec<usize> = Vec::new();
    let mut lambda_w = DVector::zeros(0);
    let mut iterations = 0usize;
    let mut status = None;

    while iterations < max_iter {
        iterations += 1;
        // Minimizer on the current working set, elastic rows entering linearly.
        let elastic: Vec<usize> = (0..r).filter(|&i| state[i] == RowState::Elastic).collect();
        let mut target = base.clone();
        for &i in &elastic {
            target -= z.column(i) * rho;
        }
        if !working.is_empty() {
            let k = working.len();
            let mut s = DMatrix::zeros(k, k);
            let mut resid = DVector::zeros(k);
            for (a, &i) in working.iter().enumerate() {
                for (b, &j) in working.iter().enumerate() {
                    s[(a, b)] = schur_full[(i, j)];
                }
                resid[a] = qp.l.row(i).dot(&target.transpose()) - qp.rhs[i];
            }
            let lam = match Cholesky::new(s.clone()) {
                Some(ch) => ch.solve(&resid),
                None => s.lu().solve(&resid).ok_or_else(|| {
                    CctoError::NotPositiveDefinite("working-set Schur complement is singular".into())
                })?,
            };
            for (a, &i) in working.iter().enumerate() {
                target -= z.column(i) * lam[a];
            }
            lambda_w = lam;
        } else {
            lambda_w = DVector::zeros(0);
        }

        let p = &target - &x;
        let lp = &qp.l * &p;
        // Ratio test; strict comparison keeps the lowest row index on ties.
        let mut alpha = 1.0;
        let mut blocking: Option<usize> = None;
        for i in 0..r {
            let ratio = match state[i] {
                RowState::Inactive if lp[i] > 0.0 => (qp.rhs[i] - lx[i]).max(0.0) / lp[i],
                RowState::Elastic if lp[i] < 0.0 => (lx[i] - qp.rhs[i]).max(0.0) / -lp[i],
                _ => continue,
            };
            if ratio < alpha {
                alpha = ratio;
                blocking = Some(i);
            }
        }

        if let Some(i) = blocking {
            x += &p * alpha;
            lx += &lp * alpha;
            state[i] = RowState::Working;
            working.push(i);
            history.push(merit(&x, &lx, &state));
            continue;
        }

        x = target;
        lx = &qp.l * &x;
        history.push(merit(&x, &lx, &state));

        // Full step: check the working-set multipliers against [0, ρ].
        let mut worst: Option<(usize, f64)> = None;
        for (a, _) in working.iter().enumerate() {
            let excess = (-lambda_w[a]).max(lambda_w[a] - rho);
            if excess > dtol && worst.map_or(true, |(_, e)| excess > e) {
                worst = Some((a, excess));
            }
        }
        match worst {
            None => {
                status = Some(if elastic.is_empty() { QpStatus::Optimal } else { QpStatus::RelaxedWithSlack });
                break;
            }
            Some((a, _)) => {
                let i = working.remove(a);
                state[i] = if lambda_w[a] < 0.0 { RowState::Inactive } else { RowState::Elastic };
            }
        }
    }

    let mut status = status.unwrap_or(QpStatus::MaxIterations);
    if jitter > 0.0 && status != QpStatus::MaxIterations && jitter * x.amax() > 1e-6 * qp.g.amax().max(f64::MIN_POSITIVE) {
        status = QpStatus::Unbounded;
    }
    let mut multipliers = DVector::zeros(r);
    for (a, &i) in working.iter().enumerate() {
        if a < lambda_w.len() {
            multipliers[i] = lambda_w[a];
        }
    }
    for i in 0..r {
        if state[i] == RowState::Elastic {
            multipliers[i] = rho;
        }
    }
    let slack_used = DVector::from_iterator(
        r,
        (0..r).map(|i| if state[i] == RowState::Elastic { (lx[i] - qp.rhs[i]).max(0.0) } else { 0.0 }),
    );
    let mut active_set = working;
    active_set.sort_unstable();
    let kkt = kkt_residual(qp, &x, &multipliers);
    Ok(QpSolution {
        x,
        status,
        active_set,
        multipliers,
        kkt,
        slack_used,
        iterations,
        objective_history: history,
        jitter,
    })
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Text dump of a QP: a header line, then each matrix as `name rows cols`
/// followed by its rows, values in round-trip exponent notation.
pub fn dump_text(qp: &QuadraticProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ccto-qp 1 d {} r {}", qp.dim(), qp.rows());
    let _ = writeln!(out, "# minimize 0.5 x'Hx - g'x subject to L x <= rhs");
    write_matrix(&mut out, "H", &qp.h);
    write_matrix(&mut out, "g", &DMatrix::from_column_slice(qp.dim(), 1, qp.g.as_slice()));
    write_matrix(&mut out, "L", &qp.l);
    write_matrix(&mut out, "rhs", &DMatrix::from_column_slice(qp.rows(), 1, qp.rhs.as_slice()));
    if let Some(x0) = &qp.warm_start {
        write_matrix(&mut out, "warm_start", &DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()));
    }
    out
}

pub fn parse_text(text: &str) -> Result<QuadraticProgram> {
    let bad = |msg: &str| CctoError::InvalidInput(format!("QP dump: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("empty"))?;
    if !header.starts_with("ccto-qp 1") {
        return Err(bad("missing header"));
    }
    let mut mats: Vec<(String, DMatrix<f64>)> = Vec::new();
    while let Some(line) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad(&format!("expected 'name rows cols', got '{line}'")));
        }
        let rows: usize = parts[1].parse().map_err(|_| bad("row count"))?;
        let cols: usize = parts[2].parse().map_err(|_| bad("column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| bad("truncated matrix"))?;
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| bad(&format!("bad number '{v}'")))?);
            }
        }
        if data.len() != rows * cols {
            return Err(bad(&format!("matrix {} has the wrong number of entries", parts[0])));
        }
        mats.push((parts[0].to_string(), DMatrix::from_row_slice(rows, cols, &data)));
    }
    let take = |name: &str| -> Option<DMatrix<f64>> { mats.iter().find(|(n, _)| n == name).map(|(_, m)| m.clone()) };
    let col = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let h = take("H").ok_or_else(|| bad("missing H"))?;
    let g = col(take("g").ok_or_else(|| bad("missing g"))?);
    let l = take("L").unwrap_or_else(|| DMatrix::zeros(0, g.len()));
    let rhs = col(take("rhs").unwrap_or_else(|| DMatrix::zeros(0, 1)));
    let mut qp = QuadraticProgram::new(h, g, l, rhs)?;
    qp.warm_start = take("warm_start").map(col);
    qp.validate()?;
    Ok(qp)
}

pub fn write_dump(qp: &QuadraticProgram, path: &Path) -> Result<()> {
    std::fs::write(path, dump_text(qp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_qp(rows: &[(f64, f64)]) -> QuadraticProgram {
        let l = DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|r| r.0));
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        QuadraticProgram::new(DMatrix::identity(1, 1), DVector::from_element(1, 1.0), l, rhs).unwrap()
    }

    #[test]
    fn unconstrained_stationary_point() {
        let sol = solve(&scalar_qp(&[])).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn clamped_optimum() {
        let sol = solve(&scalar_qp(&[(1.0, 0.5)])).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-14);
        assert_eq!(sol.active_set, vec![0]);
        assert!((sol.multipliers[0] - 0.5).abs() < 1e-14);
        assert!(sol.kkt.max() < 1e-12);
    }

    #[test]
    fn zero_problem() {
        let qp = QuadraticProgram::unconstrained(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.x, DVector::zeros(3));
        assert_eq!(sol.kkt.max(), 0.0);
    }

    #[test]
    fn infeasible_start_reaches_the_feasible_optimum() {
        let qp = scalar_qp(&[(1.0, 0.5), (-1.0, -0.2)]).with_warm_start(DVector::from_element(1, 5.0));
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_keep_slack() {
        // x ≤ 0 and x ≥ 1: the L1 penalty splits the violation.
        let sol = solve(&scalar_qp(&[(1.0, 0.0), (-1.0, -1.0)])).unwrap();
        assert_eq!(sol.status, QpStatus::RelaxedWithSlack);
        assert!(sol.slack_used.sum() > 0.99);
        assert!(sol.x[0] >= -1e-9 && sol.x[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn singular_hessian_without_bound_is_unbounded() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let qp = QuadraticProgram::unconstrained(h, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(solve(&qp).unwrap().status, QpStatus::Unbounded);
    }

    #[test]
    fn singular_hessian_with_bound_is_fine() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let l = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let qp = QuadraticProgram::new(h, DVector::from_vec(vec![1.0, 1.0]), l, DVector::from_element(1, 2.0)).unwrap();
        let sol = solve(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[1] - 2.0).abs() < 1e-9);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perturbation_shows_in_stationarity() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let qp = QuadraticProgram::new(
            h,
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let sol = solve(&qp).unwrap();
        let mut x = sol.x.clone();
        x[0] += 1e-3;
        assert!(kkt_residual(&qp, &x, &sol.multipliers).stationarity > 1e-4);
    }

    #[test]
    fn dump_round_trip() {
        let qp = scalar_qp(&[(1.0, 0.5), (-1.0, 0.25)]).with_warm_start(DVector::from_element(1, 0.1 + 0.2));
        let back = parse_text(&dump_text(&qp)).unwrap();
        assert_eq!(back.h, qp.h);
        assert_eq!(back.g, qp.g);
        assert_eq!(back.l, qp.l);
        assert_eq!(back.rhs, qp.rhs);
        assert_eq!(back.warm_start, qp.warm_start);
    }

    #[test]
    fn asymmetric_hessian_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QuadraticProgram::unconstrained(h, DVector::zeros(2)).is_err());
    }
}
