//! Dense inequality-constrained weighted least squares:
//!
//! ```text
//! minimize   ½‖Aτ − b‖²_W + ½ε‖τ‖²
//! subject to lower ≤ Gτ ≤ upper
//! ```
//!
//! Solved with a primal active-set method. `W` is factored once so every
//! equality-constrained subproblem is a plain least-squares problem handled by
//! QR on a null-space basis; the normal matrix `AᵀWA + εI` is never inverted,
//! which keeps the `ε`-dominated directions accurate.
//!
//! A feasible starting point comes from a Gauss–Newton pass on the squared
//! constraint violation. If that cannot reach zero the problem is reported
//! infeasible together with the rows still violated.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INFINITE_BOUND: f64 = 1e19;
pub const DEFAULT_REGULARIZATION: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

const FEASIBILITY_TOL: f64 = 1e-9;
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub regularization: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn code(self) -> u8 {
        match self {
            QpStatus::Optimal => 0,
            QpStatus::MaxIterations => 1,
            QpStatus::Infeasible => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Lower,
    Upper,
    /// Row whose lower and upper bounds coincide.
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveConstraint {
    pub row: usize,
    pub side: BoundSide,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub tau: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active: Vec<ActiveConstraint>,
    /// Multipliers of `active`, sign convention `∇f + Σ νᵢ Gᵢᵀ = 0`.
    pub multipliers: Vec<f64>,
    /// Rows left violated when the problem is infeasible.
    pub violated_rows: Vec<usize>,
    pub cost: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

pub fn is_infinite_bound(x: f64) -> bool {
    !x.is_finite() || x.abs() >= INFINITE_BOUND
}

impl QpProblem {
    /// Unconstrained problem with identity weight.
    pub fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let (m, n) = a.shape();
        Self {
            a,
            b,
            w: DMatrix::identity(m, m),
            g: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            regularization: DEFAULT_REGULARIZATION,
        }
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.g.nrows()
    }

    /// Appends rows `lower ≤ G τ ≤ upper`, dropping rows unbounded on both sides.
    pub fn push_rows(&mut self, g: &DMatrix<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
        let keep: Vec<usize> = (0..g.nrows())
            .filter(|&i| !(is_infinite_bound(lower[i]) && is_infinite_bound(upper[i])))
            .collect();
        if keep.is_empty() {
            return;
        }
        let n = self.n();
        let p0 = self.g.nrows();
        let p = p0 + keep.len();
        let mut gn = DMatrix::zeros(p, n);
        gn.rows_mut(0, p0).copy_from(&self.g);
        let mut lo = DVector::zeros(p);
        let mut up = DVector::zeros(p);
        lo.rows_mut(0, p0).copy_from(&self.lower);
        up.rows_mut(0, p0).copy_from(&self.upper);
        for (k, &i) in keep.iter().enumerate() {
            gn.set_row(p0 + k, &g.row(i));
            lo[p0 + k] = lower[i];
            up[p0 + k] = upper[i];
        }
        self.g = gn;
        self.lower = lo;
        self.upper = up;
    }

    pub fn validate(&self) -> Result<(), String> {
        let (m, n) = self.a.shape();
        if self.b.len() != m || self.w.shape() != (m, m) {
            return Err("cost shapes inconsistent".into());
        }
        let p = self.g.nrows();
        if self.g.ncols() != n || self.lower.len() != p || self.upper.len() != p {
            return Err("constraint shapes inconsistent".into());
        }
        if (&self.w - self.w.transpose()).amax() > 1e-10 * (1.0 + self.w.amax()) {
            return Err("weight matrix is not symmetric".into());
        }
        if !(self.regularization > 0.0) {
            return Err("regularization must be positive".into());
        }
        for i in 0..p {
            if self.lower[i] > self.upper[i] {
                return Err(format!("row {i}: lower bound exceeds upper bound"));
            }
        }
        Ok(())
    }

    /// `½τᵀ(AᵀWA + εI)τ − (AᵀWb)ᵀτ`.
    pub fn objective(&self, tau: &DVector<f64>) -> f64 {
        let r = &self.a * tau;
        let wr = &self.w * &r;
        0.5 * r.dot(&wr) + 0.5 * self.regularization * tau.norm_squared()
            - (&self.w * &self.b).dot(&r)
    }

    /// Gradient of [`objective`](Self::objective).
    pub fn gradient(&self, tau: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * (&self.w * (&self.a * tau - &self.b)) + tau * self.regularization
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.n();
        self.a.transpose() * &self.w * &self.a + DMatrix::identity(n, n) * self.regularization
    }

    pub fn max_violation(&self, tau: &DVector<f64>) -> f64 {
        let gt = &self.g * tau;
        (0..self.g.nrows())
            .map(|i| {
                let lo = if is_infinite_bound(self.lower[i]) { 0.0 } else { self.lower[i] - gt[i] };
                let up = if is_infinite_bound(self.upper[i]) { 0.0 } else { gt[i] - self.upper[i] };
                lo.max(up).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Least-squares form of the cost: `½‖K τ − r‖²` with `K = [LᵀA; √ε I]`.
struct LsqCost {
    k: DMatrix<f64>,
    r: DVector<f64>,
}

impl LsqCost {
    fn new(p: &QpProblem) -> Self {
        let n = p.n();
        let w = (&p.w + p.w.transpose()) * 0.5;
        let eig = w.symmetric_eigen();
        let wmax = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| wmax > 0.0 && eig.eigenvalues[i] > 1e-14 * wmax)
            .collect();
        let rows = keep.len();
        let mut k = DMatrix::zeros(rows + n, n);
        let mut r = DVector::zeros(rows + n);
        for (c, &i) in keep.iter().enumerate() {
            let l = eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt();
            k.set_row(c, &(l.transpose() * &p.a));
            r[c] = l.dot(&p.b);
        }
        let se = p.regularization.sqrt();
        for i in 0..n {
            k[(rows + i, i)] = se;
        }
        Self { k, r }
    }
}

/// Minimizer of the cost on `{τ : G_W τ = d}` and the working-set multipliers.
fn solve_eqp(cost: &LsqCost, gw: &DMatrix<f64>, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = cost.k.ncols();
    let k = gw.nrows();
    if k == 0 {
        let y = lsq(&cost.k, &cost.r);
        return (y, DVector::zeros(0));
    }
    // QR of [G_Wᵀ | I] gives a full orthogonal basis; its first k columns span
    // range(G_Wᵀ) and the rest span the null space of G_W.
    let mut aug = DMatrix::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(&gw.transpose());
    aug.columns_mut(k, n).copy_from(&DMatrix::identity(n, n));
    let qr = aug.qr();
    let q = qr.q();
    let r = qr.r();
    let y_basis = q.columns(0, k).into_owned();
    let r11 = r.view((0, 0), (k, k)).into_owned();
    // Particular solution τ_p = Y R⁻ᵀ d.
    let z = r11
        .transpose()
        .solve_lower_triangular(d)
        .unwrap_or_else(|| DVector::zeros(k));
    let tau_p = &y_basis * z;
    let tau = if k < n {
        let zb = q.columns(k, n - k).into_owned();
        let kz = &cost.k * &zb;
        let rhs = &cost.r - &cost.k * &tau_p;
        tau_p + zb * lsq(&kz, &rhs)
    } else {
        tau_p
    };
    // Stationarity g + G_Wᵀ ν = 0  =>  R ν = −Yᵀ g.
    let grad = cost.k.transpose() * (&cost.k * &tau - &cost.r);
    let nu = r11
        .solve_upper_triangular(&(-(y_basis.transpose() * grad)))
        .unwrap_or_else(|| DVector::zeros(k));
    (tau, nu)
}

/// Least squares `argmin ‖M x − v‖` for a full-column-rank `M` via QR.
fn lsq(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let qr = m.clone().qr();
    let qtv = qr.q().transpose() * v;
    qr.r()
        .solve_upper_triangular(&qtv)
        .unwrap_or_else(|| DVector::zeros(m.ncols()))
}

fn row_violation(p: &QpProblem, gt: f64, i: usize) -> f64 {
    let lo = p.lower[i];
    let up = p.upper[i];
    if !is_infinite_bound(lo) && gt < lo {
        lo - gt
    } else if !is_infinite_bound(up) && gt > up {
        gt - up
    } else {
        0.0
    }
}

fn feas_tol(p: &QpProblem, i: usize) -> f64 {
    let mag = [p.lower[i], p.upper[i]]
        .iter()
        .filter(|b| !is_infinite_bound(**b))
        .fold(0.0_f64, |m, b| m.max(b.abs()));
    FEASIBILITY_TOL * (1.0 + mag)
}

/// Gauss–Newton on `½ Σ dist(Gᵢτ, [lᵢ, uᵢ])²`, started from `x0`.
fn find_feasible(p: &QpProblem, x0: DVector<f64>) -> Result<DVector<f64>, Vec<usize>> {
    let merit = |x: &DVector<f64>| -> f64 {
        let gt = &p.g * x;
        (0..gt.len()).map(|i| row_violation(p, gt[i], i).powi(2)).sum::<f64>() * 0.5
    };
    let mut x = x0;
    for _ in 0..200 {
        let gt = &p.g * &x;
        let violated: Vec<usize> = (0..gt.len())
            .filter(|&i| row_violation(p, gt[i], i) > feas_tol(p, i))
            .collect();
        if violated.is_empty() {
            return Ok(x);
        }
        let mut gv = DMatrix::zeros(violated.len(), p.n());
        let mut t = DVector::zeros(violated.len());
        for (k, &i) in violated.iter().enumerate() {
            gv.set_row(k, &p.g.row(i));
            let lo = p.lower[i];
            t[k] = if !is_infinite_bound(lo) && gt[i] < lo {
                lo - gt[i]
            } else {
                p.upper[i] - gt[i]
            };
        }
        let step = crate::projection::pinv(&gv, 1e-12) * t;
        let f0 = merit(&x);
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &x + &step * alpha;
            if merit(&cand) < f0 * (1.0 - 1e-4 * alpha) {
                x = cand;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Err(violated);
        }
    }
    let gt = &p.g * &x;
    let violated: Vec<usize> = (0..gt.len())
        .filter(|&i| row_violation(p, gt[i], i) > feas_tol(p, i))
        .collect();
    if violated.is_empty() {
        Ok(x)
    } else {
        Err(violated)
    }
}

/// Whether `v` lies in the row space of `gw` up to round-off.
fn depends_on(gw: &DMatrix<f64>, v: &DVector<f64>) -> bool {
    if gw.nrows() == 0 {
        return v.amax() == 0.0;
    }
    let gt = gw.transpose();
    let coef = crate::projection::pinv(&gt, 1e-12) * v;
    (&gt * coef - v).norm() <= 1e-9 * v.norm()
}

fn bound_value(p: &QpProblem, c: &ActiveConstraint) -> f64 {
    match c.side {
        BoundSide::Lower | BoundSide::Equal => p.lower[c.row],
        BoundSide::Upper => p.upper[c.row],
    }
}

fn working_system(p: &QpProblem, working: &[ActiveConstraint]) -> (DMatrix<f64>, DVector<f64>) {
    let mut gw = DMatrix::zeros(working.len(), p.n());
    let mut d = DVector::zeros(working.len());
    for (k, c) in working.iter().enumerate() {
        gw.set_row(k, &p.g.row(c.row));
        d[k] = bound_value(p, c);
    }
    (gw, d)
}

/// Signed multiplier violation: positive when the multiplier has the wrong
/// sign for its bound side.
fn wrong_sign(side: BoundSide, nu: f64) -> f64 {
    match side {
        BoundSide::Upper => -nu,
        BoundSide::Lower => nu,
        BoundSide::Equal => 0.0,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

pub fn solve(problem: &QpProblem) -> QpSolution {
    solve_with(problem, &QpSettings::default())
}

pub fn solve_with(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let cost = LsqCost::new(problem);
    let n = problem.n();
    let (x_free, _) = solve_eqp(&cost, &DMatrix::zeros(0, n), &DVector::zeros(0));

    let mut x = match find_feasible(problem, x_free) {
        Ok(x) => x,
        Err(violated) => {
            let tau = DVector::zeros(n);
            return QpSolution {
                cost: problem.objective(&tau),
                kkt_residual: f64::INFINITY,
                tau,
                status: QpStatus::Infeasible,
                iterations: 0,
                active: vec![],
                multipliers: vec![],
                violated_rows: violated,
            };
        }
    };

    let mut working: Vec<ActiveConstraint> = Vec::new();
    let mut multipliers = DVector::zeros(0);
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let (gw, d) = working_system(problem, &working);
        let (x_eq, nu) = solve_eqp(&cost, &gw, &d);
        let step = &x_eq - &x;
        let scale = 1.0 + x.amax().max(x_eq.amax());
        if step.amax() <= 1e-12 * scale {
            x = x_eq;
            multipliers = nu.clone();
            // Most wrong-signed multiplier; ties go to the lowest row index.
            let mut drop: Option<(usize, f64)> = None;
            let nu_scale = 1.0 + nu.amax();
            for (k, c) in working.iter().enumerate() {
                let ws = wrong_sign(c.side, nu[k]);
                if ws > 1e-10 * nu_scale {
                    let better = match drop {
                        None => true,
                        Some((kb, wb)) => ws > wb || (ws == wb && c.row < working[kb].row),
                    };
                    if better {
                        drop = Some((k, ws));
                    }
                }
            }
            match drop {
                None => {
                    status = QpStatus::Optimal;
                    break;
                }
                Some((k, _)) => {
                    working.remove(k);
                }
            }
            continue;
        }

        let gx = &problem.g * &x;
        let gp = &problem.g * &step;
        let step_norm = step.norm();
        // Candidate blocking rows by step length; ties go to the lowest row.
        let mut candidates: Vec<(f64, ActiveConstraint)> = Vec::new();
        for i in 0..problem.n_constraints() {
            if working.iter().any(|c| c.row == i) {
                continue;
            }
            let row_scale = 1e-12 * problem.g.row(i).norm() * step_norm;
            let lo = problem.lower[i];
            let up = problem.upper[i];
            if gp[i] > row_scale && !is_infinite_bound(up) {
                let side = if lo == up { BoundSide::Equal } else { BoundSide::Upper };
                let a = ((up - gx[i]) / gp[i]).max(0.0);
                if a < 1.0 {
                    candidates.push((a, ActiveConstraint { row: i, side }));
                }
            } else if gp[i] < -row_scale && !is_infinite_bound(lo) {
                let side = if lo == up { BoundSide::Equal } else { BoundSide::Lower };
                let a = ((lo - gx[i]) / gp[i]).max(0.0);
                if a < 1.0 {
                    candidates.push((a, ActiveConstraint { row: i, side }));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.row.cmp(&b.1.row)));
        // Rows in the span of the working set cannot block in exact
        // arithmetic; skipping them keeps the working rows independent.
        let blocking = candidates
            .into_iter()
            .find(|(_, c)| working.len() < n && !depends_on(&gw, &problem.g.row(c.row).transpose()));
        let alpha = blocking.as_ref().map_or(1.0, |(a, _)| *a);
        let blocking = blocking.map(|(_, c)| c);
        x += &step * alpha;
        if let Some(c) = blocking {
            let pos = working.iter().position(|w| w.row > c.row).unwrap_or(working.len());
            working.insert(pos, c);
        }
    }

    if status != QpStatus::Optimal {
        let (gw, d) = working_system(problem, &working);
        let (_, nu) = solve_eqp(&cost, &gw, &d);
        multipliers = nu;
    }

    let grad = problem.gradient(&x);
    let mut stat = grad.clone();
    for (k, c) in working.iter().enumerate() {
        stat += problem.g.row(c.row).transpose() * multipliers[k];
    }
    let sign_err = working
        .iter()
        .enumerate()
        .map(|(k, c)| wrong_sign(c.side, multipliers[k]).max(0.0))
        .fold(0.0, f64::max);
    let residual = stat.amax().max(problem.max_violation(&x)).max(sign_err);

    QpSolution {
        cost: problem.objective(&x),
        tau: x,
        status,
        kkt_residual: residual,
        iterations,
        multipliers: multipliers.iter().copied().collect(),
        active: working,
        violated_rows: vec![],
    }
}

/// KKT residual of an arbitrary point: the largest of the stationarity error
/// under least-squares multipliers of the near-active rows, the primal
/// violation and the complementarity violation.
pub fn kkt_residual(problem: &QpProblem, tau: &DVector<f64>) -> f64 {
    let grad = problem.gradient(tau);
    let gt = &problem.g * tau;
    let mut rows = Vec::new();
    let mut sides = Vec::new();
    for i in 0..problem.n_constraints() {
        let tol = ACTIVE_TOL * (1.0 + gt[i].abs());
        let lo = problem.lower[i];
        let up = problem.upper[i];
        if !is_infinite_bound(up) && (gt[i] - up).abs() <= tol.max(0.0) || (!is_infinite_bound(up) && gt[i] > up) {
            rows.push(i);
            sides.push(BoundSide::Upper);
        } else if !is_infinite_bound(lo) && ((gt[i] - lo).abs() <= tol || gt[i] < lo) {
            rows.push(i);
            sides.push(BoundSide::Lower);
        }
    }
    let primal = problem.max_violation(tau);
    if rows.is_empty() {
        return grad.amax().max(primal);
    }
    let mut ga = DMatrix::zeros(rows.len(), problem.n());
    for (k, &i) in rows.iter().enumerate() {
        ga.set_row(k, &problem.g.row(i));
    }
    // ∇f + G_Aᵀ ν = 0 in the least-squares sense, then clip wrong signs.
    let mut nu = crate::projection::pinv(&ga.transpose(), 1e-12) * (-&grad);
    for (k, side) in sides.iter().enumerate() {
        if wrong_sign(*side, nu[k]) > 0.0 {
            nu[k] = 0.0;
        }
    }
    let stat = (&grad + ga.transpose() * &nu).amax();
    let comp = rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let slack = match sides[k] {
                BoundSide::Upper => problem.upper[i] - gt[i],
                _ => gt[i] - problem.lower[i],
            };
            (nu[k] * slack).abs()
        })
        .fold(0.0, f64::max);
    stat.max(primal).max(comp)
}

/// Serializable form of a [`QpProblem`] for offline analysis. Infinite bounds
/// are written as `±1e19`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpDump {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub regularization: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

fn clamp_bound(x: f64) -> f64 {
    if is_infinite_bound(x) {
        INFINITE_BOUND.copysign(x)
    } else {
        x
    }
}

impl From<&QpProblem> for QpDump {
    fn from(p: &QpProblem) -> Self {
        Self {
            a: rows_of(&p.a),
            b: p.b.iter().copied().collect(),
            w: rows_of(&p.w),
            g: rows_of(&p.g),
            lower: p.lower.iter().map(|&x| clamp_bound(x)).collect(),
            upper: p.upper.iter().map(|&x| clamp_bound(x)).collect(),
            regularization: p.regularization,
        }
    }
}

impl QpDump {
    pub fn to_problem(&self) -> Result<QpProblem, String> {
        let n = self.a.first().map_or(0, |r| r.len());
        let m = self.a.len();
        if self.a.iter().any(|r| r.len() != n) || self.g.iter().any(|r| r.len() != n) {
            return Err("ragged matrix rows".into());
        }
        if self.w.len() != m || self.w.iter().any(|r| r.len() != m) {
            return Err("weight matrix shape mismatch".into());
        }
        let p = QpProblem {
            a: matrix_of(&self.a, n),
            b: DVector::from_vec(self.b.clone()),
            w: matrix_of(&self.w, m),
            g: matrix_of(&self.g, n),
            lower: DVector::from_vec(self.lower.clone()),
            upper: DVector::from_vec(self.upper.clone()),
            regularization: self.regularization,
        };
        p.validate()?;
        Ok(p)
    }
}
