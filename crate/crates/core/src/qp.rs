//! Small dense convex QP solver.
//!
//! Solves
//!
//! ```text
//!   min  ½ zᵀHz + gᵀz
//!   s.t. lb ≤ Az ≤ ub
//! ```
//!
//! with a Mehrotra predictor-corrector interior-point method. Rows with
//! `lb == ub` are treated as equalities; infinite bounds drop the matching
//! side. `H` only needs to be positive semidefinite: a diagonal
//! regularisation is added before solving.
//!
//! The normal-equation matrix `H + Gᵀ W G` is factorised with a Cholesky
//! routine that only touches the structural band of the matrix, so problems
//! whose variables can be ordered with a narrow band (time-stepped battery
//! schedules) cost `O(n·bw²)` per iteration instead of `O(n³)`.
//!
//! When the iteration stalls, an elastic feasibility problem decides between
//! "infeasible" and "not converged".

use crate::error::{Error, Result};

/// Problem data. Matrices are dense, row-major.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    n: usize,
    m: usize,
    h: Vec<f64>,
    g: Vec<f64>,
    a: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl QuadraticProgram {
    /// Validates dimensions, symmetry and (approximate) positive
    /// semidefiniteness of `h`, and `lb ≤ ub`.
    pub fn new(
        h: Vec<f64>,
        g: Vec<f64>,
        a: Vec<f64>,
        lb: Vec<f64>,
        ub: Vec<f64>,
    ) -> Result<Self> {
        let n = g.len();
        if h.len() != n * n {
            return Err(Error::length("qp hessian", n * n, h.len()));
        }
        let m = lb.len();
        if ub.len() != m {
            return Err(Error::length("qp upper bounds", m, ub.len()));
        }
        if a.len() != m * n {
            return Err(Error::length("qp constraint matrix", m * n, a.len()));
        }
        let scale = h.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (h[i * n + j] - h[j * n + i]).abs() > 1e-10 * scale {
                    return Err(Error::Config(format!("hessian is not symmetric at ({i},{j})")));
                }
            }
        }
        if (0..n).any(|i| h[i * n + i] < 0.0) {
            return Err(Error::Config("hessian has a negative diagonal entry".into()));
        }
        // PSD screen: H + δI must admit a Cholesky factorisation.
        let mut probe = h.clone();
        let delta = 1e-9 * scale;
        for i in 0..n {
            probe[i * n + i] += delta;
        }
        if cholesky_band(&mut probe, n, band_of(&h, n)).is_err() {
            return Err(Error::Config("hessian is not positive semidefinite".into()));
        }
        if let Some(r) = (0..m).find(|&r| lb[r] > ub[r] || lb[r].is_nan() || ub[r].is_nan()) {
            return Err(Error::Config(format!("row {r} has lb > ub")));
        }
        Ok(QuadraticProgram {
            n,
            m,
            h,
            g,
            a,
            lb,
            ub,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = self.n;
        let mut quad = 0.0;
        for i in 0..n {
            let row = &self.h[i * n..(i + 1) * n];
            quad += z[i] * dot(row, z);
        }
        0.5 * quad + dot(&self.g, z)
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.a[r * self.n..(r + 1) * self.n]
    }

    /// Stationarity, primal feasibility and complementarity residuals of a
    /// candidate primal-dual pair (`duals[r] > 0` pushes against `ub`,
    /// `< 0` against `lb`).
    pub fn kkt_residuals(&self, z: &[f64], duals: &[f64]) -> KktResiduals {
        let n = self.n;
        let mut grad: Vec<f64> = (0..n)
            .map(|i| dot(&self.h[i * n..(i + 1) * n], z) + self.g[i])
            .collect();
        let mut primal = 0.0_f64;
        let mut comp = 0.0_f64;
        for r in 0..self.m {
            let row = self.row(r);
            let az = dot(row, z);
            primal = primal.max(self.lb[r] - az).max(az - self.ub[r]);
            let nu = duals[r];
            for (gi, ai) in grad.iter_mut().zip(row) {
                *gi += nu * ai;
            }
            if self.lb[r] != self.ub[r] {
                let c = if nu > 0.0 {
                    nu * (self.ub[r] - az)
                } else if nu < 0.0 {
                    -nu * (az - self.lb[r])
                } else {
                    0.0
                };
                comp = comp.max(c.abs());
            }
        }
        KktResiduals {
            stationarity: grad.iter().fold(0.0, |acc, v| acc.max(v.abs())),
            primal: primal.max(0.0),
            complementarity: comp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal regularisation added to `H`.
    pub regularization: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol: 1e-6,
            max_iter: 10_000,
            regularization: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    NotConverged,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub status: QpStatus,
    /// Primal solution, or best iterate when not solved.
    pub z: Vec<f64>,
    /// One multiplier per constraint row.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Merit value `‖r_dual‖∞ + ‖r_primal‖∞ + μ` after each iteration.
    pub merit_history: Vec<f64>,
}

impl QpSolution {
    /// Converts a non-solved status into an error carrying the diagnostics.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            QpStatus::Solved => Ok(self),
            QpStatus::Infeasible => Err(Error::Infeasible(format!(
                "qp has no feasible point (best violation {:.3e})",
                self.residuals.primal
            ))),
            QpStatus::NotConverged => Err(Error::SolverFailed {
                iterations: self.iterations,
                primal: self.residuals.primal,
                dual: self.residuals.stationarity,
                gap: self.residuals.complementarity,
            }),
        }
    }
}

struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRow {
    fn from_dense(row: &[f64], sign: f64) -> Self {
        let (idx, val) = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, sign * v))
            .unzip();
        SparseRow { idx, val }
    }

    fn dot(&self, z: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * z[i]).sum()
    }

    fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }

    fn span(&self) -> usize {
        match (self.idx.first(), self.idx.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

/// Inequality `Gz ≤ h` / equality `Ez = d` form of the problem.
struct Standard {
    ineq: Vec<SparseRow>,
    h: Vec<f64>,
    /// (original row, sign) for each inequality.
    ineq_src: Vec<(usize, f64)>,
    eq: Vec<SparseRow>,
    d: Vec<f64>,
    eq_src: Vec<usize>,
}

impl Standard {
    fn from_qp(qp: &QuadraticProgram) -> Self {
        let mut s = Standard {
            ineq: Vec::new(),
            h: Vec::new(),
            ineq_src: Vec::new(),
            eq: Vec::new(),
            d: Vec::new(),
            eq_src: Vec::new(),
        };
        for r in 0..qp.m {
            let (lo, hi) = (qp.lb[r], qp.ub[r]);
            let row = qp.row(r);
            if lo == hi {
                s.eq.push(SparseRow::from_dense(row, 1.0));
                s.d.push(hi);
                s.eq_src.push(r);
                continue;
            }
            if hi.is_finite() {
                s.ineq.push(SparseRow::from_dense(row, 1.0));
                s.h.push(hi);
                s.ineq_src.push((r, 1.0));
            }
            if lo.is_finite() {
                s.ineq.push(SparseRow::from_dense(row, -1.0));
                s.h.push(-lo);
                s.ineq_src.push((r, -1.0));
            }
        }
        s
    }
}

/// Solves `qp`. Never panics on numerical trouble; the status reports it.
pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> QpSolution {
    let std_form = Standard::from_qp(qp);
    let mut sol = interior_point(qp, &std_form, settings);
    if sol.status == QpStatus::NotConverged && !feasible(qp, settings) {
        sol.status = QpStatus::Infeasible;
    }
    sol
}

/// Elastic phase-1: minimise the total bound violation.
fn feasible(qp: &QuadraticProgram, settings: &QpSettings) -> bool {
    let (n, m) = (qp.n, qp.m);
    let nv = n + m;
    let mut h = vec![0.0; nv * nv];
    for i in 0..nv {
        h[i * nv + i] = 1e-8;
    }
    let mut g = vec![0.0; nv];
    g[n..].iter_mut().for_each(|v| *v = 1.0);
    // rows: lb ≤ a z + t, a z − t ≤ ub, t ≥ 0
    let rows = 2 * m + m;
    let mut a = vec![0.0; rows * nv];
    let mut lb = vec![f64::NEG_INFINITY; rows];
    let mut ub = vec![f64::INFINITY; rows];
    for r in 0..m {
        let src = qp.row(r);
        let lo_row = &mut a[(2 * r) * nv..(2 * r + 1) * nv];
        lo_row[..n].copy_from_slice(src);
        lo_row[n + r] = 1.0;
        lb[2 * r] = qp.lb[r];
        let hi_row = &mut a[(2 * r + 1) * nv..(2 * r + 2) * nv];
        hi_row[..n].copy_from_slice(src);
        hi_row[n + r] = -1.0;
        ub[2 * r + 1] = qp.ub[r];
        a[(2 * m + r) * nv + n + r] = 1.0;
        lb[2 * m + r] = 0.0;
    }
    let elastic = QuadraticProgram {
        n: nv,
        m: rows,
        h,
        g,
        a,
        lb,
        ub,
    };
    let sol = interior_point(&elastic, &Standard::from_qp(&elastic), settings);
    let worst = sol.z[n..].iter().fold(0.0_f64, |acc, t| acc.max(*t));
    // An elastic problem is always feasible, so its iterate is meaningful
    // even if the tolerance was not reached.
    worst <= 10.0 * settings.tol
}

fn interior_point(qp: &QuadraticProgram, sf: &Standard, settings: &QpSettings) -> QpSolution {
    let n = qp.n;
    let mi = sf.ineq.len();
    let me = sf.eq.len();
    let tol = settings.tol;

    let mut hreg = qp.h.clone();
    for i in 0..n {
        hreg[i * n + i] += settings.regularization;
    }

    let mut bw = band_of(&hreg, n);
    // residuals use the unregularised H so `Solved` certifies the original
    // problem
    let h_rows: Vec<SparseRow> = (0..n)
        .map(|i| SparseRow::from_dense(&qp.h[i * n..(i + 1) * n], 1.0))
        .collect();
    for row in sf.ineq.iter().chain(&sf.eq) {
        bw = bw.max(row.span());
    }

    let mut z = vec![0.0; n];
    let mut s: Vec<f64> = sf.h.iter().map(|&h| h.max(1.0)).collect();
    let mut y = vec![1.0; mi];
    let mut nu = vec![0.0; me];

    let mut mat = vec![0.0; n * n];
    let mut merit_history = Vec::new();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut status = QpStatus::NotConverged;
    let mut iterations = 0;
    let mut reg_boost = 0.0;

    let residuals = |z: &[f64], s: &[f64], y: &[f64], nu: &[f64]| {
        let mut rd: Vec<f64> = (0..n)
            .map(|i| h_rows[i].dot(z) + qp.g[i])
            .collect();
        for (row, &yi) in sf.ineq.iter().zip(y) {
            row.axpy(yi, &mut rd);
        }
        for (row, &v) in sf.eq.iter().zip(nu) {
            row.axpy(v, &mut rd);
        }
        let rp: Vec<f64> = (0..mi).map(|k| sf.ineq[k].dot(z) + s[k] - sf.h[k]).collect();
        let re: Vec<f64> = (0..me).map(|k| sf.eq[k].dot(z) - sf.d[k]).collect();
        (rd, rp, re)
    };
    let mu_of = |s: &[f64], y: &[f64]| {
        if mi == 0 {
            0.0
        } else {
            dot(s, y) / mi as f64
        }
    };

    let (mut rd, mut rp, mut re) = residuals(&z, &s, &y, &nu);
    let mut mu = mu_of(&s, &y);
    let mut merit = norm_inf(&rd) + norm_inf(&rp) + norm_inf(&re) + mu;

    while iterations < settings.max_iter {
        let max_comp = s.iter().zip(&y).fold(0.0_f64, |acc, (a, b)| acc.max(a * b));
        if norm_inf(&rd) <= tol && norm_inf(&rp) <= tol && norm_inf(&re) <= tol && max_comp <= tol
        {
            status = QpStatus::Solved;
            break;
        }
        if norm_inf(&y) > 1e12 || norm_inf(&nu) > 1e12 {
            break;
        }
        iterations += 1;

        // M = Hreg + Gᵀ W G
        mat.copy_from_slice(&hreg);
        for (k, row) in sf.ineq.iter().enumerate() {
            let w = y[k] / s[k];
            for (p, &i) in row.idx.iter().enumerate() {
                let wi = w * row.val[p];
                for (q, &j) in row.idx.iter().enumerate() {
                    mat[i * n + j] += wi * row.val[q];
                }
            }
        }
        if reg_boost > 0.0 {
            for i in 0..n {
                mat[i * n + i] += reg_boost;
            }
        }
        let mut fact_ok = cholesky_band(&mut mat, n, bw).is_ok();
        let mut tries = 0;
        while !fact_ok && tries < 8 {
            reg_boost = if reg_boost == 0.0 { 1e-10 } else { reg_boost * 100.0 };
            mat.copy_from_slice(&hreg);
            for (k, row) in sf.ineq.iter().enumerate() {
                let w = y[k] / s[k];
                for (p, &i) in row.idx.iter().enumerate() {
                    for (q, &j) in row.idx.iter().enumerate() {
                        mat[i * n + j] += w * row.val[p] * row.val[q];
                    }
                }
            }
            for i in 0..n {
                mat[i * n + i] += reg_boost;
            }
            fact_ok = cholesky_band(&mut mat, n, bw).is_ok();
            tries += 1;
        }
        if !fact_ok {
            break;
        }

        // Schur complement for the equality rows.
        let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(me);
        let mut schur = vec![0.0; me * me];
        if me > 0 {
            for row in &sf.eq {
                let mut col = vec![0.0; n];
                row.axpy(1.0, &mut col);
                solve_band(&mat, n, bw, &mut col);
                v_cols.push(col);
            }
            for (a, row) in sf.eq.iter().enumerate() {
                for b in 0..me {
                    schur[a * me + b] = row.dot(&v_cols[b]);
                }
                schur[a * me + a] += 1e-12 * (1.0 + schur[a * me + a].abs());
            }
            if cholesky_band(&mut schur, me, me.saturating_sub(1)).is_err() {
                break;
            }
        }

        let direction = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // b = −r_d − Gᵀ S⁻¹(Y r_p − r_c)
            let mut b: Vec<f64> = rd.iter().map(|v| -v).collect();
            let tmp: Vec<f64> = (0..mi).map(|k| (y[k] * rp[k] - rc[k]) / s[k]).collect();
            for (row, &t) in sf.ineq.iter().zip(&tmp) {
                row.axpy(-t, &mut b);
            }
            solve_band(&mat, n, bw, &mut b);
            let mut dnu = vec![0.0; me];
            if me > 0 {
                for (k, row) in sf.eq.iter().enumerate() {
                    dnu[k] = row.dot(&b) + re[k];
                }
                solve_band(&schur, me, me.saturating_sub(1), &mut dnu);
                for (k, col) in v_cols.iter().enumerate() {
                    for i in 0..n {
                        b[i] -= dnu[k] * col[i];
                    }
                }
            }
            let dz = b;
            let ds: Vec<f64> = (0..mi).map(|k| -rp[k] - sf.ineq[k].dot(&dz)).collect();
            let dy: Vec<f64> = (0..mi)
                .map(|k| (-rc[k] - y[k] * ds[k]) / s[k])
                .collect();
            (dz, ds, dy, dnu)
        };

        // predictor
        let rc_aff: Vec<f64> = s.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (_, ds_a, dy_a, _) = direction(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&y, &dy_a)).min(1.0);
        let mu_aff = if mi == 0 {
            0.0
        } else {
            (0..mi)
                .map(|k| (s[k] + a_aff * ds_a[k]) * (y[k] + a_aff * dy_a[k]))
                .sum::<f64>()
                / mi as f64
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let rc: Vec<f64> = (0..mi)
            .map(|k| s[k] * y[k] + ds_a[k] * dy_a[k] - sigma * mu)
            .collect();
        let mut step = direction(&rc);
        let mut alpha = (0.99 * max_step(&s, &step.1).min(max_step(&y, &step.2))).min(1.0);

        let trial = |alpha: f64, st: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)| {
            let sn: Vec<f64> = s.iter().zip(&st.1).map(|(a, d)| a + alpha * d).collect();
            let yn: Vec<f64> = y.iter().zip(&st.2).map(|(a, d)| a + alpha * d).collect();
            let scale = 1.0 - alpha;
            scale * (norm_inf(&rd) + norm_inf(&rp) + norm_inf(&re)) + mu_of(&sn, &yn)
        };

        let mut new_merit = trial(alpha, &step);
        if new_merit > merit {
            // fall back to the centred direction without the second-order
            // term; its merit decreases for small enough steps
            let rc_c: Vec<f64> = (0..mi).map(|k| s[k] * y[k] - 0.5 * mu).collect();
            step = direction(&rc_c);
            alpha = (0.99 * max_step(&s, &step.1).min(max_step(&y, &step.2))).min(1.0);
            new_merit = trial(alpha, &step);
            let mut halvings = 0;
            while new_merit > merit && halvings < 60 {
                alpha *= 0.5;
                new_merit = trial(alpha, &step);
                halvings += 1;
            }
            if new_merit > merit {
                break;
            }
        }
        if alpha < 1e-14 {
            break;
        }

        let (dz, ds, dy, dnu) = step;
        for i in 0..n {
            z[i] += alpha * dz[i];
        }
        for k in 0..mi {
            s[k] += alpha * ds[k];
            y[k] += alpha * dy[k];
        }
        for k in 0..me {
            nu[k] += alpha * dnu[k];
        }
        let r = residuals(&z, &s, &y, &nu);
        rd = r.0;
        rp = r.1;
        re = r.2;
        mu = mu_of(&s, &y);
        merit = norm_inf(&rd) + norm_inf(&rp) + norm_inf(&re) + mu;
        merit_history.push(merit);

        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, z.clone(), y.clone(), nu.clone()));
        }
    }

    if status != QpStatus::Solved {
        if let Some((_, bz, by, bnu)) = best {
            z = bz;
            y = by;
            nu = bnu;
        }
    }

    let mut duals = vec![0.0; qp.m];
    for (k, &(r, sign)) in sf.ineq_src.iter().enumerate() {
        duals[r] += sign * y[k];
    }
    for (k, &r) in sf.eq_src.iter().enumerate() {
        duals[r] += nu[k];
    }
    let residuals = qp.kkt_residuals(&z, &duals);
    QpSolution {
        status,
        objective: qp.objective(&z),
        z,
        duals,
        iterations,
        residuals,
        merit_history,
    }
}

/// Largest `i − j` with a nonzero `a[i][j]`, `j < i`.
fn band_of(a: &[f64], n: usize) -> usize {
    let mut bw = 0;
    for i in 0..n {
        if let Some(j) = (0..i).find(|&j| a[i * n + j] != 0.0) {
            bw = bw.max(i - j);
        }
    }
    bw
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// In-place lower Cholesky factor of a symmetric matrix whose nonzeros lie
/// within `bw` of the diagonal. Only the lower band is read and written.
fn cholesky_band(a: &mut [f64], n: usize, bw: usize) -> std::result::Result<(), ()> {
    for j in 0..n {
        let k0 = j.saturating_sub(bw);
        let mut d = a[j * n + j];
        for k in k0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(());
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        let i_end = (j + bw + 1).min(n);
        for i in (j + 1)..i_end {
            let k0 = i.saturating_sub(bw);
            let mut v = a[i * n + j];
            for k in k0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    Ok(())
}

fn solve_band(l: &[f64], n: usize, bw: usize, b: &mut [f64]) {
    for i in 0..n {
        let k0 = i.saturating_sub(bw);
        let mut v = b[i];
        for k in k0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let k_end = (i + bw + 1).min(n);
        let mut v = b[i];
        for k in (i + 1)..k_end {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}
