//! Helpers shared by the integration tests.
#![allow(dead_code)]

use hier_admm::qp::QuadraticProgram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense random convex QP, feasible and bounded by construction.
pub struct RandomQp {
    pub n: usize,
    pub m: usize,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub a: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl RandomQp {
    /// `strict` adds a unit diagonal so `h` is positive definite; otherwise
    /// `h` has rank at most `n/2`.
    pub fn sample(seed: u64, max_n: usize, strict: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=max_n);
        let k = if strict { n } else { (n / 2).max(1) };
        let f: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = (0..k).map(|r| f[r * n + i] * f[r * n + j]).sum();
            }
            if strict {
                h[i * n + i] += 1.0;
            }
        }
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let general = rng.random_range(0..=n);
        let m = general + n;
        let mut a = vec![0.0; m * n];
        let mut lb = Vec::with_capacity(m);
        let mut ub = Vec::with_capacity(m);
        for r in 0..m {
            if r < general {
                for j in 0..n {
                    a[r * n + j] = rng.random_range(-1.0..1.0);
                }
            } else {
                a[r * n + (r - general)] = 1.0;
            }
            let az: f64 = (0..n).map(|j| a[r * n + j] * z0[j]).sum();
            // without a definite `h`, one-sided boxes could leave the
            // program unbounded
            let kind = if strict || r < general { rng.random_range(0..10) } else { 9 };
            let (lo, hi) = match kind {
                0 if r < general => (az, az),
                1 => (f64::NEG_INFINITY, az + rng.random_range(0.0..1.0)),
                2 => (az - rng.random_range(0.0..1.0), f64::INFINITY),
                _ => (az - rng.random_range(0.0..1.0), az + rng.random_range(0.0..1.0)),
            };
            lb.push(lo);
            ub.push(hi);
        }
        RandomQp { n, m, h, g, a, lb, ub }
    }

    pub fn program(&self) -> QuadraticProgram {
        QuadraticProgram::new(self.h.clone(), self.g.clone(), self.a.clone(), self.lb.clone(), self.ub.clone())
            .unwrap()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = self.n;
        let mut v = 0.0;
        for i in 0..n {
            v += self.g[i] * z[i];
            for j in 0..n {
                v += 0.5 * z[i] * self.h[i * n + j] * z[j];
            }
        }
        v
    }
}

/// Lower-triangular Cholesky factor of a dense SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            l[i * n + j] = if i == j { s.sqrt() } else { s / l[j * n + j] };
        }
    }
    l
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Optimal value of a strictly convex QP by accelerated projected gradient
/// ascent on its dual, where the feasible set is a non-negative orthant.
/// Returns the dual value after `iters` steps, a lower bound converging to
/// the optimum.
pub fn dual_projected_gradient(qp: &RandomQp, iters: usize) -> f64 {
    let (n, m) = (qp.n, qp.m);
    let l = cholesky(&qp.h, n);
    // Q = A H⁻¹ Aᵀ, c = A H⁻¹ g, and gᵀH⁻¹g
    let hinv_at: Vec<Vec<f64>> = (0..m).map(|r| chol_solve(&l, n, &qp.a[r * n..(r + 1) * n])).collect();
    let hinv_g = chol_solve(&l, n, &qp.g);
    let row = |r: usize| &qp.a[r * n..(r + 1) * n];
    let dotv = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let q: Vec<f64> = (0..m * m).map(|k| dotv(row(k / m), &hinv_at[k % m])).collect();
    let c: Vec<f64> = (0..m).map(|r| dotv(row(r), &hinv_g)).collect();
    let ghg = dotv(&qp.g, &hinv_g);

    // variables: u (upper multipliers) then l (lower multipliers)
    let active_u: Vec<bool> = qp.ub.iter().map(|v| v.is_finite()).collect();
    let active_l: Vec<bool> = qp.lb.iter().map(|v| v.is_finite()).collect();
    let dual = |u: &[f64], lo: &[f64]| {
        let nu: Vec<f64> = (0..m).map(|r| u[r] - lo[r]).collect();
        let qnu: Vec<f64> = (0..m).map(|r| dotv(&q[r * m..(r + 1) * m], &nu)).collect();
        let val = -0.5 * (ghg + 2.0 * dotv(&c, &nu) + dotv(&nu, &qnu))
            - (0..m).filter(|&r| active_u[r]).map(|r| qp.ub[r] * u[r]).sum::<f64>()
            + (0..m).filter(|&r| active_l[r]).map(|r| qp.lb[r] * lo[r]).sum::<f64>();
        (val, qnu)
    };
    // Lipschitz constant of the gradient: 2‖Q‖ bounds the split form
    let lip = 2.0 * q.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12;
    let step = 1.0 / lip;

    let mut u = vec![0.0; m];
    let mut lo = vec![0.0; m];
    let (mut yu, mut yl) = (u.clone(), lo.clone());
    let mut t = 1.0_f64;
    // only projected iterates give valid lower bounds
    let mut best = dual(&u, &lo).0;
    for _ in 0..iters {
        let (_, qnu) = dual(&yu, &yl);
        let mut nu_u = vec![0.0; m];
        let mut nu_l = vec![0.0; m];
        for r in 0..m {
            let grad = -(c[r] + qnu[r]);
            if active_u[r] {
                nu_u[r] = (yu[r] + step * (grad - qp.ub[r])).max(0.0);
            }
            if active_l[r] {
                nu_l[r] = (yl[r] + step * (-grad + qp.lb[r])).max(0.0);
            }
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        for r in 0..m {
            yu[r] = nu_u[r] + mom * (nu_u[r] - u[r]);
            yl[r] = nu_l[r] + mom * (nu_l[r] - lo[r]);
        }
        u = nu_u;
        lo = nu_l;
        t = t_next;
        best = best.max(dual(&u, &lo).0);
    }
    best
}
