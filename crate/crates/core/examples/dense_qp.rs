//! Solves a small box- and equality-constrained QP and checks its KKT
//! residuals.

use hier_admm::qp::{solve, QpSettings, QuadraticProgram};

fn main() -> hier_admm::Result<()> {
    // min ½(z0² + 2 z1² + z2²) − z0 − z1   s.t. z0 + z1 + z2 = 1, 0 ≤ z ≤ 0.6
    let h = vec![
        1.0, 0.0, 0.0, //
        0.0, 2.0, 0.0, //
        0.0, 0.0, 1.0,
    ];
    let g = vec![-1.0, -1.0, 0.0];
    let a = vec![
        1.0, 1.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ];
    let lb = vec![1.0, 0.0, 0.0, 0.0];
    let ub = vec![1.0, 0.6, 0.6, 0.6];
    let qp = QuadraticProgram::new(h, g, a, lb, ub)?;
    let sol = solve(&qp, &QpSettings::default()).into_result()?;
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("z = {:?}", sol.z);
    println!("objective {:.6}", sol.objective);
    let kkt = qp.kkt_residuals(&sol.z, &sol.duals);
    println!(
        "stationarity {:.1e}  feasibility {:.1e}  complementarity {:.1e}",
        kkt.stationarity, kkt.primal, kkt.complementarity
    );
    Ok(())
}
