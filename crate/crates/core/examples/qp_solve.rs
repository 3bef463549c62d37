//! Solve a small box- and inequality-constrained QP and print the dual
//! objective after each active-set change.
//!
//! ```bash
//! cargo run --release --example qp_solve
//! ```

use nalgebra::{dmatrix, dvector};
use platoon_mpc::qp::{self, QpProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};

fn main() -> anyhow::Result<()> {
    // min 0.5 x'Hx + g'x  s.t.  -1 <= x <= 1,  x0 + x1 <= 0.5
    let problem = QpProblem::new(dmatrix![4.0, 1.0; 1.0, 2.0], dvector![-8.0, -3.0])
        .with_bounds(dvector![-1.0, -1.0], dvector![1.0, 1.0])
        .with_inequalities(dmatrix![1.0, 1.0], dvector![0.5]);

    let (sol, history) = qp::solve_traced(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    for (k, f) in history.iter().enumerate() {
        println!("iteration {k}: dual objective {f:.6}");
    }
    println!("x = {}", sol.x.transpose());
    println!(
        "objective {:.6}, KKT residual {:.2e}, status {}",
        sol.objective,
        sol.kkt_residual,
        sol.status.as_str()
    );
    Ok(())
}
