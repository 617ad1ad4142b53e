//! The interior-point solver on a hand-written problem: maximize x on the
//! disc x^2 + y^2 <= 4 with y = 1, then a warm re-solve after moving y.

use flexdom::ipm::{solve, IpmOptions};
use flexdom::nlpcore::{
    Constraint, InterfaceIndices, LinearFunction, LinearObjective, NlpProblem, Polynomial, Variable,
};

fn problem(y: f64) -> NlpProblem {
    NlpProblem {
        variables: vec![Variable::free("x", 0.0), Variable::new("y", -5.0, 5.0, 0.0)],
        objective: LinearObjective {
            terms: vec![(0, -1.0)],
            constant: 0.0,
        },
        constraints: vec![
            Constraint::inequality(
                "disc",
                Polynomial::new()
                    .term(1.0, &[(0, 2)])
                    .term(1.0, &[(1, 2)])
                    .constant(-4.0),
            ),
            Constraint::equality("y", LinearFunction::new(&[(1, 1.0)], -y)),
        ],
        interface: InterfaceIndices { p_se: 0, q_se: 1 },
    }
}

fn main() -> anyhow::Result<()> {
    let options = IpmOptions::default();
    let cold = solve(&problem(1.0), &options, None)?;
    println!(
        "cold: x = {:.9} (exact {:.9}), {} iterations, KKT {:.1e}, {}",
        cold.x[0],
        3f64.sqrt(),
        cold.iterations,
        cold.kkt_residual,
        cold.status
    );
    println!(
        "      disc multiplier {:.6}, bound duals {:?}",
        cold.duals_ineq[0], cold.duals_bounds[1]
    );

    let warm = solve(&problem(1.1), &options, Some(&cold.warm_start()))?;
    println!(
        "warm: x = {:.9} (exact {:.9}), {} iterations, {}",
        warm.x[0],
        (4.0f64 - 1.21).sqrt(),
        warm.iterations,
        warm.status
    );
    Ok(())
}
