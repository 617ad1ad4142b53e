//! Finite-difference verification of every constraint gradient and Hessian
//! at random interior points of each formulation.
//!
//! cargo run --release --example derivative_check -- [points]

use flexdom::caseio::case33;
use flexdom::formulations::{build, FormulationKind};
use flexdom::nlpcore::check_derivatives;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let points: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let net = case33();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in FormulationKind::ALL {
        let f = build(&net, kind)?;
        let (mut worst, mut name, mut rows) = (0.0, String::new(), 0);
        for _ in 0..points {
            let x = f.problem.sample_interior_point(&mut rng, 1e-3);
            for r in check_derivatives(&f.problem, &x, 1e-6, 1e-5) {
                rows += 1;
                if r.max_rel_error > worst {
                    (worst, name) = (r.max_rel_error, r.constraint);
                }
            }
        }
        println!(
            "{:<14} {:>4} variables {:>4} constraints, {rows} checks, worst relative error {worst:.2e} ({name})",
            kind.label(),
            f.problem.n_vars(),
            f.problem.n_constraints()
        );
    }
    Ok(())
}
