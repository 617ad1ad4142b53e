//! Backward-forward sweep power flow and Monte Carlo sampling of random
//! DG and capacitor setpoints, checked against the DistFlow region.
//!
//! cargo run --release --example power_flow_oracle -- [samples] [seed]

use flexdom::caseio::case33;
use flexdom::formulations::FormulationKind;
use flexdom::oracle::{bfs_power_flow, is_technically_feasible, mc_sample, ControlSetting};
use flexdom::region::{assemble_polygon, boundary_distance, contains};
use flexdom::sweep::{sweep_boundary, SweepConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let net = case33().scale_loads(14)?;

    let base = bfs_power_flow(&net, &ControlSetting::zero(&net))?;
    let vmin = base.v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (ok, violations) = is_technically_feasible(&base, &net);
    println!(
        "no DG, no capacitors: p_se {:.5} q_se {:.5} pu, min |V|^2 {vmin:.4}, {} iterations, feasible {ok} ({} violations)",
        base.p_se,
        base.q_se,
        base.iterations,
        violations.len()
    );

    let mc = mc_sample(&net, n, seed)?;
    println!(
        "{} drawn, {} converged, {} feasible ({:.1}%)",
        mc.drawn,
        mc.converged,
        mc.feasible.len(),
        100.0 * mc.acceptance_rate()
    );

    let b = sweep_boundary(
        &net,
        &SweepConfig::new(FormulationKind::DistFlow).with_points(100),
    )?;
    let poly = assemble_polygon(&b.points)?;
    let outside = mc
        .feasible
        .iter()
        .filter(|(_, pf)| !contains(&poly, (pf.p_se, pf.q_se), 1e-3))
        .count();
    let closest = mc
        .feasible
        .iter()
        .map(|(_, pf)| boundary_distance(&poly, (pf.p_se, pf.q_se)))
        .fold(f64::INFINITY, f64::min);
    println!("{outside} samples outside the DistFlow region, closest sample {closest:.4} pu from its boundary");
    Ok(())
}
