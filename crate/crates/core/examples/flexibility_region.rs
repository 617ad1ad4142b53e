//! Sweeps the feasible substation exchange of the 33-bus feeder for one
//! formulation and prints the boundary and region metrics.
//!
//! cargo run --release --example flexibility_region -- [acopf|distflow|socp|lindistflow] [points]

use flexdom::caseio::case33;
use flexdom::formulations::FormulationKind;
use flexdom::region::{assemble_polygon, polygon_area};
use flexdom::sweep::{sweep_boundary, SweepConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: FormulationKind = args
        .next()
        .map_or(Ok(FormulationKind::DistFlow), |s| s.parse())
        .map_err(anyhow::Error::msg)?;
    let points: usize = args.next().map_or(Ok(40), |s| s.parse())?;

    let net = case33().scale_loads(14)?;
    let b = sweep_boundary(&net, &SweepConfig::new(kind).with_points(points))?;
    println!(
        "{kind}: q in [{:.5}, {:.5}] pu, {} bands of {:.5} pu",
        b.q_min,
        b.q_max,
        b.bands.len(),
        b.epsilon
    );

    println!(
        "{:>6} {:>5} {:>10} {:>10} {:>6}",
        "side", "band", "p_se", "q_se", "iters"
    );
    for p in &b.points {
        println!(
            "{:>6} {:>5} {:>10.5} {:>10.5} {:>6}  {}",
            p.side, p.band_index, p.p_se, p.q_se, p.iterations, p.status
        );
    }

    let poly = assemble_polygon(&b.points)?;
    println!(
        "area {:.6} pu^2, max import {:.5} pu, max export {:.5} pu, {} failed bands, {:.2} s",
        polygon_area(&poly),
        poly.max_import_p(),
        poly.max_export_p(),
        b.failed().len(),
        b.wall_time.as_secs_f64()
    );
    Ok(())
}
