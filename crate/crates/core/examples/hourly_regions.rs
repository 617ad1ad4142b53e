//! Regions of four consecutive hours, showing how the load profile moves
//! the flexibility region.
//!
//! cargo run --release --example hourly_regions

use flexdom::caseio::case33;
use flexdom::formulations::FormulationKind;
use flexdom::region::{assemble_polygon, polygon_area};
use flexdom::sweep::{sweep_hours, SweepConfig};

fn main() -> anyhow::Result<()> {
    let net = case33();
    let config = SweepConfig::new(FormulationKind::LinDistFlow).with_points(100);
    println!(
        "{:>4} {:>7} {:>10} {:>10} {:>10} {:>10}",
        "hour", "scale", "area", "q_min", "q_max", "max p"
    );
    for (hour, result) in sweep_hours(&net, &config, &[12, 13, 14, 15]) {
        let b = result?;
        let poly = assemble_polygon(&b.points)?;
        println!(
            "{hour:>4} {:>7.3} {:>10.6} {:>10.5} {:>10.5} {:>10.5}",
            net.load_profile[hour - 1],
            polygon_area(&poly),
            b.q_min,
            b.q_max,
            poly.max_import_p()
        );
    }
    Ok(())
}
