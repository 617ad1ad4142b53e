//! A small feeder assembled in code: five buses, one DG, one capacitor.
//! Sweeps its region with LinDistFlow and DistFlow and writes an SVG.
//!
//! cargo run --release --example custom_feeder -- [out.svg]

use flexdom::cli::render_region_svg;
use flexdom::formulations::FormulationKind;
use flexdom::netmodel::{substation_generator, Branch, Bus, Generator, Network, HOURS_PER_DAY};
use flexdom::region::{assemble_polygon, compare};
use flexdom::sweep::{sweep_boundary, SweepConfig};

fn feeder() -> Network {
    let mut buses = vec![Bus::substation(1)];
    for (id, p, q) in [
        (2, 0.10, 0.06),
        (3, 0.09, 0.04),
        (4, 0.12, 0.08),
        (5, 0.06, 0.03),
    ] {
        buses.push(Bus {
            v_min: 0.95,
            v_max: 1.05,
            ..Bus::pq(id, p, q)
        });
    }
    buses[3].cap_q_max = 0.05;
    Network {
        buses,
        branches: vec![
            Branch::new(1, 2, 0.02, 0.01, 1.0),
            Branch::new(2, 3, 0.05, 0.025, 1.0),
            Branch::new(3, 4, 0.04, 0.03, 1.0),
            Branch::new(2, 5, 0.06, 0.04, 0.5),
        ],
        generators: vec![
            substation_generator(1, 50.0),
            Generator {
                bus: 4,
                p_min: 0.0,
                p_max: 0.2,
                q_min: -0.1,
                q_max: 0.1,
                cost: 20.0,
            },
        ],
        base_mva: 10.0,
        base_kv: 12.66,
        substation_cost: 50.0,
        load_profile: vec![1.0; HOURS_PER_DAY],
    }
}

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "custom_feeder.svg".into());
    let net = feeder();
    for v in net.validate() {
        println!("validation: {v}");
    }

    let lin = sweep_boundary(
        &net,
        &SweepConfig::new(FormulationKind::LinDistFlow).with_points(60),
    )?;
    let df = sweep_boundary(
        &net,
        &SweepConfig::new(FormulationKind::DistFlow).with_points(60),
    )?;
    let m = compare(
        &assemble_polygon(&lin.points)?,
        &assemble_polygon(&df.points)?,
    );
    println!("LinDistFlow area {:.5} pu^2, Hausdorff to DistFlow {:.2e} pu, symmetric difference {:.2e} pu^2", m.area, m.hausdorff_vs_ref, m.sym_diff_area_vs_ref);

    let svg = render_region_svg(
        "five-bus feeder",
        &[
            (FormulationKind::LinDistFlow, &lin),
            (FormulationKind::DistFlow, &df),
        ],
    );
    std::fs::write(&out, svg)?;
    println!("wrote {out}");
    Ok(())
}
