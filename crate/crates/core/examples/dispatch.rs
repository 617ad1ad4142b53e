//! Least-cost dispatch of the 33-bus feeder at one hour on every formulation.
//!
//! cargo run --release --example dispatch -- [hour]

use flexdom::caseio::case33;
use flexdom::formulations::FormulationKind;
use flexdom::ipm::{solve_dispatch, IpmOptions};

fn main() -> anyhow::Result<()> {
    let hour: usize = std::env::args().nth(1).map_or(Ok(14), |s| s.parse())?;
    let net = case33().scale_loads(hour)?;
    let options = IpmOptions::default();

    println!(
        "hour {hour}, exchange price {} per pu·h",
        net.substation_cost
    );
    println!(
        "{:<14} {:>10} {:>10} {:>10} {:>6} {:>9}",
        "formulation", "cost", "p_se", "q_se", "iters", "time ms"
    );
    for kind in FormulationKind::ALL {
        let d = solve_dispatch(&net, kind, &options)?;
        let (p, q) = d.formulation.exchange(&d.result.x);
        println!(
            "{:<14} {:>10.4} {:>10.5} {:>10.5} {:>6} {:>9.2}  {}",
            kind.label(),
            d.result.objective,
            p,
            q,
            d.result.iterations,
            d.result.wall_time.as_secs_f64() * 1e3,
            d.result.status
        );
        if kind == FormulationKind::AcOpf {
            let controls = d.formulation.control_setting(&d.result.x);
            for s in &controls.dg {
                let g = &d.formulation.network.generators[s.generator];
                println!(
                    "    DG at bus {:>2}: p {:.4} / {:.4}, q {:+.4}",
                    g.bus, s.p, g.p_max, s.q
                );
            }
            for c in &controls.capacitors {
                println!("    capacitor at bus {:>2}: q {:.4}", c.bus, c.q);
            }
        }
    }
    Ok(())
}
