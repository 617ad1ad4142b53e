//! Reads a case file (by default the bundled 33-bus feeder with its DGs and
//! capacitors), validates it and round-trips it through native JSON.
//!
//! cargo run --example load_case -- [path/to/case.m|case.json]

use std::path::PathBuf;

use flexdom::caseio::{emit_native, networks_close, parse_native, read_case};

fn main() -> anyhow::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| data.join("case33.json"), PathBuf::from);
    let net = read_case(&path)?;

    let (p, q) = net.total_load();
    println!(
        "{}: {} buses, {} branches, {} generators",
        path.display(),
        net.buses.len(),
        net.branches.len(),
        net.generators.len()
    );
    println!(
        "base {} MVA / {} kV, total load {p:.4} + j{q:.4} pu",
        net.base_mva, net.base_kv
    );
    let caps: Vec<_> = net
        .buses
        .iter()
        .filter(|b| b.cap_q_max > 0.0)
        .map(|b| (b.id, b.cap_q_max))
        .collect();
    println!("capacitors (bus, q_max pu): {caps:?}");
    for g in &net.generators {
        println!(
            "generator at bus {:>2}: p [{:.3}, {:.3}] q [{:.3}, {:.3}] cost {}",
            g.bus, g.p_min, g.p_max, g.q_min, g.q_max, g.cost
        );
    }

    let violations = net.validate();
    if violations.is_empty() {
        println!("validation: ok");
    }
    for v in &violations {
        println!("validation: {v}");
    }

    let topo = net.topology()?;
    println!(
        "radial: breadth-first bus positions start {:?}",
        &topo.order[..6.min(topo.order.len())]
    );

    let json = emit_native(&net);
    let back = parse_native(&json)?;
    println!(
        "native JSON round trip: {} bytes, equal = {}",
        json.len(),
        networks_close(&net, &back, 1e-12)
    );
    Ok(())
}
