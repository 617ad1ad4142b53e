//! The power-flow oracle and the DistFlow model describe the same physics:
//! an oracle solution mapped into DistFlow variables satisfies every
//! DistFlow constraint and bound.

use flexdom::caseio::case33;
use flexdom::formulations::{build, Formulation, FormulationKind};
use flexdom::netmodel::tinyfeeder;
use flexdom::oracle::{bfs_power_flow, mc_sample, ControlSetting, PfSolution};

fn to_distflow(f: &Formulation, controls: &ControlSetting, pf: &PfSolution) -> Vec<f64> {
    let lay = &f.layout;
    let mut x = f.problem.initial_point();
    for (b, &k) in lay.voltage.iter().enumerate() {
        x[k] = if lay.voltage_squared {
            pf.v[b] * pf.v[b]
        } else {
            pf.v[b]
        };
    }
    let current = lay.current.as_ref().expect("DistFlow has currents");
    for k in 0..f.network.branches.len() {
        x[lay.branch_p[k]] = pf.p[k];
        x[lay.branch_q[k]] = pf.q[k];
        x[current[k]] = pf.l[k];
    }
    for s in &controls.dg {
        x[lay.gen_p[s.generator]] = s.p;
        x[lay.gen_q[s.generator]] = s.q;
    }
    for c in &controls.capacitors {
        let b = f
            .network
            .buses
            .iter()
            .position(|bus| bus.id == c.bus)
            .unwrap();
        x[lay.cap_q[b].unwrap()] = c.q;
    }
    let se = f.network.substation_generator().unwrap();
    x[lay.gen_p[se]] = pf.p_se;
    x[lay.gen_q[se]] = pf.q_se;
    let i = f.problem.interface;
    x[i.p_se] = pf.p_se;
    x[i.q_se] = pf.q_se;
    x
}

#[test]
fn zero_controls_satisfy_distflow() {
    for net in [tinyfeeder(), case33().scale_loads(14).unwrap()] {
        let f = build(&net, FormulationKind::DistFlow).unwrap();
        let controls = ControlSetting::zero(&f.network);
        let pf = bfs_power_flow(&f.network, &controls).unwrap();
        assert!(pf.converged);
        let (v, name) = f.problem.max_violation(&to_distflow(&f, &controls, &pf));
        assert!(v <= 1e-9, "{v:e} at {name}");
    }
}

#[test]
fn feasible_samples_satisfy_distflow() {
    let net = case33().scale_loads(14).unwrap();
    let f = build(&net, FormulationKind::DistFlow).unwrap();
    let mc = mc_sample(&f.network, 300, 11).unwrap();
    assert!(!mc.feasible.is_empty());
    for (controls, pf) in &mc.feasible {
        let (v, name) = f.problem.max_violation(&to_distflow(&f, controls, pf));
        assert!(v <= 1e-9, "{v:e} at {name}");
    }
}
