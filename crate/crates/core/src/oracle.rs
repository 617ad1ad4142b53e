//! Independent validation: backward-forward sweep power flow on radial
//! feeders and Monte Carlo sampling of feasible operating points.
//!
//! Nothing here touches the optimisation models; the power flow works
//! directly on [`Network`] data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::{Network, NetworkError, Topology};

pub const PF_TOL: f64 = 1e-12;
pub const PF_MAX_ITER: usize = 100;
/// Slack allowed when checking operating limits.
pub const LIMIT_TOL: f64 = 1e-9;

/// Operating point of one distributed generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgSetpoint {
    /// Position in `Network::generators`.
    pub generator: usize,
    pub p: f64,
    pub q: f64,
}

/// Injection of one capacitor bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapSetpoint {
    pub bus: usize,
    pub q: f64,
}

/// Values of every controllable resource; the substation is not included.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ControlSetting {
    pub dg: Vec<DgSetpoint>,
    pub capacitors: Vec<CapSetpoint>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("generator {0} is not a distributed generator of the network")]
    UnknownGenerator(usize),
    #[error("bus {0} has no capacitor")]
    UnknownCapacitor(usize),
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

impl ControlSetting {
    /// Every resource at zero output.
    pub fn zero(net: &Network) -> Self {
        let se = net.substation_generator();
        ControlSetting {
            dg: (0..net.generators.len())
                .filter(|&g| Some(g) != se)
                .map(|generator| DgSetpoint {
                    generator,
                    p: 0.0,
                    q: 0.0,
                })
                .collect(),
            capacitors: net
                .buses
                .iter()
                .filter(|b| b.cap_q_max > 0.0)
                .map(|b| CapSetpoint { bus: b.id, q: 0.0 })
                .collect(),
        }
    }

    /// Checks every setpoint against the resource limits.
    pub fn check(&self, net: &Network) -> Result<(), ControlError> {
        let se = net.substation_generator();
        for d in &self.dg {
            let g = net
                .generators
                .get(d.generator)
                .filter(|_| Some(d.generator) != se)
                .ok_or(ControlError::UnknownGenerator(d.generator))?;
            in_range(
                &format!("p of generator {}", d.generator),
                d.p,
                g.p_min,
                g.p_max,
            )?;
            in_range(
                &format!("q of generator {}", d.generator),
                d.q,
                g.q_min,
                g.q_max,
            )?;
        }
        for c in &self.capacitors {
            let bus = net
                .buses
                .iter()
                .find(|b| b.id == c.bus && b.cap_q_max > 0.0)
                .ok_or(ControlError::UnknownCapacitor(c.bus))?;
            in_range(
                &format!("capacitor at bus {}", c.bus),
                c.q,
                0.0,
                bus.cap_q_max,
            )?;
        }
        Ok(())
    }
}

fn in_range(what: &str, value: f64, lo: f64, hi: f64) -> Result<(), ControlError> {
    if value >= lo - LIMIT_TOL && value <= hi + LIMIT_TOL {
        Ok(())
    } else {
        Err(ControlError::OutOfRange {
            what: what.to_string(),
            value,
            lo,
            hi,
        })
    }
}

/// Power-flow state; bus vectors follow `Network::buses`, branch vectors
/// follow `Network::branches` with flows measured at the parent end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfSolution {
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Squared current magnitude.
    pub l: Vec<f64>,
    pub p_se: f64,
    pub q_se: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Net active and reactive withdrawal per bus position.
fn withdrawals(net: &Network, controls: &ControlSetting) -> (Vec<f64>, Vec<f64>) {
    let index = net.bus_index();
    let mut p: Vec<f64> = net.buses.iter().map(|b| b.p_load).collect();
    let mut q: Vec<f64> = net.buses.iter().map(|b| b.q_load).collect();
    for d in &controls.dg {
        let k = index[&net.generators[d.generator].bus];
        p[k] -= d.p;
        q[k] -= d.q;
    }
    for c in &controls.capacitors {
        q[index[&c.bus]] -= c.q;
    }
    (p, q)
}

/// Backward-forward sweep with constant-power loads and the substation held
/// at 1 pu. Iterates until the largest voltage change is below [`PF_TOL`].
pub fn bfs_power_flow(net: &Network, controls: &ControlSetting) -> Result<PfSolution, OracleError> {
    controls.check(net)?;
    let net = net.orient_radial()?;
    let topo = net.topology()?;
    let (pw, qw) = withdrawals(&net, controls);
    let nb = net.buses.len();
    let nl = net.branches.len();
    let mut v2 = vec![1.0; nb];
    let mut l = vec![0.0; nl];
    let (mut p, mut q) = (vec![0.0; nl], vec![0.0; nl]);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < PF_MAX_ITER {
        iterations += 1;
        backward(&net, &topo, &pw, &qw, &l, &mut p, &mut q);
        let change = forward(&net, &topo, &p, &q, &l, &mut v2);
        if !change.is_finite() {
            break;
        }
        for (k, &(from, _)) in topo.ends.iter().enumerate() {
            l[k] = (p[k] * p[k] + q[k] * q[k]) / v2[from];
        }
        if change < PF_TOL {
            converged = true;
            break;
        }
    }
    // flows consistent with the final currents
    backward(&net, &topo, &pw, &qw, &l, &mut p, &mut q);
    let root = topo.root;
    let children = &topo.child_branches[root];
    Ok(PfSolution {
        v: v2.iter().map(|w| w.max(0.0).sqrt()).collect(),
        p_se: pw[root] + children.iter().map(|&k| p[k]).sum::<f64>(),
        q_se: qw[root] + children.iter().map(|&k| q[k]).sum::<f64>(),
        p,
        q,
        l,
        converged,
        iterations,
    })
}

fn backward(
    net: &Network,
    topo: &Topology,
    pw: &[f64],
    qw: &[f64],
    l: &[f64],
    p: &mut [f64],
    q: &mut [f64],
) {
    for &bus in topo.order.iter().rev() {
        let Some(k) = topo.parent_branch[bus] else {
            continue;
        };
        let br = &net.branches[k];
        let (mut ps, mut qs) = (pw[bus], qw[bus]);
        for &c in &topo.child_branches[bus] {
            ps += p[c];
            qs += q[c];
        }
        p[k] = ps + br.r * l[k];
        q[k] = qs + br.x * l[k];
    }
}

/// Updates squared voltages; returns the largest magnitude change.
fn forward(net: &Network, topo: &Topology, p: &[f64], q: &[f64], l: &[f64], v2: &mut [f64]) -> f64 {
    let mut change: f64 = 0.0;
    for &bus in &topo.order {
        let Some(k) = topo.parent_branch[bus] else {
            continue;
        };
        let br = &net.branches[k];
        let from = topo.ends[k].0;
        let w = v2[from] - 2.0 * (br.r * p[k] + br.x * q[k]) + (br.r * br.r + br.x * br.x) * l[k];
        if w <= 0.0 {
            return f64::NAN;
        }
        change = change.max((w.sqrt() - v2[bus].sqrt()).abs());
        v2[bus] = w;
    }
    change
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LimitViolation {
    Voltage {
        bus: usize,
        v: f64,
        v_min: f64,
        v_max: f64,
    },
    LineCapacity {
        from: usize,
        to: usize,
        s: f64,
        s_max: f64,
    },
}

/// Voltage bounds at every bus and apparent-power capacity at the sending
/// end of every branch. The network must match the one the solution was
/// computed on.
pub fn is_technically_feasible(sol: &PfSolution, net: &Network) -> (bool, Vec<LimitViolation>) {
    let mut out = Vec::new();
    for (bus, &v) in net.buses.iter().zip(&sol.v) {
        if v < bus.v_min - LIMIT_TOL || v > bus.v_max + LIMIT_TOL {
            out.push(LimitViolation::Voltage {
                bus: bus.id,
                v,
                v_min: bus.v_min,
                v_max: bus.v_max,
            });
        }
    }
    for (k, br) in net.branches.iter().enumerate() {
        let s = sol.p[k].hypot(sol.q[k]);
        if s > br.s_max + LIMIT_TOL {
            out.push(LimitViolation::LineCapacity {
                from: br.from_bus,
                to: br.to_bus,
                s,
                s_max: br.s_max,
            });
        }
    }
    (out.is_empty(), out)
}

/// Feasible samples of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct McSamples {
    pub drawn: usize,
    pub converged: usize,
    pub feasible: Vec<(ControlSetting, PfSolution)>,
}

impl McSamples {
    pub fn acceptance_rate(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            self.feasible.len() as f64 / self.drawn as f64
        }
    }
}

/// Uniform random control setting; sample `index` uses its own stream of
/// the seeded generator, so results do not depend on evaluation order.
pub fn random_controls(net: &Network, seed: u64, index: u64) -> ControlSetting {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut c = ControlSetting::zero(net);
    let draw =
        |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    for d in &mut c.dg {
        let g = &net.generators[d.generator];
        d.p = draw(&mut rng, g.p_min, g.p_max);
        d.q = draw(&mut rng, g.q_min, g.q_max);
    }
    for cap in &mut c.capacitors {
        let max = net
            .buses
            .iter()
            .find(|b| b.id == cap.bus)
            .map_or(0.0, |b| b.cap_q_max);
        cap.q = draw(&mut rng, 0.0, max);
    }
    c
}

/// Draws `n` control settings uniformly from their boxes and keeps those
/// whose power flow converges within limits.
pub fn mc_sample(net: &Network, n: usize, seed: u64) -> Result<McSamples, OracleError> {
    let oriented = net.orient_radial()?;
    oriented.topology()?;
    let runs: Vec<(ControlSetting, PfSolution)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let c = random_controls(net, seed, i);
            let sol = bfs_power_flow(net, &c).expect("controls drawn within limits");
            (c, sol)
        })
        .collect();
    let converged = runs.iter().filter(|(_, s)| s.converged).count();
    let feasible = runs
        .into_iter()
        .filter(|(_, s)| s.converged && is_technically_feasible(s, &oriented).0)
        .collect();
    Ok(McSamples {
        drawn: n,
        converged,
        feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::case33;
    use crate::netmodel::{tinyfeeder, two_bus, Generator};

    /// Substation injection of a lossy two-bus feeder by fixed-point iteration.
    fn scalar_two_bus(r: f64, x: f64, pl: f64, ql: f64) -> (f64, f64, f64) {
        let (mut p, mut q) = (pl, ql);
        for _ in 0..200 {
            let l = p * p + q * q;
            (p, q) = (pl + r * l, ql + x * l);
        }
        let l = p * p + q * q;
        let v2 = 1.0 - 2.0 * (r * p + x * q) + (r * r + x * x) * l;
        (p, q, v2.sqrt())
    }

    #[test]
    fn zero_impedance_one_iteration() {
        let net = two_bus(0.0, 0.0, 1.0, 0.5);
        let s = bfs_power_flow(&net, &ControlSetting::zero(&net)).unwrap();
        assert!(s.converged);
        assert_eq!(s.iterations, 1);
        assert_eq!((s.p_se, s.q_se), (1.0, 0.5));
    }

    #[test]
    fn tinyfeeder_matches_scalar_derivation() {
        let net = tinyfeeder();
        let s = bfs_power_flow(&net, &ControlSetting::zero(&net)).unwrap();
        let (p, q, v) = scalar_two_bus(0.01, 0.02, 1.0, 0.5);
        assert!(s.converged);
        assert!(
            (s.p_se - p).abs() < 1e-10 && (s.q_se - q).abs() < 1e-10 && (s.v[1] - v).abs() < 1e-10
        );
    }

    #[test]
    fn radial_voltages_decrease_without_injections() {
        let net = case33();
        let s = bfs_power_flow(&net, &ControlSetting::zero(&net)).unwrap();
        assert!(s.converged);
        let topo = net.orient_radial().unwrap().topology().unwrap();
        for &(from, to) in &topo.ends {
            assert!(
                s.v[to] < s.v[from],
                "bus {} above its parent",
                net.buses[to].id
            );
        }
    }

    #[test]
    fn energy_balance() {
        let net = case33();
        for i in 0..20 {
            let c = random_controls(&net, 9, i);
            let s = bfs_power_flow(&net, &c).unwrap();
            assert!(s.converged);
            let (pl, _) = net.total_load();
            let dg: f64 = c.dg.iter().map(|d| d.p).sum();
            let losses: f64 = net.branches.iter().zip(&s.l).map(|(b, l)| b.r * l).sum();
            assert!((s.p_se - (pl - dg + losses)).abs() < 1e-10, "sample {i}");
        }
    }

    #[test]
    fn feasibility_checks() {
        let net = tinyfeeder();
        let s = bfs_power_flow(&net, &ControlSetting::zero(&net)).unwrap();
        assert!(is_technically_feasible(&s, &net).0);

        let heavy = two_bus(0.01, 0.02, 20.0, 10.0);
        let s = bfs_power_flow(&heavy, &ControlSetting::zero(&heavy)).unwrap();
        let (ok, violations) = is_technically_feasible(&s, &heavy);
        assert!(!ok);
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, LimitViolation::Voltage { bus: 2, .. })),
            "{violations:?}"
        );

        let empty = two_bus(0.01, 0.02, 0.0, 0.0);
        let s = bfs_power_flow(&empty, &ControlSetting::zero(&empty)).unwrap();
        assert_eq!(is_technically_feasible(&s, &empty), (true, vec![]));
    }

    #[test]
    fn no_resources_one_outcome() {
        let net = tinyfeeder();
        let mc = mc_sample(&net, 50, 1).unwrap();
        assert_eq!(mc.feasible.len(), 50);
        assert!(mc
            .feasible
            .iter()
            .all(|(_, s)| (s.p_se, s.q_se) == (mc.feasible[0].1.p_se, mc.feasible[0].1.q_se)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let net = case33();
        let a = mc_sample(&net, 64, 42).unwrap();
        let b = mc_sample(&net, 64, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(random_controls(&net, 42, 0), random_controls(&net, 43, 0));
    }

    #[test]
    fn out_of_range_controls_rejected() {
        let mut net = tinyfeeder();
        net.generators.push(Generator {
            bus: 2,
            p_min: 0.0,
            p_max: 1.0,
            q_min: 0.0,
            q_max: 0.0,
            cost: 1.0,
        });
        let mut c = ControlSetting::zero(&net);
        c.dg[0].p = 2.0;
        assert!(matches!(
            bfs_power_flow(&net, &c),
            Err(OracleError::Control(ControlError::OutOfRange { .. }))
        ));
        c.dg[0].generator = 0;
        assert!(matches!(
            c.check(&net),
            Err(ControlError::UnknownGenerator(0))
        ));
    }
}
