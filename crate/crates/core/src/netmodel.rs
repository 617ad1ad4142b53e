//! Radial distribution network data model.
//!
//! All electrical quantities are stored per-unit on `base_mva`. Bus ids are
//! the external (1-based) numbering used by case files; internal code works
//! with positions in `Network::buses` and resolves ids through
//! [`Network::bus_index`].

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default symmetric exchange limit of the implicit substation generator, pu.
pub const DEFAULT_SUBSTATION_LIMIT_PU: f64 = 10.0;
pub const DEFAULT_BASE_MVA: f64 = 10.0;
pub const DEFAULT_BASE_KV: f64 = 12.66;
pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Substation,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Capacitor bank capacity, zero when the bus has none.
    pub cap_q_max: f64,
}

impl Bus {
    pub fn pq(id: usize, p_load: f64, q_load: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Pq,
            p_load,
            q_load,
            v_min: 0.9,
            v_max: 1.1,
            cap_q_max: 0.0,
        }
    }

    pub fn substation(id: usize) -> Self {
        Bus {
            kind: BusKind::Substation,
            ..Bus::pq(id, 0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_shunt: f64,
    pub s_max: f64,
    /// Directed active-flow limit used by the linearised model.
    pub p_max: f64,
    /// Directed reactive-flow limit used by the linearised model.
    pub q_max: f64,
}

impl Branch {
    pub fn new(from_bus: usize, to_bus: usize, r: f64, x: f64, s_max: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_shunt: 0.0,
            s_max,
            p_max: s_max,
            q_max: s_max,
        }
    }

    pub fn is_zero_impedance(&self) -> bool {
        self.r == 0.0 && self.x == 0.0
    }

    /// Series admittance magnitude and angle, `1 / (r + jx)` in polar form.
    pub fn series_admittance(&self) -> (f64, f64) {
        let z2 = self.r * self.r + self.x * self.x;
        let g = self.r / z2;
        let b = -self.x / z2;
        (g.hypot(b), b.atan2(g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Linear cost, currency per pu·h.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub base_mva: f64,
    pub base_kv: f64,
    /// Exchange price at the substation, currency per pu·h.
    pub substation_cost: f64,
    pub load_profile: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    NoSubstation,
    MultipleSubstations,
    DuplicateBusId,
    UnknownBus,
    SelfLoop,
    NotRadial,
    Disconnected,
    VoltageLimits,
    NegativeLoad,
    NegativeCapacitor,
    NegativeImpedance,
    ZeroImpedance,
    FlowLimit,
    GeneratorLimits,
    SubstationGenerator,
    LoadProfile,
    Base,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("graph not radial: {0}")]
    NotRadial(String),
    #[error("no substation bus")]
    NoSubstation,
    #[error("hour {0} outside 1..={max}", max = HOURS_PER_DAY)]
    HourOutOfRange(usize),
    #[error("load profile has {0} entries, expected {HOURS_PER_DAY}")]
    ProfileLength(usize),
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// Parent/child structure of an oriented radial network, in bus positions.
#[derive(Debug, Clone)]
pub struct Topology {
    pub root: usize,
    /// Breadth-first bus order starting at the root.
    pub order: Vec<usize>,
    /// Index of the branch feeding each bus, `None` for the root.
    pub parent_branch: Vec<Option<usize>>,
    /// Branches leaving each bus towards its children.
    pub child_branches: Vec<Vec<usize>>,
    /// `(from, to)` bus positions for each branch.
    pub ends: Vec<(usize, usize)>,
}

impl Network {
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, k))
            .collect()
    }

    pub fn substation_position(&self) -> Option<usize> {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Substation)
    }

    pub fn substation_id(&self) -> Option<usize> {
        self.substation_position().map(|k| self.buses[k].id)
    }

    /// Position in `generators` of the unit representing the TSO exchange.
    pub fn substation_generator(&self) -> Option<usize> {
        let id = self.substation_id()?;
        self.generators.iter().position(|g| g.bus == id)
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    /// Checks every structural invariant and returns all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind, message: String| out.push(Violation { kind, message });

        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            push(
                ViolationKind::Base,
                format!("base_mva {} not positive", self.base_mva),
            );
        }
        let n_sub = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Substation)
            .count();
        match n_sub {
            0 => push(ViolationKind::NoSubstation, "no substation bus".into()),
            1 => {}
            k => push(
                ViolationKind::MultipleSubstations,
                format!("multiple substations ({k})"),
            ),
        }

        let mut index = HashMap::new();
        for (k, b) in self.buses.iter().enumerate() {
            if index.insert(b.id, k).is_some() {
                push(
                    ViolationKind::DuplicateBusId,
                    format!("duplicate bus id {}", b.id),
                );
            }
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                push(
                    ViolationKind::VoltageLimits,
                    format!(
                        "bus {}: voltage limits [{}, {}] invalid",
                        b.id, b.v_min, b.v_max
                    ),
                );
            }
            if b.p_load < 0.0 || b.q_load < 0.0 {
                push(
                    ViolationKind::NegativeLoad,
                    format!("bus {}: negative load", b.id),
                );
            }
            if b.cap_q_max < 0.0 {
                push(
                    ViolationKind::NegativeCapacitor,
                    format!("bus {}: negative capacitor capacity", b.id),
                );
            }
        }

        let mut edges_ok = true;
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !index.contains_key(&end) {
                    edges_ok = false;
                    push(
                        ViolationKind::UnknownBus,
                        format!("branch {k}: unknown bus {end}"),
                    );
                }
            }
            if br.from_bus == br.to_bus {
                edges_ok = false;
                push(
                    ViolationKind::SelfLoop,
                    format!("branch {k}: self loop at bus {}", br.from_bus),
                );
            }
            if br.r < 0.0 || br.x < 0.0 {
                push(
                    ViolationKind::NegativeImpedance,
                    format!(
                        "branch {k} ({}-{}): negative impedance",
                        br.from_bus, br.to_bus
                    ),
                );
            }
            if br.is_zero_impedance() && br.b_shunt <= 0.0 {
                push(
                    ViolationKind::ZeroImpedance,
                    format!(
                        "branch {k} ({}-{}): zero impedance without shunt",
                        br.from_bus, br.to_bus
                    ),
                );
            }
            if !(br.s_max > 0.0 && br.p_max > 0.0 && br.q_max > 0.0) {
                push(
                    ViolationKind::FlowLimit,
                    format!(
                        "branch {k} ({}-{}): flow limits must be positive",
                        br.from_bus, br.to_bus
                    ),
                );
            }
        }

        for (k, g) in self.generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                push(
                    ViolationKind::UnknownBus,
                    format!("generator {k}: unknown bus {}", g.bus),
                );
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                push(
                    ViolationKind::GeneratorLimits,
                    format!("generator {k} at bus {}: inverted limits", g.bus),
                );
            }
        }
        if let Some(sid) = self.substation_id() {
            let n = self.generators.iter().filter(|g| g.bus == sid).count();
            if n != 1 {
                push(
                    ViolationKind::SubstationGenerator,
                    format!("substation bus {sid} must carry exactly one generator, found {n}"),
                );
            }
        }

        if self.load_profile.len() != HOURS_PER_DAY
            || self
                .load_profile
                .iter()
                .any(|m| !(*m >= 0.0 && m.is_finite()))
        {
            push(
                ViolationKind::LoadProfile,
                format!(
                    "load profile must hold {HOURS_PER_DAY} non-negative multipliers, got {}",
                    self.load_profile.len()
                ),
            );
        }

        if edges_ok && !self.buses.is_empty() {
            if self.branches.len() + 1 != self.buses.len() {
                push(
                    ViolationKind::NotRadial,
                    format!(
                        "graph not radial: {} branches for {} buses",
                        self.branches.len(),
                        self.buses.len()
                    ),
                );
            } else if reachable_from(self, &index, 0) != self.buses.len() {
                // n-1 edges and connected is a tree; disconnected with n-1 edges has a cycle
                push(
                    ViolationKind::NotRadial,
                    "graph not radial: contains a cycle".into(),
                );
                push(ViolationKind::Disconnected, "graph not connected".into());
            }
        }
        out
    }

    /// Returns a copy with every branch oriented parent to child, in
    /// breadth-first order from the substation.
    pub fn orient_radial(&self) -> Result<Network, NetworkError> {
        let index = self.bus_index();
        let root = self
            .substation_position()
            .ok_or(NetworkError::NoSubstation)?;
        if self.branches.len() + 1 != self.buses.len() {
            return Err(NetworkError::NotRadial(format!(
                "{} branches for {} buses",
                self.branches.len(),
                self.buses.len()
            )));
        }
        let adj = adjacency(self, &index)?;
        let mut out = self.clone();
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut visited = 0;
        while let Some(u) = queue.pop_front() {
            visited += 1;
            for &(v, k) in &adj[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                let br = &mut out.branches[k];
                if index[&br.from_bus] != u {
                    std::mem::swap(&mut br.from_bus, &mut br.to_bus);
                }
                queue.push_back(v);
            }
        }
        if visited != self.buses.len() {
            return Err(NetworkError::NotRadial("graph contains a cycle".into()));
        }
        Ok(out)
    }

    /// Parent/child structure; the network must already be oriented.
    pub fn topology(&self) -> Result<Topology, NetworkError> {
        let index = self.bus_index();
        let root = self
            .substation_position()
            .ok_or(NetworkError::NoSubstation)?;
        let n = self.buses.len();
        let mut parent_branch = vec![None; n];
        let mut child_branches = vec![Vec::new(); n];
        let mut ends = Vec::with_capacity(self.branches.len());
        for (k, br) in self.branches.iter().enumerate() {
            let (f, t) = match (index.get(&br.from_bus), index.get(&br.to_bus)) {
                (Some(&f), Some(&t)) => (f, t),
                _ => return Err(NetworkError::Invalid(format!("branch {k}: unknown bus"))),
            };
            if t == root || parent_branch[t].is_some() {
                return Err(NetworkError::NotRadial(format!(
                    "bus {} has more than one parent (orient the network first)",
                    br.to_bus
                )));
            }
            parent_branch[t] = Some(k);
            child_branches[f].push(k);
            ends.push((f, t));
        }
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &k in &child_branches[u] {
                queue.push_back(ends[k].1);
            }
        }
        if order.len() != n {
            return Err(NetworkError::NotRadial(
                "not every bus is reachable from the substation".into(),
            ));
        }
        Ok(Topology {
            root,
            order,
            parent_branch,
            child_branches,
            ends,
        })
    }

    /// Multiplies every load by `load_profile[hour - 1]`.
    pub fn scale_loads(&self, hour: usize) -> Result<Network, NetworkError> {
        if !(1..=HOURS_PER_DAY).contains(&hour) {
            return Err(NetworkError::HourOutOfRange(hour));
        }
        if self.load_profile.len() != HOURS_PER_DAY {
            return Err(NetworkError::ProfileLength(self.load_profile.len()));
        }
        let m = self.load_profile[hour - 1];
        let mut out = self.clone();
        for b in &mut out.buses {
            b.p_load *= m;
            b.q_load *= m;
        }
        Ok(out)
    }

    pub fn per_unit(&self) -> PerUnit {
        PerUnit {
            base_mva: self.base_mva,
            base_kv: self.base_kv,
        }
    }
}

fn adjacency(
    net: &Network,
    index: &HashMap<usize, usize>,
) -> Result<Vec<Vec<(usize, usize)>>, NetworkError> {
    let mut adj = vec![Vec::new(); net.buses.len()];
    for (k, br) in net.branches.iter().enumerate() {
        let (f, t) = match (index.get(&br.from_bus), index.get(&br.to_bus)) {
            (Some(&f), Some(&t)) => (f, t),
            _ => return Err(NetworkError::Invalid(format!("branch {k}: unknown bus"))),
        };
        adj[f].push((t, k));
        adj[t].push((f, k));
    }
    Ok(adj)
}

fn reachable_from(net: &Network, index: &HashMap<usize, usize>, start: usize) -> usize {
    let Ok(adj) = adjacency(net, index) else {
        return 0;
    };
    let mut seen = vec![false; net.buses.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(u) = stack.pop() {
        count += 1;
        for &(v, _) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    count
}

/// Per-unit system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnit {
    pub base_mva: f64,
    pub base_kv: f64,
}

impl PerUnit {
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    pub fn power_to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }

    pub fn ohm_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base()
    }

    pub fn ohm_from_pu(&self, pu: f64) -> f64 {
        pu * self.z_base()
    }

    /// Cost per MWh to cost per pu·h.
    pub fn cost_to_pu(&self, per_mwh: f64) -> f64 {
        per_mwh * self.base_mva
    }

    pub fn cost_from_pu(&self, per_pu: f64) -> f64 {
        per_pu / self.base_mva
    }
}

/// Two-bus feeder used throughout the tests: r = 0.01, x = 0.02 pu and a
/// (1.0, 0.5) pu load at bus 2.
pub fn tinyfeeder() -> Network {
    two_bus(0.01, 0.02, 1.0, 0.5)
}

/// Substation bus 1 feeding a single load bus 2 through one branch.
pub fn two_bus(r: f64, x: f64, p_load: f64, q_load: f64) -> Network {
    Network {
        buses: vec![Bus::substation(1), Bus::pq(2, p_load, q_load)],
        branches: vec![Branch::new(1, 2, r, x, 10.0)],
        generators: vec![substation_generator(1, 50.0)],
        base_mva: DEFAULT_BASE_MVA,
        base_kv: DEFAULT_BASE_KV,
        substation_cost: 50.0,
        load_profile: vec![1.0; HOURS_PER_DAY],
    }
}

pub fn substation_generator(bus: usize, cost: f64) -> Generator {
    Generator {
        bus,
        p_min: -DEFAULT_SUBSTATION_LIMIT_PU,
        p_max: DEFAULT_SUBSTATION_LIMIT_PU,
        q_min: -DEFAULT_SUBSTATION_LIMIT_PU,
        q_max: DEFAULT_SUBSTATION_LIMIT_PU,
        cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn star(n: usize) -> Network {
        let mut net = two_bus(0.01, 0.01, 0.1, 0.05);
        net.buses.truncate(1);
        net.branches.clear();
        for k in 2..=n {
            net.buses.push(Bus::pq(k, 0.1, 0.05));
            // store some branches reversed
            if k % 2 == 0 {
                net.branches.push(Branch::new(k, 1, 0.01, 0.01, 1.0));
            } else {
                net.branches.push(Branch::new(1, k, 0.01, 0.01, 1.0));
            }
        }
        net
    }

    fn chain(n: usize) -> Network {
        let mut net = star(1);
        for k in 2..=n {
            net.buses.push(Bus::pq(k, 0.1, 0.05));
            net.branches.push(Branch::new(k - 1, k, 0.01, 0.02, 1.0));
        }
        net
    }

    #[test]
    fn tinyfeeder_is_valid() {
        assert!(tinyfeeder().validate().is_empty());
    }

    #[test]
    fn cycle_is_not_radial() {
        let mut net = chain(5);
        net.branches.push(Branch::new(5, 1, 0.01, 0.01, 1.0));
        let v = net.validate();
        assert!(
            v.iter().any(|v| v.kind == ViolationKind::NotRadial),
            "{v:?}"
        );
        assert!(v.iter().any(|v| v.message.contains("graph not radial")));
        assert!(net.orient_radial().is_err());

        // right edge count but a cycle plus an isolated bus
        let mut net = chain(5);
        net.branches[3] = Branch::new(3, 1, 0.01, 0.01, 1.0);
        let v = net.validate();
        assert!(
            v.iter().any(|v| v.kind == ViolationKind::NotRadial),
            "{v:?}"
        );
        assert!(net.orient_radial().is_err());
    }

    #[test]
    fn multiple_substations_reported() {
        let mut net = chain(3);
        net.buses[2].kind = BusKind::Substation;
        let v = net.validate();
        assert!(v.iter().any(|v| v.message.contains("multiple substations")));
    }

    #[test]
    fn reports_all_violations() {
        let mut net = chain(4);
        net.buses[1].v_min = 1.2;
        net.buses[2].p_load = -1.0;
        net.branches[0].r = 0.0;
        net.branches[0].x = 0.0;
        net.generators[0].p_min = 20.0;
        let kinds: Vec<_> = net.validate().into_iter().map(|v| v.kind).collect();
        for k in [
            ViolationKind::VoltageLimits,
            ViolationKind::NegativeLoad,
            ViolationKind::ZeroImpedance,
            ViolationKind::GeneratorLimits,
        ] {
            assert!(kinds.contains(&k), "{k:?} missing from {kinds:?}");
        }
    }

    #[test]
    fn orientation_flips_reversed_branch() {
        let mut net = chain(5);
        net.branches[3] = Branch::new(5, 4, 0.01, 0.02, 1.0);
        let o = net.orient_radial().unwrap();
        assert_eq!((o.branches[3].from_bus, o.branches[3].to_bus), (4, 5));
        // everything else untouched
        assert_eq!(o.branches[..3], net.branches[..3]);
    }

    #[test]
    fn orientation_is_idempotent() {
        let o = chain(6).orient_radial().unwrap();
        assert_eq!(o.orient_radial().unwrap(), o);
    }

    #[test]
    fn star_points_outward() {
        let o = star(7).orient_radial().unwrap();
        assert!(o.branches.iter().all(|b| b.from_bus == 1));
        let topo = o.topology().unwrap();
        assert_eq!(topo.child_branches[topo.root].len(), 6);
    }

    #[test]
    fn topology_requires_orientation() {
        let mut net = chain(3);
        net.branches[0] = Branch::new(2, 1, 0.01, 0.02, 1.0);
        assert!(net.topology().is_err());
        assert!(net.orient_radial().unwrap().topology().is_ok());
    }

    #[test]
    fn scale_loads_cases() {
        let mut net = two_bus(0.01, 0.02, 1.0, 0.5);
        net.load_profile[0] = 1.0;
        net.load_profile[1] = 0.0;
        net.load_profile[2] = 0.5;
        assert_eq!(net.scale_loads(1).unwrap(), net);
        let zero = net.scale_loads(2).unwrap();
        assert!(zero
            .buses
            .iter()
            .all(|b| b.p_load == 0.0 && b.q_load == 0.0));
        let half = net.scale_loads(3).unwrap();
        assert_eq!((half.buses[1].p_load, half.buses[1].q_load), (0.5, 0.25));
        assert_eq!(half.branches, net.branches);
        assert_eq!(half.generators, net.generators);
        assert!(matches!(
            net.scale_loads(0),
            Err(NetworkError::HourOutOfRange(0))
        ));
        assert!(net.scale_loads(25).is_err());
    }

    #[test]
    fn series_admittance_polar() {
        let br = Branch::new(1, 2, 3.0, 4.0, 1.0);
        let (y, th) = br.series_admittance();
        assert!((y - 0.2).abs() < 1e-15);
        assert!((th - (-4.0f64).atan2(3.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn orientation_preserves_validity(n in 2usize..12, seed in any::<u64>()) {
            // random tree: bus k attaches to a pseudo-random earlier bus
            let mut net = chain(1);
            let mut s = seed;
            for k in 2..=n {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let parent = 1 + (s >> 33) as usize % (k - 1);
                net.buses.push(Bus::pq(k, 0.1, 0.0));
                if s & 1 == 0 {
                    net.branches.push(Branch::new(parent, k, 0.01, 0.01, 1.0));
                } else {
                    net.branches.push(Branch::new(k, parent, 0.01, 0.01, 1.0));
                }
            }
            let before = net.validate();
            let o = net.orient_radial().unwrap();
            prop_assert_eq!(o.validate(), before);
            let topo = o.topology().unwrap();
            for (k, p) in topo.parent_branch.iter().enumerate() {
                prop_assert_eq!(p.is_none(), k == topo.root);
            }
        }

        #[test]
        fn per_unit_round_trip(v in -1e4f64..1e4, base in 0.1f64..1e3, kv in 0.4f64..400.0) {
            let pu = PerUnit { base_mva: base, base_kv: kv };
            let back = pu.power_to_pu(pu.power_from_pu(v));
            prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1e-300));
            let back = pu.ohm_to_pu(pu.ohm_from_pu(v));
            prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }
}
