//! Builders translating a radial [`Network`] into the four single-period
//! OPF problems compared by this crate.
//!
//! | kind          | power flow            | class |
//! |---------------|-----------------------|-------|
//! | AC-OPF        | true representation   | NLP   |
//! | DistFlow      | true representation   | NLP   |
//! | DistFlow-SOCP | relaxation            | SOCP  |
//! | LinDistFlow   | approximation         | LP    |
//!
//! Every constraint name starts with the model-family tags it implements
//! (see [`Family`]), and bounds carry the same tags on their variables, so
//! [`audit`] can show that each model is complete.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Network, NetworkError, Topology, Violation, ViolationKind};
use crate::nlpcore::{
    Constraint, ConstraintFunction, InterfaceIndices, LinearFunction, LinearObjective, NlpProblem,
    Polynomial, Variable,
};
use crate::oracle::{CapSetpoint, ControlSetting, DgSetpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FormulationKind {
    AcOpf,
    DistFlow,
    DistFlowSocp,
    LinDistFlow,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 4] = [
        FormulationKind::AcOpf,
        FormulationKind::DistFlow,
        FormulationKind::DistFlowSocp,
        FormulationKind::LinDistFlow,
    ];

    /// Short machine name used in file names and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            FormulationKind::AcOpf => "acopf",
            FormulationKind::DistFlow => "distflow",
            FormulationKind::DistFlowSocp => "socp",
            FormulationKind::LinDistFlow => "lindistflow",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FormulationKind::AcOpf => "AC-OPF",
            FormulationKind::DistFlow => "DistFlow",
            FormulationKind::DistFlowSocp => "DistFlow-SOCP",
            FormulationKind::LinDistFlow => "LinDistFlow",
        }
    }

    pub fn approach(self) -> &'static str {
        match self {
            FormulationKind::AcOpf | FormulationKind::DistFlow => "true representation",
            FormulationKind::DistFlowSocp => "relaxation",
            FormulationKind::LinDistFlow => "approximation",
        }
    }

    pub fn problem_class(self) -> &'static str {
        match self {
            FormulationKind::AcOpf | FormulationKind::DistFlow => "NLP",
            FormulationKind::DistFlowSocp => "SOCP",
            FormulationKind::LinDistFlow => "LP",
        }
    }

    pub fn is_convex(self) -> bool {
        matches!(
            self,
            FormulationKind::DistFlowSocp | FormulationKind::LinDistFlow
        )
    }

    fn uses_branch_flow(self) -> bool {
        !matches!(self, FormulationKind::AcOpf)
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FormulationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        match k.as_str() {
            "acopf" | "ac" => Ok(FormulationKind::AcOpf),
            "distflow" => Ok(FormulationKind::DistFlow),
            "socp" | "distflowsocp" => Ok(FormulationKind::DistFlowSocp),
            "lindistflow" | "lin" => Ok(FormulationKind::LinDistFlow),
            _ => Err(format!("unknown formulation `{s}`")),
        }
    }
}

/// Model families: the groups of constraints, bounds and boundary
/// conditions that make up each formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Objective,
    NodalPBalance,
    NodalQBalance,
    BranchPFlow,
    BranchQFlow,
    GenPLimits,
    GenQLimits,
    LineCapacity,
    VoltageLimits,
    CapacitorLimits,
    SubstationVoltage,
    SubstationExchange,
    PRecursion,
    QRecursion,
    VoltageDrop,
    CurrentDefinition,
    NetPWithdrawal,
    NetQWithdrawal,
    LinearVoltageDrop,
    ConeRelaxation,
    SquaredVoltageLimits,
    SubstationSquaredVoltage,
    LosslessPRecursion,
    LosslessQRecursion,
    LosslessVoltageDrop,
    DirectedFlowLimits,
}

impl Family {
    pub fn tag(self) -> &'static str {
        use Family::*;
        match self {
            Objective => "objective",
            NodalPBalance => "nodal_p_balance",
            NodalQBalance => "nodal_q_balance",
            BranchPFlow => "branch_p_flow",
            BranchQFlow => "branch_q_flow",
            GenPLimits => "gen_p_limits",
            GenQLimits => "gen_q_limits",
            LineCapacity => "line_capacity",
            VoltageLimits => "voltage_limits",
            CapacitorLimits => "capacitor_limits",
            SubstationVoltage => "substation_voltage",
            SubstationExchange => "substation_exchange",
            PRecursion => "p_recursion",
            QRecursion => "q_recursion",
            VoltageDrop => "voltage_drop",
            CurrentDefinition => "current_definition",
            NetPWithdrawal => "net_p_withdrawal",
            NetQWithdrawal => "net_q_withdrawal",
            LinearVoltageDrop => "linear_voltage_drop",
            ConeRelaxation => "cone_relaxation",
            SquaredVoltageLimits => "squared_voltage_limits",
            SubstationSquaredVoltage => "substation_squared_voltage",
            LosslessPRecursion => "lossless_p_recursion",
            LosslessQRecursion => "lossless_q_recursion",
            LosslessVoltageDrop => "lossless_voltage_drop",
            DirectedFlowLimits => "directed_flow_limits",
        }
    }

    /// Families each formulation must contain, objective first.
    pub fn required(kind: FormulationKind) -> Vec<Family> {
        use Family::*;
        let mut v = vec![Objective];
        match kind {
            FormulationKind::AcOpf => v.extend([
                NodalPBalance,
                NodalQBalance,
                BranchPFlow,
                BranchQFlow,
                GenPLimits,
                GenQLimits,
                LineCapacity,
                VoltageLimits,
                CapacitorLimits,
                SubstationVoltage,
                SubstationExchange,
            ]),
            FormulationKind::DistFlow => v.extend([
                PRecursion,
                QRecursion,
                VoltageDrop,
                CurrentDefinition,
                NetPWithdrawal,
                NetQWithdrawal,
                GenPLimits,
                GenQLimits,
                LineCapacity,
                VoltageLimits,
                CapacitorLimits,
                SubstationVoltage,
                SubstationExchange,
            ]),
            FormulationKind::DistFlowSocp => v.extend([
                PRecursion,
                QRecursion,
                LinearVoltageDrop,
                ConeRelaxation,
                NetPWithdrawal,
                NetQWithdrawal,
                GenPLimits,
                GenQLimits,
                LineCapacity,
                SquaredVoltageLimits,
                CapacitorLimits,
                SubstationSquaredVoltage,
                SubstationExchange,
            ]),
            FormulationKind::LinDistFlow => v.extend([
                LosslessPRecursion,
                LosslessQRecursion,
                LosslessVoltageDrop,
                NetPWithdrawal,
                NetQWithdrawal,
                GenPLimits,
                GenQLimits,
                CapacitorLimits,
                SquaredVoltageLimits,
                DirectedFlowLimits,
                SubstationSquaredVoltage,
                SubstationExchange,
            ]),
        }
        v
    }
}

fn tags(families: &[Family]) -> String {
    families
        .iter()
        .map(|f| f.tag())
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("invalid network: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("branch {from}-{to} has zero impedance, not supported by {kind}")]
    ZeroImpedance {
        from: usize,
        to: usize,
        kind: FormulationKind,
    },
}

/// Validation restricted to what matters for `kind`: ideal (zero-impedance)
/// connections are representable in AC-OPF and LinDistFlow.
pub fn validate_for(net: &Network, kind: FormulationKind) -> Vec<Violation> {
    net.validate()
        .into_iter()
        .filter(|v| {
            let ideal_ok = matches!(kind, FormulationKind::AcOpf | FormulationKind::LinDistFlow);
            !(ideal_ok && v.kind == ViolationKind::ZeroImpedance)
        })
        .collect()
}

/// Where each physical quantity lives in the variable vector.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    /// Per bus: `v` for AC-OPF/DistFlow, `w = v^2` otherwise.
    pub voltage: Vec<usize>,
    pub voltage_squared: bool,
    /// Per bus, AC-OPF only.
    pub angle: Option<Vec<usize>>,
    /// Per branch, sending-end flows in the oriented direction.
    pub branch_p: Vec<usize>,
    pub branch_q: Vec<usize>,
    /// Per branch, AC-OPF receiving-end flows (child to parent).
    pub branch_p_rev: Option<Vec<usize>>,
    pub branch_q_rev: Option<Vec<usize>>,
    /// Per branch squared current, DistFlow and SOCP.
    pub current: Option<Vec<usize>>,
    pub gen_p: Vec<usize>,
    pub gen_q: Vec<usize>,
    /// Per bus capacitor injection variable.
    pub cap_q: Vec<Option<usize>>,
}

/// A built problem with the data needed to interpret its solutions.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub kind: FormulationKind,
    /// The oriented network the problem was built from.
    pub network: Network,
    pub topology: Topology,
    pub problem: NlpProblem,
    pub layout: VariableLayout,
}

impl Formulation {
    pub fn exchange(&self, x: &[f64]) -> (f64, f64) {
        let i = self.problem.interface;
        (x[i.p_se], x[i.q_se])
    }

    /// DG and capacitor setpoints of a solution vector.
    pub fn control_setting(&self, x: &[f64]) -> ControlSetting {
        let se = self.network.substation_generator();
        ControlSetting {
            dg: (0..self.network.generators.len())
                .filter(|&g| Some(g) != se)
                .map(|g| DgSetpoint {
                    generator: g,
                    p: x[self.layout.gen_p[g]],
                    q: x[self.layout.gen_q[g]],
                })
                .collect(),
            capacitors: self
                .layout
                .cap_q
                .iter()
                .zip(&self.network.buses)
                .filter_map(|(k, bus)| {
                    k.map(|k| CapSetpoint {
                        bus: bus.id,
                        q: x[k],
                    })
                })
                .collect(),
        }
    }

    /// Voltage magnitudes per bus from a solution vector.
    pub fn voltages(&self, x: &[f64]) -> Vec<f64> {
        self.layout
            .voltage
            .iter()
            .map(|&k| {
                if self.layout.voltage_squared {
                    x[k].max(0.0).sqrt()
                } else {
                    x[k]
                }
            })
            .collect()
    }
}

pub fn build(net: &Network, kind: FormulationKind) -> Result<Formulation, FormulationError> {
    match kind {
        FormulationKind::AcOpf => build_acopf(net),
        FormulationKind::DistFlow => build_distflow(net),
        FormulationKind::DistFlowSocp => build_socp(net),
        FormulationKind::LinDistFlow => build_lindistflow(net),
    }
}

/// Flat-start estimates shared by all builders.
struct FlatStart {
    gen_p: Vec<f64>,
    gen_q: Vec<f64>,
    cap_q: Vec<f64>,
    branch_p: Vec<f64>,
    branch_q: Vec<f64>,
}

struct Builder {
    vars: Vec<Variable>,
    cons: Vec<Constraint>,
}

impl Builder {
    fn var(&mut self, v: Variable) -> usize {
        self.vars.push(v);
        self.vars.len() - 1
    }
}

/// Shared preamble: validation, orientation, generator and capacitor
/// variables, and the lossless pre-pass used for the flat start.
struct Common {
    net: Network,
    topo: Topology,
    b: Builder,
    gen_p: Vec<usize>,
    gen_q: Vec<usize>,
    cap_q: Vec<Option<usize>>,
    /// Generators attached to each bus position.
    gens_at: Vec<Vec<usize>>,
    sub_gen: usize,
    start: FlatStart,
}

fn prepare(net: &Network, kind: FormulationKind) -> Result<Common, FormulationError> {
    let violations = validate_for(net, kind);
    if !violations.is_empty() {
        return Err(FormulationError::Invalid(violations));
    }
    let net = net.orient_radial()?;
    if kind.uses_branch_flow() && kind != FormulationKind::LinDistFlow {
        if let Some(br) = net.branches.iter().find(|b| b.is_zero_impedance()) {
            return Err(FormulationError::ZeroImpedance {
                from: br.from_bus,
                to: br.to_bus,
                kind,
            });
        }
    }
    let topo = net.topology()?;
    let index = net.bus_index();
    let sub_gen = net
        .substation_generator()
        .ok_or(NetworkError::NoSubstation)?;
    let nb = net.buses.len();

    let mut gens_at = vec![Vec::new(); nb];
    for (g, gen) in net.generators.iter().enumerate() {
        gens_at[index[&gen.bus]].push(g);
    }

    // lossless pre-pass with units at mid-range
    let mut start = FlatStart {
        gen_p: net
            .generators
            .iter()
            .map(|g| mid(g.p_min, g.p_max))
            .collect(),
        gen_q: net
            .generators
            .iter()
            .map(|g| mid(g.q_min, g.q_max))
            .collect(),
        cap_q: net.buses.iter().map(|b| 0.5 * b.cap_q_max).collect(),
        branch_p: vec![0.0; net.branches.len()],
        branch_q: vec![0.0; net.branches.len()],
    };
    let mut sub_p = vec![0.0; nb];
    let mut sub_q = vec![0.0; nb];
    for &u in topo.order.iter().rev() {
        let bus = &net.buses[u];
        let mut p = bus.p_load;
        let mut q = bus.q_load - start.cap_q[u];
        for &g in &gens_at[u] {
            if g != sub_gen {
                p -= start.gen_p[g];
                q -= start.gen_q[g];
            }
        }
        for &k in &topo.child_branches[u] {
            let c = topo.ends[k].1;
            p += sub_p[c];
            q += sub_q[c];
        }
        sub_p[u] = p;
        sub_q[u] = q;
        if let Some(k) = topo.parent_branch[u] {
            start.branch_p[k] = p;
            start.branch_q[k] = q;
        }
    }
    let sg = &net.generators[sub_gen];
    start.gen_p[sub_gen] = sub_p[topo.root].clamp(sg.p_min, sg.p_max);
    start.gen_q[sub_gen] = sub_q[topo.root].clamp(sg.q_min, sg.q_max);

    let mut b = Builder {
        vars: Vec::new(),
        cons: Vec::new(),
    };
    let mut gen_p = Vec::new();
    let mut gen_q = Vec::new();
    for (g, gen) in net.generators.iter().enumerate() {
        let (ptag, qtag) = if g == sub_gen {
            (
                tags(&[Family::GenPLimits, Family::SubstationExchange]),
                tags(&[Family::GenQLimits, Family::SubstationExchange]),
            )
        } else {
            (
                Family::GenPLimits.tag().into(),
                Family::GenQLimits.tag().into(),
            )
        };
        let name = if g == sub_gen {
            "p_se".to_string()
        } else {
            format!("pg[{g}@{}]", gen.bus)
        };
        gen_p.push(b.var(Variable::new(name, gen.p_min, gen.p_max, start.gen_p[g]).tagged(ptag)));
        let name = if g == sub_gen {
            "q_se".to_string()
        } else {
            format!("qg[{g}@{}]", gen.bus)
        };
        gen_q.push(b.var(Variable::new(name, gen.q_min, gen.q_max, start.gen_q[g]).tagged(qtag)));
    }
    let cap_q = net
        .buses
        .iter()
        .enumerate()
        .map(|(u, bus)| {
            (bus.cap_q_max > 0.0).then(|| {
                b.var(
                    Variable::new(
                        format!("qc[{}]", bus.id),
                        0.0,
                        bus.cap_q_max,
                        start.cap_q[u],
                    )
                    .tagged(Family::CapacitorLimits.tag()),
                )
            })
        })
        .collect();

    Ok(Common {
        net,
        topo,
        b,
        gen_p,
        gen_q,
        cap_q,
        gens_at,
        sub_gen,
        start,
    })
}

fn mid(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi.min(0.0),
        (false, false) => 0.0,
    }
}

impl Common {
    fn objective(&self) -> LinearObjective {
        let mut terms = vec![(self.gen_p[self.sub_gen], self.net.substation_cost)];
        for (g, gen) in self.net.generators.iter().enumerate() {
            if g != self.sub_gen && gen.cost != 0.0 {
                terms.push((self.gen_p[g], gen.cost));
            }
        }
        LinearObjective {
            terms,
            constant: 0.0,
        }
    }

    fn interface(&self) -> InterfaceIndices {
        InterfaceIndices {
            p_se: self.gen_p[self.sub_gen],
            q_se: self.gen_q[self.sub_gen],
        }
    }

    fn bus_id(&self, u: usize) -> usize {
        self.net.buses[u].id
    }

    /// Branch-flow recursion at the receiving bus `j` of branch `k`:
    /// `flow_k - withdrawal_j - loss_k - sum children = 0`.
    #[allow(clippy::too_many_arguments)]
    fn recursion(
        &self,
        k: usize,
        flow: &[usize],
        loss: Option<(usize, f64)>,
        reactive: bool,
        families: &[Family],
    ) -> Constraint {
        let j = self.topo.ends[k].1;
        let bus = &self.net.buses[j];
        let mut terms = vec![(flow[k], 1.0)];
        if let Some((l, coef)) = loss {
            terms.push((l, -coef));
        }
        for &c in &self.topo.child_branches[j] {
            terms.push((flow[c], -1.0));
        }
        // withdrawal = load - generation (- capacitor)
        for &g in &self.gens_at[j] {
            terms.push((
                if reactive {
                    self.gen_q[g]
                } else {
                    self.gen_p[g]
                },
                1.0,
            ));
        }
        let load = if reactive {
            if let Some(c) = self.cap_q[j] {
                terms.push((c, 1.0));
            }
            bus.q_load
        } else {
            bus.p_load
        };
        let (f, t) = (self.bus_id(self.topo.ends[k].0), bus.id);
        Constraint::equality(
            format!("{}[{f}-{t}]", tags(families)),
            LinearFunction::new(&terms, -load),
        )
    }

    /// Substation balance: exchange equals root load plus root-branch flows.
    fn root_balance(&mut self, flow_p: &[usize], flow_q: &[usize]) {
        let root = self.topo.root;
        for reactive in [false, true] {
            let flows = if reactive { flow_q } else { flow_p };
            let mut terms = Vec::new();
            for &g in &self.gens_at[root] {
                terms.push((
                    if reactive {
                        self.gen_q[g]
                    } else {
                        self.gen_p[g]
                    },
                    1.0,
                ));
            }
            if reactive {
                if let Some(c) = self.cap_q[root] {
                    terms.push((c, 1.0));
                }
            }
            for &k in &self.topo.child_branches[root] {
                terms.push((flows[k], -1.0));
            }
            let bus = &self.net.buses[root];
            let load = if reactive { bus.q_load } else { bus.p_load };
            let fam = if reactive {
                Family::NetQWithdrawal
            } else {
                Family::NetPWithdrawal
            };
            self.b.cons.push(Constraint::equality(
                format!("{}[{}]", tags(&[fam, Family::SubstationExchange]), bus.id),
                LinearFunction::new(&terms, -load),
            ));
        }
    }

    fn line_capacity(&mut self, k: usize, p: usize, q: usize) {
        let br = &self.net.branches[k];
        if br.s_max.is_finite() {
            self.b.cons.push(Constraint::inequality(
                format!(
                    "{}[{}-{}]",
                    Family::LineCapacity.tag(),
                    br.from_bus,
                    br.to_bus
                ),
                Polynomial::new()
                    .term(1.0, &[(p, 2)])
                    .term(1.0, &[(q, 2)])
                    .constant(-br.s_max * br.s_max),
            ));
        }
    }

    fn finish(self, kind: FormulationKind, layout: VariableLayout) -> Formulation {
        let objective = self.objective();
        let interface = self.interface();
        Formulation {
            kind,
            network: self.net,
            topology: self.topo,
            problem: NlpProblem {
                variables: self.b.vars,
                objective,
                constraints: self.b.cons,
                interface,
            },
            layout,
        }
    }
}

/// Polar AC power flow with directed flow variables in both orientations.
pub fn build_acopf(net: &Network) -> Result<Formulation, FormulationError> {
    let mut c = prepare(net, FormulationKind::AcOpf)?;
    let nb = c.net.buses.len();
    let nl = c.net.branches.len();

    let mut v = Vec::with_capacity(nb);
    let mut delta = Vec::with_capacity(nb);
    for u in 0..nb {
        let bus = c.net.buses[u].clone();
        let var = if u == c.topo.root {
            Variable::new(format!("v[{}]", bus.id), 1.0, 1.0, 1.0)
                .tagged(tags(&[Family::VoltageLimits, Family::SubstationVoltage]))
        } else {
            Variable::new(format!("v[{}]", bus.id), bus.v_min, bus.v_max, 1.0)
                .tagged(Family::VoltageLimits.tag())
        };
        v.push(c.b.var(var));
        let var = if u == c.topo.root {
            Variable::new(format!("delta[{}]", bus.id), 0.0, 0.0, 0.0)
        } else {
            Variable::free(format!("delta[{}]", bus.id), 0.0)
        };
        delta.push(c.b.var(var));
    }
    let mut p = Vec::with_capacity(nl);
    let mut q = Vec::with_capacity(nl);
    let mut p_rev = Vec::with_capacity(nl);
    let mut q_rev = Vec::with_capacity(nl);
    for k in 0..nl {
        let (f, t) = (c.net.branches[k].from_bus, c.net.branches[k].to_bus);
        let (sp, sq) = (c.start.branch_p[k], c.start.branch_q[k]);
        p.push(c.b.var(Variable::free(format!("p[{f}-{t}]"), sp)));
        q.push(c.b.var(Variable::free(format!("q[{f}-{t}]"), sq)));
        p_rev.push(c.b.var(Variable::free(format!("p[{t}-{f}]"), -sp)));
        q_rev.push(c.b.var(Variable::free(format!("q[{t}-{f}]"), -sq)));
    }

    // nodal balance: generation - load (+ capacitor) - outgoing flows = 0
    for u in 0..nb {
        let bus = c.net.buses[u].clone();
        for reactive in [false, true] {
            let mut terms = Vec::new();
            for &g in &c.gens_at[u] {
                terms.push((if reactive { c.gen_q[g] } else { c.gen_p[g] }, 1.0));
            }
            if reactive {
                if let Some(cv) = c.cap_q[u] {
                    terms.push((cv, 1.0));
                }
            }
            for k in 0..nl {
                let (fu, tu) = c.topo.ends[k];
                let (fw, bw) = if reactive {
                    (q[k], q_rev[k])
                } else {
                    (p[k], p_rev[k])
                };
                if fu == u {
                    terms.push((fw, -1.0));
                } else if tu == u {
                    terms.push((bw, -1.0));
                }
            }
            let (fam, load) = if reactive {
                (Family::NodalQBalance, bus.q_load)
            } else {
                (Family::NodalPBalance, bus.p_load)
            };
            c.b.cons.push(Constraint::equality(
                format!("{}[{}]", fam.tag(), bus.id),
                LinearFunction::new(&terms, -load),
            ));
        }
    }

    for k in 0..nl {
        let br = c.net.branches[k].clone();
        let (fu, tu) = c.topo.ends[k];
        let (f, t) = (br.from_bus, br.to_bus);
        if br.is_zero_impedance() {
            // ideal connection: equal voltage phasors, lossless active flow,
            // reactive flow only through the line charging
            let pt = Family::BranchPFlow.tag();
            let qt = Family::BranchQFlow.tag();
            c.b.cons.push(Constraint::equality(
                format!("{pt}[{f}-{t}:v]"),
                LinearFunction::new(&[(v[fu], 1.0), (v[tu], -1.0)], 0.0),
            ));
            c.b.cons.push(Constraint::equality(
                format!("{pt}[{f}-{t}:delta]"),
                LinearFunction::new(&[(delta[fu], 1.0), (delta[tu], -1.0)], 0.0),
            ));
            c.b.cons.push(Constraint::equality(
                format!("{pt}[{f}-{t}]"),
                LinearFunction::new(&[(p[k], 1.0), (p_rev[k], 1.0)], 0.0),
            ));
            c.b.cons.push(Constraint::equality(
                format!("{qt}[{f}-{t}]"),
                Polynomial::new()
                    .linear(1.0, q[k])
                    .linear(1.0, q_rev[k])
                    .term(0.5 * br.b_shunt, &[(v[fu], 2)])
                    .term(0.5 * br.b_shunt, &[(v[tu], 2)]),
            ));
        } else {
            let (y, theta) = br.series_admittance();
            for (from, to, pf, qf) in [(fu, tu, p[k], q[k]), (tu, fu, p_rev[k], q_rev[k])] {
                let (a, b) = (c.bus_id(from), c.bus_id(to));
                c.b.cons.push(Constraint::equality(
                    format!("{}[{a}-{b}]", Family::BranchPFlow.tag()),
                    AcBranchFlow::new(
                        pf,
                        v[from],
                        v[to],
                        delta[from],
                        delta[to],
                        y * theta.cos(),
                        y,
                        theta,
                        false,
                    ),
                ));
                c.b.cons.push(Constraint::equality(
                    format!("{}[{a}-{b}]", Family::BranchQFlow.tag()),
                    AcBranchFlow::new(
                        qf,
                        v[from],
                        v[to],
                        delta[from],
                        delta[to],
                        -(y * theta.sin() + 0.5 * br.b_shunt),
                        y,
                        theta,
                        true,
                    ),
                ));
            }
        }
        c.line_capacity(k, p[k], q[k]);
    }

    let layout = VariableLayout {
        voltage: v,
        voltage_squared: false,
        angle: Some(delta),
        branch_p: p,
        branch_q: q,
        branch_p_rev: Some(p_rev),
        branch_q_rev: Some(q_rev),
        current: None,
        gen_p: c.gen_p.clone(),
        gen_q: c.gen_q.clone(),
        cap_q: c.cap_q.clone(),
    };
    Ok(c.finish(FormulationKind::AcOpf, layout))
}

/// Voltage and flow variables shared by the three branch-flow models.
struct BranchFlowVars {
    volt: Vec<usize>,
    p: Vec<usize>,
    q: Vec<usize>,
    l: Option<Vec<usize>>,
}

fn branch_flow_vars(
    c: &mut Common,
    squared: bool,
    with_current: bool,
    directed_limits: bool,
) -> BranchFlowVars {
    let nb = c.net.buses.len();
    let mut volt = Vec::with_capacity(nb);
    for u in 0..nb {
        let bus = c.net.buses[u].clone();
        let var = match (squared, u == c.topo.root) {
            (false, true) => Variable::new(format!("v[{}]", bus.id), 1.0, 1.0, 1.0)
                .tagged(tags(&[Family::VoltageLimits, Family::SubstationVoltage])),
            (false, false) => Variable::new(format!("v[{}]", bus.id), bus.v_min, bus.v_max, 1.0)
                .tagged(Family::VoltageLimits.tag()),
            (true, true) => Variable::new(format!("w[{}]", bus.id), 1.0, 1.0, 1.0).tagged(tags(&[
                Family::SquaredVoltageLimits,
                Family::SubstationSquaredVoltage,
            ])),
            (true, false) => Variable::new(
                format!("w[{}]", bus.id),
                bus.v_min * bus.v_min,
                bus.v_max * bus.v_max,
                1.0,
            )
            .tagged(Family::SquaredVoltageLimits.tag()),
        };
        volt.push(c.b.var(var));
    }
    let nl = c.net.branches.len();
    let mut p = Vec::with_capacity(nl);
    let mut q = Vec::with_capacity(nl);
    let mut l = Vec::with_capacity(nl);
    for k in 0..nl {
        let br = c.net.branches[k].clone();
        let (f, t) = (br.from_bus, br.to_bus);
        let (sp, sq) = (c.start.branch_p[k], c.start.branch_q[k]);
        if directed_limits {
            let tag = Family::DirectedFlowLimits.tag();
            p.push(c.b.var(
                Variable::new(format!("p[{f}-{t}]"), f64::NEG_INFINITY, br.p_max, sp).tagged(tag),
            ));
            q.push(c.b.var(
                Variable::new(format!("q[{f}-{t}]"), f64::NEG_INFINITY, br.q_max, sq).tagged(tag),
            ));
        } else {
            p.push(c.b.var(Variable::free(format!("p[{f}-{t}]"), sp)));
            q.push(c.b.var(Variable::free(format!("q[{f}-{t}]"), sq)));
        }
        if with_current {
            // implied by the line limit and the sending-end voltage floor
            let vmin = c.net.buses[c.topo.ends[k].0].v_min;
            let cap = (br.s_max / vmin).powi(2);
            // with the current definition as an equality `l >= 0` is implied and
            // would make the constraints degenerate on branches without flow
            let lo = if squared { 0.0 } else { f64::NEG_INFINITY };
            l.push(c.b.var(Variable::new(
                format!("l[{f}-{t}]"),
                lo,
                cap,
                0.01f64.min(cap),
            )));
        }
    }
    BranchFlowVars {
        volt,
        p,
        q,
        l: with_current.then_some(l),
    }
}

fn branch_flow_layout(c: &Common, v: BranchFlowVars, squared: bool) -> VariableLayout {
    VariableLayout {
        voltage: v.volt,
        voltage_squared: squared,
        angle: None,
        branch_p: v.p,
        branch_q: v.q,
        branch_p_rev: None,
        branch_q_rev: None,
        current: v.l,
        gen_p: c.gen_p.clone(),
        gen_q: c.gen_q.clone(),
        cap_q: c.cap_q.clone(),
    }
}

/// Recursive branch-flow equations with the current definition kept as an
/// equality.
pub fn build_distflow(net: &Network) -> Result<Formulation, FormulationError> {
    let mut c = prepare(net, FormulationKind::DistFlow)?;
    let vars = branch_flow_vars(&mut c, false, true, false);
    let l = vars.l.clone().expect("current variables");
    for k in 0..c.net.branches.len() {
        let br = c.net.branches[k].clone();
        let (fu, tu) = c.topo.ends[k];
        let (f, t) = (br.from_bus, br.to_bus);
        let (p, q, v) = (&vars.p, &vars.q, &vars.volt);
        let rec_p = c.recursion(
            k,
            p,
            Some((l[k], br.r)),
            false,
            &[Family::PRecursion, Family::NetPWithdrawal],
        );
        let rec_q = c.recursion(
            k,
            q,
            Some((l[k], br.x)),
            true,
            &[Family::QRecursion, Family::NetQWithdrawal],
        );
        c.b.cons.push(rec_p);
        c.b.cons.push(rec_q);
        let z2 = br.r * br.r + br.x * br.x;
        c.b.cons.push(Constraint::equality(
            format!("{}[{f}-{t}]", Family::VoltageDrop.tag()),
            Polynomial::new()
                .term(1.0, &[(v[tu], 2)])
                .term(-1.0, &[(v[fu], 2)])
                .linear(-z2, l[k])
                .linear(2.0 * br.r, p[k])
                .linear(2.0 * br.x, q[k]),
        ));
        c.b.cons.push(Constraint::equality(
            format!("{}[{f}-{t}]", Family::CurrentDefinition.tag()),
            Polynomial::new()
                .term(1.0, &[(p[k], 2)])
                .term(1.0, &[(q[k], 2)])
                .term(-1.0, &[(l[k], 1), (v[fu], 2)]),
        ));
        c.line_capacity(k, p[k], q[k]);
    }
    let (p, q) = (vars.p.clone(), vars.q.clone());
    c.root_balance(&p, &q);
    let layout = branch_flow_layout(&c, vars, false);
    Ok(c.finish(FormulationKind::DistFlow, layout))
}

/// DistFlow in squared voltages with the current definition relaxed to a
/// rotated second-order cone.
pub fn build_socp(net: &Network) -> Result<Formulation, FormulationError> {
    let mut c = prepare(net, FormulationKind::DistFlowSocp)?;
    let vars = branch_flow_vars(&mut c, true, true, false);
    let l = vars.l.clone().expect("current variables");
    for k in 0..c.net.branches.len() {
        let br = c.net.branches[k].clone();
        let (fu, tu) = c.topo.ends[k];
        let (f, t) = (br.from_bus, br.to_bus);
        let (p, q, w) = (&vars.p, &vars.q, &vars.volt);
        let rec_p = c.recursion(
            k,
            p,
            Some((l[k], br.r)),
            false,
            &[Family::PRecursion, Family::NetPWithdrawal],
        );
        let rec_q = c.recursion(
            k,
            q,
            Some((l[k], br.x)),
            true,
            &[Family::QRecursion, Family::NetQWithdrawal],
        );
        c.b.cons.push(rec_p);
        c.b.cons.push(rec_q);
        let z2 = br.r * br.r + br.x * br.x;
        c.b.cons.push(Constraint::equality(
            format!("{}[{f}-{t}]", Family::LinearVoltageDrop.tag()),
            LinearFunction::new(
                &[
                    (w[tu], 1.0),
                    (w[fu], -1.0),
                    (l[k], -z2),
                    (p[k], 2.0 * br.r),
                    (q[k], 2.0 * br.x),
                ],
                0.0,
            ),
        ));
        // p^2 + q^2 + ((l - w)/2)^2 - ((l + w)/2)^2 <= 0, i.e. p^2 + q^2 <= l w
        c.b.cons.push(Constraint::inequality(
            format!("{}[{f}-{t}]", Family::ConeRelaxation.tag()),
            Polynomial::new()
                .term(1.0, &[(p[k], 2)])
                .term(1.0, &[(q[k], 2)])
                .term(-1.0, &[(l[k], 1), (w[fu], 1)]),
        ));
        c.line_capacity(k, p[k], q[k]);
    }
    let (p, q) = (vars.p.clone(), vars.q.clone());
    c.root_balance(&p, &q);
    let layout = branch_flow_layout(&c, vars, true);
    Ok(c.finish(FormulationKind::DistFlowSocp, layout))
}

/// Lossless linearised branch flow: every constraint is linear.
pub fn build_lindistflow(net: &Network) -> Result<Formulation, FormulationError> {
    let mut c = prepare(net, FormulationKind::LinDistFlow)?;
    let vars = branch_flow_vars(&mut c, true, false, true);
    for k in 0..c.net.branches.len() {
        let br = c.net.branches[k].clone();
        let (fu, tu) = c.topo.ends[k];
        let (f, t) = (br.from_bus, br.to_bus);
        let (p, q, w) = (&vars.p, &vars.q, &vars.volt);
        let rec_p = c.recursion(
            k,
            p,
            None,
            false,
            &[Family::LosslessPRecursion, Family::NetPWithdrawal],
        );
        let rec_q = c.recursion(
            k,
            q,
            None,
            true,
            &[Family::LosslessQRecursion, Family::NetQWithdrawal],
        );
        c.b.cons.push(rec_p);
        c.b.cons.push(rec_q);
        c.b.cons.push(Constraint::equality(
            format!("{}[{f}-{t}]", Family::LosslessVoltageDrop.tag()),
            LinearFunction::new(
                &[
                    (w[fu], 1.0),
                    (w[tu], -1.0),
                    (p[k], -2.0 * br.r),
                    (q[k], -2.0 * br.x),
                ],
                0.0,
            ),
        ));
    }
    let (p, q) = (vars.p.clone(), vars.q.clone());
    c.root_balance(&p, &q);
    let layout = branch_flow_layout(&c, vars, true);
    Ok(c.finish(FormulationKind::LinDistFlow, layout))
}

/// One sending-end AC branch flow definition,
/// `flow - (a v_i^2 - v_i v_j Y trig(delta_i - delta_j - theta)) = 0`
/// with `trig = cos` for active and `sin` for reactive power.
#[derive(Debug, Clone)]
pub struct AcBranchFlow {
    idx: [usize; 5], // flow, vi, vj, di, dj
    a: f64,
    y: f64,
    theta: f64,
    reactive: bool,
    hess: Vec<(usize, usize)>,
}

impl AcBranchFlow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        flow: usize,
        vi: usize,
        vj: usize,
        di: usize,
        dj: usize,
        a: f64,
        y: f64,
        theta: f64,
        reactive: bool,
    ) -> Self {
        // pairs among (vi, vj, di, dj) in a fixed local order
        let loc = [vi, vj, di, dj];
        let mut hess = Vec::with_capacity(10);
        for r in 0..4 {
            for s in 0..=r {
                let (a1, b1) = (loc[r], loc[s]);
                hess.push((a1.max(b1), a1.min(b1)));
            }
        }
        AcBranchFlow {
            idx: [flow, vi, vj, di, dj],
            a,
            y,
            theta,
            reactive,
            hess,
        }
    }

    /// `(T, T', T'')` at the angle difference.
    fn trig(&self, x: &[f64]) -> (f64, f64, f64) {
        let phi = x[self.idx[3]] - x[self.idx[4]] - self.theta;
        let (s, c) = phi.sin_cos();
        if self.reactive {
            (s, c, -s)
        } else {
            (c, -s, -c)
        }
    }
}

impl ConstraintFunction for AcBranchFlow {
    fn gradient_pattern(&self) -> &[usize] {
        &self.idx
    }

    fn hessian_pattern(&self) -> &[(usize, usize)] {
        &self.hess
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (vi, vj) = (x[self.idx[1]], x[self.idx[2]]);
        let (t, _, _) = self.trig(x);
        x[self.idx[0]] - self.a * vi * vi + vi * vj * self.y * t
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (vi, vj) = (x[self.idx[1]], x[self.idx[2]]);
        let (t, t1, _) = self.trig(x);
        let y = self.y;
        out[0] = 1.0;
        out[1] = -2.0 * self.a * vi + vj * y * t;
        out[2] = vi * y * t;
        out[3] = vi * vj * y * t1;
        out[4] = -vi * vj * y * t1;
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let (vi, vj) = (x[self.idx[1]], x[self.idx[2]]);
        let (t, t1, t2) = self.trig(x);
        let y = self.y;
        // lower triangle over (vi, vj, di, dj), row-wise
        out[0] = -2.0 * self.a; // vi vi
        out[1] = y * t; // vj vi
        out[2] = 0.0; // vj vj
        out[3] = vj * y * t1; // di vi
        out[4] = vi * y * t1; // di vj
        out[5] = vi * vj * y * t2; // di di
        out[6] = -vj * y * t1; // dj vi
        out[7] = -vi * y * t1; // dj vj
        out[8] = -vi * vj * y * t2; // dj di
        out[9] = vi * vj * y * t2; // dj dj
    }
}

/// Per-family count of constraints and tagged bounds in a built problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub family: Family,
    /// False when the network has nothing the family could apply to (no
    /// capacitor banks, no finite line ratings).
    pub applicable: bool,
    pub constraints: usize,
    pub bounds: usize,
}

impl AuditEntry {
    pub fn mapped(&self) -> bool {
        !self.applicable || self.constraints + self.bounds > 0
    }
}

pub fn audit(f: &Formulation) -> Vec<AuditEntry> {
    let has_caps = f.network.buses.iter().any(|b| b.cap_q_max > 0.0);
    let has_ratings = f.network.branches.iter().any(|b| b.s_max.is_finite());
    Family::required(f.kind)
        .into_iter()
        .map(|family| {
            let tag = family.tag();
            let constraints = f
                .problem
                .constraints
                .iter()
                .filter(|c| c.tags().any(|t| t == tag))
                .count();
            let bounds = f
                .problem
                .variables
                .iter()
                .filter(|v| {
                    v.bound_tag
                        .as_deref()
                        .is_some_and(|b| b.split('+').any(|t| t == tag))
                })
                .count();
            let objective = usize::from(
                family == Family::Objective
                    && f.problem
                        .objective
                        .terms
                        .iter()
                        .any(|&(k, _)| k == f.problem.interface.p_se),
            );
            let applicable = match family {
                Family::CapacitorLimits => has_caps,
                Family::LineCapacity => has_ratings,
                _ => true,
            };
            AuditEntry {
                family,
                applicable,
                constraints: constraints + objective,
                bounds,
            }
        })
        .collect()
}

/// Maps a DistFlow point onto the SOCP variables (`w = v^2`).
pub fn distflow_point_to_socp(distflow: &Formulation, socp: &Formulation, x: &[f64]) -> Vec<f64> {
    let (a, b) = (&distflow.layout, &socp.layout);
    let mut y = socp.problem.initial_point();
    for (&from, &to) in a.voltage.iter().zip(&b.voltage) {
        y[to] = x[from] * x[from];
    }
    let pairs = [
        (&a.branch_p, &b.branch_p),
        (&a.branch_q, &b.branch_q),
        (&a.gen_p, &b.gen_p),
        (&a.gen_q, &b.gen_q),
    ];
    for (src, dst) in pairs {
        for (&from, &to) in src.iter().zip(dst.iter()) {
            y[to] = x[from];
        }
    }
    if let (Some(src), Some(dst)) = (&a.current, &b.current) {
        for (&from, &to) in src.iter().zip(dst) {
            y[to] = x[from];
        }
    }
    for (src, dst) in a.cap_q.iter().zip(&b.cap_q) {
        if let (Some(from), Some(to)) = (src, dst) {
            y[*to] = x[*from];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::case33;
    use crate::netmodel::{tinyfeeder, two_bus};
    use crate::nlpcore::{check_derivatives, ConstraintKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn acopf_counts_on_case33() {
        let f = build_acopf(&case33()).unwrap();
        let l = &f.layout;
        assert_eq!(
            l.branch_p.len() + l.branch_p_rev.as_ref().unwrap().len(),
            64
        );
        assert_eq!(
            l.branch_q.len() + l.branch_q_rev.as_ref().unwrap().len(),
            64
        );
        let angles = l.angle.as_ref().unwrap();
        assert_eq!(angles.len(), 33);
        assert_eq!(
            angles
                .iter()
                .filter(|&&k| f.problem.variables[k].is_fixed())
                .count(),
            1
        );
        let flows = f
            .problem
            .constraints
            .iter()
            .filter(|c| c.name.starts_with("branch_"))
            .count();
        assert_eq!(flows, 4 * 32);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FormulationKind::ALL {
            assert_eq!(k.key().parse::<FormulationKind>().unwrap(), k);
            assert_eq!(k.label().parse::<FormulationKind>().unwrap(), k);
        }
        assert!("qc".parse::<FormulationKind>().is_err());
    }

    #[test]
    fn audit_has_no_unmapped_families() {
        for net in [case33(), tinyfeeder()] {
            for kind in FormulationKind::ALL {
                let f = build(&net, kind).unwrap();
                for e in audit(&f) {
                    assert!(e.mapped(), "{kind}: {:?} unmapped", e.family);
                }
            }
        }
    }

    #[test]
    fn constraint_classes_match_table() {
        let net = case33();
        let lin = build_lindistflow(&net).unwrap();
        assert!(lin
            .problem
            .constraints
            .iter()
            .all(|c| c.function.is_linear()));
        let socp = build_socp(&net).unwrap();
        let nonlinear: Vec<_> = socp
            .problem
            .constraints
            .iter()
            .filter(|c| !c.function.is_linear())
            .collect();
        assert!(nonlinear
            .iter()
            .all(|c| c.kind == ConstraintKind::Inequality));
        let df = build_distflow(&net).unwrap();
        assert!(df
            .problem
            .constraints
            .iter()
            .any(|c| !c.function.is_linear() && c.kind == ConstraintKind::Equality));
    }

    #[test]
    fn distflow_rejects_zero_impedance() {
        let net = two_bus(0.0, 0.0, 1.0, 0.5);
        assert!(build_distflow(&net).is_err());
        assert!(build_socp(&net).is_err());
        assert!(build_acopf(&net).is_ok());
        assert!(build_lindistflow(&net).is_ok());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = case33();
        for kind in FormulationKind::ALL {
            let f = build(&net, kind).unwrap();
            for _ in 0..5 {
                let x = f.problem.sample_interior_point(&mut rng, 1e-6);
                for r in check_derivatives(&f.problem, &x, 1e-6, 1e-5) {
                    assert!(r.passed, "{kind}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn flat_start_is_finite() {
        let f = build_distflow(&case33()).unwrap();
        let e = f.problem.eval_all(&f.problem.initial_point()).unwrap();
        assert!(e.residuals.iter().all(|r| r.is_finite()));
        assert_eq!(
            e.jacobian
                .rows
                .iter()
                .zip(&e.jacobian.cols)
                .map(|(&r, &c)| (r, c))
                .collect::<Vec<_>>(),
            f.problem.jacobian_pattern()
        );
    }

    #[test]
    fn lindistflow_lossless_identity_at_flat_start() {
        // summing the lossless recursion telescopes to total net withdrawal
        let net = case33();
        let f = build_lindistflow(&net).unwrap();
        let x = f.problem.initial_point();
        let e = f.problem.eval_all(&x).unwrap();
        for (c, r) in f.problem.constraints.iter().zip(&e.residuals) {
            if c.tags()
                .any(|t| t.starts_with("lossless_p") || t.starts_with("net_"))
            {
                assert!(r.abs() < 1e-12, "{}: {r}", c.name);
            }
        }
        let (p_se, _) = f.exchange(&x);
        let (pl, _) = net.total_load();
        let dg: f64 = f
            .layout
            .gen_p
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != net.substation_generator().unwrap())
            .map(|(_, &k)| x[k])
            .sum();
        assert!((p_se - (pl - dg)).abs() < 1e-12);
    }
}
