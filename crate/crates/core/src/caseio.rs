//! Case file readers and writers.
//!
//! Two formats are supported: the subset of MATPOWER case files covering
//! buses, branches, generators and linear generator costs, and a native JSON
//! document that additionally carries capacitor banks, distributed
//! generators and the daily load profile.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{
    substation_generator, Branch, Bus, BusKind, Generator, Network, PerUnit, DEFAULT_BASE_KV,
    HOURS_PER_DAY,
};

pub const SCHEMA_VERSION: &str = "1.0";

/// Bundled 33-bus case, MATPOWER subset.
pub const CASE33_MATPOWER: &str = include_str!("../data/case33.m");
/// Bundled 33-bus case with capacitor, DG and load-profile extensions.
pub const CASE33_NATIVE: &str = include_str!("../data/case33.json");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}, column {col}: {msg}")]
    Malformed {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("missing section `mpc.{0}`")]
    MissingSection(&'static str),
    #[error("no substation (type 3) bus")]
    NoSubstation,
    #[error("line {line}: duplicate bus id {id}")]
    DuplicateBus { id: usize, line: usize },
    #[error("line {line}: {msg}")]
    UnsupportedCost { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
}

impl CaseError {
    fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CaseError::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

/// Parses a MATPOWER case restricted to the documented subset.
pub fn parse_matpower(text: &str) -> Result<Network, CaseError> {
    parse_matpower_with_warnings(text).map(|(net, _)| net)
}

/// As [`parse_matpower`], also returning the warnings for ignored content.
pub fn parse_matpower_with_warnings(text: &str) -> Result<(Network, Vec<String>), CaseError> {
    let sections = scan_matpower(text)?;
    let mut warnings = sections.warnings;

    let base_mva = match sections.scalars.get("baseMVA") {
        Some(&(v, _)) if v > 0.0 && v.is_finite() => v,
        Some(&(v, line)) => {
            return Err(CaseError::Malformed {
                line,
                col: 1,
                msg: format!("baseMVA must be positive, got {v}"),
            })
        }
        None => return Err(CaseError::MissingSection("baseMVA")),
    };
    let pu = PerUnit {
        base_mva,
        base_kv: DEFAULT_BASE_KV,
    };

    let bus_rows = sections
        .matrices
        .get("bus")
        .ok_or(CaseError::MissingSection("bus"))?;
    let branch_rows = sections
        .matrices
        .get("branch")
        .ok_or(CaseError::MissingSection("branch"))?;
    let gen_rows = sections
        .matrices
        .get("gen")
        .ok_or(CaseError::MissingSection("gen"))?;

    let mut buses = Vec::new();
    let mut seen = HashMap::new();
    let mut base_kv = None;
    for row in bus_rows {
        row.require(13, "bus")?;
        let id = row.id(0)?;
        if seen.insert(id, row.line).is_some() {
            return Err(CaseError::DuplicateBus { id, line: row.line });
        }
        let kind = match row.values[1] as i64 {
            3 => BusKind::Substation,
            1 => BusKind::Pq,
            2 => {
                warnings.push(format!("line {}: PV bus {id} treated as PQ", row.line));
                BusKind::Pq
            }
            t => {
                return Err(row.error(1, format!("unsupported bus type {t}")));
            }
        };
        if row.values[4] != 0.0 || row.values[5] != 0.0 {
            warnings.push(format!("line {}: bus {id} shunt ignored", row.line));
        }
        if kind == BusKind::Substation {
            if buses.iter().any(|b: &Bus| b.kind == BusKind::Substation) {
                return Err(row.error(1, "more than one type 3 bus".into()));
            }
            if row.values[9] > 0.0 {
                base_kv = Some(row.values[9]);
            }
        }
        buses.push(Bus {
            id,
            kind,
            p_load: pu.power_to_pu(row.values[2]),
            q_load: pu.power_to_pu(row.values[3]),
            v_max: row.values[11],
            v_min: row.values[12],
            cap_q_max: 0.0,
        });
    }
    let sub_id = buses
        .iter()
        .find(|b| b.kind == BusKind::Substation)
        .map(|b| b.id)
        .ok_or(CaseError::NoSubstation)?;

    let mut branches = Vec::new();
    for row in branch_rows {
        row.require(6, "branch")?;
        let (f, t) = (row.id(0)?, row.id(1)?);
        for (c, id) in [(0, f), (1, t)] {
            if !seen.contains_key(&id) {
                return Err(row.error(c, format!("unknown bus {id}")));
            }
        }
        if row.values.get(10).is_some_and(|s| *s == 0.0) {
            warnings.push(format!(
                "line {}: out-of-service branch {f}-{t} skipped",
                row.line
            ));
            continue;
        }
        if row.values.get(8).is_some_and(|r| *r != 0.0 && *r != 1.0) {
            warnings.push(format!("line {}: tap ratio on {f}-{t} ignored", row.line));
        }
        let rate = row.values[5];
        let s_max = if rate > 0.0 {
            pu.power_to_pu(rate)
        } else {
            f64::INFINITY
        };
        branches.push(Branch {
            from_bus: f,
            to_bus: t,
            r: row.values[2],
            x: row.values[3],
            b_shunt: row.values[4],
            s_max,
            p_max: s_max,
            q_max: s_max,
        });
    }

    let mut generators = Vec::new();
    let mut cost_row_of = Vec::new();
    for (k, row) in gen_rows.iter().enumerate() {
        row.require(10, "gen")?;
        let bus = row.id(0)?;
        if !seen.contains_key(&bus) {
            return Err(row.error(0, format!("unknown bus {bus}")));
        }
        if row.values[7] <= 0.0 {
            warnings.push(format!(
                "line {}: out-of-service generator skipped",
                row.line
            ));
            continue;
        }
        generators.push(Generator {
            bus,
            p_min: pu.power_to_pu(row.values[9]),
            p_max: pu.power_to_pu(row.values[8]),
            q_min: pu.power_to_pu(row.values[4]),
            q_max: pu.power_to_pu(row.values[3]),
            cost: 0.0,
        });
        cost_row_of.push(k);
    }

    if let Some(cost_rows) = sections.matrices.get("gencost") {
        if cost_rows.len() < gen_rows.len() {
            return Err(CaseError::UnsupportedCost {
                line: cost_rows.last().map_or(1, |r| r.line),
                msg: format!(
                    "{} gencost rows for {} generators",
                    cost_rows.len(),
                    gen_rows.len()
                ),
            });
        }
        for (g, &k) in generators.iter_mut().zip(&cost_row_of) {
            g.cost = pu.cost_to_pu(linear_cost(&cost_rows[k])?);
        }
    } else {
        warnings.push("no gencost section, generator costs set to zero".into());
    }

    let substation_cost = match generators.iter().find(|g| g.bus == sub_id) {
        Some(g) => g.cost,
        None => {
            warnings.push(format!(
                "no generator at substation bus {sub_id}, adding exchange unit"
            ));
            generators.insert(0, substation_generator(sub_id, 0.0));
            0.0
        }
    };
    // substation units first
    generators.sort_by_key(|g| g.bus != sub_id);

    for w in &warnings {
        warn!("{w}");
    }
    Ok((
        Network {
            buses,
            branches,
            generators,
            base_mva,
            base_kv: base_kv.unwrap_or(DEFAULT_BASE_KV),
            substation_cost,
            load_profile: vec![1.0; HOURS_PER_DAY],
        },
        warnings,
    ))
}

fn linear_cost(row: &Row) -> Result<f64, CaseError> {
    row.require(4, "gencost")?;
    let model = row.values[0] as i64;
    if model != 2 {
        return Err(CaseError::UnsupportedCost {
            line: row.line,
            msg: format!("cost model {model} not supported, only polynomial (2)"),
        });
    }
    let n = row.values[3] as usize;
    row.require(4 + n, "gencost")?;
    let coefs = &row.values[4..4 + n];
    // highest order first
    if n > 2 && coefs[..n - 2].iter().any(|c| *c != 0.0) {
        return Err(CaseError::UnsupportedCost {
            line: row.line,
            msg: "non-linear cost terms are not supported".into(),
        });
    }
    Ok(if n >= 2 { coefs[n - 2] } else { 0.0 })
}

#[derive(Debug)]
struct Row {
    line: usize,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl Row {
    fn error(&self, idx: usize, msg: String) -> CaseError {
        CaseError::Malformed {
            line: self.line,
            col: self.cols.get(idx).copied().unwrap_or(1),
            msg,
        }
    }

    fn require(&self, n: usize, section: &str) -> Result<(), CaseError> {
        if self.values.len() < n {
            return Err(self.error(
                self.values.len().saturating_sub(1),
                format!(
                    "{section} row has {} columns, expected at least {n}",
                    self.values.len()
                ),
            ));
        }
        Ok(())
    }

    fn id(&self, idx: usize) -> Result<usize, CaseError> {
        let v = self.values[idx];
        if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(self.error(idx, format!("expected a positive integer id, got {v}")))
        }
    }
}

#[derive(Default)]
struct Sections {
    scalars: HashMap<String, (f64, usize)>,
    matrices: HashMap<String, Vec<Row>>,
    warnings: Vec<String>,
}

const KNOWN_MATRICES: [&str; 4] = ["bus", "gen", "branch", "gencost"];

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

fn scan_matpower(text: &str) -> Result<Sections, CaseError> {
    let mut out = Sections::default();
    let lines: Vec<&str> = text.lines().collect();
    let mut k = 0;
    while k < lines.len() {
        let line_no = k + 1;
        let line = strip_comment(lines[k]);
        k += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("function") {
            continue;
        }
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            out.warnings
                .push(format!("line {line_no}: ignored `{trimmed}`"));
            continue;
        };
        let Some(eq) = rest.find('=') else {
            return Err(CaseError::Malformed {
                line: line_no,
                col: 1,
                msg: "expected `mpc.<name> = <value>`".into(),
            });
        };
        let name = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        let value_col = line.find('=').map_or(1, |c| c + 2);

        if let Some(body) = value.strip_prefix('[') {
            // matrix literal, possibly spanning many lines
            let offset = line.len() - body.len();
            let mut chunks = vec![(line_no, offset, body.to_string())];
            let mut closed = body.contains(']');
            while !closed {
                if k >= lines.len() {
                    return Err(CaseError::Malformed {
                        line: line_no,
                        col: value_col,
                        msg: format!("unterminated matrix `mpc.{name}`"),
                    });
                }
                let l = strip_comment(lines[k]);
                chunks.push((k + 1, 0, l.to_string()));
                closed = l.contains(']');
                k += 1;
            }
            let rows = parse_matrix(&chunks)?;
            if KNOWN_MATRICES.contains(&name.as_str()) {
                out.matrices.insert(name, rows);
            } else {
                out.warnings
                    .push(format!("line {line_no}: ignored section `mpc.{name}`"));
            }
        } else if value.starts_with('{') {
            // cell arrays (bus names etc.) are skipped
            let mut closed = value.contains('}');
            while !closed && k < lines.len() {
                closed = strip_comment(lines[k]).contains('}');
                k += 1;
            }
            out.warnings
                .push(format!("line {line_no}: ignored section `mpc.{name}`"));
        } else if name == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            let num = v.parse::<f64>().map_err(|_| CaseError::Malformed {
                line: line_no,
                col: value_col,
                msg: format!("cannot parse `{v}` as a number"),
            })?;
            out.scalars.insert(name, (num, line_no));
        } else if name != "version" {
            out.warnings
                .push(format!("line {line_no}: ignored field `mpc.{name}`"));
        }
    }
    Ok(out)
}

fn parse_matrix(chunks: &[(usize, usize, String)]) -> Result<Vec<Row>, CaseError> {
    let mut rows = Vec::new();
    let mut current = Row {
        line: chunks[0].0,
        cols: Vec::new(),
        values: Vec::new(),
    };
    let mut finished = false;
    for (line, offset, text) in chunks {
        if finished {
            break;
        }
        let mut flush = |row: &mut Row, next_line: usize| {
            if !row.values.is_empty() {
                rows.push(std::mem::replace(
                    row,
                    Row {
                        line: next_line,
                        cols: Vec::new(),
                        values: Vec::new(),
                    },
                ));
            } else {
                row.line = next_line;
            }
        };
        let mut token_start: Option<usize> = None;
        let bytes = text.as_bytes();
        let mut idx = 0;
        while idx <= bytes.len() {
            let c = if idx < bytes.len() {
                bytes[idx] as char
            } else {
                '\n'
            };
            let is_sep = c.is_whitespace() || c == ',' || c == ';' || c == ']';
            if is_sep {
                if let Some(s) = token_start.take() {
                    let tok = &text[s..idx];
                    let col = offset + s + 1;
                    let v = tok.parse::<f64>().map_err(|_| CaseError::Malformed {
                        line: *line,
                        col,
                        msg: format!("cannot parse `{tok}` as a number"),
                    })?;
                    current.cols.push(col);
                    current.values.push(v);
                }
                if c == ';' {
                    flush(&mut current, *line);
                }
                if c == ']' {
                    flush(&mut current, *line);
                    finished = true;
                    break;
                }
            } else if token_start.is_none() {
                token_start = Some(idx);
            }
            idx += 1;
        }
        // a newline also ends a row
        flush(&mut current, line + 1);
    }
    let widths: Vec<usize> = rows.iter().map(|r| r.values.len()).collect();
    if let Some(&w) = widths.first() {
        if let Some(bad) = rows.iter().find(|r| r.values.len() != w) {
            return Err(CaseError::Malformed {
                line: bad.line,
                col: bad.cols.last().copied().unwrap_or(1),
                msg: format!(
                    "row has {} columns, previous rows have {w}",
                    bad.values.len()
                ),
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Native format

/// Self-describing JSON case document. Powers are in MW / MVAr, costs in
/// currency per MWh, impedances in pu on `base_mva`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeCaseDocument {
    pub schema_version: String,
    pub base_mva: f64,
    #[serde(default = "default_base_kv")]
    pub base_kv: f64,
    pub buses: Vec<NativeBus>,
    pub branches: Vec<NativeBranch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<NativeGenerator>,
    #[serde(default)]
    pub capacitors: Vec<NativeCapacitor>,
    #[serde(default)]
    pub dgs: Vec<NativeGenerator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
    #[serde(default)]
    pub costs: NativeCosts,
}

fn default_base_kv() -> f64 {
    DEFAULT_BASE_KV
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeBus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default)]
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_min() -> f64 {
    0.9
}

fn default_v_max() -> f64 {
    1.1
}

/// Missing limits mean unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeBranch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max_mva: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_mvar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeGenerator {
    pub bus: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    #[serde(default)]
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeCapacitor {
    pub bus: usize,
    pub q_max_mvar: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NativeCosts {
    /// Exchange price at the substation, per MWh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substation: Option<f64>,
}

fn opt_limit(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn parse_native(text: &str) -> Result<Network, CaseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: NativeCaseDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CaseError::schema(path, e.into_inner().to_string())
    })?;
    document_to_network(&doc)
}

pub fn document_to_network(doc: &NativeCaseDocument) -> Result<Network, CaseError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CaseError::schema(
            "schema_version",
            format!(
                "unrecognized version `{}`, expected `{SCHEMA_VERSION}`",
                doc.schema_version
            ),
        ));
    }
    if !(doc.base_mva > 0.0 && doc.base_mva.is_finite()) {
        return Err(CaseError::schema("base_mva", "must be positive"));
    }
    let pu = PerUnit {
        base_mva: doc.base_mva,
        base_kv: doc.base_kv,
    };

    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(doc.buses.len());
    for (k, b) in doc.buses.iter().enumerate() {
        if index.insert(b.id, k).is_some() {
            return Err(CaseError::schema(
                format!("buses[{k}].id"),
                format!("duplicate bus id {}", b.id),
            ));
        }
        buses.push(Bus {
            id: b.id,
            kind: b.kind,
            p_load: pu.power_to_pu(b.p_mw),
            q_load: pu.power_to_pu(b.q_mvar),
            v_min: b.v_min,
            v_max: b.v_max,
            cap_q_max: 0.0,
        });
    }
    let sub_id = buses
        .iter()
        .find(|b| b.kind == BusKind::Substation)
        .map(|b| b.id)
        .ok_or_else(|| CaseError::schema("buses", "no substation bus"))?;
    let resolve = |path: String, id: usize| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| CaseError::schema(path, format!("unknown bus {id}")))
    };

    let mut branches = Vec::with_capacity(doc.branches.len());
    for (k, b) in doc.branches.iter().enumerate() {
        resolve(format!("branches[{k}].from"), b.from)?;
        resolve(format!("branches[{k}].to"), b.to)?;
        branches.push(Branch {
            from_bus: b.from,
            to_bus: b.to,
            r: b.r_pu,
            x: b.x_pu,
            b_shunt: b.b_pu,
            s_max: pu.power_to_pu(opt_limit(b.s_max_mva)),
            p_max: pu.power_to_pu(opt_limit(b.p_max_mw)),
            q_max: pu.power_to_pu(opt_limit(b.q_max_mvar)),
        });
    }

    let substation_cost_mwh = doc
        .costs
        .substation
        .or_else(|| {
            doc.generators
                .iter()
                .find(|g| g.bus == sub_id)
                .map(|g| g.cost)
        })
        .unwrap_or(0.0);
    let to_gen = |g: &NativeGenerator| Generator {
        bus: g.bus,
        p_min: pu.power_to_pu(g.p_min_mw),
        p_max: pu.power_to_pu(g.p_max_mw),
        q_min: pu.power_to_pu(g.q_min_mvar),
        q_max: pu.power_to_pu(g.q_max_mvar),
        cost: pu.cost_to_pu(g.cost),
    };
    let mut generators = Vec::new();
    for (k, g) in doc.generators.iter().enumerate() {
        resolve(format!("generators[{k}].bus"), g.bus)?;
        generators.push(to_gen(g));
    }
    if !generators.iter().any(|g| g.bus == sub_id) {
        generators.insert(
            0,
            substation_generator(sub_id, pu.cost_to_pu(substation_cost_mwh)),
        );
    }
    for (k, g) in doc.dgs.iter().enumerate() {
        resolve(format!("dgs[{k}].bus"), g.bus)?;
        if g.p_min_mw > g.p_max_mw || g.q_min_mvar > g.q_max_mvar {
            return Err(CaseError::schema(format!("dgs[{k}]"), "inverted limits"));
        }
        generators.push(to_gen(g));
    }

    for (k, c) in doc.capacitors.iter().enumerate() {
        let pos = resolve(format!("capacitors[{k}].bus"), c.bus)?;
        if c.q_max_mvar < 0.0 {
            return Err(CaseError::schema(
                format!("capacitors[{k}].q_max_mvar"),
                "must be non-negative",
            ));
        }
        if buses[pos].cap_q_max != 0.0 {
            return Err(CaseError::schema(
                format!("capacitors[{k}].bus"),
                format!("second capacitor bank at bus {}", c.bus),
            ));
        }
        buses[pos].cap_q_max = pu.power_to_pu(c.q_max_mvar);
    }

    let load_profile = match &doc.profile {
        None => vec![1.0; HOURS_PER_DAY],
        Some(p) if p.len() == HOURS_PER_DAY => p.clone(),
        Some(p) => {
            return Err(CaseError::schema(
                "profile",
                format!("expected {HOURS_PER_DAY} multipliers, got {}", p.len()),
            ))
        }
    };

    Ok(Network {
        buses,
        branches,
        generators,
        base_mva: doc.base_mva,
        base_kv: doc.base_kv,
        substation_cost: pu.cost_to_pu(substation_cost_mwh),
        load_profile,
    })
}

pub fn network_to_document(net: &Network) -> NativeCaseDocument {
    let pu = net.per_unit();
    let sub_id = net.substation_id();
    let to_native = |g: &Generator| NativeGenerator {
        bus: g.bus,
        p_min_mw: pu.power_from_pu(g.p_min),
        p_max_mw: pu.power_from_pu(g.p_max),
        q_min_mvar: pu.power_from_pu(g.q_min),
        q_max_mvar: pu.power_from_pu(g.q_max),
        cost: pu.cost_from_pu(g.cost),
    };
    let (sub_gens, dgs): (Vec<_>, Vec<_>) =
        net.generators.iter().partition(|g| Some(g.bus) == sub_id);
    NativeCaseDocument {
        schema_version: SCHEMA_VERSION.into(),
        base_mva: net.base_mva,
        base_kv: net.base_kv,
        buses: net
            .buses
            .iter()
            .map(|b| NativeBus {
                id: b.id,
                kind: b.kind,
                p_mw: pu.power_from_pu(b.p_load),
                q_mvar: pu.power_from_pu(b.q_load),
                v_min: b.v_min,
                v_max: b.v_max,
            })
            .collect(),
        branches: net
            .branches
            .iter()
            .map(|b| NativeBranch {
                from: b.from_bus,
                to: b.to_bus,
                r_pu: b.r,
                x_pu: b.x,
                b_pu: b.b_shunt,
                s_max_mva: finite_or_none(pu.power_from_pu(b.s_max)),
                p_max_mw: finite_or_none(pu.power_from_pu(b.p_max)),
                q_max_mvar: finite_or_none(pu.power_from_pu(b.q_max)),
            })
            .collect(),
        generators: sub_gens.into_iter().map(to_native).collect(),
        capacitors: net
            .buses
            .iter()
            .filter(|b| b.cap_q_max > 0.0)
            .map(|b| NativeCapacitor {
                bus: b.id,
                q_max_mvar: pu.power_from_pu(b.cap_q_max),
            })
            .collect(),
        dgs: dgs.into_iter().map(to_native).collect(),
        profile: (net.load_profile.iter().any(|m| *m != 1.0)).then(|| net.load_profile.clone()),
        costs: NativeCosts {
            substation: Some(pu.cost_from_pu(net.substation_cost)),
        },
    }
}

pub fn emit_native(net: &Network) -> String {
    let mut s = serde_json::to_string_pretty(&network_to_document(net))
        .expect("case documents always serialize");
    s.push('\n');
    s
}

/// Reads a case file, choosing the parser from the extension (`.m` is
/// MATPOWER, anything else native JSON).
pub fn read_case(path: &std::path::Path) -> Result<Network, ReadCaseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReadCaseError::Io(path.display().to_string(), e))?;
    let parsed = if path.extension().is_some_and(|e| e == "m") {
        parse_matpower(&text)
    } else {
        parse_native(&text)
    };
    parsed.map_err(|e| ReadCaseError::Parse(path.display().to_string(), e))
}

#[derive(Debug, Error)]
pub enum ReadCaseError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Parse(String, CaseError),
}

/// The bundled 33-bus feeder with default DGs, capacitors and profile.
pub fn case33() -> Network {
    parse_native(CASE33_NATIVE).expect("bundled case parses")
}

/// Field-wise comparison with a relative tolerance on every real value.
pub fn networks_close(a: &Network, b: &Network, rel: f64) -> bool {
    fn close(x: f64, y: f64, rel: f64) -> bool {
        x == y || (x - y).abs() <= rel * x.abs().max(y.abs())
    }
    let buses = a.buses.len() == b.buses.len()
        && a.buses.iter().zip(&b.buses).all(|(x, y)| {
            x.id == y.id
                && x.kind == y.kind
                && close(x.p_load, y.p_load, rel)
                && close(x.q_load, y.q_load, rel)
                && close(x.v_min, y.v_min, rel)
                && close(x.v_max, y.v_max, rel)
                && close(x.cap_q_max, y.cap_q_max, rel)
        });
    let branches = a.branches.len() == b.branches.len()
        && a.branches.iter().zip(&b.branches).all(|(x, y)| {
            x.from_bus == y.from_bus
                && x.to_bus == y.to_bus
                && close(x.r, y.r, rel)
                && close(x.x, y.x, rel)
                && close(x.b_shunt, y.b_shunt, rel)
                && close(x.s_max, y.s_max, rel)
                && close(x.p_max, y.p_max, rel)
                && close(x.q_max, y.q_max, rel)
        });
    let gens = a.generators.len() == b.generators.len()
        && a.generators.iter().zip(&b.generators).all(|(x, y)| {
            x.bus == y.bus
                && close(x.p_min, y.p_min, rel)
                && close(x.p_max, y.p_max, rel)
                && close(x.q_min, y.q_min, rel)
                && close(x.q_max, y.q_max, rel)
                && close(x.cost, y.cost, rel)
        });
    buses
        && branches
        && gens
        && close(a.base_mva, b.base_mva, rel)
        && close(a.base_kv, b.base_kv, rel)
        && close(a.substation_cost, b.substation_cost, rel)
        && a.load_profile.len() == b.load_profile.len()
        && a.load_profile
            .iter()
            .zip(&b.load_profile)
            .all(|(x, y)| close(*x, *y, rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::two_bus;
    use proptest::prelude::*;

    const MINI: &str = "
function mpc = mini
mpc.version = '2';
mpc.baseMVA = 10;
mpc.bus = [
    1  3  0    0   0 0 1 1 0 12.66 1 1.1 0.9;
    2  1  100  20  0 0 1 1 0 12.66 1 1.1 0.9;
];
mpc.gen = [
    1  0 0 100 -100 1 100 1 100 -100;
];
mpc.branch = [
    1  2  0.01  0.02  0  5  5  5  0  0  1  -360  360;
];
mpc.gencost = [
    2  0  0  2  50  0;
];
";

    #[test]
    fn bundled_matpower_counts() {
        let net = parse_matpower(CASE33_MATPOWER).unwrap();
        assert_eq!(net.buses.len(), 33);
        assert_eq!(net.branches.len(), 32);
        assert_eq!(net.generators.len(), 1);
        let (p, q) = net.total_load();
        assert!((p - 0.3715).abs() < 1e-12 && (q - 0.23).abs() < 1e-12);
        assert!(net.validate().is_empty(), "{:?}", net.validate());
        assert!((net.substation_cost - 500.0).abs() < 1e-12);
    }

    #[test]
    fn bundled_native_matches_matpower_core() {
        let native = case33();
        let mp = parse_matpower(CASE33_MATPOWER).unwrap();
        assert!(native.validate().is_empty(), "{:?}", native.validate());
        assert_eq!(native.branches, mp.branches);
        for (a, b) in native.buses.iter().zip(&mp.buses) {
            assert!((a.p_load - b.p_load).abs() < 1e-15 && (a.q_load - b.q_load).abs() < 1e-15);
        }
        assert_eq!(native.generators.len(), 5);
        assert_eq!(native.generators[0], mp.generators[0]);
    }

    #[test]
    fn capacitors_in_pu() {
        let net = case33();
        for id in [10, 20, 30] {
            let b = net.buses.iter().find(|b| b.id == id).unwrap();
            assert!((b.cap_q_max - 0.1).abs() < 1e-15);
        }
        assert_eq!(net.buses.iter().filter(|b| b.cap_q_max > 0.0).count(), 3);
    }

    #[test]
    fn load_divided_by_base() {
        let net = parse_matpower(MINI).unwrap();
        assert_eq!(net.buses[1].p_load, 10.0);
        assert_eq!(net.buses[1].q_load, 2.0);
        assert_eq!(net.branches[0].s_max, 0.5);
    }

    #[test]
    fn missing_bus_section() {
        let text = MINI.replace("mpc.bus =", "mpc.buses =");
        let err = parse_matpower(&text).unwrap_err();
        assert!(matches!(err, CaseError::MissingSection("bus")), "{err}");
        assert!(err.to_string().contains("mpc.bus"));
    }

    #[test]
    fn malformed_row_has_position() {
        let text = MINI.replace("2  1  100  20", "2  1  1x0  20");
        match parse_matpower(&text).unwrap_err() {
            CaseError::Malformed { line, col, .. } => {
                assert_eq!(line, 7);
                assert_eq!(col, 11);
            }
            e => panic!("unexpected {e}"),
        }
        let text = MINI.replace("2  1  100  20  0 0 1 1 0 12.66 1 1.1 0.9;", "2 1 100;");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::Malformed { line: 7, .. })
        ));
    }

    #[test]
    fn structural_errors() {
        let text = MINI.replace("1  3  0", "1  1  0");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::NoSubstation)
        ));
        let text = MINI.replace("2  1  100", "1  1  100");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::DuplicateBus { id: 1, line: 7 })
        ));
        let text = MINI.replace("2  0  0  2  50  0", "2  0  0  3  0.1  50  0");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::UnsupportedCost { .. })
        ));
        // a zero quadratic coefficient is still linear
        let text = MINI.replace("2  0  0  2  50  0", "2  0  0  3  0  50  0");
        assert!(parse_matpower(&text).is_ok());
    }

    #[test]
    fn unknown_fields_warn() {
        let text = format!("{MINI}\nmpc.areas = [1 1];\nmpc.bus_name = {{\n 'a';\n 'b';\n}};\n");
        let (net, warnings) = parse_matpower_with_warnings(&text).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert!(warnings.iter().any(|w| w.contains("areas")));
        assert!(warnings.iter().any(|w| w.contains("bus_name")));
    }

    #[test]
    fn scientific_notation_and_commas() {
        let text = MINI.replace("0.01  0.02", "1e-2, 2.0E-2");
        let net = parse_matpower(&text).unwrap();
        assert_eq!(net.branches[0].r, 0.01);
        assert_eq!(net.branches[0].x, 0.02);
    }

    #[test]
    fn native_defaults() {
        let doc = r#"{
            "schema_version": "1.0", "base_mva": 10,
            "buses": [{"id": 1, "kind": "substation"}, {"id": 2, "kind": "pq", "p_mw": 10, "q_mvar": 5}],
            "branches": [{"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.02, "s_max_mva": 100}]
        }"#;
        let net = parse_native(doc).unwrap();
        assert_eq!(net.generators.len(), 1);
        assert_eq!(net.generators[0].bus, 1);
        assert_eq!(net.load_profile, vec![1.0; 24]);
        assert_eq!(net.buses[1].p_load, 1.0);
        assert!(net.validate().is_empty());
    }

    #[test]
    fn native_schema_errors_carry_paths() {
        let doc = r#"{"schema_version": "1.0", "base_mva": 10,
            "buses": [{"id": 1, "kind": "substation"}, {"id": 2, "kind": "bogus"}], "branches": []}"#;
        match parse_native(doc).unwrap_err() {
            CaseError::Schema { path, .. } => assert_eq!(path, "buses[1].kind"),
            e => panic!("{e}"),
        }
        let doc = r#"{"schema_version": "1.0", "base_mva": 10,
            "buses": [{"id": 1, "kind": "substation"}],
            "branches": [], "capacitors": [{"bus": 7, "q_max_mvar": 1}]}"#;
        match parse_native(doc).unwrap_err() {
            CaseError::Schema { path, .. } => assert_eq!(path, "capacitors[0].bus"),
            e => panic!("{e}"),
        }
        let doc = r#"{"schema_version": "9", "base_mva": 10, "buses": [], "branches": []}"#;
        assert!(
            matches!(parse_native(doc), Err(CaseError::Schema { path, .. }) if path == "schema_version")
        );
    }

    #[test]
    fn minimal_two_bus_document() {
        let net = two_bus(0.01, 0.02, 1.0, 0.5);
        let doc = network_to_document(&net);
        assert_eq!(doc.buses.len(), 2);
        assert_eq!(doc.branches.len(), 1);
        assert!(doc.profile.is_none());
        let mut explicit = doc.clone();
        explicit.profile = Some(vec![1.0; 24]);
        assert_eq!(
            document_to_network(&explicit).unwrap(),
            document_to_network(&doc).unwrap()
        );
    }

    #[test]
    fn case33_round_trip() {
        let net = case33();
        let back = parse_native(&emit_native(&net)).unwrap();
        assert!(networks_close(&net, &back, 1e-14));
    }

    proptest! {
        #[test]
        fn native_round_trip(
            loads in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..0.3), 1..8),
            rx in (1e-4f64..0.2, 1e-4f64..0.2),
            profile in proptest::collection::vec(0.0f64..1.5, 24),
            base in 1.0f64..200.0,
        ) {
            let mut net = two_bus(rx.0, rx.1, 0.0, 0.0);
            net.base_mva = base;
            net.buses.truncate(1);
            net.branches.clear();
            for (k, &(p, q, c)) in loads.iter().enumerate() {
                let mut b = Bus::pq(k + 2, p, q);
                b.cap_q_max = c;
                net.buses.push(b);
                net.branches.push(Branch::new(k + 1, k + 2, rx.0, rx.1, 3.0));
                net.generators.push(Generator { bus: k + 2, p_min: 0.0, p_max: p, q_min: -q, q_max: q, cost: 7.0 * base });
            }
            net.load_profile = profile;
            let back = parse_native(&emit_native(&net)).unwrap();
            prop_assert!(networks_close(&net, &back, 1e-12));
        }
    }
}
