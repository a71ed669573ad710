//! System files, network/result serialization and SPICE netlist export.
//!
//! # System JSON
//!
//! ```json
//! {
//!   "n": 2,
//!   "A": {"format": "dense", "values": [["5", "2"], ["2", "4"]]},
//!   "b": ["1", "1"],
//!   "units": {"A": "uS", "b": "uA"},
//!   "label": "optional",
//!   "x_true": ["optional reference solution"]
//! }
//! ```
//!
//! Numbers may be JSON numbers or decimal strings; the writer emits strings
//! with 17 significant digits so values survive any JSON implementation
//! bit for bit. Sparse input uses `{"format": "coo", "entries": [[i, j, v],
//! ...]}` with 0-based indices; duplicate `(i, j)` entries are summed, and
//! `"symmetric": true` mirrors every off-diagonal entry (lower or upper
//! triangle only on input). Accepted units: `S`, `mS`, `uS` for `A` and
//! `A`, `mA`, `uA` for `b`; values are converted to uS and uA.
//!
//! # Matrix Market
//!
//! `coordinate` (real/integer, general/symmetric) and `array` files for `A`;
//! `b` comes from a separate file, either Matrix Market or plain numbers
//! separated by whitespace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::devices::{Fidelity, OpAmpModel};
use crate::error::{Error, Result};
use crate::linsys::LinearSystem;
use crate::mapping::{ElementKind, Network, Polarity};
use crate::simulate::{SimConfig, SimResult, Trajectory};

/// A parsed system file, with the optional reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemFile {
    pub system: LinearSystem,
    pub x_true: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Num {
    Number(f64),
    Text(String),
}

impl Num {
    fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Num::Number(v) => Ok(*v),
            Num::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {s:?}")),
        }
    }
}

fn text(v: f64) -> Num {
    Num::Text(format!("{v:.16e}"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
enum MatrixDoc {
    Dense {
        values: Vec<Vec<Num>>,
    },
    Coo {
        entries: Vec<(usize, usize, Num)>,
        #[serde(default)]
        symmetric: bool,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct UnitsDoc {
    #[serde(rename = "A", default = "default_a_unit")]
    a: String,
    #[serde(rename = "b", default = "default_b_unit")]
    b: String,
}

fn default_a_unit() -> String {
    "uS".into()
}

fn default_b_unit() -> String {
    "uA".into()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    n: usize,
    #[serde(rename = "A")]
    a: MatrixDoc,
    b: Vec<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<UnitsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_true: Option<Vec<Num>>,
}

fn unit_scale(unit: &str, base: char) -> Option<f64> {
    let (prefix, rest) = unit.split_at(unit.len().saturating_sub(1));
    if !rest.starts_with(base) {
        return None;
    }
    match prefix {
        "" => Some(1e6),
        "m" => Some(1e3),
        "u" | "\u{b5}" => Some(1.0),
        _ => None,
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: message.into(),
    }
}

/// Parses the JSON system schema from a string. `path` only labels errors.
pub fn parse_system_json(source: &str, path: &Path) -> Result<SystemFile> {
    let doc: SystemDoc = serde_json::from_str(source).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let n = doc.n;
    let (sa, sb) = match &doc.units {
        Some(u) => (
            unit_scale(&u.a, 'S').ok_or_else(|| invalid(path, format!("unknown unit for A: {}", u.a)))?,
            unit_scale(&u.b, 'A').ok_or_else(|| invalid(path, format!("unknown unit for b: {}", u.b)))?,
        ),
        None => (1.0, 1.0),
    };
    let num = |v: &Num, what: &str| v.value().map_err(|m| invalid(path, format!("{what}: {m}")));

    let mut a = DMatrix::zeros(n, n);
    match &doc.a {
        MatrixDoc::Dense { values } => {
            if values.len() != n {
                return Err(invalid(path, format!("A has {} rows, n = {n}", values.len())));
            }
            for (i, row) in values.iter().enumerate() {
                if row.len() != n {
                    return Err(invalid(path, format!("A row {i} has {} entries, n = {n}", row.len())));
                }
                for (j, v) in row.iter().enumerate() {
                    a[(i, j)] = num(v, &format!("A[{i}][{j}]"))? * sa;
                }
            }
        }
        MatrixDoc::Coo { entries, symmetric } => {
            for (k, (i, j, v)) in entries.iter().enumerate() {
                if *i >= n || *j >= n {
                    return Err(invalid(path, format!("A entry {k}: index ({i}, {j}) outside {n}x{n}")));
                }
                let v = num(v, &format!("A entry {k}"))? * sa;
                a[(*i, *j)] += v;
                if *symmetric && i != j {
                    a[(*j, *i)] += v;
                }
            }
        }
    }
    if doc.b.len() != n {
        return Err(invalid(path, format!("b has {} entries, n = {n}", doc.b.len())));
    }
    let b = doc
        .b
        .iter()
        .enumerate()
        .map(|(i, v)| Ok(num(v, &format!("b[{i}]"))? * sb))
        .collect::<Result<Vec<f64>>>()?;
    let x_true = match &doc.x_true {
        Some(x) if x.len() != n => {
            return Err(invalid(path, format!("x_true has {} entries, n = {n}", x.len())))
        }
        Some(x) => Some(DVector::from_vec(
            x.iter()
                .enumerate()
                .map(|(i, v)| num(v, &format!("x_true[{i}]")))
                .collect::<Result<Vec<f64>>>()?,
        )),
        None => None,
    };
    let label = doc
        .label
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let system = LinearSystem::try_new(a, DVector::from_vec(b), label)?;
    Ok(SystemFile { system, x_true })
}

/// Dense JSON with every number written as a 17-digit decimal string.
pub fn system_to_json(sys: &LinearSystem, x_true: Option<&DVector<f64>>) -> Result<String> {
    let n = sys.n();
    let doc = SystemDoc {
        n,
        a: MatrixDoc::Dense {
            values: (0..n).map(|i| (0..n).map(|j| text(sys.a[(i, j)])).collect()).collect(),
        },
        b: sys.b.iter().map(|&v| text(v)).collect(),
        units: Some(UnitsDoc {
            a: default_a_unit(),
            b: default_b_unit(),
        }),
        label: (!sys.label.is_empty()).then(|| sys.label.clone()),
        x_true: x_true.map(|x| x.iter().map(|&v| text(v)).collect()),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Reads a system from `path`. `.json` files use the JSON schema; `.mtx`
/// files need a right-hand side, taken from `<stem>_b.mtx` or `<stem>.rhs`
/// next to the matrix (see [`parse_matrix_market_system`] to name it).
pub fn parse_system(path: &Path) -> Result<SystemFile> {
    let is_mtx = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mtx") || e.eq_ignore_ascii_case("mm"));
    if is_mtx {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let dir = path.parent().unwrap_or(Path::new("."));
        let rhs = [format!("{stem}_b.mtx"), format!("{stem}.rhs")]
            .into_iter()
            .map(|f| dir.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| invalid(path, format!("no right-hand side found ({stem}_b.mtx or {stem}.rhs)")))?;
        return parse_matrix_market_system(path, &rhs);
    }
    let source = fs::read_to_string(path)?;
    parse_system_json(&source, path)
}

/// Reads `A` from a Matrix Market file and `b` from `rhs`.
pub fn parse_matrix_market_system(matrix: &Path, rhs: &Path) -> Result<SystemFile> {
    let a = parse_matrix_market(&fs::read_to_string(matrix)?, matrix)?;
    let b = parse_vector(&fs::read_to_string(rhs)?, rhs)?;
    let label = matrix.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let system = LinearSystem::try_new(a, DVector::from_vec(b), label)?;
    Ok(SystemFile { system, x_true: None })
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Parses a real Matrix Market matrix into dense storage; symmetric files
/// are expanded to both triangles.
pub fn parse_matrix_market(source: &str, path: &Path) -> Result<DMatrix<f64>> {
    let err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut lines = source.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (hline, header) = lines.next().ok_or_else(|| err(1, 1, "empty file".into()))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(err(hline, 1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'".into()));
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        f => return Err(err(hline, 1, format!("unsupported format {f}"))),
    };
    if !matches!(tokens[3].as_str(), "real" | "integer" | "double") {
        return Err(err(hline, 1, format!("unsupported field {}", tokens[3])));
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        s => return Err(err(hline, 1, format!("unsupported symmetry {s}"))),
    };
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sline, size) = body.next().ok_or_else(|| err(hline + 1, 1, "missing size line".into()))?;
    let dims = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(sline, 1, format!("bad size line: {e}")))?;
    let want = if coordinate { 3 } else { 2 };
    if dims.len() != want {
        return Err(err(sline, 1, format!("size line needs {want} integers")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut a = DMatrix::zeros(rows, cols);
    let field = |line: usize, tok: Option<(usize, &str)>, what: &str| -> Result<f64> {
        let (col, t) = tok.ok_or_else(|| err(line, 1, format!("missing {what}")))?;
        t.parse::<f64>()
            .map_err(|_| err(line, col + 1, format!("bad {what}: {t:?}")))
    };
    let tokens_of = |l: &str| -> Vec<(usize, String)> {
        let mut out = Vec::new();
        let mut start = None;
        for (k, c) in l.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(k),
                (true, Some(s)) => {
                    out.push((s, l[s..k].to_string()));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, l[s..].to_string()));
        }
        out
    };
    if coordinate {
        let nnz = dims[2];
        let mut seen = 0;
        for (line, l) in body {
            let toks = tokens_of(l);
            let mut it = toks.iter().map(|(c, t)| (*c, t.as_str()));
            let i = field(line, it.next(), "row index")?;
            let j = field(line, it.next(), "column index")?;
            let v = field(line, it.next(), "value")?;
            let (i, j) = (i as usize, j as usize);
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(err(line, 1, format!("index ({i}, {j}) outside {rows}x{cols}")));
            }
            a[(i - 1, j - 1)] += v;
            if symmetry == Symmetry::Symmetric && i != j {
                a[(j - 1, i - 1)] += v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(err(sline, 1, format!("expected {nnz} entries, found {seen}")));
        }
    } else {
        // Column-major; symmetric arrays list the lower triangle only.
        let mut slots = Vec::new();
        for j in 0..cols {
            let start = if symmetry == Symmetry::Symmetric { j } else { 0 };
            for i in start..rows {
                slots.push((i, j));
            }
        }
        let mut k = 0;
        for (line, l) in body {
            for (c, t) in tokens_of(l) {
                let v = field(line, Some((c, &t)), "value")?;
                let &(i, j) = slots
                    .get(k)
                    .ok_or_else(|| err(line, c + 1, "more values than the size line allows".into()))?;
                a[(i, j)] = v;
                if symmetry == Symmetry::Symmetric {
                    a[(j, i)] = v;
                }
                k += 1;
            }
        }
        if k != slots.len() {
            return Err(err(sline, 1, format!("expected {} values, found {k}", slots.len())));
        }
    }
    Ok(a)
}

/// A vector from a Matrix Market file (array or single-column coordinate)
/// or from bare whitespace-separated numbers.
pub fn parse_vector(source: &str, path: &Path) -> Result<Vec<f64>> {
    if source.trim_start().starts_with("%%") {
        let m = parse_matrix_market(source, path)?;
        if m.ncols() != 1 && m.nrows() != 1 {
            return Err(invalid(path, format!("expected a vector, found {}x{}", m.nrows(), m.ncols())));
        }
        return Ok(m.iter().copied().collect());
    }
    let mut out = Vec::new();
    for (k, line) in source.lines().enumerate() {
        let body = line.split('%').next().unwrap_or("");
        for t in body.split_whitespace() {
            out.push(t.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                column: line.find(t).unwrap_or(0) + 1,
                message: format!("bad number {t:?}"),
            })?);
        }
    }
    Ok(out)
}

/// Writes `A` as a Matrix Market coordinate file (symmetric storage when
/// `A` is exactly symmetric).
pub fn matrix_market_string(a: &DMatrix<f64>) -> String {
    let symmetric = a.is_square() && (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == a[(j, i)]));
    let mut entries = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != 0.0 && (!symmetric || i >= j) {
                entries.push((i + 1, j + 1, a[(i, j)]));
            }
        }
    }
    let mut s = format!(
        "%%MatrixMarket matrix coordinate real {}\n{} {} {}\n",
        if symmetric { "symmetric" } else { "general" },
        a.nrows(),
        a.ncols(),
        entries.len()
    );
    for (i, j, v) in entries {
        let _ = writeln!(s, "{i} {j} {v:.16e}");
    }
    s
}

pub fn network_to_json(net: &Network) -> Result<String> {
    Ok(serde_json::to_string_pretty(net)?)
}

pub fn network_from_json(source: &str) -> Result<Network> {
    Ok(serde_json::from_str(source)?)
}

pub fn result_to_json(result: &SimResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(result)?)
}

/// Trajectory as CSV: `time,v1..vN[,y1..yM]`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let nodes = traj.nodes.first().map_or(0, Vec::len);
    let amps = traj.amps.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=nodes).map(|k| format!("v{k}")));
    header.extend((1..=amps).map(|k| format!("y{k}")));
    out.write_record(&header)?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(traj.nodes[k].iter().map(f64::to_string));
        if let Some(y) = traj.amps.get(k) {
            rec.extend(y.iter().map(f64::to_string));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn node(k: usize) -> String {
    if k == 0 {
        "0".into()
    } else {
        format!("n{k}")
    }
}

fn ohms(g_us: f64) -> String {
    format!("{:.16e}", 1e6 / g_us)
}

fn subckt_name(m: &OpAmpModel) -> String {
    let clean: String = m
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("opamp_{clean}")
}

/// Single-pole amplifier with input offset, slew limit and output rails,
/// written with behavioral sources understood by ngspice and LTspice.
fn opamp_subckt(m: &OpAmpModel) -> String {
    // Internal pole node: gm = A0 / R into R || C; slew = Imax / C.
    let r = 1e3;
    let gm = m.dc_gain / r;
    let c = m.dc_gain / (2.0 * std::f64::consts::PI * m.gbw * r);
    let imax = m.slew * c;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "* {}: offset {:e} V, GBW {:e} Hz, slew {:e} V/s, rails +/-{} V, DC gain {:e}",
        m.name, m.v_offset, m.gbw, m.slew, m.rails, m.dc_gain
    );
    let _ = writeln!(s, ".subckt {} inp inn out", subckt_name(m));
    let _ = writeln!(s, "VOS pos inp DC {:e}", m.v_offset);
    let _ = writeln!(
        s,
        "BGM 0 pole I=max(min({gm:e}*(V(pos)-V(inn)), {imax:e}), -{imax:e})"
    );
    let _ = writeln!(s, "RP pole 0 {r:e}");
    let _ = writeln!(s, "CP pole 0 {c:e}");
    let _ = writeln!(s, "BOUT out 0 V=max(min(V(pole), {r:e}), -{r:e})", r = m.rails);
    let _ = writeln!(s, ".ends {}", subckt_name(m));
    s
}

/// Deterministic SPICE3-style netlist of `net`.
///
/// Cards, in element order:
/// * `R<k>`: positive resistor, ground tie or supply branch (to `vp`/`vn`).
/// * Ideal negative resistance: `G<k> a b a b -g`, a VCCS that draws
///   `-g (v_a - v_b)` from node `a`.
/// * Dynamic negative resistance: four amplifier instances `X<k>BA`,
///   `X<k>BB` (followers), `X<k>SA`, `X<k>SB` (gain-2 stages), two `k`
///   resistors `R<k>KA`/`R<k>KB` and four gain resistors `R<k>G1..4`, with
///   internal nodes `e<k>_ba`, `e<k>_bb`, `e<k>_sa`, `e<k>_sb`, `e<k>_da`,
///   `e<k>_db`.
///
/// Supplies step from 0 to the rail at `step_time`; one `.tran` directive
/// covers the configured run.
pub fn export_netlist(net: &Network, fidelity: &Fidelity, cfg: &SimConfig) -> Result<String> {
    let problems = net.check();
    if !problems.is_empty() {
        return Err(Error::Unsupported(format!("network fails checks: {}", problems.join("; "))));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "* resmap {} network: {} unknowns, {} nodes, alpha {}",
        net.design,
        net.unknowns,
        net.dim(),
        net.alpha
    );
    let n = net.unknowns;
    match net.design {
        crate::mapping::Design::Preliminary => {
            let _ = writeln!(s, "* nodes n1..n{n} carry x");
        }
        crate::mapping::Design::Proposed => {
            let _ = writeln!(s, "* nodes n1..n{n} carry x, n{}..n{} carry -x", n + 1, 2 * n);
        }
    }
    let mut uses = [false, false];
    for (k, e) in net.elements.iter().enumerate() {
        let (a, b) = (node(e.i), node(e.j));
        match e.kind {
            ElementKind::PositiveResistor | ElementKind::GroundTie => {
                let _ = writeln!(s, "R{k} {a} {b} {}", ohms(e.conductance));
            }
            ElementKind::SupplyBranch { polarity } => {
                let rail = match polarity {
                    Polarity::Positive => {
                        uses[0] = true;
                        "vp"
                    }
                    Polarity::Negative => {
                        uses[1] = true;
                        "vn"
                    }
                };
                let _ = writeln!(s, "R{k} {a} {rail} {}", ohms(e.conductance));
            }
            ElementKind::NegativeResistance => match fidelity {
                Fidelity::Ideal => {
                    let _ = writeln!(s, "G{k} {a} {b} {a} {b} {:.16e}", -e.conductance * 1e-6);
                }
                Fidelity::Dynamic(m) => {
                    let sub = subckt_name(m);
                    let p = |x: &str| format!("e{k}_{x}");
                    let _ = writeln!(s, "X{k}BA {a} {} {} {sub}", p("ba"), p("ba"));
                    let _ = writeln!(s, "X{k}BB {b} {} {} {sub}", p("bb"), p("bb"));
                    let _ = writeln!(s, "X{k}SA {a} {} {} {sub}", p("da"), p("sa"));
                    let _ = writeln!(s, "X{k}SB {b} {} {} {sub}", p("db"), p("sb"));
                    let rk = ohms(e.conductance);
                    let rg = ohms(crate::devices::DEFAULT_GAIN_CONDUCTANCE);
                    let _ = writeln!(s, "R{k}KA {} {a} {rk}", p("sa"));
                    let _ = writeln!(s, "R{k}KB {} {b} {rk}", p("sb"));
                    let _ = writeln!(s, "R{k}G1 {} {} {rg}", p("sa"), p("da"));
                    let _ = writeln!(s, "R{k}G2 {} {} {rg}", p("da"), p("bb"));
                    let _ = writeln!(s, "R{k}G3 {} {} {rg}", p("sb"), p("db"));
                    let _ = writeln!(s, "R{k}G4 {} {} {rg}", p("db"), p("ba"));
                }
            },
        }
    }
    let edge = 1e-9_f64.min(cfg.sample_interval / 10.0);
    let long = 10.0 * cfg.t_end;
    for (used, name, v) in [
        (uses[0], "vp", net.supplies.positive),
        (uses[1], "vn", net.supplies.negative),
    ] {
        if used {
            let _ = writeln!(
                s,
                "V{} {name} 0 PULSE(0 {v} {:e} {edge:e} {edge:e} {long:e} {:e})",
                name.to_ascii_uppercase(),
                cfg.step_time,
                2.0 * long
            );
        }
    }
    if let Fidelity::Dynamic(m) = fidelity {
        if net.negative_elements().next().is_some() {
            s.push_str(&opamp_subckt(m));
        }
    }
    let _ = writeln!(s, ".tran {:e} {:e}", cfg.sample_interval, cfg.t_end);
    s.push_str(".end\n");
    Ok(s)
}

/// One two-terminal resistor card read back from a netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistorCard {
    pub name: String,
    pub a: String,
    pub b: String,
    pub ohms: f64,
}

/// Top-level `R` cards of a netlist (subcircuit bodies are skipped).
pub fn resistor_cards(netlist: &str) -> Result<Vec<ResistorCard>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    for (k, line) in netlist.lines().enumerate() {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        if lower.starts_with(".subckt") {
            depth += 1;
        } else if lower.starts_with(".ends") {
            depth = depth.saturating_sub(1);
        } else if depth == 0 && lower.starts_with('r') {
            let f: Vec<&str> = t.split_whitespace().collect();
            let bad = |m: &str| Error::Parse {
                path: PathBuf::from("<netlist>"),
                line: k + 1,
                column: 1,
                message: m.to_string(),
            };
            if f.len() != 4 {
                return Err(bad("resistor card needs name, two nodes and a value"));
            }
            out.push(ResistorCard {
                name: f[0].to_string(),
                a: f[1].to_string(),
                b: f[2].to_string(),
                ohms: f[3].parse().map_err(|_| bad("bad resistance"))?,
            });
        }
    }
    Ok(out)
}

/// Distinct node names used by the cards of a netlist, ground included.
pub fn netlist_nodes(netlist: &str) -> BTreeMap<String, usize> {
    let mut nodes = BTreeMap::new();
    let mut depth = 0usize;
    for line in netlist.lines() {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        if lower.starts_with(".subckt") {
            depth += 1;
            continue;
        }
        if lower.starts_with(".ends") {
            depth = depth.saturating_sub(1);
            continue;
        }
        if depth > 0 || t.is_empty() || t.starts_with('*') || t.starts_with('.') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        let terminals = match lower.as_bytes()[0] {
            b'r' | b'v' => 2,
            b'g' => 4,
            b'x' => 3,
            _ => 0,
        };
        for name in f.iter().skip(1).take(terminals) {
            *nodes.entry(name.to_string()).or_insert(0) += 1;
        }
    }
    nodes
}
