use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use resmap_core::analysis::{
    self, ErrorFloor, MeasuredPower, PowerReport, StudyKind, StudySpec, DEFAULT_AMP_QUIESCENT,
    DEFAULT_SWITCH_QUIESCENT,
};
use resmap_core::devices::DEFAULT_GAIN_CONDUCTANCE;
use resmap_core::io::{self, SystemFile};
use resmap_core::linsys::{self, ConductanceBand, GeneratorSpec, PD_TOL};
use resmap_core::mapping::{self, ComponentCount, ElementKind, Polarity, Stability};
use resmap_core::{linalg, verify, Design, Fidelity, Network, SimConfig, SimResult, TransformedSystem};

use crate::config::{parse_fidelity, Emit, FileConfig, Overrides, Settings};
use crate::{
    Cli, Command, Common, CountCmd, ExportCmd, GenerateCmd, MapCmd, SolveCmd, StudyArg, SweepCmd,
    VerifyCmd,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_UNSTABLE: u8 = 2;

pub fn run(cli: Cli) -> Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Map(c) => map(c, file),
        Command::Solve(c) => solve(c, file),
        Command::Sweep(c) => sweep(c, file),
        Command::Export(c) => export(c, file),
        Command::Verify(c) => verify_cmd(c, file),
        Command::Count(c) => count(c, file),
        Command::Generate(c) => generate(c, file),
    }
}

fn settings(common: &Common, file: FileConfig) -> Result<Settings> {
    common.overrides().resolve(file)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("io: cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("io: cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn fidelity_name(f: &Fidelity) -> String {
    match f {
        Fidelity::Ideal => "ideal".into(),
        Fidelity::Dynamic(m) => m.name.clone(),
    }
}

fn sim_config(s: &Settings, design: Design) -> SimConfig {
    match s.t_end {
        Some(t) => SimConfig::with_t_end(t, s.fidelity.clone()),
        None => SimConfig::for_design(design, s.fidelity.clone()),
    }
}

/// A mapped network together with what the mapper learned about it.
struct Mapped {
    system: SystemFile,
    network: Network,
    transformed: Option<TransformedSystem>,
    stability: Option<Stability>,
    /// The loaded nodal matrix (supply branches included) is positive definite.
    pd_loaded: bool,
}

fn map_input(path: &Path, s: &Settings) -> Result<Mapped> {
    let system = io::parse_system(path)?;
    let (network, transformed, stability) = match s.design {
        Design::Preliminary => (mapping::map_preliminary(&system.system, &s.map)?, None, None),
        Design::Proposed => {
            let m = mapping::map_proposed(&system.system, &s.map)?;
            (m.network, Some(m.transformed), Some(m.stability))
        }
    };
    let pd_loaded = match &stability {
        Some(st) => st.pd_loaded,
        None => linalg::is_positive_definite(&network.nodal_matrix(true), PD_TOL)?,
    };
    Ok(Mapped {
        system,
        network,
        transformed,
        stability,
        pd_loaded,
    })
}

#[derive(Debug, Serialize)]
struct ElementTally {
    positive_resistors: usize,
    negative_resistances: usize,
    supply_positive: usize,
    supply_negative: usize,
    ground_ties: usize,
}

fn tally(net: &Network) -> ElementTally {
    ElementTally {
        positive_resistors: net.count(ElementKind::PositiveResistor),
        negative_resistances: net.count(ElementKind::NegativeResistance),
        supply_positive: net.count(ElementKind::SupplyBranch {
            polarity: Polarity::Positive,
        }),
        supply_negative: net.count(ElementKind::SupplyBranch {
            polarity: Polarity::Negative,
        }),
        ground_ties: net.count(ElementKind::GroundTie),
    }
}

#[derive(Debug, Serialize)]
struct MapSummary {
    label: String,
    design: Design,
    unknowns: usize,
    nodes: usize,
    alpha: f64,
    max_conductance: f64,
    passive: bool,
    pd_loaded: bool,
    stability: Option<Stability>,
    elements: ElementTally,
    components: ComponentCount,
    diagnostics: Vec<String>,
}

fn summarize_map(m: &Mapped) -> MapSummary {
    let net = &m.network;
    MapSummary {
        label: m.system.system.label.clone(),
        design: net.design,
        unknowns: net.unknowns,
        nodes: net.node_count,
        alpha: net.alpha,
        max_conductance: net.max_conductance(),
        passive: net.is_passive(),
        pd_loaded: m.pd_loaded,
        stability: m.stability,
        elements: tally(net),
        components: mapping::count_components(net),
        diagnostics: net.diagnostics.clone(),
    }
}

fn map_summary_text(s: &MapSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "system: {}", s.label);
    let _ = writeln!(out, "design: {}", s.design);
    let _ = writeln!(out, "unknowns: {}", s.unknowns);
    let _ = writeln!(out, "nodes (incl. ground): {}", s.nodes);
    let _ = writeln!(out, "alpha: {}", s.alpha);
    let _ = writeln!(out, "max conductance: {:.6} uS", s.max_conductance);
    let e = &s.elements;
    let _ = writeln!(
        out,
        "elements: {} resistors, {} negative resistances, {}+{} supply branches, {} ground ties",
        e.positive_resistors, e.negative_resistances, e.supply_positive, e.supply_negative, e.ground_ties
    );
    let c = &s.components;
    let _ = writeln!(
        out,
        "components: {} variable resistors, {} fixed resistors, {} switches, {} op-amps",
        c.variable_resistors, c.fixed_resistors, c.analog_switches, c.opamps
    );
    let _ = writeln!(out, "passive: {}", s.passive);
    let _ = writeln!(out, "loaded nodal matrix positive definite: {}", s.pd_loaded);
    if let Some(st) = &s.stability {
        let _ = writeln!(
            out,
            "transformed blocks positive definite: A - Ks {}, 2D - |A| - Ks {}",
            st.pd_original, st.pd_sum
        );
    }
    for d in &s.diagnostics {
        let _ = writeln!(out, "diagnostic: {d}");
    }
    out
}

fn map(c: MapCmd, file: FileConfig) -> Result<u8> {
    let s = settings(&c.common, file)?;
    let m = map_input(&c.input, &s)?;
    if let Some(path) = &c.output {
        write_file(path, &io::network_to_json(&m.network)?)?;
    }
    if let Some(path) = &c.netlist {
        let cfg = sim_config(&s, m.network.design);
        write_file(path, &io::export_netlist(&m.network, &s.fidelity, &cfg)?)?;
    }
    let summary = summarize_map(&m);
    match s.emit {
        Emit::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
        Emit::Csv => {
            println!("key,value");
            println!("design,{}", summary.design);
            println!("unknowns,{}", summary.unknowns);
            println!("nodes,{}", summary.nodes);
            println!("alpha,{}", summary.alpha);
            println!("max_conductance,{}", summary.max_conductance);
            println!("passive,{}", summary.passive);
            println!("pd_loaded,{}", summary.pd_loaded);
            println!("opamps,{}", summary.components.opamps);
        }
        Emit::Text => print!("{}", map_summary_text(&summary)),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SettleReport {
    status: String,
    /// Time from the supply step until every node stays in the band, s.
    time: Option<f64>,
    saturated: bool,
    timed_out: bool,
}

#[derive(Debug, Serialize)]
struct PowerSection {
    /// Closed form at the operating point (proposed design only), uW.
    analytic: Option<PowerReport>,
    /// Element-by-element dissipation at the final state, uW.
    measured: MeasuredPower,
    assumptions: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SolveReport {
    input: String,
    label: String,
    design: Design,
    fidelity: String,
    unknowns: usize,
    alpha: f64,
    /// Operating point at the solution nodes, V (final values when saturated).
    x: Vec<f64>,
    x_final: Vec<f64>,
    x_true: Option<Vec<f64>>,
    max_rel_error: Option<f64>,
    rms_error: Option<f64>,
    settle: SettleReport,
    passive: bool,
    pd_loaded: bool,
    stability: Option<Stability>,
    power: PowerSection,
    components: ComponentCount,
    diagnostics: Vec<String>,
    exit_code: u8,
}

fn settle_status(m: &Mapped, r: &SimResult, cfg: &SimConfig) -> (String, u8) {
    if r.saturated {
        return ("saturation detected".into(), EXIT_UNSTABLE);
    }
    if !m.pd_loaded {
        return (
            "unstable: loaded nodal matrix is not positive definite".into(),
            EXIT_UNSTABLE,
        );
    }
    if r.dynamic_states == 0 {
        let why = if m.network.is_passive() {
            "passive"
        } else {
            "ideal devices"
        };
        return (format!("immediate ({why})"), EXIT_OK);
    }
    match r.settle_duration(cfg.step_time) {
        Some(t) => (format!("{:.3} us", t * 1e6), EXIT_OK),
        None if r.timed_out => ("timed out before settling".into(), EXIT_UNSTABLE),
        None => (
            format!("did not settle within {:.3} us", (cfg.t_end - cfg.step_time) * 1e6),
            EXIT_UNSTABLE,
        ),
    }
}

fn solve(c: SolveCmd, file: FileConfig) -> Result<u8> {
    let s = settings(&c.common, file)?;
    let m = map_input(&c.input, &s)?;
    let net = &m.network;
    let mut cfg = sim_config(&s, net.design);
    cfg.record_amps = false;
    cfg.timeout = s.timeout.map(Duration::from_secs_f64);
    let r = resmap_core::simulate::transient(net, &cfg)?;
    let (status, exit_code) = settle_status(&m, &r, &cfg);

    let x = if r.saturated {
        r.x_final().to_vec()
    } else {
        r.x_dc.clone()
    };
    let truth: Option<Vec<f64>> = m.system.x_true.as_ref().map(|t| t.iter().copied().collect());
    let metrics = match &truth {
        Some(t) => Some(analysis::error_metrics(&x, t, ErrorFloor::default())?),
        None => None,
    };

    let dynamic = matches!(s.fidelity, Fidelity::Dynamic(_));
    let measured = if dynamic {
        analysis::power_measured(net, &r.v_final, Some(&r.y_final), DEFAULT_GAIN_CONDUCTANCE)?
    } else {
        analysis::power_measured(net, &r.v_dc, None, DEFAULT_GAIN_CONDUCTANCE)?
    };
    let analytic = match &m.transformed {
        Some(ts) => Some(analysis::power_analytic(
            ts,
            &DVector::from_column_slice(&r.x_dc),
            DEFAULT_GAIN_CONDUCTANCE,
            DEFAULT_AMP_QUIESCENT,
            DEFAULT_SWITCH_QUIESCENT,
        )?),
        None => None,
    };
    let report = SolveReport {
        input: c.input.display().to_string(),
        label: m.system.system.label.clone(),
        design: net.design,
        fidelity: fidelity_name(&s.fidelity),
        unknowns: net.unknowns,
        alpha: net.alpha,
        x,
        x_final: r.x_final().to_vec(),
        x_true: truth,
        max_rel_error: metrics.map(|e| e.max_rel_error),
        rms_error: metrics.map(|e| e.rms_error),
        settle: SettleReport {
            status,
            time: r.settle_duration(cfg.step_time),
            saturated: r.saturated,
            timed_out: r.timed_out,
        },
        passive: net.is_passive(),
        pd_loaded: m.pd_loaded,
        stability: m.stability,
        power: PowerSection {
            analytic,
            measured,
            assumptions: vec![
                format!("amplifier quiescent draw {DEFAULT_AMP_QUIESCENT} uW each (assumed)"),
                format!("analog switch static draw {DEFAULT_SWITCH_QUIESCENT} uW each (assumed)"),
                format!("gain resistors {DEFAULT_GAIN_CONDUCTANCE} uS"),
            ],
        },
        components: mapping::count_components(net),
        diagnostics: dedup(net.diagnostics.iter().chain(&r.diagnostics)),
        exit_code,
    };

    if let Some(path) = &c.report {
        write_file(path, &serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(path) = &c.trajectory {
        let mut w = create(path)?;
        io::write_trajectory_csv(&r.trajectory, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = &c.netlist {
        write_file(path, &io::export_netlist(net, &s.fidelity, &cfg)?)?;
    }
    match s.emit {
        Emit::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Emit::Csv => {
            println!("node,x,x_true");
            for (i, v) in report.x.iter().enumerate() {
                let t = report.x_true.as_ref().map(|t| t[i].to_string()).unwrap_or_default();
                println!("{},{},{}", i + 1, v, t);
            }
        }
        Emit::Text => print!("{}", solve_text(&report)),
    }
    Ok(exit_code)
}

fn dedup<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in items {
        if !out.contains(d) {
            out.push(d.clone());
        }
    }
    out
}

fn solve_text(r: &SolveReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "system: {} ({} unknowns)", r.label, r.unknowns);
    let _ = writeln!(out, "design: {}, fidelity: {}, alpha: {}", r.design, r.fidelity, r.alpha);
    for (i, v) in r.x.iter().enumerate() {
        let _ = writeln!(out, "x[{}] = {:+.9} V", i + 1, v);
    }
    let _ = writeln!(out, "settle: {}", r.settle.status);
    match (r.max_rel_error, r.rms_error) {
        (Some(max), Some(rms)) => {
            let _ = writeln!(out, "error vs truth: max {:.3e}, rms {:.3e}", max, rms);
        }
        _ => {
            let _ = writeln!(out, "error vs truth: no reference solution in input");
        }
    }
    let _ = writeln!(
        out,
        "stability: passive {}, loaded nodal matrix positive definite {}",
        r.passive, r.pd_loaded
    );
    if let Some(p) = &r.power.analytic {
        let _ = writeln!(
            out,
            "power (closed form): {:.3} uW total, {:.3} uW dissipative, {} amplifiers, {} switches",
            p.p_total,
            p.dissipative(),
            p.amplifiers,
            p.switches
        );
    }
    let _ = writeln!(out, "power (measured): {:.3} uW dissipated", r.power.measured.total);
    for a in &r.power.assumptions {
        let _ = writeln!(out, "assumption: {a}");
    }
    for d in &r.diagnostics {
        let _ = writeln!(out, "diagnostic: {d}");
    }
    out
}

fn sweep(c: SweepCmd, file: FileConfig) -> Result<u8> {
    let o = Overrides {
        fidelity: c.fidelity.clone(),
        t_end: c.t_end,
        seed: c.seed,
        workers: c.workers,
        timeout: c.timeout,
        opamp_library: c.opamp_library.clone(),
        emit: c.emit,
        ..Default::default()
    };
    let s = o.resolve(file)?;
    let amp = match &s.fidelity {
        Fidelity::Dynamic(m) => m.clone(),
        Fidelity::Ideal => bail!("cli: sweep simulates amplifiers; pick a model, not ideal"),
    };
    let need = |v: &[f64], what: &str| -> Result<Vec<f64>> {
        if v.is_empty() {
            bail!("cli: the {what} study needs --values");
        }
        Ok(v.to_vec())
    };
    let kind = match c.study {
        StudyArg::Beta => StudyKind::BetaSweep {
            betas: need(&c.values, "beta")?,
        },
        StudyArg::Alpha => StudyKind::AlphaSweep {
            alphas: need(&c.values, "alpha")?,
        },
        StudyArg::Opamp => {
            let names: Vec<String> = if c.models.is_empty() {
                s.library.names().iter().map(|n| n.to_string()).collect()
            } else {
                c.models.clone()
            };
            let models = names
                .iter()
                .map(|n| match parse_fidelity(n, &s.library)? {
                    Fidelity::Dynamic(m) => Ok(m),
                    Fidelity::Ideal => bail!("cli: ideal is not an amplifier model"),
                })
                .collect::<Result<Vec<_>>>()?;
            StudyKind::OpAmpCompare { models }
        }
        StudyArg::Complexity => StudyKind::ComplexityVsN {
            designs: if c.designs.is_empty() {
                vec![Design::Preliminary, Design::Proposed]
            } else {
                c.designs.iter().map(|d| (*d).into()).collect()
            },
        },
        StudyArg::Band => StudyKind::ConductanceBand {
            center: c.center,
            tolerance: c.tolerance,
        },
    };
    let mut spec = StudySpec::new(kind, c.sizes.clone(), c.reps, s.seed);
    spec.amp = amp;
    spec.t_end = s.t_end;
    spec.workers = s.workers;
    if let Some(t) = s.timeout {
        spec.timeout = Duration::from_secs_f64(t);
    }
    let data = analysis::run_study(&spec)?;

    if let Some(path) = &c.output {
        let mut w = create(path)?;
        data.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &c.summary {
        write_file(path, &data.summary_json()?)?;
    }
    let emit = c.emit.or(if c.output.is_some() { None } else { Some(Emit::Csv) });
    match emit.unwrap_or(s.emit) {
        Emit::Csv => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            data.write_csv(&mut lock)?;
            lock.flush()?;
        }
        Emit::Json => println!("{}", data.summary_json()?),
        Emit::Text => {
            println!("study: {} ({} runs)", data.study, data.rows.len());
            for cell in &data.summary {
                let setting = if cell.param == "model" {
                    format!("model={}", cell.model)
                } else {
                    format!("{}={} model={}", cell.param, cell.value, cell.model)
                };
                println!(
                    "{} n={} {}: runs {}, failures {}, censored {}, settle median {}, error median {}",
                    cell.design,
                    cell.n,
                    setting,
                    cell.runs,
                    cell.failures,
                    cell.censored,
                    fmt_opt_us(cell.settle_median),
                    fmt_opt(cell.error_median),
                );
            }
            for a in &data.assumptions {
                println!("assumption: {a}");
            }
        }
    }
    Ok(EXIT_OK)
}

fn fmt_opt_us(v: Option<f64>) -> String {
    v.map(|t| format!("{:.3} us", t * 1e6)).unwrap_or_else(|| "-".into())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into())
}

fn export(c: ExportCmd, file: FileConfig) -> Result<u8> {
    let s = settings(&c.common, file)?;
    let m = map_input(&c.input, &s)?;
    let cfg = sim_config(&s, m.network.design);
    let text = io::export_netlist(&m.network, &s.fidelity, &cfg)?;
    match &c.netlist {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

fn verify_cmd(c: VerifyCmd, file: FileConfig) -> Result<u8> {
    let report = verify::run(c.quick);
    match c.emit.or(file.emit).unwrap_or(Emit::Text) {
        Emit::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Emit::Csv => {
            println!("check,passed,instances,worst,tolerance");
            for ch in &report.checks {
                println!("{},{},{},{},{}", ch.name, ch.passed, ch.instances, ch.worst, ch.tolerance);
            }
        }
        Emit::Text => {
            for ch in &report.checks {
                println!(
                    "{} {} ({} instances, worst {:.3e}, tolerance {:.1e}){}",
                    if ch.passed { "PASS" } else { "FAIL" },
                    ch.name,
                    ch.instances,
                    ch.worst,
                    ch.tolerance,
                    if ch.detail.is_empty() {
                        String::new()
                    } else {
                        format!(": {}", ch.detail)
                    }
                );
            }
            println!(
                "{} suite: {}",
                if report.quick { "quick" } else { "full" },
                if report.passed { "passed" } else { "FAILED" }
            );
        }
    }
    Ok(if report.passed { EXIT_OK } else { 1 })
}

#[derive(Debug, Serialize)]
struct CountRow {
    source: String,
    design: Design,
    n: usize,
    #[serde(flatten)]
    count: ComponentCount,
}

fn count(c: CountCmd, file: FileConfig) -> Result<u8> {
    let s = settings(&c.common, file)?;
    let mut rows = Vec::new();
    match &c.input {
        Some(path) => {
            let m = map_input(path, &s)?;
            let n = m.network.unknowns;
            rows.push(CountRow {
                source: "mapped".into(),
                design: s.design,
                n,
                count: mapping::count_components(&m.network),
            });
            rows.push(CountRow {
                source: "worst_case".into(),
                design: s.design,
                n,
                count: ComponentCount::worst_case(s.design, n),
            });
        }
        None => {
            let designs = match c.common.design {
                Some(d) => vec![d.into()],
                None => vec![Design::Preliminary, Design::Proposed],
            };
            for &n in &c.sizes {
                for &d in &designs {
                    rows.push(CountRow {
                        source: "worst_case".into(),
                        design: d,
                        n,
                        count: ComponentCount::worst_case(d, n),
                    });
                }
            }
        }
    }
    match s.emit {
        Emit::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
        Emit::Csv | Emit::Text => {
            let sep = if s.emit == Emit::Csv { "," } else { "\t" };
            println!(
                "{}",
                ["source", "design", "n", "variable_resistors", "fixed_resistors", "analog_switches", "opamps"]
                    .join(sep)
            );
            for r in &rows {
                println!(
                    "{}",
                    [
                        r.source.clone(),
                        r.design.to_string(),
                        r.n.to_string(),
                        r.count.variable_resistors.to_string(),
                        r.count.fixed_resistors.to_string(),
                        r.count.analog_switches.to_string(),
                        r.count.opamps.to_string(),
                    ]
                    .join(sep)
                );
            }
        }
    }
    Ok(EXIT_OK)
}

fn generate(c: GenerateCmd, file: FileConfig) -> Result<u8> {
    let seed = c.seed.or(file.seed).unwrap_or(0);
    let g = if c.dominant {
        if c.band_center.is_some() {
            bail!("cli: --band-center applies to the positive-definite generator, not --dominant");
        }
        let supply = file.supply.unwrap_or(mapping::DEFAULT_SUPPLY_VOLTAGE);
        linsys::generate_diagonally_dominant(c.n, c.density, supply, seed)?
    } else {
        let mut spec = GeneratorSpec::standard(c.n, seed);
        spec.density = c.density;
        spec.band = c.band_center.map(|center| ConductanceBand {
            center,
            tolerance: c.band_tolerance,
        });
        linsys::generate_random(&spec)?
    };
    let text = io::system_to_json(&g.system, Some(&g.x_true))?;
    match &c.output {
        Some(path) => write_file(path, &text)?,
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}
