//! Accuracy metrics, power accounting and the parameter studies.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::{Fidelity, OpAmpModel, DEFAULT_GAIN_CONDUCTANCE};
use crate::error::{Error, Result};
use crate::linsys::{self, ConductanceBand, GeneratorSpec};
use crate::mapping::{
    self, DPolicy, Design, ElementKind, MapOptions, Network, TransformedSystem,
};
use crate::simulate::{self, SimConfig, Trajectory};

/// Per-run wall-clock budget used by the studies.
pub const DEFAULT_RUN_TIMEOUT: Duration = Duration::from_secs(30);
/// Assumed quiescent draw of one amplifier, uW (about 1 mA from +/-5 V rails
/// at the scale of the AD712 class); a labelled assumption.
pub const DEFAULT_AMP_QUIESCENT: f64 = 10_000.0;
/// Assumed static draw of one analog switch, uW; a labelled assumption.
pub const DEFAULT_SWITCH_QUIESCENT: f64 = 1.0;

/// Denominator floor of the per-node relative error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ErrorFloor {
    /// Fixed floor in volts.
    Absolute(f64),
    /// Floor as a fraction of `max |x_true|`; 1.0 gives the normwise error
    /// `max |dx| / max |x_true|`.
    RelativeToMax(f64),
}

impl Default for ErrorFloor {
    fn default() -> Self {
        ErrorFloor::RelativeToMax(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub max_rel_error: f64,
    pub rms_error: f64,
}

/// `max_i |x_i - t_i| / max(|t_i|, floor)` and its root-mean-square analog.
pub fn error_metrics(x: &[f64], truth: &[f64], floor: ErrorFloor) -> Result<ErrorMetrics> {
    if x.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "solution has {} entries, reference {}",
            x.len(),
            truth.len()
        )));
    }
    if x.is_empty() {
        return Ok(ErrorMetrics {
            max_rel_error: 0.0,
            rms_error: 0.0,
        });
    }
    let floor = match floor {
        ErrorFloor::Absolute(v) => v,
        ErrorFloor::RelativeToMax(f) => f * truth.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    };
    let mut max: f64 = 0.0;
    let mut sq = 0.0;
    for (a, t) in x.iter().zip(truth) {
        let denom = t.abs().max(floor);
        let e = if denom > 0.0 {
            (a - t).abs() / denom
        } else if a == t {
            0.0
        } else {
            f64::INFINITY
        };
        max = max.max(e);
        sq += e * e;
    }
    Ok(ErrorMetrics {
        max_rel_error: max,
        rms_error: (sq / x.len() as f64).sqrt(),
    })
}

/// Steady-state power of the proposed design, uW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// `x2n^T K2n x2n = 2 x^T (A - Ks) x`: every element treated as a resistor.
    pub p_resistive_positive: f64,
    /// `6 x^T (KB + |KB|) x`: correction for the negative-resistance elements.
    pub p_neg_correction: f64,
    /// `4 kR x^T x`.
    pub p_gain_resistors: f64,
    pub p_amp: f64,
    pub p_sw: f64,
    /// `2 x^T Ks x`.
    pub p_supply_rhs: f64,
    pub p_total: f64,
    pub amplifiers: usize,
    pub switches: usize,
}

impl PowerReport {
    /// Voltage-dependent part of the total (everything except quiescent draw).
    pub fn dissipative(&self) -> f64 {
        self.p_total - self.p_amp - self.p_sw
    }
}

/// Closed-form power at the solution `x`. Amplifier and switch counts come
/// from the active couplings: four amplifiers per positive `KB_ii`, three
/// switches per nonzero `KB_ii`.
pub fn power_analytic(
    ts: &TransformedSystem,
    x: &DVector<f64>,
    k_r: f64,
    amp_quiescent: f64,
    sw_quiescent: f64,
) -> Result<PowerReport> {
    let n = ts.n;
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "x has {} entries for a {n}-unknown system",
            x.len()
        )));
    }
    let quad = |m: &nalgebra::DMatrix<f64>| x.dot(&(m * x));
    let ks = crate::linalg::diag(&ts.k_s);
    let kb_pos = &ts.k_b + crate::linalg::abs(&ts.k_b);
    let p_resistive_positive = 2.0 * quad(&ts.difference());
    let p_neg_correction = 6.0 * quad(&kb_pos);
    let p_gain_resistors = 4.0 * k_r * x.dot(x);
    let p_supply_rhs = 2.0 * quad(&ks);

    let block = ts.block_matrix();
    let mut amplifiers = 0;
    let mut switches = 0;
    for i in 0..n {
        let scale = block.column(i).abs().sum();
        let v = ts.k_b[(i, i)];
        if v.abs() > 1e-12 * scale {
            switches += 3;
            if v > 0.0 {
                amplifiers += 4;
            }
        }
    }
    let p_amp = amp_quiescent * amplifiers as f64;
    let p_sw = sw_quiescent * switches as f64;
    let p_total =
        p_amp + p_sw + p_gain_resistors + p_neg_correction + p_resistive_positive + p_supply_rhs;
    Ok(PowerReport {
        p_resistive_positive,
        p_neg_correction,
        p_gain_resistors,
        p_amp,
        p_sw,
        p_supply_rhs,
        p_total,
        amplifiers,
        switches,
    })
}

/// Dissipation summed element by element, uW.
///
/// Supply branches are counted as `k_s v^2` (their Norton equivalent, the
/// same convention as the `2 x^T Ks x` term); the power the rails themselves
/// deliver is an input, not a loss of the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPower {
    /// Positive resistors and ground ties.
    pub resistors: f64,
    pub supply_branches: f64,
    /// The two `k` resistors of every negative-resistance element.
    pub coupling_resistors: f64,
    /// The four gain-setting resistors of every negative-resistance element.
    pub gain_resistors: f64,
    pub total: f64,
}

/// Element-wise dissipation at one operating state. `v` holds every node
/// voltage; `y` holds amplifier outputs in the simulator's layout, or
/// `None` to use the ideal outputs implied by `v`.
pub fn power_measured(net: &Network, v: &[f64], y: Option<&[f64]>, k_r: f64) -> Result<MeasuredPower> {
    if v.len() != net.dim() {
        return Err(Error::Dimension(format!(
            "{} node voltages for {} nodes",
            v.len(),
            net.dim()
        )));
    }
    let negs = net.negative_elements().count();
    if let Some(y) = y {
        if y.len() != 4 * negs {
            return Err(Error::Dimension(format!(
                "{} amplifier outputs for {negs} active elements",
                y.len()
            )));
        }
    }
    let volt = |node: usize| if node == 0 { 0.0 } else { v[node - 1] };
    let mut p = MeasuredPower::default();
    let mut r = 0;
    for e in &net.elements {
        let (vi, vj) = (volt(e.i), volt(e.j));
        match e.kind {
            ElementKind::PositiveResistor | ElementKind::GroundTie => {
                p.resistors += e.conductance * (vi - vj).powi(2);
            }
            ElementKind::SupplyBranch { .. } => {
                p.supply_branches += e.conductance * vi * vi;
            }
            ElementKind::NegativeResistance => {
                let (bi, bj, si, sj) = match y {
                    Some(y) => (y[4 * r], y[4 * r + 1], y[4 * r + 2], y[4 * r + 3]),
                    None => (vi, vj, 2.0 * vi - vj, 2.0 * vj - vi),
                };
                p.coupling_resistors += e.conductance * ((si - vi).powi(2) + (sj - vj).powi(2));
                // Each divider splits the drop from the stage output to the
                // opposite buffer evenly over two k_r resistors.
                p.gain_resistors += 0.5 * k_r * ((si - bj).powi(2) + (sj - bi).powi(2));
                r += 1;
            }
        }
    }
    p.total = p.resistors + p.supply_branches + p.coupling_resistors + p.gain_resistors;
    Ok(p)
}

/// Mean element-wise dissipation over the trailing `window` fraction of a
/// trajectory recorded with amplifier outputs (or of an ideal-device run).
pub fn power_from_trajectory(
    net: &Network,
    traj: &Trajectory,
    window: f64,
    k_r: f64,
) -> Result<MeasuredPower> {
    let count = traj.times.len();
    if count == 0 {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    // Ideal-device runs carry no amplifier states; their outputs are implied.
    let with_amps = !traj.amps.is_empty();
    let start = ((1.0 - window.clamp(0.0, 1.0)) * count as f64).floor() as usize;
    let start = start.min(count - 1);
    let mut acc = MeasuredPower::default();
    let samples = (start..count).len() as f64;
    for k in start..count {
        let y = if with_amps { Some(traj.amps[k].as_slice()) } else { None };
        let p = power_measured(net, &traj.nodes[k], y, k_r)?;
        acc.resistors += p.resistors / samples;
        acc.supply_branches += p.supply_branches / samples;
        acc.coupling_resistors += p.coupling_resistors / samples;
        acc.gain_resistors += p.gain_resistors / samples;
        acc.total += p.total / samples;
    }
    Ok(acc)
}

/// Nearest-rank percentile (`p` in percent) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyKind {
    /// Proposed design with `D = beta * max colsum|A| * I`.
    BetaSweep { betas: Vec<f64> },
    /// Proposed design with every conductance scaled by alpha.
    AlphaSweep { alphas: Vec<f64> },
    /// Proposed design across amplifier models.
    OpAmpCompare { models: Vec<OpAmpModel> },
    /// Settle time and error against size for each design on shared systems.
    ComplexityVsN { designs: Vec<Design> },
    /// Proposed design on systems whose largest mapped conductance is held
    /// within a band.
    ConductanceBand { center: f64, tolerance: f64 },
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::BetaSweep { .. } => "beta_sweep",
            StudyKind::AlphaSweep { .. } => "alpha_sweep",
            StudyKind::OpAmpCompare { .. } => "opamp_compare",
            StudyKind::ComplexityVsN { .. } => "complexity_vs_n",
            StudyKind::ConductanceBand { .. } => "conductance_band",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub sizes: Vec<usize>,
    /// Systems per size; replication `r` uses seed `seed + r`.
    pub replications: usize,
    pub seed: u64,
    /// Amplifier model for every study except `OpAmpCompare`.
    pub amp: OpAmpModel,
    /// Overrides the design-specific default end time.
    pub t_end: Option<f64>,
    pub timeout: Duration,
    pub error_floor: ErrorFloor,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl StudySpec {
    pub fn new(kind: StudyKind, sizes: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            kind,
            sizes,
            replications,
            seed,
            amp: OpAmpModel::ad712(),
            t_end: None,
            timeout: DEFAULT_RUN_TIMEOUT,
            error_floor: ErrorFloor::default(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be non-empty and positive".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        let empty = match &self.kind {
            StudyKind::BetaSweep { betas } => betas.is_empty(),
            StudyKind::AlphaSweep { alphas } => alphas.is_empty(),
            StudyKind::OpAmpCompare { models } => models.is_empty(),
            StudyKind::ComplexityVsN { designs } => designs.is_empty(),
            StudyKind::ConductanceBand { center, tolerance } => !(*center > 0.0 && *tolerance > 0.0),
        };
        if empty {
            return bad(format!("{}: parameter range is empty", self.kind.name()));
        }
        self.amp.validate()
    }

    fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &n in &self.sizes {
            for rep in 0..self.replications {
                let seed = self.seed + rep as u64;
                let base = Job {
                    n,
                    seed,
                    design: Design::Proposed,
                    param: "none",
                    value: 0.0,
                    amp: self.amp.clone(),
                    options: MapOptions::unscaled(),
                };
                match &self.kind {
                    StudyKind::BetaSweep { betas } => {
                        for &b in betas {
                            jobs.push(Job {
                                param: "beta",
                                value: b,
                                options: MapOptions::unscaled()
                                    .with_d_policy(DPolicy::ScaledIdentity(b)),
                                ..base.clone()
                            });
                        }
                    }
                    StudyKind::AlphaSweep { alphas } => {
                        for &a in alphas {
                            jobs.push(Job {
                                param: "alpha",
                                value: a,
                                options: MapOptions::unscaled().with_alpha(a),
                                ..base.clone()
                            });
                        }
                    }
                    StudyKind::OpAmpCompare { models } => {
                        for (idx, m) in models.iter().enumerate() {
                            jobs.push(Job {
                                param: "model",
                                value: idx as f64,
                                amp: m.clone(),
                                ..base.clone()
                            });
                        }
                    }
                    StudyKind::ComplexityVsN { designs } => {
                        for &d in designs {
                            jobs.push(Job {
                                design: d,
                                ..base.clone()
                            });
                        }
                    }
                    StudyKind::ConductanceBand { center, .. } => jobs.push(Job {
                        param: "band_center",
                        value: *center,
                        ..base.clone()
                    }),
                }
            }
        }
        jobs
    }

    fn generator(&self, n: usize, seed: u64) -> GeneratorSpec {
        let mut g = GeneratorSpec::standard(n, seed);
        if let StudyKind::ConductanceBand { center, tolerance } = self.kind {
            g.band = Some(ConductanceBand {
                center,
                tolerance,
            });
        }
        g
    }
}

#[derive(Debug, Clone)]
struct Job {
    n: usize,
    seed: u64,
    design: Design,
    param: &'static str,
    value: f64,
    amp: OpAmpModel,
    options: MapOptions,
}

/// One simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study: String,
    pub design: Design,
    pub n: usize,
    pub param: String,
    pub value: f64,
    pub model: String,
    pub seed: u64,
    /// Time from the supply step until settled, s.
    pub settle_time: Option<f64>,
    pub max_error: Option<f64>,
    pub max_conductance: Option<f64>,
    pub p_total: Option<f64>,
    pub saturated: bool,
    /// Timed out or never settled: `settle_time` is censored at the run end.
    pub censored: bool,
    pub t_end: f64,
    pub failure: Option<String>,
}

impl StudyRow {
    /// Settle time with censored runs counted at their end time.
    pub fn settle_or_censored(&self) -> Option<f64> {
        if self.failure.is_some() {
            return None;
        }
        self.settle_time.or(Some(self.t_end))
    }
}

/// Statistics of one (design, n, parameter value) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub design: Design,
    pub n: usize,
    pub param: String,
    pub value: f64,
    pub model: String,
    pub runs: usize,
    pub failures: usize,
    pub censored: usize,
    pub settle_median: Option<f64>,
    pub settle_p90: Option<f64>,
    pub settle_mean: Option<f64>,
    pub error_median: Option<f64>,
    pub error_p90: Option<f64>,
    pub error_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDataset {
    pub study: String,
    pub spec: StudySpec,
    pub rows: Vec<StudyRow>,
    pub summary: Vec<CellSummary>,
    /// Labelled modelling assumptions behind the reported numbers.
    pub assumptions: Vec<String>,
}

impl StudyDataset {
    pub fn cell(&self, design: Design, n: usize, value: f64) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.design == design && c.n == n && c.value == value)
    }

    /// Rows as CSV with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "study",
            "design",
            "n",
            "param",
            "value",
            "model",
            "seed",
            "settle_time",
            "max_error",
            "max_conductance",
            "p_total",
            "saturated",
            "censored",
            "failure",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.study.clone(),
                r.design.to_string(),
                r.n.to_string(),
                r.param.clone(),
                r.value.to_string(),
                r.model.clone(),
                r.seed.to_string(),
                opt(r.settle_time),
                opt(r.max_error),
                opt(r.max_conductance),
                opt(r.p_total),
                r.saturated.to_string(),
                r.censored.to_string(),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            study: &'a str,
            spec: &'a StudySpec,
            cells: &'a [CellSummary],
            assumptions: &'a [String],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            study: &self.study,
            spec: &self.spec,
            cells: &self.summary,
            assumptions: &self.assumptions,
        })?)
    }
}

/// Runs every cell of a study in parallel. Individual failures are recorded
/// in their rows and never abort the sweep.
pub fn run_study(spec: &StudySpec) -> Result<StudyDataset> {
    spec.validate()?;
    let jobs = spec.jobs();
    let work = || -> Vec<StudyRow> { jobs.par_iter().map(|j| run_job(spec, j)).collect() };
    let rows = match spec.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };
    let summary = summarize(&rows);
    Ok(StudyDataset {
        study: spec.kind.name().to_string(),
        spec: spec.clone(),
        rows,
        summary,
        assumptions: vec![
            format!(
                "amplifier macromodel: offset + single pole + slew + rails; offsets share one sign (+v_offset)"
            ),
            format!(
                "max_error uses {:?}; settle band {} with {} V floor",
                spec.error_floor,
                simulate::DEFAULT_BAND,
                simulate::DEFAULT_FLOOR
            ),
            "censored runs (timeout or no settling) enter settle statistics at their end time".into(),
            format!(
                "p_total excludes quiescent draw unless configured; defaults {DEFAULT_AMP_QUIESCENT} uW/amp and {DEFAULT_SWITCH_QUIESCENT} uW/switch are assumptions"
            ),
        ],
    })
}

fn run_job(spec: &StudySpec, job: &Job) -> StudyRow {
    let t_end = spec.t_end.unwrap_or(match job.design {
        Design::Preliminary => 10e-3,
        Design::Proposed => 1e-3,
    });
    let mut row = StudyRow {
        study: spec.kind.name().to_string(),
        design: job.design,
        n: job.n,
        param: job.param.to_string(),
        value: job.value,
        model: job.amp.name.clone(),
        seed: job.seed,
        settle_time: None,
        max_error: None,
        max_conductance: None,
        p_total: None,
        saturated: false,
        censored: false,
        t_end,
        failure: None,
    };
    if let Err(e) = fill_row(spec, job, t_end, &mut row) {
        row.failure = Some(e.to_string());
    }
    row
}

fn fill_row(spec: &StudySpec, job: &Job, t_end: f64, row: &mut StudyRow) -> Result<()> {
    let generated = linsys::generate_random(&spec.generator(job.n, job.seed))?;
    let (net, ts) = match job.design {
        Design::Preliminary => (mapping::map_preliminary(&generated.system, &job.options)?, None),
        Design::Proposed => {
            let m = mapping::map_proposed(&generated.system, &job.options)?;
            (m.network, Some(m.transformed))
        }
    };
    row.max_conductance = Some(net.max_conductance() / net.alpha);
    let mut cfg = SimConfig::with_t_end(t_end, Fidelity::Dynamic(job.amp.clone()));
    cfg.timeout = Some(spec.timeout);
    let r = simulate::transient(&net, &cfg)?;
    row.saturated = r.saturated;
    row.censored = r.settle_time.is_none();
    row.settle_time = r.settle_duration(cfg.step_time);
    let truth: Vec<f64> = generated.x_true.iter().copied().collect();
    row.max_error = Some(error_metrics(&r.x_dc, &truth, spec.error_floor)?.max_rel_error);
    if let Some(ts) = ts {
        let x = DVector::from_column_slice(&r.x_dc);
        let p = power_analytic(&ts, &x, DEFAULT_GAIN_CONDUCTANCE, 0.0, 0.0)?;
        row.p_total = Some(p.p_total);
    }
    Ok(())
}

fn summarize(rows: &[StudyRow]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(u8, usize, String, u64, String), Vec<&StudyRow>> = BTreeMap::new();
    for r in rows {
        let d = match r.design {
            Design::Preliminary => 0,
            Design::Proposed => 1,
        };
        cells
            .entry((d, r.n, r.param.clone(), r.value.to_bits(), r.model.clone()))
            .or_default()
            .push(r);
    }
    cells
        .into_values()
        .map(|rs| {
            let first = rs[0];
            let settle: Vec<f64> = rs.iter().filter_map(|r| r.settle_or_censored()).collect();
            let errors: Vec<f64> = rs.iter().filter_map(|r| r.max_error).collect();
            CellSummary {
                design: first.design,
                n: first.n,
                param: first.param.clone(),
                value: first.value,
                model: first.model.clone(),
                runs: rs.len(),
                failures: rs.iter().filter(|r| r.failure.is_some()).count(),
                censored: rs.iter().filter(|r| r.censored && r.failure.is_none()).count(),
                settle_median: median(&settle),
                settle_p90: percentile(&settle, 90.0),
                settle_mean: mean(&settle),
                error_median: median(&errors),
                error_p90: percentile(&errors, 90.0),
                error_max: errors.iter().copied().reduce(f64::max),
            }
        })
        .collect()
}
