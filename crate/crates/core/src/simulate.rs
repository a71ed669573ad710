//! DC operating points and transient responses of mapped networks.
//!
//! Node voltages are algebraic: with amplifier outputs `y` and supply step
//! `u(t)` they satisfy `M v = Is u + K' y`, so `v = w u + P y`. Each dynamic
//! amplifier is one state obeying
//!
//! ```text
//! dy/dt = wp (A0 (v+ - v- + Vos) - y),   |dy/dt| <= SR,   |y| <= rails
//! ```
//!
//! and the differential inputs are linear in the state, `d = E y + f u`.
//! Integration is backward Euler on `y` with slew and rail limits enforced
//! as an active set, and an adaptive step restricted to power-of-two
//! fractions of the sample interval so that samples fall exactly on the grid.
//!
//! Amplifier layout: the r-th negative-resistance element of the network (in
//! element order) owns amplifiers `4r..4r+4`, in the order buffer `i`,
//! buffer `j`, gain stage `i`, gain stage `j`. Gain stage `i` is a
//! non-inverting amplifier whose `+` input sits on node `i` and whose
//! gain-setting divider returns to the output of buffer `j`, so the nodes
//! only ever see the currents through the two `k` resistors.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::devices::{Fidelity, OpAmpModel};
use crate::error::{Error, Result};
use crate::mapping::{Design, ElementKind, Network};

pub const DEFAULT_STEP_TIME: f64 = 1e-6;
pub const DEFAULT_BAND: f64 = 0.01;
/// Absolute settling floor, V.
pub const DEFAULT_FLOOR: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 2000;

/// Finest step is the sample interval divided by `2^MAX_LEVEL`.
const MAX_LEVEL: u32 = 40;
const DEADLINE_CHECK_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    BackwardEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt_max: f64,
    /// Time at which the supplies step from 0 to their rail values.
    pub step_time: f64,
    pub sample_interval: f64,
    pub fidelity: Fidelity,
    pub convergence_band: f64,
    /// Absolute settling tolerance floor, V.
    pub convergence_floor: f64,
    pub integrator: Integrator,
    pub rtol: f64,
    pub atol: f64,
    /// Keep amplifier outputs in the trajectory.
    pub record_amps: bool,
    /// Wall-clock budget; exceeding it ends the run with `timed_out`.
    pub timeout: Option<Duration>,
}

impl SimConfig {
    /// Defaults: 10 ms for the preliminary design, 1 ms for the proposed one,
    /// 2000 samples, step at 1 us.
    pub fn for_design(design: Design, fidelity: Fidelity) -> Self {
        let t_end = match design {
            Design::Preliminary => 10e-3,
            Design::Proposed => 1e-3,
        };
        Self::with_t_end(t_end, fidelity)
    }

    pub fn with_t_end(t_end: f64, fidelity: Fidelity) -> Self {
        let sample = t_end / DEFAULT_SAMPLES as f64;
        Self {
            t_end,
            dt_max: sample,
            step_time: DEFAULT_STEP_TIME.min(t_end / 2.0),
            sample_interval: sample,
            fidelity,
            convergence_band: DEFAULT_BAND,
            convergence_floor: DEFAULT_FLOOR,
            integrator: Integrator::BackwardEuler,
            rtol: 1e-4,
            atol: 1e-6,
            record_amps: false,
            timeout: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(self.dt_max > 0.0 && self.dt_max <= self.t_end) {
            return bad("need 0 < dt_max <= t_end");
        }
        if !(self.step_time >= 0.0 && self.step_time < self.t_end) {
            return bad("step_time must lie in [0, t_end)");
        }
        if !(self.sample_interval > 0.0 && self.sample_interval <= self.t_end - self.step_time) {
            return bad("sample_interval must be positive and fit after the step");
        }
        if !(self.convergence_band > 0.0) || !(self.convergence_floor >= 0.0) {
            return bad("convergence band must be positive and floor non-negative");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("tolerances must be positive");
        }
        if let Some(m) = self.fidelity.model() {
            m.validate()?;
        }
        Ok(())
    }
}

/// Sampled node voltages (all non-ground nodes, node `k` at index `k - 1`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub amps: Vec<Vec<f64>>,
}

impl Trajectory {
    fn push(&mut self, t: f64, v: &DVector<f64>, y: Option<&DVector<f64>>) {
        self.times.push(t);
        self.nodes.push(v.iter().copied().collect());
        if let Some(y) = y {
            self.amps.push(y.iter().copied().collect());
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted steps in which some amplifier was slew or rail limited.
    pub limited: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Operating point at the solution nodes.
    pub x_dc: Vec<f64>,
    /// Operating point at every node.
    pub v_dc: Vec<f64>,
    /// Node voltages and amplifier outputs at the end of the run.
    pub v_final: Vec<f64>,
    pub y_final: Vec<f64>,
    pub trajectory: Trajectory,
    /// Absolute time (s) after which every node stays in the band.
    pub settle_time: Option<f64>,
    pub saturated: bool,
    pub timed_out: bool,
    pub dynamic_states: usize,
    pub stats: StepStats,
    pub max_error_vs_truth: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl SimResult {
    /// Settle time measured from the supply step.
    pub fn settle_duration(&self, step_time: f64) -> Option<f64> {
        self.settle_time.map(|t| t - step_time)
    }

    /// Final solution-node voltages.
    pub fn x_final(&self) -> &[f64] {
        &self.v_final[..self.x_dc.len()]
    }
}

type Lu = LU<f64, Dyn, Dyn>;

/// Linearized network with the amplifiers as states.
struct ActiveModel {
    unknowns: usize,
    /// Node response to the supply step.
    w: DVector<f64>,
    /// Node response to amplifier outputs.
    p: DMatrix<f64>,
    e: DMatrix<f64>,
    f: DVector<f64>,
    amp: Option<OpAmpModel>,
}

impl ActiveModel {
    fn build(net: &Network, fidelity: &Fidelity) -> Result<Self> {
        let dim = net.dim();
        let amp = match fidelity {
            Fidelity::Dynamic(m) if !net.is_passive() => Some(m.clone()),
            _ => None,
        };
        let Some(model) = amp else {
            let g = net.nodal_matrix(true);
            let w = solve_nodal(net, g, &net.source_currents())?;
            return Ok(Self {
                unknowns: net.unknowns,
                w,
                p: DMatrix::zeros(dim, 0),
                e: DMatrix::zeros(0, 0),
                f: DVector::zeros(0),
                amp: None,
            });
        };

        let negs: Vec<_> = net.negative_elements().copied().collect();
        let m = 4 * negs.len();
        let mut g = DMatrix::zeros(dim, dim);
        for el in &net.elements {
            if el.kind != ElementKind::NegativeResistance {
                stamp(&mut g, el.i, el.j, el.conductance);
            }
        }
        let mut kp = DMatrix::zeros(dim, m);
        // Differential inputs: d = cv v + cy y.
        let mut cv = DMatrix::zeros(m, dim);
        let mut cy = DMatrix::zeros(m, m);
        for (r, el) in negs.iter().enumerate() {
            let (bi, bj, si, sj) = (4 * r, 4 * r + 1, 4 * r + 2, 4 * r + 3);
            for (node, stage) in [(el.i, si), (el.j, sj)] {
                if node > 0 {
                    g[(node - 1, node - 1)] += el.conductance;
                    kp[(node - 1, stage)] = el.conductance;
                }
            }
            for (node, buf) in [(el.i, bi), (el.j, bj)] {
                if node > 0 {
                    cv[(buf, node - 1)] = 1.0;
                }
                cy[(buf, buf)] = -1.0;
            }
            // Stage i senses node i directly; its divider returns to the
            // buffered node j.
            for (stage, node, other) in [(si, el.i, bj), (sj, el.j, bi)] {
                if node > 0 {
                    cv[(stage, node - 1)] = 1.0;
                }
                cy[(stage, stage)] -= 0.5;
                cy[(stage, other)] -= 0.5;
            }
        }
        let lu = factor_nodal(net, g)?;
        let w = lu
            .solve(&net.source_currents())
            .ok_or_else(|| singular(net))?;
        let p = lu.solve(&kp).ok_or_else(|| singular(net))?;
        let e = &cv * &p + cy;
        let f = &cv * &w;
        Ok(Self {
            unknowns: net.unknowns,
            w,
            p,
            e,
            f,
            amp: Some(model),
        })
    }

    fn states(&self) -> usize {
        self.f.len()
    }

    fn nodes(&self, y: &DVector<f64>, u: f64) -> DVector<f64> {
        if self.states() == 0 {
            &self.w * u
        } else {
            &self.w * u + &self.p * y
        }
    }

    fn model(&self) -> &OpAmpModel {
        self.amp.as_ref().expect("dynamic model")
    }

    /// `dy/dt = J y + c(u)` away from the limits.
    fn jacobian(&self) -> DMatrix<f64> {
        let m = self.model();
        let wp = m.pole();
        (&self.e * m.dc_gain - DMatrix::identity(self.states(), self.states())) * wp
    }

    fn forcing(&self, u: f64) -> DVector<f64> {
        let m = self.model();
        (&self.f * u).add_scalar(m.v_offset) * (m.pole() * m.dc_gain)
    }

    /// Steady state of the amplifier states with rail limits.
    fn steady_state(&self) -> Result<DVector<f64>> {
        let n = self.states();
        if n == 0 {
            return Ok(DVector::zeros(0));
        }
        let m = self.model();
        let k = &self.e * m.dc_gain - DMatrix::identity(n, n);
        let rhs = -(&self.f.add_scalar(m.v_offset)) * m.dc_gain;
        let mut fixed: Vec<Option<f64>> = vec![None; n];
        for _ in 0..=n {
            let y = solve_with_fixed(&k, &rhs, &fixed, None)?;
            let mut changed = false;
            for i in 0..n {
                if fixed[i].is_none() && y[i].abs() > m.rails {
                    fixed[i] = Some(m.rails.copysign(y[i]));
                    changed = true;
                }
            }
            if !changed {
                let y = DVector::from_fn(n, |i, _| fixed[i].unwrap_or(y[i]));
                let resid = residual(&k, &rhs, &y, &fixed);
                let scale = rhs.amax().max(1.0);
                if !(resid <= 1e-6 * scale) {
                    return Err(Error::NoConvergence { residual: resid });
                }
                return Ok(y);
            }
        }
        Err(Error::NoConvergence {
            residual: f64::INFINITY,
        })
    }
}

fn residual(k: &DMatrix<f64>, rhs: &DVector<f64>, y: &DVector<f64>, fixed: &[Option<f64>]) -> f64 {
    let r = k * y - rhs;
    r.iter()
        .enumerate()
        .filter(|(i, _)| fixed[*i].is_none())
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Solves `k y = rhs` with some components pinned.
fn solve_with_fixed(
    k: &DMatrix<f64>,
    rhs: &DVector<f64>,
    fixed: &[Option<f64>],
    cached: Option<&Lu>,
) -> Result<DVector<f64>> {
    let free: Vec<usize> = (0..rhs.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut y = DVector::from_fn(rhs.len(), |i, _| fixed[i].unwrap_or(0.0));
    if free.is_empty() {
        return Ok(y);
    }
    let pinned = DVector::from_fn(rhs.len(), |i, _| fixed[i].unwrap_or(0.0));
    let r = rhs - k * &pinned;
    let r_free = r.select_rows(&free);
    let sol = match cached {
        Some(lu) => lu.solve(&r_free),
        None => k.select_rows(&free).select_columns(&free).lu().solve(&r_free),
    }
    .ok_or(Error::NoConvergence {
        residual: f64::INFINITY,
    })?;
    for (idx, &i) in free.iter().enumerate() {
        y[i] = sol[idx];
    }
    Ok(y)
}

fn stamp(g: &mut DMatrix<f64>, i: usize, j: usize, k: f64) {
    if i > 0 {
        g[(i - 1, i - 1)] += k;
    }
    if j > 0 {
        g[(j - 1, j - 1)] += k;
    }
    if i > 0 && j > 0 {
        g[(i - 1, j - 1)] -= k;
        g[(j - 1, i - 1)] -= k;
    }
}

fn singular(net: &Network) -> Error {
    Error::SingularNetwork {
        floating: net.floating_nodes(),
    }
}

fn factor_nodal(net: &Network, g: DMatrix<f64>) -> Result<Lu> {
    let floating = net.floating_nodes();
    if !floating.is_empty() {
        return Err(Error::SingularNetwork { floating });
    }
    let lu = g.lu();
    if !lu.is_invertible() {
        return Err(singular(net));
    }
    Ok(lu)
}

fn solve_nodal(net: &Network, g: DMatrix<f64>, s: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = factor_nodal(net, g)?;
    let v = lu.solve(s).ok_or_else(|| singular(net))?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(singular(net))
    }
}

/// Operating point at every non-ground node.
pub fn dc_node_voltages(net: &Network, fidelity: &Fidelity) -> Result<DVector<f64>> {
    let model = ActiveModel::build(net, fidelity)?;
    let y = model.steady_state()?;
    Ok(model.nodes(&y, 1.0))
}

/// Operating point at the solution nodes `1..=n`.
pub fn dc_operating_point(net: &Network, fidelity: &Fidelity) -> Result<DVector<f64>> {
    let v = dc_node_voltages(net, fidelity)?;
    Ok(v.rows(0, net.unknowns).into_owned())
}

/// First time after which every node stays within
/// `max(band * |x_dc|, floor)` of `x_dc`. Only samples at or after
/// `step_time` are considered.
pub fn settling_time(
    traj: &Trajectory,
    x_dc: &[f64],
    band: f64,
    floor: f64,
    step_time: f64,
) -> Option<f64> {
    let inside = |sample: &[f64]| {
        sample
            .iter()
            .zip(x_dc)
            .all(|(v, r)| (v - r).abs() <= (band * r.abs()).max(floor))
    };
    let mut settle = None;
    for (t, sample) in traj.times.iter().zip(&traj.nodes).rev() {
        if *t < step_time {
            break;
        }
        if inside(sample) {
            settle = Some(*t);
        } else {
            break;
        }
    }
    settle
}

/// Transient response from an all-zero state with the supplies stepping at
/// `cfg.step_time`.
pub fn transient(net: &Network, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let model = ActiveModel::build(net, &cfg.fidelity)?;
    let y_dc = model.steady_state()?;
    let v_dc = model.nodes(&y_dc, 1.0);
    let mut run = Run::new(&model, cfg);
    let samples = ((cfg.t_end - cfg.step_time) / cfg.sample_interval + 1e-9).floor() as u64;

    let m = model.states();
    let mut y = DVector::zeros(m);
    run.record(0.0, &DVector::zeros(m), 0.0);
    if cfg.step_time > 0.0 && m > 0 {
        run.phase(&mut y, 0.0, cfg.step_time, 1, 0.0, false)?;
    }
    run.record(cfg.step_time, &y, 1.0);
    if m == 0 {
        for k in 1..=samples {
            run.record(cfg.step_time + k as f64 * cfg.sample_interval, &y, 1.0);
        }
    } else if !run.timed_out {
        run.phase(&mut y, cfg.step_time, cfg.sample_interval, samples, 1.0, true)?;
    }

    let v_dc_vec: Vec<f64> = v_dc.iter().copied().collect();
    let settle_time = if run.timed_out {
        None
    } else {
        settling_time(
            &run.traj,
            &v_dc_vec,
            cfg.convergence_band,
            cfg.convergence_floor,
            cfg.step_time,
        )
    };
    let v_final = model.nodes(&y, 1.0);
    let mut diagnostics = net.diagnostics.clone();
    if let Some(t) = run.saturated_at {
        diagnostics.push(format!("saturation detected at t = {t:.3e} s"));
    }
    if run.timed_out {
        diagnostics.push("run exceeded its wall-clock budget; settle time censored".into());
    }
    Ok(SimResult {
        x_dc: v_dc_vec[..model.unknowns].to_vec(),
        v_dc: v_dc_vec,
        v_final: v_final.iter().copied().collect(),
        y_final: y.iter().copied().collect(),
        trajectory: run.traj,
        settle_time,
        saturated: run.saturated_at.is_some(),
        timed_out: run.timed_out,
        dynamic_states: m,
        stats: run.stats,
        max_error_vs_truth: None,
        diagnostics,
    })
}

/// Step key, pinned (slew or rail limited) amplifiers, their pinned values,
/// and the LU of the system over the free amplifiers.
type LimitedFactor = (u64, Vec<usize>, Vec<Option<f64>>, Lu);

struct Run<'a> {
    model: &'a ActiveModel,
    cfg: &'a SimConfig,
    jac: DMatrix<f64>,
    lu_cache: HashMap<u64, Lu>,
    limited_cache: Option<LimitedFactor>,
    traj: Trajectory,
    stats: StepStats,
    rail_run: Vec<u32>,
    saturated_at: Option<f64>,
    deadline: Option<Instant>,
    timed_out: bool,
}

impl<'a> Run<'a> {
    fn new(model: &'a ActiveModel, cfg: &'a SimConfig) -> Self {
        let jac = if model.states() > 0 {
            model.jacobian()
        } else {
            DMatrix::zeros(0, 0)
        };
        Self {
            model,
            cfg,
            jac,
            lu_cache: HashMap::new(),
            limited_cache: None,
            traj: Trajectory::default(),
            stats: StepStats::default(),
            rail_run: vec![0; model.states()],
            saturated_at: None,
            deadline: cfg.timeout.map(|d| Instant::now() + d),
            timed_out: false,
        }
    }

    fn record(&mut self, t: f64, y: &DVector<f64>, u: f64) {
        let v = self.model.nodes(y, u);
        let amps = self.cfg.record_amps.then_some(y);
        self.traj.push(t, &v, amps);
    }

    /// Integrates `count` intervals of length `interval` starting at `t0`.
    fn phase(
        &mut self,
        y: &mut DVector<f64>,
        t0: f64,
        interval: f64,
        count: u64,
        u: f64,
        record: bool,
    ) -> Result<()> {
        let model = self.model.model();
        let per_sample: u64 = 1 << MAX_LEVEL;
        let end = count * per_sample;
        let level_for = |h: f64| -> u32 {
            ((interval / h).log2().ceil().max(0.0) as u32).min(MAX_LEVEL)
        };
        let min_level = level_for(self.cfg.dt_max);
        let h_start = 0.01 / (2.0 * std::f64::consts::PI * model.gbw);
        let mut level = level_for(h_start).max(min_level);
        let forcing = self.model.forcing(u);
        let mut tick: u64 = 0;
        let mut prev: Option<(DVector<f64>, f64)> = None;
        let mut steps = 0usize;

        while tick < end {
            let span = 1u64 << (MAX_LEVEL - level);
            let h = interval * span as f64 / per_sample as f64;
            let (y1, limited) = self.step(y, h, &forcing)?;
            let rate = (&y1 - &*y) / h;
            let err = match &prev {
                Some((r0, h0)) => {
                    let mut worst: f64 = 0.0;
                    for i in 0..y1.len() {
                        let lte = h * h * (rate[i] - r0[i]).abs() / (h + h0);
                        let tol = self.cfg.atol + self.cfg.rtol * y1[i].abs();
                        worst = worst.max(lte / tol);
                    }
                    worst
                }
                None => 0.0,
            };
            if err > 1.0 {
                if level >= MAX_LEVEL {
                    return Err(Error::StepFailure {
                        time: t0 + tick as f64 / per_sample as f64 * interval,
                        dt_min: interval / per_sample as f64,
                    });
                }
                level += 1;
                self.stats.rejected += 1;
                continue;
            }
            *y = y1;
            tick += span;
            self.stats.accepted += 1;
            if limited {
                self.stats.limited += 1;
            }
            prev = Some((rate, h));
            let t = t0 + tick as f64 / per_sample as f64 * interval;
            self.track_rails(y, model.rails, t);
            if err < 0.1 && level > min_level && tick.is_multiple_of(2 * span) {
                level -= 1;
            }
            if record && tick.is_multiple_of(per_sample) {
                self.record(t, y, u);
            }
            steps += 1;
            if steps.is_multiple_of(DEADLINE_CHECK_EVERY) {
                if let Some(d) = self.deadline {
                    if Instant::now() > d {
                        self.timed_out = true;
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    fn track_rails(&mut self, y: &DVector<f64>, rails: f64, t: f64) {
        for (i, v) in y.iter().enumerate() {
            if v.abs() >= rails * (1.0 - 1e-12) {
                self.rail_run[i] += 1;
                if self.rail_run[i] >= 2 && self.saturated_at.is_none() {
                    self.saturated_at = Some(t);
                }
            } else {
                self.rail_run[i] = 0;
            }
        }
    }

    /// One backward-Euler step; returns the new state and whether any
    /// amplifier hit its slew or rail limit.
    fn step(
        &mut self,
        y0: &DVector<f64>,
        h: f64,
        forcing: &DVector<f64>,
    ) -> Result<(DVector<f64>, bool)> {
        let model = self.model.model();
        let n = y0.len();
        let rhs = y0 + forcing * h;
        let key = h.to_bits();
        if !self.lu_cache.contains_key(&key) {
            let a = DMatrix::identity(n, n) - &self.jac * h;
            self.lu_cache.insert(key, a.lu());
        }
        let mut y = self.lu_cache[&key]
            .solve(&rhs)
            .ok_or(Error::StepFailure {
                time: f64::NAN,
                dt_min: h,
            })?;
        let max_delta = model.slew * h;
        let mut fixed: Vec<Option<f64>> = vec![None; n];
        let mut any = false;
        for _ in 0..=n {
            let mut changed = false;
            for i in 0..n {
                if fixed[i].is_some() {
                    continue;
                }
                let delta = y[i] - y0[i];
                let mut v = y[i];
                if delta.abs() > max_delta {
                    v = y0[i] + max_delta.copysign(delta);
                }
                if v.abs() > model.rails {
                    v = model.rails.copysign(v);
                }
                if v != y[i] {
                    fixed[i] = Some(v);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            any = true;
            let a = DMatrix::identity(n, n) - &self.jac * h;
            let pinned: Vec<usize> = (0..n).filter(|&i| fixed[i].is_some()).collect();
            let reuse = matches!(&self.limited_cache, Some((k, p, _, _)) if *k == key && *p == pinned);
            y = if reuse {
                let lu = &self.limited_cache.as_ref().unwrap().3;
                solve_with_fixed(&a, &rhs, &fixed, Some(lu))?
            } else {
                let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
                let lu = a.select_rows(&free).select_columns(&free).lu();
                let y = solve_with_fixed(&a, &rhs, &fixed, Some(&lu))?;
                self.limited_cache = Some((key, pinned, fixed.clone(), lu));
                y
            };
        }
        Ok((y, any))
    }
}
