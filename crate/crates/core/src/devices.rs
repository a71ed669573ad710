//! Behavioral models of the active parts of a negative-resistance element.
//!
//! A negative resistance of magnitude `k` between nodes `i` and `j` is built
//! from two unity-gain buffers and two non-inverting gain-2 stages. Stage `i`
//! drives `x_i' = 2 x_i - x_j` through a resistor `k` back into node `i`, so
//! node `i` receives `k (x_i' - x_i) = k (x_i - x_j)`: the current of a `-k`
//! conductance.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default gain-setting resistor: 10 kOhm.
pub const DEFAULT_GAIN_CONDUCTANCE: f64 = 100.0;
pub const DEFAULT_RAILS: f64 = 5.0;
pub const DEFAULT_DC_GAIN: f64 = 1e6;

/// Offset + single pole + slew limit + hard rails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpAmpModel {
    pub name: String,
    /// Input offset voltage, V.
    pub v_offset: f64,
    /// Gain-bandwidth product, Hz.
    pub gbw: f64,
    /// Slew rate, V/s.
    pub slew: f64,
    /// Output saturates at `+/- rails`, V.
    #[serde(default = "default_rails")]
    pub rails: f64,
    #[serde(default = "default_dc_gain")]
    pub dc_gain: f64,
}

fn default_rails() -> f64 {
    DEFAULT_RAILS
}

fn default_dc_gain() -> f64 {
    DEFAULT_DC_GAIN
}

impl OpAmpModel {
    pub fn new(name: &str, v_offset: f64, gbw: f64, slew: f64) -> Self {
        Self {
            name: name.to_string(),
            v_offset,
            gbw,
            slew,
            rails: DEFAULT_RAILS,
            dc_gain: DEFAULT_DC_GAIN,
        }
    }

    /// 1 mV, 4 MHz, 20 V/us.
    pub fn ad712() -> Self {
        Self::new("AD712", 1e-3, 4e6, 20e6)
    }

    /// 3 uV, 3 MHz, 2 V/us.
    pub fn ltc2050() -> Self {
        Self::new("LTC2050", 3e-6, 3e6, 2e6)
    }

    /// 2.5 mV, 500 MHz, 400 V/us.
    pub fn ltc6268() -> Self {
        Self::new("LTC6268", 2.5e-3, 500e6, 400e6)
    }

    pub fn builtins() -> Vec<Self> {
        vec![Self::ad712(), Self::ltc2050(), Self::ltc6268()]
    }

    pub fn builtin(name: &str) -> Option<Self> {
        Self::builtins()
            .into_iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
    }

    pub fn with_offset(mut self, v_offset: f64) -> Self {
        self.v_offset = v_offset;
        self
    }

    /// Open-loop pole, rad/s.
    pub fn pole(&self) -> f64 {
        2.0 * PI * self.gbw / self.dc_gain
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gbw > 0.0
            && self.slew > 0.0
            && self.rails > 0.0
            && self.dc_gain >= 1e4
            && self.v_offset.is_finite()
            && self.gbw.is_finite()
            && self.slew.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "op-amp model {:?} needs gbw > 0, slew > 0, rails > 0, dc_gain >= 1e4",
                self.name
            )))
        }
    }
}

/// Models keyed by name, seeded with the built-ins.
#[derive(Debug, Clone, PartialEq)]
pub struct OpAmpLibrary {
    models: BTreeMap<String, OpAmpModel>,
}

impl Default for OpAmpLibrary {
    fn default() -> Self {
        let mut lib = Self {
            models: BTreeMap::new(),
        };
        for m in OpAmpModel::builtins() {
            lib.insert(m);
        }
        lib
    }
}

impl OpAmpLibrary {
    pub fn insert(&mut self, model: OpAmpModel) {
        self.models.insert(model.name.to_ascii_lowercase(), model);
    }

    pub fn get(&self, name: &str) -> Option<&OpAmpModel> {
        self.models.get(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.values().map(|m| m.name.as_str()).collect()
    }

    /// Adds models from a JSON object `{ "name": { "v_offset": .., "gbw": .., "slew": .. }, .. }`.
    /// Entries override built-ins with the same name.
    pub fn extend_from_json(&mut self, text: &str) -> Result<()> {
        #[derive(Deserialize)]
        struct Entry {
            v_offset: f64,
            gbw: f64,
            slew: f64,
            #[serde(default = "default_rails")]
            rails: f64,
            #[serde(default = "default_dc_gain")]
            dc_gain: f64,
        }
        let table: BTreeMap<String, Entry> = serde_json::from_str(text)?;
        for (name, e) in table {
            let m = OpAmpModel {
                name,
                v_offset: e.v_offset,
                gbw: e.gbw,
                slew: e.slew,
                rails: e.rails,
                dc_gain: e.dc_gain,
            };
            m.validate()?;
            self.insert(m);
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut lib = Self::default();
        lib.extend_from_json(&std::fs::read_to_string(path)?)?;
        Ok(lib)
    }
}

/// How the active elements are modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fidelity", content = "model", rename_all = "snake_case")]
pub enum Fidelity {
    /// Negative resistances are exact `-k` conductances.
    Ideal,
    /// Every amplifier follows the given macromodel.
    Dynamic(OpAmpModel),
}

impl Fidelity {
    pub fn model(&self) -> Option<&OpAmpModel> {
        match self {
            Fidelity::Ideal => None,
            Fidelity::Dynamic(m) => Some(m),
        }
    }
}

/// One negative-resistance element as built from amplifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegResRealization {
    pub k: f64,
    /// Each of the four gain resistors, uS.
    pub k_r: f64,
    pub amp: OpAmpModel,
    pub buffer: OpAmpModel,
}

impl NegResRealization {
    pub fn new(k: f64, amp: OpAmpModel) -> Self {
        Self {
            k,
            k_r: DEFAULT_GAIN_CONDUCTANCE,
            buffer: amp.clone(),
            amp,
        }
    }
}

/// Outputs of the two gain stages for node voltages `x_i`, `x_j`.
pub fn ideal_stage_outputs(x_i: f64, x_j: f64) -> (f64, f64) {
    (2.0 * x_i - x_j, 2.0 * x_j - x_i)
}

/// Currents delivered into nodes `i` and `j` by an element of magnitude `k`.
pub fn element_currents(k: f64, x_i: f64, x_j: f64) -> (f64, f64) {
    let (xi_p, xj_p) = ideal_stage_outputs(x_i, x_j);
    (k * (xi_p - x_i), k * (xj_p - x_j))
}

/// Result of advancing one amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpStep {
    pub v_out: f64,
    pub slew_limited: bool,
    pub saturated: bool,
}

/// Advances the output of one amplifier by `dt` with backward Euler, the
/// inputs held at their new values. `feedback` is the fraction of the output
/// seen at the inverting input in addition to `v_minus` (0 for open loop,
/// 1 for a buffer, 0.5 for a gain-2 stage).
pub fn dynamic_amp_step_with_feedback(
    v_out: f64,
    v_plus: f64,
    v_minus: f64,
    feedback: f64,
    dt: f64,
    model: &OpAmpModel,
) -> AmpStep {
    let wp = model.pole();
    let a0 = model.dc_gain;
    let target = v_out + dt * wp * a0 * (v_plus + model.v_offset - v_minus);
    let mut next = target / (1.0 + dt * wp * (1.0 + a0 * feedback));
    let max_delta = model.slew * dt;
    let slew_limited = (next - v_out).abs() > max_delta;
    if slew_limited {
        next = v_out + max_delta.copysign(next - v_out);
    }
    let saturated = next.abs() >= model.rails;
    if saturated {
        next = model.rails.copysign(next);
    }
    AmpStep {
        v_out: next,
        slew_limited,
        saturated,
    }
}

/// Open-loop step with both inputs given.
pub fn dynamic_amp_step(v_out: f64, v_plus: f64, v_minus: f64, dt: f64, model: &OpAmpModel) -> AmpStep {
    dynamic_amp_step_with_feedback(v_out, v_plus, v_minus, 0.0, dt, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_outputs_examples() {
        let (a, b) = ideal_stage_outputs(0.3, 0.1);
        assert!((a - 0.5).abs() < 1e-15 && (b + 0.1).abs() < 1e-15);
        assert_eq!(ideal_stage_outputs(0.7, 0.7), (0.7, 0.7));
        let (a, b) = ideal_stage_outputs(0.2, -0.2);
        assert!((a - 0.6).abs() < 1e-15 && (b + 0.6).abs() < 1e-15);
    }

    #[test]
    fn element_behaves_as_negative_conductance() {
        let (ii, ij) = element_currents(2.0, 0.3, 0.1);
        assert!((ii - 0.4).abs() < 1e-12);
        assert!((ij + 0.4).abs() < 1e-12);
        assert_eq!(element_currents(5.0, 0.2, 0.2), (0.0, 0.0));
    }

    #[test]
    fn superposition_matches_nodal_assembly() {
        // Two elements sharing node 0: -k1 to node 1 and -k2 to node 2.
        let (k1, k2) = (2.0, 3.0);
        let x = [0.4, -0.1, 0.25];
        let i0 = element_currents(k1, x[0], x[1]).0 + element_currents(k2, x[0], x[2]).0;
        // Row 0 of the nodal matrix with -k stamps, negated into "delivered".
        let g_row = [-(k1 + k2), k1, k2];
        let stamped: f64 = -g_row.iter().zip(&x).map(|(g, v)| g * v).sum::<f64>();
        assert!((i0 - stamped).abs() < 1e-12);
    }

    fn simulate_buffer(model: &OpAmpModel, step: f64, dt: f64, t_end: f64) -> Vec<(f64, f64)> {
        let mut y = 0.0;
        let mut t = 0.0;
        let mut out = vec![(0.0, 0.0)];
        while t < t_end {
            y = dynamic_amp_step_with_feedback(y, step, 0.0, 1.0, dt, model).v_out;
            t += dt;
            out.push((t, y));
        }
        out
    }

    fn crossing(traj: &[(f64, f64)], level: f64) -> f64 {
        let w = traj.windows(2).find(|w| w[1].1 >= level).unwrap();
        let (t0, y0) = w[0];
        let (t1, y1) = w[1];
        t0 + (level - y0) / (y1 - y0) * (t1 - t0)
    }

    #[test]
    fn buffer_small_step_rise_time() {
        let model = OpAmpModel::ad712().with_offset(0.0);
        let dt = 1e-10;
        let traj = simulate_buffer(&model, 1e-3, dt, 2e-6);
        let rise = crossing(&traj, 0.9e-3) - crossing(&traj, 0.1e-3);
        // First-order closed loop at 2*pi*gbw: ln(9)/(2*pi*gbw).
        let expected = 9f64.ln() / (2.0 * PI * model.gbw);
        assert!((rise - expected).abs() / expected < 0.02, "{rise} vs {expected}");
        assert!((rise - 0.35 / model.gbw).abs() / (0.35 / model.gbw) < 0.02);
    }

    #[test]
    fn large_step_ramps_at_slew_rate() {
        let model = OpAmpModel::ad712().with_offset(0.0);
        let dt = 1e-9;
        let traj = simulate_buffer(&model, 2.0, dt, 50e-9);
        for w in traj.windows(2) {
            let rate = (w[1].1 - w[0].1) / dt;
            assert!((rate - model.slew).abs() / model.slew < 1e-9);
        }
    }

    #[test]
    fn offset_appears_times_closed_loop_gain() {
        let model = OpAmpModel::ad712();
        // Gain-2 stage with the inputs tied to ground.
        let mut y = 0.0;
        for _ in 0..20_000 {
            y = dynamic_amp_step_with_feedback(y, 0.0, 0.0, 0.5, 1e-9, &model).v_out;
        }
        assert!((y - 2.0 * model.v_offset).abs() < 1e-8, "{y}");
    }

    #[test]
    fn output_clips_at_rails() {
        let model = OpAmpModel::ltc6268();
        let mut y = 0.0;
        let mut hit = false;
        for _ in 0..1000 {
            let s = dynamic_amp_step(y, 1.0, 0.0, 1e-9, &model);
            y = s.v_out;
            hit |= s.saturated;
        }
        assert!(hit);
        assert_eq!(y, model.rails);
    }

    #[test]
    fn builtins_are_valid_and_looked_up_by_name() {
        for m in OpAmpModel::builtins() {
            m.validate().unwrap();
        }
        assert_eq!(OpAmpModel::builtin("ad712").unwrap().gbw, 4e6);
        assert!(OpAmpModel::builtin("nope").is_none());
        let bad = OpAmpModel {
            dc_gain: 10.0,
            ..OpAmpModel::ad712()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn library_loads_json_table() {
        let mut lib = OpAmpLibrary::default();
        lib.extend_from_json(r#"{"fast": {"v_offset": 1e-4, "gbw": 1e8, "slew": 1e8}, "AD712": {"v_offset": 0, "gbw": 4e6, "slew": 2e7}}"#)
            .unwrap();
        assert_eq!(lib.get("FAST").unwrap().rails, DEFAULT_RAILS);
        assert_eq!(lib.get("ad712").unwrap().v_offset, 0.0);
        assert!(lib.extend_from_json(r#"{"bad": {"v_offset": 0, "gbw": 0, "slew": 1}}"#).is_err());
        assert_eq!(lib.names().len(), 4);
    }
}
