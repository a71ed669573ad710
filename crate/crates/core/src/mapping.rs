//! Compiles a [`LinearSystem`] into a resistive [`Network`].
//!
//! Two designs are supported. The preliminary design maps `A - Ks` directly
//! onto `n` nodes; every positive off-diagonal entry of `A` (and every
//! negative column sum) becomes an active negative-resistance element. The
//! proposed design solves the `2n` system
//!
//! ```text
//! [ KA  KB ] [  x ]   [  b - Ks x ]
//! [ KB  KA ] [ -x ] = [ -b + Ks x ]
//! KA = D + (A - |A|)/2 - Ks
//! KB = D - (A + |A|)/2
//! ```
//!
//! whose off-diagonal entries are all non-positive except the diagonal of
//! `KB`, so at most `n` active elements remain, all between node `i` and
//! node `n + i`.
//!
//! Node numbering: ground is node 0 and unknown `i` (0-based) lives on node
//! `i + 1`; in the proposed design its mirror `-x_i` lives on node `n + i + 1`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linsys::{self, LinearSystem, PD_TOL};

pub const DEFAULT_SUPPLY_VOLTAGE: f64 = 4.0;
/// Default target for the largest mapped conductance when alpha is automatic.
pub const DEFAULT_ALPHA_TARGET: f64 = 500.0;
/// Realizable conductance range of the variable resistors, uS.
pub const DEFAULT_DEVICE_RANGE: (f64, f64) = (0.01, 10_000.0);

/// Entries smaller than this fraction of their column scale are treated as
/// exact zeros (open switches).
const SNAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Preliminary,
    Proposed,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Preliminary => "preliminary",
            Design::Proposed => "proposed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn of(v: f64) -> Self {
        if v < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ElementKind {
    PositiveResistor,
    /// Op-amp realized element that behaves as conductance `-k`.
    NegativeResistance,
    /// Resistor from node `i` to the positive or negative supply rail.
    SupplyBranch { polarity: Polarity },
    /// Resistor from node `i` to ground.
    GroundTie,
}

/// A circuit element. `conductance` is always positive (uS); the kind carries
/// the sign. Supply branches and ground ties use `j = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub kind: ElementKind,
    pub i: usize,
    pub j: usize,
    pub conductance: f64,
}

impl Element {
    /// Signed conductance as it appears in the nodal matrix.
    pub fn stamp_value(&self) -> f64 {
        match self.kind {
            ElementKind::NegativeResistance => -self.conductance,
            _ => self.conductance,
        }
    }
}

/// Supply rail voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supplies {
    pub positive: f64,
    pub negative: f64,
}

impl Default for Supplies {
    fn default() -> Self {
        Self::symmetric(DEFAULT_SUPPLY_VOLTAGE)
    }
}

impl Supplies {
    pub fn symmetric(v: f64) -> Self {
        Self {
            positive: v.abs(),
            negative: -v.abs(),
        }
    }

    pub fn voltage(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.positive,
            Polarity::Negative => self.negative,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.positive > 0.0 && self.negative < 0.0) {
            return Err(Error::InvalidOption(format!(
                "supplies must be +V/-V, got {} / {}",
                self.positive, self.negative
            )));
        }
        Ok(())
    }
}

/// `k_si = |b_i| / |x_si|`, i.e. `|0.25 b_i|` with 4 V rails.
pub fn supply_conductances(b: &DVector<f64>, supplies: &Supplies) -> DVector<f64> {
    b.map(|v| v.abs() / supplies.voltage(Polarity::of(v)).abs())
}

/// How the scale factor applied to every conductance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Alpha {
    Fixed(f64),
    /// Pick alpha so the largest mapped conductance equals this value (uS).
    TargetMax(f64),
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::TargetMax(DEFAULT_ALPHA_TARGET)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "beta", rename_all = "snake_case")]
pub enum DPolicy {
    /// `(Ks + colsum|A|)/2` on every column except the anchor, which gets
    /// `Ks + colsum|A|/2` (capped at `A_aa` when the column is dominant so its
    /// coupling stays passive): only the anchor pair of nodes is grounded.
    Proposed,
    /// `beta * max_i colsum|A| * I`, beta >= 0.5.
    ScaledIdentity(f64),
}

/// Column that receives the ground tie under [`DPolicy::Proposed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    First,
    LargestRhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub supplies: Supplies,
    pub alpha: Alpha,
    pub d_policy: DPolicy,
    pub anchor: Anchor,
    /// Realizable conductance range, uS.
    pub device_range: (f64, f64),
    /// Treat conductances below the range as errors instead of diagnostics.
    /// Conductances above the range are always errors.
    pub strict_range: bool,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            supplies: Supplies::default(),
            alpha: Alpha::default(),
            d_policy: DPolicy::Proposed,
            anchor: Anchor::First,
            device_range: DEFAULT_DEVICE_RANGE,
            strict_range: false,
        }
    }
}

impl MapOptions {
    /// Unscaled mapping, as used by the parameter studies.
    pub fn unscaled() -> Self {
        Self {
            alpha: Alpha::Fixed(1.0),
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Alpha::Fixed(alpha);
        self
    }

    pub fn with_d_policy(mut self, policy: DPolicy) -> Self {
        self.d_policy = policy;
        self
    }
}

/// A resistive network ready for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub design: Design,
    /// Number of unknowns of the original system.
    pub unknowns: usize,
    /// Number of nodes including ground (node 0).
    pub node_count: usize,
    pub elements: Vec<Element>,
    pub supplies: Supplies,
    pub alpha: f64,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl Network {
    /// Non-ground node count; the size of the nodal matrix.
    pub fn dim(&self) -> usize {
        self.node_count - 1
    }

    /// Ideal nodal conductance matrix over nodes `1..node_count` with
    /// negative-resistance elements stamped as `-k`.
    pub fn nodal_matrix(&self, include_supply: bool) -> DMatrix<f64> {
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        for e in &self.elements {
            if matches!(e.kind, ElementKind::SupplyBranch { .. }) && !include_supply {
                continue;
            }
            let k = e.stamp_value();
            stamp(&mut g, e.i, e.j, k);
        }
        g
    }

    /// Currents injected by the supply branches when the rails are on.
    pub fn source_currents(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim());
        for e in &self.elements {
            if let ElementKind::SupplyBranch { polarity } = e.kind {
                s[e.i - 1] += e.conductance * self.supplies.voltage(polarity);
            }
        }
        s
    }

    pub fn negative_elements(&self) -> impl Iterator<Item = &Element> {
        self.elements
            .iter()
            .filter(|e| e.kind == ElementKind::NegativeResistance)
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        self.elements.iter().filter(|e| e.kind == kind).count()
    }

    pub fn is_passive(&self) -> bool {
        self.negative_elements().next().is_none()
    }

    pub fn max_conductance(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| e.conductance)
            .fold(0.0, f64::max)
    }

    /// Nodes holding the solution `x` (1-based node ids).
    pub fn solution_nodes(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.unknowns
    }

    /// Structural invariants; returns human-readable problems.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (idx, e) in self.elements.iter().enumerate() {
            if e.i == 0 || e.i >= self.node_count || e.j >= self.node_count {
                out.push(format!("element {idx} references a node outside 0..{}", self.node_count));
            }
            if !(e.conductance > 0.0 && e.conductance.is_finite()) {
                out.push(format!("element {idx} has conductance {}", e.conductance));
            }
            let grounded = matches!(
                e.kind,
                ElementKind::SupplyBranch { .. } | ElementKind::GroundTie
            );
            if grounded && e.j != 0 {
                out.push(format!("element {idx} ({:?}) must connect to node 0", e.kind));
            }
            if e.i == e.j {
                out.push(format!("element {idx} connects node {} to itself", e.i));
            }
        }
        out
    }

    /// Nodes whose connected component has no path to ground or a supply.
    pub fn floating_nodes(&self) -> Vec<usize> {
        let dim = self.dim();
        let mut parent: Vec<usize> = (0..=dim).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.elements {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if a != b {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        (1..=dim).filter(|&v| find(&mut parent, v) != root).collect()
    }
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

/// Resistive-network reading of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductances {
    /// `(i, j, k_ij = -A_ij)` for `i < j` (0-based), nonzero entries only.
    /// Negative values mark negative-resistance placements.
    pub pairs: Vec<(usize, usize, f64)>,
    /// `k_0i = sum_j A_ji`.
    pub ground: Vec<f64>,
}

pub fn conductances_from_a(a: &DMatrix<f64>) -> Conductances {
    let n = a.nrows();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a[(i, j)] != 0.0 {
                pairs.push((i, j, -a[(i, j)]));
            }
        }
    }
    let ground = (0..n).map(|i| a.column(i).sum()).collect();
    Conductances { pairs, ground }
}

/// Whether a conductance left the realizable window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub element: usize,
    pub kind: ElementKind,
    pub i: usize,
    pub j: usize,
    pub conductance: f64,
    pub above: bool,
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "element {} ({:?} {}-{}) = {:.6e} uS is {} the device range",
            self.element,
            self.kind,
            self.i,
            self.j,
            self.conductance,
            if self.above { "above" } else { "below" }
        )
    }
}

fn enforce_range(net: &mut Network, opts: &MapOptions) -> Result<()> {
    let (lo, hi) = opts.device_range;
    let mut errors = Vec::new();
    for (idx, e) in net.elements.iter().enumerate() {
        let above = e.conductance > hi;
        let below = e.conductance < lo;
        if !(above || below) {
            continue;
        }
        let v = RangeViolation {
            element: idx,
            kind: e.kind,
            i: e.i,
            j: e.j,
            conductance: e.conductance,
            above,
        };
        if above || opts.strict_range {
            errors.push(v);
        } else {
            net.diagnostics.push(format!("range: {v}"));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Range(errors))
    }
}

fn snap(v: f64, scale: f64) -> f64 {
    if v.abs() <= SNAP_TOL * scale {
        0.0
    } else {
        v
    }
}

fn resolve_alpha(opts: &MapOptions, unscaled_max: impl FnOnce() -> Result<f64>) -> Result<f64> {
    let alpha = match opts.alpha {
        Alpha::Fixed(a) => a,
        Alpha::TargetMax(target) => {
            let m = unscaled_max()?;
            if m > 0.0 {
                target / m
            } else {
                1.0
            }
        }
    };
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidOption(format!("alpha must be positive, got {alpha}")));
    }
    Ok(alpha)
}

fn ensure_valid(sys: &LinearSystem) -> Result<()> {
    let v = linsys::validate(sys);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSystem(v))
    }
}

/// Preliminary `n`-node design: `(A - Ks) x = b - Ks x`.
pub fn map_preliminary(sys: &LinearSystem, opts: &MapOptions) -> Result<Network> {
    ensure_valid(sys)?;
    opts.supplies.validate()?;
    let alpha = resolve_alpha(opts, || {
        Ok(build_preliminary(sys, &opts.supplies, 1.0).max_conductance())
    })?;
    let mut net = build_preliminary(&sys.scaled(alpha), &opts.supplies, 1.0);
    net.alpha = alpha;
    enforce_range(&mut net, opts)?;
    Ok(net)
}

fn build_preliminary(sys: &LinearSystem, supplies: &Supplies, alpha: f64) -> Network {
    let n = sys.n();
    let ks = supply_conductances(&sys.b, supplies);
    let reduced = &sys.a - linalg::diag(&ks);
    let c = conductances_from_a(&reduced);
    let mut elements = Vec::new();

    for (i, &bi) in sys.b.iter().enumerate() {
        if bi != 0.0 {
            elements.push(Element {
                kind: ElementKind::SupplyBranch {
                    polarity: Polarity::of(bi),
                },
                i: i + 1,
                j: 0,
                conductance: ks[i],
            });
        }
    }
    for &(i, j, k) in &c.pairs {
        elements.push(Element {
            kind: if k > 0.0 {
                ElementKind::PositiveResistor
            } else {
                ElementKind::NegativeResistance
            },
            i: i + 1,
            j: j + 1,
            conductance: k.abs(),
        });
    }
    let mut diagnostics = Vec::new();
    let mut zero_columns = Vec::new();
    for (i, &k0) in c.ground.iter().enumerate() {
        let scale = reduced.column(i).abs().sum();
        let k0 = snap(k0, scale);
        if k0 == 0.0 {
            zero_columns.push(i + 1);
            continue;
        }
        elements.push(Element {
            kind: if k0 > 0.0 {
                ElementKind::GroundTie
            } else {
                ElementKind::NegativeResistance
            },
            i: i + 1,
            j: 0,
            conductance: k0.abs(),
        });
    }
    let mut net = Network {
        design: Design::Preliminary,
        unknowns: n,
        node_count: n + 1,
        elements,
        supplies: *supplies,
        alpha,
        diagnostics: Vec::new(),
    };
    if zero_columns.len() > 1 {
        diagnostics.push(format!(
            "columns {zero_columns:?} of A - Ks sum to zero; nodes have no ground tie"
        ));
    }
    let floating = net.floating_nodes();
    if !floating.is_empty() {
        diagnostics.push(format!("floating subnetwork: nodes {floating:?}"));
    }
    net.diagnostics = diagnostics;
    net
}

/// Diagonal of the D matrix.
pub fn build_d(
    a: &DMatrix<f64>,
    ks: &DVector<f64>,
    policy: DPolicy,
    anchor: usize,
) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || ks.len() != n || (n > 0 && anchor >= n) {
        return Err(Error::Dimension(format!(
            "A is {:?}, Ks has {} entries, anchor {anchor}",
            a.shape(),
            ks.len()
        )));
    }
    let col_abs: Vec<f64> = (0..n).map(|i| a.column(i).abs().sum()).collect();
    match policy {
        DPolicy::Proposed => Ok(DVector::from_fn(n, |i, _| {
            let base = 0.5 * ks[i] + 0.5 * col_abs[i];
            if i != anchor {
                return base;
            }
            let full = ks[i] + 0.5 * col_abs[i];
            // A dominant anchor column keeps a passive coupling: the ground
            // tie shrinks to its dominance margin instead.
            if a[(i, i)] >= base {
                full.min(a[(i, i)])
            } else {
                full
            }
        })),
        DPolicy::ScaledIdentity(beta) => {
            if !(beta >= 0.5) {
                return Err(Error::BetaTooSmall { beta });
            }
            let m = col_abs.iter().copied().fold(0.0, f64::max);
            Ok(DVector::from_element(n, beta * m))
        }
    }
}

/// Blocks of the `2n` system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedSystem {
    pub n: usize,
    pub k_a: DMatrix<f64>,
    pub k_b: DMatrix<f64>,
    /// Diagonal of `Ks`.
    pub k_s: DVector<f64>,
    /// Diagonal of `D`.
    pub d: DVector<f64>,
}

impl TransformedSystem {
    /// `[[KA, KB], [KB, KA]]`.
    pub fn block_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.k_a);
        m.view_mut((n, n), (n, n)).copy_from(&self.k_a);
        m.view_mut((0, n), (n, n)).copy_from(&self.k_b);
        m.view_mut((n, 0), (n, n)).copy_from(&self.k_b);
        m
    }

    pub fn sum(&self) -> DMatrix<f64> {
        &self.k_a + &self.k_b
    }

    pub fn difference(&self) -> DMatrix<f64> {
        &self.k_a - &self.k_b
    }

    /// The original matrix: `A = KA - KB + Ks`.
    pub fn original(&self) -> DMatrix<f64> {
        self.difference() + linalg::diag(&self.k_s)
    }
}

pub fn transform(a: &DMatrix<f64>, ks: &DVector<f64>, d: &DVector<f64>) -> Result<TransformedSystem> {
    let n = a.nrows();
    if a.ncols() != n || ks.len() != n || d.len() != n {
        return Err(Error::Dimension(format!(
            "A is {:?}, Ks has {}, D has {}",
            a.shape(),
            ks.len(),
            d.len()
        )));
    }
    let abs = linalg::abs(a);
    let dm = linalg::diag(d);
    let k_a = &dm + (a - &abs) * 0.5 - linalg::diag(ks);
    let k_b = &dm - (a + &abs) * 0.5;
    Ok(TransformedSystem {
        n,
        k_a,
        k_b,
        k_s: ks.clone(),
        d: d.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stability {
    /// `KA - KB = A - Ks` is positive definite.
    pub pd_original: bool,
    /// `KA + KB = 2D - |A| - Ks` is positive definite.
    pub pd_sum: bool,
    pub stable: bool,
    /// Both blocks are positive definite once the supply branches are added
    /// back (`A` and `2D - |A|`): the nodal matrix of the built circuit.
    pub pd_loaded: bool,
}

pub fn check_stability(ts: &TransformedSystem, tol: f64) -> Result<Stability> {
    let ks = linalg::diag(&ts.k_s);
    let diff = ts.difference();
    let sum = ts.sum();
    let pd_original = linalg::is_positive_definite(&diff, tol)?;
    let pd_sum = linalg::is_positive_definite(&sum, tol)?;
    let pd_loaded = linalg::is_positive_definite(&(&diff + &ks), tol)?
        && linalg::is_positive_definite(&(&sum + &ks), tol)?;
    Ok(Stability {
        pd_original,
        pd_sum,
        stable: pd_original && pd_sum,
        pd_loaded,
    })
}

/// Cross-point arrangement of the proposed network.
///
/// Rows `0..2n` are the x nodes and row `2n` is ground; columns `0..2n` are
/// the x nodes followed by the `xs+` and `xs-` supply columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosspointLayout {
    pub n: usize,
    pub grid: DMatrix<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `(i, n+i)` couplings (1-based nodes) kept out of the array.
    pub external: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedMapping {
    pub network: Network,
    pub transformed: TransformedSystem,
    pub layout: CrosspointLayout,
    pub stability: Stability,
}

/// Proposed `2n`-node design.
pub fn map_proposed(sys: &LinearSystem, opts: &MapOptions) -> Result<ProposedMapping> {
    ensure_valid(sys)?;
    opts.supplies.validate()?;
    if opts.supplies.positive != -opts.supplies.negative {
        return Err(Error::InvalidOption(
            "the proposed design needs symmetric supplies".into(),
        ));
    }
    let alpha = resolve_alpha(opts, || {
        Ok(build_proposed(sys, opts)?.0.max_conductance())
    })?;
    let (mut network, transformed) = build_proposed(&sys.scaled(alpha), opts)?;
    network.alpha = alpha;
    let stability = check_stability(&transformed, PD_TOL)?;
    if !stability.stable {
        network.diagnostics.push(format!(
            "transformed system not positive definite (A - Ks: {}, 2D - |A| - Ks: {})",
            stability.pd_original, stability.pd_sum
        ));
    }
    enforce_range(&mut network, opts)?;
    let scaled_b = &sys.b * alpha;
    let layout = crosspoint_layout(&transformed, &scaled_b, &opts.supplies);
    Ok(ProposedMapping {
        network,
        transformed,
        layout,
        stability,
    })
}

fn anchor_index(b: &DVector<f64>, anchor: Anchor) -> usize {
    match anchor {
        Anchor::First => 0,
        Anchor::LargestRhs => b.iamax(),
    }
}

fn build_proposed(sys: &LinearSystem, opts: &MapOptions) -> Result<(Network, TransformedSystem)> {
    let ks = supply_conductances(&sys.b, &opts.supplies);
    let anchor = anchor_index(&sys.b, opts.anchor);
    let d = build_d(&sys.a, &ks, opts.d_policy, anchor)?;
    let ts = transform(&sys.a, &ks, &d)?;
    let network = network_from_transformed(&ts, &sys.b, &opts.supplies, 1.0);
    Ok((network, ts))
}

/// Builds the `2n` network whose non-supply nodal matrix is the block matrix
/// of `ts` and whose supply branches realize `[b; -b]`.
pub fn network_from_transformed(
    ts: &TransformedSystem,
    b: &DVector<f64>,
    supplies: &Supplies,
    alpha: f64,
) -> Network {
    let n = ts.n;
    let k = ts.block_matrix();
    let col_scale: Vec<f64> = (0..2 * n).map(|q| k.column(q).abs().sum()).collect();
    let mut elements = Vec::new();

    for p in 0..2 * n {
        for q in (p + 1)..2 * n {
            let v = snap(k[(p, q)], col_scale[p].max(col_scale[q]));
            if v == 0.0 {
                continue;
            }
            elements.push(Element {
                kind: if v < 0.0 {
                    ElementKind::PositiveResistor
                } else {
                    ElementKind::NegativeResistance
                },
                i: p + 1,
                j: q + 1,
                conductance: v.abs(),
            });
        }
    }
    for (p, &scale) in col_scale.iter().enumerate() {
        let g0 = snap(k.row(p).sum(), scale);
        if g0 == 0.0 {
            continue;
        }
        elements.push(Element {
            kind: if g0 > 0.0 {
                ElementKind::GroundTie
            } else {
                ElementKind::NegativeResistance
            },
            i: p + 1,
            j: 0,
            conductance: g0.abs(),
        });
    }
    for (i, &bi) in b.iter().enumerate() {
        if bi == 0.0 || ts.k_s[i] == 0.0 {
            continue;
        }
        let polarity = Polarity::of(bi);
        for (node, pol) in [(i + 1, polarity), (n + i + 1, polarity.flipped())] {
            elements.push(Element {
                kind: ElementKind::SupplyBranch { polarity: pol },
                i: node,
                j: 0,
                conductance: ts.k_s[i],
            });
        }
    }
    let mut net = Network {
        design: Design::Proposed,
        unknowns: n,
        node_count: 2 * n + 1,
        elements,
        supplies: *supplies,
        alpha,
        diagnostics: Vec::new(),
    };
    for (i, &scale) in col_scale.iter().take(n).enumerate() {
        let c = -ts.k_b[(i, i)];
        if c != 0.0 && snap(c, scale) == 0.0 {
            net.diagnostics.push(format!(
                "coupling between nodes {} and {} is zero to round-off; omitted",
                i + 1,
                n + i + 1
            ));
        }
    }
    let floating = net.floating_nodes();
    if !floating.is_empty() {
        net.diagnostics
            .push(format!("floating subnetwork: nodes {floating:?}"));
    }
    net
}

/// Lays the transformed system out on the cross-point array.
pub fn crosspoint_layout(
    ts: &TransformedSystem,
    b: &DVector<f64>,
    supplies: &Supplies,
) -> CrosspointLayout {
    let n = ts.n;
    let k = ts.block_matrix();
    let mut grid = DMatrix::zeros(2 * n + 1, 2 * n + 2);
    let mut external = Vec::new();
    for p in 0..2 * n {
        for q in 0..2 * n {
            let kb_diagonal = p % n == q % n && p != q;
            if p == q || kb_diagonal {
                continue;
            }
            // KA/KB off-diagonals are <= 0: a resistor split into two halves.
            grid[(p, q)] = -k[(p, q)] / 2.0;
        }
    }
    for i in 0..n {
        let v = ts.k_b[(i, i)];
        let scale = k.column(i).abs().sum();
        let v = snap(v, scale);
        if v != 0.0 {
            external.push(Element {
                kind: if v < 0.0 {
                    ElementKind::PositiveResistor
                } else {
                    ElementKind::NegativeResistance
                },
                i: i + 1,
                j: n + i + 1,
                conductance: v.abs(),
            });
        }
    }
    for (i, &bi) in b.iter().enumerate() {
        if bi == 0.0 {
            continue;
        }
        let pol = Polarity::of(bi);
        let col = |p: Polarity| match p {
            Polarity::Positive => 2 * n,
            Polarity::Negative => 2 * n + 1,
        };
        let g = bi.abs() / supplies.voltage(pol).abs();
        grid[(i, col(pol))] = g;
        grid[(n + i, col(pol.flipped()))] = g;
    }
    for q in 0..2 * n {
        let scale = k.column(q).abs().sum();
        grid[(2 * n, q)] = snap(k.column(q).sum(), scale);
    }
    let mut row_labels: Vec<String> = (1..=2 * n).map(|p| format!("x{p}")).collect();
    row_labels.push("gnd".into());
    let mut col_labels: Vec<String> = (1..=2 * n).map(|p| format!("x{p}")).collect();
    col_labels.push("xs+".into());
    col_labels.push("xs-".into());
    CrosspointLayout {
        n,
        grid,
        row_labels,
        col_labels,
        external,
    }
}

/// Largest conductance of the unscaled proposed mapping; the quantity held
/// in a band by the size-independence experiments.
pub fn max_mapped_conductance(sys: &LinearSystem) -> Result<f64> {
    Ok(build_proposed(sys, &MapOptions::unscaled())?
        .0
        .max_conductance())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComponentCount {
    pub variable_resistors: usize,
    /// Fixed 10 kOhm gain resistors.
    pub fixed_resistors: usize,
    pub analog_switches: usize,
    pub opamps: usize,
}

impl ComponentCount {
    /// Closed-form worst case (every element present and active).
    pub fn worst_case(design: Design, n: usize) -> Self {
        match design {
            Design::Preliminary => Self {
                variable_resistors: n * n + 2 * n,
                fixed_resistors: 2 * (n * n + n),
                analog_switches: (3 * n * n + 5 * n) / 2,
                opamps: 2 * (n * n + n),
            },
            Design::Proposed => Self {
                variable_resistors: 2 * n * n + 1,
                fixed_resistors: 4 * n,
                analog_switches: 3 * n,
                opamps: 4 * n,
            },
        }
    }
}

/// Components engaged by a configured network.
///
/// Preliminary: every element circuit (resistor or negative resistance,
/// including ground elements) carries two variable resistors and three
/// switches, plus four op-amps and four gain resistors when negative; each
/// supply branch is one variable resistor and one switch.
///
/// Proposed: each inter-node resistor occupies two half-conductance
/// cross-point cells, each supply branch one supply-column cell, and the
/// ground row one shared cell; each `(i, n+i)` external element circuit has
/// three switches, plus four op-amps and four gain resistors when negative.
pub fn count_components(net: &Network) -> ComponentCount {
    let mut c = ComponentCount::default();
    let n = net.unknowns;
    let mut grounded = false;
    for e in &net.elements {
        let negative = e.kind == ElementKind::NegativeResistance;
        match net.design {
            Design::Preliminary => match e.kind {
                ElementKind::SupplyBranch { .. } => {
                    c.variable_resistors += 1;
                    c.analog_switches += 1;
                }
                _ => {
                    c.variable_resistors += 2;
                    c.analog_switches += 3;
                }
            },
            Design::Proposed => {
                let external = e.j != 0 && e.i.abs_diff(e.j) == n;
                match e.kind {
                    ElementKind::SupplyBranch { .. } => c.variable_resistors += 1,
                    ElementKind::GroundTie => grounded = true,
                    _ if external => c.analog_switches += 3,
                    ElementKind::NegativeResistance if e.j == 0 => {
                        grounded = true;
                        c.analog_switches += 3;
                    }
                    _ => c.variable_resistors += 2,
                }
            }
        }
        if negative {
            c.opamps += 4;
            c.fixed_resistors += 4;
        }
    }
    if grounded {
        c.variable_resistors += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::fixtures;

    fn system(rows: &[&[f64]], b: &[f64]) -> LinearSystem {
        LinearSystem::from_rows(rows, b, "t").unwrap()
    }

    #[test]
    fn conductances_of_diagonal_matrix() {
        let c = conductances_from_a(&DMatrix::from_row_slice(1, 1, &[5.0]));
        assert!(c.pairs.is_empty());
        assert_eq!(c.ground, vec![5.0]);
    }

    #[test]
    fn conductances_of_positive_offdiagonal() {
        let c = conductances_from_a(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert_eq!(c.pairs, vec![(0, 1, -1.0)]);
        assert_eq!(c.ground, vec![3.0, 3.0]);
    }

    #[test]
    fn conductances_invert_three_node_assembly() {
        // Assemble A from known resistors, then read them back.
        let (k01, k12, k13, k23, k03) = (1.0, 2.0, 3.0, 4.0, 5.0);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                k01 + k12 + k13,
                -k12,
                -k13,
                -k12,
                k12 + k23,
                -k23,
                -k13,
                -k23,
                k03 + k13 + k23,
            ],
        );
        let c = conductances_from_a(&a);
        assert_eq!(c.pairs, vec![(0, 1, k12), (0, 2, k13), (1, 2, k23)]);
        assert_eq!(c.ground, vec![k01, 0.0, k03]);
    }

    #[test]
    fn preliminary_supply_branch_arithmetic() {
        let s = system(&[&[10.0]], &[2.0]);
        let net = map_preliminary(&s, &MapOptions::unscaled()).unwrap();
        let supply: Vec<_> = net
            .elements
            .iter()
            .filter(|e| matches!(e.kind, ElementKind::SupplyBranch { .. }))
            .collect();
        assert_eq!(supply.len(), 1);
        assert_eq!(supply[0].conductance, 0.5);
        assert_eq!(
            supply[0].kind,
            ElementKind::SupplyBranch {
                polarity: Polarity::Positive
            }
        );
    }

    #[test]
    fn preliminary_zero_rhs_has_no_supply() {
        let s = system(&[&[3.0, -1.0], &[-1.0, 3.0]], &[0.0, 4.0]);
        let net = map_preliminary(&s, &MapOptions::unscaled()).unwrap();
        let supplies: Vec<_> = net
            .elements
            .iter()
            .filter(|e| matches!(e.kind, ElementKind::SupplyBranch { .. }))
            .map(|e| e.i)
            .collect();
        assert_eq!(supplies, vec![2]);
    }

    #[test]
    fn preliminary_range_error_lists_node() {
        let s = system(&[&[1e6]], &[1e6]);
        let err = map_preliminary(&s, &MapOptions::unscaled()).unwrap_err();
        match err {
            Error::Range(v) => assert!(v.iter().any(|r| r.i == 1 && r.above)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn strict_range_rejects_tiny_conductance() {
        let s = system(&[&[10.0, -0.001], &[-0.001, 10.0]], &[1.0, 1.0]);
        assert!(map_preliminary(&s, &MapOptions::unscaled()).is_ok());
        let opts = MapOptions {
            strict_range: true,
            ..MapOptions::unscaled()
        };
        assert!(matches!(map_preliminary(&s, &opts), Err(Error::Range(_))));
    }

    #[test]
    fn d_matrix_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 4.0]);
        let ks = DVector::zeros(2);
        let d = build_d(&a, &ks, DPolicy::Proposed, 0).unwrap();
        assert_eq!(d.as_slice(), &[3.5, 3.0]);
        let d = build_d(&a, &ks, DPolicy::ScaledIdentity(0.5), 0).unwrap();
        assert_eq!(d.as_slice(), &[3.5, 3.5]);
        assert!(matches!(
            build_d(&a, &ks, DPolicy::ScaledIdentity(0.4), 0),
            Err(Error::BetaTooSmall { .. })
        ));
    }

    #[test]
    fn transform_identity_case() {
        let i2 = DMatrix::identity(2, 2);
        let ts = transform(&i2, &DVector::zeros(2), &DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(ts.k_a, i2);
        assert_eq!(ts.k_b, DMatrix::zeros(2, 2));
    }

    #[test]
    fn two_by_two_proposed_layout() {
        let s = system(&[&[5.0, 2.0], &[2.0, 4.0]], &[1.0, 1.0]);
        let m = map_proposed(&s, &MapOptions::unscaled()).unwrap();
        assert_eq!(m.transformed.k_s.as_slice(), &[0.25, 0.25]);
        let net = &m.network;
        assert!(net.is_passive());
        let find = |i, j| {
            net.elements
                .iter()
                .find(|e| e.i == i && e.j == j)
                .map(|e| (e.kind, e.conductance))
        };
        // Positive A_12 is placed across the halves.
        assert_eq!(find(1, 4), Some((ElementKind::PositiveResistor, 2.0)));
        assert_eq!(find(2, 3), Some((ElementKind::PositiveResistor, 2.0)));
        // Couplings: anchor column also carries its ground tie.
        assert_eq!(find(1, 3), Some((ElementKind::PositiveResistor, 1.25)));
        assert_eq!(find(2, 4), Some((ElementKind::PositiveResistor, 0.875)));
        assert_eq!(find(1, 0), Some((ElementKind::GroundTie, 0.25)));
        assert_eq!(find(3, 0), Some((ElementKind::GroundTie, 0.25)));
        assert_eq!(net.count(ElementKind::GroundTie), 2);
    }

    #[test]
    fn dominant_anchor_column_stays_passive() {
        // Column 1: margin 5 covers Ks_1 = 3 but not the 2 Ks_1 an uncapped
        // anchor needs.
        let s = system(&[&[10.0, -5.0], &[-5.0, 20.0]], &[12.0, -8.0]);
        let m = map_proposed(&s, &MapOptions::unscaled()).unwrap();
        assert!(m.network.is_passive());
        assert!((m.transformed.d[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn proposed_dominant_system_is_passive() {
        let s = system(
            &[&[6.0, -2.0, -3.0], &[-2.0, 6.0, -4.0], &[-3.0, -4.0, 12.0]],
            &[0.0, 0.0, 0.0],
        );
        let m = map_proposed(&s, &MapOptions::unscaled()).unwrap();
        assert!(m.network.is_passive());
    }

    #[test]
    fn proposed_fixture_active_couplings() {
        let m = map_proposed(&fixtures::reference_system(), &MapOptions::unscaled()).unwrap();
        let neg: Vec<_> = m.network.negative_elements().map(|e| (e.i, e.j)).collect();
        // Columns 2 and 3 lack dominance against Ks.
        assert_eq!(neg, vec![(2, 7), (3, 8)]);
        // The anchor coupling vanishes; its ground tie is the margin 16 uS.
        assert_eq!(m.layout.external.len(), 4);
        let tie = m.network.elements.iter().find(|e| e.kind == ElementKind::GroundTie && e.i == 1).unwrap();
        assert!((tie.conductance - 16.0).abs() < 1e-9);
    }

    #[test]
    fn auto_alpha_hits_target() {
        let m = map_proposed(&fixtures::reference_system(), &MapOptions::default()).unwrap();
        assert!((m.network.max_conductance() - DEFAULT_ALPHA_TARGET).abs() < 1e-9);
        let p = map_preliminary(&fixtures::reference_system(), &MapOptions::default()).unwrap();
        assert!((p.max_conductance() - DEFAULT_ALPHA_TARGET).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_alpha_is_rejected() {
        let s = fixtures::reference_system();
        assert!(map_proposed(&s, &MapOptions::unscaled().with_alpha(0.0)).is_err());
    }

    #[test]
    fn asymmetric_supplies_rejected_for_proposed() {
        let opts = MapOptions {
            supplies: Supplies {
                positive: 4.0,
                negative: -3.0,
            },
            ..MapOptions::unscaled()
        };
        assert!(map_proposed(&fixtures::reference_system(), &opts).is_err());
        assert!(map_preliminary(&fixtures::reference_system(), &opts).is_ok());
    }

    #[test]
    fn layout_splits_resistors_and_labels_lines() {
        let s = system(&[&[5.0, -2.0], &[-2.0, 4.0]], &[1.0, -1.0]);
        let m = map_proposed(&s, &MapOptions::unscaled()).unwrap();
        let g = &m.layout.grid;
        assert_eq!(g.shape(), (5, 6));
        assert_eq!(g[(0, 1)], 1.0);
        assert_eq!(g[(1, 0)], 1.0);
        assert_eq!(g[(2, 3)], 1.0);
        // KB diagonal lives outside the array.
        assert_eq!(g[(0, 2)], 0.0);
        assert_eq!(g[(1, 3)], 0.0);
        // b_1 > 0: x1 on xs+, its mirror on xs-; b_2 < 0 the other way round.
        assert_eq!(g[(0, 4)], 0.25);
        assert_eq!(g[(2, 5)], 0.25);
        assert_eq!(g[(1, 5)], 0.25);
        assert_eq!(g[(3, 4)], 0.25);
        assert_eq!(g[(4, 0)], 0.25);
        assert_eq!(g[(4, 2)], 0.25);
        assert_eq!(g[(4, 1)], 0.0);
        assert_eq!(m.layout.row_labels.last().unwrap(), "gnd");
        assert_eq!(&m.layout.col_labels[4..], &["xs+", "xs-"]);
    }

    #[test]
    fn largest_rhs_anchor_moves_ground_tie() {
        let s = system(&[&[5.0, -2.0], &[-2.0, 4.0]], &[1.0, -3.0]);
        let opts = MapOptions {
            anchor: Anchor::LargestRhs,
            ..MapOptions::unscaled()
        };
        let m = map_proposed(&s, &opts).unwrap();
        let ties: Vec<_> = m
            .network
            .elements
            .iter()
            .filter(|e| e.kind == ElementKind::GroundTie)
            .map(|e| e.i)
            .collect();
        assert_eq!(ties, vec![2, 4]);
    }

    #[test]
    fn worst_case_formulas() {
        assert_eq!(
            ComponentCount::worst_case(Design::Preliminary, 10),
            ComponentCount {
                variable_resistors: 120,
                fixed_resistors: 220,
                analog_switches: 175,
                opamps: 220
            }
        );
        assert_eq!(
            ComponentCount::worst_case(Design::Proposed, 10),
            ComponentCount {
                variable_resistors: 201,
                fixed_resistors: 40,
                analog_switches: 30,
                opamps: 40
            }
        );
        assert_eq!(
            ComponentCount::worst_case(Design::Proposed, 1),
            ComponentCount {
                variable_resistors: 3,
                fixed_resistors: 4,
                analog_switches: 3,
                opamps: 4
            }
        );
    }

    #[test]
    fn floating_nodes_detected() {
        let net = Network {
            design: Design::Preliminary,
            unknowns: 3,
            node_count: 4,
            elements: vec![
                Element {
                    kind: ElementKind::GroundTie,
                    i: 1,
                    j: 0,
                    conductance: 1.0,
                },
                Element {
                    kind: ElementKind::PositiveResistor,
                    i: 2,
                    j: 3,
                    conductance: 1.0,
                },
            ],
            supplies: Supplies::default(),
            alpha: 1.0,
            diagnostics: vec![],
        };
        assert_eq!(net.floating_nodes(), vec![2, 3]);
    }
}
