//! Linear systems `A x = b` that feed the mapper.
//!
//! `A` is a conductance matrix in microsiemens and `b` a vector of injected
//! currents in microamperes, so the solution `x` comes out in volts.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for positive definiteness: `lambda_min > 1e-9 * lambda_max`.
pub const PD_TOL: f64 = 1e-9;

/// Attempts allowed when rejection-sampling for a conductance band.
pub const BAND_ATTEMPT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub label: String,
}

impl LinearSystem {
    /// Builds a system without checking it; see [`validate`].
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, label: impl Into<String>) -> Self {
        Self {
            a,
            b,
            label: label.into(),
        }
    }

    /// Builds a system and rejects it if any invariant is violated.
    pub fn try_new(a: DMatrix<f64>, b: DVector<f64>, label: impl Into<String>) -> Result<Self> {
        let sys = Self::new(a, b, label);
        let violations = validate(&sys);
        if violations.is_empty() {
            Ok(sys)
        } else {
            Err(Error::InvalidSystem(violations))
        }
    }

    pub fn from_rows(rows: &[&[f64]], b: &[f64], label: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        let a = DMatrix::from_fn(n, n, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN));
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("matrix rows must all have length {n}")));
        }
        Self::try_new(a, DVector::from_column_slice(b), label)
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `(s A, s b)`: both sides scaled, so the solution is unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self::new(&self.a * s, &self.b * s, self.label.clone())
    }

    pub fn negated(&self) -> Self {
        Self::new(-&self.a, -&self.b, format!("{} (negated)", self.label))
    }

    /// Dense direct solve. Only used as a reference answer.
    pub fn solve_direct(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&self.b)
    }
}

/// One broken [`LinearSystem`] invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    NotSquare { rows: usize, cols: usize },
    RhsLength { expected: usize, found: usize },
    Asymmetric { i: usize, j: usize, difference: f64 },
    NonFiniteMatrix { i: usize, j: usize },
    NonFiniteRhs { i: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "system has no unknowns"),
            Violation::NotSquare { rows, cols } => write!(f, "A is {rows}x{cols}, not square"),
            Violation::RhsLength { expected, found } => {
                write!(f, "b has length {found}, expected {expected}")
            }
            Violation::Asymmetric { i, j, difference } => {
                write!(f, "asymmetry at ({i},{j}): |A_ij - A_ji| = {difference:e}")
            }
            Violation::NonFiniteMatrix { i, j } => write!(f, "non-finite entry at A({i},{j})"),
            Violation::NonFiniteRhs { i } => write!(f, "non-finite entry at b({i})"),
        }
    }
}

/// Lists every invariant violation; an empty list means the system is valid.
pub fn validate(sys: &LinearSystem) -> Vec<Violation> {
    let mut out = Vec::new();
    let (rows, cols) = sys.a.shape();
    if rows == 0 || cols == 0 {
        out.push(Violation::Empty);
        return out;
    }
    if rows != cols {
        out.push(Violation::NotSquare { rows, cols });
        return out;
    }
    if sys.b.len() != rows {
        out.push(Violation::RhsLength {
            expected: rows,
            found: sys.b.len(),
        });
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = sys.a[(i, j)];
            if !v.is_finite() {
                out.push(Violation::NonFiniteMatrix { i, j });
            } else if j > i && sys.a[(j, i)].is_finite() && v != sys.a[(j, i)] {
                out.push(Violation::Asymmetric {
                    i,
                    j,
                    difference: (v - sys.a[(j, i)]).abs(),
                });
            }
        }
    }
    for (i, v) in sys.b.iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFiniteRhs { i });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemClass {
    Unsymmetric,
    SymmetricNonPd,
    SpdNotDiagonallyDominant,
    /// Symmetric diagonally dominant (and positive definite).
    SpdDiagonallyDominant,
}

impl SystemClass {
    pub fn is_positive_definite(self) -> bool {
        matches!(
            self,
            SystemClass::SpdNotDiagonallyDominant | SystemClass::SpdDiagonallyDominant
        )
    }
}

impl fmt::Display for SystemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SystemClass::Unsymmetric => "unsymmetric",
            SystemClass::SymmetricNonPd => "symmetric, not positive definite",
            SystemClass::SpdNotDiagonallyDominant => "SPD, not diagonally dominant",
            SystemClass::SpdDiagonallyDominant => "SPD, diagonally dominant",
        };
        f.write_str(s)
    }
}

/// Per-column diagonal-dominance margin `A_ii - Ks_ii - sum_{j != i} |A_ji|`.
pub fn dominance_margins(a: &DMatrix<f64>, ks: &DVector<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|i| {
            let off: f64 = (0..a.nrows())
                .filter(|&j| j != i)
                .map(|j| a[(j, i)].abs())
                .sum();
            a[(i, i)] - ks[i] - off
        })
        .collect()
}

/// Classifies `A` against the supply-conductance diagonal `ks`.
///
/// Symmetry and dominance are judged relative to the matrix scale with `tol`;
/// positive definiteness of `A - Ks` uses `lambda_min > tol * max|lambda|`.
pub fn classify(sys: &LinearSystem, ks: &DVector<f64>, tol: f64) -> Result<SystemClass> {
    let n = sys.n();
    if sys.a.shape() != (n, n) || ks.len() != n {
        return Err(Error::Dimension(format!(
            "A is {:?}, b has {n} entries, Ks has {}",
            sys.a.shape(),
            ks.len()
        )));
    }
    let scale = sys.a.amax().max(f64::MIN_POSITIVE);
    let (asym, _, _) = linalg::max_asymmetry(&sys.a);
    if asym > tol * scale {
        return Ok(SystemClass::Unsymmetric);
    }
    let shifted = &sys.a - linalg::diag(ks);
    if !linalg::is_positive_definite(&shifted, tol)? {
        return Ok(SystemClass::SymmetricNonPd);
    }
    let dominant = dominance_margins(&sys.a, ks)
        .iter()
        .enumerate()
        .all(|(i, m)| *m >= -tol * (sys.a[(i, i)].abs() + ks[i]).max(scale * f64::EPSILON));
    Ok(if dominant {
        SystemClass::SpdDiagonallyDominant
    } else {
        SystemClass::SpdNotDiagonallyDominant
    })
}

/// Result of turning an arbitrary square system into a symmetric one.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub system: LinearSystem,
    /// `A^T A` is numerically singular, so the normal equations have no
    /// unique solution.
    pub singular: bool,
}

/// Normal equations `A^T A x = A^T b`.
pub fn normalize_unsymmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Normalized> {
    let (rows, cols) = a.shape();
    if rows != cols || b.len() != rows {
        return Err(Error::Dimension(format!(
            "A is {rows}x{cols} and b has {} entries",
            b.len()
        )));
    }
    let at = a.transpose();
    let mut ata = &at * a;
    // Exact symmetry; the product can differ in the last ulp.
    for i in 0..cols {
        for j in (i + 1)..cols {
            let m = 0.5 * (ata[(i, j)] + ata[(j, i)]);
            ata[(i, j)] = m;
            ata[(j, i)] = m;
        }
    }
    let atb = &at * b;
    let eig = linalg::sym_eigenvalues(&ata)?;
    let singular = !linalg::pd_from_spectrum(&eig, PD_TOL);
    Ok(Normalized {
        system: LinearSystem::new(ata, atb, "normal equations"),
        singular,
    })
}

/// Target window for the largest conductance of the mapped (2n) network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceBand {
    /// Centre of the band in uS.
    pub center: f64,
    /// Half-width as a fraction of the centre.
    pub tolerance: f64,
}

impl ConductanceBand {
    pub fn contains(&self, g: f64) -> bool {
        (g - self.center).abs() <= self.tolerance * self.center
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    /// Fraction of off-diagonal pairs kept, in (0, 1].
    pub density: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    /// Range of the true solution entries, volts.
    pub x_range: (f64, f64),
    pub seed: u64,
    pub band: Option<ConductanceBand>,
}

impl GeneratorSpec {
    /// Dense systems with eigenvalues in [10, 1000] uS and x in [-0.5, 0.5] V.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            n,
            density: 1.0,
            eig_min: 10.0,
            eig_max: 1000.0,
            x_range: (-0.5, 0.5),
            seed,
            band: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "density {} outside (0, 1]",
                self.density
            )));
        }
        if !(self.eig_min > 0.0 && self.eig_min <= self.eig_max && self.eig_max.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < eig_min <= eig_max, got [{}, {}]",
                self.eig_min, self.eig_max
            )));
        }
        if !(self.x_range.0 <= self.x_range.1) {
            return Err(Error::InvalidSpec("x_range is reversed".into()));
        }
        if let Some(band) = self.band {
            if !(band.center > 0.0 && band.tolerance >= 0.0) {
                return Err(Error::InvalidSpec("band needs center > 0, tolerance >= 0".into()));
            }
        }
        Ok(())
    }
}

/// A generated system together with the solution it was built from.
#[derive(Debug, Clone)]
pub struct Generated {
    pub system: LinearSystem,
    pub x_true: DVector<f64>,
    /// Attempts consumed by band rejection sampling (1 without a band).
    pub attempts: usize,
}

/// Random symmetric positive-definite system with a controlled spectrum.
///
/// The spectrum always contains `eig_min` and `eig_max` (for `n >= 2`) with
/// the remaining eigenvalues uniform in between, rotated by a Haar-random
/// orthogonal matrix. For `density < 1` a symmetric off-diagonal mask is
/// applied and the spectrum is mapped back inside the band by a shift (and a
/// contraction if needed), so it lies within, but no longer spans, the band.
pub fn generate_random(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let budget = if spec.band.is_some() {
        BAND_ATTEMPT_BUDGET
    } else {
        1
    };
    for attempt in 1..=budget {
        let (system, x_true) = draw_system(spec, &mut rng)?;
        match spec.band {
            Some(band) => {
                let g = crate::mapping::max_mapped_conductance(&system)?;
                if band.contains(g) {
                    return Ok(Generated {
                        system,
                        x_true,
                        attempts: attempt,
                    });
                }
            }
            None => {
                return Ok(Generated {
                    system,
                    x_true,
                    attempts: attempt,
                })
            }
        }
    }
    let band = spec.band.expect("budget > 1 only with a band");
    Err(Error::BandUnsatisfiable {
        attempts: budget,
        center: band.center,
        tolerance: band.tolerance,
    })
}

fn draw_system(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<(LinearSystem, DVector<f64>)> {
    let n = spec.n;
    let spectrum = draw_spectrum(spec, rng);
    let q = haar_orthogonal(n, rng);
    let mut a = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
    symmetrize(&mut a);

    if spec.density < 1.0 && n > 1 {
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() >= spec.density {
                    a[(i, j)] = 0.0;
                    a[(j, i)] = 0.0;
                }
            }
        }
        reproject_spectrum(&mut a, spec.eig_min, spec.eig_max)?;
    }

    let (lo, hi) = spec.x_range;
    let x_true = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let b = &a * &x_true;
    let label = format!("random n={n} seed={}", spec.seed);
    Ok((LinearSystem::new(a, b, label), x_true))
}

fn draw_spectrum(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let (lo, hi) = (spec.eig_min, spec.eig_max);
    let n = spec.n;
    DVector::from_fn(n, |i, _| match (n, i) {
        (1, _) => lo + (hi - lo) * rng.random::<f64>(),
        (_, 0) => lo,
        (_, 1) => hi,
        _ => lo + (hi - lo) * rng.random::<f64>(),
    })
}

fn haar_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Affine map `s A + c I` (s <= 1) that brings the spectrum back into
/// `[lo, hi]`. Scaling preserves the sparsity pattern.
fn reproject_spectrum(a: &mut DMatrix<f64>, lo: f64, hi: f64) -> Result<()> {
    let eig = linalg::sym_eigenvalues(a)?;
    let (mu_lo, mu_hi) = (eig[0], eig[eig.len() - 1]);
    let width = mu_hi - mu_lo;
    let s = if width > hi - lo && width > 0.0 {
        (hi - lo) / width
    } else {
        1.0
    };
    let new_lo = s * mu_lo;
    let c = if new_lo < lo {
        lo - new_lo
    } else if s * mu_hi > hi {
        hi - s * mu_hi
    } else {
        0.0
    };
    *a *= s;
    for i in 0..a.nrows() {
        a[(i, i)] += c;
    }
    Ok(())
}

/// Random symmetric system that is diagonally dominant against its own
/// supply conductances `Ks = |b| / supply`, so it maps to a passive network.
pub fn generate_diagonally_dominant(
    n: usize,
    density: f64,
    supply: f64,
    seed: u64,
) -> Result<Generated> {
    if n == 0 || !(density > 0.0 && density <= 1.0) || !(supply > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "n={n}, density={density}, supply={supply}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                let v = -300.0 + 600.0 * rng.random::<f64>();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
    }
    let x_true = DVector::from_fn(n, |_, _| -0.5 + rng.random::<f64>());
    let ks_factor = 1.0 / supply;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        let rest: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| a[(i, j)] * x_true[j])
            .sum();
        let margin = 1.0 + 49.0 * rng.random::<f64>();
        // A_ii (1 - |x_i| / V) >= off + |rest| / V + margin keeps the column
        // dominant after Ks = |A_ii x_i + rest| / V is subtracted.
        let denom = 1.0 - ks_factor * x_true[i].abs();
        a[(i, i)] = (off + ks_factor * rest.abs() + margin) / denom;
    }
    let b = &a * &x_true;
    Ok(Generated {
        system: LinearSystem::new(a, b, format!("dominant n={n} seed={seed}")),
        x_true,
        attempts: 1,
    })
}

/// Fixed 5x5 test case: positive definite, not diagonally dominant, with
/// positive off-diagonal entries, built so that the solution is
/// `[0.32, 0.21, 0.29, 0.37, -0.18]` V.
pub mod fixtures {
    use super::*;

    pub const REFERENCE_X: [f64; 5] = [0.32, 0.21, 0.29, 0.37, -0.18];

    pub const REFERENCE_A: [[f64; 5]; 5] = [
        [400.0, 120.0, -80.0, 60.0, 90.0],
        [120.0, 350.0, 100.0, -70.0, 40.0],
        [-80.0, 100.0, 380.0, 110.0, -60.0],
        [60.0, -70.0, 110.0, 420.0, 130.0],
        [90.0, 40.0, -60.0, 130.0, 360.0],
    ];

    pub fn reference_system() -> LinearSystem {
        let a = DMatrix::from_fn(5, 5, |i, j| REFERENCE_A[i][j]);
        let x = DVector::from_row_slice(&REFERENCE_X);
        let b = &a * &x;
        LinearSystem::new(a, b, "reference positive definite 5x5")
    }

    pub fn reference_solution() -> DVector<f64> {
        DVector::from_row_slice(&REFERENCE_X)
    }

    /// Dense input that needs every element of both designs: all-ones `A`
    /// (every off-diagonal positive, so active) and `b_i = 8n` uA, large
    /// enough that every column loses dominance once `Ks` is subtracted.
    /// Only positive semidefinite for `n > 1`; meant for counting.
    pub fn dense_worst_case(n: usize) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_element(n, n, 1.0),
            DVector::from_element(n, 8.0 * n as f64),
            format!("dense worst case n={n}"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(rows: &[&[f64]], b: &[f64]) -> LinearSystem {
        let n = rows.len();
        LinearSystem::new(
            DMatrix::from_fn(n, n, |i, j| rows[i][j]),
            DVector::from_row_slice(b),
            "t",
        )
    }

    #[test]
    fn validate_accepts_symmetric() {
        assert!(validate(&sys(&[&[1.0, 2.0], &[2.0, 1.0]], &[0.0, 0.0])).is_empty());
    }

    #[test]
    fn validate_reports_asymmetry_location() {
        let v = validate(&sys(&[&[1.0, 2.0], &[3.0, 1.0]], &[0.0, 0.0]));
        assert_eq!(
            v,
            vec![Violation::Asymmetric {
                i: 0,
                j: 1,
                difference: 1.0
            }]
        );
    }

    #[test]
    fn validate_reports_nan() {
        let v = validate(&sys(&[&[1.0, 0.0], &[0.0, f64::NAN]], &[0.0, 0.0]));
        assert_eq!(v, vec![Violation::NonFiniteMatrix { i: 1, j: 1 }]);
        let v = validate(&sys(&[&[1.0]], &[f64::INFINITY]));
        assert_eq!(v, vec![Violation::NonFiniteRhs { i: 0 }]);
    }

    #[test]
    fn validate_reports_shape_problems() {
        let s = LinearSystem::new(DMatrix::zeros(2, 2), DVector::zeros(3), "t");
        assert_eq!(
            validate(&s),
            vec![Violation::RhsLength {
                expected: 2,
                found: 3
            }]
        );
        let s = LinearSystem::new(DMatrix::zeros(0, 0), DVector::zeros(0), "t");
        assert_eq!(validate(&s), vec![Violation::Empty]);
    }

    #[test]
    fn classify_dominant_example() {
        let s = sys(
            &[&[6.0, -2.0, -3.0], &[-2.0, 6.0, -4.0], &[-3.0, -4.0, 12.0]],
            &[0.0; 3],
        );
        let c = classify(&s, &DVector::zeros(3), PD_TOL).unwrap();
        assert_eq!(c, SystemClass::SpdDiagonallyDominant);
    }

    #[test]
    fn classify_fixture_and_its_negation() {
        let s = fixtures::reference_system();
        // A alone is diagonally dominant; the supply conductances break it.
        assert_eq!(
            classify(&s, &DVector::zeros(5), PD_TOL).unwrap(),
            SystemClass::SpdDiagonallyDominant
        );
        let ks = s.b.map(|v| 0.25 * v.abs());
        assert_eq!(
            classify(&s, &ks, PD_TOL).unwrap(),
            SystemClass::SpdNotDiagonallyDominant
        );
        assert_eq!(
            classify(&s.negated(), &ks, PD_TOL).unwrap(),
            SystemClass::SymmetricNonPd
        );
    }

    #[test]
    fn classify_unsymmetric() {
        let s = sys(&[&[2.0, 1.0], &[0.0, 2.0]], &[1.0, 1.0]);
        assert_eq!(
            classify(&s, &DVector::zeros(2), PD_TOL).unwrap(),
            SystemClass::Unsymmetric
        );
    }

    #[test]
    fn classify_rejects_bad_ks_length() {
        let s = sys(&[&[2.0]], &[1.0]);
        assert!(classify(&s, &DVector::zeros(2), PD_TOL).is_err());
    }

    #[test]
    fn normalize_identity_and_permutation() {
        let out = normalize_unsymmetric(&DMatrix::identity(2, 2), &DVector::from_row_slice(&[1.0, 2.0]))
            .unwrap();
        assert_eq!(out.system.a, DMatrix::identity(2, 2));
        assert_eq!(out.system.b.as_slice(), &[1.0, 2.0]);
        assert!(!out.singular);

        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = normalize_unsymmetric(&p, &DVector::from_row_slice(&[3.0, 4.0])).unwrap();
        assert_eq!(out.system.a, DMatrix::identity(2, 2));
        assert_eq!(out.system.b.as_slice(), &[4.0, 3.0]);
    }

    #[test]
    fn normalize_flags_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let out = normalize_unsymmetric(&a, &DVector::from_row_slice(&[1.0, 1.0])).unwrap();
        assert!(out.singular);
    }

    #[test]
    fn normalize_rejects_mismatch() {
        let err = normalize_unsymmetric(&DMatrix::zeros(2, 3), &DVector::zeros(2));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn generator_one_by_one() {
        let g = generate_random(&GeneratorSpec::standard(1, 3)).unwrap();
        let v = g.system.a[(0, 0)];
        assert!((10.0..=1000.0).contains(&v));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_random(&GeneratorSpec::standard(6, 11)).unwrap();
        let b = generate_random(&GeneratorSpec::standard(6, 11)).unwrap();
        assert_eq!(a.system, b.system);
        assert_eq!(a.x_true, b.x_true);
    }

    #[test]
    fn generator_rejects_bad_spec() {
        let mut s = GeneratorSpec::standard(3, 1);
        s.density = 0.0;
        assert!(generate_random(&s).is_err());
        let mut s = GeneratorSpec::standard(3, 1);
        s.eig_min = 20.0;
        s.eig_max = 10.0;
        assert!(generate_random(&s).is_err());
    }

    #[test]
    fn sparse_generator_stays_in_band() {
        let mut s = GeneratorSpec::standard(12, 5);
        s.density = 0.4;
        let g = generate_random(&s).unwrap();
        let eig = linalg::sym_eigenvalues(&g.system.a).unwrap();
        assert!(eig[0] >= 10.0 * (1.0 - 1e-9));
        assert!(eig[11] <= 1000.0 * (1.0 + 1e-9));
        let zeros = (0..12)
            .flat_map(|i| (0..12).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && g.system.a[(i, j)] == 0.0)
            .count();
        assert!(zeros > 0);
    }

    #[test]
    fn dominant_generator_is_dominant_against_its_supply() {
        for seed in 0..20 {
            let g = generate_diagonally_dominant(7, 0.7, 4.0, seed).unwrap();
            let ks = g.system.b.map(|v| v.abs() / 4.0);
            assert_eq!(
                classify(&g.system, &ks, PD_TOL).unwrap(),
                SystemClass::SpdDiagonallyDominant
            );
        }
    }

    #[test]
    fn band_unsatisfiable_names_budget() {
        let mut s = GeneratorSpec::standard(2, 1);
        s.band = Some(ConductanceBand {
            center: 1e7,
            tolerance: 0.01,
        });
        let err = generate_random(&s).unwrap_err();
        assert!(err.to_string().contains("10000 attempts"), "{err}");
    }
}
