//! Built-in self-check suite run by `resmap verify`.
//!
//! Full composition:
//! * `spectrum_identity`: 50 random instances, n <= 50. Sorted eigenvalues of
//!   the block matrix equal the sorted union of `eig(A - Ks)` and
//!   `eig(2D - |A| - Ks)`, both computed from `A` directly, within 1e-8
//!   relative to the largest magnitude.
//! * `round_trip_stamps`: 100 random SPD systems over n in {5, 20, 100};
//!   ideal DC of the proposed network matches the dense solve within 1e-6.
//! * `component_counts`: dense worst-case inputs at n in {1, 5, 10, 100}
//!   reproduce the closed-form counts for both designs.
//! * `alpha_invariance`: 20 systems; ideal DC at alpha 0.1 and 10 agree
//!   within 1e-9 relative.
//! * `sdd_passivity`: 50 diagonally dominant systems map to proposed-design
//!   networks with no amplifiers. (The preliminary design still needs
//!   negative resistances for positive off-diagonal entries.)
//!
//! Quick mode keeps every check but shrinks it: 10 spectrum instances with
//! n <= 10, 12 round-trip systems over n in {5, 20}, counts at n in
//! {1, 5, 10}, 5 alpha systems, 10 dominant systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::devices::Fidelity;
use crate::error::Result;
use crate::linalg;
use crate::linsys::{self, fixtures, GeneratorSpec};
use crate::mapping::{self, count_components, ComponentCount, Design, MapOptions};
use crate::simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    /// Largest observed deviation (0 for exact checks).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub quick: bool,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Transformation under test; swapping it lets the suite be checked
/// against deliberately broken implementations.
pub type TransformFn = fn(
    &DMatrix<f64>,
    &nalgebra::DVector<f64>,
    &nalgebra::DVector<f64>,
) -> Result<mapping::TransformedSystem>;

pub fn run(quick: bool) -> VerifyReport {
    run_with(quick, mapping::transform)
}

pub fn run_with(quick: bool, transform: TransformFn) -> VerifyReport {
    let checks = vec![
        spectrum_identity(if quick { 10 } else { 50 }, if quick { 10 } else { 50 }, transform),
        round_trip(if quick { &[5, 20][..] } else { &[5, 20, 100][..] }, if quick { 12 } else { 100 }),
        component_counts(if quick { &[1, 5, 10][..] } else { &[1, 5, 10, 100][..] }),
        alpha_invariance(if quick { 5 } else { 20 }),
        sdd_passivity(if quick { 10 } else { 50 }),
    ];
    VerifyReport {
        quick,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn finish(name: &str, instances: usize, worst: f64, tolerance: f64, failures: Vec<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: failures.is_empty() && worst <= tolerance,
        instances,
        worst,
        tolerance,
        detail: if failures.is_empty() {
            String::new()
        } else {
            failures.join("; ")
        },
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn spectrum_identity(instances: usize, max_n: usize, transform: TransformFn) -> CheckResult {
    let tol = 1e-8;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..instances {
        let n = 1 + (k * 7919) % max_n;
        let outcome = (|| -> Result<f64> {
            let g = linsys::generate_random(&GeneratorSpec::standard(n, 1000 + k as u64))?;
            let a = &g.system.a;
            let ks = mapping::supply_conductances(&g.system.b, &mapping::Supplies::default());
            let d = mapping::build_d(a, &ks, mapping::DPolicy::Proposed, 0)?;
            let ts = transform(a, &ks, &d)?;
            let block = sorted(linalg::sym_eigenvalues(&ts.block_matrix())?.to_vec());
            // Reference blocks straight from A, independent of the transform.
            let ksm = linalg::diag(&ks);
            let diff = a - &ksm;
            let sum = linalg::diag(&d) * 2.0 - linalg::abs(a) - &ksm;
            let mut union: Vec<f64> = linalg::sym_eigenvalues(&diff)?.to_vec();
            union.extend(linalg::sym_eigenvalues(&sum)?.iter().copied());
            let union = sorted(union);
            let scale = union.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
            Ok(block
                .iter()
                .zip(&union)
                .map(|(x, y)| (x - y).abs() / scale)
                .fold(0.0, f64::max))
        })();
        match outcome {
            Ok(e) => worst = worst.max(e),
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    finish("spectrum_identity", instances, worst, tol, failures)
}

pub fn round_trip(sizes: &[usize], instances: usize) -> CheckResult {
    let tol = 1e-6;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..instances {
        let n = sizes[k % sizes.len()];
        let outcome = (|| -> Result<f64> {
            let g = linsys::generate_random(&GeneratorSpec::standard(n, 2000 + k as u64))?;
            let net = mapping::map_proposed(&g.system, &MapOptions::default())?.network;
            let x = simulate::dc_operating_point(&net, &Fidelity::Ideal)?;
            let direct = g.system.solve_direct().ok_or_else(|| {
                crate::error::Error::SingularNetwork { floating: vec![] }
            })?;
            let scale = direct.amax();
            Ok((x - &direct).amax() / scale)
        })();
        match outcome {
            Ok(e) => worst = worst.max(e),
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    finish("round_trip_stamps", instances, worst, tol, failures)
}

pub fn component_counts(sizes: &[usize]) -> CheckResult {
    let mut failures = Vec::new();
    for &n in sizes {
        let sys = fixtures::dense_worst_case(n);
        let opts = MapOptions::unscaled();
        let nets = [
            (Design::Preliminary, mapping::map_preliminary(&sys, &opts)),
            (Design::Proposed, mapping::map_proposed(&sys, &opts).map(|m| m.network)),
        ];
        for (design, net) in nets {
            match net {
                Ok(net) => {
                    let got = count_components(&net);
                    let want = ComponentCount::worst_case(design, n);
                    if got != want {
                        failures.push(format!("{design} n={n}: {got:?} != {want:?}"));
                    }
                }
                Err(e) => failures.push(format!("{design} n={n}: {e}")),
            }
        }
    }
    finish("component_counts", 2 * sizes.len(), 0.0, 0.0, failures)
}

pub fn alpha_invariance(instances: usize) -> CheckResult {
    let tol = 1e-9;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..instances {
        let n = [5, 10, 20][k % 3];
        let outcome = (|| -> Result<f64> {
            let g = linsys::generate_random(&GeneratorSpec::standard(n, 3000 + k as u64))?;
            let solve = |alpha: f64| -> Result<nalgebra::DVector<f64>> {
                let opts = MapOptions::unscaled().with_alpha(alpha);
                let net = mapping::map_proposed(&g.system, &opts)?.network;
                simulate::dc_operating_point(&net, &Fidelity::Ideal)
            };
            let (lo, hi) = (solve(0.1)?, solve(10.0)?);
            Ok((&lo - &hi).amax() / hi.amax())
        })();
        match outcome {
            Ok(e) => worst = worst.max(e),
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    finish("alpha_invariance", instances, worst, tol, failures)
}

pub fn sdd_passivity(instances: usize) -> CheckResult {
    let mut failures = Vec::new();
    for k in 0..instances {
        let n = 1 + k % 30;
        let outcome = (|| -> Result<Vec<String>> {
            let g = linsys::generate_diagonally_dominant(n, 1.0, mapping::DEFAULT_SUPPLY_VOLTAGE, 4000 + k as u64)?;
            let opts = MapOptions::default();
            let mut bad = Vec::new();
            let net = mapping::map_proposed(&g.system, &opts)?.network;
            if count_components(&net).opamps != 0 || !net.is_passive() {
                bad.push(format!("n={n} seed {}: active elements", 4000 + k));
            }
            Ok(bad)
        })();
        match outcome {
            Ok(bad) => failures.extend(bad),
            Err(e) => failures.push(format!("n={n}: {e}")),
        }
    }
    finish("sdd_passivity", instances, 0.0, 0.0, failures)
}
