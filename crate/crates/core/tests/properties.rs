use std::path::Path;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use resmap_core::analysis::{self, ErrorFloor};
use resmap_core::devices::{Fidelity, OpAmpModel};
use resmap_core::io;
use resmap_core::linsys::{self, GeneratorSpec, LinearSystem};
use resmap_core::mapping::{self, count_components, DPolicy, MapOptions};
use resmap_core::simulate::{self, SimConfig};

fn rel_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proposed_dc_solves_the_system(n in 1usize..12, seed in any::<u64>()) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let net = mapping::map_proposed(&g.system, &MapOptions::default()).unwrap().network;
        let x = simulate::dc_operating_point(&net, &Fidelity::Ideal).unwrap();
        prop_assert!(rel_gap(&x, &g.x_true) < 1e-8);
    }

    #[test]
    fn preliminary_dc_solves_the_system(n in 1usize..12, seed in any::<u64>()) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let net = mapping::map_preliminary(&g.system, &MapOptions::default()).unwrap();
        let x = simulate::dc_operating_point(&net, &Fidelity::Ideal).unwrap();
        prop_assert!(rel_gap(&x, &g.x_true) < 1e-8);
    }

    #[test]
    fn proposed_stamps_reproduce_the_block_system(n in 1usize..10, seed in any::<u64>()) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let m = mapping::map_proposed(&g.system, &MapOptions::unscaled()).unwrap();
        let g_nodal = m.network.nodal_matrix(false);
        let block = m.transformed.block_matrix();
        let scale = block.amax();
        prop_assert!((g_nodal - &block).amax() <= 1e-12 * scale);
    }

    #[test]
    fn dominant_inputs_map_passively(n in 1usize..25, density in 0.1f64..1.0, seed in any::<u64>()) {
        let g = linsys::generate_diagonally_dominant(n, density, 4.0, seed).unwrap();
        let net = mapping::map_proposed(&g.system, &MapOptions::default()).unwrap().network;
        prop_assert!(net.is_passive());
        prop_assert_eq!(count_components(&net).opamps, 0);
    }

    #[test]
    fn alpha_leaves_the_solution_unchanged(n in 1usize..10, seed in any::<u64>(), alpha in 0.01f64..20.0) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let solve = |opts: MapOptions| {
            let net = mapping::map_proposed(&g.system, &opts).unwrap().network;
            simulate::dc_operating_point(&net, &Fidelity::Ideal).unwrap()
        };
        let base = solve(MapOptions::unscaled());
        let scaled = solve(MapOptions::unscaled().with_alpha(alpha));
        prop_assert!(rel_gap(&scaled, &base) < 1e-10);
    }

    #[test]
    fn scaled_identity_d_also_solves(n in 1usize..8, seed in any::<u64>(), beta in 0.5f64..3.0) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let opts = MapOptions::unscaled().with_d_policy(DPolicy::ScaledIdentity(beta));
        let net = mapping::map_proposed(&g.system, &opts).unwrap().network;
        let x = simulate::dc_operating_point(&net, &Fidelity::Ideal).unwrap();
        prop_assert!(rel_gap(&x, &g.x_true) < 1e-8);
    }

    #[test]
    fn system_json_round_trips_bitwise(
        n in 1usize..6,
        raw in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36),
        rhs in proptest::collection::vec(-1e6f64..1e6, 6),
    ) {
        let a = DMatrix::from_fn(n, n, |i, j| raw[i.min(j) * 6 + i.max(j)]);
        let sys = LinearSystem::new(a, DVector::from_column_slice(&rhs[..n]), "p");
        let text = io::system_to_json(&sys, None).unwrap();
        let back = io::parse_system_json(&text, Path::new("p.json")).unwrap().system;
        for (x, y) in back.a.iter().zip(sys.a.iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in back.b.iter().zip(sys.b.iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn percentiles_are_ordered_members(values in proptest::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..100.0) {
        let q = analysis::percentile(&values, p).unwrap();
        prop_assert!(values.contains(&q));
        prop_assert!(q <= analysis::percentile(&values, 100.0).unwrap());
        prop_assert!(analysis::percentile(&values, 0.0).unwrap() <= q);
        let below = values.iter().filter(|v| **v <= q).count() as f64;
        prop_assert!(below / values.len() as f64 >= p / 100.0 - 1e-12);
    }

    #[test]
    fn error_metric_is_zero_only_for_exact_answers(x in proptest::collection::vec(-0.5f64..0.5, 1..10), d in 1e-6f64..1e-2) {
        let same = analysis::error_metrics(&x, &x, ErrorFloor::default()).unwrap();
        prop_assert_eq!(same.max_rel_error, 0.0);
        let mut off = x.clone();
        off[0] += d;
        let m = analysis::error_metrics(&off, &x, ErrorFloor::Absolute(1e-3)).unwrap();
        prop_assert!(m.max_rel_error > 0.0);
        prop_assert!(m.rms_error <= m.max_rel_error + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn offset_shift_is_bounded_by_the_loaded_network(n in 2usize..6, seed in any::<u64>(), precise in any::<bool>()) {
        let g = linsys::generate_random(&GeneratorSpec::standard(n, seed)).unwrap();
        let net = mapping::map_proposed(&g.system, &MapOptions::unscaled()).unwrap().network;
        let model = if precise { OpAmpModel::ltc2050() } else { OpAmpModel::ad712() };
        let vos = model.v_offset;
        let cfg = SimConfig::with_t_end(1e-3, Fidelity::Dynamic(model));
        let r = simulate::transient(&net, &cfg).unwrap();
        let ideal = simulate::dc_node_voltages(&net, &Fidelity::Ideal).unwrap();
        let shift = (DVector::from_column_slice(&r.v_dc) - ideal).norm();
        // Offsets enter as currents of about k * Vos at each element's nodes
        // (stage noise gain up to 2); the loaded nodal matrix turns them
        // into voltages no larger than |i| / lambda_min.
        let mut k = DVector::<f64>::zeros(net.dim());
        for e in net.negative_elements() {
            for node in [e.i, e.j] {
                if node > 0 {
                    k[node - 1] += e.conductance;
                }
            }
        }
        let lambda_min = net.nodal_matrix(true).symmetric_eigenvalues().min();
        prop_assert!(lambda_min > 0.0);
        prop_assert!(!r.saturated);
        prop_assert!(shift <= 2.0 * vos * k.norm() / lambda_min, "shift {shift:e}");
    }
}
