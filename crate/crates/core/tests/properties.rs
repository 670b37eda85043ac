use std::collections::BTreeSet;

use fluxforge_core::approximant::Dilation;
use fluxforge_core::connections::{
    boundary_of_current, canonical, dipole_decomposition, dual_value, greedy_connection, minimal_connection,
};
use fluxforge_core::field::ffld::{parse_ffld, write_ffld};
use fluxforge_core::field::{Charge, ChargeSet, GridSpec, PointField, VectorField, WeightedMeasure};
use fluxforge_core::oned::{integer_step_projection, weak_approx_sequence, Profile};
use fluxforge_core::smoothing::{smooth_face, FaceData, FaceKey};
use proptest::prelude::*;

fn charge_set() -> impl Strategy<Value = ChargeSet> {
    (prop::collection::btree_set((-45i32..45, -45i32..45), 1..7), prop::collection::vec(-3i64..=3, 7)).prop_map(
        |(pts, degs): (BTreeSet<(i32, i32)>, Vec<i64>)| {
            let charges = pts
                .into_iter()
                .zip(degs)
                .map(|((i, j), d)| Charge { pos: vec![i as f64 / 100.0, j as f64 / 100.0], deg: if d == 0 { 1 } else { d } })
                .collect();
            ChargeSet::new(charges).unwrap()
        },
    )
}

fn balanced_set() -> impl Strategy<Value = ChargeSet> {
    charge_set().prop_filter("total degree zero", |c| c.total_degree() == 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_roundtrip(cs in charge_set()) {
        let current = greedy_connection(&cs, Some(&[-0.5, 0.2])).unwrap();
        prop_assert_eq!(boundary_of_current(&current), canonical(&cs));
    }

    #[test]
    fn minimal_not_heavier_than_greedy(cs in charge_set()) {
        let greedy = greedy_connection(&cs, Some(&[0.5, 0.0])).unwrap();
        let (minimal, mass) = minimal_connection(&cs).unwrap();
        prop_assert!(mass <= greedy.mass() + 1e-12);
        prop_assert_eq!(boundary_of_current(&minimal), canonical(&cs));
    }

    #[test]
    fn dual_below_primal(cs in charge_set()) {
        let (_, mass) = minimal_connection(&cs).unwrap();
        let d = dual_value(&cs, 32).unwrap();
        prop_assert!(d.value <= mass);
        prop_assert!(mass - d.value < 1e-9);
    }

    #[test]
    fn dipoles_account_for_mass(cs in balanced_set()) {
        let current = greedy_connection(&cs, None).unwrap();
        let (dipoles, mass) = dipole_decomposition(&current).unwrap();
        let total: u64 = cs.charges.iter().map(|c| c.deg.unsigned_abs()).sum();
        prop_assert!(dipoles.len() as u64 <= total);
        let interior = |x: &[f64]| x.iter().all(|t| t.abs() < 0.5);
        prop_assert!(dipoles.iter().all(|d| interior(&d.p) || interior(&d.n)));
        prop_assert!(mass <= current.mass() + 1e-12);
    }

    #[test]
    fn charges_json_roundtrip(cs in charge_set()) {
        prop_assert_eq!(ChargeSet::from_json(&cs.to_json()).unwrap(), cs);
    }

    #[test]
    fn ffld_roundtrip(values in prop::collection::vec(-1e6f64..1e6, 2 * 64), q in 0.0f64..1.0) {
        let v = VectorField::from_values(GridSpec::new(2, 8).unwrap(), values).unwrap();
        let mu = WeightedMeasure::new(q).unwrap();
        let mut bytes = Vec::new();
        write_ffld(&mut bytes, &v, mu).unwrap();
        let (back, mu2) = parse_ffld(&bytes).unwrap();
        prop_assert_eq!(back.values(), v.values());
        prop_assert_eq!(mu2.q.to_bits(), q.to_bits());
    }

    #[test]
    fn ffld_rejects_truncation(cut in 0usize..(20 + 8 * 2 * 16)) {
        let v = VectorField::constant(GridSpec::new(2, 4).unwrap(), &[1.0, 2.0]).unwrap();
        let mut bytes = Vec::new();
        write_ffld(&mut bytes, &v, WeightedMeasure::lebesgue()).unwrap();
        bytes.truncate(cut);
        prop_assert!(parse_ffld(&bytes).is_err());
    }

    #[test]
    fn smoothing_keeps_face_integral(
        samples in prop::collection::vec(-2.0f64..2.0, 128),
        p in 1.0f64..3.0,
        rel in 0.5f64..2.0,
    ) {
        let key = FaceKey { axis: 1, index: vec![0, 0] };
        let g = FaceData::new(key, vec![-0.5, -0.5], 0.25, 128, samples);
        let delta = rel * g.lp_norm(p);
        if let Ok(s) = smooth_face(&g, delta, p) {
            let abs: f64 = g.samples.iter().map(|v| v.abs()).sum::<f64>() * g.weight();
            prop_assert!((s.integral - g.integral).abs() <= 1e-13 * abs.max(1e-300));
            prop_assert!(s.lp_distance(&g, p) <= 3.0 * delta);
        }
    }

    #[test]
    fn dilation_scales_values(alpha in 0.1f64..1.0, x in -0.5f64..0.5, y in -0.5f64..0.5, a in -3.0f64..3.0) {
        let v = VectorField::from_fn(
            GridSpec::new(2, 8).unwrap(),
            std::sync::Arc::new(move |p: &[f64], o: &mut [f64]| {
                o[0] = a * p[0];
                o[1] = p[1] * p[1];
            }),
        ).unwrap();
        let d = Dilation { field: &v, alpha };
        let mut out = [0.0; 2];
        d.eval_into(&[x, y], &mut out);
        prop_assert!((out[0] - alpha * a * alpha * x).abs() <= 1e-12);
        prop_assert!((out[1] - alpha * (alpha * y).powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn weak_sequence_integer_and_average_preserving(samples in prop::collection::vec(-5.0f64..5.0, 1..40), n in 0u32..7) {
        let profile = Profile::Samples(&samples);
        let s = weak_approx_sequence(&profile, n).unwrap();
        prop_assert!(s.is_integer_valued());
        let len = 0.5f64.powi(n as i32);
        for k in 0..(1usize << n) {
            let a = k as f64 * len;
            prop_assert!((s.integral(a, a + len) - profile.integral(a, a + len)).abs() <= 1e-14);
            for (lo, hi, v) in s.pieces() {
                if lo >= a && hi <= a + len && v != 0.0 {
                    let c = profile.integral(a, a + len) / len;
                    prop_assert!(v.abs() <= c.abs().ceil());
                }
            }
        }
    }

    #[test]
    fn projection_recovers_integer_steps(levels in prop::collection::vec(-4i64..=4, 1..6), offset in 0.05f64..0.95) {
        let n = 60 * levels.len();
        let samples: Vec<f64> = (0..n).map(|i| offset + levels[i / 60] as f64).collect();
        let s = integer_step_projection(&samples, 10, 1e-2, 1.5).unwrap();
        prop_assert!((s.offset - offset).abs() < 1e-9);
        for (i, want) in samples.iter().enumerate() {
            let x = (i as f64 + 0.5) / n as f64;
            prop_assert!((s.eval(x) - want).abs() < 1e-9);
        }
    }
}
