use parabola_core::envelope::{kappa_max, kappa_max_brute, verify_weighted_sq, verify_weighted_sq_with, SquareData};
use parabola_core::families::builtin_pairs;
use parabola_core::measures::{make_weight, Family};
use parabola_core::schrodinger::{fls_experiment, FlsFamily};
use parabola_core::torus::GridSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn brute_force_matches_on_dense_and_sheared_weights() {
    let g = GridSpec::standard(16).unwrap();
    let cell = g.delta() * g.delta();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scattered: Vec<([f64; 2], f64)> = (0..400)
        .map(|_| ([rng.gen_range(0.0..g.l), rng.gen_range(0.0..g.l)], 0.25 * cell * rng.gen_range(0.0..1.0)))
        .collect();
    let families = [
        Family::Constant { lambda: 1.0 },
        Family::DualTube { alpha: 0.5, cap_center: 0.0 },
        Family::DualTube { alpha: 1.5, cap_center: -1.0 + 1.0 / 8.0 },
        Family::DualTube { alpha: 1.0, cap_center: 1.0 - 1.0 / 8.0 },
        Family::Custom { points: scattered, raw: false },
    ];
    for fam in &families {
        let h = make_weight(fam, g).unwrap();
        for p in [2.0, 2.5, 4.0] {
            let fast = kappa_max(&h, p, false).unwrap();
            let brute = kappa_max_brute(&h, p).unwrap();
            assert_eq!(fast.value, brute.value, "{} p={p}", h.label);
            assert_eq!(fast.per_scale, brute.per_scale, "{} p={p}", h.label);
        }
    }
}

#[test]
fn precomputed_square_data_changes_nothing() {
    let g = GridSpec::standard(16).unwrap();
    for pair in builtin_pairs(16) {
        let (f, h) = pair.build(g).unwrap();
        let data = SquareData::build(&f).unwrap();
        for p in [2.0, 3.0, 4.0] {
            let a = verify_weighted_sq(&f, &h, p).unwrap();
            let b = verify_weighted_sq_with(&f, &h, p, Some(&data)).unwrap();
            assert_eq!(a.to_json(), b.to_json(), "{}", pair.name);
            assert!(a.lhs.is_finite() && a.env_rhs > 0.0 && a.sq_rhs > 0.0, "{}", pair.name);
        }
    }
}

#[test]
fn chirp_reaches_the_sharp_exponent() {
    let fit = fls_experiment(&FlsFamily::Chirp { c: 0.25 }, 4.0, &[256.0, 1024.0, 4096.0]).unwrap();
    assert!(fit.passes, "{fit:?}");
    assert!((fit.prediction - 0.25).abs() < 1e-12);
}
