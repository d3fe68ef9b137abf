use cobe::cifa::split;
use cobe::cobe::{cobe, CobeConfig};
use cobe::cobec::{procrustes_basis, CobecConfig};
use cobe::linalg::{max_principal_angle, orthonormality_error};
use cobe::multiblock::{generate_synthetic, read_multiblock, write_multiblock, SyntheticSpec};
use cobe::preprocess::{preprocess, RankChoice};
use cobe::rng;
use cobe::scaling::{projected_common, CommonSolver, ProjectionPlan};
use proptest::prelude::*;

#[test]
fn disk_round_trip_then_decompose() {
    let (mb, truth) = generate_synthetic(&SyntheticSpec::uniform(120, 4, 20, 2, 6, 31)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_multiblock(dir.path(), &mb).unwrap();
    let back = read_multiblock(dir.path()).unwrap();
    let f = preprocess(&back, &RankChoice::Revealing).unwrap();
    let basis = cobe(&f, &CobeConfig::default().with_seed(31)).unwrap();
    assert_eq!(basis.count(), 2);
    assert!(max_principal_angle(&basis.a_bar, &truth.common_basis) < 1e-8);

    let d = split(&f, &basis.a_bar).unwrap();
    for (n, y) in back.matrices().enumerate() {
        let rebuilt = &d.common_space[n] + &d.individual_space[n];
        assert!((rebuilt - y).norm() / y.norm() < 1e-10);
        // the individual part carries nothing along the common span
        assert!((basis.a_bar.tr_mul(&d.individual_space[n])).norm() < 1e-8 * y.norm());
    }
}

#[test]
fn projected_path_matches_full_solve() {
    let (mb, truth) = generate_synthetic(&SyntheticSpec::uniform(1500, 3, 25, 3, 6, 5)).unwrap();
    let plan = ProjectionPlan::gaussian(1500, 60, 9).unwrap();
    let solver = CommonSolver::Cobec(CobecConfig::new(3).with_seed(5));
    let out = projected_common(&mb, &plan, &RankChoice::Revealing, &solver, 1e-6).unwrap();
    assert_eq!(out.basis.count(), 3);
    assert!(max_principal_angle(&out.basis.a_bar, &truth.common_basis) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn procrustes_basis_is_orthonormal_and_maximal(seed in any::<u64>(), rows in 3usize..30, c in 1usize..4) {
        prop_assume!(c <= rows);
        let mut g = rng::stream(seed, 0);
        let p = rng::gaussian_matrix(rows, c, &mut g);
        let a = procrustes_basis(&p).unwrap();
        prop_assert!(orthonormality_error(&a) < 1e-10);
        let nuclear: f64 = p.clone().svd(false, false).singular_values.sum();
        prop_assert!(((p.transpose() * &a).trace() - nuclear).abs() < 1e-9 * nuclear.max(1.0));
    }

    #[test]
    fn noise_free_count_matches_truth(seed in 0u64..1000, common in 0usize..3) {
        let (mb, _) = generate_synthetic(&SyntheticSpec::uniform(60, 3, 10, common, 4, seed)).unwrap();
        let f = preprocess(&mb, &RankChoice::Revealing).unwrap();
        let basis = cobe(&f, &CobeConfig::default().with_seed(seed)).unwrap();
        prop_assert_eq!(basis.count(), common);
        prop_assert!(basis.count() == 0 || orthonormality_error(&basis.a_bar) < 1e-10);
    }
}
