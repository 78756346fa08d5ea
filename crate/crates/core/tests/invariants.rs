use ive_core::data::{sample_cov, BlockStats};
use ive_core::linalg::{complex_normal_mat, complex_normal_vec, hermitian_eigenvalues, max_abs, C64, CMat};
use ive_core::simgen::perturb_init;
use ive_core::solver::update_a;
use ive_core::{CsvParams, SegmentedDataset, TridiagCov};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_flatten_round_trip(seed: u64, k in 1usize..4, t in 1usize..4, l in 1usize..5, ns in 1usize..6, d in 2usize..5) {
        let mut r = rng(seed);
        let raw: Vec<CMat> = (0..k).map(|_| complex_normal_mat(d, t * l * ns, &mut r)).collect();
        let data = SegmentedDataset::segment(&raw, t, l).unwrap();
        prop_assert_eq!(data.dims().samples, ns);
        prop_assert_eq!(data.flatten(), raw);
        let coarse = data.resegment(1).unwrap();
        prop_assert_eq!(coarse.resegment(l).unwrap(), data);
    }

    #[test]
    fn sample_covariance_is_psd_and_permutation_invariant(seed: u64, d in 2usize..6, n in 1usize..40) {
        let mut r = rng(seed);
        let x = complex_normal_mat(d, n, &mut r);
        let c = sample_cov(&x);
        prop_assert!(max_abs(&(&c - c.adjoint())) < 1e-12);
        prop_assert!(hermitian_eigenvalues(&c)[0] > -1e-12);
        let mut cols: Vec<usize> = (0..n).collect();
        cols.reverse();
        cols.rotate_left(n / 3);
        let perm = CMat::from_fn(d, n, |i, j| x[(i, cols[j])]);
        prop_assert!(max_abs(&(sample_cov(&perm) - &c)) < 1e-12);
    }

    #[test]
    fn csv_parameters_are_consistent(seed: u64, d in 2usize..8, t in 1usize..4) {
        let p = CsvParams::random(d, 2, t, &mut rng(seed));
        for k in 0..2 {
            let w_star = p.separating_vector(k);
            for b in 0..t {
                let a = p.mixing_matrix(k, b).unwrap();
                let w = p.demixing_matrix(k, b).unwrap();
                let scale = max_abs(&a).max(max_abs(&w)).powi(2);
                prop_assert!(max_abs(&(&w * &a - CMat::identity(d, d))) < 1e-9 * scale);
                prop_assert!((w.row(0).transpose() - w_star.conjugate()).norm() < 1e-12);
                prop_assert!((w_star.dotc(&p.mixing_vector(k, b)) - C64::new(1.0, 0.0)).norm() < 1e-10);
                let det = w.determinant();
                let closed = p.demixing_determinant(k, b);
                prop_assert!((det - closed).norm() < 1e-8 * closed.norm().max(1.0));
            }
        }
    }

    #[test]
    fn orthogonal_constraint_keeps_unit_response(seed: u64, d in 2usize..6, l in 1usize..4) {
        let mut r = rng(seed);
        let dims = ive_core::Dims { datasets: 1, blocks: 2, sub_blocks: l, samples: 3 * d, channels: d };
        let cells = (0..dims.cell_count()).map(|_| complex_normal_mat(d, dims.samples, &mut r)).collect();
        let data = SegmentedDataset::from_cells(dims, cells).unwrap();
        let w = vec![complex_normal_vec(d, &mut r)];
        let a = update_a(&BlockStats::new(&data), &w).unwrap();
        for at in &a[0] {
            prop_assert!((w[0].dotc(at) - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn clipped_tridiagonal_is_well_conditioned(raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40)) {
        let c: Vec<C64> = raw.iter().map(|&(x, y)| C64::new(x, y)).collect();
        let tc = TridiagCov::from_estimates(c.len() + 1, &c).unwrap();
        let dense = tc.to_dense();
        prop_assert!(hermitian_eigenvalues(&dense)[0] >= 0.2 - 1e-12);
        let inv = dense.try_inverse().unwrap();
        prop_assert!(max_abs(&(&inv - inv.adjoint())) < 1e-12);
        prop_assert!(tc.inverse_diagonal().iter().all(|&v| v >= 1.0 - 1e-12));
    }

    #[test]
    fn perturbation_is_orthogonal(seed: u64, d in 2usize..10, m2 in 1e-6f64..1.0) {
        let mut r = rng(seed);
        let w = complex_normal_vec(d, &mut r);
        let wi = perturb_init(&w, m2, &mut r).unwrap();
        let eps = &wi - &w;
        prop_assert!(w.dotc(&eps).norm() < 1e-12 * w.norm());
        prop_assert!((eps.norm_squared() - m2).abs() < 1e-12);
    }
}
