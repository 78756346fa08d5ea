use ive_core::contrast::{background_weights, contrast_eval, gradient_terms12, FrozenModel};
use ive_core::data::{BlockStats, Dims, SegmentedDataset};
use ive_core::linalg::{complex_normal_mat, complex_normal_vec, re, CVec, C64};
use ive_core::{SourceModel, TriProduct};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central-difference `d f / d w_k^*` of a real function.
fn wirtinger_conj<F: Fn(&[CVec]) -> f64>(f: F, w: &[CVec], k: usize, h: f64) -> CVec {
    let d = w[k].len();
    CVec::from_fn(d, |i, _| {
        let probe = |dir: C64| {
            let mut p = w.to_vec();
            p[k][i] += dir * h;
            let up = f(&p);
            p[k][i] -= dir * (2.0 * h);
            (up - f(&p)) / (2.0 * h)
        };
        let dx = probe(re(1.0));
        let dy = probe(C64::i());
        C64::new(dx, dy) * 0.5
    })
}

fn dataset(k: usize, d: usize, seed: u64) -> SegmentedDataset {
    let dims = Dims { datasets: k, blocks: 2, sub_blocks: 3, samples: 60, channels: d };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = (0..dims.cell_count())
        .map(|i| {
            let mut c = complex_normal_mat(d, 60, &mut rng) * re(0.6 + 0.2 * (i % 4) as f64);
            // mild non-circularity in the first channel
            let first = c.row(0).map(|z| z + z.conj() * 0.4);
            c.set_row(0, &first);
            c
        })
        .collect();
    SegmentedDataset::from_cells(dims, cells).unwrap()
}

fn check_terms12(model: SourceModel, k_count: usize) {
    for seed in 0..4 {
        let data = dataset(k_count, 4, 100 + seed);
        let stats = BlockStats::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<CVec> = (0..k_count).map(|_| complex_normal_vec(4, &mut rng)).collect();
        let frozen = FrozenModel::fit(&data, &stats, &w, &model).unwrap();
        for k in 0..k_count {
            let analytic = gradient_terms12(&data, &stats, &w, &frozen, k).unwrap();
            let fd = wirtinger_conj(
                |p| contrast_eval(&data, &stats, p, &frozen, None).unwrap().first_two(),
                &w,
                k,
                1e-5,
            );
            let rel = (&analytic - &fd).norm() / analytic.norm();
            assert!(rel < 1e-6, "{} K={k_count} seed={seed} k={k}: rel {rel:e}", model.name());
        }
    }
}

#[test]
fn terms12_rati() {
    check_terms12(SourceModel::Rati, 1);
    check_terms12(SourceModel::Rati, 3);
}

#[test]
fn terms12_gaussian_variants() {
    check_terms12(SourceModel::Gauss { mu: None }, 1);
    check_terms12(SourceModel::Gauss { mu: None }, 2);
    check_terms12(SourceModel::GaussCirc { mu: None }, 2);
    check_terms12(SourceModel::GaussTri { product: TriProduct::Exact }, 3);
}

#[test]
fn terms34_gradient_is_mean_mixing_vector() {
    let data = dataset(1, 5, 7);
    let stats = BlockStats::new(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = vec![complex_normal_vec(5, &mut rng)];
    let frozen = FrozenModel::fit(&data, &stats, &w, &SourceModel::Rati).unwrap();
    let r = background_weights(&stats, &w).unwrap();
    let fd = wirtinger_conj(
        |p| contrast_eval(&data, &stats, p, &frozen, Some(&r)).unwrap().last_two(),
        &w,
        0,
        1e-5,
    );
    let a = ive_core::solver::update_a(&stats, &w).unwrap();
    let mean = (&a[0][0] + &a[0][1]) / re(2.0);
    assert!((&fd - &mean).norm() < 1e-6 * mean.norm(), "{fd} vs {mean}");
}
