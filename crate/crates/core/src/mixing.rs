//! Constant-separating-vector (CSV) mixing parameterization.
//!
//! Per dataset `k` the separating vector `w_k = [beta_k; h_k]` is fixed,
//! while the mixing vector `a_{k,t} = [gamma_{k,t}; g_{k,t}]` changes from
//! block to block. The full matrices are derived views:
//!
//! ```text
//! A = [ gamma   h^H                  ]     W = [ beta^*   h^H          ]
//!     [ g       (g h^H - I) / gamma  ]         [ g        -gamma I     ]
//! ```
//!
//! and `W = A^{-1}` whenever `w^H a = beta^* gamma + h^H g = 1`.

use rand::Rng;

use crate::data::{Dims, SegmentedDataset};
use crate::error::{Error, Result};
use crate::linalg::{complex_normal, complex_normal_vec, CMat, CVec, C64, ONE};

/// Tolerance on the distortionless constraint when building `W`.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Smallest `|gamma|` accepted by [`CsvParams::random`].
pub const MIN_GAMMA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvParams {
    channels: usize,
    blocks: usize,
    beta: Vec<C64>,
    h: Vec<CVec>,
    gamma: Vec<C64>,
    g: Vec<CVec>,
}

impl CsvParams {
    /// `beta`, `h` are indexed by dataset; `gamma`, `g` by `k * blocks + t`.
    pub fn new(beta: Vec<C64>, h: Vec<CVec>, gamma: Vec<C64>, g: Vec<CVec>, blocks: usize) -> Result<Self> {
        let datasets = beta.len();
        if datasets == 0 || blocks == 0 {
            return Err(Error::Shape("need at least one dataset and one block".into()));
        }
        let channels = h[0].len() + 1;
        if channels < 2 {
            return Err(Error::Shape("need at least two channels".into()));
        }
        if h.len() != datasets || gamma.len() != datasets * blocks || g.len() != datasets * blocks {
            return Err(Error::Shape("parameter counts disagree".into()));
        }
        if h.iter().chain(g.iter()).any(|v| v.len() != channels - 1) {
            return Err(Error::Shape("h and g must have d - 1 entries".into()));
        }
        Ok(Self { channels, blocks, beta, h, gamma, g })
    }

    /// Random parameters: `h`, `g` circular unit Gaussian, `gamma` re-drawn
    /// until `|gamma| >= 0.3`, and `beta` fixed by the constraint on the
    /// first block. Later blocks draw `g` and solve the constraint for
    /// `gamma`, re-drawing `g` until `|gamma| >= 0.3`.
    pub fn random<R: Rng + ?Sized>(channels: usize, datasets: usize, blocks: usize, rng: &mut R) -> Self {
        assert!(channels >= 2 && datasets >= 1 && blocks >= 1);
        let m = channels - 1;
        let mut beta = Vec::with_capacity(datasets);
        let mut h = Vec::with_capacity(datasets);
        let mut gamma = Vec::with_capacity(datasets * blocks);
        let mut g = Vec::with_capacity(datasets * blocks);
        for _ in 0..datasets {
            let hk = complex_normal_vec(m, rng);
            let (g0, gamma0, beta_conj) = loop {
                let g0 = complex_normal_vec(m, rng);
                let gamma0 = loop {
                    let z = complex_normal(rng);
                    if z.norm() >= MIN_GAMMA {
                        break z;
                    }
                };
                let beta_conj = (ONE - hk.dotc(&g0)) / gamma0;
                if blocks == 1 || beta_conj.norm() >= MIN_GAMMA {
                    break (g0, gamma0, beta_conj);
                }
            };
            gamma.push(gamma0);
            g.push(g0);
            for _ in 1..blocks {
                let (gt, gammat) = loop {
                    let gt = complex_normal_vec(m, rng);
                    let gammat = (ONE - hk.dotc(&gt)) / beta_conj;
                    if gammat.norm() >= MIN_GAMMA {
                        break (gt, gammat);
                    }
                };
                gamma.push(gammat);
                g.push(gt);
            }
            beta.push(beta_conj.conj());
            h.push(hk);
        }
        Self { channels, blocks, beta, h, gamma, g }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn datasets(&self) -> usize {
        self.beta.len()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn beta(&self, k: usize) -> C64 {
        self.beta[k]
    }

    pub fn h(&self, k: usize) -> &CVec {
        &self.h[k]
    }

    pub fn gamma(&self, k: usize, t: usize) -> C64 {
        self.gamma[k * self.blocks + t]
    }

    pub fn g(&self, k: usize, t: usize) -> &CVec {
        &self.g[k * self.blocks + t]
    }

    /// Separating vector `w_k = [beta_k; h_k]`.
    pub fn separating_vector(&self, k: usize) -> CVec {
        let mut w = CVec::zeros(self.channels);
        w[0] = self.beta[k];
        w.rows_mut(1, self.channels - 1).copy_from(&self.h[k]);
        w
    }

    /// Mixing vector `a_{k,t} = [gamma; g]`.
    pub fn mixing_vector(&self, k: usize, t: usize) -> CVec {
        let mut a = CVec::zeros(self.channels);
        a[0] = self.gamma(k, t);
        a.rows_mut(1, self.channels - 1).copy_from(self.g(k, t));
        a
    }

    /// `|w_k^H a_{k,t} - 1|`.
    pub fn constraint_residual(&self, k: usize, t: usize) -> f64 {
        (self.separating_vector(k).dotc(&self.mixing_vector(k, t)) - ONE).norm()
    }

    pub fn mixing_matrix(&self, k: usize, t: usize) -> Result<CMat> {
        let gamma = self.gamma(k, t);
        if gamma == C64::new(0.0, 0.0) {
            return Err(Error::SingularGamma { k, t });
        }
        let d = self.channels;
        let (g, h) = (self.g(k, t), &self.h[k]);
        let mut a = CMat::zeros(d, d);
        a[(0, 0)] = gamma;
        for j in 1..d {
            a[(0, j)] = h[j - 1].conj();
            a[(j, 0)] = g[j - 1];
        }
        let inv_gamma = ONE / gamma;
        for i in 1..d {
            for j in 1..d {
                let delta = if i == j { ONE } else { C64::new(0.0, 0.0) };
                a[(i, j)] = (g[i - 1] * h[j - 1].conj() - delta) * inv_gamma;
            }
        }
        Ok(a)
    }

    pub fn demixing_matrix(&self, k: usize, t: usize) -> Result<CMat> {
        let residual = self.constraint_residual(k, t);
        if !(residual <= CONSTRAINT_TOL) {
            return Err(Error::InconsistentParams { k, t, residual });
        }
        let d = self.channels;
        let (gamma, g, h) = (self.gamma(k, t), self.g(k, t), &self.h[k]);
        let mut w = CMat::zeros(d, d);
        w[(0, 0)] = self.beta[k].conj();
        for j in 1..d {
            w[(0, j)] = h[j - 1].conj();
            w[(j, 0)] = g[j - 1];
            w[(j, j)] = -gamma;
        }
        Ok(w)
    }

    /// Closed-form `det W_{k,t} = (-1)^(d-1) gamma^(d-2)`.
    pub fn demixing_determinant(&self, k: usize, t: usize) -> C64 {
        let d = self.channels as i32;
        let sign = if (d - 1) % 2 == 0 { 1.0 } else { -1.0 };
        self.gamma(k, t).powi(d - 2) * sign
    }

    /// Mixes sources `u_{k,t,l}` (cells in `(k, t, l)` order, each
    /// `d x N_s` with the SOI in row 0) into observations `x = A u`.
    pub fn mix(&self, dims: Dims, sources: &[CMat]) -> Result<SegmentedDataset> {
        if dims.datasets != self.datasets() || dims.blocks != self.blocks || dims.channels != self.channels {
            return Err(Error::Shape("source dimensions disagree with mixing parameters".into()));
        }
        if sources.len() != dims.cell_count() {
            return Err(Error::Shape(format!("expected {} source cells, got {}", dims.cell_count(), sources.len())));
        }
        let mut cells = Vec::with_capacity(sources.len());
        for k in 0..dims.datasets {
            for t in 0..dims.blocks {
                let a = self.mixing_matrix(k, t)?;
                for l in 0..dims.sub_blocks {
                    let u = &sources[dims.cell_index(k, t, l)];
                    if u.shape() != (dims.channels, dims.samples) {
                        return Err(Error::Shape("source cell has the wrong shape".into()));
                    }
                    cells.push(&a * u);
                }
            }
        }
        SegmentedDataset::from_cells(dims, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_normal_mat, max_abs, re};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trivial(channels: usize, gamma: f64) -> CsvParams {
        let m = channels - 1;
        CsvParams::new(vec![re(1.0 / gamma)], vec![CVec::zeros(m)], vec![re(gamma)], vec![CVec::zeros(m)], 1).unwrap()
    }

    #[test]
    fn two_channel_identity_case() {
        let p = trivial(2, 1.0);
        let expected = CMat::from_row_slice(2, 2, &[re(1.0), re(0.0), re(0.0), re(-1.0)]);
        assert_eq!(p.mixing_matrix(0, 0).unwrap(), expected);
        assert_eq!(p.demixing_matrix(0, 0).unwrap(), expected);
        assert_eq!(p.demixing_determinant(0, 0), re(-1.0));
    }

    #[test]
    fn three_channel_diagonal_case() {
        let p = trivial(3, 2.0);
        let a = p.mixing_matrix(0, 0).unwrap();
        let expected = CMat::from_diagonal(&CVec::from_vec(vec![re(2.0), re(-0.5), re(-0.5)]));
        assert!(max_abs(&(a - expected)) < 1e-15);
        let w = p.demixing_matrix(0, 0).unwrap();
        assert!((w.determinant() - re(2.0)).norm() < 1e-14);
        assert_eq!(p.demixing_determinant(0, 0), re(2.0));
    }

    #[test]
    fn zero_gamma_is_singular() {
        let p = CsvParams::new(vec![re(1.0)], vec![CVec::zeros(1)], vec![re(0.0)], vec![CVec::zeros(1)], 1).unwrap();
        assert!(matches!(p.mixing_matrix(0, 0), Err(Error::SingularGamma { .. })));
    }

    #[test]
    fn violated_constraint_is_rejected() {
        let p = CsvParams::new(vec![re(1.0)], vec![CVec::zeros(2)], vec![re(2.0)], vec![CVec::zeros(2)], 1).unwrap();
        assert!(matches!(p.demixing_matrix(0, 0), Err(Error::InconsistentParams { .. })));
    }

    #[test]
    fn random_params_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &d in &[2usize, 3, 6, 10] {
            let p = CsvParams::random(d, 2, 3, &mut rng);
            for k in 0..2 {
                let w_first = p.demixing_matrix(k, 0).unwrap().row(0).into_owned();
                for t in 0..3 {
                    assert!(p.constraint_residual(k, t) < 1e-10);
                    assert!(p.gamma(k, t).norm() >= MIN_GAMMA);
                    let a = p.mixing_matrix(k, t).unwrap();
                    let w = p.demixing_matrix(k, t).unwrap();
                    assert!(max_abs(&(&w * &a - CMat::identity(d, d))) < 1e-10);
                    assert!(max_abs(&(&a * &w - CMat::identity(d, d))) < 1e-10);
                    assert_eq!(w.row(0).into_owned(), w_first);
                    let det = w.determinant();
                    let closed = p.demixing_determinant(k, t);
                    assert!((det - closed).norm() <= 1e-9 * closed.norm());
                }
            }
        }
    }

    #[test]
    fn mix_and_demix_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims { datasets: 2, blocks: 2, sub_blocks: 3, samples: 8, channels: 4 };
        let p = CsvParams::random(4, 2, 2, &mut rng);
        let u: Vec<CMat> = (0..dims.cell_count()).map(|_| complex_normal_mat(4, 8, &mut rng)).collect();
        let x = p.mix(dims, &u).unwrap();
        for k in 0..2 {
            for t in 0..2 {
                let w = p.demixing_matrix(k, t).unwrap();
                for l in 0..3 {
                    let rec = &w * x.cell(k, t, l);
                    assert!(max_abs(&(rec - &u[dims.cell_index(k, t, l)])) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn identity_mixing_passes_sources_through() {
        // gamma = 1 with zero g, h gives A = diag(1, -1); flip the background sign to compare.
        let p = trivial(2, 1.0);
        let dims = Dims { datasets: 1, blocks: 1, sub_blocks: 1, samples: 3, channels: 2 };
        let u = CMat::from_fn(2, 3, |i, j| C64::new(i as f64, j as f64));
        let x = p.mix(dims, &[u.clone()]).unwrap();
        assert_eq!(x.cell(0, 0, 0).row(0), u.row(0));
        assert_eq!(x.cell(0, 0, 0).row(1), -u.row(1));
    }

    #[test]
    fn zero_background_gives_pure_soi_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = CsvParams::random(3, 1, 1, &mut rng);
        let dims = Dims { datasets: 1, blocks: 1, sub_blocks: 1, samples: 5, channels: 3 };
        let mut u = CMat::zeros(3, 5);
        for n in 0..5 {
            u[(0, n)] = complex_normal(&mut rng);
        }
        let x = p.mix(dims, &[u.clone()]).unwrap();
        let a = p.mixing_vector(0, 0);
        let expected = &a * u.row(0);
        assert!(max_abs(&(x.cell(0, 0, 0) - expected)) < 1e-12);
    }
}
