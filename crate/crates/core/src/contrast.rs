//! Contrast function, its partial gradients and the full Hessians.
//!
//! Everything here works with a [`FrozenModel`]: the model density of each
//! `(t, l)` slot is fitted once and then held fixed while `w` moves, which is
//! what the derivatives of the contrast assume.

use crate::data::{BlockStats, SegmentedDataset};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_pd_inverse, re, CMat, CVec, C64, ZERO};
use crate::score::{diagnostics, empirical_nu, empirical_rho, normalize, CellDensity, SourceModel};
use crate::solver::{soi_estimates, update_a};

/// Model densities of every `(t, l)` slot, fitted at one point.
pub struct FrozenModel {
    densities: Vec<Box<dyn CellDensity>>,
}

impl FrozenModel {
    pub fn fit(data: &SegmentedDataset, stats: &BlockStats, w: &[CVec], model: &SourceModel) -> Result<Self> {
        let (soi, sigma2) = soi_estimates(data, stats, w)?;
        let densities = soi.iter().zip(&sigma2).map(|(s, v)| model.fit(s, v)).collect::<Result<Vec<_>>>()?;
        Ok(Self { densities })
    }

    pub fn from_densities(densities: Vec<Box<dyn CellDensity>>) -> Self {
        Self { densities }
    }

    pub fn density(&self, slot: usize) -> &dyn CellDensity {
        self.densities[slot].as_ref()
    }
}

/// The four contrast terms, each already averaged over blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastTerms {
    pub log_density: f64,
    pub log_variance: f64,
    pub background: f64,
    pub gamma: f64,
}

impl ContrastTerms {
    pub fn total(&self) -> f64 {
        self.log_density + self.log_variance + self.background + self.gamma
    }

    pub fn first_two(&self) -> f64 {
        self.log_density + self.log_variance
    }

    pub fn last_two(&self) -> f64 {
        self.background + self.gamma
    }
}

/// Blocking matrix `B = [g, -gamma I]` of the mixing vector `a = [gamma; g]`.
pub fn blocking_matrix(a: &CVec) -> CMat {
    let d = a.len();
    let gamma = a[0];
    CMat::from_fn(d - 1, d, |i, j| {
        if j == 0 {
            a[i + 1]
        } else if i + 1 == j {
            -gamma
        } else {
            ZERO
        }
    })
}

/// `< C_z^l >_l` of block `(k, t)` for the mixing vector `a`.
pub fn mean_background_cov(stats: &BlockStats, a: &CVec, k: usize, t: usize) -> CMat {
    let b = blocking_matrix(a);
    &b * stats.block_cov(k, t) * b.adjoint()
}

/// `R[k][t] = < C_z^l >_l^{-1}` at `w`.
pub fn background_weights(stats: &BlockStats, w: &[CVec]) -> Result<Vec<Vec<CMat>>> {
    let dims = stats.dims();
    let a = update_a(stats, w)?;
    (0..dims.datasets)
        .map(|k| {
            (0..dims.blocks)
                .map(|t| {
                    let cz = mean_background_cov(stats, &a[k][t], k, t);
                    hermitian_pd_inverse(&cz, 1e-14)
                        .ok_or_else(|| Error::SingularCovariance("background covariance".into()))
                })
                .collect()
        })
        .collect()
}

/// Evaluates the contrast at `w` with `a` tied to `w` through the
/// orthogonal constraint. `r` fixes the background weights; when absent they
/// are set to `< C_z^l >_l^{-1}` at `w`.
pub fn contrast_eval(
    data: &SegmentedDataset,
    stats: &BlockStats,
    w: &[CVec],
    frozen: &FrozenModel,
    r: Option<&[Vec<CMat>]>,
) -> Result<ContrastTerms> {
    let dims = data.dims();
    let a = update_a(stats, w)?;
    let (soi, sigma2) = soi_estimates(data, stats, w)?;
    let owned;
    let r = match r {
        Some(r) => r,
        None => {
            owned = background_weights(stats, w)?;
            &owned
        }
    };
    let (nt, nl) = (dims.blocks as f64, dims.sub_blocks as f64);
    let d = dims.channels as f64;
    let mut terms = ContrastTerms { log_density: 0.0, log_variance: 0.0, background: 0.0, gamma: 0.0 };
    for t in 0..dims.blocks {
        for l in 0..dims.sub_blocks {
            let slot = dims.slot_index(t, l);
            let x = normalize(&soi[slot], &sigma2[slot]);
            let logs = frozen.density(slot).log_density(&x);
            terms.log_density += logs.iter().sum::<f64>() / logs.len() as f64 / (nt * nl);
            for k in 0..dims.datasets {
                terms.log_variance -= sigma2[slot][k].ln() / (nt * nl);
                let b = blocking_matrix(&a[k][t]);
                let cz = &b * stats.cov(k, t, l) * b.adjoint();
                terms.background -= (&r[k][t] * cz).trace().re / (nt * nl);
            }
        }
        for ak in &a {
            terms.gamma += (d - 2.0) * ak[t][0].norm_sqr().ln() / nt;
        }
    }
    Ok(terms)
}

/// `d/dw_k^H` of the first two contrast terms:
/// `< < -E[phi_k x / sigma] + Re(nu_k) a_l - a_l >_l >_t`
/// with `nu_k = E[phi_k s_k / sigma_k]` of the frozen density.
pub fn gradient_terms12(
    data: &SegmentedDataset,
    stats: &BlockStats,
    w: &[CVec],
    frozen: &FrozenModel,
    k: usize,
) -> Result<CVec> {
    let dims = data.dims();
    let (soi, sigma2) = soi_estimates(data, stats, w)?;
    let mut g = CVec::zeros(dims.channels);
    let scale = re(1.0 / (dims.blocks * dims.sub_blocks) as f64);
    for t in 0..dims.blocks {
        for l in 0..dims.sub_blocks {
            let slot = dims.slot_index(t, l);
            let x = normalize(&soi[slot], &sigma2[slot]);
            let phi = frozen.density(slot).score(&x);
            let nu = empirical_nu(&phi, &x)[k];
            let cell = data.cell(k, t, l);
            let var = sigma2[slot][k];
            let corr = cell * phi.row(k).transpose() / re(cell.ncols() as f64 * var.sqrt());
            let a_l = stats.cov(k, t, l) * &w[k] / re(var);
            g += (a_l * re(nu.re - 1.0) - corr) * scale;
        }
    }
    Ok(g)
}

/// Normalized gradient of dataset `k` with the mixing vectors `a[t]` and the
/// statistics `nu[slot]` held fixed.
pub fn frozen_gradient(
    data: &SegmentedDataset,
    stats: &BlockStats,
    w: &[CVec],
    frozen: &FrozenModel,
    a: &[CVec],
    nu: &[C64],
    k: usize,
) -> Result<CVec> {
    let dims = data.dims();
    let (soi, sigma2) = soi_estimates(data, stats, w)?;
    let mut g = CVec::zeros(dims.channels);
    for t in 0..dims.blocks {
        let mut inner = CVec::zeros(dims.channels);
        for l in 0..dims.sub_blocks {
            let slot = dims.slot_index(t, l);
            let x = normalize(&soi[slot], &sigma2[slot]);
            let phi = frozen.density(slot).score(&x);
            let cell = data.cell(k, t, l);
            let corr = cell * phi.row(k).transpose() / re(cell.ncols() as f64 * sigma2[slot][k].sqrt());
            inner += corr / nu[slot];
        }
        g += &a[t] - inner / re(dims.sub_blocks as f64);
    }
    Ok(g / re(dims.blocks as f64))
}

/// Per-slot statistics of dataset `k` under the frozen model.
#[derive(Debug, Clone, Copy)]
pub struct SlotStats {
    pub nu: C64,
    pub rho: C64,
    pub xi: C64,
    pub eta: C64,
    pub sigma2: f64,
}

pub fn slot_stats(
    data: &SegmentedDataset,
    stats: &BlockStats,
    w: &[CVec],
    frozen: &FrozenModel,
    k: usize,
) -> Result<Vec<SlotStats>> {
    let (soi, sigma2) = soi_estimates(data, stats, w)?;
    Ok(soi
        .iter()
        .zip(&sigma2)
        .enumerate()
        .map(|(slot, (s, v))| {
            let x = normalize(s, v);
            let density = frozen.density(slot);
            let phi = density.score(&x);
            let (xi, eta) = diagnostics::xi_eta(density, &x);
            SlotStats {
                nu: empirical_nu(&phi, &x)[k],
                rho: empirical_rho(density, &x)[k],
                xi: xi[k],
                eta: eta[k],
                sigma2: v[k],
            }
        })
        .collect())
}

/// Hessians including the rank-one terms.
#[derive(Debug, Clone)]
pub struct FullHessians {
    /// `H_1^*` and `H_2` with the orthogonal constraint imposed.
    pub h1_conj_constrained: CMat,
    pub h2_constrained: CMat,
    /// `H_1^*` and `H_2` with `a` and `nu` held constant.
    pub h1_conj_fixed: CMat,
    pub h2_fixed: CMat,
}

/// Full Hessians of dataset `k` at `w`, averaged over blocks, with `nu`
/// taken from `nu[slot]` and the other statistics estimated from the
/// frozen model.
pub fn full_hessians_diag(
    data: &SegmentedDataset,
    stats: &BlockStats,
    w: &[CVec],
    frozen: &FrozenModel,
    nu: &[C64],
    k: usize,
) -> Result<FullHessians> {
    let dims = data.dims();
    let d = dims.channels;
    let a = update_a(stats, w)?;
    let st = slot_stats(data, stats, w, frozen, k)?;
    let mut out = FullHessians {
        h1_conj_constrained: CMat::zeros(d, d),
        h2_constrained: CMat::zeros(d, d),
        h1_conj_fixed: CMat::zeros(d, d),
        h2_fixed: CMat::zeros(d, d),
    };
    let inv_l = 1.0 / dims.sub_blocks as f64;
    let inv_t = re(1.0 / dims.blocks as f64);
    for t in 0..dims.blocks {
        let at = &a[k][t];
        let at_t = at.transpose();
        let mut weighted = CMat::zeros(d, d);
        let mut v1_fixed = CVec::zeros(d);
        let mut v1_con = CVec::zeros(d);
        let mut v2_fixed = CVec::zeros(d);
        let mut v2_con = CVec::zeros(d);
        let mut mean_var = 0.0;
        for l in 0..dims.sub_blocks {
            let slot = dims.slot_index(t, l);
            let s = st[slot];
            let nu = nu[slot];
            let c = stats.cov(k, t, l);
            let a_l = c * &w[k] / re(s.sigma2);
            let tau = s.eta + s.xi + nu;
            let omega = s.xi + nu - s.rho;
            mean_var += s.sigma2 * inv_l;
            weighted += c.conjugate() * (s.rho / (nu * s.sigma2) * inv_l);
            v1_fixed += (&a_l * (tau / 2.0) - at * s.eta) * (re(inv_l) / nu);
            v1_con += (&a_l * (tau / 2.0) - at * (nu + s.eta)) * (re(inv_l) / nu);
            v2_fixed += (at.conjugate() * (s.xi - s.rho) - a_l.conjugate() * (tau / 2.0)) * (re(inv_l) / nu);
            v2_con += (at.conjugate() * omega - a_l.conjugate() * (tau / 2.0)) * (re(inv_l) / nu);
        }
        out.h1_conj_fixed += &v1_fixed * &at_t * inv_t;
        out.h1_conj_constrained += &v1_con * &at_t * inv_t;
        out.h2_fixed += (-&weighted - &v2_fixed * &at_t) * inv_t;
        out.h2_constrained +=
            (stats.block_cov(k, t).conjugate() / re(mean_var) - &weighted - &v2_con * &at_t) * inv_t;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dims;
    use crate::linalg::{complex_normal_mat, complex_normal_vec, max_abs};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, d: usize) -> (SegmentedDataset, BlockStats, Vec<CVec>) {
        let dims = Dims { datasets: 1, blocks: 2, sub_blocks: 3, samples: 40, channels: d };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..dims.cell_count()).map(|_| complex_normal_mat(d, 40, &mut rng)).collect();
        let data = SegmentedDataset::from_cells(dims, cells).unwrap();
        let stats = BlockStats::new(&data);
        let w = vec![complex_normal_vec(d, &mut rng)];
        (data, stats, w)
    }

    #[test]
    fn background_term_is_trace_identity() {
        let (data, stats, w) = setup(1, 4);
        let frozen = FrozenModel::fit(&data, &stats, &w, &SourceModel::Rati).unwrap();
        let terms = contrast_eval(&data, &stats, &w, &frozen, None).unwrap();
        assert!((terms.background + 3.0).abs() < 1e-10);
    }

    #[test]
    fn gamma_term_vanishes_for_unit_gamma() {
        // data whose block covariance makes a = e_1 scaled to gamma = 1
        let dims = Dims { datasets: 1, blocks: 1, sub_blocks: 1, samples: 3, channels: 3 };
        let cell = CMat::identity(3, 3) * re(3f64.sqrt());
        let data = SegmentedDataset::from_cells(dims, vec![cell]).unwrap();
        let stats = BlockStats::new(&data);
        let w = vec![CVec::from_vec(vec![re(1.0), ZERO, ZERO])];
        let frozen = FrozenModel::fit(&data, &stats, &w, &SourceModel::Rati).unwrap();
        let terms = contrast_eval(&data, &stats, &w, &frozen, None).unwrap();
        assert_eq!(terms.gamma, 0.0);
    }

    #[test]
    fn constrained_minus_fixed_is_ogc_derivative() {
        let (data, stats, w) = setup(2, 3);
        let model = SourceModel::Gauss { mu: None };
        let frozen = FrozenModel::fit(&data, &stats, &w, &model).unwrap();
        let nu: Vec<C64> = (0..6).map(|i| C64::new(1.0 + 0.1 * i as f64, 0.05)).collect();
        let h = full_hessians_diag(&data, &stats, &w, &frozen, &nu, 0).unwrap();
        let a = update_a(&stats, &w).unwrap();
        let mut d2 = CMat::zeros(3, 3);
        let mut d1 = CMat::zeros(3, 3);
        for t in 0..2 {
            let at = &a[0][t];
            let var = w[0].dotc(&(stats.block_cov(0, t) * &w[0])).re;
            d2 += (stats.block_cov(0, t).conjugate() / re(var) - at.conjugate() * at.transpose()) / re(2.0);
            d1 -= at * at.transpose() / re(2.0);
        }
        assert!(max_abs(&(&h.h2_constrained - &h.h2_fixed - d2)) < 1e-12);
        assert!(max_abs(&(&h.h1_conj_constrained - &h.h1_conj_fixed - d1)) < 1e-12);
    }

    #[test]
    fn blocking_matrix_annihilates_mixing_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = complex_normal_vec(5, &mut rng);
        assert!((blocking_matrix(&a) * a).norm() < 1e-14);
    }
}
