//! Extraction quality and robust aggregation.

use ive_core::linalg::CVec;
use ive_core::GroundTruth;

/// Value reported for perfect extraction.
pub const ISR_FLOOR_DB: f64 = -120.0;

/// Interference-to-signal ratio of `w` on dataset `k` in dB.
///
/// With gains `g_t = A_{k,t}^H w`, returns
/// `10 log10( <sum_{i>=2} |g_{t,i}|^2>_t / <|g_{t,1}|^2 <sigma2_{t,l}>_l>_t )`
/// for unit-power backgrounds, floored at [`ISR_FLOOR_DB`] and `+inf` when
/// the SOI gain vanishes.
pub fn isr(w: &CVec, truth: &GroundTruth, k: usize) -> f64 {
    let dims = truth.dims();
    let mut interference = 0.0;
    let mut signal = 0.0;
    for t in 0..dims.blocks {
        let g = truth.mixing_matrix(k, t).adjoint() * w;
        let power: f64 = (0..dims.sub_blocks).map(|l| truth.variance(t, l)).sum::<f64>() / dims.sub_blocks as f64;
        signal += g[0].norm_sqr() * power;
        interference += g.iter().skip(1).map(|z| z.norm_sqr()).sum::<f64>();
    }
    to_db(interference, signal)
}

fn to_db(interference: f64, signal: f64) -> f64 {
    if !(signal > 0.0) {
        return f64::INFINITY;
    }
    let ratio = interference / signal;
    if ratio <= 0.0 {
        return ISR_FLOOR_DB;
    }
    (10.0 * ratio.log10()).max(ISR_FLOOR_DB)
}

/// ISR measured on the retained source samples: `w^H A u` is split into the
/// SOI contribution and the background contribution and their sample
/// powers compared.
pub fn isr_from_samples(w: &CVec, truth: &GroundTruth, k: usize) -> f64 {
    let dims = truth.dims();
    let mut interference = 0.0;
    let mut signal = 0.0;
    for t in 0..dims.blocks {
        let g = truth.mixing_matrix(k, t).adjoint() * w;
        for l in 0..dims.sub_blocks {
            let u = truth.source(k, t, l);
            for j in 0..u.ncols() {
                signal += (g[0].conj() * u[(0, j)]).norm_sqr();
                let bg: ive_core::linalg::C64 = (1..u.nrows()).map(|i| g[i].conj() * u[(i, j)]).sum();
                interference += bg.norm_sqr();
            }
        }
    }
    to_db(interference, signal)
}

/// Two-sided trimmed mean: drops `ceil(fraction n)` values from each end,
/// capped so that at least one value remains.
pub fn trimmed_mean(values: &[f64], fraction: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..0.5).contains(&fraction) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let cut = ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min((n - 1) / 2);
    let kept = &v[cut..n - cut];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimmed_mean_examples() {
        let mut v = vec![0.0; 99];
        v.push(f64::INFINITY);
        assert_eq!(trimmed_mean(&v, 0.01), Some(0.0));
        assert_eq!(trimmed_mean(&[1.0, 2.0, 6.0], 0.0), Some(3.0));
        assert_eq!(trimmed_mean(&[1.0, 2.0, 3.0, 4.0, 100.0], 0.01), Some(3.0));
        assert_eq!(trimmed_mean(&[7.0], 0.01), Some(7.0));
        assert_eq!(trimmed_mean(&[], 0.01), None);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn db_edges() {
        assert_eq!(to_db(0.0, 1.0), ISR_FLOOR_DB);
        assert_eq!(to_db(1.0, 0.0), f64::INFINITY);
        assert!((to_db(1.0, 10.0) + 10.0).abs() < 1e-12);
    }
}
