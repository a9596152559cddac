//! Moment-parameterised multivariate Gaussians and weighted mixtures.
//!
//! Every covariance that leaves this module has been symmetrised as
//! `(C + Cᵀ)/2`. Factorisations go through [`cholesky`], which retries with a
//! bounded diagonal jitter before giving up.


use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest jitter tried, relative to `trace(C)/d`.
pub const JITTER_MIN: f64 = 1e-12;
/// Largest jitter tried, relative to `trace(C)/d`.
pub const JITTER_MAX: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn jitter_scale(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows().max(1) as f64;
    let scale = m.trace() / d;
    if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Cholesky factorisation with the escalating-jitter repair policy.
///
/// Tries `C` as is, then `C + j·I` for `j = 1e-12·tr(C)/d`, growing by ×10 up
/// to `1e-6·tr(C)/d`.
pub fn cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { context });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let scale = jitter_scale(m);
    let mut rel = JITTER_MIN;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += rel * scale;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite { context })
}

/// Solves `C X = B` for symmetric PSD `C` via [`cholesky`].
pub fn spd_solve(c: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    Ok(cholesky(c, context)?.solve(b))
}

/// A multivariate normal distribution in moment form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "Gaussian covariance",
                expected: d,
                found: if cov.nrows() != d { cov.nrows() } else { cov.ncols() },
            });
        }
        let cov = symmetrize(&cov);
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Gaussian with non-finite entries".into()));
        }
        Ok(Self { mean, cov })
    }

    /// Builds without validation. Callers guarantee matching dimensions; the
    /// covariance is still symmetrised.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// `ln N(x; mean, cov)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "log_density point",
                expected: self.dim(),
                found: x.len(),
            });
        }
        let chol = cholesky(&self.cov, "log_density covariance")?;
        Ok(log_density_with(&chol, &(x - &self.mean)))
    }

    /// Marginal over the given indices, in the given order.
    pub fn marginal(&self, idx: &[usize]) -> Result<Gaussian> {
        check_indices(idx, self.dim())?;
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Ok(Gaussian::from_parts(mean, cov))
    }

    /// Exact conditional of the unobserved block given `x[observed] = y`,
    /// via the Schur complement.
    ///
    /// When every index is observed the result is the degenerate Gaussian at
    /// `y`, represented with a `JITTER_MIN`-scaled identity covariance.
    pub fn condition(&self, observed: &[usize], y: &DVector<f64>) -> Result<Gaussian> {
        check_indices(observed, self.dim())?;
        if y.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                context: "condition observation",
                expected: observed.len(),
                found: y.len(),
            });
        }
        let hidden: Vec<usize> = (0..self.dim()).filter(|i| !observed.contains(i)).collect();
        if hidden.is_empty() {
            let jitter = JITTER_MIN * jitter_scale(&self.cov);
            let d = y.len();
            return Ok(Gaussian::from_parts(y.clone(), DMatrix::identity(d, d) * jitter));
        }
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.cov[(rows[r], cols[c])])
        };
        let s_hh = pick(&hidden, &hidden);
        let s_ho = pick(&hidden, observed);
        let s_oo = pick(observed, observed);
        let mu_h = DVector::from_iterator(hidden.len(), hidden.iter().map(|&i| self.mean[i]));
        let mu_o = DVector::from_iterator(observed.len(), observed.iter().map(|&i| self.mean[i]));

        let chol = cholesky(&s_oo, "conditioning marginal")?;
        // gain = S_ho S_oo⁻¹
        let gain = chol.solve(&s_ho.transpose()).transpose();
        let mean = mu_h + &gain * (y - mu_o);
        let cov = s_hh - &gain * s_ho.transpose();
        Ok(Gaussian::from_parts(mean, cov))
    }
}

/// Draws from a fixed Gaussian using a symmetric PSD square root of its
/// covariance. Zero-variance directions produce exactly zero noise.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(g: &Gaussian) -> Self {
        Self {
            mean: g.mean.clone(),
            root: psd_sqrt(&g.cov),
        }
    }

    /// Zero-mean sampler for a noise covariance.
    pub fn noise(cov: &DMatrix<f64>) -> Self {
        Self {
            mean: DVector::zeros(cov.nrows()),
            root: psd_sqrt(&symmetrize(cov)),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        &self.mean + &self.root * z
    }
}

/// `Q·diag(√max(λ,0))` from the symmetric eigendecomposition `C = QΛQᵀ`.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(cov.nrows(), cov.ncols());
    }
    let eig = cov.clone().symmetric_eigen();
    let mut root = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    root
}

/// `ln N(r; 0, C)` given the Cholesky factor of `C` and a residual `r`.
pub(crate) fn log_density_with(chol: &Cholesky<f64, Dyn>, residual: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let d = residual.len();
    let z = l
        .view((0, 0), (d, d))
        .lower_triangle()
        .solve_lower_triangular(residual)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (d as f64 * LN_2PI + log_det + z.norm_squared())
}

fn check_indices(idx: &[usize], dim: usize) -> Result<()> {
    for (k, &i) in idx.iter().enumerate() {
        if i >= dim || idx[..k].contains(&i) {
            return Err(Error::InvalidParameter(format!(
                "index set {idx:?} invalid for dimension {dim}"
            )));
        }
    }
    Ok(())
}

/// A mixture component with its natural-log weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGaussian {
    pub log_weight: f64,
    pub component: Gaussian,
}

/// A non-empty, normalised mixture of equal-dimension Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<WeightedGaussian>,
}

impl GaussianMixture {
    /// Builds a mixture and normalises its log-weights.
    pub fn new(mut components: Vec<WeightedGaussian>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyMixture)?;
        let d = first.component.dim();
        if let Some(bad) = components.iter().find(|c| c.component.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "mixture component",
                expected: d,
                found: bad.component.dim(),
            });
        }
        let logs: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
        let (normalised, _) = normalize_log_weights(&logs)?;
        for (c, w) in components.iter_mut().zip(normalised) {
            c.log_weight = w;
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[WeightedGaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].component.dim()
    }

    /// Moment-matched single Gaussian.
    pub fn collapse(&self) -> Gaussian {
        let parts: Vec<(f64, &Gaussian)> = self
            .components
            .iter()
            .map(|c| (c.log_weight.exp(), &c.component))
            .collect();
        collapse_weighted(&parts, self.dim())
    }
}

/// Moment-matches `Σ wᵢ N(μᵢ, Σᵢ)` with linear weights that already sum to 1.
///
/// The covariance is accumulated as `Σ wᵢ (Σᵢ + (μᵢ−μ)(μᵢ−μ)ᵀ)`, so a single
/// unit-weight component is returned unchanged.
pub fn collapse_weighted(parts: &[(f64, &Gaussian)], dim: usize) -> Gaussian {
    let mut mean = DVector::zeros(dim);
    for (w, g) in parts {
        if *w > 0.0 {
            mean += &g.mean * *w;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (w, g) in parts {
        if *w > 0.0 {
            let diff = &g.mean - &mean;
            cov += &g.cov * *w;
            cov.ger(*w, &diff, &diff, 1.0);
        }
    }
    Gaussian::from_parts(mean, cov)
}

/// Numerically stable `ln Σ exp(wᵢ)`; `-inf` when every entry is `-inf`.
pub fn log_sum_exp(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + w.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Returns `(w − logsumexp(w), logsumexp(w))`.
pub fn normalize_log_weights(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    if w.iter().any(|v| v.is_nan()) || w.is_empty() {
        return Err(Error::AllWeightsDead);
    }
    let total = log_sum_exp(w);
    if !total.is_finite() {
        return Err(Error::AllWeightsDead);
    }
    Ok((w.iter().map(|v| v - total).collect(), total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    fn dense_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
        let d = mean.len() as f64;
        let inv = cov.clone().try_inverse().unwrap();
        let r = x - mean;
        let quad = (r.transpose() * inv * &r)[(0, 0)];
        -0.5 * (d * (2.0 * PI).ln() + cov.determinant().ln() + quad)
    }

    #[test]
    fn standard_normal_at_mode_and_one_sigma() {
        let g = Gaussian::standard(1);
        let at0 = g.log_density(&DVector::from_element(1, 0.0)).unwrap();
        let at1 = g.log_density(&DVector::from_element(1, 1.0)).unwrap();
        assert!((at0 - (-0.5 * (2.0 * PI).ln())).abs() < 1e-15);
        assert!((at0 + 0.918_938_5).abs() < 1e-7);
        assert!((at1 + 1.418_938_5).abs() < 1e-7);
    }

    #[test]
    fn log_density_matches_dense_inverse_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cov = random_spd(&mut rng, 3);
            let mean = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
            let got = g.log_density(&x).unwrap();
            let want = dense_log_density(&mean, &cov, &x);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn log_density_rejects_wrong_dimension() {
        let g = Gaussian::standard(2);
        assert!(matches!(
            g.log_density(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn log_density_integrates_to_one() {
        let sigma = 1.7;
        let g = Gaussian::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, sigma * sigma)).unwrap();
        let n = 20_001;
        let (lo, hi) = (0.3 - 10.0 * sigma, 0.3 + 10.0 * sigma);
        let h = (hi - lo) / (n - 1) as f64;
        // Simpson's rule
        let mut total = 0.0;
        for k in 0..n {
            let x = lo + k as f64 * h;
            let w = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += w * g.log_density(&DVector::from_element(1, x)).unwrap().exp();
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let g = Gaussian::new(DVector::zeros(2), cov).unwrap();
        assert!(matches!(
            g.log_density(&DVector::zeros(2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn jitter_repairs_semidefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky(&cov, "test").is_ok());
    }

    #[test]
    fn construction_symmetrises() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.6, 1.0]);
        let g = Gaussian::new(DVector::zeros(2), cov).unwrap();
        assert_eq!(g.cov()[(0, 1)], 0.5);
        assert_eq!(g.cov()[(1, 0)], 0.5);
    }

    #[test]
    fn condition_independent_block_is_marginal() {
        let g = Gaussian::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]),
        )
        .unwrap();
        let c = g.condition(&[1], &DVector::from_element(1, 7.0)).unwrap();
        assert_eq!(c.mean()[0], 1.0);
        assert_eq!(c.cov()[(0, 0)], 3.0);
    }

    #[test]
    fn condition_correlated_pair_by_hand() {
        let g = Gaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let c = g.condition(&[1], &DVector::from_element(1, 1.0)).unwrap();
        assert!((c.mean()[0] - 0.5).abs() < 1e-15);
        assert!((c.cov()[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn condition_on_everything_is_degenerate_at_observation() {
        let g = Gaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.25, -1.0]);
        let c = g.condition(&[0, 1], &y).unwrap();
        assert_eq!(c.mean(), &y);
        assert!(c.cov().iter().all(|v| v.abs() <= 1e-12));
        assert!(c.cov()[(0, 0)] > 0.0);
    }

    #[test]
    fn condition_matches_density_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let cov = random_spd(&mut rng, 4);
            let mean = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let joint = Gaussian::new(mean, cov).unwrap();
            let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let observed = [3usize, 1];
            let y = DVector::from_vec(vec![x[3], x[1]]);
            let cond = joint.condition(&observed, &y).unwrap();
            let lhs = cond.log_density(&DVector::from_vec(vec![x[0], x[2]])).unwrap();
            let rhs = joint.log_density(&x).unwrap()
                - joint.marginal(&observed).unwrap().log_density(&y).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn collapse_single_component_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Gaussian::new(DVector::from_fn(3, |_, _| rng.random()), random_spd(&mut rng, 3)).unwrap();
        let m = GaussianMixture::new(vec![WeightedGaussian {
            log_weight: -3.0,
            component: g.clone(),
        }])
        .unwrap();
        let c = m.collapse();
        assert_eq!(c.mean(), g.mean());
        assert!((c.cov() - g.cov()).amax() < 1e-12);
    }

    #[test]
    fn collapse_identical_components() {
        let g = Gaussian::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let m = GaussianMixture::new(vec![
            WeightedGaussian { log_weight: 0.3f64.ln(), component: g.clone() },
            WeightedGaussian { log_weight: 0.7f64.ln(), component: g.clone() },
        ])
        .unwrap();
        let c = m.collapse();
        assert!((c.mean() - g.mean()).amax() < 1e-12);
        assert!((c.cov() - g.cov()).amax() < 1e-12);
    }

    #[test]
    fn collapse_law_of_total_variance() {
        let comp = |mu: f64| Gaussian::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let m = GaussianMixture::new(vec![
            WeightedGaussian { log_weight: 0.5f64.ln(), component: comp(-1.0) },
            WeightedGaussian { log_weight: 0.5f64.ln(), component: comp(1.0) },
        ])
        .unwrap();
        let c = m.collapse();
        assert!(c.mean()[0].abs() < 1e-15);
        assert!((c.cov()[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mixture_is_an_error() {
        assert!(matches!(GaussianMixture::new(vec![]), Err(Error::EmptyMixture)));
    }

    #[test]
    fn normalize_symmetric_pair() {
        let (w, total) = normalize_log_weights(&[0.0, 0.0]).unwrap();
        let ln2 = 2f64.ln();
        assert!((w[0] + ln2).abs() < 1e-15 && (w[1] + ln2).abs() < 1e-15);
        assert!((total - ln2).abs() < 1e-15);
    }

    #[test]
    fn normalize_extreme_spread() {
        let (w, total) = normalize_log_weights(&[-1000.0, 0.0]).unwrap();
        assert!((w[0] + 1000.0).abs() < 1e-9);
        assert!(w[1].abs() < 1e-12);
        assert!(total.is_finite());
    }

    #[test]
    fn normalize_random_vector_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
            let (n, _) = normalize_log_weights(&w).unwrap();
            let direct: f64 = n.iter().map(|v| v.exp()).sum();
            assert!((direct - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_dead_and_nan() {
        assert!(matches!(
            normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(Error::AllWeightsDead)
        ));
        assert!(matches!(normalize_log_weights(&[0.0, f64::NAN]), Err(Error::AllWeightsDead)));
    }

    #[test]
    fn operations_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Gaussian::new(DVector::from_fn(3, |_, _| rng.random()), random_spd(&mut rng, 3)).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.random());
        assert_eq!(
            g.log_density(&x).unwrap().to_bits(),
            g.log_density(&x).unwrap().to_bits()
        );
        let y = DVector::from_element(1, 0.4);
        assert_eq!(g.condition(&[2], &y).unwrap(), g.condition(&[2], &y).unwrap());
    }
}
