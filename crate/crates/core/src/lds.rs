//! Linear dynamical systems: Kalman filtering, Rauch–Tung–Striebel
//! smoothing, ancestral sampling and exact EM.
//!
//! The model is
//!
//! ```text
//! h₁ ~ prior
//! h_t = A h_{t−1} + η_h,   η_h ~ N(0, Σ_H)
//! v_t = B h_t     + η_v,   η_v ~ N(0, Σ_V)
//! ```
//!
//! with time-invariant parameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, cholesky, symmetrize, Gaussian, GaussianSampler};
use crate::seed;

/// Diagonal prior variance of the constant-acceleration model.
pub const DIFFUSE_PRIOR_VARIANCE: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsParams {
    transition: DMatrix<f64>,
    emission: DMatrix<f64>,
    transition_noise: DMatrix<f64>,
    emission_noise: DMatrix<f64>,
    prior: Gaussian,
}

impl LdsParams {
    /// `transition` is A (n×n), `emission` is B (m×n), `transition_noise` is
    /// Σ_H (n×n), `emission_noise` is Σ_V (m×m) and `prior` is p(h₁).
    pub fn new(
        transition: DMatrix<f64>,
        emission: DMatrix<f64>,
        transition_noise: DMatrix<f64>,
        emission_noise: DMatrix<f64>,
        prior: Gaussian,
    ) -> Result<Self> {
        let n = transition.nrows();
        let m = emission.nrows();
        let check = |context, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { context, expected, found })
            }
        };
        check("transition matrix columns", n, transition.ncols())?;
        check("emission matrix columns", n, emission.ncols())?;
        check("transition noise rows", n, transition_noise.nrows())?;
        check("transition noise columns", n, transition_noise.ncols())?;
        check("emission noise rows", m, emission_noise.nrows())?;
        check("emission noise columns", m, emission_noise.ncols())?;
        check("prior dimension", n, prior.dim())?;
        let all = transition
            .iter()
            .chain(emission.iter())
            .chain(transition_noise.iter())
            .chain(emission_noise.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("LDS parameters must be finite".into()));
        }
        Ok(Self {
            transition,
            emission,
            transition_noise: symmetrize(&transition_noise),
            emission_noise: symmetrize(&emission_noise),
            prior,
        })
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }

    pub fn transition_noise(&self) -> &DMatrix<f64> {
        &self.transition_noise
    }

    pub fn emission_noise(&self) -> &DMatrix<f64> {
        &self.emission_noise
    }

    pub fn prior(&self) -> &Gaussian {
        &self.prior
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.emission.nrows()
    }

    pub fn with_prior(mut self, prior: Gaussian) -> Result<Self> {
        if prior.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "prior dimension",
                expected: self.state_dim(),
                found: prior.dim(),
            });
        }
        self.prior = prior;
        Ok(self)
    }

    /// Largest absolute entry-wise difference across all parameters.
    pub fn max_abs_diff(&self, other: &LdsParams) -> f64 {
        [
            (&self.transition - &other.transition).amax(),
            (&self.emission - &other.emission).amax(),
            (&self.transition_noise - &other.transition_noise).amax(),
            (&self.emission_noise - &other.emission_noise).amax(),
            (self.prior.mean() - other.prior.mean()).amax(),
            (self.prior.cov() - other.prior.cov()).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Output of [`filter`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    /// p(h_t | v_{1:t})
    pub filtered: Vec<Gaussian>,
    /// p(h_t | v_{1:t−1}); the first entry is the prior.
    pub predicted: Vec<Gaussian>,
    pub log_likelihood: f64,
    pub per_step_loglik: Vec<f64>,
}

/// Output of [`rts_smooth`].
#[derive(Clone, Debug, PartialEq)]
pub struct Smoothed {
    /// p(h_t | v_{1:T})
    pub marginals: Vec<Gaussian>,
    /// `cross_cov[t] = Cov(h_{t+1}, h_t | v_{1:T})`, length T−1.
    pub cross_cov: Vec<DMatrix<f64>>,
}

pub fn predict_step(p: &LdsParams, belief: &Gaussian) -> Result<Gaussian> {
    if belief.dim() != p.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "predict belief",
            expected: p.state_dim(),
            found: belief.dim(),
        });
    }
    let a = &p.transition;
    let mean = a * belief.mean();
    let cov = a * belief.cov() * a.transpose() + &p.transition_noise;
    Ok(Gaussian::from_parts(mean, cov))
}

/// Kalman measurement update with the Joseph-form covariance.
///
/// Returns the posterior and `ln N(v; Bμ, BΣBᵀ + Σ_V)`.
pub fn update_step(p: &LdsParams, predicted: &Gaussian, v: &DVector<f64>) -> Result<(Gaussian, f64)> {
    if v.len() != p.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "observation",
            expected: p.obs_dim(),
            found: v.len(),
        });
    }
    if predicted.dim() != p.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "update belief",
            expected: p.state_dim(),
            found: predicted.dim(),
        });
    }
    let b = &p.emission;
    let sigma = predicted.cov();
    let pbt = sigma * b.transpose();
    let innovation_cov = symmetrize(&(b * &pbt + &p.emission_noise));
    let chol = cholesky(&innovation_cov, "innovation covariance")?;
    let residual = v - b * predicted.mean();
    let loglik = gaussian::log_density_with(&chol, &residual);

    let gain = chol.solve(&pbt.transpose()).transpose();
    let mean = predicted.mean() + &gain * &residual;
    let n = p.state_dim();
    let i_kb = DMatrix::identity(n, n) - &gain * b;
    let cov = &i_kb * sigma * i_kb.transpose() + &gain * &p.emission_noise * gain.transpose();
    Ok((Gaussian::from_parts(mean, cov), loglik))
}

pub fn filter(p: &LdsParams, obs: &[DVector<f64>]) -> Result<FilterResult> {
    if obs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut filtered = Vec::with_capacity(obs.len());
    let mut predicted = Vec::with_capacity(obs.len());
    let mut per_step = Vec::with_capacity(obs.len());
    for (t, v) in obs.iter().enumerate() {
        let pred = if t == 0 {
            p.prior.clone()
        } else {
            predict_step(p, &filtered[t - 1])?
        };
        let (post, ll) = update_step(p, &pred, v)?;
        predicted.push(pred);
        filtered.push(post);
        per_step.push(ll);
    }
    Ok(FilterResult {
        filtered,
        predicted,
        log_likelihood: per_step.iter().sum(),
        per_step_loglik: per_step,
    })
}

/// One RTS backward step. Returns the smoothed marginal at `t` and
/// `Cov(h_{t+1}, h_t | v_{1:T})`.
pub(crate) fn rts_step(
    transition: &DMatrix<f64>,
    filtered: &Gaussian,
    predicted_next: &Gaussian,
    smoothed_next: &Gaussian,
) -> Result<(Gaussian, DMatrix<f64>)> {
    let p_t = filtered.cov();
    // J = P_t Aᵀ P_pred⁻¹, computed as (P_pred⁻¹ A P_t)ᵀ
    let chol = cholesky(predicted_next.cov(), "smoother predicted covariance")?;
    let j = chol.solve(&(transition * p_t)).transpose();
    let mean = filtered.mean() + &j * (smoothed_next.mean() - predicted_next.mean());
    let cov = p_t + &j * (smoothed_next.cov() - predicted_next.cov()) * j.transpose();
    let cross = smoothed_next.cov() * j.transpose();
    Ok((Gaussian::from_parts(mean, cov), cross))
}

pub fn rts_smooth(p: &LdsParams, fr: &FilterResult) -> Result<Smoothed> {
    let t_len = fr.filtered.len();
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut marginals = vec![fr.filtered[t_len - 1].clone(); t_len];
    let mut cross_cov = vec![DMatrix::zeros(0, 0); t_len - 1];
    for t in (0..t_len - 1).rev() {
        let (m, c) = rts_step(&p.transition, &fr.filtered[t], &fr.predicted[t + 1], &marginals[t + 1])?;
        marginals[t] = m;
        cross_cov[t] = c;
    }
    Ok(Smoothed { marginals, cross_cov })
}

/// Ancestral sample of `(latents, observations)`, deterministic per seed.
#[allow(clippy::type_complexity)]
pub fn sample(p: &LdsParams, len: usize, rng_seed: u64) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if len == 0 {
        return Err(Error::InvalidParameter("sample length must be at least 1".into()));
    }
    let mut rng = seed::rng(rng_seed);
    let prior = GaussianSampler::new(&p.prior);
    let process = GaussianSampler::noise(&p.transition_noise);
    let measurement = GaussianSampler::noise(&p.emission_noise);
    let mut latents = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    for t in 0..len {
        let h = if t == 0 {
            prior.sample(&mut rng)
        } else {
            &p.transition * &latents[t - 1] + process.sample(&mut rng)
        };
        obs.push(&p.emission * &h + measurement.sample(&mut rng));
        latents.push(h);
    }
    Ok((latents, obs))
}

/// Constant-acceleration kinematics over the ground plane.
///
/// State order is `[x, z, ẋ, ż, ẍ, z̈]`, observations are `(x, z)`.
/// `accel_noise` is the variance of the per-step white-noise increment of
/// each acceleration, propagated through `Γ = [dt²/2, dt, 1]ᵀ` per axis;
/// `obs_noise` is the measurement variance per axis.
pub fn constant_acceleration_model(dt: f64, accel_noise: f64, obs_noise: f64) -> Result<LdsParams> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(accel_noise > 0.0 && accel_noise.is_finite()) || !(obs_noise > 0.0 && obs_noise.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise levels must be positive, got accel {accel_noise}, obs {obs_noise}"
        )));
    }
    let transition = kinematic_transition(dt);
    let gamma = [0.5 * dt * dt, dt, 1.0];
    let mut q = DMatrix::zeros(6, 6);
    for axis in 0..2 {
        let idx = [axis, 2 + axis, 4 + axis];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                q[(i, j)] = accel_noise * gamma[r] * gamma[c];
            }
        }
    }
    LdsParams::new(
        transition,
        position_selector(),
        q,
        DMatrix::identity(2, 2) * obs_noise,
        Gaussian::new(DVector::zeros(6), DMatrix::identity(6, 6) * DIFFUSE_PRIOR_VARIANCE)?,
    )
}

/// Constant-acceleration transition matrix for state `[x, z, ẋ, ż, ẍ, z̈]`.
pub fn kinematic_transition(dt: f64) -> DMatrix<f64> {
    let mut a = DMatrix::identity(6, 6);
    for axis in 0..2 {
        a[(axis, 2 + axis)] = dt;
        a[(axis, 4 + axis)] = 0.5 * dt * dt;
        a[(2 + axis, 4 + axis)] = dt;
    }
    a
}

/// Selects `(x, z)` from the 6-dimensional kinematic state.
pub fn position_selector() -> DMatrix<f64> {
    let mut b = DMatrix::zeros(2, 6);
    b[(0, 0)] = 1.0;
    b[(1, 1)] = 1.0;
    b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the log-likelihood gain falls below `tol·|ℓ|`.
    pub tol: f64,
    /// Re-estimate A and B as well as the noise covariances and prior.
    pub learn_matrices: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            learn_matrices: false,
        }
    }
}

/// Weighted expected sufficient statistics for the LDS M-step.
#[derive(Clone, Debug)]
pub(crate) struct SuffStats {
    pub trans_weight: f64,
    /// Σ E[h_{t−1} h_{t−1}ᵀ]
    pub prev_prev: DMatrix<f64>,
    /// Σ E[h_t h_tᵀ] over transition targets
    pub cur_cur: DMatrix<f64>,
    /// Σ E[h_t h_{t−1}ᵀ]
    pub cur_prev: DMatrix<f64>,
    pub obs_weight: f64,
    /// Σ E[h_t h_tᵀ] over emitting steps
    pub state_state: DMatrix<f64>,
    /// Σ v_t E[h_t]ᵀ
    pub obs_state: DMatrix<f64>,
    /// Σ v_t v_tᵀ
    pub obs_obs: DMatrix<f64>,
    pub init_weight: f64,
    pub init_mean: DVector<f64>,
    /// Σ w (P₁ + μ₁μ₁ᵀ)
    pub init_second: DMatrix<f64>,
}

impl SuffStats {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            trans_weight: 0.0,
            prev_prev: DMatrix::zeros(n, n),
            cur_cur: DMatrix::zeros(n, n),
            cur_prev: DMatrix::zeros(n, n),
            obs_weight: 0.0,
            state_state: DMatrix::zeros(n, n),
            obs_state: DMatrix::zeros(m, n),
            obs_obs: DMatrix::zeros(m, m),
            init_weight: 0.0,
            init_mean: DVector::zeros(n),
            init_second: DMatrix::zeros(n, n),
        }
    }

    pub fn add_transition(&mut self, w: f64, prev_prev: &DMatrix<f64>, cur_cur: &DMatrix<f64>, cur_prev: &DMatrix<f64>) {
        self.trans_weight += w;
        self.prev_prev += prev_prev * w;
        self.cur_cur += cur_cur * w;
        self.cur_prev += cur_prev * w;
    }

    pub fn add_emission(&mut self, w: f64, v: &DVector<f64>, state: &Gaussian) {
        self.obs_weight += w;
        self.state_state += &second_moment(state) * w;
        self.obs_state.ger(w, v, state.mean(), 1.0);
        self.obs_obs.ger(w, v, v, 1.0);
    }

    pub fn add_initial(&mut self, w: f64, first: &Gaussian) {
        self.init_weight += w;
        self.init_mean += first.mean() * w;
        self.init_second += &second_moment(first) * w;
    }

    pub fn merge(&mut self, o: &SuffStats) {
        self.trans_weight += o.trans_weight;
        self.prev_prev += &o.prev_prev;
        self.cur_cur += &o.cur_cur;
        self.cur_prev += &o.cur_prev;
        self.obs_weight += o.obs_weight;
        self.state_state += &o.state_state;
        self.obs_state += &o.obs_state;
        self.obs_obs += &o.obs_obs;
        self.init_weight += o.init_weight;
        self.init_mean += &o.init_mean;
        self.init_second += &o.init_second;
    }
}

/// `E[h hᵀ] = Σ + μμᵀ`
pub(crate) fn second_moment(g: &Gaussian) -> DMatrix<f64> {
    let mut m = g.cov().clone();
    m.ger(1.0, g.mean(), g.mean(), 1.0);
    m
}

/// `E[h_{t+1} h_tᵀ] = C + μ_{t+1} μ_tᵀ`
pub(crate) fn cross_moment(cross_cov: &DMatrix<f64>, next: &DVector<f64>, cur: &DVector<f64>) -> DMatrix<f64> {
    let mut m = cross_cov.clone();
    m.ger(1.0, next, cur, 1.0);
    m
}

/// Closed-form maximum-likelihood update from expected sufficient
/// statistics. Parameters whose statistics carry no weight are kept.
pub(crate) fn m_step(current: &LdsParams, s: &SuffStats, learn_matrices: bool) -> Result<LdsParams> {
    let singular = |_| Error::SingularSufficientStatistics("normal equations");
    let mut a = current.transition.clone();
    let mut b = current.emission.clone();
    let mut sigma_h = current.transition_noise.clone();
    let mut sigma_v = current.emission_noise.clone();
    let mut prior = current.prior.clone();

    if s.trans_weight > 0.0 {
        if learn_matrices {
            // A = S_cp S_pp⁻¹
            a = gaussian::spd_solve(&s.prev_prev, &s.cur_prev.transpose(), "EM transition")
                .map_err(singular)?
                .transpose();
        }
        let a_cp = &a * s.cur_prev.transpose();
        let q = &s.cur_cur - &a_cp - a_cp.transpose() + &a * &s.prev_prev * a.transpose();
        sigma_h = symmetrize(&(q / s.trans_weight));
    }
    if s.obs_weight > 0.0 {
        if learn_matrices {
            b = gaussian::spd_solve(&s.state_state, &s.obs_state.transpose(), "EM emission")
                .map_err(singular)?
                .transpose();
        }
        let b_vs = &b * s.obs_state.transpose();
        let r = &s.obs_obs - &b_vs - b_vs.transpose() + &b * &s.state_state * b.transpose();
        sigma_v = symmetrize(&(r / s.obs_weight));
    }
    if s.init_weight > 0.0 {
        let mean = &s.init_mean / s.init_weight;
        let mut cov = &s.init_second / s.init_weight;
        cov.ger(-1.0, &mean, &mean, 1.0);
        prior = Gaussian::from_parts(mean, cov);
    }
    if sigma_h.iter().chain(sigma_v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SingularSufficientStatistics("non-finite noise covariance"));
    }
    LdsParams::new(a, b, sigma_h, sigma_v, prior)
}

/// E-step statistics of one sequence with unit weights.
fn sequence_stats(p: &LdsParams, obs: &[DVector<f64>]) -> Result<(SuffStats, f64)> {
    let fr = filter(p, obs)?;
    let sm = rts_smooth(p, &fr)?;
    let mut s = SuffStats::zeros(p.state_dim(), p.obs_dim());
    s.add_initial(1.0, &sm.marginals[0]);
    for (t, v) in obs.iter().enumerate() {
        s.add_emission(1.0, v, &sm.marginals[t]);
    }
    for t in 1..obs.len() {
        let prev = &sm.marginals[t - 1];
        let cur = &sm.marginals[t];
        s.add_transition(
            1.0,
            &second_moment(prev),
            &second_moment(cur),
            &cross_moment(&sm.cross_cov[t - 1], cur.mean(), prev.mean()),
        );
    }
    Ok((s, fr.log_likelihood))
}

/// Sums per-sequence statistics in sequence order so the result does not
/// depend on how the E-steps were scheduled.
fn e_step(p: &LdsParams, seqs: &[Vec<DVector<f64>>]) -> Result<(SuffStats, f64)> {
    let per_seq: Vec<(SuffStats, f64)> = seqs
        .par_iter()
        .map(|obs| sequence_stats(p, obs))
        .collect::<Result<_>>()?;
    let mut total = SuffStats::zeros(p.state_dim(), p.obs_dim());
    let mut ll = 0.0;
    for (s, l) in &per_seq {
        total.merge(s);
        ll += l;
    }
    Ok((total, ll))
}

pub(crate) fn validate_sequences(seqs: &[Vec<DVector<f64>>], m: usize) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::EmptySequence);
    }
    for s in seqs {
        if s.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(v) = s.iter().find(|v| v.len() != m) {
            return Err(Error::DimensionMismatch {
                context: "training observation",
                expected: m,
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// Exact EM over independent sequences.
///
/// Returns the fitted parameters and the total log-likelihood recorded at
/// each E-step; the last entry scores the returned parameters.
pub fn em_fit(seqs: &[Vec<DVector<f64>>], init: &LdsParams, config: &EmConfig) -> Result<(LdsParams, Vec<f64>)> {
    validate_sequences(seqs, init.obs_dim())?;
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("EM needs max_iters >= 1".into()));
    }
    let mut params = init.clone();
    let mut history = Vec::with_capacity(config.max_iters + 1);
    for _ in 0..config.max_iters {
        let (stats, ll) = e_step(&params, seqs)?;
        let converged = history.last().is_some_and(|&prev: &f64| ll - prev < config.tol * prev.abs());
        history.push(ll);
        if converged {
            return Ok((params, history));
        }
        params = m_step(&params, &stats, config.learn_matrices)?;
    }
    let (_, ll) = e_step(&params, seqs)?;
    history.push(ll);
    Ok((params, history))
}

/// Total log-likelihood of independent sequences.
pub fn log_likelihood(p: &LdsParams, seqs: &[Vec<DVector<f64>>]) -> Result<f64> {
    let lls: Vec<f64> = seqs
        .par_iter()
        .map(|obs| filter(p, obs).map(|f| f.log_likelihood))
        .collect::<Result<_>>()?;
    Ok(lls.iter().sum())
}
