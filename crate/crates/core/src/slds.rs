//! Switching linear dynamical systems.
//!
//! A discrete Markov chain `s_t` selects which [`LdsParams`] drives the
//! continuous state at each step:
//!
//! ```text
//! p(s₁) p(h₁|s₁) ∏ p(s_t|s_{t−1}) p(h_t|h_{t−1}, s_t) ∏ p(v_t|h_t, s_t)
//! ```
//!
//! Inference is GPB2: at every step each of the S retained Gaussians is
//! pushed through each of the S dynamics, updated against `v_t`, and the S²
//! branches are moment-matched back to one Gaussian per destination state.
//! [`exact_enumeration_filter`] walks all Sᵀ switch paths and exists to check
//! GPB2 on tiny problems.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::classify::ClassificationRule;
use crate::error::{Error, Result};
use crate::gaussian::{collapse_weighted, log_sum_exp, Gaussian, GaussianSampler};
use crate::lds::{self, cross_moment, second_moment, EmConfig, LdsParams, SuffStats};
use crate::seed;

/// Branches whose log-weight trails the best by more than this are dropped.
pub const DEAD_BRANCH_GAP: f64 = 700.0;

/// Upper bound on the number of paths [`exact_enumeration_filter`] will walk.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SldsParams {
    names: Vec<String>,
    states: Vec<LdsParams>,
    switch_trans: DMatrix<f64>,
    switch_prior: DVector<f64>,
}

impl SldsParams {
    /// `switch_trans[(i, j)] = p(s_t = j | s_{t−1} = i)`.
    pub fn new(
        names: Vec<String>,
        states: Vec<LdsParams>,
        switch_trans: DMatrix<f64>,
        switch_prior: DVector<f64>,
    ) -> Result<Self> {
        let s = states.len();
        if s == 0 {
            return Err(Error::InvalidParameter("SLDS needs at least one switching state".into()));
        }
        if names.len() != s {
            return Err(Error::DimensionMismatch { context: "state names", expected: s, found: names.len() });
        }
        if switch_trans.nrows() != s || switch_trans.ncols() != s {
            return Err(Error::DimensionMismatch {
                context: "switch transition matrix",
                expected: s,
                found: switch_trans.nrows().max(switch_trans.ncols()),
            });
        }
        if switch_prior.len() != s {
            return Err(Error::DimensionMismatch { context: "switch prior", expected: s, found: switch_prior.len() });
        }
        let (n, m) = (states[0].state_dim(), states[0].obs_dim());
        for st in &states {
            if st.state_dim() != n || st.obs_dim() != m {
                return Err(Error::DimensionMismatch {
                    context: "per-state LDS dimensions",
                    expected: n,
                    found: st.state_dim(),
                });
            }
        }
        let stochastic = |v: &mut dyn Iterator<Item = &f64>| {
            let mut sum = 0.0;
            for x in v {
                if !(x.is_finite() && *x >= 0.0) {
                    return false;
                }
                sum += x;
            }
            (sum - 1.0).abs() <= STOCHASTIC_TOL
        };
        for r in switch_trans.row_iter() {
            if !stochastic(&mut r.iter()) {
                return Err(Error::InvalidParameter(format!("switch transition row {r} is not stochastic")));
            }
        }
        if !stochastic(&mut switch_prior.iter()) {
            return Err(Error::InvalidParameter("switch prior is not a distribution".into()));
        }
        Ok(Self { names, states, switch_trans, switch_prior })
    }

    /// The one-state SLDS that behaves exactly like `lds`.
    pub fn single(lds: LdsParams) -> Self {
        Self {
            names: vec!["state0".into()],
            states: vec![lds],
            switch_trans: DMatrix::from_element(1, 1, 1.0),
            switch_prior: DVector::from_element(1, 1.0),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn states(&self) -> &[LdsParams] {
        &self.states
    }

    pub fn switch_trans(&self) -> &DMatrix<f64> {
        &self.switch_trans
    }

    pub fn switch_prior(&self) -> &DVector<f64> {
        &self.switch_prior
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.states[0].obs_dim()
    }

    /// Reorders states so that new state `i` is old state `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let s = self.num_states();
        let mut seen = vec![false; s];
        if order.len() != s || order.iter().any(|&o| o >= s || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of 0..{s}")));
        }
        Self::new(
            order.iter().map(|&o| self.names[o].clone()).collect(),
            order.iter().map(|&o| self.states[o].clone()).collect(),
            DMatrix::from_fn(s, s, |i, j| self.switch_trans[(order[i], order[j])]),
            DVector::from_fn(s, |i, _| self.switch_prior[order[i]]),
        )
    }

    fn log_trans(&self) -> DMatrix<f64> {
        self.switch_trans.map(f64::ln)
    }
}

/// Filtered joint belief at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchBelief {
    /// ln p(s_t = k | v_{1:t})
    pub log_weights: Vec<f64>,
    /// p(h_t | s_t = k, v_{1:t}), moment-matched
    pub conditionals: Vec<Gaussian>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SldsFilterResult {
    pub beliefs: Vec<SwitchBelief>,
    pub log_likelihood: f64,
    /// `T×S` filtered switch posteriors.
    pub switch_posteriors: DMatrix<f64>,
}

fn check_obs(p: &SldsParams, obs: &[DVector<f64>]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(v) = obs.iter().find(|v| v.len() != p.obs_dim()) {
        return Err(Error::DimensionMismatch { context: "observation", expected: p.obs_dim(), found: v.len() });
    }
    Ok(())
}

/// Normalises branch log-weights in place after dropping dead branches.
/// Returns the log normaliser.
fn prune_and_normalise(logw: &mut [f64]) -> Result<f64> {
    if logw.iter().any(|w| w.is_nan()) {
        return Err(Error::AllWeightsDead);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllWeightsDead);
    }
    for w in logw.iter_mut() {
        if *w < max - DEAD_BRANCH_GAP {
            *w = f64::NEG_INFINITY;
        }
    }
    let total = log_sum_exp(logw);
    for w in logw.iter_mut() {
        *w -= total;
    }
    Ok(total)
}

/// GPB2 filter.
pub fn gpb_filter(p: &SldsParams, obs: &[DVector<f64>]) -> Result<SldsFilterResult> {
    check_obs(p, obs)?;
    let s = p.num_states();
    let log_trans = p.log_trans();
    let mut beliefs: Vec<SwitchBelief> = Vec::with_capacity(obs.len());
    let mut log_likelihood = 0.0;

    for (t, v) in obs.iter().enumerate() {
        let belief = if t == 0 {
            let mut logw = Vec::with_capacity(s);
            let mut conds = Vec::with_capacity(s);
            for (k, st) in p.states.iter().enumerate() {
                let (post, ll) = lds::update_step(st, st.prior(), v)?;
                logw.push(p.switch_prior[k].ln() + ll);
                conds.push(post);
            }
            log_likelihood += prune_and_normalise(&mut logw)?;
            SwitchBelief { log_weights: logw, conditionals: conds }
        } else {
            let prev = &beliefs[t - 1];
            // branch (i → j) stored at i*s + j
            let mut branch_w = vec![f64::NEG_INFINITY; s * s];
            let mut branch_g = Vec::with_capacity(s * s);
            for i in 0..s {
                for (j, st) in p.states.iter().enumerate() {
                    let pred = lds::predict_step(st, &prev.conditionals[i])?;
                    let (post, ll) = lds::update_step(st, &pred, v)?;
                    branch_w[i * s + j] = prev.log_weights[i] + log_trans[(i, j)] + ll;
                    branch_g.push(post);
                }
            }
            log_likelihood += prune_and_normalise(&mut branch_w)?;
            collapse_by_destination(s, &branch_w, &branch_g)
        };
        beliefs.push(belief);
    }
    let switch_posteriors = DMatrix::from_fn(obs.len(), s, |t, k| beliefs[t].log_weights[k].exp());
    Ok(SldsFilterResult { beliefs, log_likelihood, switch_posteriors })
}

/// Groups normalised branch weights `(i → j)` by `j` and collapses each group.
fn collapse_by_destination(s: usize, branch_w: &[f64], branch_g: &[Gaussian]) -> SwitchBelief {
    let dim = branch_g[0].dim();
    let mut log_weights = Vec::with_capacity(s);
    let mut conditionals = Vec::with_capacity(s);
    for j in 0..s {
        let col: Vec<f64> = (0..s).map(|i| branch_w[i * s + j]).collect();
        let lw = log_sum_exp(&col);
        log_weights.push(lw);
        if lw == f64::NEG_INFINITY {
            // dead destination; any branch serves as a placeholder
            conditionals.push(branch_g[j].clone());
            continue;
        }
        let parts: Vec<(f64, &Gaussian)> = (0..s)
            .map(|i| ((col[i] - lw).exp(), &branch_g[i * s + j]))
            .collect();
        conditionals.push(collapse_weighted(&parts, dim));
    }
    SwitchBelief { log_weights, conditionals }
}

/// Per-step output of the GPB2 backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GpbSmoothed {
    /// `T×S` smoothed switch posteriors
    pub posteriors: DMatrix<f64>,
    /// `[t][k]` ≈ p(h_t | s_t = k, v_{1:T})
    pub conditionals: Vec<Vec<Gaussian>>,
    /// `[t]` for t in 0..T−1: pairwise statistics linking t and t+1
    pub pairs: Vec<PairStats>,
}

#[derive(Clone, Debug)]
pub(crate) struct PairStats {
    /// `(j, k)` ↦ p(s_t = j, s_{t+1} = k | v_{1:T})
    pub joint: DMatrix<f64>,
    /// `[j*S + k]` ≈ p(h_t | s_t = j, s_{t+1} = k, v_{1:T})
    pub branch: Vec<Gaussian>,
    /// `[j*S + k]` ≈ Cov(h_{t+1}, h_t | s_t = j, s_{t+1} = k, v_{1:T})
    pub cross: Vec<DMatrix<f64>>,
}

pub(crate) fn gpb_smooth_full(p: &SldsParams, fr: &SldsFilterResult) -> Result<GpbSmoothed> {
    let t_len = fr.beliefs.len();
    if t_len == 0 {
        return Err(Error::EmptySequence);
    }
    let s = p.num_states();
    let log_trans = p.log_trans();
    let last = &fr.beliefs[t_len - 1];
    let mut log_post = vec![Vec::new(); t_len];
    let mut conditionals = vec![Vec::new(); t_len];
    let mut pairs: Vec<Option<PairStats>> = vec![None; t_len - 1];
    log_post[t_len - 1] = last.log_weights.clone();
    conditionals[t_len - 1] = last.conditionals.clone();

    for t in (0..t_len - 1).rev() {
        let filt = &fr.beliefs[t];
        let mut branch = Vec::with_capacity(s * s);
        let mut cross = Vec::with_capacity(s * s);
        for j in 0..s {
            for (k, st) in p.states.iter().enumerate() {
                let pred = lds::predict_step(st, &filt.conditionals[j])?;
                let (g, c) = lds::rts_step(st.transition(), &filt.conditionals[j], &pred, &conditionals[t + 1][k])?;
                branch.push(g);
                cross.push(c);
            }
        }
        // ln p(s_t=j, s_{t+1}=k | v_{1:T}) = ln U(j|k) + ln p(s_{t+1}=k | v_{1:T})
        let mut log_joint = vec![f64::NEG_INFINITY; s * s];
        for k in 0..s {
            let col: Vec<f64> = (0..s).map(|j| filt.log_weights[j] + log_trans[(j, k)]).collect();
            let norm = log_sum_exp(&col);
            if norm == f64::NEG_INFINITY || log_post[t + 1][k] == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..s {
                log_joint[j * s + k] = col[j] - norm + log_post[t + 1][k];
            }
        }
        prune_and_normalise(&mut log_joint)?;

        let mut lp = Vec::with_capacity(s);
        let mut conds = Vec::with_capacity(s);
        for j in 0..s {
            let row = &log_joint[j * s..(j + 1) * s];
            let lw = log_sum_exp(row);
            lp.push(lw);
            if lw == f64::NEG_INFINITY {
                conds.push(filt.conditionals[j].clone());
                continue;
            }
            let parts: Vec<(f64, &Gaussian)> = (0..s).map(|k| ((row[k] - lw).exp(), &branch[j * s + k])).collect();
            conds.push(collapse_weighted(&parts, p.state_dim()));
        }
        log_post[t] = lp;
        conditionals[t] = conds;
        pairs[t] = Some(PairStats {
            joint: DMatrix::from_fn(s, s, |j, k| log_joint[j * s + k].exp()),
            branch,
            cross,
        });
    }
    Ok(GpbSmoothed {
        posteriors: DMatrix::from_fn(t_len, s, |t, k| log_post[t][k].exp()),
        conditionals,
        pairs: pairs.into_iter().map(|p| p.expect("filled by backward pass")).collect(),
    })
}

/// GPB2 smoother; returns the `T×S` smoothed switch posteriors.
pub fn gpb_smooth(p: &SldsParams, fr: &SldsFilterResult) -> Result<DMatrix<f64>> {
    Ok(gpb_smooth_full(p, fr)?.posteriors)
}

/// Running `ln Σ exp(xᵢ)`.
#[derive(Clone, Copy, Debug)]
struct LogAccumulator {
    max: f64,
    sum: f64,
}

impl LogAccumulator {
    const EMPTY: Self = Self { max: f64::NEG_INFINITY, sum: 0.0 };

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

struct Enumeration {
    filtered: DMatrix<f64>,
    smoothed: DMatrix<f64>,
    log_likelihood: f64,
}

fn enumerate(p: &SldsParams, obs: &[DVector<f64>]) -> Result<Enumeration> {
    check_obs(p, obs)?;
    let s = p.num_states();
    let t_len = obs.len();
    let paths = (s as f64).powi(t_len as i32);
    if paths > ENUMERATION_LIMIT as f64 {
        return Err(Error::TooLarge { paths, limit: ENUMERATION_LIMIT });
    }
    struct Walk<'a> {
        p: &'a SldsParams,
        obs: &'a [DVector<f64>],
        log_trans: DMatrix<f64>,
        prefix: Vec<Vec<LogAccumulator>>,
        full: Vec<Vec<LogAccumulator>>,
        total: LogAccumulator,
        path: Vec<usize>,
    }
    impl Walk<'_> {
        fn visit(&mut self, t: usize, prev: Option<(usize, &Gaussian)>, log_joint: f64) -> Result<()> {
            let s = self.p.num_states();
            for k in 0..s {
                let st = &self.p.states[k];
                let (pred, log_switch) = match prev {
                    None => (st.prior().clone(), self.p.switch_prior[k].ln()),
                    Some((i, belief)) => (lds::predict_step(st, belief)?, self.log_trans[(i, k)]),
                };
                let (post, ll) = lds::update_step(st, &pred, &self.obs[t])?;
                let lj = log_joint + log_switch + ll;
                self.prefix[t][k].add(lj);
                self.path.push(k);
                if t + 1 == self.obs.len() {
                    self.total.add(lj);
                    for (u, &sk) in self.path.iter().enumerate() {
                        self.full[u][sk].add(lj);
                    }
                } else {
                    self.visit(t + 1, Some((k, &post)), lj)?;
                }
                self.path.pop();
            }
            Ok(())
        }
    }
    let mut walk = Walk {
        p,
        obs,
        log_trans: p.log_trans(),
        prefix: vec![vec![LogAccumulator::EMPTY; s]; t_len],
        full: vec![vec![LogAccumulator::EMPTY; s]; t_len],
        total: LogAccumulator::EMPTY,
        path: Vec::with_capacity(t_len),
    };
    walk.visit(0, None, 0.0)?;
    let total = walk.total.value();
    if !total.is_finite() {
        return Err(Error::AllWeightsDead);
    }
    let normalise = |acc: &[Vec<LogAccumulator>]| {
        DMatrix::from_fn(t_len, s, |t, k| {
            let row: Vec<f64> = acc[t].iter().map(LogAccumulator::value).collect();
            (row[k] - log_sum_exp(&row)).exp()
        })
    };
    Ok(Enumeration {
        filtered: normalise(&walk.prefix),
        smoothed: normalise(&walk.full),
        log_likelihood: total,
    })
}

/// Exact filtered switch posteriors and `ln p(v_{1:T})` by walking all Sᵀ
/// switch paths with a Kalman filter along each.
pub fn exact_enumeration_filter(p: &SldsParams, obs: &[DVector<f64>]) -> Result<(DMatrix<f64>, f64)> {
    let e = enumerate(p, obs)?;
    Ok((e.filtered, e.log_likelihood))
}

/// Exact smoothed switch posteriors `p(s_t | v_{1:T})` by enumeration.
pub fn exact_enumeration_smooth(p: &SldsParams, obs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    Ok(enumerate(p, obs)?.smoothed)
}

/// Approximate E-step of one sequence: per-state weighted statistics,
/// expected transition counts, posterior over s₁ and the GPB log-likelihood.
struct SeqStats {
    per_state: Vec<SuffStats>,
    trans_counts: DMatrix<f64>,
    first: DVector<f64>,
    log_likelihood: f64,
}

fn sequence_stats(p: &SldsParams, obs: &[DVector<f64>]) -> Result<SeqStats> {
    let s = p.num_states();
    let (n, m) = (p.state_dim(), p.obs_dim());
    let fr = gpb_filter(p, obs)?;
    let sm = gpb_smooth_full(p, &fr)?;
    let mut per_state = vec![SuffStats::zeros(n, m); s];
    for (k, stats) in per_state.iter_mut().enumerate() {
        let w0 = sm.posteriors[(0, k)];
        if w0 > 0.0 {
            stats.add_initial(w0, &sm.conditionals[0][k]);
        }
        for (t, v) in obs.iter().enumerate() {
            let w = sm.posteriors[(t, k)];
            if w > 0.0 {
                stats.add_emission(w, v, &sm.conditionals[t][k]);
            }
        }
    }
    let mut trans_counts = DMatrix::zeros(s, s);
    for (t, pair) in sm.pairs.iter().enumerate() {
        trans_counts += &pair.joint;
        for k in 0..s {
            let cur = &sm.conditionals[t + 1][k];
            let cur_cur = second_moment(cur);
            for j in 0..s {
                let w = pair.joint[(j, k)];
                if w <= 0.0 {
                    continue;
                }
                let prev = &pair.branch[j * s + k];
                per_state[k].add_transition(
                    w,
                    &second_moment(prev),
                    &cur_cur,
                    &cross_moment(&pair.cross[j * s + k], cur.mean(), prev.mean()),
                );
            }
        }
    }
    Ok(SeqStats {
        per_state,
        trans_counts,
        first: sm.posteriors.row(0).transpose(),
        log_likelihood: fr.log_likelihood,
    })
}

/// Approximate EM with GPB2 expectations.
///
/// Re-estimates the switch transition matrix, the switch prior and every
/// state's noise covariances and prior (plus A and B when
/// `config.learn_matrices`). The E-step is approximate, so the likelihood
/// need not increase; the best-scoring iterate is returned together with the
/// per-iteration GPB log-likelihoods.
pub fn em_fit(seqs: &[Vec<DVector<f64>>], init: &SldsParams, config: &EmConfig) -> Result<(SldsParams, Vec<f64>)> {
    lds::validate_sequences(seqs, init.obs_dim())?;
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("EM needs max_iters >= 1".into()));
    }
    let s = init.num_states();
    let mut params = init.clone();
    let mut history: Vec<f64> = Vec::with_capacity(config.max_iters + 1);
    let mut iterates: Vec<SldsParams> = Vec::with_capacity(config.max_iters + 1);

    let e_step = |p: &SldsParams| -> Result<Vec<SeqStats>> {
        seqs.par_iter().map(|obs| sequence_stats(p, obs)).collect()
    };

    let mut converged = false;
    for _ in 0..config.max_iters {
        let stats = e_step(&params)?;
        let ll: f64 = stats.iter().map(|st| st.log_likelihood).sum();
        converged = history.last().is_some_and(|&prev| ll - prev < config.tol * prev.abs());
        history.push(ll);
        iterates.push(params.clone());
        if converged {
            break;
        }

        let mut per_state = vec![SuffStats::zeros(params.state_dim(), params.obs_dim()); s];
        let mut counts = DMatrix::zeros(s, s);
        let mut first = DVector::zeros(s);
        for st in &stats {
            for (acc, x) in per_state.iter_mut().zip(&st.per_state) {
                acc.merge(x);
            }
            counts += &st.trans_counts;
            first += &st.first;
        }
        let states = params
            .states
            .iter()
            .zip(&per_state)
            .map(|(cur, stats)| lds::m_step(cur, stats, config.learn_matrices))
            .collect::<Result<Vec<_>>>()?;
        let mut trans = params.switch_trans.clone();
        for i in 0..s {
            let total: f64 = counts.row(i).sum();
            if total > 0.0 {
                for j in 0..s {
                    trans[(i, j)] = counts[(i, j)] / total;
                }
            }
        }
        let prior = &first / first.sum();
        params = SldsParams::new(params.names.clone(), states, renormalise_rows(trans), renormalise(prior))?;
    }
    if !converged {
        let ll: f64 = e_step(&params)?.iter().map(|st| st.log_likelihood).sum();
        history.push(ll);
        iterates.push(params);
    }
    let best = best_iterate(&history);
    Ok((iterates.swap_remove(best), history))
}

/// Index of the best log-likelihood, preferring later iterates among those
/// within rounding distance of the maximum.
fn best_iterate(history: &[f64]) -> usize {
    let max = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * max.abs().max(1.0);
    history.iter().rposition(|&l| l >= max - slack).unwrap_or(history.len() - 1)
}

fn renormalise(v: DVector<f64>) -> DVector<f64> {
    let sum = v.sum();
    v / sum
}

fn renormalise_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut r in m.row_iter_mut() {
        let sum = r.sum();
        r /= sum;
    }
    m
}

/// The switch transition matrix with `stay` on the diagonal and the rest
/// spread evenly over the other states.
pub fn sticky_transition(num_states: usize, stay: f64) -> Result<DMatrix<f64>> {
    if !(stay > 0.0 && stay < 1.0) {
        return Err(Error::InvalidParameter(format!("stay probability must be in (0, 1), got {stay}")));
    }
    if num_states == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0));
    }
    let off = (1.0 - stay) / (num_states - 1) as f64;
    Ok(DMatrix::from_fn(num_states, num_states, |i, j| if i == j { stay } else { off }))
}

/// A labelled observation sequence.
pub type LabelledObs = (Vec<DVector<f64>>, usize);

/// Fits one LDS per class by exact EM on that class's sequences only and
/// assembles them into an SLDS with a sticky switch matrix and a uniform
/// switch prior. Also returns each class's EM log-likelihood history.
pub fn train_per_class(
    train_set: &[LabelledObs],
    class_names: &[String],
    template: &LdsParams,
    switch_stay_prob: f64,
    em: &EmConfig,
) -> Result<(SldsParams, Vec<Vec<f64>>)> {
    let s = class_names.len();
    let trans = sticky_transition(s, switch_stay_prob)?;
    if let Some((_, bad)) = train_set.iter().find(|(_, label)| *label >= s) {
        return Err(Error::InvalidLabel { label: *bad, classes: s });
    }
    let fitted = (0..s)
        .into_par_iter()
        .map(|class| {
            let seqs: Vec<Vec<DVector<f64>>> = train_set
                .iter()
                .filter(|(_, label)| *label == class)
                .map(|(obs, _)| obs.clone())
                .collect();
            if seqs.is_empty() {
                return Err(Error::MissingClass(class));
            }
            lds::em_fit(&seqs, template, em)
        })
        .collect::<Result<Vec<_>>>()?;
    let (states, histories): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let params = SldsParams::new(
        class_names.to_vec(),
        states,
        trans,
        DVector::from_element(s, 1.0 / s as f64),
    )?;
    Ok((params, histories))
}

/// GPB2-filters `obs` and aggregates the filtered switch posteriors.
pub fn classify(p: &SldsParams, obs: &[DVector<f64>], rule: ClassificationRule) -> Result<(usize, DMatrix<f64>)> {
    let fr = gpb_filter(p, obs)?;
    Ok((rule.aggregate(&fr.switch_posteriors), fr.switch_posteriors))
}

fn draw_categorical<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        if p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Ancestral sample of `(switch path, latents, observations)`.
#[allow(clippy::type_complexity)]
pub fn sample(p: &SldsParams, len: usize, seed: u64) -> Result<(Vec<usize>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if len == 0 {
        return Err(Error::InvalidParameter("sample length must be at least 1".into()));
    }
    let mut rng = seed::rng(seed);
    let priors: Vec<_> = p.states.iter().map(|st| GaussianSampler::new(st.prior())).collect();
    let process: Vec<_> = p.states.iter().map(|st| GaussianSampler::noise(st.transition_noise())).collect();
    let measurement: Vec<_> = p.states.iter().map(|st| GaussianSampler::noise(st.emission_noise())).collect();
    let mut path = Vec::with_capacity(len);
    let mut latents: Vec<DVector<f64>> = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    for t in 0..len {
        let k = if t == 0 {
            draw_categorical(&mut rng, p.switch_prior.iter().copied())
        } else {
            draw_categorical(&mut rng, p.switch_trans.row(path[t - 1]).iter().copied())
        };
        let st = &p.states[k];
        let h = if t == 0 {
            priors[k].sample(&mut rng)
        } else {
            st.transition() * &latents[t - 1] + process[k].sample(&mut rng)
        };
        obs.push(st.emission() * &h + measurement[k].sample(&mut rng));
        latents.push(h);
        path.push(k);
    }
    Ok((path, latents, obs))
}
