#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use switchbench::lds::{self, LdsParams};
use switchbench::rnn::{self, LstmStack};
use switchbench::slds::{self, SldsParams};
use switchbench::{seed, Gaussian};

pub fn rng(seed: u64, tag: &str) -> ChaCha8Rng {
    seed::component_rng(seed, tag)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let l = uniform_matrix(rng, d, d, -1.0, 1.0);
    &l * l.transpose() * 0.5 + DMatrix::identity(d, d) * floor
}

/// Random stable LDS with spectral radius below one.
pub fn random_lds(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LdsParams {
    let mut a = uniform_matrix(rng, n, n, -1.0, 1.0);
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius > 0.95 {
        a *= 0.95 / radius;
    }
    let b = uniform_matrix(rng, m, n, -1.0, 1.0);
    let q = random_spd(rng, n, 0.1);
    let r = random_spd(rng, m, 0.1);
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let prior = Gaussian::new(mean, random_spd(rng, n, 0.2)).unwrap();
    LdsParams::new(a, b, q, r, prior).unwrap()
}

/// Joint Gaussian over `[h_1..h_T, v_1..v_T]` built from the model equations.
pub fn joint_gaussian(p: &LdsParams, len: usize) -> Gaussian {
    let (n, m) = (p.state_dim(), p.obs_dim());
    let a = p.transition();
    let b = p.emission();
    let mut means = vec![p.prior().mean().clone()];
    let mut covs = vec![p.prior().cov().clone()];
    for t in 1..len {
        means.push(a * &means[t - 1]);
        covs.push(a * &covs[t - 1] * a.transpose() + p.transition_noise());
    }
    // cross[t][s] = Cov(h_t, h_s)
    let cross = |t: usize, s: usize| -> DMatrix<f64> {
        if t >= s {
            a.pow((t - s) as u32) * &covs[s]
        } else {
            (a.pow((s - t) as u32) * &covs[t]).transpose()
        }
    };
    let d = len * (n + m);
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    let h_at = |t: usize| t * n;
    let v_at = |t: usize| len * n + t * m;
    for t in 0..len {
        mean.rows_mut(h_at(t), n).copy_from(&means[t]);
        mean.rows_mut(v_at(t), m).copy_from(&(b * &means[t]));
        for s in 0..len {
            let c = cross(t, s);
            cov.view_mut((h_at(t), h_at(s)), (n, n)).copy_from(&c);
            cov.view_mut((v_at(t), h_at(s)), (m, n)).copy_from(&(b * &c));
            cov.view_mut((h_at(t), v_at(s)), (n, m)).copy_from(&(&c * b.transpose()));
            let mut vv = b * &c * b.transpose();
            if t == s {
                vv += p.emission_noise();
            }
            cov.view_mut((v_at(t), v_at(s)), (m, m)).copy_from(&vv);
        }
    }
    Gaussian::new(mean, cov).unwrap()
}

pub struct LdsOracle {
    pub filtered: Vec<Gaussian>,
    pub smoothed: Vec<Gaussian>,
    /// Cov(h_{t+1}, h_t | v_{1:T})
    pub cross_cov: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Filtered and smoothed marginals by conditioning the joint directly.
pub fn lds_oracle(p: &LdsParams, obs: &[DVector<f64>]) -> LdsOracle {
    let (n, m) = (p.state_dim(), p.obs_dim());
    let len = obs.len();
    let joint = joint_gaussian(p, len);
    let v_idx = |upto: usize| -> Vec<usize> { (0..upto * m).map(|i| len * n + i).collect() };
    let stacked = |upto: usize| DVector::from_iterator(upto * m, obs[..upto].iter().flat_map(|v| v.iter().copied()));
    let h_idx = |t: usize| -> Vec<usize> { (t * n..(t + 1) * n).collect() };

    let mut filtered = Vec::with_capacity(len);
    for t in 0..len {
        let mut keep = h_idx(t);
        keep.extend(v_idx(t + 1));
        let sub = joint.marginal(&keep).unwrap();
        let observed: Vec<usize> = (n..n + (t + 1) * m).collect();
        filtered.push(sub.condition(&observed, &stacked(t + 1)).unwrap());
    }
    let all_h: Vec<usize> = (0..len * n).collect();
    let mut keep = all_h.clone();
    keep.extend(v_idx(len));
    let observed: Vec<usize> = (len * n..len * (n + m)).collect();
    let posterior = joint.marginal(&keep).unwrap().condition(&observed, &stacked(len)).unwrap();
    let smoothed = (0..len).map(|t| posterior.marginal(&h_idx(t)).unwrap()).collect();
    let cross_cov = (0..len.saturating_sub(1))
        .map(|t| posterior.cov().view(((t + 1) * n, t * n), (n, n)).into_owned())
        .collect();
    let evidence = joint.marginal(&v_idx(len)).unwrap();
    let log_likelihood = evidence.log_density(&stacked(len)).unwrap();
    LdsOracle { filtered, smoothed, cross_cov, log_likelihood }
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn gaussian_gap(a: &Gaussian, b: &Gaussian) -> f64 {
    let dm = (a.mean() - b.mean()).abs().max();
    dm.max(max_abs(a.cov(), b.cov()))
}

/// Worst disagreement between the Kalman filter/smoother and the oracle on
/// one random system.
pub fn kalman_oracle_gap(case: u64) -> f64 {
    let mut r = rng(case, "oracle/lds");
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=2);
    let len = r.random_range(1..=6);
    let p = random_lds(&mut r, n, m);
    let (_, obs) = lds::sample(&p, len, seed::derive_seed(case, "oracle/lds/sample")).unwrap();
    let fr = lds::filter(&p, &obs).unwrap();
    let sm = lds::rts_smooth(&p, &fr).unwrap();
    let oracle = lds_oracle(&p, &obs);
    let mut gap: f64 = (fr.log_likelihood - oracle.log_likelihood).abs();
    for t in 0..len {
        gap = gap.max(gaussian_gap(&fr.filtered[t], &oracle.filtered[t]));
        gap = gap.max(gaussian_gap(&sm.marginals[t], &oracle.smoothed[t]));
    }
    for (c, o) in sm.cross_cov.iter().zip(&oracle.cross_cov) {
        gap = gap.max(max_abs(c, o));
    }
    gap
}

fn random_stochastic(rng: &mut ChaCha8Rng, s: usize) -> DVector<f64> {
    let w = DVector::from_fn(s, |_, _| rng.random_range(0.05..1.0));
    let total = w.sum();
    w / total
}

/// Random scalar SLDS with `s` switching states.
pub fn random_scalar_slds(rng: &mut ChaCha8Rng, s: usize) -> SldsParams {
    let states = (0..s)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let a = DMatrix::from_element(1, 1, sign * rng.random_range(0.3..1.0));
            let b = DMatrix::from_element(1, 1, rng.random_range(0.5..1.5));
            let q = DMatrix::from_element(1, 1, rng.random_range(0.05..1.0));
            let r = DMatrix::from_element(1, 1, rng.random_range(0.05..1.0));
            let prior = Gaussian::new(
                DVector::from_element(1, rng.random_range(-2.0..2.0)),
                DMatrix::from_element(1, 1, rng.random_range(0.2..2.0)),
            )
            .unwrap();
            LdsParams::new(a, b, q, r, prior).unwrap()
        })
        .collect();
    let mut trans = DMatrix::zeros(s, s);
    for i in 0..s {
        trans.set_row(i, &random_stochastic(rng, s).transpose());
    }
    let names = (0..s).map(|k| format!("s{k}")).collect();
    SldsParams::new(names, states, trans, random_stochastic(rng, s)).unwrap()
}

pub struct GpbGap {
    pub total_variation: f64,
    pub log_likelihood: f64,
}

/// Worst per-step total variation and log-likelihood gap between GPB2 and
/// exact enumeration on one random system.
pub fn gpb_oracle_gap(case: u64) -> GpbGap {
    let mut r = rng(case, "oracle/slds");
    let s = r.random_range(2..=3);
    let p = random_scalar_slds(&mut r, s);
    let (_, _, obs) = slds::sample(&p, 6, seed::derive_seed(case, "oracle/slds/sample")).unwrap();
    let fr = slds::gpb_filter(&p, &obs).unwrap();
    let (exact, exact_ll) = slds::exact_enumeration_filter(&p, &obs).unwrap();
    let mut tv: f64 = 0.0;
    for t in 0..obs.len() {
        let d: f64 = (0..s).map(|k| (fr.switch_posteriors[(t, k)] - exact[(t, k)]).abs()).sum();
        tv = tv.max(0.5 * d);
    }
    GpbGap { total_variation: tv, log_likelihood: (fr.log_likelihood - exact_ll).abs() }
}

/// Scalar LDS `h_t = a h_{t−1} + η`, `v_t = h_t + ε`.
pub fn scalar_lds(a: f64, q: f64, r: f64, mu0: f64, p0: f64) -> LdsParams {
    let one = |x: f64| DMatrix::from_element(1, 1, x);
    let prior = Gaussian::new(DVector::from_element(1, mu0), one(p0)).unwrap();
    LdsParams::new(one(a), one(1.0), one(q), one(r), prior).unwrap()
}

/// EM log-likelihood trace and refitted A from a scalar generate-and-refit
/// run.
pub fn em_refit(case: u64) -> (Vec<f64>, f64) {
    let truth = scalar_lds(0.9, 0.1, 0.1, 0.0, 1.0);
    let seqs: Vec<_> = (0..20)
        .map(|i| lds::sample(&truth, 100, seed::derive_seed(case, &format!("oracle/em/{i}"))).unwrap().1)
        .collect();
    let init = scalar_lds(0.5, 0.3, 0.3, 0.0, 1.0);
    let cfg = lds::EmConfig { max_iters: 200, tol: 1e-9, learn_matrices: true };
    let (fit, trace) = lds::em_fit(&seqs, &init, &cfg).unwrap();
    // A and B are only identified up to scale; A itself is invariant.
    (trace, fit.transition()[(0, 0)])
}

/// Largest drop between consecutive log-likelihoods.
pub fn worst_decrease(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

/// Random inputs and per-step labels for a gradient check.
pub fn gradcheck_instance(case: u64) -> (LstmStack, Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(case, "oracle/grad");
    let hidden = r.random_range(1..=4);
    let len = r.random_range(1..=5);
    let classes = r.random_range(2..=4);
    let input = 2;
    let mut stack = LstmStack::init(input, hidden, 3, classes, seed::derive_seed(case, "oracle/grad/init"));
    // Move the forget bias off its default so every gate has generic slopes.
    for buf in stack.buffers_mut() {
        for v in buf.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let xs = (0..len).map(|_| (0..input).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let labels = (0..len).map(|_| r.random_range(0..classes)).collect();
    (stack, xs, labels)
}

/// Denominator floor of the relative error for near-zero gradients.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Worst relative error between analytic BPTT gradients and central
/// differences over every parameter.
pub fn gradcheck_error(case: u64) -> f64 {
    let (stack, xs, labels) = gradcheck_instance(case);
    let (probs, cache) = rnn::stack_forward(&stack, &xs).unwrap();
    let grad = rnn::backward(&stack, &cache, &probs, &labels).unwrap();
    let analytic: Vec<f64> = grad.buffers().iter().flat_map(|b| b.iter().copied()).collect();
    let loss_of = |m: &LstmStack| rnn::loss(&rnn::stack_forward(m, &xs).unwrap().0, &labels).unwrap();
    let eps = 1e-4;
    let mut probe = stack.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let nbufs = probe.buffers().len();
    for b in 0..nbufs {
        let len = probe.buffers()[b].len();
        for i in 0..len {
            let orig = probe.buffers()[b][i];
            probe.buffers_mut()[b][i] = orig + eps;
            let up = loss_of(&probe);
            probe.buffers_mut()[b][i] = orig - eps;
            let down = loss_of(&probe);
            probe.buffers_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    worst
}

/// Largest deviation of the metrics from the hand-computed 2×2 example and
/// of normalised rows/columns from unit sums on random counts.
pub fn metrics_deviation(cases: u64) -> f64 {
    use switchbench::eval::{metrics, normalized, Axis, ConfusionMatrix};
    let m = metrics(&ConfusionMatrix::from_counts(vec![vec![2, 2], vec![0, 4]])).unwrap();
    let expected = [0.75, 1.0, 2.0 / 3.0, 0.5, 1.0];
    let got = [m.accuracy, m.precision[0].unwrap(), m.precision[1].unwrap(), m.recall[0].unwrap(), m.recall[1].unwrap()];
    let mut worst = expected.iter().zip(got).map(|(e, g)| (e - g).abs()).fold(0.0, f64::max);
    for case in 0..cases {
        let mut r = rng(case, "oracle/metrics");
        let c = r.random_range(2..=6);
        let counts: Vec<Vec<u64>> = (0..c).map(|_| (0..c).map(|_| r.random_range(1..50)).collect()).collect();
        let cm = ConfusionMatrix::from_counts(counts);
        let rows = normalized(&cm, Axis::Rows);
        let cols = normalized(&cm, Axis::Columns);
        for i in 0..c {
            let rs: f64 = rows[i].iter().map(|v| v.unwrap()).sum();
            let cs: f64 = (0..c).map(|j| cols[j][i].unwrap()).sum();
            worst = worst.max((rs - 1.0).abs()).max((cs - 1.0).abs());
        }
    }
    worst
}

/// Worst gap between a one-state SLDS and its LDS on filtering, smoothing
/// and likelihood.
pub fn reduction_gap(case: u64) -> f64 {
    let mut r = rng(case, "oracle/reduction");
    let (n, m) = (r.random_range(1..=4), r.random_range(1..=2));
    let p = random_lds(&mut r, n, m);
    let (_, obs) = lds::sample(&p, 8, seed::derive_seed(case, "oracle/reduction/sample")).unwrap();
    let fr = lds::filter(&p, &obs).unwrap();
    let single = SldsParams::single(p);
    let gf = slds::gpb_filter(&single, &obs).unwrap();
    let gs = slds::gpb_smooth(&single, &gf).unwrap();
    let mut gap: f64 = (gf.log_likelihood - fr.log_likelihood).abs();
    for (b, f) in gf.beliefs.iter().zip(&fr.filtered) {
        gap = gap.max(gaussian_gap(&b.conditionals[0], f)).max(b.log_weights[0].abs());
    }
    gs.iter().fold(gap, |g, w| g.max((w - 1.0).abs()))
}

/// Whether a Π = identity system with a one-hot prior returns the pinned
/// class with certainty under every rule.
pub fn one_hot_pins(case: u64) -> bool {
    use switchbench::classify::ClassificationRule;
    let mut r = rng(case, "oracle/onehot");
    let s = 3;
    let base = random_scalar_slds(&mut r, s);
    let k = r.random_range(0..s);
    let mut prior = DVector::zeros(s);
    prior[k] = 1.0;
    let p = SldsParams::new(base.names().to_vec(), base.states().to_vec(), DMatrix::identity(s, s), prior).unwrap();
    let (_, _, obs) = slds::sample(&p, 6, case).unwrap();
    ClassificationRule::ALL.iter().all(|&rule| {
        let (class, trace) = slds::classify(&p, &obs, rule).unwrap();
        class == k && trace.column(k).iter().all(|w| (w - 1.0).abs() < 1e-12)
    })
}
