//! Primal and dual price bounds for a learned (or exact) Q-function.
//!
//! The lower bound plays the greedy policy on fresh paths. The upper bound
//! builds a martingale along each outer path from nested inner simulations and
//! takes the pathwise maximum of payoff minus martingale; for several rights
//! the maximum runs over admissible exercise tuples and carries the waiting
//! period correction terms, solved by a small dynamic program.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::process::{Process, QFunction};
use crate::report::BoundsReport;
use crate::rng::{inner_index, substream, Purpose};
use crate::{Error, Result};

/// How head values are compared when deciding to exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseRule {
    /// Exercise only if the exercise head is strictly larger.
    Strict,
    /// Exercise on ties too.
    NonStrict,
}

impl ExerciseRule {
    /// Strict for a single right, non-strict for swing contracts.
    pub fn for_rights(n: usize) -> Self {
        if n == 1 {
            Self::Strict
        } else {
            Self::NonStrict
        }
    }

    pub fn exercises(self, heads: [f64; 2]) -> bool {
        match self {
            Self::Strict => heads[1] > heads[0],
            Self::NonStrict => heads[1] >= heads[0],
        }
    }
}

/// Heads with the known boundary values imposed: nothing follows maturity, so
/// the continue head is 0 at `t = N`, and the exercise head is the bare payoff
/// when no right would remain or the next decision date is past `N`.
fn boundary_heads<P: Process>(process: &P, t: usize, state: &P::State, nu: usize, delta: usize, raw: [f64; 2]) -> [f64; 2] {
    let n_steps = process.steps();
    let cont = if t >= n_steps { 0.0 } else { raw[0] };
    let ex = if nu == 1 || t + delta > n_steps { process.payoff(t, state) } else { raw[1] };
    [cont, ex]
}

fn heads_batch<P, Q>(q: &Q, process: &P, t: usize, states: &[P::State], nu: usize, delta: usize) -> Vec<[f64; 2]>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    if states.is_empty() {
        return Vec::new();
    }
    q.q_batch(process, t, states, nu)
        .into_iter()
        .zip(states)
        .map(|(raw, s)| boundary_heads(process, t, s, nu, delta, raw))
        .collect()
}

/// Snell envelope estimate `y^ν(t, x) = max(g + q^{ν-1}_δ, q^ν)` from the heads;
/// zero for `ν = 0` or `t > N`.
pub fn snell_from_q<P, Q>(q: &Q, process: &P, t: usize, state: &P::State, nu: usize, delta: usize) -> f64
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    snell_batch(q, process, t, std::slice::from_ref(state), nu, delta)[0]
}

pub fn snell_batch<P, Q>(q: &Q, process: &P, t: usize, states: &[P::State], nu: usize, delta: usize) -> Vec<f64>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    if nu == 0 || t > process.steps() {
        return vec![0.0; states.len()];
    }
    heads_batch(q, process, t, states, nu, delta).into_iter().map(|h| h[0].max(h[1])).collect()
}

/// Greedy exercise dates along one path over `0..=N`: with `ν` rights left at
/// an admissible date, exercise when the rule accepts the heads, then wait
/// `delta` steps.
pub fn greedy_exercise_times<P, Q>(
    q: &Q,
    process: &P,
    path: &[P::State],
    n: usize,
    delta: usize,
    rule: ExerciseRule,
) -> Vec<usize>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    policy_on_paths(q, process, std::slice::from_ref(&path.to_vec()), n, delta, rule).remove(0)
}

/// [`greedy_exercise_times`] for many paths with one batched evaluation per
/// `(t, ν)`.
pub fn policy_on_paths<P, Q>(
    q: &Q,
    process: &P,
    paths: &[Vec<P::State>],
    n: usize,
    delta: usize,
    rule: ExerciseRule,
) -> Vec<Vec<usize>>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    let n_steps = process.steps();
    // decide[ν - 1][t][path]
    let decide: Vec<Vec<Vec<bool>>> = (1..=n)
        .map(|nu| {
            (0..=n_steps)
                .map(|t| {
                    let states: Vec<P::State> = paths.iter().map(|p| p[t].clone()).collect();
                    heads_batch(q, process, t, &states, nu, delta).into_iter().map(|h| rule.exercises(h)).collect()
                })
                .collect()
        })
        .collect();
    (0..paths.len())
        .map(|p| {
            let mut times = Vec::new();
            let (mut t, mut nu) = (0, n);
            while nu > 0 && t <= n_steps {
                if decide[nu - 1][t][p] {
                    times.push(t);
                    nu -= 1;
                    t += delta;
                } else {
                    t += 1;
                }
            }
            times
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub l_hat: f64,
    /// Sample standard deviation of the per-path payoff sums.
    pub sigma_l: f64,
    pub payoffs: Vec<f64>,
    pub exercise_times: Vec<Vec<usize>>,
    pub m_l: usize,
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

const POLICY_BLOCK: usize = 1024;

/// Mean over `m_l` fresh paths of the payoffs collected by the greedy policy.
/// Path `p` comes from substream `(seed, OuterPath, p)`.
pub fn lower_bound<P, Q>(
    q: &Q,
    process: &P,
    n: usize,
    delta: usize,
    rule: ExerciseRule,
    m_l: usize,
    seed: u64,
) -> Result<PolicyEvaluation>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    if m_l < 2 {
        return Err(Error::Config(format!("lower bound needs at least 2 paths, got {m_l}")));
    }
    check_rights(n, delta)?;
    let blocks: Vec<(Vec<f64>, Vec<Vec<usize>>)> = (0..m_l.div_ceil(POLICY_BLOCK))
        .into_par_iter()
        .map(|b| {
            let range = b * POLICY_BLOCK..((b + 1) * POLICY_BLOCK).min(m_l);
            let paths: Vec<Vec<P::State>> = range
                .map(|p| process.sample_path(&mut substream(seed, Purpose::OuterPath, p as u64)))
                .collect();
            let times = policy_on_paths(q, process, &paths, n, delta, rule);
            let pay = paths
                .iter()
                .zip(&times)
                .map(|(path, ts)| ts.iter().map(|&t| process.payoff(t, &path[t])).sum())
                .collect();
            (pay, times)
        })
        .collect();
    let mut payoffs = Vec::with_capacity(m_l);
    let mut exercise_times = Vec::with_capacity(m_l);
    for (p, t) in blocks {
        payoffs.extend(p);
        exercise_times.extend(t);
    }
    let (l_hat, sigma_l) = mean_and_std(&payoffs);
    Ok(PolicyEvaluation { l_hat, sigma_l, payoffs, exercise_times, m_l })
}

fn check_rights(n: usize, delta: usize) -> Result<()> {
    if n == 0 || delta == 0 {
        return Err(Error::Config("need n >= 1 and delta >= 1".into()));
    }
    Ok(())
}

/// Source of conditional path segments for nested estimates.
pub trait Continuations<P: Process>: Sync {
    /// Weighted segments `start, X_{t+1}, ..., X_{t+len}` (cut at `N`) whose
    /// weights sum to 1 and represent the law of the continuation.
    fn continuations(
        &self,
        process: &P,
        t: usize,
        start: &P::State,
        len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Vec<P::State>, f64)>;
}

/// Plain nested Monte Carlo with `inner` equally weighted paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NestedMc {
    pub inner: usize,
}

impl<P: Process> Continuations<P> for NestedMc {
    fn continuations(
        &self,
        process: &P,
        t: usize,
        start: &P::State,
        len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Vec<P::State>, f64)> {
        let w = 1.0 / self.inner as f64;
        (0..self.inner).map(|_| (process.continuation(t, start, len, rng), w)).collect()
    }
}

/// Weighted mean of `y^ν` at offset `h` of the segments, for `ν = 1..=n`.
/// Zero when `t + h > N`.
fn segment_snell<P, Q>(
    q: &Q,
    process: &P,
    t: usize,
    segs: &[(Vec<P::State>, f64)],
    h: usize,
    n: usize,
    delta: usize,
) -> Vec<f64>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    if t + h > process.steps() {
        return vec![0.0; n];
    }
    let states: Vec<P::State> = segs.iter().map(|(s, _)| s[h].clone()).collect();
    (1..=n)
        .map(|nu| {
            let ys = snell_batch(q, process, t + h, &states, nu, delta);
            shifted_mean(&ys, segs.iter().map(|(_, w)| *w))
        })
        .collect()
}

/// Weighted mean taken about the first value, so that equal inputs return
/// that value exactly. Weights are assumed to sum to one.
fn shifted_mean(ys: &[f64], weights: impl Iterator<Item = f64>) -> f64 {
    let Some(&base) = ys.first() else { return 0.0 };
    base + ys.iter().zip(weights).map(|(y, w)| (y - base) * w).sum::<f64>()
}

/// Nested estimate of `E[y^ν(t + h) | X_t = start]` for `ν = 1..=n`.
pub fn estimate_continuation<P, Q, C>(
    q: &Q,
    process: &P,
    t: usize,
    start: &P::State,
    h: usize,
    n: usize,
    delta: usize,
    inner: &C,
    rng: &mut ChaCha8Rng,
) -> Vec<f64>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
    C: Continuations<P> + ?Sized,
{
    if t + h > process.steps() {
        return vec![0.0; n];
    }
    let segs = inner.continuations(process, t, start, h, rng);
    segment_snell(q, process, t, &segs, h, n, delta)
}

/// Martingale data along one outer path, all indexed `[ν - 1][k]`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrack {
    pub payoffs: Vec<f64>,
    /// `y^ν(k)` on the outer path; for one right, the rollout value `Z_k`.
    pub snell: Vec<Vec<f64>>,
    /// Nested estimate of the next-step value given `F_k`.
    pub one_step: Vec<Vec<f64>>,
    /// Nested estimate of `E[y^ν(k + δ) | F_k]`; empty for one right.
    pub delta_step: Vec<Vec<f64>>,
    pub martingale: Vec<Vec<f64>>,
    pub corrections: Vec<Vec<f64>>,
}

/// Builds the martingale along `path`. Inner simulations started at step `k`
/// draw from substream `(seed, Inner, inner_index(outer, k))`.
///
/// For one right the increments are `Z_k - C_{k-1}` where `C_k` averages the
/// payoff of the greedy policy restarted after `k` over inner paths and `Z_k`
/// is `g_k` if the policy exercises at `k`, else `C_k`. For several rights
/// they are `y^ν(k) - Ê[y^ν(k) | F_{k-1}]`, and each inner set launched at `k`
/// also gives the `δ`-step estimate behind the correction
/// `M(k+δ) - M(k) + Ê[y(k+δ) | F_k] - y(k+δ)`; past `N`, `y` and its estimate
/// are 0 and `M` stays at `M(N)`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_track<P, Q, C>(
    q: &Q,
    process: &P,
    path: &[P::State],
    n: usize,
    delta: usize,
    rule: ExerciseRule,
    inner: &C,
    seed: u64,
    outer: u64,
) -> MartingaleTrack
where
    P: Process,
    Q: QFunction<P> + ?Sized,
    C: Continuations<P> + ?Sized,
{
    if n == 1 {
        rollout_track(q, process, path, delta, rule, inner, seed, outer)
    } else {
        snell_track(q, process, path, n, delta, inner, seed, outer)
    }
}

#[allow(clippy::too_many_arguments)]
fn rollout_track<P, Q, C>(
    q: &Q,
    process: &P,
    path: &[P::State],
    delta: usize,
    rule: ExerciseRule,
    inner: &C,
    seed: u64,
    outer: u64,
) -> MartingaleTrack
where
    P: Process,
    Q: QFunction<P> + ?Sized,
    C: Continuations<P> + ?Sized,
{
    let n_steps = process.steps();
    let payoffs: Vec<f64> = (0..=n_steps).map(|k| process.payoff(k, &path[k])).collect();
    let mut cont = vec![0.0; n_steps + 1];
    let mut z = vec![0.0; n_steps + 1];
    for k in 0..=n_steps {
        if k < n_steps {
            let mut rng = substream(seed, Purpose::Inner, inner_index(outer, k));
            let segs = inner.continuations(process, k, &path[k], n_steps - k, &mut rng);
            let mut stopped = vec![false; segs.len()];
            let mut value = 0.0;
            for j in 1..=n_steps - k {
                let idx: Vec<usize> = (0..segs.len()).filter(|&i| !stopped[i]).collect();
                if idx.is_empty() {
                    break;
                }
                let states: Vec<P::State> = idx.iter().map(|&i| segs[i].0[j].clone()).collect();
                for (&i, h) in idx.iter().zip(heads_batch(q, process, k + j, &states, 1, delta)) {
                    if rule.exercises(h) {
                        stopped[i] = true;
                        value += segs[i].1 * process.payoff(k + j, &segs[i].0[j]);
                    }
                }
            }
            cont[k] = value;
        }
        let h = heads_batch(q, process, k, std::slice::from_ref(&path[k]), 1, delta)[0];
        z[k] = if rule.exercises(h) { payoffs[k] } else { cont[k] };
    }
    let mut m = vec![0.0; n_steps + 1];
    for k in 1..=n_steps {
        m[k] = m[k - 1] + z[k] - cont[k - 1];
    }
    MartingaleTrack {
        payoffs,
        snell: vec![z],
        one_step: vec![cont],
        delta_step: Vec::new(),
        martingale: vec![m],
        corrections: vec![vec![0.0; n_steps + 1]],
    }
}

#[allow(clippy::too_many_arguments)]
fn snell_track<P, Q, C>(
    q: &Q,
    process: &P,
    path: &[P::State],
    n: usize,
    delta: usize,
    inner: &C,
    seed: u64,
    outer: u64,
) -> MartingaleTrack
where
    P: Process,
    Q: QFunction<P> + ?Sized,
    C: Continuations<P> + ?Sized,
{
    let n_steps = process.steps();
    let cols = n_steps + 1;
    let payoffs: Vec<f64> = (0..cols).map(|k| process.payoff(k, &path[k])).collect();
    let mut y = vec![vec![0.0; cols]; n];
    let mut e1 = vec![vec![0.0; cols]; n];
    let mut ed = vec![vec![0.0; cols]; n];
    for k in 0..cols {
        for nu in 1..=n {
            y[nu - 1][k] = snell_from_q(q, process, k, &path[k], nu, delta);
        }
        if k < n_steps {
            let mut rng = substream(seed, Purpose::Inner, inner_index(outer, k));
            let segs = inner.continuations(process, k, &path[k], delta.max(1), &mut rng);
            let one = segment_snell(q, process, k, &segs, 1, n, delta);
            let far = segment_snell(q, process, k, &segs, delta, n, delta);
            for v in 0..n {
                e1[v][k] = one[v];
                ed[v][k] = far[v];
            }
        }
    }
    let mut m = vec![vec![0.0; cols]; n];
    let mut corr = vec![vec![0.0; cols]; n];
    for v in 0..n {
        for k in 1..cols {
            m[v][k] = m[v][k - 1] + y[v][k] - e1[v][k - 1];
        }
        for p in 0..cols {
            let u = p + delta;
            corr[v][p] = if u <= n_steps {
                m[v][u] - m[v][p] + ed[v][p] - y[v][u]
            } else {
                m[v][n_steps] - m[v][p]
            };
        }
    }
    MartingaleTrack { payoffs, snell: y, one_step: e1, delta_step: ed, martingale: m, corrections: corr }
}

/// Dual objective of one admissible tuple `u_n < ... < u_1` (earliest first in
/// `times`) on the cemetery-extended grid.
fn tuple_objective(g: &[f64], m: &[Vec<f64>], corr: &[Vec<f64>], times: &[usize]) -> f64 {
    let n_steps = g.len() - 1;
    let n = times.len();
    let gx = |u: usize| if u <= n_steps { g[u] } else { 0.0 };
    let mx = |v: usize, u: usize| m[v][u.min(n_steps)];
    let cx = |v: usize, u: usize| if u <= n_steps { corr[v][u] } else { 0.0 };
    // times[i] is u_{n - i}.
    let u = |nu: usize| times[n - nu];
    let mut total = gx(u(n)) - mx(n - 1, u(n));
    for nu in 1..n {
        total += gx(u(nu)) - (mx(nu - 1, u(nu)) - mx(nu - 1, u(nu + 1))) + cx(nu - 1, u(nu + 1));
    }
    total
}

fn check_dual_inputs(g: &[f64], m: &[Vec<f64>], corr: &[Vec<f64>], n: usize, delta: usize) {
    assert!(n >= 1 && delta >= 1, "need n >= 1 and delta >= 1");
    assert!(!g.is_empty(), "payoff track is empty");
    assert!(m.len() >= n && corr.len() >= n, "need martingale and correction rows for every right");
    assert!(
        m[..n].iter().chain(&corr[..n]).all(|r| r.len() == g.len()),
        "martingale and correction rows must match the payoff length"
    );
}

/// Maximum of the dual objective over all admissible exercise tuples, where
/// `m[ν - 1]` and `corr[ν - 1]` belong to the `ν`-th right from the end.
///
/// Exercise dates may fall in the cemetery `N+1..=N+nδ` (zero payoff,
/// martingale frozen at `M(N)`, zero correction). Runs in `O(n (N + nδ)^2)`.
pub fn pathwise_sup(g: &[f64], m: &[Vec<f64>], corr: &[Vec<f64>], n: usize, delta: usize) -> f64 {
    check_dual_inputs(g, m, corr, n, delta);
    let n_steps = g.len() - 1;
    let end = n_steps + n * delta;
    let gx = |u: usize| if u <= n_steps { g[u] } else { 0.0 };
    let mx = |v: usize, u: usize| m[v][u.min(n_steps)];
    let cx = |v: usize, u: usize| if u <= n_steps { corr[v][u] } else { 0.0 };
    // w[p]: best value of the remaining r rights after an exercise at p.
    let mut w = vec![0.0; end + 1];
    for r in 1..n {
        let mut next = vec![f64::NEG_INFINITY; end + 1];
        for (p, slot) in next.iter_mut().enumerate() {
            let anchor = mx(r - 1, p) + cx(r - 1, p);
            for u in p + delta..=end {
                let v = gx(u) - mx(r - 1, u) + anchor + w[u];
                if v > *slot {
                    *slot = v;
                }
            }
        }
        w = next;
    }
    (0..=end).map(|u| gx(u) - mx(n - 1, u) + w[u]).fold(f64::NEG_INFINITY, f64::max)
}

/// Reference for [`pathwise_sup`]: evaluates every admissible tuple directly.
pub fn enumerate_pathwise_sup(g: &[f64], m: &[Vec<f64>], corr: &[Vec<f64>], n: usize, delta: usize) -> f64 {
    check_dual_inputs(g, m, corr, n, delta);
    let end = g.len() - 1 + n * delta;
    let mut best = f64::NEG_INFINITY;
    let mut times = Vec::with_capacity(n);
    fn walk(
        from: usize,
        end: usize,
        left: usize,
        delta: usize,
        times: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if left == 0 {
            visit(times);
            return;
        }
        for u in from..=end {
            times.push(u);
            walk(u + delta, end, left - 1, delta, times, visit);
            times.pop();
        }
    }
    walk(0, end, n, delta, &mut times, &mut |ts| {
        best = best.max(tuple_objective(g, m, corr, ts));
    });
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    pub u_hat: f64,
    pub sigma_u: f64,
    pub sups: Vec<f64>,
    pub tracks: Vec<MartingaleTrack>,
    pub m_u: usize,
    /// Inner paths per nested estimate (0 for exact kernels).
    pub j_inner: usize,
}

/// Mean over `m_u` outer paths of the pathwise supremum. Outer path `p` comes
/// from substream `(seed, OuterPath, p)`.
#[allow(clippy::too_many_arguments)]
pub fn upper_bound<P, Q, C>(
    q: &Q,
    process: &P,
    n: usize,
    delta: usize,
    rule: ExerciseRule,
    m_u: usize,
    inner: &C,
    seed: u64,
) -> Result<DualEvaluation>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
    C: Continuations<P> + ?Sized,
{
    if m_u < 2 {
        return Err(Error::Config(format!("upper bound needs at least 2 outer paths, got {m_u}")));
    }
    check_rights(n, delta)?;
    let tracks: Vec<MartingaleTrack> = (0..m_u)
        .into_par_iter()
        .map(|p| {
            let path = process.sample_path(&mut substream(seed, Purpose::OuterPath, p as u64));
            martingale_track(q, process, &path, n, delta, rule, inner, seed, p as u64)
        })
        .collect();
    let sups: Vec<f64> = tracks
        .iter()
        .map(|t| pathwise_sup(&t.payoffs, &t.martingale, &t.corrections, n, delta))
        .collect();
    let (u_hat, sigma_u) = mean_and_std(&sups);
    Ok(DualEvaluation { u_hat, sigma_u, sups, tracks, m_u, j_inner: 0 })
}

/// Two-sided `1 - alpha` normal quantile `z_{alpha/2}`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0))
}

/// `[L - z σ_L / √M_L, U + z σ_U / √M_U]` with the midpoint as point estimate.
/// Seeds and runtime are left at 0 for the caller to fill.
pub fn confidence_interval(l: &PolicyEvaluation, u: &DualEvaluation, alpha: f64) -> Result<BoundsReport> {
    let z = normal_quantile(alpha)?;
    Ok(BoundsReport {
        l_hat: l.l_hat,
        sigma_l: l.sigma_l,
        u_hat: u.u_hat,
        sigma_u: u.sigma_u,
        point_estimate: (l.l_hat + u.u_hat) / 2.0,
        ci_low: l.l_hat - z * l.sigma_l / (l.m_l as f64).sqrt(),
        ci_high: u.u_hat + z * u.sigma_u / (u.m_u as f64).sqrt(),
        alpha,
        m_l: l.m_l,
        m_u: u.m_u,
        j_inner: u.j_inner,
        seed_train: 0,
        seed_eval: 0,
        runtime_seconds: 0.0,
    })
}

/// Sample sizes and level for one pricing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub m_l: usize,
    pub m_u: usize,
    pub j_inner: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Overrides the default comparison (strict for one right).
    #[serde(default)]
    pub rule: Option<ExerciseRule>,
}

fn default_alpha() -> f64 {
    0.05
}

impl EvalSettings {
    pub fn desk() -> Self {
        Self { m_l: 20_000, m_u: 50, j_inner: 1000, alpha: 0.05, rule: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_l < 2 || self.m_u < 2 || self.j_inner == 0 {
            return Err(Error::Config("evaluation: need m_l >= 2, m_u >= 2, j_inner >= 1".into()));
        }
        normal_quantile(self.alpha).map(|_| ())
    }

    pub fn rule_for(&self, n: usize) -> ExerciseRule {
        self.rule.unwrap_or_else(|| ExerciseRule::for_rights(n))
    }
}

/// Lower bound, nested-MC upper bound and interval for one contract. The two
/// phases use the independent seeds `derive_seed(seed, "lower")` and
/// `derive_seed(seed, "upper")`.
pub fn price<P, Q>(
    q: &Q,
    process: &P,
    n: usize,
    delta: usize,
    eval: &EvalSettings,
    seed: u64,
) -> Result<(PolicyEvaluation, DualEvaluation, BoundsReport)>
where
    P: Process,
    Q: QFunction<P> + ?Sized,
{
    eval.validate()?;
    let rule = eval.rule_for(n);
    let lower = lower_bound(q, process, n, delta, rule, eval.m_l, crate::rng::derive_seed(seed, "lower"))?;
    let inner = NestedMc { inner: eval.j_inner };
    let mut upper = upper_bound(q, process, n, delta, rule, eval.m_u, &inner, crate::rng::derive_seed(seed, "upper"))?;
    upper.j_inner = eval.j_inner;
    let mut report = confidence_interval(&lower, &upper, eval.alpha)?;
    report.seed_eval = seed;
    Ok((lower, upper, report))
}
