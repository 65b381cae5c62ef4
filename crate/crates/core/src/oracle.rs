//! Exact values on finite Markov chains.
//!
//! [`solve_chain`] runs the reduction recursion backwards with exact
//! conditional expectations:
//!
//! ```text
//! q^ν(k, s)   = E[y^ν(k+1) | X_k = s]
//! q^ν_δ(k, s) = E[y^ν(k+δ) | X_k = s]
//! y^ν(k, s)   = max(g(k, s) + q^{ν-1}_δ(k, s), q^ν(k, s))
//! ```
//!
//! with `y = 0` past `N` and `q^0_δ = 0`. [`brute_force_value`] gets the same
//! number by searching the full scenario tree instead, and [`ou_grid_chain`]
//! discretizes a one-asset OU market so the same solver serves as a
//! fine-grid reference there.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::Continuations;
use crate::market::MarketModel;
use crate::process::{Process, QFunction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: usize,
    /// Row-stochastic `states x states` matrix.
    pub transition: Vec<Vec<f64>>,
    /// Payoff table `(steps + 1) x states`, nonnegative.
    pub payoff: Vec<Vec<f64>>,
    pub steps: usize,
    pub rights: usize,
    pub delta: usize,
    #[serde(default)]
    pub initial: usize,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("chain: {m}")));
        if self.states == 0 {
            return bad("needs at least one state".into());
        }
        if self.rights == 0 || self.delta == 0 {
            return bad("rights and delta must be >= 1".into());
        }
        if self.initial >= self.states {
            return bad(format!("initial state {} out of range", self.initial));
        }
        if self.transition.len() != self.states || self.transition.iter().any(|r| r.len() != self.states) {
            return bad(format!("transition must be {0} x {0}", self.states));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("transition row {i} has an entry outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return bad(format!("transition row {i} sums to {sum}"));
            }
        }
        if self.payoff.len() != self.steps + 1 || self.payoff.iter().any(|r| r.len() != self.states) {
            return bad(format!("payoff must be {} x {}", self.steps + 1, self.states));
        }
        if self.payoff.iter().flatten().any(|&g| !(g.is_finite() && g >= 0.0)) {
            return bad("payoffs must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Random chain with Dirichlet-like rows and payoffs in `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, steps: usize, rights: usize, delta: usize) -> Self {
        let transition = (0..states)
            .map(|_| {
                let w: Vec<f64> = (0..states).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let total: f64 = w.iter().sum();
                let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
                // Put the rounding residue on the largest entry so the row sums to 1.
                let resid = 1.0 - row.iter().sum::<f64>();
                let top = (0..states).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                row[top] += resid;
                row
            })
            .collect();
        let payoff = (0..=steps).map(|_| (0..states).map(|_| rng.random::<f64>()).collect()).collect();
        Self { states, transition, payoff, steps, rights, delta, initial: rng.random_range(0..states) }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    fn g(&self, t: usize, s: usize) -> f64 {
        if t > self.steps {
            0.0
        } else {
            self.payoff[t][s]
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.transition.iter().map(|row| row.iter().zip(v).map(|(p, x)| p * x).sum()).collect()
    }

    /// `P^h v`.
    fn apply_power(&self, v: &[f64], h: usize) -> Vec<f64> {
        let mut out = v.to_vec();
        for _ in 0..h {
            out = self.apply(&out);
        }
        out
    }

    /// Row `s` of `P^h`.
    pub fn kernel(&self, s: usize, h: usize) -> Vec<f64> {
        let mut dist = vec![0.0; self.states];
        dist[s] = 1.0;
        for _ in 0..h {
            let mut next = vec![0.0; self.states];
            for (i, &w) in dist.iter().enumerate() {
                if w != 0.0 {
                    for (j, &p) in self.transition[i].iter().enumerate() {
                        next[j] += w * p;
                    }
                }
            }
            dist = next;
        }
        dist
    }
}

/// A [`ChainSpec`] viewed as a simulatable process with one-hot features.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub spec: ChainSpec,
}

impl MarkovChain {
    pub fn new(spec: ChainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl Process for MarkovChain {
    type State = usize;

    fn steps(&self) -> usize {
        self.spec.steps
    }

    fn initial_state(&self) -> usize {
        self.spec.initial
    }

    fn advance<R: Rng + ?Sized>(&self, _t: usize, state: &usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.spec.transition[*state];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap at the top; take the last reachable state.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(*state)
    }

    fn payoff(&self, t: usize, state: &usize) -> f64 {
        self.spec.g(t, *state)
    }

    fn feature_len(&self) -> usize {
        self.spec.states
    }

    fn write_features(&self, state: &usize, out: &mut [f64]) {
        out.fill(0.0);
        out[*state] = 1.0;
    }
}

/// Exact continuation laws on a chain: every path segment with its probability.
#[derive(Debug, Clone, Copy)]
pub struct ExactKernel;

impl Continuations<MarkovChain> for ExactKernel {
    fn continuations(
        &self,
        chain: &MarkovChain,
        t: usize,
        start: &usize,
        len: usize,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<(Vec<usize>, f64)> {
        let len = len.min(chain.spec.steps.saturating_sub(t));
        let mut out = vec![(vec![*start], 1.0)];
        for _ in 0..len {
            let mut next = Vec::with_capacity(out.len() * chain.spec.states);
            for (seg, w) in out {
                let last = *seg.last().expect("segments are never empty");
                for (j, &p) in chain.spec.transition[last].iter().enumerate() {
                    if p > 0.0 {
                        let mut s = seg.clone();
                        s.push(j);
                        next.push((s, w * p));
                    }
                }
            }
            out = next;
        }
        out
    }
}

/// Backward-induction tables, indexed `[ν][k][s]` for `ν = 0..=n`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub q: Vec<Vec<Vec<f64>>>,
    pub q_delta: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
    /// Exercise is optimal (ties exercise); all false for `ν = 0`.
    pub exercise: Vec<Vec<Vec<bool>>>,
    pub v0: f64,
    pub steps: usize,
    pub rights: usize,
    pub delta: usize,
}

impl ExactSolution {
    /// Head values `[q^ν, g + q^{ν-1}_δ]` at `(k, s)`.
    pub fn heads(&self, chain: &MarkovChain, k: usize, s: usize, nu: usize) -> [f64; 2] {
        if nu == 0 || k > self.steps {
            return [0.0, 0.0];
        }
        [self.q[nu][k][s], chain.spec.g(k, s) + self.q_delta[nu - 1][k][s]]
    }
}

impl QFunction<MarkovChain> for ExactSolution {
    fn q_batch(&self, chain: &MarkovChain, t: usize, states: &[usize], rights: usize) -> Vec<[f64; 2]> {
        states.iter().map(|&s| self.heads(chain, t, s, rights)).collect()
    }
}

pub fn solve_chain(spec: &ChainSpec) -> Result<ExactSolution> {
    spec.validate()?;
    let (s_count, n_steps, n, delta) = (spec.states, spec.steps, spec.rights, spec.delta);
    let zeros = || vec![vec![vec![0.0; s_count]; n_steps + 1]; n + 1];
    let (mut q, mut q_delta, mut y) = (zeros(), zeros(), zeros());
    let mut exercise = vec![vec![vec![false; s_count]; n_steps + 1]; n + 1];
    for k in (0..=n_steps).rev() {
        for nu in 1..=n {
            if k < n_steps {
                q[nu][k] = spec.apply(&y[nu][k + 1]);
            }
            if k + delta <= n_steps {
                q_delta[nu][k] = spec.apply_power(&y[nu][k + delta], delta);
            }
        }
        for nu in 1..=n {
            for s in 0..s_count {
                let ex = spec.g(k, s) + q_delta[nu - 1][k][s];
                let cont = q[nu][k][s];
                exercise[nu][k][s] = ex >= cont;
                y[nu][k][s] = ex.max(cont);
            }
        }
    }
    let v0 = y[n][0][spec.initial];
    Ok(ExactSolution { q, q_delta, y, exercise, v0, steps: n_steps, rights: n, delta })
}

/// Supremum over all adapted exercise strategies, by exhaustive search of the
/// scenario tree: every observed prefix is a separate node and chooses its own
/// action. Refuses chains with more than 5 states, 10 steps or 3 rights.
pub fn brute_force_value(spec: &ChainSpec) -> Result<f64> {
    spec.validate()?;
    if spec.states > 5 || spec.steps > 10 || spec.rights > 3 {
        return Err(Error::SizeGuard(format!(
            "brute force limited to S <= 5, N <= 10, n <= 3 (got S = {}, N = {}, n = {})",
            spec.states, spec.steps, spec.rights
        )));
    }
    let mut prefix = Vec::with_capacity(spec.steps + 1);
    prefix.push(spec.initial);
    Ok(tree_value(spec, &mut prefix, spec.rights, 0))
}

/// Best value from the last node of `prefix` (time `prefix.len() - 1`) with
/// `rights` left and no exercise allowed before `allowed`.
fn tree_value(spec: &ChainSpec, prefix: &mut Vec<usize>, rights: usize, allowed: usize) -> f64 {
    let t = prefix.len() - 1;
    if rights == 0 || t > spec.steps {
        return 0.0;
    }
    let s = prefix[t];
    let expect = |prefix: &mut Vec<usize>, rights: usize, allowed: usize| -> f64 {
        if t == spec.steps {
            return 0.0;
        }
        let mut total = 0.0;
        for (j, &p) in spec.transition[s].iter().enumerate() {
            if p > 0.0 {
                prefix.push(j);
                total += p * tree_value(spec, prefix, rights, allowed);
                prefix.pop();
            }
        }
        total
    };
    let wait = expect(prefix, rights, allowed);
    if t < allowed {
        return wait;
    }
    let exercise = spec.payoff[t][s] + expect(prefix, rights - 1, t + spec.delta);
    wait.max(exercise)
}

/// Discretizes a one-asset market on `nodes` log-price points spanning
/// `width` stationary standard deviations on each side of the start, with
/// cell-probability transitions. Node `nodes / 2` is the start.
pub fn ou_grid_chain(model: &MarketModel, nodes: usize, width: f64, rights: usize, delta: usize) -> Result<ChainSpec> {
    model.validate()?;
    if model.d != 1 {
        return Err(Error::Config("grid reference needs a single asset".into()));
    }
    if nodes < 3 || nodes.is_multiple_of(2) {
        return Err(Error::Config("grid needs an odd node count >= 3".into()));
    }
    if !(model.sigma > 0.0) || !(model.k > 0.0 && model.k < 2.0) {
        return Err(Error::Config("grid reference needs sigma > 0 and 0 < k < 2".into()));
    }
    let a = 1.0 - model.k;
    let x0 = model.s0.ln();
    let sd = model.sigma / (1.0 - a * a).sqrt();
    let half = (x0 - model.mu).abs() + width * sd;
    let mid = nodes / 2;
    let h = half / mid as f64;
    let xs: Vec<f64> = (0..nodes).map(|i| x0 + (i as f64 - mid as f64) * h).collect();
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let transition = xs
        .iter()
        .map(|&x| {
            let m = a * (x - model.mu) + model.mu;
            let cdf = |edge: f64| z.cdf((edge - m) / model.sigma);
            let mut row: Vec<f64> = (0..nodes)
                .map(|j| {
                    let lo = if j == 0 { 0.0 } else { cdf(xs[j] - 0.5 * h) };
                    let hi = if j + 1 == nodes { 1.0 } else { cdf(xs[j] + 0.5 * h) };
                    (hi - lo).max(0.0)
                })
                .collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            row
        })
        .collect();
    let payoff = (0..=model.steps)
        .map(|t| xs.iter().map(|&x| model.payoff(t, &[x.exp()])).collect())
        .collect();
    Ok(ChainSpec { states: nodes, transition, payoff, steps: model.steps, rights, delta, initial: mid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_chain(p: f64, steps: usize, rights: usize, delta: usize) -> ChainSpec {
        ChainSpec {
            states: 1,
            transition: vec![vec![1.0]],
            payoff: vec![vec![p]; steps + 1],
            steps,
            rights,
            delta,
            initial: 0,
        }
    }

    #[test]
    fn forced_exercises() {
        let sol = solve_chain(&constant_chain(1.5, 3, 2, 1)).unwrap();
        assert_eq!(sol.v0, 3.0);
        assert_eq!(brute_force_value(&constant_chain(1.5, 3, 2, 1)).unwrap(), 3.0);
        // N = 4 and δ = 3 fit only two of three rights.
        assert_eq!(solve_chain(&constant_chain(1.0, 4, 3, 3)).unwrap().v0, 2.0);
    }

    #[test]
    fn deterministic_scheduling() {
        // One state with a time-varying payoff: the best gap-respecting subset.
        let payoffs = [0.3, 0.9, 0.1, 0.8, 0.7, 0.2];
        let spec = ChainSpec {
            states: 1,
            transition: vec![vec![1.0]],
            payoff: payoffs.iter().map(|&g| vec![g]).collect(),
            steps: 5,
            rights: 2,
            delta: 2,
            initial: 0,
        };
        let mut best = 0.0f64;
        for a in 0..6 {
            best = best.max(payoffs[a]);
            for b in a + 2..6 {
                best = best.max(payoffs[a] + payoffs[b]);
            }
        }
        assert_eq!(solve_chain(&spec).unwrap().v0, best);
        assert_eq!(brute_force_value(&spec).unwrap(), best);
    }

    #[test]
    fn zero_payoff_tables() {
        let mut spec = ChainSpec::random(&mut ChaCha8Rng::seed_from_u64(1), 3, 5, 2, 2);
        spec.payoff.iter_mut().flatten().for_each(|g| *g = 0.0);
        let sol = solve_chain(&spec).unwrap();
        assert!(sol.y.iter().flatten().flatten().all(|&v| v == 0.0));
        assert!(sol.q.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn agrees_with_tree_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10 {
            let s = rng.random_range(1..=4);
            let n_steps = rng.random_range(1..=7);
            let (n, delta) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let spec = ChainSpec::random(&mut rng, s, n_steps, n, delta);
            let exact = solve_chain(&spec).unwrap().v0;
            let brute = brute_force_value(&spec).unwrap();
            assert!((exact - brute).abs() < 1e-12, "{exact} vs {brute}");
        }
        let sym = ChainSpec {
            states: 2,
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            payoff: (0..=6).map(|t| vec![t as f64 * 0.1, 1.0 - t as f64 * 0.1]).collect(),
            steps: 6,
            rights: 2,
            delta: 2,
            initial: 0,
        };
        assert!((solve_chain(&sym).unwrap().v0 - brute_force_value(&sym).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_right_is_snell() {
        let spec = ChainSpec::random(&mut ChaCha8Rng::seed_from_u64(5), 3, 6, 1, 1);
        let sol = solve_chain(&spec).unwrap();
        // U_N = g_N, U_k = max(g_k, P U_{k+1}).
        let mut u = spec.payoff[6].clone();
        for k in (0..6).rev() {
            let cont = spec.apply(&u);
            u = (0..3).map(|s| spec.payoff[k][s].max(cont[s])).collect();
        }
        assert!((sol.v0 - u[spec.initial]).abs() < 1e-15);
    }

    #[test]
    fn recursion_consistency_and_monotonicity() {
        let spec = ChainSpec::random(&mut ChaCha8Rng::seed_from_u64(8), 4, 8, 3, 2);
        let sol = solve_chain(&spec).unwrap();
        for nu in 1..=3 {
            for k in 0..=8 {
                for s in 0..4 {
                    let ex = spec.payoff[k][s] + sol.q_delta[nu - 1][k][s];
                    let y = sol.y[nu][k][s];
                    assert!(y >= sol.q[nu][k][s] && y >= ex);
                    assert!(y == sol.q[nu][k][s] || y == ex);
                    assert!(sol.y[nu][k][s] >= sol.y[nu - 1][k][s]);
                }
            }
        }
        assert!(sol.q_delta[0].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn size_guard() {
        let spec = ChainSpec::random(&mut ChaCha8Rng::seed_from_u64(0), 6, 3, 1, 1);
        assert!(matches!(brute_force_value(&spec), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn validation() {
        let mut spec = constant_chain(1.0, 2, 1, 1);
        spec.transition = vec![vec![0.9]];
        assert!(solve_chain(&spec).is_err());
        let mut spec = constant_chain(1.0, 2, 1, 1);
        spec.payoff[1][0] = -1.0;
        assert!(spec.validate().is_err());
        let text = "states = 1\nsteps = 1\nrights = 1\ndelta = 1\ntransition = [[1.0]]\npayoff = [[0.5], [0.25]]\n";
        assert_eq!(solve_chain(&ChainSpec::from_toml(text).unwrap()).unwrap().v0, 0.5);
    }

    #[test]
    fn chain_sampling_frequencies() {
        let spec = ChainSpec {
            states: 3,
            transition: vec![vec![0.2, 0.5, 0.3], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            payoff: vec![vec![0.0; 3]; 2],
            steps: 1,
            rights: 1,
            delta: 1,
            initial: 0,
        };
        let chain = MarkovChain::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[chain.advance(0, &0, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((*c as f64 / draws as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn exact_kernel_matches_matrix_power() {
        let chain = MarkovChain::new(ChainSpec::random(&mut ChaCha8Rng::seed_from_u64(3), 3, 6, 1, 1)).unwrap();
        let segs = ExactKernel.continuations(&chain, 1, &2, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let total: f64 = segs.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut law = [0.0; 3];
        for (seg, w) in &segs {
            assert_eq!(seg.len(), 4);
            law[seg[3]] += w;
        }
        let row = chain.spec.kernel(2, 3);
        for s in 0..3 {
            assert!((law[s] - row[s]).abs() < 1e-12);
        }
        // Clamped at N.
        let segs = ExactKernel.continuations(&chain, 5, &0, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(segs.iter().all(|(s, _)| s.len() == 2));
    }

    #[test]
    fn grid_reference_is_a_valid_chain() {
        let model = MarketModel::exp_ou(1, 3);
        let spec = ou_grid_chain(&model, 201, 8.0, 1, 1).unwrap();
        spec.validate().unwrap();
        let v = solve_chain(&spec).unwrap().v0;
        assert!(v > 0.0 && v.is_finite());
        assert!(ou_grid_chain(&MarketModel::exp_ou(2, 3), 201, 8.0, 1, 1).is_err());
    }
}
