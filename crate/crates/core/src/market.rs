//! Exponential Gaussian Ornstein-Uhlenbeck spot model and call payoffs.
//!
//! Each asset follows, on the unit step grid `0..=N`,
//!
//! ```text
//! log S[t+1] = (1 - k) (log S[t] - mu) + mu + sigma Z[t]
//! ```
//!
//! with independent standard normal innovations across paths, steps and
//! assets. States are carried as log-prices.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::process::Process;
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    /// `(S - K)^+` on a single asset.
    SingleCall,
    /// `(max_i S_i - K)^+`.
    MaxCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub d: usize,
    pub sigma: f64,
    pub k: f64,
    pub mu: f64,
    pub s0: f64,
    pub strike: f64,
    /// Number of steps `N`; exercise dates are `0..=N`.
    pub steps: usize,
    pub payoff: PayoffKind,
}

impl MarketModel {
    /// The swing setting used throughout the examples: sigma 0.5, k 0.9, mu 0,
    /// unit start and strike, max-call on `d` assets.
    pub fn exp_ou(d: usize, steps: usize) -> Self {
        Self {
            d,
            sigma: 0.5,
            k: 0.9,
            mu: 0.0,
            s0: 1.0,
            strike: 1.0,
            steps,
            payoff: if d == 1 { PayoffKind::SingleCall } else { PayoffKind::MaxCall },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("market: {msg}")));
        if self.d == 0 {
            return bad("d must be >= 1");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be finite and >= 0");
        }
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return bad("s0 must be finite and > 0");
        }
        if !self.k.is_finite() || !self.mu.is_finite() || !self.strike.is_finite() {
            return bad("k, mu and strike must be finite");
        }
        if self.payoff == PayoffKind::SingleCall && self.d != 1 {
            return bad("single_call payoff needs d = 1; use max_call");
        }
        Ok(())
    }

    /// Payoff at step `t` for (positive) prices; zero after maturity.
    pub fn payoff(&self, t: usize, prices: &[f64]) -> f64 {
        if t > self.steps {
            return 0.0;
        }
        let top = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (top - self.strike).max(0.0)
    }

    fn payoff_log(&self, t: usize, log_prices: &[f64]) -> f64 {
        if t > self.steps {
            return 0.0;
        }
        // exp is monotone, so the max can be taken on logs.
        let top = log_prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (top.exp() - self.strike).max(0.0)
    }

    fn log_step<R: Rng + ?Sized>(&self, from: &[f64], rng: &mut R) -> Vec<f64> {
        from.iter()
            .map(|&x| {
                let z: f64 = rng.sample(StandardNormal);
                (1.0 - self.k) * (x - self.mu) + self.mu + self.sigma * z
            })
            .collect()
    }

    /// `count` independent paths over `0..=N`; path `p` draws from its own
    /// substream of `seed`, so the result does not depend on thread count.
    pub fn simulate_paths(&self, count: usize, seed: u64) -> PathSet {
        let cols = self.steps + 1;
        let rows: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|p| {
                let mut rng = substream(seed, Purpose::OuterPath, p as u64);
                self.sample_path(&mut rng).into_iter().flatten().collect()
            })
            .collect();
        PathSet {
            paths: count,
            cols,
            d: self.d,
            start_t: 0,
            log_prices: rows.concat(),
            seed,
        }
    }

    /// `count` continuation paths from `start_prices` at step `start_t`, covering
    /// steps `start_t..=N`. Column 0 holds `start_prices`.
    pub fn simulate_conditional<R: Rng + ?Sized>(
        &self,
        start_prices: &[f64],
        start_t: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<PathSet> {
        if start_t > self.steps {
            return Err(Error::Data(format!("start step {start_t} beyond maturity {}", self.steps)));
        }
        if start_prices.len() != self.d || start_prices.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("start prices must be d positive values".into()));
        }
        let start: Vec<f64> = start_prices.iter().map(|s| s.ln()).collect();
        let len = self.steps - start_t;
        let mut log_prices = Vec::with_capacity(count * (len + 1) * self.d);
        for _ in 0..count {
            for state in self.continuation(start_t, &start, len, rng) {
                log_prices.extend(state);
            }
        }
        Ok(PathSet { paths: count, cols: len + 1, d: self.d, start_t, log_prices, seed: 0 })
    }
}

impl Process for MarketModel {
    type State = Vec<f64>;

    fn steps(&self) -> usize {
        self.steps
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.s0.ln(); self.d]
    }

    fn advance<R: Rng + ?Sized>(&self, _t: usize, state: &Vec<f64>, rng: &mut R) -> Vec<f64> {
        self.log_step(state, rng)
    }

    fn payoff(&self, t: usize, state: &Vec<f64>) -> f64 {
        self.payoff_log(t, state)
    }

    fn feature_len(&self) -> usize {
        self.d
    }

    fn write_features(&self, state: &Vec<f64>, out: &mut [f64]) {
        out.copy_from_slice(state);
    }
}

/// Simulated prices, shape `(paths, cols, d)`, stored as log-prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: usize,
    /// Number of time columns.
    pub cols: usize,
    pub d: usize,
    /// Grid step of column 0.
    pub start_t: usize,
    log_prices: Vec<f64>,
    pub seed: u64,
}

const DUMP_MAGIC: &[u8; 8] = b"QSWPATH1";

impl PathSet {
    fn offset(&self, p: usize, col: usize) -> usize {
        (p * self.cols + col) * self.d
    }

    pub fn price(&self, p: usize, col: usize, asset: usize) -> f64 {
        self.log_prices[self.offset(p, col) + asset].exp()
    }

    pub fn prices(&self, p: usize, col: usize) -> Vec<f64> {
        self.log_state(p, col).iter().map(|x| x.exp()).collect()
    }

    pub fn log_state(&self, p: usize, col: usize) -> &[f64] {
        let o = self.offset(p, col);
        &self.log_prices[o..o + self.d]
    }

    /// Path `p` as process states (log-prices), one per column.
    pub fn path_states(&self, p: usize) -> Vec<Vec<f64>> {
        (0..self.cols).map(|c| self.log_state(p, c).to_vec()).collect()
    }

    /// Binary dump: magic, then `paths`, `cols`, `d` as little-endian u64,
    /// then prices as little-endian f64 in `(path, col, asset)` order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for v in [self.paths, self.cols, self.d] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for x in &self.log_prices {
            w.write_all(&x.exp().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dump(file)
    }

    /// Reads a dump back. The seed is not part of the format and comes back as 0.
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Data("not a path dump".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [paths, cols, d] = header;
        let mut log_prices = Vec::with_capacity(paths * cols * d);
        for _ in 0..paths * cols * d {
            r.read_exact(&mut word)?;
            log_prices.push(f64::from_le_bytes(word).ln());
        }
        Ok(Self { paths, cols, d, start_t: 0, log_prices, seed: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn payoff_examples() {
        let one = MarketModel::exp_ou(1, 10);
        assert!((one.payoff(3, &[1.5]) - 0.5).abs() < 1e-15);
        assert_eq!(one.payoff(3, &[0.8]), 0.0);
        assert_eq!(one.payoff(11, &[1.5]), 0.0);
        let three = MarketModel::exp_ou(3, 10);
        assert!((three.payoff(0, &[1.2, 0.7, 1.05]) - 0.2).abs() < 1e-15);
        let log: Vec<f64> = [1.2f64, 0.7, 1.05].iter().map(|s| s.ln()).collect();
        assert!((Process::payoff(&three, 0, &log) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut m = MarketModel::exp_ou(3, 10);
        assert!(m.validate().is_ok());
        m.payoff = PayoffKind::SingleCall;
        assert!(m.validate().is_err());
        let mut m = MarketModel::exp_ou(1, 10);
        m.sigma = -0.1;
        assert!(m.validate().is_err());
        m.sigma = 0.5;
        m.s0 = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn zero_noise_is_a_fixed_point() {
        let mut m = MarketModel::exp_ou(2, 6);
        m.sigma = 0.0;
        let set = m.simulate_paths(4, 1);
        for p in 0..4 {
            for t in 0..=6 {
                assert_eq!(set.prices(p, t), vec![1.0, 1.0]);
            }
        }
    }

    #[test]
    fn seed_determinism_and_positivity() {
        let m = MarketModel::exp_ou(3, 10);
        let a = m.simulate_paths(50, 42);
        let b = m.simulate_paths(50, 42);
        assert_eq!(a, b);
        assert_ne!(a, m.simulate_paths(50, 43));
        for p in 0..50 {
            assert_eq!(a.prices(p, 0), vec![1.0; 3]);
            for t in 0..=10 {
                assert!(a.prices(p, t).iter().all(|&s| s > 0.0));
            }
        }
    }

    #[test]
    fn full_mean_reversion_decorrelates() {
        let mut m = MarketModel::exp_ou(1, 2);
        m.k = 1.0;
        let set = m.simulate_paths(20_000, 3);
        let x: Vec<f64> = (0..set.paths).map(|p| set.log_state(p, 1)[0]).collect();
        let y: Vec<f64> = (0..set.paths).map(|p| set.log_state(p, 2)[0]).collect();
        let (mx, vx) = mean_var(&x);
        let (my, vy) = mean_var(&y);
        let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() - 1) as f64;
        let corr = cov / (vx * vy).sqrt();
        // Standard error of a null correlation is 1/sqrt(n) ~ 0.007.
        assert!(corr.abs() < 0.03, "lag-1 correlation {corr}");
    }

    #[test]
    fn stationary_log_variance() {
        // Var' = (1-k)^2 Var + sigma^2 has fixed point sigma^2 / (1 - (1-k)^2).
        let expected: f64 = 0.25 / (1.0 - 0.01);
        assert!((expected - 0.252525).abs() < 1e-6);
        let m = MarketModel::exp_ou(1, 30);
        let set = m.simulate_paths(100_000, 11);
        let logs: Vec<f64> = (0..set.paths).map(|p| set.log_state(p, 30)[0]).collect();
        let (_, var) = mean_var(&logs);
        assert!((var / expected - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn conditional_paths() {
        let m = MarketModel::exp_ou(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at_end = m.simulate_conditional(&[1.3, 0.9], 5, 3, &mut rng).unwrap();
        assert_eq!(at_end.cols, 1);
        for p in 0..3 {
            let s = at_end.prices(p, 0);
            assert!((s[0] - 1.3).abs() < 1e-12 && (s[1] - 0.9).abs() < 1e-12);
        }
        let seg = m.simulate_conditional(&[1.3, 0.9], 2, 4, &mut rng).unwrap();
        assert_eq!((seg.cols, seg.start_t), (4, 2));

        let mut flat = m.clone();
        flat.sigma = 0.0;
        let seg = flat.simulate_conditional(&[1.3, 0.9], 1, 5, &mut rng).unwrap();
        for p in 1..5 {
            assert_eq!(seg.path_states(p), seg.path_states(0));
        }

        assert!(m.simulate_conditional(&[1.0, 1.0], 6, 1, &mut rng).is_err());
        assert!(m.simulate_conditional(&[1.0, -1.0], 0, 1, &mut rng).is_err());
    }

    #[test]
    fn conditional_one_step_mean() {
        let m = MarketModel::exp_ou(1, 5);
        let s = 1.7f64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seg = m.simulate_conditional(&[s], 2, 20_000, &mut rng).unwrap();
        let incr: Vec<f64> = (0..seg.paths).map(|p| seg.log_state(p, 1)[0] - s.ln()).collect();
        let (mean, var) = mean_var(&incr);
        let expected = (1.0 - m.k) * (s.ln() - m.mu) + m.mu - s.ln();
        let se = (var / incr.len() as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se);
    }

    /// Two-sample Kolmogorov-Smirnov statistic.
    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn restart_matches_transition_law() {
        // Regenerate from (t, S_t) and compare with direct Box-Muller draws of
        // the one-step transition.
        let m = MarketModel::exp_ou(1, 10);
        let n = 10_000;
        let x = 0.35f64;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let seg = m.simulate_conditional(&[x.exp()], 4, n, &mut rng).unwrap();
        let mut restarted: Vec<f64> = (0..n).map(|p| seg.log_state(p, 1)[0]).collect();

        let mut other = ChaCha8Rng::seed_from_u64(78);
        let mut direct: Vec<f64> = (0..n)
            .map(|_| {
                let u1: f64 = other.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = other.random();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (1.0 - m.k) * (x - m.mu) + m.mu + m.sigma * z
            })
            .collect();
        let stat = ks_statistic(&mut restarted, &mut direct);
        let critical = 1.628 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(stat < critical, "KS {stat} >= {critical}");
    }

    #[test]
    fn dump_round_trip() {
        let m = MarketModel::exp_ou(3, 4);
        let set = m.simulate_paths(5, 8);
        let mut buf = Vec::new();
        set.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 24 + 5 * 5 * 3 * 8);
        let back = PathSet::read_dump(buf.as_slice()).unwrap();
        assert_eq!((back.paths, back.cols, back.d), (5, 5, 3));
        for p in 0..5 {
            for t in 0..5 {
                for (a, b) in back.prices(p, t).iter().zip(set.prices(p, t)) {
                    assert!((a - b).abs() <= 1e-15 * b);
                }
            }
        }
        assert!(PathSet::read_dump(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn path_matches_substream_sample() {
        let m = MarketModel::exp_ou(2, 6);
        let set = m.simulate_paths(3, 5);
        let mut rng = substream(5, Purpose::OuterPath, 2);
        assert_eq!(set.path_states(2), m.sample_path(&mut rng));
    }
}
