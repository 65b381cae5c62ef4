//! The Markov state process underlying a stopping problem, and Q-functions on it.
//!
//! Training, policy evaluation and the dual bound only need to simulate the
//! process forward, read payoffs and turn states into network features. Both
//! the exponential OU market and the finite test chains implement [`Process`],
//! so the same bound estimators run against a learned network or exact tables.

use ndarray::Array2;
use rand::Rng;

use crate::mathcore::DenseNet;
use crate::mdp;
use crate::{Error, Result};

pub trait Process: Sync {
    type State: Clone + Send + Sync;

    /// Last exercise date `N`; the grid is `0..=N`.
    fn steps(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// One transition from step `t` to `t + 1`.
    fn advance<R: Rng + ?Sized>(&self, t: usize, state: &Self::State, rng: &mut R) -> Self::State;

    /// Undiscounted payoff; zero for `t > N`.
    fn payoff(&self, t: usize, state: &Self::State) -> f64;

    /// Width of the state part of the network input.
    fn feature_len(&self) -> usize;

    fn write_features(&self, state: &Self::State, out: &mut [f64]);

    /// Full path over `0..=N` starting from the initial state.
    fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Self::State> {
        self.continuation(0, &self.initial_state(), self.steps(), rng)
    }

    /// `start` followed by up to `len` further states, never past step `N`.
    fn continuation<R: Rng + ?Sized>(
        &self,
        t: usize,
        start: &Self::State,
        len: usize,
        rng: &mut R,
    ) -> Vec<Self::State> {
        let len = len.min(self.steps().saturating_sub(t));
        let mut out = Vec::with_capacity(len + 1);
        out.push(start.clone());
        for s in t..t + len {
            let next = self.advance(s, &out[s - t], rng);
            out.push(next);
        }
        out
    }
}

/// Head values `[continue, exercise]` at `(t, state)` with `rights` remaining.
///
/// The continue head estimates `q^ν(t, x) = E[y^ν(t+1) | x]` and the exercise
/// head `g(t, x) + E[y^{ν-1}(t+δ) | x]`. Callers only query `1 <= rights` and
/// `t <= N`.
pub trait QFunction<P: Process>: Sync {
    fn q_batch(&self, process: &P, t: usize, states: &[P::State], rights: usize) -> Vec<[f64; 2]>;

    fn q_values(&self, process: &P, t: usize, state: &P::State, rights: usize) -> [f64; 2] {
        self.q_batch(process, t, std::slice::from_ref(state), rights)[0]
    }
}

/// A trained network viewed as a Q-function for an `n`-right contract.
#[derive(Debug, Clone, Copy)]
pub struct NetQ<'a> {
    pub net: &'a DenseNet,
    pub total_rights: usize,
}

impl<'a> NetQ<'a> {
    pub fn new(net: &'a DenseNet, total_rights: usize) -> Self {
        Self { net, total_rights }
    }

    /// Like [`NetQ::new`] but checks the network against the process encoding.
    pub fn checked<P: Process>(net: &'a DenseNet, process: &P, total_rights: usize) -> Result<Self> {
        let width = mdp::encoded_len(process);
        if net.input_dim() != width || net.output_dim() != 2 {
            return Err(Error::Shape(format!(
                "network maps {} -> {}, process needs {width} -> 2",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if total_rights == 0 {
            return Err(Error::Config("contract needs at least one exercise right".into()));
        }
        Ok(Self { net, total_rights })
    }
}

impl<P: Process> QFunction<P> for NetQ<'_> {
    fn q_batch(&self, process: &P, t: usize, states: &[P::State], rights: usize) -> Vec<[f64; 2]> {
        let width = mdp::encoded_len(process);
        let mut input = Array2::<f64>::zeros((states.len(), width));
        for (mut row, state) in input.rows_mut().into_iter().zip(states) {
            mdp::encode_into(
                process,
                t,
                state,
                rights,
                self.total_rights,
                row.as_slice_mut().expect("standard layout"),
            );
        }
        let out = self
            .net
            .forward(input.view())
            .expect("network input width must match the process encoding");
        out.rows().into_iter().map(|r| [r[0], r[1]]).collect()
    }
}
