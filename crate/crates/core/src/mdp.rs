//! Multiple stopping with a waiting period as a Markov decision process.
//!
//! A decision state is `(t, x, ν)`: grid step, process state and remaining
//! rights. Continuing moves to `t + 1` with reward 0. Exercising pays
//! `g(t, x)`, spends a right and jumps straight to the next admissible decision
//! date `t + δ`. The episode ends when the last right is spent, when exercise
//! lands past maturity (remaining rights expire), or on continue at `t = N`.
//!
//! Network input is `[t / N, features(x), ν / n]`; successors of terminal
//! transitions are encoded as all zeros and never enter a target.

use ndarray::Array2;
use rand::Rng;

use crate::mathcore::DenseNet;
use crate::process::Process;
use crate::qlearn::Experience;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Continue = 0,
    Exercise = 1,
}

impl Action {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Greedy choice from `[continue, exercise]` head values; ties continue.
    pub fn greedy(q: [f64; 2]) -> Action {
        if q[1] > q[0] {
            Action::Exercise
        } else {
            Action::Continue
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingState<S> {
    pub t: usize,
    pub state: S,
    pub rights: usize,
    pub absorbed: bool,
}

impl<S> StoppingState<S> {
    pub fn start(state: S, rights: usize) -> Self {
        Self { t: 0, state, rights, absorbed: rights == 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub next: StoppingState<S>,
    pub reward: f64,
    pub terminal: bool,
}

pub fn encoded_len<P: Process>(process: &P) -> usize {
    process.feature_len() + 2
}

pub fn encode_into<P: Process>(
    process: &P,
    t: usize,
    state: &P::State,
    rights: usize,
    total_rights: usize,
    out: &mut [f64],
) {
    let last = out.len() - 1;
    out[0] = t as f64 / process.steps() as f64;
    process.write_features(state, &mut out[1..last]);
    out[last] = rights as f64 / total_rights as f64;
}

pub fn encode<P: Process>(process: &P, s: &StoppingState<P::State>, total_rights: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(process)];
    if !s.absorbed {
        encode_into(process, s.t, &s.state, s.rights, total_rights, &mut out);
    }
    out
}

/// Applies `action` at `state`, reading prices from `path` (steps `0..=N`).
pub fn step<P: Process>(
    process: &P,
    state: &StoppingState<P::State>,
    action: Action,
    path: &[P::State],
    delta: usize,
) -> Result<Transition<P::State>> {
    if state.absorbed || state.rights == 0 {
        return Err(Error::Absorbed);
    }
    let n_steps = process.steps();
    if state.t > n_steps {
        return Err(Error::Data(format!("decision at step {} past maturity {n_steps}", state.t)));
    }
    let at = |t: usize| path[t.min(n_steps)].clone();
    Ok(match action {
        Action::Continue => {
            let t = state.t + 1;
            Transition {
                next: StoppingState { t, state: at(t), rights: state.rights, absorbed: false },
                reward: 0.0,
                terminal: t > n_steps,
            }
        }
        Action::Exercise => {
            let reward = process.payoff(state.t, &path[state.t]);
            let rights = state.rights - 1;
            let t = state.t + delta;
            Transition {
                next: StoppingState { t, state: at(t), rights, absorbed: rights == 0 },
                reward,
                terminal: rights == 0 || t > n_steps,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub experiences: Vec<Experience>,
    pub exercise_times: Vec<usize>,
    pub total_reward: f64,
}

/// Q-values of every reachable decision state along `path`, indexed
/// `[rights - 1][t]`, from one batched forward pass.
fn path_q_table<P: Process>(net: &DenseNet, process: &P, path: &[P::State], n: usize) -> Vec<Vec<[f64; 2]>> {
    let cols = process.steps() + 1;
    let width = encoded_len(process);
    let mut input = Array2::<f64>::zeros((n * cols, width));
    for (r, mut row) in input.rows_mut().into_iter().enumerate() {
        let (rights, t) = (r / cols + 1, r % cols);
        encode_into(process, t, &path[t], rights, n, row.as_slice_mut().expect("standard layout"));
    }
    let out = net.forward(input.view()).expect("network width checked by caller");
    (0..n)
        .map(|v| (0..cols).map(|t| [out[[v * cols + t, 0]], out[[v * cols + t, 1]]]).collect())
        .collect()
}

/// Runs one ε-greedy episode along `path` with `n` rights and waiting period
/// `delta`. With probability `eps` the action is a fair coin flip, otherwise
/// greedy on the network heads (ties continue).
pub fn generate_episode<P: Process, R: Rng + ?Sized>(
    net: &DenseNet,
    process: &P,
    n: usize,
    delta: usize,
    eps: f64,
    path: &[P::State],
    rng: &mut R,
) -> Result<Episode> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("exploration probability {eps} outside [0, 1]")));
    }
    if n == 0 || delta == 0 {
        return Err(Error::Config("need n >= 1 and delta >= 1".into()));
    }
    if net.input_dim() != encoded_len(process) {
        return Err(Error::Shape(format!(
            "network expects {} inputs, encoding has {}",
            net.input_dim(),
            encoded_len(process)
        )));
    }
    if path.len() != process.steps() + 1 {
        return Err(Error::Shape(format!("path has {} states, need {}", path.len(), process.steps() + 1)));
    }
    let q = if eps < 1.0 { Some(path_q_table(net, process, path, n)) } else { None };

    let mut state = StoppingState::start(path[0].clone(), n);
    let mut episode = Episode { experiences: Vec::new(), exercise_times: Vec::new(), total_reward: 0.0 };
    loop {
        let explore = rng.random::<f64>() < eps;
        let action = match (&q, explore) {
            (Some(q), false) => Action::greedy(q[state.rights - 1][state.t]),
            _ => {
                if rng.random_bool(0.5) {
                    Action::Exercise
                } else {
                    Action::Continue
                }
            }
        };
        let tr = step(process, &state, action, path, delta)?;
        if action == Action::Exercise {
            episode.exercise_times.push(state.t);
        }
        episode.total_reward += tr.reward;
        let s_next = if tr.terminal {
            vec![0.0; encoded_len(process)]
        } else {
            encode(process, &tr.next, n)
        };
        episode.experiences.push(Experience {
            s: encode(process, &state, n),
            action,
            reward: tr.reward,
            s_next,
            terminal: tr.terminal,
        });
        if tr.terminal {
            return Ok(episode);
        }
        state = tr.next;
    }
}

/// Exercise plan check: increasing, gaps `>= delta`, at most `n` entries.
pub fn is_admissible(times: &[usize], n: usize, delta: usize) -> bool {
    times.len() <= n && times.windows(2).all(|w| w[1] >= w[0] + delta)
}
