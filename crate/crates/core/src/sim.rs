//! Trajectory simulation.
//!
//! One step of the process: draw an unordered pair from the activation
//! distribution, then move each activated *regular* agent to the pair's
//! average opinion. Stubborn agents never move, and a self-pair changes
//! nothing (it exists so the per-step event distribution sums to exactly
//! one). Updates touch at most two coordinates, so a step is O(log #events)
//! for the draw plus O(1) for the update — no matrices anywhere.
//!
//! Observers receive every post-update state, which is how the running
//! averages, trajectory recorders, and the online detector tap a run
//! without the simulator knowing about any of them.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::GossipNetwork;
use crate::rng::{stream, stream_rng};

/// Errors from trajectory setup.
#[derive(Debug, Error)]
pub enum SimError {
    /// The initial state has the wrong length.
    #[error("initial state has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A stubborn coordinate of the initial state disagrees with the
    /// network's fixed opinion for that agent.
    #[error("initial state sets agent {agent} to {got}, but its fixed opinion is {expected}")]
    StubbornMismatch {
        agent: usize,
        expected: f64,
        got: f64,
    },
    /// The initial state contains NaN or infinity.
    #[error("initial state has a non-finite opinion at agent {agent}")]
    NonFinite { agent: usize },
    /// Replication count must be positive.
    #[error("need at least one replication")]
    NoReplications,
}

/// Receives every post-update state of a run. `changed` lists the
/// coordinates the step assigned (at most two, empty for a no-op step).
pub trait Observer {
    fn on_step(&mut self, t: u64, changed: &[usize], x: &[f64]);
}

/// Draws unordered pairs `{i, j}` (including no-op self-pairs) from the
/// activation distribution by inverse-CDF lookup over the events with
/// positive mass.
#[derive(Debug, Clone)]
pub struct PairSampler {
    events: Vec<(u32, u32)>,
    cumulative: Vec<f64>,
}

impl PairSampler {
    pub fn new(net: &GossipNetwork) -> Self {
        let n = net.n();
        let mut events = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for i in 0..n {
            for j in i..n {
                let p = net.pair_probability(i, j);
                if p > 0.0 {
                    total += p;
                    events.push((i as u32, j as u32));
                    cumulative.push(total);
                }
            }
        }
        PairSampler { events, cumulative }
    }

    /// Total probability mass of the table; 1 up to rounding for any
    /// validated network.
    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Number of positive-probability events.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Draws one pair. The draw consumes exactly one `f64` from the
    /// generator, which keeps trajectories byte-reproducible across runs.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random::<f64>() * self.total_mass();
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.events.len() - 1);
        let (i, j) = self.events[idx];
        (i as usize, j as usize)
    }
}

/// Applies the pair `{i, j}` update in place: regular activated agents move
/// to the pair average, stubborn ones stay. Returns the assigned
/// coordinates as `(buffer, count)`.
pub fn apply_pair_update(
    net: &GossipNetwork,
    x: &mut [f64],
    i: usize,
    j: usize,
) -> ([usize; 2], u8) {
    let mut changed = [0usize; 2];
    if i == j {
        return (changed, 0);
    }
    let average = 0.5 * (x[i] + x[j]);
    let mut count = 0u8;
    if net.is_regular(i) {
        x[i] = average;
        changed[count as usize] = i;
        count += 1;
    }
    if net.is_regular(j) {
        x[j] = average;
        changed[count as usize] = j;
        count += 1;
    }
    (changed, count)
}

/// What one step did: the activated pair and the coordinates it assigned.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub pair: (usize, usize),
    changed: [usize; 2],
    count: u8,
}

impl StepOutcome {
    pub fn changed(&self) -> &[usize] {
        &self.changed[..self.count as usize]
    }
}

/// A trajectory in progress: the step counter, the current opinions, and
/// the generator that drives the remaining randomness.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub t: u64,
    pub x: Vec<f64>,
    pub rng: rand_chacha::ChaCha8Rng,
}

/// Runs trajectories over a fixed network. Cheap to construct; the pair
/// table is built once and shared by every run.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    net: &'a GossipNetwork,
    sampler: PairSampler,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a GossipNetwork) -> Self {
        Simulator {
            net,
            sampler: PairSampler::new(net),
        }
    }

    pub fn network(&self) -> &GossipNetwork {
        self.net
    }

    /// Checks an initial state: right length, finite, stubborn coordinates
    /// exactly at their fixed opinions.
    pub fn check_initial(&self, x0: &[f64]) -> Result<(), SimError> {
        let n = self.net.n();
        if x0.len() != n {
            return Err(SimError::DimensionMismatch {
                expected: n,
                got: x0.len(),
            });
        }
        for (agent, &x) in x0.iter().enumerate() {
            if !x.is_finite() {
                return Err(SimError::NonFinite { agent });
            }
        }
        for (&agent, &fixed) in self.net.stubborn().iter().zip(self.net.stubborn_states()) {
            if x0[agent] != fixed {
                return Err(SimError::StubbornMismatch {
                    agent,
                    expected: fixed,
                    got: x0[agent],
                });
            }
        }
        Ok(())
    }

    /// Validates `x0` and wraps it into a runnable state at `t = 0`.
    pub fn start(
        &self,
        x0: &[f64],
        rng: rand_chacha::ChaCha8Rng,
    ) -> Result<TrajectoryState, SimError> {
        self.check_initial(x0)?;
        Ok(TrajectoryState {
            t: 0,
            x: x0.to_vec(),
            rng,
        })
    }

    /// Advances the trajectory one step.
    pub fn step(&self, state: &mut TrajectoryState) -> StepOutcome {
        let (i, j) = self.sampler.sample(&mut state.rng);
        let (changed, count) = apply_pair_update(self.net, &mut state.x, i, j);
        state.t += 1;
        StepOutcome {
            pair: (i, j),
            changed,
            count,
        }
    }

    /// Runs `steps` steps from `x0`, invoking every observer once per step
    /// with the post-update state, and returns the final state.
    pub fn run(
        &self,
        x0: &[f64],
        steps: u64,
        rng: rand_chacha::ChaCha8Rng,
        observers: &mut [&mut dyn Observer],
    ) -> Result<TrajectoryState, SimError> {
        let mut state = self.start(x0, rng)?;
        for _ in 0..steps {
            let outcome = self.step(&mut state);
            for obs in observers.iter_mut() {
                obs.on_step(state.t, outcome.changed(), &state.x);
            }
        }
        Ok(state)
    }
}

/// Draws an initial state: regular agents i.i.d. standard normal (one draw
/// per regular agent in ascending index order), stubborn agents at their
/// fixed opinions.
pub fn initial_state_gaussian<R: Rng + ?Sized>(net: &GossipNetwork, rng: &mut R) -> Vec<f64> {
    (0..net.n())
        .map(|agent| match net.stubborn_state(agent) {
            Some(fixed) => fixed,
            None => rng.sample(StandardNormal),
        })
        .collect()
}

/// Streaming mean of selected coordinates, using the same `t/(t+1)`
/// recursion as the detector, so the two never drift apart numerically.
#[derive(Debug, Clone)]
pub struct RunningAverage {
    indices: Vec<usize>,
    s: Vec<f64>,
    count: u64,
}

impl RunningAverage {
    /// Averages the given coordinates (typically the regular agents).
    pub fn over(indices: Vec<usize>) -> Self {
        let s = vec![0.0; indices.len()];
        RunningAverage {
            indices,
            s,
            count: 0,
        }
    }

    /// Averages every regular agent of the network.
    pub fn for_regulars(net: &GossipNetwork) -> Self {
        Self::over(net.regular().to_vec())
    }

    /// Folds one state into the average. Call this once with the initial
    /// state before a run so the average covers `x(0)` as well.
    pub fn push(&mut self, x: &[f64]) {
        let t = self.count as f64;
        for (slot, &idx) in self.indices.iter().enumerate() {
            self.s[slot] = (t * self.s[slot] + x[idx]) / (t + 1.0);
        }
        self.count += 1;
    }

    /// Current averages, aligned with the constructor's indices.
    pub fn mean(&self) -> &[f64] {
        &self.s
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of states folded in.
    pub fn count(&self) -> u64 {
        self.count
    }
}

impl Observer for RunningAverage {
    fn on_step(&mut self, _t: u64, _changed: &[usize], x: &[f64]) {
        self.push(x);
    }
}

/// Records full states, one per step. Call [`StateRecorder::record`] with
/// the initial state first to capture the whole trajectory from `t = 0`.
/// Memory is `O(steps · n)` — meant for short diagnostic runs.
#[derive(Debug, Clone, Default)]
pub struct StateRecorder {
    pub states: Vec<Vec<f64>>,
}

impl StateRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, x: &[f64]) {
        self.states.push(x.to_vec());
    }
}

impl Observer for StateRecorder {
    fn on_step(&mut self, _t: u64, _changed: &[usize], x: &[f64]) {
        self.record(x);
    }
}

/// Final-state statistics over independent replications of the same run.
#[derive(Debug, Clone)]
pub struct ReplicationStats {
    /// Per-coordinate mean of `x(T)` across replications.
    pub mean: Vec<f64>,
    /// Per-coordinate standard error of that mean (sample standard
    /// deviation over √R); zero when only one replication ran.
    pub std_err: Vec<f64>,
    pub replications: usize,
    pub horizon: u64,
}

/// Runs `replications` independent trajectories of `horizon` steps from the
/// same `x0` and averages the final states. Replication `r` draws from the
/// dedicated stream `REPLICATION + r` of `master_seed`, so the result does
/// not depend on thread scheduling. Runs on the crate's worker pool (capped
/// by `GOSSIP_BLOCKS_THREADS`).
pub fn empirical_expectation(
    net: &GossipNetwork,
    x0: &[f64],
    horizon: u64,
    replications: usize,
    master_seed: u64,
) -> Result<ReplicationStats, SimError> {
    if replications == 0 {
        return Err(SimError::NoReplications);
    }
    let simulator = Simulator::new(net);
    simulator.check_initial(x0)?;

    let finals: Vec<Vec<f64>> = worker_pool().install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let rng = stream_rng(master_seed, stream::REPLICATION + r as u64);
                let state = simulator
                    .run(x0, horizon, rng, &mut [])
                    .expect("initial state already checked");
                state.x
            })
            .collect()
    });

    let n = net.n();
    let r = replications as f64;
    let mut mean = vec![0.0; n];
    for x in &finals {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= r;
    }
    let mut std_err = vec![0.0; n];
    if replications > 1 {
        for x in &finals {
            for (s, (&v, &m)) in std_err.iter_mut().zip(x.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std_err {
            *s = (*s / (r - 1.0)).sqrt() / r.sqrt();
        }
    }
    Ok(ReplicationStats {
        mean,
        std_err,
        replications,
        horizon,
    })
}

/// The shared worker pool for replication fan-out. Thread count comes from
/// `GOSSIP_BLOCKS_THREADS` when set (minimum 1), otherwise rayon's default.
pub fn worker_pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(threads) = std::env::var("GOSSIP_BLOCKS_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
        {
            builder = builder.num_threads(threads.max(1));
        }
        builder.build().expect("worker pool construction")
    })
}
