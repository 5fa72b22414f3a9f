//! Online community detection and weight estimation from one trajectory.
//!
//! The detector watches the opinion stream and maintains, per step:
//!
//! * a running mean `s` of every regular agent's opinion (the `t/(t+1)`
//!   recursion, so no history is stored);
//! * community labels: regular agents above the mean-of-means go to
//!   community 1, the rest (ties included) to community 2, and each
//!   stubborn agent inherits the label of a designated regular *anchor* —
//!   a stubborn agent's opinion is constant, so its own stream carries no
//!   community signal;
//! * weight estimates `(ŵ_s, ŵ_d)` driven by a signed
//!   stochastic-approximation step with gain `1/t`, with `ŵ_d` always
//!   derived from `ŵ_s` through the total-mass constraint
//!   `(n̂₁² + n̂₂²)·ŵ_s + 2·n̂₁·n̂₂·ŵ_d = 1` over the current size
//!   estimates.
//!
//! The first observation only seeds the running means; every later one runs
//! the full classify-then-estimate loop. When the current labels degenerate
//! (no regular agent labeled 1, or an empty community), the weight step is
//! skipped for that observation — labels and running means still update —
//! and the skip is counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{BlockModel, Community, CommunityAssignment, GossipNetwork, StubbornPrior};
use crate::sim::Observer;

/// Errors from detector construction and feeding.
#[derive(Debug, Error)]
pub enum DetectorError {
    /// A listed regular agent is out of range.
    #[error("regular agent index {agent} out of range for {n} agents")]
    RegularOutOfRange { agent: usize, n: usize },
    /// A stubborn agent has no anchor in the prior.
    #[error("stubborn agent {agent} has no anchor")]
    MissingAnchor { agent: usize },
    /// An anchor is not a regular agent of the network.
    #[error("anchor {anchor} for stubborn agent {agent} is not a regular agent")]
    AnchorNotRegular { agent: usize, anchor: usize },
    /// An observation has the wrong dimension.
    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A stubborn opinion changed between observations, which breaks the
    /// premise of the whole estimator.
    #[error("stubborn opinion {slot} changed between observations ({before} -> {after})")]
    StubbornChanged { slot: usize, before: f64, after: f64 },
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Label-partition sums feeding one estimation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSums {
    /// Number of regular agents labeled 1.
    pub vr1_count: usize,
    /// Sum of running means over regular agents labeled 1.
    pub vr1_sum: f64,
    /// Sum of running means over regular agents labeled 2.
    pub vr2_sum: f64,
    /// Sum of fixed opinions over stubborn agents labeled 1.
    pub vs1_sum: f64,
    /// Sum of fixed opinions over stubborn agents labeled 2.
    pub vs2_sum: f64,
    /// Total agents labeled 1 (regular and stubborn).
    pub n1: usize,
    /// Total agents labeled 2.
    pub n2: usize,
}

/// The derived quantities of one estimation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationTerms {
    pub beta1: f64,
    pub beta2: f64,
    /// The drift coefficient `g = β₁ − ((n₁² + n₂²)/(2n₁n₂))·β₂`.
    pub g: f64,
    /// `2·n₁·n₂`.
    pub denom: f64,
}

impl EstimationTerms {
    /// Evaluates the β/g terms, or `None` when the partition is degenerate
    /// (no regular agent labeled 1, or an empty side).
    pub fn from_sums(sums: &PartitionSums) -> Option<Self> {
        if sums.vr1_count == 0 || sums.n1 == 0 || sums.n2 == 0 {
            return None;
        }
        let vr1_count = sums.vr1_count as f64;
        let n1 = sums.n1 as f64;
        let n2 = sums.n2 as f64;
        let vs1_count = sums.n1 as f64 - vr1_count;
        let beta1 = (vs1_count / vr1_count) * sums.vr1_sum - sums.vs1_sum;
        let beta2 = (n2 / vr1_count) * sums.vr1_sum - sums.vr2_sum - sums.vs2_sum;
        let denom = 2.0 * n1 * n2;
        let g = beta1 - ((n1 * n1 + n2 * n2) / denom) * beta2;
        Some(EstimationTerms {
            beta1,
            beta2,
            g,
            denom,
        })
    }

    /// The inner factor of the weight step at a given `w_s`:
    /// `g·w_s + β₂/(2n₁n₂)`. The estimate moves by `-(1/t)·sgn(g)` times
    /// this; at the true weights and labels, with running means at their
    /// stationary values, it vanishes.
    pub fn drift(&self, w_s: f64) -> f64 {
        self.g * w_s + self.beta2 / self.denom
    }
}

/// The drift factor evaluated at the model's true labels, true sizes, and
/// stationary mean opinions `(χ₁, χ₂)` — the fixed-point diagnostic. `None`
/// when community 1 has no regular agents.
pub fn stationary_drift(m: &BlockModel, chi1: f64, chi2: f64) -> Option<f64> {
    let sums = PartitionSums {
        vr1_count: m.n_r1,
        vr1_sum: m.n_r1 as f64 * chi1,
        vr2_sum: m.n_r2 as f64 * chi2,
        vs1_sum: m.x_s1.iter().sum(),
        vs2_sum: m.x_s2.iter().sum(),
        n1: m.n1,
        n2: m.n2,
    };
    EstimationTerms::from_sums(&sums).map(|terms| terms.drift(m.w_s))
}

/// The online detector/estimator. Construct with the known regular set and
/// anchors, then feed it every observed state in order — directly via
/// [`Detector::observe`]/[`Detector::observe_full`], or as a simulation
/// [`Observer`].
#[derive(Debug, Clone)]
pub struct Detector {
    n: usize,
    regular: Vec<usize>,
    stubborn: Vec<usize>,
    /// Per stubborn slot, the regular agent whose label it inherits.
    anchor_agent: Vec<usize>,
    s_r: Vec<f64>,
    labels: CommunityAssignment,
    next_labels: CommunityAssignment,
    w_s_hat: f64,
    w_d_hat: f64,
    n1_hat: usize,
    n2_hat: usize,
    t: u64,
    started: bool,
    skipped_updates: u64,
    last_partition_change: u64,
    x_s_ref: Option<Vec<f64>>,
    scratch_r: Vec<f64>,
    scratch_s: Vec<f64>,
}

impl Detector {
    /// Builds a detector for `n` agents with the given regular set. Initial
    /// labels are uniform random, `ŵ_s(0)` uniform in `(0, 2)` and
    /// `ŵ_d(0)` uniform in `(0, 1)`; all are drawn from a ChaCha8 generator
    /// seeded with `seed`, in that order, so a detector is reproducible
    /// from its seed alone.
    pub fn new(
        n: usize,
        regular: &[usize],
        prior: &StubbornPrior,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        let mut regular = regular.to_vec();
        regular.sort_unstable();
        regular.dedup();
        if let Some(&agent) = regular.iter().find(|&&a| a >= n) {
            return Err(DetectorError::RegularOutOfRange { agent, n });
        }
        let stubborn: Vec<usize> = (0..n).filter(|a| regular.binary_search(a).is_err()).collect();
        let mut anchor_agent = Vec::with_capacity(stubborn.len());
        for &agent in &stubborn {
            let anchor = prior
                .anchor_of(agent)
                .ok_or(DetectorError::MissingAnchor { agent })?;
            if regular.binary_search(&anchor).is_err() {
                return Err(DetectorError::AnchorNotRegular { agent, anchor });
            }
            anchor_agent.push(anchor);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = CommunityAssignment::new(
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        Community::One
                    } else {
                        Community::Two
                    }
                })
                .collect(),
        );
        let w_s_hat = rng.random_range(0.0..2.0);
        let w_d_hat = rng.random_range(0.0..1.0);
        let n1_hat = labels.count(Community::One);
        let n2_hat = n - n1_hat;

        Ok(Detector {
            n,
            s_r: vec![0.0; regular.len()],
            next_labels: labels.clone(),
            labels,
            anchor_agent,
            w_s_hat,
            w_d_hat,
            n1_hat,
            n2_hat,
            t: 0,
            started: false,
            skipped_updates: 0,
            last_partition_change: 0,
            x_s_ref: None,
            scratch_r: Vec::with_capacity(regular.len()),
            scratch_s: Vec::with_capacity(stubborn.len()),
            regular,
            stubborn,
        })
    }

    /// Convenience constructor taking the sets from a network.
    pub fn for_network(
        net: &GossipNetwork,
        prior: &StubbornPrior,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        Self::new(net.n(), net.regular(), prior, seed)
    }

    /// Feeds one observation, split into regular opinions (ascending agent
    /// order) and stubborn opinions (ascending agent order). The first call
    /// seeds the running means and changes nothing else; later calls run
    /// the full classify-then-estimate loop.
    pub fn observe(&mut self, x_r: &[f64], x_s: &[f64]) -> Result<(), DetectorError> {
        if x_r.len() != self.regular.len() {
            return Err(DetectorError::DimensionMismatch {
                what: "regular observation",
                expected: self.regular.len(),
                got: x_r.len(),
            });
        }
        if x_s.len() != self.stubborn.len() {
            return Err(DetectorError::DimensionMismatch {
                what: "stubborn observation",
                expected: self.stubborn.len(),
                got: x_s.len(),
            });
        }
        match &self.x_s_ref {
            Some(reference) => {
                for (slot, (&before, &after)) in reference.iter().zip(x_s).enumerate() {
                    if before != after {
                        return Err(DetectorError::StubbornChanged {
                            slot,
                            before,
                            after,
                        });
                    }
                }
            }
            None => self.x_s_ref = Some(x_s.to_vec()),
        }

        if !self.started {
            self.s_r.copy_from_slice(x_r);
            self.started = true;
            return Ok(());
        }

        self.t += 1;
        let t = self.t as f64;

        // Running means over the regular opinions.
        for (s, &x) in self.s_r.iter_mut().zip(x_r) {
            *s = (t * *s + x) / (t + 1.0);
        }

        // Threshold classification of the regular agents, then anchor
        // copy-through for the stubborn ones.
        let s_bar = self.s_r.iter().sum::<f64>() / self.s_r.len().max(1) as f64;
        for (slot, &agent) in self.regular.iter().enumerate() {
            let label = if self.s_r[slot] > s_bar {
                Community::One
            } else {
                Community::Two
            };
            self.next_labels.set(agent, label);
        }
        for (slot, &agent) in self.stubborn.iter().enumerate() {
            let label = self.next_labels.get(self.anchor_agent[slot]);
            self.next_labels.set(agent, label);
        }
        if !self.next_labels.same_partition(&self.labels) {
            self.last_partition_change = self.t;
        }
        std::mem::swap(&mut self.labels, &mut self.next_labels);
        self.n1_hat = self.labels.count(Community::One);
        self.n2_hat = self.n - self.n1_hat;

        // Signed stochastic-approximation step on ŵ_s, with ŵ_d slaved to
        // the mass constraint. Degenerate partitions skip the step.
        match EstimationTerms::from_sums(&self.partition_sums(x_s)) {
            Some(terms) => {
                let tentative = self.w_s_hat - (1.0 / t) * sgn(terms.g) * terms.drift(self.w_s_hat);
                self.w_s_hat = if tentative.abs() < 2.0 { tentative } else { 0.5 };
                let n1 = self.n1_hat as f64;
                let n2 = self.n2_hat as f64;
                self.w_d_hat = (1.0 - (n1 * n1 + n2 * n2) * self.w_s_hat) / (2.0 * n1 * n2);
            }
            None => self.skipped_updates += 1,
        }
        Ok(())
    }

    /// Feeds one observation given as the full state vector.
    pub fn observe_full(&mut self, x: &[f64]) -> Result<(), DetectorError> {
        if x.len() != self.n {
            return Err(DetectorError::DimensionMismatch {
                what: "full observation",
                expected: self.n,
                got: x.len(),
            });
        }
        let mut x_r = std::mem::take(&mut self.scratch_r);
        let mut x_s = std::mem::take(&mut self.scratch_s);
        x_r.clear();
        x_r.extend(self.regular.iter().map(|&a| x[a]));
        x_s.clear();
        x_s.extend(self.stubborn.iter().map(|&a| x[a]));
        let result = self.observe(&x_r, &x_s);
        self.scratch_r = x_r;
        self.scratch_s = x_s;
        result
    }

    fn partition_sums(&self, x_s: &[f64]) -> PartitionSums {
        let mut sums = PartitionSums {
            vr1_count: 0,
            vr1_sum: 0.0,
            vr2_sum: 0.0,
            vs1_sum: 0.0,
            vs2_sum: 0.0,
            n1: self.n1_hat,
            n2: self.n2_hat,
        };
        for (slot, &agent) in self.regular.iter().enumerate() {
            match self.labels.get(agent) {
                Community::One => {
                    sums.vr1_count += 1;
                    sums.vr1_sum += self.s_r[slot];
                }
                Community::Two => sums.vr2_sum += self.s_r[slot],
            }
        }
        for (slot, &agent) in self.stubborn.iter().enumerate() {
            match self.labels.get(agent) {
                Community::One => sums.vs1_sum += x_s[slot],
                Community::Two => sums.vs2_sum += x_s[slot],
            }
        }
        sums
    }

    /// Current labels over all agents.
    pub fn labels(&self) -> &CommunityAssignment {
        &self.labels
    }

    /// Current estimate of the within-community weight.
    pub fn w_s_hat(&self) -> f64 {
        self.w_s_hat
    }

    /// Current estimate of the across-community weight.
    pub fn w_d_hat(&self) -> f64 {
        self.w_d_hat
    }

    /// Current community-size estimates `(n̂₁, n̂₂)`.
    pub fn size_estimates(&self) -> (usize, usize) {
        (self.n1_hat, self.n2_hat)
    }

    /// Number of full observations processed (the seeding observation not
    /// counted).
    pub fn time(&self) -> u64 {
        self.t
    }

    /// How many estimation steps were skipped due to degenerate partitions.
    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    /// The last time the labels changed as a partition (0 if never).
    pub fn last_partition_change(&self) -> u64 {
        self.last_partition_change
    }

    /// Running mean opinions, aligned with [`Detector::regular_agents`].
    pub fn running_means(&self) -> &[f64] {
        &self.s_r
    }

    pub fn regular_agents(&self) -> &[usize] {
        &self.regular
    }

    pub fn stubborn_agents(&self) -> &[usize] {
        &self.stubborn
    }
}

impl Observer for Detector {
    fn on_step(&mut self, _t: u64, _changed: &[usize], x: &[f64]) {
        self.observe_full(x)
            .expect("observation stream inconsistent with detector setup");
    }
}

/// True when the trailing `window` assignments all induce the same
/// partition (label swaps ignored). Shorter histories return false.
pub fn has_converged(history: &[CommunityAssignment], window: usize) -> bool {
    assert!(window >= 1, "window must be positive");
    if history.len() < window {
        return false;
    }
    let last = &history[history.len() - 1];
    history[history.len() - window..]
        .iter()
        .all(|a| a.same_partition(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::stationary_expectation;
    use crate::model::BlockModel;
    use crate::rng::{stream, stream_rng};
    use crate::sim::{initial_state_gaussian, Simulator};
    use approx::assert_abs_diff_eq;

    fn five_node_detector(seed: u64) -> Detector {
        let m = BlockModel::five_node_demo();
        let net = m.to_network().unwrap();
        let prior = m.default_anchors().unwrap();
        Detector::for_network(&net, &prior, seed).unwrap()
    }

    #[test]
    fn construction_is_reproducible_and_seed_sensitive() {
        let a = five_node_detector(1);
        let b = five_node_detector(1);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.w_s_hat(), b.w_s_hat());
        assert_eq!(a.w_d_hat(), b.w_d_hat());
        assert!(a.w_s_hat() > 0.0 && a.w_s_hat() < 2.0);
        assert!(a.w_d_hat() > 0.0 && a.w_d_hat() < 1.0);

        // Some nearby seed must give different labels; scan a few.
        assert!((2..12).any(|s| five_node_detector(s).labels() != a.labels()));
    }

    #[test]
    fn anchor_validation() {
        let m = BlockModel::five_node_demo();
        let net = m.to_network().unwrap();

        let empty = StubbornPrior::default();
        assert!(matches!(
            Detector::for_network(&net, &empty, 0),
            Err(DetectorError::MissingAnchor { agent: 1 })
        ));

        let bad = StubbornPrior::from_text("2 5\n5 3\n").unwrap(); // anchor 5 is stubborn
        assert!(matches!(
            Detector::for_network(&net, &bad, 0),
            Err(DetectorError::AnchorNotRegular { agent: 1, anchor: 4 })
        ));

        assert!(matches!(
            Detector::new(3, &[0, 7], &empty, 0),
            Err(DetectorError::RegularOutOfRange { agent: 7, n: 3 })
        ));
    }

    #[test]
    fn first_observation_only_seeds_the_means() {
        let mut d = five_node_detector(3);
        let labels_before = d.labels().clone();
        let (ws, wd) = (d.w_s_hat(), d.w_d_hat());
        d.observe(&[0.3, -0.2, 0.9], &[1.0, 0.0]).unwrap();
        assert_eq!(d.time(), 0);
        assert_eq!(d.running_means(), &[0.3, -0.2, 0.9]);
        assert_eq!(d.labels(), &labels_before);
        assert_eq!((d.w_s_hat(), d.w_d_hat()), (ws, wd));
        assert_eq!(d.skipped_updates(), 0);
    }

    #[test]
    fn running_means_track_the_observation_average() {
        let mut d = five_node_detector(3);
        let seq = [
            [0.3, -0.2, 0.9],
            [0.1, 0.4, 0.5],
            [-0.6, 0.2, 0.0],
            [0.8, 0.8, 0.8],
        ];
        for x_r in &seq {
            d.observe(x_r, &[1.0, 0.0]).unwrap();
        }
        for slot in 0..3 {
            let mean = seq.iter().map(|x| x[slot]).sum::<f64>() / seq.len() as f64;
            assert_abs_diff_eq!(d.running_means()[slot], mean, epsilon = 1e-12);
        }
        assert_eq!(d.time(), seq.len() as u64 - 1);
    }

    #[test]
    fn ties_go_to_community_two_and_degenerate_partitions_skip_the_step() {
        let mut d = five_node_detector(3);
        let (ws, wd) = (d.w_s_hat(), d.w_d_hat());
        // All regular opinions identical: every running mean equals the
        // mean-of-means, nobody exceeds it, everyone lands in community 2
        // and the estimation step must be skipped (n̂₁ = 0).
        d.observe(&[0.5, 0.5, 0.5], &[1.0, 0.0]).unwrap();
        d.observe(&[0.5, 0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(d.labels().to_numbers(), vec![2; 5]);
        assert_eq!(d.size_estimates(), (0, 5));
        assert_eq!(d.skipped_updates(), 1);
        assert_eq!((d.w_s_hat(), d.w_d_hat()), (ws, wd));
    }

    #[test]
    fn stubborn_agents_inherit_their_anchor_label() {
        let mut d = five_node_detector(3);
        // Regular agents: 0 (anchor of 1), 2 (anchor of 4), 3. Make agent 0
        // clearly above the mean and agents 2–3 below.
        d.observe(&[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        d.observe(&[1.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        let labels = d.labels();
        assert_eq!(labels.get(1), labels.get(0));
        assert_eq!(labels.get(4), labels.get(2));
        assert_eq!(labels.to_numbers(), vec![1, 1, 2, 2, 2]);
    }

    #[test]
    fn changed_stubborn_opinions_are_rejected() {
        let mut d = five_node_detector(3);
        d.observe(&[0.3, -0.2, 0.9], &[1.0, 0.0]).unwrap();
        let err = d.observe(&[0.3, -0.2, 0.9], &[1.0, 0.5]).unwrap_err();
        assert!(matches!(err, DetectorError::StubbornChanged { slot: 1, .. }));

        let err = d.observe(&[0.3, -0.2], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, DetectorError::DimensionMismatch { .. }));
    }

    #[test]
    fn estimates_satisfy_the_mass_constraint_after_every_step() {
        let m = BlockModel::five_node_demo();
        let net = m.to_network().unwrap();
        let prior = m.default_anchors().unwrap();
        let mut d = Detector::for_network(&net, &prior, 9).unwrap();

        let sim = Simulator::new(&net);
        let mut init_rng = stream_rng(9, stream::INIT);
        let x0 = initial_state_gaussian(&net, &mut init_rng);
        d.observe_full(&x0).unwrap();
        let mut state = sim.start(&x0, stream_rng(9, stream::TRAJECTORY)).unwrap();
        for _ in 0..5_000 {
            sim.step(&mut state);
            d.observe_full(&state.x).unwrap();
            assert!(d.w_s_hat().abs() < 2.0);
            let (n1, n2) = d.size_estimates();
            if n1 > 0 && n2 > 0 {
                let (n1, n2) = (n1 as f64, n2 as f64);
                let mass = (n1 * n1 + n2 * n2) * d.w_s_hat() + 2.0 * n1 * n2 * d.w_d_hat();
                assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn five_node_run_recovers_labels_and_weights() {
        let m = BlockModel::five_node_demo();
        let net = m.to_network().unwrap();
        let prior = m.default_anchors().unwrap();
        let sim = Simulator::new(&net);

        let seed = 4;
        let mut d = Detector::for_network(&net, &prior, crate::rng::derive_seed(seed, stream::DETECTOR)).unwrap();
        let mut init_rng = stream_rng(seed, stream::INIT);
        let x0 = initial_state_gaussian(&net, &mut init_rng);
        d.observe_full(&x0).unwrap();
        sim.run(&x0, 50_000, stream_rng(seed, stream::TRAJECTORY), &mut [&mut d])
            .unwrap();

        assert!(d.labels().same_partition(&m.truth()));
        assert!((d.w_s_hat() - m.w_s).abs() < 0.02, "w_s_hat = {}", d.w_s_hat());
        assert!((d.w_d_hat() - m.w_d).abs() < 0.02, "w_d_hat = {}", d.w_d_hat());
        assert!(d.last_partition_change() < 25_000);
    }

    #[test]
    fn stationary_drift_vanishes_at_the_true_configuration() {
        let m = BlockModel::five_node_demo();
        let analysis = stationary_expectation(&m).unwrap();
        let drift = stationary_drift(&m, analysis.chi1, analysis.chi2).unwrap();
        assert!(drift.abs() <= 1e-10, "drift = {drift:e}");

        // Away from the stationary point the drift must not vanish.
        let off = stationary_drift(&m, analysis.chi1 + 0.1, analysis.chi2).unwrap();
        assert!(off.abs() > 1e-6);
    }

    #[test]
    fn convergence_window() {
        use Community::*;
        let a = CommunityAssignment::new(vec![One, Two]);
        let b = CommunityAssignment::new(vec![Two, One]); // same partition
        let c = CommunityAssignment::new(vec![One, One]);

        assert!(has_converged(&[a.clone(), b.clone(), a.clone()], 3));
        assert!(!has_converged(&[c.clone(), b.clone(), a.clone()], 3));
        assert!(has_converged(&[c, b.clone(), a.clone()], 2));
        assert!(!has_converged(&[a, b], 3));
    }
}
