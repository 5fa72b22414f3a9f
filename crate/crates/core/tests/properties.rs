//! Randomized invariants: every case draws a fresh valid model (and, where
//! needed, a trajectory) from a proptest-chosen seed and checks properties
//! that must hold for all of them, not just the bundled demo model.

mod common;

use gossip_blocks::analysis::gamma_coefficients;
use gossip_blocks::detector::Detector;
use gossip_blocks::harness::accuracy;
use gossip_blocks::model::{sample_valid_model, BlockModel, Community, CommunityAssignment};
use gossip_blocks::rng::{derive_seed, stream, stream_rng};
use gossip_blocks::sim::{initial_state_gaussian, Simulator};
use proptest::prelude::*;

/// A valid model drawn deterministically from a seed, at most ten agents.
fn sampled_model(seed: u64) -> BlockModel {
    sample_valid_model(&mut stream_rng(seed, 40), 10)
}

fn assignment(bits: &[bool]) -> CommunityAssignment {
    CommunityAssignment::new(
        bits.iter()
            .map(|&b| if b { Community::One } else { Community::Two })
            .collect(),
    )
}

fn flipped(a: &CommunityAssignment) -> CommunityAssignment {
    CommunityAssignment::new(a.iter().map(Community::other).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The pair-activation events of any valid model form a probability
    /// distribution over unordered pairs (self-pairs included).
    #[test]
    fn pair_probabilities_form_a_distribution(seed in any::<u64>()) {
        let m = sampled_model(seed);
        let net = m.to_network().unwrap();
        let n = net.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in i..n {
                let p = net.pair_probability(i, j);
                prop_assert!(p >= 0.0, "negative probability for pair ({i}, {j})");
                total += p;
            }
        }
        prop_assert!((total - 1.0).abs() <= 1e-9, "total mass {total}");
    }

    /// Both contractions of the γ coefficients against the stubborn counts
    /// recover δ.
    #[test]
    fn gamma_contractions_recover_delta(seed in any::<u64>()) {
        let m = sampled_model(seed);
        let g = gamma_coefficients(&m);
        let (n_s1, n_s2) = (m.n_s1() as f64, m.n_s2() as f64);
        prop_assert!((g.gamma11 * n_s1 + g.gamma12 * n_s2 - g.delta).abs() <= 1e-12);
        prop_assert!((g.gamma21 * n_s2 + g.gamma22 * n_s1 - g.delta).abs() <= 1e-12);
    }

    /// Averaging can never leave the convex hull of the initial opinions,
    /// and stubborn opinions never move at all.
    #[test]
    fn trajectories_respect_the_hull_and_stubbornness(
        seed in any::<u64>(),
        steps in 0u64..400,
    ) {
        let m = sampled_model(seed);
        let net = m.to_network().unwrap();
        let x0 = initial_state_gaussian(&net, &mut stream_rng(seed, stream::INIT));
        let lo = x0.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x0.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let state = Simulator::new(&net)
            .run(&x0, steps, stream_rng(seed, stream::TRAJECTORY), &mut [])
            .unwrap();
        for (agent, &v) in state.x.iter().enumerate() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "agent {agent} left the hull");
            if let Some(fixed) = net.stubborn_state(agent) {
                prop_assert!(v == fixed, "stubborn agent {agent} moved");
            }
        }
    }

    /// The accuracy metric ignores which community is called "One": flipping
    /// either argument's labels leaves it unchanged, truth scores 1, and the
    /// permutation maximum can never fall below one half.
    #[test]
    fn accuracy_is_label_permutation_invariant(
        pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40),
    ) {
        let est = assignment(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let truth = assignment(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());

        let base = accuracy(&est, &truth).unwrap();
        prop_assert_eq!(base, accuracy(&flipped(&est), &truth).unwrap());
        prop_assert_eq!(base, accuracy(&est, &flipped(&truth)).unwrap());
        prop_assert!((0.5..=1.0).contains(&base), "accuracy {base}");
        prop_assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
    }

    /// Whenever the detector's label counts are nondegenerate, its weight
    /// estimates sit exactly on the constraint surface
    /// `(n̂₁² + n̂₂²)·ŵ_s + 2·n̂₁·n̂₂·ŵ_d = 1`.
    #[test]
    fn detector_estimates_stay_on_the_constraint_surface(
        seed in any::<u64>(),
        steps in 1u64..300,
    ) {
        let m = sampled_model(seed);
        // A community whose members are all stubborn has no anchor
        // candidate, and the detection setup does not apply to it.
        prop_assume!(m.n_r1 > 0 && m.n_r2 > 0);
        let net = m.to_network().unwrap();
        let prior = m.default_anchors().unwrap();
        let mut detector =
            Detector::for_network(&net, &prior, derive_seed(seed, stream::DETECTOR)).unwrap();

        let x0 = initial_state_gaussian(&net, &mut stream_rng(seed, stream::INIT));
        detector.observe_full(&x0).unwrap();
        let sim = Simulator::new(&net);
        let mut state = sim.start(&x0, stream_rng(seed, stream::TRAJECTORY)).unwrap();
        for _ in 0..steps {
            sim.step(&mut state);
            detector.observe_full(&state.x).unwrap();
            let (n1, n2) = detector.size_estimates();
            if n1 > 0 && n2 > 0 {
                let (n1, n2) = (n1 as f64, n2 as f64);
                let mass =
                    (n1 * n1 + n2 * n2) * detector.w_s_hat() + 2.0 * n1 * n2 * detector.w_d_hat();
                prop_assert!((mass - 1.0).abs() <= 1e-12, "mass {mass} at t {}", detector.time());
            }
        }
    }

    /// Partition equality is insensitive to a global label flip, and any
    /// detector-produced labeling either matches the truth as a partition or
    /// scores below 1 on accuracy — the two notions agree.
    #[test]
    fn partition_equality_matches_perfect_accuracy(
        pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40),
    ) {
        let a = assignment(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let b = assignment(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        prop_assert!(a.same_partition(&flipped(&a)));
        let perfect = accuracy(&a, &b).unwrap() == 1.0;
        prop_assert_eq!(a.same_partition(&b), perfect);
    }
}
